"""Exception types shared across the package.

Validation problems raise plain ``ValueError`` (or ``ConfigError`` when tied
to a config file); data-dependent numerical failures derive from
``NumericalError`` so callers can tell the two apart (the CLI maps them to
exit codes 1 and 2 respectively).
"""


class NumericalError(RuntimeError):
    """A computation failed for numerical reasons (blow-up, no convergence)."""


class DivergenceError(NumericalError):
    """The simulated field left the finite/bounded regime.

    Carries enough context to locate the failure: the integrator substep at
    which the threshold tripped, optionally the outer rollout step, and the
    cost accumulated before the abort.
    """

    def __init__(self, message, substep_index, step_index=None,
                 accumulated_cost=None):
        super().__init__(message)
        self.substep_index = substep_index
        self.step_index = step_index
        self.accumulated_cost = accumulated_cost


class RankDeficiencyError(NumericalError):
    """A truncated SVD retained a numerically zero singular value."""


class RiccatiConvergenceError(NumericalError):
    """Riccati value iteration did not reach the residual tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(ValueError):
    """A config file failed to parse or validate."""


class PipelineError(NumericalError):
    """A benchmark pipeline stage failed; names the stage and strategy."""

    def __init__(self, stage, strategy, cause):
        super().__init__(f"stage '{stage}' failed for strategy '{strategy}': {cause}")
        self.stage = stage
        self.strategy = strategy
        self.cause = cause
