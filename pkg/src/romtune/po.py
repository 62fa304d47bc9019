"""Derivative-free fine-tuning of the concatenated tracking policy.

The decision variable is the gain matrix pi = [K_a | K_b] of shape
(n_a, 2 n_s), applied to the nonlinear environment through the ROM
projection as a_k = K_a (U' z_k) + K_b (U' z_r).  Gradients of the
truncated rollout cost are estimated with a two-point zeroth-order oracle:
draw a Gaussian direction Theta normalized to unit Frobenius norm, evaluate
the cost at pi + r Theta and pi - r Theta on a shared initial state, and
scale the difference by (n_a n_s / r) — the standard d/(2 r) factor for
d = 2 n_a n_s policy entries.  Updates are plain gradient descent.

Rollout pairs share the initial draw (common random numbers) and the
dynamics are deterministic, so the only estimator noise is the direction
itself.  Diverged rollouts flag the sample; the trainer discards flagged
samples from the batch average and records how many were lost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import pde_env
from .errors import DivergenceError
from .seeding import derive_seed


@dataclass(frozen=True)
class Policy:
    """Concatenated gain matrix [K_a | K_b], shape (n_a, 2 n_s)."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] % 2 != 0:
            raise ValueError("policy matrix must have shape (n_a, 2 n_s)")
        if not np.isfinite(matrix).all():
            raise ValueError("policy matrix must be finite")
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_a(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_s(self) -> int:
        return self.matrix.shape[1] // 2

    @property
    def K_a(self) -> np.ndarray:
        return self.matrix[:, :self.n_s]

    @property
    def K_b(self) -> np.ndarray:
        return self.matrix[:, self.n_s:]

    @classmethod
    def from_gains(cls, gains) -> "Policy":
        return cls(np.hstack([gains.K_a, gains.K_b]))

    @classmethod
    def zeros(cls, n_a: int, n_s: int) -> "Policy":
        return cls(np.zeros((n_a, 2 * n_s)))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the zeroth-order policy-gradient loop."""

    learning_rate: float
    smoothing_radius: float = 0.1
    iterations: int = 40
    oracle_samples: int = 8      # gradient samples averaged per update
    eval_rollouts: int = 4       # rollouts behind each recorded cost estimate
    rng_seed: int = 0
    divergence_cost_cap: float = 1e12

    def __post_init__(self):
        if self.learning_rate <= 0 or self.smoothing_radius <= 0:
            raise ValueError("learning_rate and smoothing_radius must be positive")
        if self.iterations < 0 or self.oracle_samples < 1 or self.eval_rollouts < 1:
            raise ValueError("iterations must be >= 0, sample counts >= 1")
        if self.divergence_cost_cap <= 0:
            raise ValueError("divergence_cost_cap must be positive")


@dataclass
class TrainRecord:
    """Append-only per-iteration telemetry of a training run."""

    iterations: list = field(default_factory=list)
    mean_costs: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    discarded: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def append(self, iteration, mean_cost, grad_norm, n_discarded,
               wall_time_s, seed):
        self.iterations.append(int(iteration))
        self.mean_costs.append(float(mean_cost))
        self.grad_norms.append(float(grad_norm))
        self.discarded.append(int(n_discarded))
        self.wall_times.append(float(wall_time_s))
        self.seeds.append(int(seed))

    def __len__(self):
        return len(self.iterations)

    def to_csv(self, path, zero_wall_time: bool = False) -> None:
        """Stream the record to CSV.

        ``zero_wall_time`` replaces the timing column with 0.0 so emitted
        files are byte-reproducible across runs (used by the benchmark
        harness); live timings stay available on the record itself.
        """
        with open(path, "w", newline="") as f:
            f.write("iteration,mean_cost,grad_norm,discarded,wall_time_s,seed\n")
            for i in range(len(self.iterations)):
                wall = 0.0 if zero_wall_time else self.wall_times[i]
                f.write(f"{self.iterations[i]},{self.mean_costs[i]!r},"
                        f"{self.grad_norms[i]!r},{self.discarded[i]},"
                        f"{wall!r},{self.seeds[i]}\n")


def sample_unit_direction(shape, rng: np.random.Generator) -> np.ndarray:
    """Entrywise-Gaussian matrix normalized to unit Frobenius norm."""
    theta = rng.standard_normal(shape)
    norm = np.linalg.norm(theta)
    while norm == 0.0:  # probability-zero guard
        theta = rng.standard_normal(shape)
        norm = np.linalg.norm(theta)
    return theta / norm


def two_point_gradient(objective, policy_matrix: np.ndarray, r: float,
                       rng: np.random.Generator):
    """Single two-point gradient sample of a scalar objective.

    ``objective(matrix)`` returns the cost at a gain matrix and may raise
    :class:`~romtune.errors.DivergenceError`.  Returns ``(estimate,
    diverged)``; a flagged estimate is all zeros and must be discarded by
    the caller.
    """
    if r <= 0:
        raise ValueError("smoothing radius must be positive")
    policy_matrix = np.asarray(policy_matrix, dtype=float)
    n_a, two_n_s = policy_matrix.shape
    theta = sample_unit_direction(policy_matrix.shape, rng)
    scale = n_a * (two_n_s // 2) / r
    try:
        j_plus = objective(policy_matrix + r * theta)
        j_minus = objective(policy_matrix - r * theta)
    except DivergenceError:
        return np.zeros_like(policy_matrix), True
    return scale * (j_plus - j_minus) * theta, False


def _env_pair_costs(config, rom, matrices, rng):
    """Rollout costs of a stack of gain matrices from one shared z_0."""
    z0 = config.init_sampler.sample(config.grid, rng)
    z0_batch = np.broadcast_to(z0, (len(matrices), config.grid.n_z))
    costs, diverged = pde_env.rollout_costs(config, z0_batch,
                                            np.stack(matrices), rom.U)
    return costs, diverged


def zeroth_order_gradient(config: pde_env.EnvConfig, rom, policy: Policy,
                          r: float, rng_seed: int):
    """Two-point policy-gradient sample on the nonlinear environment.

    Draws one initial state and one unit direction from ``rng_seed``, rolls
    out pi + r Theta and pi - r Theta from that same state, and returns
    ``(gradient, diverged)``.  Divergence of either rollout flags the sample
    instead of raising.
    """
    if r <= 0:
        raise ValueError("smoothing radius must be positive")
    rng = np.random.default_rng(int(rng_seed))
    pi = policy.matrix
    theta = sample_unit_direction(pi.shape, rng)
    costs, diverged = _env_pair_costs(
        config, rom, [pi + r * theta, pi - r * theta], rng)
    if diverged.any():
        return np.zeros_like(pi), True
    scale = policy.n_a * policy.n_s / r
    return scale * (costs[0] - costs[1]) * theta, False


def evaluate_policy_cost(config: pde_env.EnvConfig, rom, policy,
                         n_rollouts: int, rng_seed: int,
                         divergence_cost_cap: float = 1e12):
    """Mean and standard deviation of the rollout cost over fresh starts.

    Initial states are sampled with seeds derived from ``rng_seed`` by
    rollout index, so the estimate is independent of evaluation order.
    Diverged rollouts contribute ``divergence_cost_cap`` instead of raising.
    ``policy=None`` evaluates the uncontrolled environment.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    z0s = np.stack([
        config.init_sampler.sample(
            config.grid, np.random.default_rng(derive_seed(rng_seed, i)))
        for i in range(n_rollouts)])
    matrix = policy.matrix if isinstance(policy, Policy) else policy
    projection = rom.U if (rom is not None and matrix is not None) else None
    costs, diverged = pde_env.rollout_costs(config, z0s, matrix, projection)
    costs = np.where(diverged, divergence_cost_cap, costs)
    return float(costs.mean()), float(costs.std())


def pg_update(policy: Policy, gradient: np.ndarray, learning_rate: float) -> Policy:
    """One plain gradient-descent step; pure in its inputs."""
    if gradient.shape != policy.matrix.shape:
        raise ValueError("gradient shape must match the policy")
    return Policy(policy.matrix - learning_rate * np.asarray(gradient, dtype=float))


def train(config: pde_env.EnvConfig, rom, initial_policy: Policy,
          train_config: TrainConfig, cost_fn=None):
    """Zeroth-order policy-gradient loop; returns (policy, record).

    Each iteration draws ``oracle_samples`` independent gradient samples
    with per-sample derived seeds, discards any that diverged, averages the
    survivors, and applies one descent step (an all-diverged batch applies
    no update and is recorded as such).  A fresh cost estimate over
    ``eval_rollouts`` rollouts is appended to the record every iteration.
    The loop is a pure function of its arguments, so identical seeds give
    bit-identical records (timing column aside).

    ``cost_fn(matrix, rng) -> float`` replaces the environment rollout
    objective when given (synthetic benchmarks and tests); it may raise
    :class:`~romtune.errors.DivergenceError` to exercise the discard path.
    """
    policy = initial_policy
    record = TrainRecord()
    m = train_config.oracle_samples
    r = train_config.smoothing_radius
    for iteration in range(train_config.iterations):
        started = time.perf_counter()
        iter_seed = derive_seed(train_config.rng_seed, "iter", iteration)
        gradient_sum = np.zeros_like(policy.matrix)
        n_ok = 0
        if cost_fn is None:
            # all 2m rollouts of the oracle batch advance in lockstep
            thetas, stacked = [], []
            for j in range(m):
                rng = np.random.default_rng(derive_seed(iter_seed, "sample", j))
                theta = sample_unit_direction(policy.matrix.shape, rng)
                z0 = config.init_sampler.sample(config.grid, rng)
                thetas.append(theta)
                stacked.append((z0, policy.matrix + r * theta))
                stacked.append((z0, policy.matrix - r * theta))
            z0_batch = np.stack([z0 for z0, _ in stacked])
            pi_batch = np.stack([pi for _, pi in stacked])
            costs, diverged = pde_env.rollout_costs(config, z0_batch,
                                                    pi_batch, rom.U)
            scale = policy.n_a * policy.n_s / r
            for j in range(m):
                if diverged[2 * j] or diverged[2 * j + 1]:
                    continue
                gradient_sum += scale * (costs[2 * j] - costs[2 * j + 1]) * thetas[j]
                n_ok += 1
        else:
            for j in range(m):
                rng = np.random.default_rng(derive_seed(iter_seed, "sample", j))
                estimate, diverged = two_point_gradient(
                    lambda mat: cost_fn(mat, rng), policy.matrix, r, rng)
                if not diverged:
                    gradient_sum += estimate
                    n_ok += 1
        if n_ok > 0:
            gradient = gradient_sum / n_ok
            policy = pg_update(policy, gradient, train_config.learning_rate)
            grad_norm = float(np.linalg.norm(gradient))
        else:
            grad_norm = 0.0  # every sample diverged: recorded no-op
        eval_seed = derive_seed(iter_seed, "eval")
        if cost_fn is None:
            mean_cost, _ = evaluate_policy_cost(
                config, rom, policy, train_config.eval_rollouts, eval_seed,
                train_config.divergence_cost_cap)
        else:
            samples = []
            for i in range(train_config.eval_rollouts):
                rng = np.random.default_rng(derive_seed(eval_seed, i))
                try:
                    samples.append(float(cost_fn(policy.matrix, rng)))
                except DivergenceError:
                    samples.append(train_config.divergence_cost_cap)
            mean_cost = float(np.mean(samples))
        record.append(iteration, mean_cost, grad_norm, m - n_ok,
                      time.perf_counter() - started, iter_seed)
    return policy, record
