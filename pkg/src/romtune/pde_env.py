"""Discretized 1-D periodic PDE environments with distributed control.

Three nonlinear equations are supported on the periodic domain [0, L):

* Burgers:            u_t + u u_x - nu u_xx = a(x, t)
* Allen-Cahn:         u_t - nu^2 u_xx + V (u^3 - u) = a(x, t)
* Korteweg-de Vries:  u_t + u_xxx - 6 u u_x = a(x, t)

The field is sampled at ``n_z`` equally spaced grid points x_i = i L / n_z
and advanced with a Fourier pseudo-spectral method: spatial derivatives are
exact on resolved modes, the stiff linear symbol is integrated exactly via
its exponential (integrating factor), and the nonlinear remainder is
advanced with classical RK4 on substeps ``dt``.  One environment step spans
the sampling interval ``sampling_time`` (an integer number of substeps)
during which the control vector is held constant.

Quadratic-in-space nonlinearities are evaluated pseudo-spectrally in
conservative form (-(u^2/2)_x for Burgers, 3 (u^2)_x for KdV), which keeps
the zero mode of the unforced dynamics exact, so the spatial mean of Burgers
and KdV fields is conserved to rounding.  No dealiasing is applied unless
``EnvConfig.dealias`` enables the 2/3 rule.

States are plain float ndarrays of length ``n_z``; controls are ndarrays of
length ``n_a``.  All operations are pure given their inputs, and configs are
immutable after construction, so they are safe to share across threads or
processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError

# Any field entry beyond this magnitude (or non-finite) aborts the rollout.
DIVERGENCE_THRESHOLD = 1e8


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen_array(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GridSpec:
    """Equally spaced periodic grid: x_i = i * domain_length / n_z."""

    domain_length: float
    n_z: int

    def __post_init__(self):
        if self.domain_length <= 0:
            raise ValueError("domain_length must be positive")
        if int(self.n_z) < 1:
            raise ValueError("n_z must be a positive integer")
        object.__setattr__(self, "n_z", int(self.n_z))

    @property
    def spacing(self) -> float:
        return self.domain_length / self.n_z

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_z) * self.spacing


@dataclass(frozen=True)
class Burgers:
    """Shock-forming advection-diffusion; ``viscosity`` is nu > 0."""

    viscosity: float
    kind = "burgers"

    def __post_init__(self):
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")

    def linear_symbol(self, k, k_odd):
        return -self.viscosity * k**2

    def nonlinear_fft(self, u, ik):
        # -u u_x written as -(u^2/2)_x: exact zero mode, hence mean-conserving
        return -0.5 * ik * np.fft.rfft(u * u)


@dataclass(frozen=True)
class AllenCahn:
    """Bistable reaction-diffusion; diffusion coefficient is diffusivity^2."""

    diffusivity: float
    potential: float
    kind = "allen_cahn"

    def __post_init__(self):
        if self.diffusivity <= 0:
            raise ValueError("diffusivity must be positive")
        if self.potential < 0:
            raise ValueError("potential must be nonnegative")

    def linear_symbol(self, k, k_odd):
        return -self.diffusivity**2 * k**2

    def nonlinear_fft(self, u, ik):
        # the whole reaction term V (u - u^3) is treated as the remainder
        return self.potential * np.fft.rfft(u - u**3)


@dataclass(frozen=True)
class KortewegDeVries:
    """Dispersive solitary-wave equation; no free physical parameter."""

    kind = "kdv"

    def linear_symbol(self, k, k_odd):
        # -u_xxx contributes +i k^3; odd power, so the Nyquist mode is zeroed
        return 1j * k_odd**3

    def nonlinear_fft(self, u, ik):
        # +6 u u_x written as 3 (u^2)_x
        return 3.0 * ik * np.fft.rfft(u * u)


PdePhysics = Burgers | AllenCahn | KortewegDeVries


def build_forcing_matrix(grid: GridSpec, n_a: int, width_fraction: float) -> np.ndarray:
    """Binary actuator-support matrix of shape (n_z, n_a).

    Column j is the indicator of round(width_fraction * n_z) contiguous grid
    points (wrapping periodically), centered at x = (j + 1/2) L / n_a.
    """
    if not 0 < width_fraction <= 1:
        raise ValueError("width_fraction must lie in (0, 1]")
    if n_a < 1:
        raise ValueError("n_a must be at least 1")
    if n_a > grid.n_z:
        raise ValueError("n_a may not exceed n_z (supports narrower than one cell)")
    n_points = max(1, _round_half_up(width_fraction * grid.n_z))
    phi = np.zeros((grid.n_z, n_a))
    for j in range(n_a):
        center = (j + 0.5) * grid.n_z / n_a
        start = _round_half_up(center - n_points / 2)
        idx = (start + np.arange(n_points)) % grid.n_z
        phi[idx, j] = 1.0
    return phi


@dataclass(frozen=True)
class ForcingLayout:
    """Distributed actuation: n_a scalar inputs through indicator supports."""

    n_a: int
    width_fraction: float
    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] != self.n_a:
            raise ValueError("phi must have shape (n_z, n_a)")
        if not np.isin(phi, (0.0, 1.0)).all():
            raise ValueError("phi entries must be 0 or 1")
        object.__setattr__(self, "phi", _frozen_array(phi))

    @classmethod
    def from_grid(cls, grid: GridSpec, n_a: int, width_fraction: float) -> "ForcingLayout":
        return cls(n_a, width_fraction, build_forcing_matrix(grid, n_a, width_fraction))


@dataclass(frozen=True)
class SechInit:
    """alpha * sech((x - L/2) / beta), alpha and beta uniform on ranges."""

    alpha_low: float = 0.9
    alpha_high: float = 1.1
    beta_low: float = 0.04
    beta_high: float = 0.06
    kind = "sech"

    def _field(self, grid, alpha, beta):
        x = grid.points - grid.domain_length / 2
        return alpha / np.cosh(x / beta)

    def sample(self, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
        alpha = rng.uniform(self.alpha_low, self.alpha_high)
        beta = rng.uniform(self.beta_low, self.beta_high)
        return self._field(grid, alpha, beta)

    def mean_field(self, grid: GridSpec) -> np.ndarray:
        return self._field(grid, 0.5 * (self.alpha_low + self.alpha_high),
                           0.5 * (self.beta_low + self.beta_high))


@dataclass(frozen=True)
class QuadraticCosineInit:
    """alpha + (x - L/2)^2 cos(2 pi (x - L/2) / L), alpha uniform."""

    alpha_low: float = -0.1
    alpha_high: float = 0.1
    kind = "quadratic_cosine"

    def _field(self, grid, alpha):
        x = grid.points - grid.domain_length / 2
        return alpha + x**2 * np.cos(2 * np.pi * x / grid.domain_length)

    def sample(self, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
        return self._field(grid, rng.uniform(self.alpha_low, self.alpha_high))

    def mean_field(self, grid: GridSpec) -> np.ndarray:
        return self._field(grid, 0.5 * (self.alpha_low + self.alpha_high))


@dataclass(frozen=True)
class NegativeSechInit:
    """-(alpha/2) sech((sqrt(alpha)/2)(x - L/2)), alpha uniform."""

    alpha_low: float = 1.0
    alpha_high: float = 3.0
    kind = "negative_sech"

    def _field(self, grid, alpha):
        x = grid.points - grid.domain_length / 2
        return -(alpha / 2) / np.cosh((np.sqrt(alpha) / 2) * x)

    def sample(self, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
        return self._field(grid, rng.uniform(self.alpha_low, self.alpha_high))

    def mean_field(self, grid: GridSpec) -> np.ndarray:
        return self._field(grid, 0.5 * (self.alpha_low + self.alpha_high))


InitialStateSampler = SechInit | QuadraticCosineInit | NegativeSechInit


@dataclass(frozen=True)
class EnvConfig:
    """Complete description of a discretized, controlled PDE environment.

    ``Q`` (n_z x n_z, symmetric PSD) and ``R`` (n_a x n_a, symmetric PD)
    weight the tracking and control terms of the stage cost; ``z_r`` is the
    constant target field.  ``sampling_time`` must be an integer multiple of
    ``integration_substep``.
    """

    grid: GridSpec
    physics: PdePhysics
    forcing: ForcingLayout
    sampling_time: float
    integration_substep: float
    horizon: int
    Q: np.ndarray
    R: np.ndarray
    z_r: np.ndarray
    init_sampler: InitialStateSampler
    dealias: bool = False
    _ops: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.sampling_time <= 0 or self.integration_substep <= 0:
            raise ValueError("sampling_time and integration_substep must be positive")
        ratio = self.sampling_time / self.integration_substep
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("sampling_time must be a positive integer multiple "
                             "of integration_substep")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be a positive integer")
        object.__setattr__(self, "horizon", int(self.horizon))

        n_z, n_a = self.grid.n_z, self.forcing.n_a
        if self.forcing.phi.shape != (n_z, n_a):
            raise ValueError("forcing matrix shape does not match grid")
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        z_r = np.asarray(self.z_r, dtype=float)
        if Q.shape != (n_z, n_z):
            raise ValueError(f"Q must be {n_z} x {n_z}")
        if R.shape != (n_a, n_a):
            raise ValueError(f"R must be {n_a} x {n_a}")
        if z_r.shape != (n_z,) or not np.isfinite(z_r).all():
            raise ValueError(f"z_r must be a finite vector of length {n_z}")
        if not np.allclose(Q, Q.T, atol=1e-10 * max(1.0, float(np.abs(Q).max()))):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T, atol=1e-10 * max(1.0, float(np.abs(R).max()))):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-10 * max(1.0, float(np.abs(Q).max())):
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        if not hasattr(self.init_sampler, "sample"):
            raise ValueError("init_sampler must provide sample() and mean_field()")
        object.__setattr__(self, "Q", _frozen_array(Q))
        object.__setattr__(self, "R", _frozen_array(R))
        object.__setattr__(self, "z_r", _frozen_array(z_r))

    @property
    def n_substeps(self) -> int:
        return round(self.sampling_time / self.integration_substep)

    # the cached spectral workspace holds closures; rebuild it after unpickling
    def __getstate__(self):
        state = dict(self.__dict__)
        state["_ops"] = None
        return state

    def __setstate__(self, state):
        for key, value in state.items():
            object.__setattr__(self, key, value)


class _Spectral:
    """Precomputed Fourier-space operators for one EnvConfig."""

    def __init__(self, config: EnvConfig):
        grid = config.grid
        n = grid.n_z
        k = 2 * np.pi * np.fft.rfftfreq(n, d=grid.spacing)
        k_odd = k.copy()
        if n % 2 == 0:
            k_odd[-1] = 0.0  # drop the sign-ambiguous Nyquist mode from odd derivatives
        self.n = n
        self.ik = 1j * k_odd
        self.dt = config.integration_substep
        self.n_substeps = config.n_substeps
        symbol = config.physics.linear_symbol(k, k_odd)
        self.exp_full = np.exp(symbol * self.dt)
        self.exp_half = np.exp(symbol * self.dt / 2)
        self.phi_hat = np.fft.rfft(config.forcing.phi, axis=0)
        if config.dealias:
            self.mask = (np.arange(k.size) <= n // 3).astype(float)
            self.phi_hat = self.phi_hat * self.mask[:, None]
        else:
            self.mask = None
        nonlinear = config.physics.nonlinear_fft
        if self.mask is None:
            self.nonlinear = lambda u: nonlinear(u, self.ik)
        else:
            self.nonlinear = lambda u: self.mask * nonlinear(u, self.ik)
        q_diag = np.diag(config.Q)
        self.q_diag = q_diag if np.array_equal(np.diag(q_diag), config.Q) else None


def _ops(config: EnvConfig) -> _Spectral:
    # lazily built and cached on the (frozen) config; construction is
    # deterministic, so a concurrent double-build is harmless
    ops = config._ops
    if ops is None:
        ops = _Spectral(config)
        object.__setattr__(config, "_ops", ops)
    return ops


def _ifrk4_substep(ops: _Spectral, zh: np.ndarray, f_hat: np.ndarray,
                   check_substep: int | None = None) -> np.ndarray:
    """One integrating-factor RK4 substep in rfft space.

    Broadcasts over any leading batch axes.  With ``check_substep`` set, the
    entry state is divergence-checked and the index is reported on failure.
    """
    u = np.fft.irfft(zh, n=ops.n)
    if check_substep is not None:
        peak = np.abs(u).max()
        if not peak <= DIVERGENCE_THRESHOLD:  # also catches NaN
            raise DivergenceError(
                f"field magnitude {peak!r} exceeded {DIVERGENCE_THRESHOLD:g} "
                f"at substep {check_substep}", substep_index=check_substep)
    dt, e_full, e_half = ops.dt, ops.exp_full, ops.exp_half
    k1 = ops.nonlinear(u) + f_hat
    k2 = ops.nonlinear(np.fft.irfft(e_half * (zh + (dt / 2) * k1), n=ops.n)) + f_hat
    k3 = ops.nonlinear(np.fft.irfft(e_half * zh + (dt / 2) * k2, n=ops.n)) + f_hat
    k4 = ops.nonlinear(np.fft.irfft(e_full * zh + dt * (e_half * k3), n=ops.n)) + f_hat
    return e_full * (zh + (dt / 6) * k1) + (dt / 6) * (2 * e_half * (k2 + k3) + k4)


def step(config: EnvConfig, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Advance the field by one sampling interval under constant control ``a``.

    Raises :class:`DivergenceError` (with the offending substep index) if the
    field grows beyond ``DIVERGENCE_THRESHOLD`` or turns non-finite.
    """
    ops = _ops(config)
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    if z.shape != (ops.n,):
        raise ValueError(f"state must have length {ops.n}")
    if a.shape != (config.forcing.n_a,):
        raise ValueError(f"control must have length {config.forcing.n_a}")
    if not np.isfinite(a).all():
        raise ValueError("control must be finite")
    zh = np.fft.rfft(z)
    if ops.mask is not None:
        zh = zh * ops.mask
    f_hat = ops.phi_hat @ a
    for i in range(ops.n_substeps):
        zh = _ifrk4_substep(ops, zh, f_hat, check_substep=i)
    out = np.fft.irfft(zh, n=ops.n)
    peak = np.abs(out).max()
    if not peak <= DIVERGENCE_THRESHOLD:
        raise DivergenceError(
            f"field magnitude {peak!r} exceeded {DIVERGENCE_THRESHOLD:g} "
            f"after final substep", substep_index=ops.n_substeps)
    return out


def stage_cost(config: EnvConfig, z: np.ndarray, a: np.ndarray) -> float:
    """(z - z_r)' Q (z - z_r) + a' R a."""
    d = z - config.z_r
    return float(d @ config.Q @ d + a @ config.R @ a)


def sample_initial_state(config: EnvConfig, rng_seed: int) -> np.ndarray:
    """Draw z_0 from the config's initial-condition family; pure in the seed."""
    rng = np.random.default_rng(int(rng_seed))
    return config.init_sampler.sample(config.grid, rng)


def target_state(config: EnvConfig) -> np.ndarray:
    """The constant target field z_r (cached on the config)."""
    return config.z_r


def rollout(config: EnvConfig, z0: np.ndarray, policy=None, projection=None):
    """Run the closed (or open) loop for ``config.horizon`` steps.

    ``policy`` is a gain matrix of shape (n_a, 2 n_s) — anything exposing
    such a ``.matrix`` attribute, or the ndarray itself — applied through the
    ``projection`` columns U as a_k = K_a (U' z_k) + K_b (U' z_r).  With
    ``policy=None`` the control is identically zero.

    Returns ``(states, controls, total_cost)`` where ``states`` has shape
    (horizon + 1, n_z), ``controls`` has shape (horizon, n_a), and the cost
    accumulates every stage cost plus the terminal tracking term at k = T.
    On divergence, raises :class:`DivergenceError` carrying the step index
    and the cost accumulated so far.
    """
    ops = _ops(config)
    n_z, n_a, T = config.grid.n_z, config.forcing.n_a, config.horizon
    z = np.array(z0, dtype=float)
    if z.shape != (n_z,):
        raise ValueError(f"z0 must have length {n_z}")

    if policy is not None:
        pi = np.asarray(getattr(policy, "matrix", policy), dtype=float)
        if projection is None:
            raise ValueError("a projection U is required when a policy is given")
        U = np.asarray(projection, dtype=float)
        n_s = U.shape[1]
        if U.shape[0] != n_z or pi.shape != (n_a, 2 * n_s):
            raise ValueError(
                f"policy of shape {pi.shape} does not match projection "
                f"{U.shape} and actuator count {n_a}")
        K_a = pi[:, :n_s]
        Ut = U.T
        feedforward = pi[:, n_s:] @ (Ut @ config.z_r)
    else:
        K_a = Ut = feedforward = None
        zero_control = np.zeros(n_a)

    z_r, Q, R, q_diag = config.z_r, config.Q, config.R, ops.q_diag
    states = np.empty((T + 1, n_z))
    controls = np.empty((T, n_a))
    states[0] = z
    total = 0.0
    for kstep in range(T):
        a = K_a @ (Ut @ z) + feedforward if policy is not None else zero_control
        d = z - z_r
        state_term = (d * d) @ q_diag if q_diag is not None else d @ Q @ d
        total += float(state_term + a @ R @ a)
        try:
            z = step(config, z, a)
        except DivergenceError as err:
            raise DivergenceError(
                f"rollout diverged at step {kstep} (substep "
                f"{err.substep_index}); accumulated cost {total!r}",
                substep_index=err.substep_index, step_index=kstep,
                accumulated_cost=total) from err
        states[kstep + 1] = z
        controls[kstep] = a
    d = z - z_r
    total += float((d * d) @ q_diag if q_diag is not None else d @ Q @ d)
    return states, controls, total


def rollout_costs(config: EnvConfig, z0_batch: np.ndarray, policies=None,
                  projection=None):
    """Total costs of a batch of rollouts advanced in lockstep.

    Semantically equivalent to calling :func:`rollout` once per batch member
    and keeping only the costs, but every FFT and elementwise operation is
    vectorized over the batch, which is an order of magnitude faster at
    these grid sizes.  Divergence does not raise here: the offending member
    is flagged, its state is parked, and the remaining members continue.

    ``policies`` may be None (all members uncontrolled), a single gain
    matrix of shape (n_a, 2 n_s) shared by the batch, or a stack of shape
    (B, n_a, 2 n_s).  Returns ``(costs, diverged)`` where ``costs[b]`` holds
    the full cost, or the cost accumulated up to divergence for flagged
    members.
    """
    ops = _ops(config)
    n_z, n_a, T = config.grid.n_z, config.forcing.n_a, config.horizon
    z0_batch = np.asarray(z0_batch, dtype=float)
    if z0_batch.ndim != 2 or z0_batch.shape[1] != n_z:
        raise ValueError(f"z0_batch must have shape (B, {n_z})")
    n_batch = z0_batch.shape[0]

    if policies is not None:
        if projection is None:
            raise ValueError("a projection U is required when policies are given")
        U = np.asarray(projection, dtype=float)
        n_s = U.shape[1]
        pi = np.asarray(policies, dtype=float)
        if pi.shape == (n_a, 2 * n_s):
            pi = np.broadcast_to(pi, (n_batch, n_a, 2 * n_s))
        if pi.shape != (n_batch, n_a, 2 * n_s) or U.shape[0] != n_z:
            raise ValueError("policies do not match projection/actuator shapes")
        K_a = np.ascontiguousarray(pi[:, :, :n_s])          # (B, n_a, n_s)
        s_r = U.T @ config.z_r
        feedforward = pi[:, :, n_s:] @ s_r                  # (B, n_a)
    else:
        K_a = feedforward = None
        a = np.zeros((n_batch, n_a))

    z_r, Q, R, q_diag = config.z_r, config.Q, config.R, ops.q_diag
    phi_hat_T = ops.phi_hat.T                               # (n_a, n_freq)
    costs = np.zeros(n_batch)
    diverged = np.zeros(n_batch, dtype=bool)
    zh = np.fft.rfft(z0_batch, axis=-1)
    if ops.mask is not None:
        zh = zh * ops.mask

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for kstep in range(T + 1):
            z = np.fft.irfft(zh, n=ops.n, axis=-1)
            peaks = np.abs(z).max(axis=-1)
            blown = ~(peaks <= DIVERGENCE_THRESHOLD) & ~diverged
            if blown.any():
                diverged |= blown
                zh[blown] = 0.0  # park: keeps the batch FFT free of non-finite rows
                z[blown] = 0.0
            active = ~diverged
            d = z - z_r
            state_term = (d * d) @ q_diag if q_diag is not None \
                else np.einsum("bi,ij,bj->b", d, Q, d)
            if kstep == T:  # terminal tracking term only
                costs[active] += state_term[active]
                break
            if policies is not None:
                s = z @ U                                   # (B, n_s)
                a = np.einsum("bij,bj->bi", K_a, s) + feedforward
                a[diverged] = 0.0
            ctrl_term = np.einsum("bi,ij,bj->b", a, R, a)
            costs[active] += state_term[active] + ctrl_term[active]
            f_hat = a @ phi_hat_T                           # (B, n_freq)
            for _ in range(ops.n_substeps):
                zh = _ifrk4_substep(ops, zh, f_hat)
    return costs, diverged
