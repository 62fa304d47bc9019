"""Reduced-order model identification via DMD with control.

From a single excited trajectory of the nonlinear environment, packed as
snapshot matrices Z (states), Z' (successor states) and Ups (inputs), the
fit recovers a linear reduced-order model

    s_{k+1} = A s_k + B a_k,        z_k ~ U s_k,

where U has orthonormal columns spanning the dominant output modes.  The
regression stacks Omega = [Z; Ups], takes its p-truncated SVD
Psi Xi Lambda', splits Psi into state and input blocks, takes the
n_s-truncated SVD of Z' = U Gamma V', and forms

    A = U' Z' Lambda inv(Xi) Psi_Z' U,      B = U' Z' Lambda inv(Xi) Psi_Ups'.

Both truncated SVDs use a fixed sign convention (largest-magnitude entry of
each left singular vector made positive) so repeated fits are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pde_env
from .errors import DivergenceError, RankDeficiencyError

#: Retained singular values below this fraction of the largest one are
#: treated as numerically zero (they would poison the inverse of Xi).
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SnapshotSet:
    """Column-aligned snapshot triple: Z, its one-step shift Zp, inputs Ups."""

    Z: np.ndarray    # (n_z, N)
    Zp: np.ndarray   # (n_z, N)
    Ups: np.ndarray  # (n_a, N)

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        Zp = np.asarray(self.Zp, dtype=float)
        Ups = np.asarray(self.Ups, dtype=float)
        if Z.ndim != 2 or Zp.shape != Z.shape:
            raise ValueError("Z and Zp must be matrices of identical shape")
        if Ups.ndim != 2 or Ups.shape[1] != Z.shape[1]:
            raise ValueError("Ups must have the same number of columns as Z")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Zp", Zp)
        object.__setattr__(self, "Ups", Ups)

    @property
    def n_snapshots(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class Rom:
    """DMDc product: reduced pair (A, B) on the subspace spanned by U."""

    A: np.ndarray  # (n_s, n_s)
    B: np.ndarray  # (n_s, n_a)
    U: np.ndarray  # (n_z, n_s), orthonormal columns
    n_s: int
    p: int

    def __post_init__(self):
        if self.A.shape != (self.n_s, self.n_s):
            raise ValueError("A must be n_s x n_s")
        if self.B.shape[0] != self.n_s:
            raise ValueError("B must have n_s rows")
        if self.U.shape[1] != self.n_s:
            raise ValueError("U must have n_s columns")
        if self.n_s > self.p:
            raise ValueError("n_s may not exceed the joint truncation rank p")
        gram_defect = np.abs(self.U.T @ self.U - np.eye(self.n_s)).max()
        if gram_defect > 1e-10:
            raise ValueError(f"U columns are not orthonormal (defect {gram_defect:.2e})")

    def project(self, z: np.ndarray) -> np.ndarray:
        """Reduced coordinates s = U' z."""
        return self.U.T @ z

    def lift(self, s: np.ndarray) -> np.ndarray:
        """Full-order reconstruction U s."""
        return self.U @ s


def _signed_svd(M: np.ndarray):
    """SVD with deterministic signs: each left vector's largest-magnitude
    entry is made positive (the right vector is flipped to match)."""
    left, sigma, right_t = np.linalg.svd(M, full_matrices=False)
    flip = np.sign(left[np.abs(left).argmax(axis=0), np.arange(left.shape[1])])
    flip[flip == 0] = 1.0
    return left * flip, sigma, right_t * flip[:, None]


def collect_excited_trajectory(config: pde_env.EnvConfig, n_snapshots: int,
                               excitation_stddev: float,
                               rng_seed: int) -> SnapshotSet:
    """Roll the environment under i.i.d. Gaussian inputs and pack snapshots.

    z_0 is drawn from the config's initial-condition family and each control
    from N(0, excitation_stddev^2 I); both draws come from one generator
    seeded with ``rng_seed``, so the set is a pure function of its arguments.
    """
    if excitation_stddev <= 0:
        raise ValueError("excitation_stddev must be positive")
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be positive")
    rng = np.random.default_rng(int(rng_seed))
    n_z, n_a = config.grid.n_z, config.forcing.n_a
    z = config.init_sampler.sample(config.grid, rng)
    controls = rng.normal(0.0, excitation_stddev, size=(n_snapshots, n_a))
    Z = np.empty((n_z, n_snapshots))
    Zp = np.empty((n_z, n_snapshots))
    for j in range(n_snapshots):
        Z[:, j] = z
        try:
            z = pde_env.step(config, z, controls[j])
        except DivergenceError as err:
            raise DivergenceError(
                f"exploratory trajectory diverged at step {j} "
                f"(substep {err.substep_index})",
                substep_index=err.substep_index, step_index=j) from err
        Zp[:, j] = z
    return SnapshotSet(Z=Z, Zp=Zp, Ups=controls.T)


def dmdc_fit(snapshots: SnapshotSet, p: int, n_s: int) -> Rom:
    """Identify the reduced pair (A, B) and projection U from snapshots."""
    Z, Zp, Ups = snapshots.Z, snapshots.Zp, snapshots.Ups
    n_z = Z.shape[0]
    n_snap = snapshots.n_snapshots
    if n_s > p:
        raise ValueError("n_s may not exceed p")
    if p > min(n_z + Ups.shape[0], n_snap):
        raise ValueError(f"p may not exceed min(n_z + n_a, N) = "
                         f"{min(n_z + Ups.shape[0], n_snap)}")
    if n_s > min(n_z, n_snap):
        raise ValueError("n_s may not exceed min(n_z, N)")

    omega = np.vstack([Z, Ups])
    psi, xi, lam_t = _signed_svd(omega)
    if xi[p - 1] <= RANK_TOLERANCE * xi[0]:
        raise RankDeficiencyError(
            f"singular value {p} of the stacked data matrix is "
            f"{xi[p - 1]:.3e} (largest {xi[0]:.3e}); the data do not support "
            f"rank {p} — use a smaller p")
    psi, xi, lam = psi[:, :p], xi[:p], lam_t[:p].T

    u_full, gamma, _ = _signed_svd(Zp)
    if gamma[n_s - 1] <= RANK_TOLERANCE * gamma[0]:
        raise RankDeficiencyError(
            f"singular value {n_s} of the shifted state matrix is "
            f"{gamma[n_s - 1]:.3e} (largest {gamma[0]:.3e}); use a smaller n_s")
    U = u_full[:, :n_s]

    core = (U.T @ Zp) @ (lam / xi)          # U' Z' Lambda inv(Xi), (n_s, p)
    A = core @ (psi[:n_z].T @ U)
    B = core @ psi[n_z:].T
    return Rom(A=A, B=B, U=U, n_s=n_s, p=p)


def rom_one_step_error(rom: Rom, snapshots: SnapshotSet) -> float:
    """RMS one-step prediction error in reduced coordinates.

    Root mean square over snapshot columns j of
    || U' z_{j+1} - (A U' z_j + B a_j) ||_2 — a quick model-quality
    diagnostic for the identified pair.
    """
    s = rom.U.T @ snapshots.Z
    s_next = rom.U.T @ snapshots.Zp
    resid = s_next - (rom.A @ s + rom.B @ snapshots.Ups)
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=0))))


# Snapshot sets and ROM matrices round-trip through plain CSV matrices
# (17 significant digits, enough to reproduce float64 exactly).

def save_matrix(path: Path, M: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def load_matrix(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def save_snapshots(snapshots: SnapshotSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "Z.csv", snapshots.Z)
    save_matrix(directory / "Zprime.csv", snapshots.Zp)
    save_matrix(directory / "Upsilon.csv", snapshots.Ups)


def load_snapshots(directory) -> SnapshotSet:
    directory = Path(directory)
    return SnapshotSet(Z=load_matrix(directory / "Z.csv"),
                       Zp=load_matrix(directory / "Zprime.csv"),
                       Ups=load_matrix(directory / "Upsilon.csv"))


def save_rom(rom: Rom, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "A.csv", rom.A)
    save_matrix(directory / "B.csv", rom.B)
    save_matrix(directory / "U.csv", rom.U)
    (directory / "ranks.csv").write_text(f"n_s,p\n{rom.n_s},{rom.p}\n")


def load_rom(directory) -> Rom:
    directory = Path(directory)
    A = load_matrix(directory / "A.csv")
    B = load_matrix(directory / "B.csv")
    U = load_matrix(directory / "U.csv")
    ranks = (directory / "ranks.csv").read_text().strip().splitlines()[-1]
    n_s, p = (int(v) for v in ranks.split(","))
    return Rom(A=A, B=B, U=U, n_s=n_s, p=p)
