"""End-to-end benchmark harness: presets, strategy comparison, data export.

A :class:`Preset` bundles everything one benchmark needs: the environment,
the identification settings (snapshot budget, truncation ranks, excitation
level) and the fine-tuning hyperparameters.  Three presets ship with the
package (Burgers, Allen-Cahn, Korteweg-de Vries benchmarks) as flat
key-value config files that round-trip losslessly through
:func:`load_config` / :func:`save_config`.

:func:`run_preset` executes the full comparison for a preset: identify the
ROM from one exploratory trajectory, synthesize the model-based tracking
gains, optionally fine-tune them (and a zero-initialized policy) with
zeroth-order policy gradients over several training seeds, and evaluate
every strategy over fresh rollouts.  Every random draw derives from the
single ``master_seed`` through :func:`romtune.seeding.derive_seed` with
(stage, strategy, seed index, rollout index) tokens, so runs are exactly
reproducible and independent tasks can execute in parallel without changing
any result.  Stage outputs are written as they complete:

    <out>/snapshots/{Z,Zprime,Upsilon}.csv
    <out>/rom/{A,B,U,ranks}.csv, diagnostics.csv
    <out>/<strategy>/seed<k>/{train,gains}.csv
    <out>/report.csv

Emitted CSVs contain no timing or other nondeterministic bytes; identical
seeds give byte-identical output trees.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lq_control, pde_env, po, rom as rom_mod
from .errors import (ConfigError, DivergenceError, NumericalError,
                     PipelineError)
from .seeding import derive_seed

STRATEGIES = ("none", "lqt", "lqt_po", "pure_po")

#: Rollouts behind every reported cost (the benchmark evaluation protocol).
N_EVAL_ROLLOUTS = 10


@dataclass(frozen=True)
class TargetSpec:
    """Constant target field: amplitude * cos|sin(2 pi x / L)."""

    kind: str        # "cosine" or "sine"
    amplitude: float

    def __post_init__(self):
        if self.kind not in ("cosine", "sine"):
            raise ValueError(f"unknown target kind {self.kind!r}")

    def build(self, grid: pde_env.GridSpec) -> np.ndarray:
        phase = 2 * np.pi * grid.points / grid.domain_length
        wave = np.cos(phase) if self.kind == "cosine" else np.sin(phase)
        return self.amplitude * wave


@dataclass(frozen=True)
class RomSettings:
    """Identification settings: snapshot budget, ranks, excitation level."""

    n_snapshots: int
    svd_rank: int        # joint truncation rank p
    rom_dim: int         # reduced dimension n_s
    excitation_stddev: float


@dataclass(frozen=True)
class Preset:
    """A fully specified benchmark: environment + identification + tuning.

    ``q_weight``/``r_weight`` and ``target`` keep the scalar knobs the env's
    realized Q/R/z_r arrays were built from, so presets serialize exactly.
    """

    name: str
    env: pde_env.EnvConfig
    rom_settings: RomSettings
    train: po.TrainConfig            # warm-start fine-tuning settings
    pure_po_learning_rate: float
    target: TargetSpec
    q_weight: float
    r_weight: float


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    status: str                      # "ok" or "failed:<stage>"
    n_rollouts: int
    mean_cost: float
    std_cost: float
    normalized_cost: float           # mean / LQT mean (nan without LQT)
    reduction_vs_lqt: float          # 1 - normalized (nan without LQT)


@dataclass(frozen=True)
class ComparisonReport:
    preset_name: str
    results: tuple

    def result(self, strategy: str) -> StrategyResult:
        for row in self.results:
            if row.strategy == strategy:
                return row
        raise KeyError(strategy)

    def mean_cost(self, strategy: str) -> float:
        return self.result(strategy).mean_cost

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("strategy,status,n_rollouts,mean_cost,std_cost,"
                    "normalized_cost,reduction_vs_lqt\n")
            for r in self.results:
                f.write(f"{r.strategy},{r.status},{r.n_rollouts},"
                        f"{r.mean_cost!r},{r.std_cost!r},"
                        f"{r.normalized_cost!r},{r.reduction_vs_lqt!r}\n")


# --------------------------------------------------------------------------
# Built-in presets (the three benchmark problems)

def preset_p1() -> Preset:
    """Burgers' equation benchmark (shock formation, 32x reduction)."""
    grid = pde_env.GridSpec(domain_length=1.0, n_z=128)
    target = TargetSpec("cosine", 0.1)
    env = pde_env.EnvConfig(
        grid=grid,
        physics=pde_env.Burgers(viscosity=1e-4),
        forcing=pde_env.ForcingLayout.from_grid(grid, n_a=6, width_fraction=0.15),
        sampling_time=0.05,
        integration_substep=0.01,
        horizon=300,
        Q=np.eye(128),
        R=np.eye(6),
        z_r=target.build(grid),
        init_sampler=pde_env.SechInit(0.9, 1.1, 0.04, 0.06),
        # randomly excited shock trajectories are CFL-marginal at this
        # substep without the 2/3 rule
        dealias=True,
    )
    return Preset(
        name="p1_burgers", env=env,
        rom_settings=RomSettings(n_snapshots=600, svd_rank=8, rom_dim=4,
                                 excitation_stddev=float(np.sqrt(0.1))),
        train=po.TrainConfig(learning_rate=1e-5),
        pure_po_learning_rate=1e-6,
        target=target, q_weight=1.0, r_weight=1.0)


def preset_p2() -> Preset:
    """Allen-Cahn equation benchmark (phase separation)."""
    grid = pde_env.GridSpec(domain_length=2.0, n_z=256)
    target = TargetSpec("cosine", -1.0)
    env = pde_env.EnvConfig(
        grid=grid,
        physics=pde_env.AllenCahn(diffusivity=5e-2, potential=5.0),
        forcing=pde_env.ForcingLayout.from_grid(grid, n_a=12, width_fraction=0.05),
        sampling_time=0.01,
        integration_substep=0.01,
        horizon=80,
        Q=np.eye(256),
        R=0.1 * np.eye(12),
        z_r=target.build(grid),
        init_sampler=pde_env.QuadraticCosineInit(-0.1, 0.1),
    )
    return Preset(
        name="p2_allen_cahn", env=env,
        rom_settings=RomSettings(n_snapshots=160, svd_rank=16, rom_dim=8,
                                 excitation_stddev=float(np.sqrt(0.1))),
        train=po.TrainConfig(learning_rate=5e-6),
        pure_po_learning_rate=5e-6,
        target=target, q_weight=1.0, r_weight=0.1)


def preset_p3() -> Preset:
    """Korteweg-de Vries equation benchmark (solitary waves)."""
    grid = pde_env.GridSpec(domain_length=20.0, n_z=256)
    target = TargetSpec("sine", 1.0)
    env = pde_env.EnvConfig(
        grid=grid,
        physics=pde_env.KortewegDeVries(),
        forcing=pde_env.ForcingLayout.from_grid(grid, n_a=10, width_fraction=0.05),
        sampling_time=0.01,
        integration_substep=0.001,
        horizon=200,
        Q=np.eye(256),
        R=np.eye(10),
        z_r=target.build(grid),
        init_sampler=pde_env.NegativeSechInit(1.0, 3.0),
    )
    return Preset(
        name="p3_kdv", env=env,
        rom_settings=RomSettings(n_snapshots=400, svd_rank=16, rom_dim=8,
                                 excitation_stddev=0.1),
        train=po.TrainConfig(learning_rate=2e-7),
        pure_po_learning_rate=2e-7,
        target=target, q_weight=1.0, r_weight=1.0)


BUILTIN_PRESETS = {"p1": preset_p1, "p2": preset_p2, "p3": preset_p3,
                   "p1_burgers": preset_p1, "p2_allen_cahn": preset_p2,
                   "p3_kdv": preset_p3}


# --------------------------------------------------------------------------
# Flat key-value config files

_PHYSICS_KINDS = ("burgers", "allen_cahn", "kdv")
_INIT_KINDS = {"sech": pde_env.SechInit,
               "quadratic_cosine": pde_env.QuadraticCosineInit,
               "negative_sech": pde_env.NegativeSechInit}

# key -> parser; every key is required unless listed in _CONDITIONAL_KEYS
_KEY_PARSERS = {
    "name": str,
    "physics": str,
    "viscosity": float,
    "diffusivity": float,
    "potential": float,
    "domain_length": float,
    "n_z": int,
    "n_a": int,
    "support_width": float,
    "sampling_time": float,
    "integration_substep": float,
    "horizon": int,
    "q_weight": float,
    "r_weight": float,
    "target_kind": str,
    "target_amplitude": float,
    "init_kind": str,
    "init_alpha_low": float,
    "init_alpha_high": float,
    "init_beta_low": float,
    "init_beta_high": float,
    "dealias": lambda s: {"true": True, "false": False}[s.lower()],
    "snapshot_count": int,
    "svd_rank": int,
    "rom_dim": int,
    "excitation_stddev": float,
    "learning_rate": float,
    "pure_po_learning_rate": float,
    "smoothing_radius": float,
    "iterations": int,
    "oracle_samples": int,
    "eval_rollouts": int,
    "divergence_cost_cap": float,
}

# keys that only exist for particular physics / initial-condition kinds
_CONDITIONAL_KEYS = {"viscosity", "diffusivity", "potential",
                     "init_beta_low", "init_beta_high"}


def _parse_flat_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEY_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _KEY_PARSERS[key](value)
        except (ValueError, KeyError) as err:
            raise ConfigError(
                f"{path}:{lineno}: bad value {value!r} for {key!r}: {err}") from err
    return values


def load_config(path) -> Preset:
    """Parse and validate a flat key-value preset file."""
    values = _parse_flat_file(path)
    missing = set(_KEY_PARSERS) - _CONDITIONAL_KEYS - set(values)
    if missing:
        raise ConfigError(f"{path}: missing keys: {', '.join(sorted(missing))}")

    kind = values["physics"]
    if kind == "burgers":
        wanted = {"viscosity"}
    elif kind == "allen_cahn":
        wanted = {"diffusivity", "potential"}
    elif kind == "kdv":
        wanted = set()
    else:
        raise ConfigError(f"{path}: field 'physics' must be one of "
                          f"{_PHYSICS_KINDS}, got {kind!r}")
    present = {"viscosity", "diffusivity", "potential"} & set(values)
    if present != wanted:
        raise ConfigError(f"{path}: physics '{kind}' requires exactly the keys "
                          f"{sorted(wanted)}, found {sorted(present)}")
    if kind == "burgers":
        physics = pde_env.Burgers(viscosity=values["viscosity"])
    elif kind == "allen_cahn":
        physics = pde_env.AllenCahn(diffusivity=values["diffusivity"],
                                    potential=values["potential"])
    else:
        physics = pde_env.KortewegDeVries()

    init_kind = values["init_kind"]
    if init_kind not in _INIT_KINDS:
        raise ConfigError(f"{path}: field 'init_kind' must be one of "
                          f"{sorted(_INIT_KINDS)}, got {init_kind!r}")
    beta_keys = {"init_beta_low", "init_beta_high"} & set(values)
    if init_kind == "sech":
        if len(beta_keys) != 2:
            raise ConfigError(f"{path}: init 'sech' requires init_beta_low "
                              f"and init_beta_high")
        sampler = pde_env.SechInit(values["init_alpha_low"], values["init_alpha_high"],
                                   values["init_beta_low"], values["init_beta_high"])
    else:
        if beta_keys:
            raise ConfigError(f"{path}: init {init_kind!r} does not take beta keys")
        sampler = _INIT_KINDS[init_kind](values["init_alpha_low"],
                                         values["init_alpha_high"])

    try:
        grid = pde_env.GridSpec(values["domain_length"], values["n_z"])
        target = TargetSpec(values["target_kind"], values["target_amplitude"])
        env = pde_env.EnvConfig(
            grid=grid,
            physics=physics,
            forcing=pde_env.ForcingLayout.from_grid(grid, values["n_a"],
                                                    values["support_width"]),
            sampling_time=values["sampling_time"],
            integration_substep=values["integration_substep"],
            horizon=values["horizon"],
            Q=values["q_weight"] * np.eye(values["n_z"]),
            R=values["r_weight"] * np.eye(values["n_a"]),
            z_r=target.build(grid),
            init_sampler=sampler,
            dealias=values["dealias"])
        rom_settings = RomSettings(values["snapshot_count"], values["svd_rank"],
                                   values["rom_dim"], values["excitation_stddev"])
        train = po.TrainConfig(
            learning_rate=values["learning_rate"],
            smoothing_radius=values["smoothing_radius"],
            iterations=values["iterations"],
            oracle_samples=values["oracle_samples"],
            eval_rollouts=values["eval_rollouts"],
            divergence_cost_cap=values["divergence_cost_cap"])
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from err
    return Preset(name=values["name"], env=env, rom_settings=rom_settings,
                  train=train,
                  pure_po_learning_rate=values["pure_po_learning_rate"],
                  target=target, q_weight=values["q_weight"],
                  r_weight=values["r_weight"])


def save_config(preset: Preset, path) -> None:
    """Write a preset back to the flat key-value format (lossless)."""
    env = preset.env
    lines = [f"name = {preset.name}", f"physics = {env.physics.kind}"]
    if isinstance(env.physics, pde_env.Burgers):
        lines.append(f"viscosity = {env.physics.viscosity!r}")
    elif isinstance(env.physics, pde_env.AllenCahn):
        lines.append(f"diffusivity = {env.physics.diffusivity!r}")
        lines.append(f"potential = {env.physics.potential!r}")
    sampler = env.init_sampler
    lines += [
        f"domain_length = {env.grid.domain_length!r}",
        f"n_z = {env.grid.n_z}",
        f"n_a = {env.forcing.n_a}",
        f"support_width = {env.forcing.width_fraction!r}",
        f"sampling_time = {env.sampling_time!r}",
        f"integration_substep = {env.integration_substep!r}",
        f"horizon = {env.horizon}",
        f"q_weight = {preset.q_weight!r}",
        f"r_weight = {preset.r_weight!r}",
        f"target_kind = {preset.target.kind}",
        f"target_amplitude = {preset.target.amplitude!r}",
        f"init_kind = {sampler.kind}",
        f"init_alpha_low = {sampler.alpha_low!r}",
        f"init_alpha_high = {sampler.alpha_high!r}",
    ]
    if isinstance(sampler, pde_env.SechInit):
        lines.append(f"init_beta_low = {sampler.beta_low!r}")
        lines.append(f"init_beta_high = {sampler.beta_high!r}")
    lines += [
        f"dealias = {'true' if env.dealias else 'false'}",
        f"snapshot_count = {preset.rom_settings.n_snapshots}",
        f"svd_rank = {preset.rom_settings.svd_rank}",
        f"rom_dim = {preset.rom_settings.rom_dim}",
        f"excitation_stddev = {preset.rom_settings.excitation_stddev!r}",
        f"learning_rate = {preset.train.learning_rate!r}",
        f"pure_po_learning_rate = {preset.pure_po_learning_rate!r}",
        f"smoothing_radius = {preset.train.smoothing_radius!r}",
        f"iterations = {preset.train.iterations}",
        f"oracle_samples = {preset.train.oracle_samples}",
        f"eval_rollouts = {preset.train.eval_rollouts}",
        f"divergence_cost_cap = {preset.train.divergence_cost_cap!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def builtin_config_path(name: str) -> Path:
    """Path of a shipped preset file (p1, p2 or p3)."""
    short = {"p1": "p1", "p1_burgers": "p1", "p2": "p2", "p2_allen_cahn": "p2",
             "p3": "p3", "p3_kdv": "p3"}.get(name)
    if short is None:
        raise ConfigError(f"unknown preset {name!r}; choose from p1, p2, p3")
    return Path(__file__).parent / "configs" / f"{short}.cfg"


def load_builtin(name: str) -> Preset:
    return load_config(builtin_config_path(name))


# --------------------------------------------------------------------------
# Pipeline

def design_gains(preset: Preset, rom: rom_mod.Rom):
    """DARE solve + tracking gains on a fitted ROM, with a stability gate.

    Raises :class:`NumericalError` when the synthesized closed loop is not
    strictly stable — a symptom of a bad identification that must stop the
    pipeline rather than be silently applied.
    """
    reduced = lq_control.ReducedCostSpec.from_full(rom, preset.env.Q,
                                                   preset.env.R, preset.env.z_r)
    solution = lq_control.solve_dare(rom.A, rom.B, reduced.Q, reduced.R)
    gains = lq_control.tracking_gains(rom.A, rom.B, solution.P, reduced.Q,
                                      reduced.R)
    radius = lq_control.spectral_radius(rom.A + rom.B @ gains.K_a)
    if not radius < 1.0:
        raise NumericalError(
            f"synthesized closed loop has spectral radius {radius:.6f} >= 1; "
            f"the identified model is not stabilizable at these ranks")
    return gains, solution, radius


def identify(preset: Preset, master_seed: int, output_dir: Path | None = None):
    """Collect the exploratory trajectory and fit the ROM (shared stage)."""
    settings = preset.rom_settings
    snapshots = rom_mod.collect_excited_trajectory(
        preset.env, settings.n_snapshots, settings.excitation_stddev,
        rng_seed=derive_seed(master_seed, "collect"))
    if output_dir is not None:
        rom_mod.save_snapshots(snapshots, output_dir / "snapshots")
    fitted = rom_mod.dmdc_fit(snapshots, settings.svd_rank, settings.rom_dim)
    if output_dir is not None:
        rom_mod.save_rom(fitted, output_dir / "rom")
        one_step = rom_mod.rom_one_step_error(fitted, snapshots)
        radius = lq_control.spectral_radius(fitted.A)
        with open(output_dir / "rom" / "diagnostics.csv", "w", newline="") as f:
            f.write("one_step_error,spectral_radius_A\n")
            f.write(f"{one_step!r},{radius!r}\n")
    return snapshots, fitted


def _train_task(preset: Preset, fitted: rom_mod.Rom, strategy: str,
                seed_index: int, master_seed: int, initial: po.Policy,
                learning_rate: float, iterations: int | None):
    train_cfg = dataclasses.replace(
        preset.train, learning_rate=learning_rate,
        rng_seed=derive_seed(master_seed, "train", strategy, seed_index))
    if iterations is not None:
        train_cfg = dataclasses.replace(train_cfg, iterations=iterations)
    policy, record = po.train(preset.env, fitted, initial, train_cfg)
    return strategy, seed_index, policy, record


def _evaluate(preset, fitted, policy, master_seed, strategy, seed_index):
    seed = derive_seed(master_seed, "final-eval", strategy, seed_index)
    z0s = np.stack([
        preset.env.init_sampler.sample(
            preset.env.grid, np.random.default_rng(derive_seed(seed, i)))
        for i in range(N_EVAL_ROLLOUTS)])
    matrix = policy.matrix if policy is not None else None
    projection = fitted.U if (fitted is not None and matrix is not None) else None
    costs, diverged = pde_env.rollout_costs(preset.env, z0s, matrix, projection)
    return np.where(diverged, preset.train.divergence_cost_cap, costs)


def run_preset(preset: Preset, strategies, master_seed: int, output_dir,
               n_seeds: int = 3, jobs: int = 1,
               iterations: int | None = None) -> ComparisonReport:
    """Run the four-way comparison for one preset.

    ``strategies`` is any subset of {"none", "lqt", "lqt_po", "pure_po"}.
    Trained strategies run ``n_seeds`` independent training seeds; every
    final policy is evaluated over 10 fresh rollouts and pooled into the
    per-strategy statistics.  A failing strategy is reported as failed
    (with the offending stage) while the others still run.  With ``jobs``
    > 1, training tasks run in worker processes; derived seeding makes the
    results identical to a serial run.
    """
    strategies = list(strategies)
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategies: {sorted(unknown)}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    needs_rom = [s for s in strategies if s != "none"]
    fitted = None
    shared_failure = None
    if needs_rom:
        try:
            _, fitted = identify(preset, master_seed, out)
        except NumericalError as err:
            shared_failure = PipelineError("identify", "shared", err)

    gains = None
    design_failure = None
    if fitted is not None and any(s in strategies for s in ("lqt", "lqt_po")):
        try:
            gains, _, _ = design_gains(preset, fitted)
        except NumericalError as err:
            design_failure = PipelineError("design", "shared", err)

    # training tasks for the fine-tuned strategies
    tasks = []
    if fitted is not None:
        if "lqt_po" in strategies and gains is not None:
            warm = po.Policy.from_gains(gains)
            for k in range(n_seeds):
                tasks.append((preset, fitted, "lqt_po", k, master_seed, warm,
                              preset.train.learning_rate, iterations))
        if "pure_po" in strategies:
            zero = po.Policy.zeros(preset.env.forcing.n_a, fitted.n_s)
            for k in range(n_seeds):
                tasks.append((preset, fitted, "pure_po", k, master_seed, zero,
                              preset.pure_po_learning_rate, iterations))
    trained = {}
    train_failures = {}
    if tasks:
        outcomes = []
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_train_task, *t) for t in tasks]
                for task, future in zip(tasks, futures):
                    try:
                        outcomes.append(future.result())
                    except NumericalError as err:
                        train_failures[task[2]] = PipelineError("train", task[2], err)
        else:
            for task in tasks:
                try:
                    outcomes.append(_train_task(*task))
                except NumericalError as err:
                    train_failures[task[2]] = PipelineError("train", task[2], err)
        for strategy, seed_index, policy, record in outcomes:
            seed_dir = out / strategy / f"seed{seed_index:03d}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            record.to_csv(seed_dir / "train.csv", zero_wall_time=True)
            rom_mod.save_matrix(seed_dir / "gains.csv", policy.matrix)
            trained.setdefault(strategy, {})[seed_index] = policy

    results = []
    for strategy in [s for s in STRATEGIES if s in strategies]:
        if strategy != "none" and shared_failure is not None:
            results.append(_failed_row(strategy, shared_failure))
            continue
        if strategy in ("lqt", "lqt_po") and design_failure is not None:
            results.append(_failed_row(strategy, design_failure))
            continue
        if strategy in train_failures:
            results.append(_failed_row(strategy, train_failures[strategy]))
            continue
        try:
            if strategy == "none":
                costs = _evaluate(preset, None, None, master_seed, strategy, 0)
            elif strategy == "lqt":
                policy = po.Policy.from_gains(gains)
                seed_dir = out / "lqt" / "seed000"
                seed_dir.mkdir(parents=True, exist_ok=True)
                rom_mod.save_matrix(seed_dir / "gains.csv", policy.matrix)
                costs = _evaluate(preset, fitted, policy, master_seed, strategy, 0)
            else:
                costs = np.concatenate([
                    _evaluate(preset, fitted, trained[strategy][k],
                              master_seed, strategy, k)
                    for k in range(n_seeds)])
            results.append(StrategyResult(
                strategy=strategy, status="ok", n_rollouts=costs.size,
                mean_cost=float(costs.mean()), std_cost=float(costs.std()),
                normalized_cost=float("nan"), reduction_vs_lqt=float("nan")))
        except (NumericalError, KeyError) as err:
            results.append(_failed_row(
                strategy, PipelineError("evaluate", strategy, err)))

    results = _normalize(results)
    report = ComparisonReport(preset_name=preset.name, results=tuple(results))
    report.to_csv(out / "report.csv")
    return report


def _failed_row(strategy: str, err: PipelineError) -> StrategyResult:
    return StrategyResult(strategy=strategy, status=f"failed:{err.stage}",
                          n_rollouts=0, mean_cost=float("nan"),
                          std_cost=float("nan"), normalized_cost=float("nan"),
                          reduction_vs_lqt=float("nan"))


def _normalize(results):
    lqt_mean = None
    for row in results:
        if row.strategy == "lqt" and row.status == "ok":
            lqt_mean = row.mean_cost
    if lqt_mean is None or lqt_mean <= 0:
        return results
    out = []
    for row in results:
        if row.status != "ok":
            out.append(row)
            continue
        normalized = row.mean_cost / lqt_mean
        out.append(dataclasses.replace(row, normalized_cost=normalized,
                                       reduction_vs_lqt=1.0 - normalized))
    return out


def emit_field_snapshots(preset: Preset, policy, rom, times, output_path) -> None:
    """Write field profiles u(x_i, t) at requested times for plotting.

    The rollout starts from the mean of the preset's initial-condition
    distribution.  Each requested time becomes one CSV row; times past a
    divergence are emitted with an empty field and status ``diverged``.
    A final row holds the target field for overlay.
    """
    env = preset.env
    dt = env.sampling_time
    steps = []
    for t in times:
        k = int(round(float(t) / dt))
        if k < 0 or k > env.horizon or abs(k * dt - float(t)) > 1e-9 * max(1.0, dt):
            raise ValueError(f"time {t!r} is not a sampling instant within "
                             f"the horizon (dt={dt}, T={env.horizon})")
        steps.append(k)

    z0 = env.init_sampler.mean_field(env.grid)
    matrix = np.asarray(getattr(policy, "matrix", policy), dtype=float) \
        if policy is not None else None
    if matrix is not None:
        n_s = rom.U.shape[1]
        K_a, K_b = matrix[:, :n_s], matrix[:, n_s:]
        feedforward = K_b @ (rom.U.T @ env.z_r)
    states = [z0]
    z = z0
    completed = env.horizon
    for k in range(max(steps) if steps else 0):
        a = K_a @ (rom.U.T @ z) + feedforward if matrix is not None \
            else np.zeros(env.forcing.n_a)
        try:
            z = pde_env.step(env, z, a)
        except DivergenceError:
            completed = k
            break
        states.append(z)

    n_z = env.grid.n_z
    with open(output_path, "w", newline="") as f:
        f.write("kind,time,status," + ",".join(f"u{i}" for i in range(n_z)) + "\n")
        for t, k in zip(times, steps):
            if k <= completed:
                row = ",".join(repr(v) for v in states[k])
                f.write(f"state,{float(t)!r},ok,{row}\n")
            else:
                f.write(f"state,{float(t)!r},diverged," + "," * (n_z - 1) + "\n")
        row = ",".join(repr(v) for v in env.z_r)
        f.write(f"target,,ok,{row}\n")
