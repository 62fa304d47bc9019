"""Command-line interface.

Subcommands mirror the pipeline stages:

    simulate   roll the uncontrolled environment once, write the trajectory
    fit-rom    collect (or load) snapshots and identify the reduced model
    design     identify + synthesize the model-based tracking gains
    train      fine-tune a policy with zeroth-order policy gradients
    evaluate   score a gains file over fresh rollouts
    preset     run the full strategy comparison for p1 | p2 | p3

Exit codes: 0 success, 1 usage/validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, lq_control, pde_env, po, rom as rom_mod
from .errors import NumericalError
from .seeding import derive_seed


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the documented contract
    # is exit 1 with the offending flag named
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="master seed; every draw derives from it")
    common.add_argument("--out", type=Path, default=Path("runs"),
                        help="output directory")
    common.add_argument("--config", type=Path,
                        help="preset config file (flat key = value)")
    common.add_argument("--iterations", type=int,
                        help="override the preset's training iteration count")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker processes for independent tasks")

    parser = _Parser(prog="romtune",
                     description="reduced-order PDE control bench")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", parents=[common],
                       help="uncontrolled rollout", parser_class=_Parser)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit-rom", parents=[common],
                       help="identify the reduced model", parser_class=_Parser)
    p.add_argument("--snapshots", type=Path,
                   help="read an existing snapshot triple instead of collecting")
    p.set_defaults(func=_cmd_fit_rom)

    p = sub.add_parser("design", parents=[common],
                       help="synthesize tracking gains", parser_class=_Parser)
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("train", parents=[common],
                       help="fine-tune a policy", parser_class=_Parser)
    p.add_argument("--init", choices=("warm", "zero"), default="warm",
                   help="start from the model-based gains or from zero")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a gains file", parser_class=_Parser)
    p.add_argument("--gains", type=Path, required=True)
    p.add_argument("--rollouts", type=int, default=10)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("preset", parents=[common],
                       help="full comparison for a named preset",
                       parser_class=_Parser)
    p.add_argument("name", choices=("p1", "p2", "p3"))
    p.add_argument("--seeds", type=int, default=3,
                   help="independent training seeds per fine-tuned strategy")
    p.add_argument("--strategies", default="none,lqt,lqt_po,pure_po",
                   help="comma-separated subset of none,lqt,lqt_po,pure_po")
    p.set_defaults(func=_cmd_preset)

    return parser


def _load_preset(args) -> harness.Preset:
    if args.config is None:
        raise ValueError("--config is required for this subcommand")
    return harness.load_config(args.config)


def _cmd_simulate(args) -> int:
    preset = _load_preset(args)
    env = preset.env
    z0 = pde_env.sample_initial_state(env, derive_seed(args.seed, "simulate"))
    states, _, cost = pde_env.rollout(env, z0)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "trajectory.csv"
    with open(path, "w", newline="") as f:
        f.write("step,time," + ",".join(f"u{i}" for i in range(env.grid.n_z)) + "\n")
        for k in range(states.shape[0]):
            row = ",".join(repr(v) for v in states[k])
            f.write(f"{k},{k * env.sampling_time!r},{row}\n")
    print(f"wrote {path}; total cost {cost!r}")
    return 0


def _identify_for_cli(args, preset):
    if getattr(args, "snapshots", None):
        snapshots = rom_mod.load_snapshots(args.snapshots)
    else:
        snapshots = rom_mod.collect_excited_trajectory(
            preset.env, preset.rom_settings.n_snapshots,
            preset.rom_settings.excitation_stddev,
            rng_seed=derive_seed(args.seed, "collect"))
    fitted = rom_mod.dmdc_fit(snapshots, preset.rom_settings.svd_rank,
                              preset.rom_settings.rom_dim)
    return snapshots, fitted


def _cmd_fit_rom(args) -> int:
    preset = _load_preset(args)
    snapshots, fitted = _identify_for_cli(args, preset)
    rom_mod.save_snapshots(snapshots, args.out / "snapshots")
    rom_mod.save_rom(fitted, args.out / "rom")
    error = rom_mod.rom_one_step_error(fitted, snapshots)
    print(f"wrote {args.out / 'rom'}; one-step error {error:.6g}")
    return 0


def _cmd_design(args) -> int:
    preset = _load_preset(args)
    _, fitted = _identify_for_cli(args, preset)
    gains, solution, radius = harness.design_gains(preset, fitted)
    args.out.mkdir(parents=True, exist_ok=True)
    rom_mod.save_rom(fitted, args.out / "rom")
    policy = po.Policy.from_gains(gains)
    rom_mod.save_matrix(args.out / "gains.csv", policy.matrix)
    print(f"wrote {args.out / 'gains.csv'}; Riccati residual "
          f"{solution.residual:.3g} in {solution.iterations} iterations; "
          f"closed-loop spectral radius {radius:.6f}")
    return 0


def _cmd_train(args) -> int:
    import dataclasses
    preset = _load_preset(args)
    _, fitted = _identify_for_cli(args, preset)
    if args.init == "warm":
        gains, _, _ = harness.design_gains(preset, fitted)
        policy = po.Policy.from_gains(gains)
        learning_rate = preset.train.learning_rate
    else:
        policy = po.Policy.zeros(preset.env.forcing.n_a, fitted.n_s)
        learning_rate = preset.pure_po_learning_rate
    train_cfg = dataclasses.replace(
        preset.train, learning_rate=learning_rate,
        rng_seed=derive_seed(args.seed, "train", args.init, 0))
    if args.iterations is not None:
        train_cfg = dataclasses.replace(train_cfg, iterations=args.iterations)
    final, record = po.train(preset.env, fitted, policy, train_cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    rom_mod.save_rom(fitted, args.out / "rom")
    record.to_csv(args.out / "train.csv")
    rom_mod.save_matrix(args.out / "gains.csv", final.matrix)
    last = record.mean_costs[-1] if len(record) else float("nan")
    print(f"wrote {args.out / 'train.csv'}; final estimated cost {last!r}")
    return 0


def _cmd_evaluate(args) -> int:
    preset = _load_preset(args)
    _, fitted = _identify_for_cli(args, preset)
    policy = po.Policy(rom_mod.load_matrix(args.gains))
    mean, std = po.evaluate_policy_cost(
        preset.env, fitted, policy, args.rollouts,
        derive_seed(args.seed, "evaluate"),
        preset.train.divergence_cost_cap)
    print(f"mean cost {mean!r} (std {std!r}) over {args.rollouts} rollouts")
    return 0


def _cmd_preset(args) -> int:
    preset = harness.load_builtin(args.name)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    report = harness.run_preset(preset, strategies, args.seed, args.out,
                                n_seeds=args.seeds, jobs=args.jobs,
                                iterations=args.iterations)
    print(f"report written to {Path(args.out) / 'report.csv'}")
    for row in report.results:
        norm = "" if np.isnan(row.normalized_cost) \
            else f"  normalized {row.normalized_cost:.3f}"
        print(f"  {row.strategy:8s} {row.status:12s} "
              f"mean {row.mean_cost:.6g}{norm}")
    failed = any(r.status != "ok" for r in report.results)
    return 2 if failed else 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        print("romtune: error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"romtune: numerical failure: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"romtune: error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
