"""romtune: reduced-order control bench for 1-D periodic PDEs.

Pipeline: simulate a nonlinear PDE with distributed control
(:mod:`~romtune.pde_env`), identify a linear reduced-order model from one
excited trajectory (:mod:`~romtune.rom`), synthesize the model-based LQ
tracking controller in closed form (:mod:`~romtune.lq_control`), and
fine-tune the gain matrix on the nonlinear system with two-point
zeroth-order policy gradients (:mod:`~romtune.po`).  The benchmark harness
(:mod:`~romtune.harness`) reproduces the three shipped experiments end to
end with exact seed-derived reproducibility.
"""

from .errors import (ConfigError, DivergenceError, NumericalError,
                     PipelineError, RankDeficiencyError,
                     RiccatiConvergenceError)
from .harness import (ComparisonReport, Preset, RomSettings, TargetSpec,
                      builtin_config_path, emit_field_snapshots, load_builtin,
                      load_config, preset_p1, preset_p2, preset_p3,
                      run_preset, save_config)
from .lq_control import (DareSolution, ReducedCostSpec, TrackingGains,
                         mb_controller_act, solve_dare, spectral_radius,
                         tracking_gains, verify_feedforward_via_recursion)
from .pde_env import (AllenCahn, Burgers, EnvConfig, ForcingLayout, GridSpec,
                      KortewegDeVries, NegativeSechInit, QuadraticCosineInit,
                      SechInit, build_forcing_matrix, rollout, rollout_costs,
                      sample_initial_state, stage_cost, step, target_state)
from .po import (Policy, TrainConfig, TrainRecord, evaluate_policy_cost,
                 pg_update, sample_unit_direction, train, two_point_gradient,
                 zeroth_order_gradient)
from .rom import (Rom, SnapshotSet, collect_excited_trajectory, dmdc_fit,
                  load_rom, load_snapshots, rom_one_step_error, save_rom,
                  save_snapshots)
from .seeding import derive_seed

__version__ = "0.1.0"
