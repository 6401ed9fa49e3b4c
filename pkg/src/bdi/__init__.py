"""Imitation learning with Bayesian disturbance injection.

A truncated mixture of Gaussian-process policies is fitted jointly with a
state-dependent disturbance model by variational inference; the fitted
disturbance is injected into the supervisor during the next round of
demonstrations. Includes a 2-D wall-avoidance benchmark and an experiment
harness.
"""

from .config import ConfigError, ExperimentConfig, load_config
from .disturbance import (
    ConstantDisturbance,
    DisturbanceModel,
    NoDisturbance,
    compute_q_g,
    effective_noise,
)
from .harness import (
    aggregate_rows,
    run_experiment,
    sensitivity_sweep,
    trainer_config_for,
    write_aggregates,
    write_rows,
)
from .kernels import KernelSpec, NumericalError, gram, rbf, rbf_matrix
from .loop import IterationRecord, RunResult, run_bdi
from .methods import (
    MethodSpec,
    build_injection_source,
    dart_sigma_update,
    make_method,
    method_names,
)
from .model import MixturePolicy
from .simulation import (
    Supervisor,
    WorldSpec,
    make_world,
    run_demonstration,
    run_episode,
    run_test_batch,
    run_test_execution,
)
from .training import FitReport, FitState, TrainerConfig, em_fit

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConstantDisturbance",
    "DisturbanceModel",
    "ExperimentConfig",
    "FitReport",
    "FitState",
    "IterationRecord",
    "KernelSpec",
    "MethodSpec",
    "MixturePolicy",
    "NoDisturbance",
    "NumericalError",
    "RunResult",
    "Supervisor",
    "TrainerConfig",
    "WorldSpec",
    "aggregate_rows",
    "build_injection_source",
    "compute_q_g",
    "dart_sigma_update",
    "effective_noise",
    "em_fit",
    "gram",
    "load_config",
    "make_method",
    "make_world",
    "method_names",
    "rbf",
    "rbf_matrix",
    "run_bdi",
    "run_demonstration",
    "run_episode",
    "run_experiment",
    "run_test_batch",
    "run_test_execution",
    "sensitivity_sweep",
    "trainer_config_for",
    "write_aggregates",
    "write_rows",
    "__version__",
]
