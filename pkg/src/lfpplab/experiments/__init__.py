"""Experiment runners. Each takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentReport` whose ``passed`` property is the conjunction of its flags."""

from .affine import affine_identity
from .config import ConfigError, ExperimentConfig, PreconditionError, load_config, parse_config
from .convergence import convergence_diagnostic
from .distortion import field_pairing_deviation, kernel_difference_growth, log_mollification
from .events import event_improving, event_initial, event_locality_test
from .mollifiers import mollifier_comparison, mollifier_drift
from .report import ExperimentReport
from .sandwich import small_scale_sandwich

EXPERIMENTS = {
    "affine_identity": affine_identity,
    "small_scale_sandwich": small_scale_sandwich,
    "kernel_difference_growth": kernel_difference_growth,
    "field_pairing_deviation": field_pairing_deviation,
    "log_mollification": log_mollification,
    "mollifier_drift": mollifier_drift,
    "mollifier_comparison": mollifier_comparison,
    "event_initial": event_initial,
    "event_improving": event_improving,
    "event_locality_test": event_locality_test,
    "convergence_diagnostic": convergence_diagnostic,
}


def run_experiment(name: str, cfg: ExperimentConfig) -> ExperimentReport:
    try:
        fn = EXPERIMENTS[name]
    except KeyError:
        raise ConfigError(f"experiment.name: unknown experiment {name!r} "
                          f"(choose from {', '.join(sorted(EXPERIMENTS))})") from None
    return fn(cfg)


__all__ = ["EXPERIMENTS", "ConfigError", "ExperimentConfig", "ExperimentReport", "PreconditionError",
           "load_config", "parse_config", "run_experiment"]
