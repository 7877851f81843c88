from .config import ExperimentConfig, SweepSpec, parse_config, parse_sweep
from .experiment import run_experiment
from .sweep import run_sweep
