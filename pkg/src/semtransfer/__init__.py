"""Few-shot image-to-semantics translation for policy transfer."""
from .envs import EnvConfig, make_config
from .experiment import ExperimentConfig, load_config, run_experiment

__all__ = ["EnvConfig", "ExperimentConfig", "load_config", "make_config", "run_experiment"]
__version__ = "0.1.0"
