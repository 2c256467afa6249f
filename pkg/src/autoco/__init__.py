"""Interaction-function search with variational Thompson sampling for creative selection."""

from ._jit import backend, set_backend
from .features import Field, FieldSchema, load_adult, load_mushroom
from .model import OperatorKind, ModelParams, init_params, predict_ctr
from .search import ArchWeights, ifs_step, prox_c1, prox_c2, select_ops
from .bayes import PriorSpec, VariationalParams, VIState, kl_diag_gaussian, sample_theta, vi_step
from .envs import MushroomBandit, AdultBandit, SynthConfig, SyntheticWorld, synth_generate
from .bandit import ModelPolicy, ModelPolicyConfig, make_policy
from .harness import ExperimentConfig, load_config, relative_regret, run_experiment, write_outputs

__version__ = "0.1.0"

__all__ = [
    "backend", "set_backend", "Field", "FieldSchema", "load_adult", "load_mushroom",
    "OperatorKind", "ModelParams", "init_params", "predict_ctr", "ArchWeights", "ifs_step",
    "prox_c1", "prox_c2", "select_ops", "PriorSpec", "VariationalParams", "VIState",
    "kl_diag_gaussian", "sample_theta", "vi_step", "MushroomBandit", "AdultBandit",
    "SynthConfig", "SyntheticWorld", "synth_generate", "ModelPolicy", "ModelPolicyConfig",
    "make_policy", "ExperimentConfig", "load_config", "relative_regret", "run_experiment",
    "write_outputs",
]
