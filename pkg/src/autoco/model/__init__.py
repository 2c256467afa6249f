from .core import (
    N_OPS,
    OPERATORS,
    Gradients,
    ModelParams,
    OperatorKind,
    apply_operator,
    backward,
    bce,
    forward_mixed,
    head_width,
    init_params,
    one_hot_alpha,
    pair_contribution,
    predict_ctr,
    sigmoid,
)
from .checkpoint import load_model, save_model

__all__ = [
    "N_OPS", "OPERATORS", "Gradients", "ModelParams", "OperatorKind",
    "apply_operator", "backward", "bce", "forward_mixed", "head_width",
    "init_params", "one_hot_alpha", "pair_contribution", "predict_ctr",
    "sigmoid", "load_model", "save_model",
]
