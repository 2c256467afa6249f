"""One-shot interaction function search with proximal steps.

Each field pair keeps a continuous weight vector over the five operators.
Training alternates a projection onto one-hot support (the discretized
architecture used for the forward pass) with a gradient step on the
continuous weights followed by clamping into the open unit box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .features import FieldSchema
from .model import N_OPS, OPERATORS, ModelParams, OperatorKind
from .model import kernels
from .optim import make_optimizer

EPS_CLIP = 1e-3


def prox_c1(v) -> np.ndarray:
    """Keep the largest entry of each 5-vector (first one on ties), zero the rest."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("prox_c1 needs finite input")
    out = np.zeros_like(v)
    idx = np.argmax(v, axis=-1)
    np.put_along_axis(out, idx[..., None], np.take_along_axis(v, idx[..., None], -1), -1)
    return out


def prox_c2(v, eps: float = EPS_CLIP) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if np.any(np.isnan(v)):
        raise ValueError("prox_c2 received NaN")
    return np.clip(v, eps, 1.0 - eps)


@dataclass
class ArchWeights:
    """Continuous operator weights, one row per field pair (i < j)."""

    pairs: list[tuple[int, int]]
    alpha: np.ndarray

    @classmethod
    def uniform(cls, schema: FieldSchema, value: float = 0.2) -> "ArchWeights":
        pairs = schema.pairs()
        return cls(pairs, np.full((len(pairs), N_OPS), value))

    @classmethod
    def fixed(cls, schema: FieldSchema, op) -> "ArchWeights":
        """Every pair pinned to one operator with weight 1."""
        pairs = schema.pairs()
        a = np.zeros((len(pairs), N_OPS))
        a[:, OperatorKind.parse(op)] = 1.0
        return cls(pairs, a)

    def discretized(self) -> np.ndarray:
        return prox_c1(self.alpha)

    def selected(self) -> np.ndarray:
        return np.argmax(self.alpha, axis=1)

    def copy(self) -> "ArchWeights":
        return ArchWeights(list(self.pairs), self.alpha.copy())


def select_ops(arch: ArchWeights | np.ndarray, pairs=None) -> dict[tuple[int, int], OperatorKind]:
    """Argmax operator of every pair; ties go to the lowest operator index."""
    if isinstance(arch, ArchWeights):
        pairs, alpha = arch.pairs, arch.alpha
    else:
        alpha = np.asarray(arch)
        if pairs is None:
            raise ValueError("pairs are required with a bare alpha array")
    idx = np.argmax(alpha, axis=1)
    return {tuple(p): OPERATORS[k] for p, k in zip(pairs, idx)}


def ops_to_json(ops: dict) -> str:
    return json.dumps({f"{i},{j}": OperatorKind.parse(k).name for (i, j), k in sorted(ops.items())},
                      indent=1)


def ops_from_json(text: str) -> dict[tuple[int, int], OperatorKind]:
    out = {}
    for key, name in json.loads(text).items():
        i, j = (int(s) for s in key.split(","))
        out[(i, j)] = OperatorKind[name]
    return out


@dataclass
class SearchState:
    """Operator weights, model parameters, and their optimizers."""

    arch: ArchWeights
    params: ModelParams
    lr_alpha: float = 1e-2
    lr_theta: float = 1e-3
    optimizer: str = "adam"
    search: bool = True
    train_heads: bool = True
    opt: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.opt is None:
            self.opt = make_optimizer(self.optimizer, self.lr_theta)


def update_alpha(arch: ArchWeights, g_alpha: np.ndarray, lr: float) -> None:
    arch.alpha = prox_c2(arch.alpha - lr * g_alpha)


def apply_theta_grads(state, g_emb, g_hw, g_hb, g_w1, g_bias, emb_mask=None,
                      skip_emb: bool = False) -> None:
    p, opt = state.params, state.opt
    if not skip_emb:
        opt.step("emb", p.emb, g_emb, emb_mask)
    if state.train_heads:
        opt.step("head_w", p.head_w, g_hw)
        opt.step("head_b", p.head_b, g_hb)
    opt.step("w1", p.w1, g_w1)
    b = np.array([p.bias])
    opt.step("bias", b, np.array([g_bias]))
    p.bias = float(b[0])


def selected_table_mask(params: ModelParams, abar: np.ndarray) -> np.ndarray:
    """(T, R) mask of table rows read by the operators selected in ``abar``."""
    schema = params.schema
    mask = np.zeros(params.emb.shape[:2], dtype=bool)
    used = np.zeros((params.emb.shape[0], schema.n_fields), dtype=bool)
    for p, k in zip(*np.nonzero(abar)):
        t = params.op_table[k]
        used[t, params.pair_i[p]] = True
        used[t, params.pair_j[p]] = True
    for t, f in zip(*np.nonzero(used)):
        o = schema.offsets[f]
        mask[t, o:o + schema.cardinalities[f] + 1] = True
    return mask


def ifs_step(X, y, state: SearchState) -> float:
    """One minibatch of interaction function search.

    Discretize, evaluate the loss at the discretized weights with every
    branch computed, step the continuous weights and clamp them, then take an
    optimizer step on the model parameters. Returns the minibatch loss.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    if X.shape[0] == 0:
        raise ValueError("empty minibatch")
    p = state.params
    rows = p.schema.global_rows(X)
    abar = state.arch.discretized() if state.search else state.arch.alpha
    _, loss, ge, ghw, ghb, gw1, gb, ga = kernels.forward_backward(
        rows, y, abar, p.emb, p.op_table, p.head_w, p.head_b, p.w1, p.bias,
        p.pair_i, p.pair_j, want_grads=True, all_branches=state.search,
    )
    if state.search:
        update_alpha(state.arch, ga, state.lr_alpha)
    apply_theta_grads(state, ge, ghw, ghb, gw1, gb, emb_mask=selected_table_mask(p, abar))
    return float(loss)
