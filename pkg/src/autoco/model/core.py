"""Operation-aware embedding model for creative CTR estimation.

The logit of a feature vector ``x`` under operator weights ``alpha`` is::

    bias + sum_i w1[x_i] + sum_{i<j} sum_k alpha[ij, k] * c_k(e_i^(k), e_j^(k))

where ``c_k(p, q) = head_w[k] . op_k(p, q) + head_b[k]`` and ``e_i^(k)`` is the
row of field ``i`` in the table used by operator ``k``. With operation-aware
embeddings every operator owns its tables; the shared variant maps all five
operators onto one table.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..features import FieldSchema
from . import kernels


class OperatorKind(enum.IntEnum):
    MULTIPLY = kernels.MULTIPLY
    PLUS = kernels.PLUS
    MAX = kernels.MAX
    MIN = kernels.MIN
    CONCAT = kernels.CONCAT

    @classmethod
    def parse(cls, name) -> "OperatorKind":
        if isinstance(name, OperatorKind):
            return name
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        return cls[str(name).strip().upper()]


OPERATORS = tuple(OperatorKind)
N_OPS = len(OPERATORS)


def apply_operator(kind, p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"operand shapes differ: {p.shape} vs {q.shape}")
    kind = OperatorKind.parse(kind)
    if kind is OperatorKind.MULTIPLY:
        return p * q
    if kind is OperatorKind.PLUS:
        return p + q
    if kind is OperatorKind.MAX:
        return np.maximum(p, q)
    if kind is OperatorKind.MIN:
        return np.minimum(p, q)
    return np.concatenate([p, q], axis=-1)


def head_width(kind, d: int) -> int:
    return 2 * d if OperatorKind.parse(kind) is OperatorKind.CONCAT else d


def pair_contribution(kind, e_i, e_j, head_w, head_b: float) -> float:
    """Scalar output of one interaction: FC head applied to ``op(e_i, e_j)``."""
    v = apply_operator(kind, e_i, e_j)
    head_w = np.asarray(head_w, dtype=np.float64)
    if head_w.shape[-1] < v.shape[-1]:
        raise ValueError(f"head has {head_w.shape[-1]} weights, operator output has {v.shape[-1]}")
    return float(v @ head_w[: v.shape[-1]] + head_b)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def bce(z, y):
    """Binary cross-entropy on logits, log-sum-exp stable."""
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z) - y * z


@dataclass
class ModelParams:
    """Point-estimate parameters of the interaction model.

    ``emb`` stacks all fields row-wise (see :attr:`FieldSchema.offsets`), one
    slab per table. ``op_table[k]`` names the slab operator ``k`` reads.
    """

    schema: FieldSchema
    emb: np.ndarray
    op_table: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    w1: np.ndarray
    bias: float = 0.0
    pair_i: np.ndarray = field(init=False, repr=False)
    pair_j: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.pair_i, self.pair_j = self.schema.pair_arrays()
        self.op_table = np.asarray(self.op_table, dtype=np.int64)
        T, R, _ = self.emb.shape
        if R != self.schema.n_rows:
            raise ValueError(f"embedding tables have {R} rows, schema needs {self.schema.n_rows}")
        if self.op_table.shape != (N_OPS,) or self.op_table.max() >= T:
            raise ValueError("op_table must map each of the 5 operators to an existing table")

    @property
    def d(self) -> int:
        return self.emb.shape[2]

    @property
    def oae(self) -> bool:
        return self.emb.shape[0] == N_OPS

    def n_parameters(self) -> int:
        heads = sum(head_width(k, self.d) + 1 for k in OPERATORS)
        return int(self.emb.size + heads + self.w1.size + 1)

    def copy(self) -> "ModelParams":
        return replace(
            self, emb=self.emb.copy(), head_w=self.head_w.copy(),
            head_b=self.head_b.copy(), w1=self.w1.copy(),
        )

    def table_rows(self, field_idx: int, op) -> np.ndarray:
        """View of the (l_i + 1, d) embedding matrix of a field for an operator."""
        k = OperatorKind.parse(op)
        o = self.schema.offsets[field_idx]
        n = self.schema.cardinalities[field_idx] + 1
        return self.emb[self.op_table[k], o:o + n]


def init_params(schema: FieldSchema, d: int = 8, rng=None, *, oae: bool = True,
                emb_std: float = 0.01, fm_heads: bool = False) -> ModelParams:
    """Fresh parameters: small Gaussian embeddings, N(0, 1/d) heads, zero biases.

    ``fm_heads`` sets every head to all-ones sum pooling (the factorization
    machine read-out) instead of random weights.
    """
    rng = np.random.default_rng(rng)
    T = N_OPS if oae else 1
    emb = rng.normal(0.0, emb_std, size=(T, schema.n_rows, d))
    if fm_heads:
        head_w = np.ones((N_OPS, 2 * d))
    else:
        head_w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(N_OPS, 2 * d))
    op_table = np.arange(N_OPS) if oae else np.zeros(N_OPS, dtype=np.int64)
    return ModelParams(schema, emb, op_table, head_w, np.zeros(N_OPS), np.zeros(schema.n_rows), 0.0)


def one_hot_alpha(selected, n_pairs: int, weights=None) -> np.ndarray:
    """(K, 5) weight matrix with ``weights[p]`` (default 1) on the selected operator."""
    sel = np.asarray([OperatorKind.parse(s) for s in selected], dtype=np.int64)
    if sel.shape != (n_pairs,):
        raise ValueError(f"need one operator per pair ({n_pairs}), got {sel.shape[0]}")
    a = np.zeros((n_pairs, N_OPS))
    a[np.arange(n_pairs), sel] = 1.0 if weights is None else weights
    return a


def _as_batch(params: ModelParams, x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=np.int64))
    params.schema.validate(X)
    return params.schema.global_rows(X)


def forward_mixed(x, alpha, params: ModelParams):
    """Pre-sigmoid logit(s) with every operator branch weighted by ``alpha``."""
    rows = _as_batch(params, x)
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha has non-finite entries")
    z, *_ = kernels.forward_backward(
        rows, np.zeros(rows.shape[0]), alpha, params.emb, params.op_table,
        params.head_w, params.head_b, params.w1, params.bias,
        params.pair_i, params.pair_j, want_grads=False, all_branches=False,
    )
    return float(z[0]) if np.ndim(x) == 1 else z


def predict_ctr(x, selected_ops, params: ModelParams):
    """Click probability with exactly one operator per pair."""
    alpha = one_hot_alpha(selected_ops, params.schema.n_pairs)
    return sigmoid(forward_mixed(x, alpha, params))


@dataclass
class Gradients:
    emb: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    w1: np.ndarray
    bias: float
    alpha: np.ndarray


def backward(x, y, alpha, params: ModelParams) -> tuple[Gradients, float]:
    """Gradients of the mean BCE over the rows of ``x``.

    Every operator branch is evaluated, so ``grads.alpha`` holds the
    derivative for unselected operators too. ``y`` may be a soft label in
    [0, 1]; binary labels are the usual case.
    """
    rows = _as_batch(params, x)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != rows.shape[0]:
        raise ValueError("x and y differ in length")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("labels must lie in [0, 1]")
    _, loss, ge, ghw, ghb, gw1, gb, ga = kernels.forward_backward(
        rows, y, alpha, params.emb, params.op_table, params.head_w, params.head_b,
        params.w1, params.bias, params.pair_i, params.pair_j,
    )
    return Gradients(ge, ghw, ghb, gw1, gb, ga), float(loss)
