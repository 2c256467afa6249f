"""Diagonal-Gaussian variational posterior over the embedding tables.

Only the embedding tables are stochastic; heads, first-order weights, the
global bias and operator weights stay point estimates. The scale is stored
unconstrained as ``rho`` with ``sigma = softplus(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams
from .model import checkpoint, kernels
from .optim import make_optimizer
from .search import ArchWeights, apply_theta_grads, selected_table_mask, update_alpha


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class PriorSpec:
    prior_std: float = 1.0

    def __post_init__(self):
        if not self.prior_std > 0:
            raise ValueError(f"prior_std must be positive, got {self.prior_std}")


@dataclass
class VariationalParams:
    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.rho.shape:
            raise ValueError("mu and rho shapes differ")

    @classmethod
    def around(cls, mu: np.ndarray, rho_init: float = -5.0) -> "VariationalParams":
        return cls(mu, np.full_like(mu, rho_init))

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho)


def sample_theta(vp: VariationalParams, rng) -> np.ndarray:
    """One reparameterized draw ``mu + sigma * eps`` of every table entry."""
    eps = rng.standard_normal(vp.mu.shape)
    return vp.mu + vp.sigma * eps


def kl_diag_gaussian(vp: VariationalParams, prior: PriorSpec, mask=None) -> float:
    """KL(N(mu, sigma^2) || N(0, prior_std^2)) summed over entries (or ``mask``)."""
    s0 = prior.prior_std
    sigma = vp.sigma
    terms = np.log(s0 / sigma) + (sigma ** 2 + vp.mu ** 2) / (2 * s0 ** 2) - 0.5
    if mask is not None:
        terms = terms[mask]
    return float(terms.sum())


def kl_grads(vp: VariationalParams, prior: PriorSpec) -> tuple[np.ndarray, np.ndarray]:
    s0sq = prior.prior_std ** 2
    sigma = vp.sigma
    g_mu = vp.mu / s0sq
    g_rho = (-1.0 / sigma + sigma / s0sq) * _sigmoid(vp.rho)
    return g_mu, g_rho


@dataclass
class ElboGradients:
    mu: np.ndarray
    rho: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    w1: np.ndarray
    bias: float
    alpha: np.ndarray


def elbo_loss(X, y, eps, vp: VariationalParams, params: ModelParams, alpha,
              prior: PriorSpec, kl_weight: float) -> tuple[float, ElboGradients]:
    """``kl_weight * KL + mean BCE`` at the sample ``mu + sigma * eps``.

    ``params`` supplies the deterministic parts; its ``emb`` is ignored.
    """
    rows = params.schema.global_rows(np.atleast_2d(X))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if rows.shape[0] == 0:
        raise ValueError("empty minibatch")
    sigma = vp.sigma
    theta = vp.mu + sigma * eps
    _, bce, ge, ghw, ghb, gw1, gb, ga = kernels.forward_backward(
        rows, y, alpha, theta, params.op_table, params.head_w, params.head_b,
        params.w1, params.bias, params.pair_i, params.pair_j,
    )
    g_mu = ge.copy()
    g_rho = ge * eps * _sigmoid(vp.rho)
    loss = bce
    if kl_weight:
        kmu, krho = kl_grads(vp, prior)
        g_mu += kl_weight * kmu
        g_rho += kl_weight * krho
        loss += kl_weight * kl_diag_gaussian(vp, prior)
    return float(loss), ElboGradients(g_mu, g_rho, ghw, ghb, gw1, gb, ga)


@dataclass
class VIState:
    """Everything one variational search step reads and updates.

    ``params.emb`` is the posterior mean array itself, so greedy scoring at
    the mean needs no copy.
    """

    arch: ArchWeights
    params: ModelParams
    vp: VariationalParams
    prior: PriorSpec = field(default_factory=PriorSpec)
    kl_weight: float = 0.0
    lr_alpha: float = 1e-2
    lr_theta: float = 1e-3
    optimizer: str = "adam"
    search: bool = True
    train_heads: bool = True
    freeze_sigma: bool = False
    opt: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.opt is None:
            self.opt = make_optimizer(self.optimizer, self.lr_theta)
        if self.vp.mu is not self.params.emb:
            raise ValueError("params.emb must be the posterior mean array")

    @classmethod
    def create(cls, arch: ArchWeights, params: ModelParams, rho_init: float = -5.0, **kw) -> "VIState":
        return cls(arch, params, VariationalParams.around(params.emb, rho_init), **kw)


def vi_step(X, y, state: VIState, rng) -> float:
    """One joint update: discretize, sample noise once, step alpha, mu, rho, heads."""
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    if X.shape[0] == 0:
        raise ValueError("empty minibatch")
    p, vp = state.params, state.vp
    abar = state.arch.discretized() if state.search else state.arch.alpha
    eps = rng.standard_normal(vp.mu.shape)
    loss, g = elbo_loss(X, y, eps, vp, p, abar, state.prior, state.kl_weight)
    if state.search:
        update_alpha(state.arch, g.alpha, state.lr_alpha)
    mask = selected_table_mask(p, abar)
    state.opt.step("mu", vp.mu, g.mu, mask)
    if not state.freeze_sigma:
        state.opt.step("rho", vp.rho, g.rho, mask)
    # embedding gradient already applied through mu; heads, w1, bias follow
    apply_theta_grads(state, np.zeros((0,)), g.head_w, g.head_b, g.w1, g.bias, skip_emb=True)
    return loss


def save_variational(path, state: VIState) -> None:
    checkpoint.write(path, "variational", state.params,
                     extra_tables={"mu": state.vp.mu, "rho": state.vp.rho},
                     extra={"alpha": state.arch.alpha})


def load_variational(path) -> tuple[ModelParams, VariationalParams, np.ndarray]:
    header, a = checkpoint.read(path)
    mu = a["mu"]
    params = ModelParams(header["schema_obj"], mu, np.array(header["op_table"]),
                         a["head_w"], a["head_b"], a["w1"], float(a["bias"][0]))
    return params, VariationalParams(mu, a["rho"]), a["alpha"]


__all__ = [
    "PriorSpec", "VariationalParams", "VIState", "ElboGradients", "sample_theta",
    "kl_diag_gaussian", "kl_grads", "elbo_loss", "vi_step", "selected_table_mask",
    "save_variational", "load_variational",
]
