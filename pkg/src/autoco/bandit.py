"""Selection policies.

Every policy scores the candidates of many requests at once through
:meth:`Policy.select_batch` and learns from the chosen candidates through
:meth:`Policy.update`. :meth:`Policy.select` is the single-request form.

The interaction-model family (AutoCO and its ablations, FM, FM-TS and the
fixed-operator Thompson variants) is one class configured by
:class:`ModelPolicyConfig`. The linear baselines share a ridge regression
over sparse one-hot (and, for MVT, pairwise cross) features.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .bayes import PriorSpec, VIState, vi_step
from .envs import CandidateBatch
from .features import FieldSchema
from .model import OperatorKind, init_params, kernels, sigmoid
from .search import ArchWeights, SearchState, ifs_step, select_ops


@dataclass
class Decision:
    index: int
    scores: np.ndarray


def segment_argmax(scores: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    """Local index of the largest score in each segment; first one on ties."""
    counts = np.diff(ptr)
    seg = np.repeat(np.arange(counts.shape[0]), counts)
    best = np.maximum.reduceat(scores, ptr[:-1])
    hit = np.flatnonzero(scores == best[seg])
    _, first = np.unique(seg[hit], return_index=True)
    return hit[first] - ptr[:-1]


def _uniform_local(counts, rng) -> np.ndarray:
    return rng.integers(0, counts)


class Policy:
    name = "policy"

    def select_batch(self, batch: CandidateBatch, rng) -> tuple[np.ndarray, np.ndarray]:
        """Chosen local index per request and a score for every candidate."""
        raise NotImplementedError

    def select(self, candidates, rng, arm_ids=None) -> Decision:
        batch = CandidateBatch.single(candidates, arm_ids)
        idx, scores = self.select_batch(batch, rng)
        return Decision(int(idx[0]), scores)

    def update(self, X, labels, arm_ids=None, rewards=None) -> None:
        """Learn from chosen candidates ``X`` with labels in [0, 1].

        ``rewards`` carries the raw environment reward when it differs from
        the label (Mushroom); count-based policies use it.
        """


class Uniform(Policy):
    name = "Uniform"

    def select_batch(self, batch, rng):
        return _uniform_local(batch.counts, rng), np.zeros(batch.X.shape[0])


class Oracle(Policy):
    """Debug policy that reads the true expected rewards."""

    name = "Oracle"

    def select_batch(self, batch, rng):
        if batch.expected is None:
            raise ValueError("the oracle needs expected rewards in the batch")
        return segment_argmax(batch.expected, batch.ptr), batch.expected.copy()


class Egreedy(Policy):
    """Per-arm empirical means; explore uniformly with probability ``epsilon``.

    Unseen arms have mean 0.
    """

    name = "Egreedy"

    def __init__(self, epsilon: float = 0.1, n_arms: int = 0):
        if not 0 <= epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        self.counts = np.zeros(n_arms)
        self.sums = np.zeros(n_arms)

    def _grow(self, n):
        if n > self.counts.shape[0]:
            self.counts = np.pad(self.counts, (0, n - self.counts.shape[0]))
            self.sums = np.pad(self.sums, (0, n - self.sums.shape[0]))

    def means(self, arm_ids) -> np.ndarray:
        arm_ids = np.asarray(arm_ids)
        self._grow(int(arm_ids.max()) + 1)
        c = self.counts[arm_ids]
        return np.divide(self.sums[arm_ids], c, out=np.zeros_like(c), where=c > 0)

    def select_batch(self, batch, rng):
        scores = self.means(batch.arm_ids)
        idx = segment_argmax(scores, batch.ptr)
        explore = rng.random(batch.n_requests) < self.epsilon
        rand = _uniform_local(batch.counts, rng)
        return np.where(explore, rand, idx), scores

    def update(self, X, labels, arm_ids=None, rewards=None):
        if arm_ids is None or len(arm_ids) == 0:
            return
        arm_ids = np.asarray(arm_ids)
        r = np.asarray(labels if rewards is None else rewards, dtype=np.float64)
        self._grow(int(arm_ids.max()) + 1)
        np.add.at(self.counts, arm_ids, 1.0)
        np.add.at(self.sums, arm_ids, r)


class BetaTS(Policy):
    """Context-free Beta-Bernoulli Thompson sampling, one Beta per arm."""

    name = "BetaTS"

    def __init__(self, a0: float = 1.0, b0: float = 50.0, n_arms: int = 0):
        self.a0, self.b0 = a0, b0
        self.succ = np.zeros(n_arms)
        self.fail = np.zeros(n_arms)

    def _grow(self, n):
        if n > self.succ.shape[0]:
            self.succ = np.pad(self.succ, (0, n - self.succ.shape[0]))
            self.fail = np.pad(self.fail, (0, n - self.fail.shape[0]))

    def select_batch(self, batch, rng):
        ids = batch.arm_ids
        self._grow(int(ids.max()) + 1)
        scores = rng.beta(self.a0 + self.succ[ids], self.b0 + self.fail[ids])
        return segment_argmax(scores, batch.ptr), scores

    def update(self, X, labels, arm_ids=None, rewards=None):
        if arm_ids is None or len(arm_ids) == 0:
            return
        y = np.asarray(labels, dtype=np.float64)
        self._grow(int(np.max(arm_ids)) + 1)
        np.add.at(self.succ, arm_ids, y)
        np.add.at(self.fail, arm_ids, 1.0 - y)


# --------------------------------------------------------------------------
# linear models over sparse indicator features


class SparseFeaturizer:
    """Per-field one-hots (unknown slot left out) plus optional pairwise crosses.

    A feature vector becomes ``(idx, val)`` arrays of width
    ``n_fields + len(cross_pairs)``; unknown categories get ``val = 0``.
    """

    def __init__(self, schema: FieldSchema, cross_pairs=()):
        self.schema = schema
        self.cards = schema.cardinalities.astype(np.int64)
        self.base_off = np.concatenate([[0], np.cumsum(self.cards)[:-1]])
        self.cross_pairs = [tuple(p) for p in cross_pairs]
        off = int(self.cards.sum())
        self.cross_off = []
        for i, j in self.cross_pairs:
            self.cross_off.append(off)
            off += int(self.cards[i] * self.cards[j])
        self.dim = off

    @classmethod
    def mvt(cls, schema: FieldSchema, fields=None) -> "SparseFeaturizer":
        fs = range(schema.n_fields) if fields is None else sorted(fields)
        fs = list(fs)
        return cls(schema, [(a, b) for ai, a in enumerate(fs) for b in fs[ai + 1:]])

    def transform(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        known = X < self.cards
        idx = [np.where(known, X + self.base_off, 0)]
        val = [known.astype(np.float64)]
        for (i, j), off in zip(self.cross_pairs, self.cross_off):
            ok = known[:, i] & known[:, j]
            idx.append(np.where(ok, off + X[:, i] * self.cards[j] + X[:, j], 0)[:, None])
            val.append(ok.astype(np.float64)[:, None])
        return np.hstack(idx), np.hstack(val)

    def dense(self, X) -> np.ndarray:
        idx, val = self.transform(X)
        out = np.zeros((idx.shape[0], self.dim))
        np.add.at(out, (np.arange(idx.shape[0])[:, None], idx), val)
        return out


def mvt_featurize(x, schema: FieldSchema, fields=None) -> np.ndarray:
    """Active dimensions of the one-hot plus cross-indicator expansion of ``x``."""
    idx, val = SparseFeaturizer.mvt(schema, fields).transform(x)
    return np.sort(idx[0][val[0] > 0])


class Ridge:
    """``A = lam I + sum x x^T``, ``b = sum r x`` with cached inverse and mean."""

    def __init__(self, dim: int, lam: float = 1.0):
        if not lam > 0:
            raise ValueError("ridge lambda must be positive")
        self.lam = lam
        self.A = lam * np.eye(dim)
        self.b = np.zeros(dim)
        self.A_inv = np.eye(dim) / lam
        self.theta = np.zeros(dim)
        self._chol = None

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def update(self, idx, val, r) -> None:
        if idx.shape[0] == 0:
            return
        outer = val[:, :, None] * val[:, None, :]
        np.add.at(self.A, (idx[:, :, None], idx[:, None, :]), outer)
        np.add.at(self.b, idx, val * np.asarray(r, dtype=np.float64)[:, None])
        self.A_inv = np.linalg.inv(self.A)
        self.A_inv = 0.5 * (self.A_inv + self.A_inv.T)
        self.theta = self.A_inv @ self.b
        self._chol = None

    def mean(self, idx, val) -> np.ndarray:
        return (self.theta[idx] * val).sum(axis=1)

    def variance(self, idx, val) -> np.ndarray:
        sub = self.A_inv[idx[:, :, None], idx[:, None, :]]
        return np.einsum("na,nab,nb->n", val, sub, val)

    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.A_inv)
        return self._chol


class _LinearPolicy(Policy):
    def __init__(self, featurizer: SparseFeaturizer, lam: float = 1.0):
        self.featurizer = featurizer
        self.ridge = Ridge(featurizer.dim, lam)

    def update(self, X, labels, arm_ids=None, rewards=None):
        if len(X) == 0:
            return
        idx, val = self.featurizer.transform(X)
        self.ridge.update(idx, val, labels)


class LinUCB(_LinearPolicy):
    name = "LinUCB"

    def __init__(self, featurizer, alpha_ucb: float = 1.0, lam: float = 1.0):
        super().__init__(featurizer, lam)
        self.alpha_ucb = alpha_ucb

    def select_batch(self, batch, rng):
        idx, val = self.featurizer.transform(batch.X)
        var = np.maximum(self.ridge.variance(idx, val), 0.0)
        scores = self.ridge.mean(idx, val) + self.alpha_ucb * np.sqrt(var)
        return segment_argmax(scores, batch.ptr), scores


class LinTS(_LinearPolicy):
    """One posterior draw ``theta ~ N(theta_hat, v^2 A^-1)`` per request."""

    name = "LinTS"
    chunk = 2048

    def __init__(self, featurizer, v: float = 0.25, lam: float = 1.0):
        super().__init__(featurizer, lam)
        self.v = v

    def select_batch(self, batch, rng):
        idx, val = self.featurizer.transform(batch.X)
        r = self.ridge
        L = r.chol()
        req = np.repeat(np.arange(batch.n_requests), batch.counts)
        scores = np.empty(batch.X.shape[0])
        for s in range(0, batch.n_requests, self.chunk):
            e = min(s + self.chunk, batch.n_requests)
            z = rng.standard_normal((e - s, r.dim))
            theta = r.theta[None, :] + self.v * (z @ L.T)
            lo, hi = batch.ptr[s], batch.ptr[e]
            scores[lo:hi] = (theta[req[lo:hi, None] - s, idx[lo:hi]] * val[lo:hi]).sum(axis=1)
        return segment_argmax(scores, batch.ptr), scores


class MVT(LinTS):
    name = "MVT"


# --------------------------------------------------------------------------
# interaction models


@dataclass
class ModelPolicyConfig:
    """Interaction-model policy settings.

    ``ops`` is ``"search"`` or a fixed operator name. ``heads="fm"`` freezes
    every head at all-ones (plain inner-product read-out). ``kl_weight``
    ``"auto"`` means one over the replay size. ``sample_mode`` is
    ``"request"`` (fresh posterior draw per request) or ``"batch"`` (one
    draw shared by a whole batch of requests). ``warm_bias`` sets the global
    bias to the log-odds of the first labels seen, so early operator-weight
    gradients are not dominated by a miscalibrated intercept.
    """

    ops: str = "search"
    oae: bool = True
    heads: str = "fc"
    thompson: bool = True
    epsilon: float = 0.0
    d: int = 8
    lr_alpha: float = 1e-2
    lr_theta: float = 1e-3
    optimizer: str = "adam"
    prior_std: float = 1.0
    rho_init: float = -5.0
    kl_weight: object = "auto"
    freeze_sigma: bool = False
    epochs: int = 1
    minibatch: int = 256
    replay_cap: int = 0
    sample_mode: str = "request"
    emb_std: float = 0.01
    warm_bias: bool = True

    def __post_init__(self):
        if self.ops != "search":
            self.ops = OperatorKind.parse(self.ops).name
        if self.heads not in ("fc", "fm"):
            raise ValueError(f"heads must be 'fc' or 'fm', got {self.heads!r}")
        if self.sample_mode not in ("request", "batch"):
            raise ValueError(f"sample_mode must be 'request' or 'batch', got {self.sample_mode!r}")
        if self.kl_weight != "auto" and not float(self.kl_weight) >= 0:
            raise ValueError("kl_weight must be 'auto' or nonnegative")
        if self.epochs < 0 or self.minibatch < 1 or self.d < 1:
            raise ValueError("epochs, minibatch and d must be positive")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}


class ModelPolicy(Policy):
    """Interaction model with Thompson sampling, greedy or epsilon-greedy choice.

    Training randomness (initialization, replay shuffles, reparameterization
    noise) comes from ``seed``; selection randomness from the ``rng`` given
    to :meth:`select_batch`.
    """

    chunk = 2048

    def __init__(self, schema: FieldSchema, config: ModelPolicyConfig | None = None,
                 seed=None, name: str = "model"):
        self.name = name
        self.cfg = cfg = config or ModelPolicyConfig()
        self.schema = schema
        ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
        init_ss, shuffle_ss, noise_ss = ss.spawn(3)
        self._shuffle_rng = np.random.default_rng(shuffle_ss)
        self._noise_rng = np.random.default_rng(noise_ss)
        fm = cfg.heads == "fm"
        params = init_params(schema, cfg.d, np.random.default_rng(init_ss), oae=cfg.oae,
                             emb_std=cfg.emb_std, fm_heads=fm)
        search = cfg.ops == "search"
        arch = ArchWeights.uniform(schema) if search else ArchWeights.fixed(schema, cfg.ops)
        common = dict(lr_alpha=cfg.lr_alpha, lr_theta=cfg.lr_theta, optimizer=cfg.optimizer,
                      search=search, train_heads=not fm)
        if cfg.thompson:
            kl = 0.0 if cfg.kl_weight == "auto" else float(cfg.kl_weight)
            self.state = VIState.create(arch, params, cfg.rho_init, prior=PriorSpec(cfg.prior_std),
                                        kl_weight=kl, freeze_sigma=cfg.freeze_sigma, **common)
        else:
            self.state = SearchState(arch, params, **common)
        self._X = np.zeros((0, schema.n_fields), dtype=np.int64)
        self._y = np.zeros(0)

    @property
    def params(self):
        return self.state.params

    @property
    def arch(self) -> ArchWeights:
        return self.state.arch

    def selected_ops(self):
        return select_ops(self.state.arch)

    def _selection(self):
        a = self.state.arch.alpha
        op = np.argmax(a, axis=1)
        # score with the same value-weighted one-hot the model was trained under
        return op, a[np.arange(a.shape[0]), op]

    def _logits(self, batch: CandidateBatch, rng) -> np.ndarray:
        p = self.params
        rows = p.schema.global_rows(batch.X)
        op, w = self._selection()
        args = (op, w, p.pair_i, p.pair_j, p.op_table, p.head_w, p.head_b, p.w1, p.bias)
        if not self.cfg.thompson:
            return kernels.score_bank(p.emb, rows, rows, *args)
        vp = self.state.vp
        if self.cfg.sample_mode == "batch":
            theta = vp.mu + vp.sigma * rng.standard_normal(vp.mu.shape)
            return kernels.score_bank(theta, rows, rows, *args)
        return self._logits_per_request(batch, rows, rng, args)

    def _logits_per_request(self, batch, rows, rng, args):
        # Each request gets its own posterior draw of the table rows its
        # candidates read. Draws are made in request order, one (T, d) block
        # per distinct row, so results do not depend on the chunk size.
        vp = self.state.vp
        T, R, d = vp.mu.shape
        sigma = vp.sigma
        out = np.empty(rows.shape[0])
        n = batch.n_requests
        for s in range(0, n, self.chunk):
            e = min(s + self.chunk, n)
            lo, hi = batch.ptr[s], batch.ptr[e]
            req = np.repeat(np.arange(e - s), batch.counts[s:e])
            keys = req[:, None] * R + rows[lo:hi]
            uniq, inv = np.unique(keys, return_inverse=True)
            r = uniq % R
            eps = rng.standard_normal((uniq.shape[0], T, d)).transpose(1, 0, 2)
            bank = vp.mu[:, r] + sigma[:, r] * eps
            slots = inv.reshape(keys.shape)
            out[lo:hi] = kernels.score_bank(np.ascontiguousarray(bank), slots, rows[lo:hi], *args)
        return out

    def select_batch(self, batch, rng):
        z = self._logits(batch, rng)
        idx = segment_argmax(z, batch.ptr)
        if self.cfg.epsilon > 0:
            explore = rng.random(batch.n_requests) < self.cfg.epsilon
            idx = np.where(explore, _uniform_local(batch.counts, rng), idx)
        return idx, sigmoid(z)

    def predict(self, X) -> np.ndarray:
        """Click probabilities at the posterior mean."""
        batch = CandidateBatch.single(X)
        p = self.params
        rows = p.schema.global_rows(batch.X)
        op, w = self._selection()
        return sigmoid(kernels.score_bank(p.emb, rows, rows, op, w, p.pair_i, p.pair_j,
                                          p.op_table, p.head_w, p.head_b, p.w1, p.bias))

    def update(self, X, labels, arm_ids=None, rewards=None):
        X = np.asarray(X, dtype=np.int64)
        if X.shape[0] == 0:
            return
        y = np.asarray(labels, dtype=np.float64)
        if self.cfg.warm_bias and self._X.shape[0] == 0:
            m = float(np.clip(y.mean(), 1e-3, 1 - 1e-3))
            self.params.bias = float(np.log(m / (1 - m)))
        self._X = np.concatenate([self._X, X.reshape(-1, self.schema.n_fields)])
        self._y = np.concatenate([self._y, y])
        cap = self.cfg.replay_cap
        if cap and self._X.shape[0] > cap:
            self._X, self._y = self._X[-cap:], self._y[-cap:]
        N = self._X.shape[0]
        st = self.state
        if self.cfg.thompson and self.cfg.kl_weight == "auto":
            st.kl_weight = 1.0 / N
        mb = self.cfg.minibatch
        for _ in range(self.cfg.epochs):
            perm = self._shuffle_rng.permutation(N)
            for s in range(0, N, mb):
                b = perm[s:s + mb]
                if self.cfg.thompson:
                    vi_step(self._X[b], self._y[b], st, self._noise_rng)
                else:
                    ifs_step(self._X[b], self._y[b], st)

    @property
    def replay_size(self) -> int:
        return self._X.shape[0]


# named presets of the interaction-model family
MODEL_PRESETS = {
    "AutoCO": dict(),
    "AutoCO-noOAE": dict(oae=False),
    "AutoCO-greedy": dict(thompson=False),
    "AutoCO-Egreedy": dict(thompson=False, epsilon=0.1),
    "FM": dict(ops="MULTIPLY", oae=False, heads="fm", thompson=False),
    "FM-TS": dict(ops="MULTIPLY", oae=False, heads="fm"),
    "FM-Egreedy": dict(ops="MULTIPLY", oae=False, heads="fm", thompson=False, epsilon=0.2),
}
for _op in OperatorKind:
    MODEL_PRESETS[f"{_op.name}-TS"] = dict(ops=_op.name)

LINEAR = {"LinUCB", "LinTS", "MVT"}
SIMPLE = {"Uniform", "Egreedy", "BetaTS", "Oracle"}


def algorithm_names() -> list[str]:
    return sorted(MODEL_PRESETS) + sorted(LINEAR) + sorted(SIMPLE)


def make_policy(kind: str, schema: FieldSchema, seed=None, *, n_arms: int = 0,
                model: dict | None = None, cross_fields=None, name: str | None = None,
                **params) -> Policy:
    """Build a policy by algorithm name.

    ``model`` holds shared interaction-model defaults that ``params``
    override; ``cross_fields`` restricts MVT's pairwise crosses.
    """
    name = name or kind
    if kind in MODEL_PRESETS:
        merged = {**(model or {}), **MODEL_PRESETS[kind], **params}
        unknown = set(merged) - ModelPolicyConfig.keys()
        if unknown:
            raise ValueError(f"{name}: unknown model settings {sorted(unknown)}")
        return ModelPolicy(schema, ModelPolicyConfig(**merged), seed, name=name)
    if kind == "LinUCB":
        pol = LinUCB(SparseFeaturizer(schema), **params)
    elif kind == "LinTS":
        pol = LinTS(SparseFeaturizer(schema), **params)
    elif kind == "MVT":
        pol = MVT(SparseFeaturizer.mvt(schema, cross_fields), **params)
    elif kind == "Uniform":
        pol = Uniform(**params)
    elif kind == "Egreedy":
        pol = Egreedy(n_arms=n_arms, **params)
    elif kind == "BetaTS":
        pol = BetaTS(n_arms=n_arms, **params)
    elif kind == "Oracle":
        pol = Oracle(**params)
    else:
        raise ValueError(f"unknown algorithm {kind!r}; known: {', '.join(algorithm_names())}")
    pol.name = name
    return pol


__all__ = [
    "Decision", "Policy", "Uniform", "Oracle", "Egreedy", "BetaTS", "SparseFeaturizer",
    "mvt_featurize", "Ridge", "LinUCB", "LinTS", "MVT", "ModelPolicyConfig", "ModelPolicy",
    "MODEL_PRESETS", "algorithm_names", "make_policy", "segment_argmax",
]
