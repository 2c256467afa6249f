"""Reward environments with known expected rewards.

Three environments share one batched protocol used by the harness:

* :class:`SyntheticWorld` - products, composited creatives and a hidden
  interaction model that fixes the true click probability of every cell.
* :class:`ReplayBandit` for Mushroom (eat / no-eat) and Adult (income
  prediction), built from labelled records drawn with replacement.

``sample_contexts`` draws request contexts, ``candidate_batch`` lays out the
candidates of many requests in one flat array, and ``rewards`` turns a
chosen candidate plus a uniform draw into a realized reward. Taking the
uniforms as input lets every algorithm of a repetition face the same
contexts and the same coin flips.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import Field, FieldSchema
from .model import init_params, kernels, sigmoid

ELEMENT_NAMES = ("template", "picture_size", "font", "blur", "color")
ELEMENT_CARDS = (4, 5, 10, 2, 10)


@dataclass
class CandidateBatch:
    """Candidates of ``n`` requests laid end to end.

    Request ``r`` owns rows ``ptr[r]:ptr[r+1]`` of ``X``. ``expected`` is the
    true expected reward of each candidate and ``oracle`` the best expected
    reward of each request; only the harness and the debug oracle read them.
    """

    X: np.ndarray
    ptr: np.ndarray
    arm_ids: np.ndarray
    expected: np.ndarray | None = None
    oracle: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.int64)
        self.ptr = np.asarray(self.ptr, dtype=np.int64)
        self.arm_ids = np.asarray(self.arm_ids, dtype=np.int64)
        if self.ptr[0] != 0 or self.ptr[-1] != self.X.shape[0]:
            raise ValueError("ptr does not cover the candidate rows")
        if np.any(np.diff(self.ptr) <= 0):
            raise ValueError("every request needs at least one candidate")

    @property
    def n_requests(self) -> int:
        return self.ptr.shape[0] - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.ptr)

    @classmethod
    def single(cls, candidates, arm_ids=None) -> "CandidateBatch":
        X = np.atleast_2d(np.asarray(candidates, dtype=np.int64))
        if X.shape[0] == 0 or X.size == 0:
            raise ValueError("empty candidate list")
        ids = np.arange(X.shape[0]) if arm_ids is None else arm_ids
        return cls(X, np.array([0, X.shape[0]]), ids)


# --------------------------------------------------------------------------
# synthetic creative world


@dataclass
class SynthConfig:
    n_products: int = 167
    element_names: tuple = ELEMENT_NAMES
    element_cards: tuple = ELEMENT_CARDS
    n_candidates: int = 67
    jitter: bool = False
    d: int = 8
    emb_std: float = 0.3
    pair_std: float = 0.1
    target_ctr: float = 0.0885

    def __post_init__(self):
        self.element_names = tuple(self.element_names)
        self.element_cards = tuple(int(c) for c in self.element_cards)
        if len(self.element_names) != len(self.element_cards):
            raise ValueError("element_names and element_cards differ in length")
        if self.n_products < 1 or self.n_candidates < 1 or self.d < 1:
            raise ValueError("counts must be positive")
        if not 0 < self.target_ctr < 1:
            raise ValueError("target_ctr must lie in (0, 1)")

    @property
    def n_combinations(self) -> int:
        return int(np.prod(self.element_cards))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown synthetic world keys: {sorted(extra)}")
        return cls(**d)


def synth_schema(cfg: SynthConfig) -> FieldSchema:
    fields = [Field("product", tuple(f"p{i}" for i in range(cfg.n_products)))]
    for name, card in zip(cfg.element_names, cfg.element_cards):
        fields.append(Field(name, tuple(f"{name}{i}" for i in range(card))))
    return FieldSchema(fields)


def head_scales(cfg: SynthConfig) -> np.ndarray:
    """Per-operator head std giving every pair contribution std ``pair_std``.

    With embeddings N(0, s^2) and d dims, the output variance per head weight
    is s^4 (multiply), 2 s^2 (plus), s^2 (1 - 1/pi) (max, min) and s^2 over
    2d weights (concat).
    """
    s2, d = cfg.emb_std ** 2, cfg.d
    per_weight = np.array([s2 * s2, 2 * s2, s2 * (1 - 1 / np.pi), s2 * (1 - 1 / np.pi), s2])
    n_weights = np.array([d, d, d, d, 2 * d])
    return cfg.pair_std / np.sqrt(per_weight * n_weights)


def calibrate_bias(logits: np.ndarray, target: float, tol: float = 1e-10) -> float:
    """Shift ``b`` with mean(sigmoid(logits + b)) == target, by bisection."""
    lo, hi = -60.0, 60.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sigmoid(logits + mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class SyntheticWorld:
    schema: FieldSchema
    X: np.ndarray  # (cells, 1 + elements), grouped by product
    ptr: np.ndarray  # (n_products + 1,)
    true_ctr: np.ndarray  # (cells,)
    meta: dict = field(default_factory=dict)

    binary = True

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.int64)
        self.ptr = np.asarray(self.ptr, dtype=np.int64)
        self.true_ctr = np.asarray(self.true_ctr, dtype=np.float64)
        if np.any(np.diff(self.ptr) <= 0):
            raise ValueError("every product needs a nonempty candidate list")
        if np.any(self.X[:, 0] != np.repeat(np.arange(self.n_products), np.diff(self.ptr))):
            raise ValueError("candidate rows are not grouped by product")
        self._best = np.maximum.reduceat(self.true_ctr, self.ptr[:-1])

    @property
    def n_products(self) -> int:
        return self.ptr.shape[0] - 1

    @property
    def n_cells(self) -> int:
        return self.X.shape[0]

    @property
    def n_arms(self) -> int:
        return self.n_cells

    def candidates(self, product: int) -> np.ndarray:
        return self.X[self.ptr[product]:self.ptr[product + 1]]

    def ctr(self, product: int) -> np.ndarray:
        return self.true_ctr[self.ptr[product]:self.ptr[product + 1]]

    def _cell(self, product: int, candidate) -> int:
        n = self.ptr[product + 1] - self.ptr[product]
        if np.ndim(candidate) == 0:
            c = int(candidate)
            if not 0 <= c < n:
                raise ValueError(f"candidate {c} is not in product {product}'s list")
            return int(self.ptr[product] + c)
        x = np.asarray(candidate, dtype=np.int64)
        hit = np.flatnonzero(np.all(self.candidates(product) == x, axis=1))
        if hit.size == 0:
            raise ValueError(f"creative {x.tolist()} is not in product {product}'s list")
        return int(self.ptr[product] + hit[0])

    def step(self, product: int, candidate, rng) -> int:
        """Bernoulli click for a candidate given by local index or feature vector."""
        return int(rng.random() < self.true_ctr[self._cell(product, candidate)])

    def oracle(self, product: int) -> tuple[int, float]:
        c = self.ctr(product)
        k = int(np.argmax(c))
        return k, float(c[k])

    # batched protocol

    def sample_contexts(self, n: int, rng) -> np.ndarray:
        return rng.integers(0, self.n_products, size=n)

    def candidate_batch(self, contexts) -> CandidateBatch:
        contexts = np.asarray(contexts, dtype=np.int64)
        starts, stops = self.ptr[contexts], self.ptr[contexts + 1]
        counts = stops - starts
        ptr = np.concatenate([[0], np.cumsum(counts)])
        cells = np.repeat(starts - ptr[:-1], counts) + np.arange(ptr[-1])
        return CandidateBatch(self.X[cells], ptr, cells, self.true_ctr[cells], self._best[contexts])

    def rewards(self, contexts, batch: CandidateBatch, chosen, u) -> np.ndarray:
        return (np.asarray(u) < batch.expected[chosen]).astype(np.float64)

    @staticmethod
    def to_label(rewards) -> np.ndarray:
        return np.asarray(rewards, dtype=np.float64)

    # persistence

    def to_json(self) -> str:
        return json.dumps({
            "kind": "synthetic_world",
            "schema": self.schema.to_dict(),
            "ptr": self.ptr.tolist(),
            "candidates": self.X[:, 1:].tolist(),
            "true_ctr": [float(v) for v in self.true_ctr],
            "meta": self.meta,
        })

    @classmethod
    def from_json(cls, text: str) -> "SyntheticWorld":
        d = json.loads(text)
        if d.get("kind") != "synthetic_world":
            raise ValueError("not a synthetic world artifact")
        ptr = np.asarray(d["ptr"], dtype=np.int64)
        elems = np.asarray(d["candidates"], dtype=np.int64).reshape(ptr[-1], -1)
        prod = np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))
        X = np.column_stack([prod, elems])
        return cls(FieldSchema.from_dict(d["schema"]), X, ptr, np.asarray(d["true_ctr"]), d["meta"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        with open(path) as fh:
            return cls.from_json(fh.read())


def synth_generate(cfg: SynthConfig | None = None, rng=None) -> SyntheticWorld:
    """Draw candidate sets and a hidden single-operator-per-pair model.

    The hidden model has one randomly chosen operator per field pair, Gaussian
    embedding tables per operator, Gaussian heads and no first-order terms.
    Its global bias is then set so that the mean CTR over all cells equals
    ``cfg.target_ctr``.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(rng)
    schema = synth_schema(cfg)
    cards = cfg.element_cards
    total = cfg.n_combinations

    rows, ptr = [], [0]
    for p in range(cfg.n_products):
        n = cfg.n_candidates
        if cfg.jitter:
            n = int(np.clip(rng.poisson(cfg.n_candidates), 1, total))
        if n > total:
            raise ValueError(f"{n} candidates requested but only {total} combinations exist")
        combo = rng.choice(total, size=n, replace=False)
        elems = np.column_stack(np.unravel_index(combo, cards))
        rows.append(np.column_stack([np.full(n, p), elems]))
        ptr.append(ptr[-1] + n)
    X = np.concatenate(rows).astype(np.int64)

    hidden = init_params(schema, cfg.d, rng, oae=True, emb_std=cfg.emb_std)
    hidden.head_w[:] = rng.normal(0.0, 1.0, size=hidden.head_w.shape) * head_scales(cfg)[:, None]
    hidden.head_b[:] = 0.0
    ops = rng.integers(0, kernels.N_OPS, size=schema.n_pairs)
    gr = schema.global_rows(X)
    z = kernels.score_bank(hidden.emb, gr, gr, ops, np.ones(schema.n_pairs),
                           hidden.pair_i, hidden.pair_j, hidden.op_table,
                           hidden.head_w, hidden.head_b, hidden.w1, 0.0)
    bias = calibrate_bias(z, cfg.target_ctr)
    ctr = sigmoid(z + bias)
    meta = {
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "bias": bias,
        "operators": [int(k) for k in ops],
        "logit_std": float(z.std()),
        "mean_ctr": float(ctr.mean()),
    }
    return SyntheticWorld(schema, X, np.asarray(ptr), ctr, meta)


# --------------------------------------------------------------------------
# replay bandits


@dataclass
class ReplayBandit:
    """A labelled dataset turned into a two-action contextual bandit.

    Candidates are the record's context fields plus an ``action`` field.
    ``labels`` is the boolean target (mushroom safe / income over 50K).
    """

    name: str
    context_schema: FieldSchema
    records: np.ndarray
    labels: np.ndarray
    actions: tuple
    binary: bool = False
    schema: FieldSchema = field(init=False)

    def __post_init__(self):
        self.records = np.asarray(self.records, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.records.shape[0] != self.labels.shape[0] or self.records.shape[0] == 0:
            raise ValueError("records and labels must be nonempty and equally long")
        self.schema = FieldSchema(list(self.context_schema.fields) + [Field("action", tuple(self.actions))])
        n_act = len(self.actions)
        self._exp = np.stack([self._expected_all(a) for a in range(n_act)], axis=1)
        lo, hi = self.reward_range
        self._span = (lo, hi - lo)

    @property
    def n_records(self) -> int:
        return self.records.shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_arms(self) -> int:
        return self.n_actions

    def expected(self, record: int, action: int) -> float:
        return float(self._exp[record, action])

    def oracle(self, record: int) -> tuple[int, float]:
        e = self._exp[record]
        k = int(np.argmax(e))
        return k, float(e[k])

    def candidates(self, record: int) -> np.ndarray:
        ctx = np.broadcast_to(self.records[record], (self.n_actions, self.records.shape[1]))
        return np.column_stack([ctx, np.arange(self.n_actions)])

    def step(self, record: int, action: int, rng) -> float:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} is not valid for {self.name}")
        return float(self._reward(np.array([self.labels[record]]), np.array([action]),
                                  np.array([rng.random()]))[0])

    def to_label(self, rewards) -> np.ndarray:
        """Rewards rescaled to [0, 1] for the logistic models."""
        lo, span = self._span
        return (np.asarray(rewards, dtype=np.float64) - lo) / span

    # batched protocol

    def sample_contexts(self, n: int, rng) -> np.ndarray:
        return rng.integers(0, self.n_records, size=n)

    def candidate_batch(self, contexts) -> CandidateBatch:
        contexts = np.asarray(contexts, dtype=np.int64)
        n, A = contexts.shape[0], self.n_actions
        ctx = np.repeat(self.records[contexts], A, axis=0)
        act = np.tile(np.arange(A), n)
        X = np.column_stack([ctx, act])
        return CandidateBatch(X, np.arange(n + 1) * A, act, self._exp[contexts].ravel(),
                              self._exp[contexts].max(axis=1))

    def rewards(self, contexts, batch: CandidateBatch, chosen, u) -> np.ndarray:
        action = batch.X[chosen, -1]
        return self._reward(self.labels[np.asarray(contexts)], action, np.asarray(u))

    # subclasses

    reward_range = (0.0, 1.0)

    def _expected_all(self, action: int) -> np.ndarray:
        raise NotImplementedError

    def _reward(self, labels, action, u) -> np.ndarray:
        raise NotImplementedError


EAT, NO_EAT = 0, 1


class MushroomBandit(ReplayBandit):
    """Eat a safe mushroom: +5. Eat a poisonous one: +5 or -35 on a fair coin. Skip: 0."""

    reward_range = (-35.0, 5.0)

    def __init__(self, schema: FieldSchema, records, safe):
        super().__init__("mushroom", schema, records, safe, ("eat", "no_eat"))

    def _expected_all(self, action):
        if action == NO_EAT:
            return np.zeros(self.n_records)
        return np.where(self.labels, 5.0, -15.0)

    def _reward(self, safe, action, u):
        eat = np.where(safe | (u < 0.5), 5.0, -35.0)
        return np.where(action == EAT, eat, 0.0)


OVER, NOT_OVER = 0, 1


class AdultBandit(ReplayBandit):
    """Predict the income class; a correct prediction pays 1."""

    def __init__(self, schema: FieldSchema, records, over50k):
        super().__init__("adult", schema, records, over50k, (">50K", "<=50K"), binary=True)

    def _expected_all(self, action):
        return (self.labels == (action == OVER)).astype(np.float64)

    def _reward(self, over, action, u):
        return (over == (action == OVER)).astype(np.float64)


def oracle_expected(env, context) -> tuple[int, float]:
    """Best action (candidate index) and its expected reward for one context."""
    return env.oracle(int(context))


__all__ = [
    "CandidateBatch", "SynthConfig", "SyntheticWorld", "synth_generate", "synth_schema",
    "calibrate_bias", "head_scales", "ReplayBandit", "MushroomBandit", "AdultBandit", "oracle_expected",
    "EAT", "NO_EAT", "OVER", "NOT_OVER",
]
