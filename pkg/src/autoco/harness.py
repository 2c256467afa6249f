"""Experiment orchestration under delayed, batched feedback.

A run is a grid of cells, one per (algorithm, repetition). Within a
repetition every algorithm sees the same environment, the same request
contexts and the same uniform draws behind the rewards, so algorithm
differences are paired. A cell plays ``batches`` rounds of
``trials_per_batch`` requests, accumulating observations, then calls the
policy's ``update`` once per batch.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bandit, envs, features

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

CSV_COLUMNS = ("algorithm", "repetition", "batch", "trials", "reward_sum",
               "oracle_expected_sum", "chosen_expected_sum", "cum_ctr", "cum_regret")
ENV_KINDS = ("synthetic", "mushroom", "adult")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class AlgorithmSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    environment: dict
    algorithms: list
    trials_per_batch: int = 10_000
    batches: int = 20
    repetitions: int = 5
    seed: int = 0
    output_dir: str = "runs/experiment"
    model: dict = field(default_factory=dict)
    baseline: str = "Uniform"
    plot: bool = True
    log_decisions: bool = False
    base_dir: str = "."

    def __post_init__(self):
        for key in ("trials_per_batch", "batches", "repetitions"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{key} must be a positive integer, got {v!r}")
        self.algorithms = [a if isinstance(a, AlgorithmSpec) else _algorithm(a) for a in self.algorithms]
        if not self.algorithms:
            raise ConfigError("no algorithms configured")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate algorithm names in {names}")
        known = set(bandit.algorithm_names())
        for a in self.algorithms:
            if a.kind not in known:
                raise ConfigError(f"unknown algorithm {a.kind!r}; known: {', '.join(sorted(known))}")
        kind = self.environment.get("kind")
        if kind not in ENV_KINDS:
            raise ConfigError(f"environment.kind must be one of {ENV_KINDS}, got {kind!r}")
        bad = set(self.model) - bandit.ModelPolicyConfig.keys()
        if bad:
            raise ConfigError(f"unknown model settings {sorted(bad)}")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.algorithms]

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "environment" not in d or "algorithms" not in d:
            raise ConfigError("config needs [environment] and [[algorithms]] sections")
        try:
            return cls(**d, base_dir=str(base_dir))
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        return {
            "environment": self.environment,
            "algorithms": [{"name": a.name, "kind": a.kind, **a.params} for a in self.algorithms],
            "trials_per_batch": self.trials_per_batch, "batches": self.batches,
            "repetitions": self.repetitions, "seed": self.seed, "output_dir": self.output_dir,
            "model": self.model, "baseline": self.baseline, "plot": self.plot,
            "log_decisions": self.log_decisions,
        }

    def resolve(self, path) -> Path:
        p = Path(os.path.expandvars(str(path)))
        return p if p.is_absolute() else Path(self.base_dir) / p


def _algorithm(entry) -> AlgorithmSpec:
    if isinstance(entry, str):
        return AlgorithmSpec(entry, entry)
    entry = dict(entry)
    kind = entry.pop("kind", None)
    name = entry.pop("name", None)
    if name is None and kind is None:
        raise ConfigError("algorithm entries need a name")
    return AlgorithmSpec(name or kind, kind or name, entry)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def derive_seed(master: int, *keys) -> int:
    """64-bit seed hashed from the master seed and a key tuple.

    Independent of execution order, so cells can run in any order or in
    parallel and still draw the same numbers.
    """
    text = "|".join([str(int(master))] + [str(k) for k in keys])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# --------------------------------------------------------------------------
# environments


def _load_replay(cfg: ExperimentConfig):
    spec = cfg.environment
    kind = spec["kind"]
    if "path" not in spec:
        raise ConfigError(f"{kind} environment needs a data path")
    paths = spec["path"] if isinstance(spec["path"], list) else [spec["path"]]
    paths = [cfg.resolve(p) for p in paths]
    for p in paths:
        if not p.exists():
            raise ConfigError(f"data file not found: {p}")
    if paths[0].suffix == ".npz":
        name, schema, X, labels = features.load_records(paths[0])
        if name != kind:
            raise ConfigError(f"{paths[0]} holds {name!r} records, not {kind!r}")
    elif kind == "mushroom":
        schema, X, labels = features.load_mushroom(paths[0])
    else:
        schema, X, labels = features.load_adult(paths)
    cls = envs.MushroomBandit if kind == "mushroom" else envs.AdultBandit
    return cls(schema, X, labels)


def _synth_config(cfg: ExperimentConfig) -> envs.SynthConfig:
    spec = {k: v for k, v in cfg.environment.items() if k not in ("kind", "world", "cross_fields")}
    try:
        return envs.SynthConfig.from_dict(spec)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def build_environment(cfg: ExperimentConfig, repetition: int, _cache={}):
    """Environment of one repetition (worlds are regenerated per repetition)."""
    kind = cfg.environment["kind"]
    if kind == "synthetic":
        if "world" in cfg.environment:
            return envs.SyntheticWorld.load(cfg.resolve(cfg.environment["world"]))
        return envs.synth_generate(_synth_config(cfg), derive_seed(cfg.seed, "world", repetition))
    key = (kind, json.dumps(cfg.environment, sort_keys=True), cfg.base_dir)
    if key not in _cache:
        _cache.clear()
        _cache[key] = _load_replay(cfg)
    return _cache[key]


def _cross_fields(env, spec_fields):
    if spec_fields is None:
        return None
    names = env.schema.names
    return [names.index(f) if isinstance(f, str) else int(f) for f in spec_fields]


def build_policy(cfg: ExperimentConfig, alg: AlgorithmSpec, env, repetition: int) -> bandit.Policy:
    params = dict(alg.params)
    kw = {}
    if alg.kind == "MVT":
        cross = params.pop("cross_fields", cfg.environment.get("cross_fields"))
        if cross is None and cfg.environment["kind"] == "synthetic":
            cross = env.schema.names[1:]
        kw["cross_fields"] = _cross_fields(env, cross)
    seed = derive_seed(cfg.seed, "policy", alg.name, repetition)
    try:
        return bandit.make_policy(alg.kind, env.schema, seed, n_arms=env.n_arms,
                                  model=cfg.model, name=alg.name, **kw, **params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{alg.name}: {e}") from None


def validate_config(cfg: ExperimentConfig) -> None:
    """Fail fast on anything that would break before the first trial."""
    env = build_environment(cfg, 0)
    for alg in cfg.algorithms:
        build_policy(cfg, alg, env, 0)


# --------------------------------------------------------------------------
# running


@dataclass
class MetricsLog:
    """Per-batch records of every cell, in (algorithm, repetition, batch) order."""

    algorithms: list
    records: list = field(default_factory=list)
    env_totals: dict = field(default_factory=dict)
    decisions: list = field(default_factory=list)

    def rows(self, algorithm: str, repetition: int | None = None) -> list[dict]:
        return [r for r in self.records if r["algorithm"] == algorithm
                and (repetition is None or r["repetition"] == repetition)]

    def finals(self, algorithm: str) -> list[dict]:
        """Last batch record of each repetition."""
        last = {}
        for r in self.rows(algorithm):
            last[r["repetition"]] = r
        return [last[k] for k in sorted(last)]


def run_cell(cfg: ExperimentConfig, alg_index: int, repetition: int):
    alg = cfg.algorithms[alg_index]
    env = build_environment(cfg, repetition)
    policy = build_policy(cfg, alg, env, repetition)
    stream = np.random.default_rng(derive_seed(cfg.seed, "stream", repetition))
    select_rng = np.random.default_rng(derive_seed(cfg.seed, "select", alg.name, repetition))
    records, decisions = [], []
    trials = reward = regret = 0.0
    tally = 0.0
    T = cfg.trials_per_batch
    for b in range(cfg.batches):
        contexts = env.sample_contexts(T, stream)
        u = stream.random(T)
        batch = env.candidate_batch(contexts)
        local, scores = policy.select_batch(batch, select_rng)
        chosen = batch.ptr[:-1] + local
        r = env.rewards(contexts, batch, chosen, u)
        oracle_sum = float(batch.oracle.sum())
        chosen_sum = float(batch.expected[chosen].sum())
        trials += T
        reward += float(r.sum())
        regret += oracle_sum - chosen_sum
        tally += float(np.sum(r))
        records.append({
            "algorithm": alg.name, "repetition": repetition, "batch": b, "trials": T,
            "reward_sum": float(r.sum()), "oracle_expected_sum": oracle_sum,
            "chosen_expected_sum": chosen_sum, "cum_ctr": reward / trials, "cum_regret": regret,
        })
        if cfg.log_decisions:
            for t in range(T):
                decisions.append((alg.name, repetition, b * T + t, int(contexts[t]), int(local[t]),
                                  float(r[t]), float(scores[chosen[t]])))
        policy.update(batch.X[chosen], env.to_label(r), batch.arm_ids[chosen], r)
    return alg_index, repetition, records, tally, decisions


def _cells(cfg):
    return [(a, rep) for rep in range(cfg.repetitions) for a in range(len(cfg.algorithms))]


def run_experiment(cfg: ExperimentConfig, parallel: int = 1, progress=None) -> MetricsLog:
    """Run every (algorithm, repetition) cell and merge the results.

    ``progress`` is called in the parent process with ``(name, repetition,
    final_record)`` as cells finish.
    """
    validate_config(cfg)
    results = {}
    cells = _cells(cfg)
    if parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            futs = [ex.submit(run_cell, cfg, a, rep) for a, rep in cells]
            for f in futs:
                a, rep, recs, tally, dec = f.result()
                results[(a, rep)] = (recs, tally, dec)
                if progress:
                    progress(cfg.algorithms[a].name, rep, recs[-1])
    else:
        for a, rep in cells:
            _, _, recs, tally, dec = run_cell(cfg, a, rep)
            results[(a, rep)] = (recs, tally, dec)
            if progress:
                progress(cfg.algorithms[a].name, rep, recs[-1])
    log = MetricsLog(cfg.names)
    for a in range(len(cfg.algorithms)):
        for rep in range(cfg.repetitions):
            recs, tally, dec = results[(a, rep)]
            log.records.extend(recs)
            log.env_totals[(cfg.algorithms[a].name, rep)] = tally
            log.decisions.extend(dec)
    return log


# --------------------------------------------------------------------------
# metrics


def mean_stderr(values) -> tuple[float, float]:
    """Mean and sample standard deviation over sqrt(n); stderr is 0 for n = 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def relative_regret(log: MetricsLog, baseline: str = "Uniform") -> dict[str, tuple[float, float]]:
    """100 * final regret / mean final baseline regret, as mean and stderr over repetitions."""
    if baseline not in log.algorithms:
        raise ValueError(f"baseline {baseline!r} is not in the log")
    base = np.mean([r["cum_regret"] for r in log.finals(baseline)])
    if not base > 0:
        raise ValueError("baseline regret is zero; relative regret is undefined")
    return {
        alg: mean_stderr([100.0 * r["cum_regret"] / base for r in log.finals(alg)])
        for alg in log.algorithms
    }


def summarize(log: MetricsLog, baseline: str | None = "Uniform") -> dict:
    out = {}
    rel = None
    if baseline and baseline in log.algorithms:
        try:
            rel = relative_regret(log, baseline)
        except ValueError:
            rel = None
    for alg in log.algorithms:
        fin = log.finals(alg)
        if not fin:
            continue
        ctr = mean_stderr([r["cum_ctr"] for r in fin])
        reg = mean_stderr([r["cum_regret"] for r in fin])
        entry = {
            "repetitions": len(fin),
            "trials": int(sum(r["trials"] for r in log.rows(alg, fin[0]["repetition"]))),
            "cum_ctr": {"mean": ctr[0], "stderr": ctr[1]},
            "cum_regret": {"mean": reg[0], "stderr": reg[1]},
        }
        if rel is not None:
            entry["relative_regret"] = {"mean": rel[alg][0], "stderr": rel[alg][1]}
        out[alg] = entry
    return out


# --------------------------------------------------------------------------
# outputs


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def batches_csv(log: MetricsLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in log.records:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_batches_csv(path) -> MetricsLog:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    algs, records = [], []
    for row in rows:
        if row["algorithm"] not in algs:
            algs.append(row["algorithm"])
        rec = {"algorithm": row["algorithm"]}
        for c in ("repetition", "batch", "trials"):
            rec[c] = int(row[c])
        for c in CSV_COLUMNS[4:]:
            rec[c] = float(row[c])
        records.append(rec)
    return MetricsLog(algs, records)


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def write_outputs(log: MetricsLog, cfg: ExperimentConfig | None = None, out_dir=None) -> list[Path]:
    out = Path(out_dir if out_dir is not None else cfg.resolve(cfg.output_dir))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e.strerror or e}") from e
    baseline = cfg.baseline if cfg else "Uniform"
    files = [out / "batches.csv", out / "summary.json"]
    _write(files[0], batches_csv(log))
    _write(files[1], json.dumps(summarize(log, baseline), indent=2, sort_keys=True) + "\n")
    if cfg is None or cfg.plot:
        files.append(out / "curves.svg")
        _write(files[-1], render_svg(log))
    if log.decisions:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("algorithm", "repetition", "trial", "context", "candidate", "reward", "score"))
        w.writerows(log.decisions)
        files.append(out / "decisions.csv")
        _write(files[-1], buf.getvalue())
    return files


# --------------------------------------------------------------------------
# plotting

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _curves(log: MetricsLog, key: str) -> dict[str, np.ndarray]:
    out = {}
    for alg in log.algorithms:
        by_batch = {}
        for r in log.rows(alg):
            by_batch.setdefault(r["batch"], []).append(r[key])
        if by_batch:
            out[alg] = np.array([np.mean(by_batch[b]) for b in sorted(by_batch)])
    return out


def _panel(curves, x0, title, w=420, h=300) -> list[str]:
    left, top, pw, ph = x0 + 60, 40, w - 80, h - 90
    parts = [f'<text x="{x0 + w / 2}" y="22" text-anchor="middle" font-size="14">{title}</text>',
             f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    if not curves:
        return parts
    vals = np.concatenate(list(curves.values()))
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = max(len(c) for c in curves.values())
    for t in range(5):
        v = lo + (hi - lo) * t / 4
        y = top + ph - ph * t / 4
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{v:.4g}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{top + ph + 28}" text-anchor="middle" font-size="11">batch</text>')
    for i, (alg, c) in enumerate(curves.items()):
        xs = [left + (pw * k / max(n - 1, 1)) for k in range(len(c))]
        ys = [top + ph - ph * (v - lo) / (hi - lo) for v in c]
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{PALETTE[i % len(PALETTE)]}" '
                     f'stroke-width="1.6" points="{pts}"/>')
    return parts


def render_svg(log: MetricsLog) -> str:
    """Two polyline panels (cumulative CTR, cumulative regret) averaged over repetitions."""
    width, height = 860, 300 + 18 * ((len(log.algorithms) + 3) // 4) + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif">', f'<rect width="{width}" height="{height}" fill="white"/>']
    parts += _panel(_curves(log, "cum_ctr"), 0, "cumulative CTR")
    parts += _panel(_curves(log, "cum_regret"), 430, "cumulative regret")
    for i, alg in enumerate(log.algorithms):
        x = 60 + 200 * (i % 4)
        y = 300 + 18 * (i // 4)
        col = PALETTE[i % len(PALETTE)]
        parts.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{col}" stroke-width="2"/>')
        parts.append(f'<text x="{x + 24}" y="{y}" font-size="11">{_escape(alg)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


__all__ = [
    "CSV_COLUMNS", "ConfigError", "AlgorithmSpec", "ExperimentConfig", "MetricsLog",
    "load_config", "derive_seed", "build_environment", "build_policy", "run_cell",
    "run_experiment", "mean_stderr", "relative_regret", "summarize", "batches_csv",
    "read_batches_csv", "write_outputs", "render_svg",
]
