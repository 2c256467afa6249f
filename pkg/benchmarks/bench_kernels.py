"""Compare the numba and numpy backends of the two hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the real workloads: a training minibatch of the Mushroom
bandit (23 fields, 253 pairs, all operator branches) and the candidate
scoring of one synthetic batch (10,000 requests x 67 candidates, 6 fields).
Also checks that both backends agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from autoco import _jit
from autoco.features import FieldSchema
from autoco.model import init_params, kernels


def _setup(n_fields, card, d, rng):
    schema = FieldSchema.from_cardinalities([f"f{i}" for i in range(n_fields)], [card] * n_fields)
    p = init_params(schema, d, rng, emb_std=0.1)
    return schema, p


def bench_forward_backward(rng, repeat):
    schema, p = _setup(23, 8, 8, rng)
    X = rng.integers(0, 8, size=(256, 23))
    rows = schema.global_rows(X)
    y = rng.random(256)
    alpha = np.zeros((schema.n_pairs, 5))
    alpha[np.arange(schema.n_pairs), rng.integers(0, 5, schema.n_pairs)] = 0.5

    def call():
        return kernels.forward_backward(rows, y, alpha, p.emb, p.op_table, p.head_w, p.head_b,
                                        p.w1, p.bias, p.pair_i, p.pair_j)
    return "forward_backward (256 x 253 pairs, all branches)", call


def bench_score(rng, repeat):
    schema, p = _setup(6, 10, 8, rng)
    X = rng.integers(0, 10, size=(670_000, 6))
    rows = schema.global_rows(X)
    ops = rng.integers(0, 5, schema.n_pairs)
    w = np.ones(schema.n_pairs)

    def call():
        return kernels.score_bank(p.emb, rows, rows, ops, w, p.pair_i, p.pair_j, p.op_table,
                                  p.head_w, p.head_b, p.w1, p.bias)
    return "score_bank (670,000 candidates x 15 pairs)", call


def timed(call, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        call()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if not _jit.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend can run")
    for make in (bench_forward_backward, bench_score):
        label, call = make(rng, args.repeat)
        times, outs = {}, {}
        for name in ("numba", "numpy"):
            if name == "numba" and not _jit.HAVE_NUMBA:
                continue
            _jit.set_backend(name)
            outs[name] = call()  # warm-up (and JIT compile)
            times[name] = timed(call, args.repeat)
        line = f"{label}: " + ", ".join(f"{k} {v * 1e3:.1f} ms" for k, v in times.items())
        if len(times) == 2:
            a, b = outs["numba"], outs["numpy"]
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            err = max(float(np.max(np.abs(np.asarray(u) - np.asarray(v)))) for u, v in zip(a, b))
            line += f", speedup x{times['numpy'] / times['numba']:.1f}, max abs diff {err:.1e}"
        print(line)
    _jit.set_backend("numba" if _jit.HAVE_NUMBA else "numpy")


if __name__ == "__main__":
    main()
