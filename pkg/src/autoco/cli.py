"""``autoco`` command line: run, prep-data, validate, plot, gen-world.

Exit codes: 0 success, 1 runtime or configuration error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import threading
from pathlib import Path

from . import envs, features, harness, validate


class _Writer:
    """Serializes all terminal output (progress lines may come from callbacks)."""

    def __init__(self, quiet: bool = False):
        self.quiet = quiet
        self._lock = threading.Lock()

    def out(self, text: str, force: bool = False) -> None:
        if self.quiet and not force:
            return
        with self._lock:
            print(text, flush=True)

    def err(self, text: str) -> None:
        with self._lock:
            print(text, file=sys.stderr, flush=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="autoco", description=__doc__.splitlines()[0])
    p.add_argument("--quiet", action="store_true", help="only print errors and final results")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config_path", nargs="?", help="TOML experiment config")
    r.add_argument("--config", dest="config_flag", help="TOML experiment config")
    r.add_argument("--seed", type=int, help="override the master seed")
    r.add_argument("--out-dir", help="override the output directory")
    r.add_argument("--parallel", type=int, default=1, help="worker processes for cells")
    r.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    d = sub.add_parser("prep-data", help="convert UCI files into the record format")
    d.add_argument("dataset", choices=["mushroom", "adult"])
    d.add_argument("inputs", nargs="+", help="UCI data file(s); adult takes adult.data and adult.test")
    d.add_argument("output", help="output .npz path")
    d.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    v = sub.add_parser("validate", help="run gradient / KL / prox self-checks")
    v.add_argument("suite", choices=sorted(validate.SUITES) + ["all"])
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    pl = sub.add_parser("plot", help="render curves.svg from batches.csv")
    pl.add_argument("csv", help="batches.csv from a run")
    pl.add_argument("output", help="output .svg path")
    pl.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    g = sub.add_parser("gen-world", help="write a synthetic world artifact")
    g.add_argument("output", help="output .json path")
    g.add_argument("--config", help="TOML config; its [environment] table sets the world")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def _cmd_run(a, w: _Writer) -> int:
    path = a.config_flag or a.config_path
    if not path:
        w.err("autoco run: a config path is required (positional or --config)")
        return 2
    cfg = harness.load_config(path)
    if a.seed is not None:
        cfg.seed = a.seed
    if a.out_dir:
        cfg.output_dir = str(Path(a.out_dir).resolve())
    if a.parallel < 1:
        w.err("autoco run: --parallel must be at least 1")
        return 2

    def progress(name, rep, rec):
        w.out(f"{name:>16s} rep {rep}: cum_ctr {rec['cum_ctr']:.5f}  cum_regret {rec['cum_regret']:.1f}")

    log = harness.run_experiment(cfg, parallel=a.parallel, progress=progress)
    files = harness.write_outputs(log, cfg)
    for f in files:
        w.out(f"wrote {f}")
    return 0


def _cmd_prep(a, w: _Writer) -> int:
    if a.dataset == "mushroom":
        if len(a.inputs) != 1:
            w.err("autoco prep-data mushroom: expects exactly one input file")
            return 2
        schema, X, labels = features.load_mushroom(a.inputs[0])
    else:
        schema, X, labels = features.load_adult(a.inputs)
    features.save_records(a.output, schema, X, labels, a.dataset)
    w.out(f"{a.dataset}: {X.shape[0]} records, {schema.n_fields} fields -> {a.output}")
    return 0


def _cmd_validate(a, w: _Writer) -> int:
    checks = validate.run(a.suite, seed=a.seed)
    for c in checks:
        w.out(c.line(), force=True)
    return 0 if all(c.passed for c in checks) else 1


def _cmd_plot(a, w: _Writer) -> int:
    log = harness.read_batches_csv(a.csv)
    Path(a.output).write_text(harness.render_svg(log))
    w.out(f"wrote {a.output}")
    return 0


def _cmd_gen_world(a, w: _Writer) -> int:
    spec = {}
    if a.config:
        spec = dict(harness.load_config(a.config).environment)
        if spec.get("kind") != "synthetic":
            w.err("autoco gen-world: the config's environment is not synthetic")
            return 1
    spec = {k: v for k, v in spec.items() if k not in ("kind", "world", "cross_fields")}
    world = envs.synth_generate(envs.SynthConfig.from_dict(spec), a.seed)
    world.save(a.output)
    w.out(f"world: {world.n_products} products, {world.n_cells} cells, "
          f"mean CTR {world.true_ctr.mean():.4f} -> {a.output}")
    return 0


COMMANDS = {"run": _cmd_run, "prep-data": _cmd_prep, "validate": _cmd_validate,
            "plot": _cmd_plot, "gen-world": _cmd_gen_world}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if a.command is None:
        parser.print_usage(sys.stderr)
        print("autoco: error: a command is required", file=sys.stderr)
        return 2
    w = _Writer(quiet=a.quiet)
    try:
        return COMMANDS[a.command](a, w)
    except harness.ConfigError as e:
        w.err(f"config error: {e}")
        return 1
    except (OSError, ValueError, KeyError) as e:
        w.err(f"error: {e}")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
