"""Command-line entry point: ``run``, ``compare`` and ``selftest``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""
import argparse
import csv
import io
import itertools
import json
import os
import sys
import time
from dataclasses import fields

from . import kernels
from .errors import ConfigError, DivergenceError, ParseError
from .harness import METRIC_FIELDS, ExperimentConfig, MetricsLog, MetricsRow, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if kind in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if key == "dual_divisor":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a string or null")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    kwargs = {}
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        kwargs[key] = _coerce(key, value)
    return ExperimentConfig(**kwargs)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=exc.lineno) from None


def parse_config(path):
    """Load a flat JSON config and return a validated ExperimentConfig."""
    raw = _read_json(path)
    if isinstance(raw, dict) and "sweep" in raw:
        raise ConfigError("sweep files expand to several configs; use expand_sweep")
    return config_from_dict(raw)


def expand_sweep(raw):
    """``[(name, config), ...]`` for a config that may carry a ``sweep`` table.

    ``sweep`` maps config keys to lists of values; the cartesian product is
    taken in key order. Each entry is named ``key-value[_key-value...]``.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    sweep = raw.get("sweep")
    base = {k: v for k, v in raw.items() if k != "sweep"}
    if sweep is None:
        return [(None, config_from_dict(base))]
    if not isinstance(sweep, dict) or not sweep:
        raise ConfigError("sweep must be a non-empty object of key -> list")
    for key, values in sweep.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r} in sweep")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep {key!r} must be a non-empty list")
    keys = list(sweep)
    out = []
    for combo in itertools.product(*(sweep[k] for k in keys)):
        entry = dict(base)
        entry.update(zip(keys, combo))
        name = "_".join(f"{k}-{v}" for k, v in zip(keys, combo))
        out.append((name, config_from_dict(entry)))
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return format(v, ".17g")


def metrics_csv(log):
    buf = io.StringIO()
    buf.write(",".join(METRIC_FIELDS) + "\n")
    for row in log.rows:
        buf.write(",".join(_fmt(getattr(row, f)) for f in METRIC_FIELDS) + "\n")
    return buf.getvalue()


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRIC_FIELDS:
            raise ParseError(f"{path}: header does not match the metrics schema", line=1)
        rows = []
        for rec in reader:
            if len(rec) != len(METRIC_FIELDS):
                raise ParseError(f"{path}: expected {len(METRIC_FIELDS)} fields", line=reader.line_num)
            try:
                vals = [int(rec[0])] + [float(x) if x != "" else None for x in rec[1:]]
            except ValueError:
                raise ParseError(f"{path}: non-numeric field", line=reader.line_num) from None
            rows.append(MetricsRow(*vals))
    return MetricsLog(rows, {}, "")


def _free_dir(path):
    """``path`` itself, or ``path-1``, ``path-2``... if it already holds a run."""
    candidate, n = path, 0
    while os.path.exists(os.path.join(candidate, "metrics.csv")) or \
            os.path.exists(os.path.join(candidate, "manifest.json")):
        n += 1
        candidate = f"{path}-{n}"
    return candidate


def _run_one(config, config_path, out_dir):
    log = run_experiment(config)
    out_dir = _free_dir(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        fh.write(metrics_csv(log))
    manifest = {
        "config_path": os.path.abspath(config_path),
        "config": config.to_dict(),
        "run_id": log.run_id,
        "output_dir": os.path.abspath(out_dir),
        "kernel_backend": kernels.BACKEND,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def run_command(config_path, out_dir):
    try:
        entries = expand_sweep(_read_json(config_path))
        for name, config in entries:
            target = out_dir if name is None else os.path.join(out_dir, name)
            written = _run_one(config, config_path, target)
            print(f"wrote {written}")
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def compare_table(logs, names, target):
    from .harness import rounds_to_target

    reached = [rounds_to_target(log, target) for log in logs]
    base = reached[0]
    lines = [f"{'run':<40} {'final_acc':>9} {'rounds':>7} {'cost':>7}"]
    for name, log, r in zip(names, logs, reached):
        final = log.rows[-1].test_accuracy if log.rows else float("nan")
        rounds = "—" if r is None else str(r)
        if r is None or base is None or base == 0:
            cost = "—"
        else:
            cost = f"{r / base:.1f}×"
        lines.append(f"{name:<40} {final:>9.4f} {rounds:>7} {cost:>7}")
    return "\n".join(lines)


def compare_command(paths, target):
    try:
        if not 0 < target <= 1:
            raise ConfigError("target must lie in (0, 1]")
        logs = [read_metrics_csv(p) for p in paths]
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(compare_table(logs, paths, target))
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fedtoga", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment (or a sweep)")
    p_run.add_argument("config")
    p_run.add_argument("--out", required=True)
    p_cmp = sub.add_parser("compare", help="rounds-to-target table for metrics.csv files")
    p_cmp.add_argument("csv", nargs="+")
    p_cmp.add_argument("--target", type=float, required=True)
    sub.add_parser("selftest", help="run the fast invariant checks")
    args = parser.parse_args(argv)

    if args.command == "run":
        return run_command(args.config, args.out)
    if args.command == "compare":
        return compare_command(args.csv, args.target)
    from .selftest import run_selftest

    return run_selftest()


if __name__ == "__main__":
    sys.exit(main())
