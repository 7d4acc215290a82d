"""Command line: ``avgcorr run <experiment>`` and ``avgcorr verify <experiment> --in <dir>``.

``run`` writes one CSV per result table plus ``manifest.json`` into ``--out``.
``verify`` re-reads those CSVs, checks them against the acceptance thresholds
and writes ``report.json`` next to them. Settings come from an optional
``key = value`` file; flags override it.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DivergenceError, InputError
from .experiments import EXPERIMENTS, WORKERS_ENV, ExperimentSpec

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"
REPORT = "report.json"

EXPERIMENT_ENVS = {"counterexample": "two_state", "bias_variance": "discrete_reacher",
                   "oracle_checks": None, "cartpole": "cartpole"}


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {n}: empty key")
        out[key] = value
    return out


def parse_seeds(text: str) -> list[int]:
    """``3``, ``0,1,2`` or the inclusive range ``0-9``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def build_spec(args) -> ExperimentSpec:
    settings = {}
    if args.config:
        settings.update(parse_config(Path(args.config).read_text()))
    for item in args.set or []:
        settings.update(parse_config(item))
    for flag in ("env", "scheme", "gamma", "seed", "steps"):
        value = getattr(args, flag)
        if value is not None:
            settings[flag] = str(value)
    env = settings.pop("env", None)
    expected = EXPERIMENT_ENVS[args.experiment]
    if env is not None and expected is not None and env != expected:
        raise ConfigError(f"experiment {args.experiment!r} runs on {expected!r}, not {env!r}")
    schemes = [s for s in settings.pop("scheme", "").split(",") if s]
    seeds = parse_seeds(settings.pop("seed", "0"))
    if args.experiment == "counterexample" and "steps" in settings:
        settings.setdefault("updates", settings.pop("steps"))
    return ExperimentSpec(args.experiment, env or expected, schemes, seeds, settings, args.out)


def config_hash(spec: ExperimentSpec) -> str:
    payload = json.dumps(dict(name=spec.name, env=spec.env, schemes=spec.schemes, seeds=spec.seeds,
                              overrides=spec.overrides), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def _cell(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return value


def write_table(path: Path, rows: list[dict]) -> None:
    columns = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})


def read_tables(directory: Path) -> dict:
    tables = {}
    for path in sorted(directory.glob("*.csv")):
        with path.open(newline="") as fh:
            tables[path.stem] = list(csv.DictReader(fh))
    return tables


def write_manifest(out: Path, spec: ExperimentSpec, status: str, tables, started: float, error: str = "") -> None:
    from .kernels import BACKEND

    manifest = dict(
        experiment=spec.name, anchor=EXPERIMENTS[spec.name].anchor, status=status, error=error,
        env=spec.env, schemes=spec.schemes, seeds=spec.seeds, overrides=spec.overrides,
        config_hash=config_hash(spec), code_version=code_version(), kernel_backend=BACKEND,
        python=platform.python_version(), tables=sorted(tables), started=started,
        elapsed_seconds=round(time.time() - started, 3),
    )
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    spec = build_spec(args)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        tables = EXPERIMENTS[spec.name].run(spec)
    except DivergenceError as exc:
        partial = {"partial_curve": exc.curve} if exc.curve else {}
        for name, rows in partial.items():
            write_table(out / f"{name}.csv", rows)
        write_manifest(out, spec, "error", partial, started, f"DivergenceError: {exc}")
        print(f"error: {exc}; partial results in {out}", file=sys.stderr)
        return EXIT_FAILED
    except Exception as exc:
        write_manifest(out, spec, "error", {}, started, f"{type(exc).__name__}: {exc}")
        raise
    for name, rows in tables.items():
        write_table(out / f"{name}.csv", rows)
    write_manifest(out, spec, "ok", tables, started)
    print(f"{spec.name}: wrote {', '.join(sorted(tables))} to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    directory = Path(args.input)
    tables = read_tables(directory) if directory.is_dir() else {}
    if not tables:
        raise InputError(f"no result tables in {directory}; run the experiment first")
    results = EXPERIMENTS[args.experiment].verify(tables)
    report = {key: {"passed": bool(r.passed), "detail": r.detail} for key, r in sorted(results.items())}
    (directory / REPORT).write_text(json.dumps(report, indent=2) + "\n")
    for key, r in sorted(results.items()):
        print(f"{'PASS' if r.passed else 'FAIL'} {key}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results.values()) else EXIT_FAILED


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgcorr", description=__doc__.splitlines()[0],
                                     epilog=f"Set {WORKERS_ENV}=N to run independent seeds in N processes.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment and write CSV results")
    run.add_argument("experiment", choices=sorted(EXPERIMENTS))
    run.add_argument("--env")
    run.add_argument("--scheme", help="comma-separated weighting schemes")
    run.add_argument("--gamma", type=float)
    run.add_argument("--seed", help="seed, comma list or inclusive range such as 0-9")
    run.add_argument("--steps", type=int)
    run.add_argument("--out", default="results")
    run.add_argument("--config", help="key = value settings file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra setting (repeatable)")
    run.set_defaults(func=cmd_run)
    verify = sub.add_parser("verify", help="check stored results against the acceptance thresholds")
    verify.add_argument("experiment", choices=sorted(EXPERIMENTS))
    verify.add_argument("--in", dest="input", required=True)
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
