"""Command-line front end.

Subcommands:
  run          one experiment from a config file and/or flags
  fig3         BU at p = 0.2, 0.6, 1.0 (500 paths, T = 5000)
  fig4         BU, BU-ER (T0 = 30) and greedy at p = 0.6
  diagnostics  renewal, hitting-time and bound checks; exit code 1 on failure

The default seed is 42, so every preset is reproducible out of the box.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import yaml

from . import analysis
from .engine import ExperimentConfig, default_workers, derive_stream, dump_records, run_experiment
from .policies import POLICY_NAMES, T0_CLOCKS

COLUMNS = ("T", "p", "policy", "mean_aoi", "stderr", "lower_bound")
DEFAULT_SEED = 42
CONFIG_KEYS = ("p", "T", "T0", "paths", "seed", "policy", "E0", "t0_clock", "sample_grid", "rate", "format", "workers")


class UsageError(Exception):
    pass


def _num(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def result_rows(result) -> list[dict]:
    cfg = result.config
    lb = analysis.lower_bound(cfg.p)
    return [
        {"T": t, "p": cfg.p, "policy": cfg.policy, "mean_aoi": m, "stderr": s, "lower_bound": lb}
        for t, m, s in zip(result.grid, result.mean, result.stderr)
    ]


def render(rows: list[dict], fmt: str, columns=None) -> str:
    """CSV with a header row, or a JSON array of row objects, in column order."""
    columns = list(columns or (rows[0].keys() if rows else COLUMNS))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(r.get(c, "")) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([{c: r.get(c) for c in columns} for r in rows], indent=1) + "\n"
    raise UsageError(f"unknown format {fmt!r}")


def emit(rows: list[dict], fmt: str, path: str | None, columns=None) -> None:
    text = render(rows, fmt, columns)
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text)


def load_config(path: str) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a flat key: value mapping")
    unknown = set(data) - set(CONFIG_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown keys {', '.join(sorted(unknown))}")
    return data


def _settings(args) -> dict:
    settings = load_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return settings


def _workers(settings) -> int:
    w = settings.get("workers")
    return default_workers() if w is None else int(w)


def _experiment(settings, **overrides) -> ExperimentConfig:
    s = {**settings, **overrides}
    kwargs = {k: s[k] for k in ("p", "T", "T0", "paths", "seed", "policy", "E0", "t0_clock", "rate") if s.get(k) is not None}
    if s.get("sample_grid") is not None:
        kwargs["sample_grid"] = tuple(s["sample_grid"])
    kwargs.setdefault("seed", DEFAULT_SEED)
    return ExperimentConfig(**kwargs)


def cmd_run(args) -> int:
    settings = _settings(args)
    missing = [k for k in ("p", "T") if settings.get(k) is None]
    if missing:
        raise UsageError(f"missing required value(s): {', '.join(missing)}")
    cfg = _experiment(settings)
    fmt = settings.get("format", "csv")
    if args.dump_config:
        effective = {k: v for k, v in cfg.to_dict().items() if v is not None}
        effective["format"] = fmt
        Path(args.dump_config).write_text(yaml.safe_dump(effective, sort_keys=True))
    result = run_experiment(cfg, _workers(settings), keep_records=bool(args.records))
    if args.records:
        dump_records(result.records, args.records)
    emit(result_rows(result), fmt, args.out, COLUMNS)
    return 0


def preset_fig3(paths=500, T=5000.0, seed=DEFAULT_SEED, workers=None, ps=(0.2, 0.6, 1.0)) -> list[dict]:
    rows = []
    for p in ps:
        cfg = ExperimentConfig(p=p, T=T, paths=paths, seed=seed, policy="bu")
        rows.extend(result_rows(run_experiment(cfg, workers)))
    return rows


def preset_fig4(paths=500, T=5000.0, seed=DEFAULT_SEED, workers=None, p=0.6, t0=30.0, t0_clock="absolute") -> list[dict]:
    rows = []
    for policy in ("bu", "bu-er", "greedy"):
        cfg = ExperimentConfig(p=p, T=T, paths=paths, seed=seed, policy=policy, T0=t0, t0_clock=t0_clock)
        rows.extend(result_rows(run_experiment(cfg, workers)))
    return rows


def cmd_fig3(args) -> int:
    s = _settings(args)
    rows = preset_fig3(s.get("paths", 500), s.get("T", 5000.0), s.get("seed", DEFAULT_SEED), _workers(s))
    emit(rows, s.get("format", "csv"), args.out, COLUMNS)
    return 0


def cmd_fig4(args) -> int:
    s = _settings(args)
    rows = preset_fig4(
        s.get("paths", 500), s.get("T", 5000.0), s.get("seed", DEFAULT_SEED), _workers(s),
        p=s.get("p", 0.6), t0=s.get("T0", 30.0), t0_clock=s.get("t0_clock", "absolute"),
    )
    emit(rows, s.get("format", "csv"), args.out, COLUMNS)
    return 0


def run_diagnostics(paths=200, T=5000.0, seed=DEFAULT_SEED, workers=None, p=0.6, walk_samples=10_000, walk_cap=10**6):
    """Run the analysis checks at the given scale; returns a list of reports."""
    reports = []
    lb = [analysis.lower_bound(x) for x in (0.2, 0.6, 1.0)]
    reports.append(
        analysis.CheckReport(
            "lower_bound",
            lb[0] > lb[1] > lb[2] == 0.5,
            {"p": [0.2, 0.6, 1.0], "bound": lb, "second_moment": analysis.geometric_second_moment(p)},
        )
    )
    kappa = analysis.walk_hitting_times(derive_stream(seed, 0, "walk"), walk_samples, walk_cap)
    reports.append(analysis.martingale_bound_check([1.0, 0.3, 0.1], kappa, walk_cap))
    reports.append(analysis.hitting_time_growth_check(kappa, 10**3, walk_cap))

    tails = {}
    t2 = []
    for t0 in (10.0, 30.0, 100.0, 300.0):
        cfg = ExperimentConfig(p=p, T=T, paths=paths, seed=seed, policy="bu-er", T0=t0, t0_clock="cycle")
        res = run_experiment(cfg, workers)
        tails[t0] = res.tail
        t2.extend(res.t2)
    reports.append(analysis.t2_distribution_check(t2))
    reports.append(analysis.renewal_tail_check(tails))
    reports.append(analysis.t0_convergence_check(p, (5.0, 30.0, 100.0), T, paths, seed, "cycle", workers=workers))
    return reports


def cmd_diagnostics(args) -> int:
    s = _settings(args)
    reports = run_diagnostics(s.get("paths", 200), s.get("T", 5000.0), s.get("seed", DEFAULT_SEED), _workers(s), s.get("p", 0.6))
    for r in reports:
        print(r.to_text())
        print()
    if args.out:
        rows = [r.to_row() for r in reports]
        cols = []
        for r in rows:
            cols.extend(c for c in r if c not in cols)
        emit(rows, s.get("format", "csv"), args.out, cols)
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehaoi", description="AoI simulator for energy-harvesting status updates over an erasure channel.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat YAML key: value file; flags override it")
        sp.add_argument("--p", type=float, help="delivery success probability in (0, 1]")
        sp.add_argument("--T", type=float, help="horizon")
        sp.add_argument("--T0", type=float, help="BU-ER stage-1 time limit")
        sp.add_argument("--paths", type=int, help="number of sample paths")
        sp.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
        sp.add_argument("--policy", choices=POLICY_NAMES)
        sp.add_argument("--E0", type=int, help="initial battery level")
        sp.add_argument("--t0-clock", dest="t0_clock", choices=T0_CLOCKS)
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--workers", type=int, help="worker processes (env EHAOI_WORKERS)")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--records", help="write per-path records, one JSON object per line")
    run.add_argument("--dump-config", dest="dump_config", help="write the effective config here")
    run.set_defaults(func=cmd_run)
    for name, func, text in (
        ("fig3", cmd_fig3, "BU at p = 0.2, 0.6, 1.0"),
        ("fig4", cmd_fig4, "BU vs BU-ER vs greedy"),
        ("diagnostics", cmd_diagnostics, "analysis checks"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ehaoi: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ehaoi: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
