"""Command-line entry point: ``darts-rct {run,mc,diagnose}``.

Configs are flat ``key = value`` files (``#`` comments allowed).  Flags
override file values.  Exit codes: 0 success, 1 internal error, 2 config
error, 3 data error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from darts_rct import records
from darts_rct.diagnostics import BURN_IN, diagnostics
from darts_rct.errors import InvalidInputError
from darts_rct.harness import Policy, SimConfig, run_grid, run_replication

log = logging.getLogger("darts_rct")

OUT_DIR_ENV = "DARTS_RCT_OUT_DIR"
EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "none") else int(s)


def _methods(s: str) -> tuple[str, ...]:
    out = tuple(m.strip() for m in s.split(",") if m.strip())
    for m in out:
        Policy(m)
    return out


# config key -> (parser, SimConfig field or None)
KEYS: dict[str, tuple[Callable[[str], Any], str | None]] = {
    "dgp": (str, "dgp"),
    "p": (int, "p"),
    "batch_size": (int, "n"),
    "batches": (int, "T"),
    "budget": (float, "B"),
    "costs": (str, "costs"),
    "method": (str, "method"),
    "reward_mode": (str, "reward_mode"),
    "candidates": (int, "n_candidates"),
    "seed": (int, "seed"),
    "cv_folds": (int, "cv_folds"),
    "max_arms": (_opt_int, "max_arms"),
    "adjust": (_bool, "adjust"),
    "pacing": (_bool, "pacing"),
    "random_redraw": (_bool, "random_redraw"),
    "spread_is_sd": (_bool, "spread_is_sd"),
    "methods": (_methods, None),
    "reps": (int, None),
    "workers": (int, None),
    "out_dir": (str, None),
    "burn_in": (int, None),
    "traces": (_bool, None),
}
REQUIRED = ("dgp", "p", "batch_size", "batches", "budget")


def parse_config_text(text: str) -> dict[str, Any]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    out = {}
    for key, raw in cp["config"].items():
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"unknown config key: {key}")
        try:
            out[key] = KEYS[key][0](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return out


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def merge(file_cfg: dict, args: argparse.Namespace) -> dict[str, Any]:
    merged = dict(file_cfg)
    for key in KEYS:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    return merged


def build_sim_config(values: dict[str, Any]) -> SimConfig:
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing config field: {', '.join(missing)}")
    kwargs = {field: values[k] for k, (_, field) in KEYS.items() if field and k in values}
    try:
        return SimConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(values: dict) -> Path:
    d = Path(values.get("out_dir") or os.environ.get(OUT_DIR_ENV) or "darts_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_run(args: argparse.Namespace) -> int:
    values = merge(load_config(args.config), args)
    cfg = build_sim_config(values)
    if cfg.method is Policy.ORACLE and args.budget is not None:
        msg = "budget ignored for oracle: it measures covariates 1-20 without a budget"
        warnings.warn(msg, UserWarning, stacklevel=1)
    out = _out_dir(values)
    started = _now()
    result = run_replication(cfg)
    stem = records.trace_name(result)[len("trace_"):-len(".csv")]
    manifest = f"manifest_{stem}.json"
    paths = records.write_replication(result, out, manifest)
    records.write_manifest(out / manifest, cfg.to_dict(), cfg.seed, started, _now(), paths)
    lo, hi = result.ci
    print(f"{cfg.method.value}: mu_hat={result.mu_hat:.6f} se={np.sqrt(result.sigma2_hat):.6f} "
          f"ci=({lo:.6f}, {hi:.6f}) sample_ate={result.sample_ate:.6f}")
    print(f"wrote {paths[0]}")
    return EXIT_OK


def cmd_mc(args: argparse.Namespace) -> int:
    values = merge(load_config(args.config), args)
    base = build_sim_config(values)
    reps = values.get("reps", 100)
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    workers = values.get("workers") or os.cpu_count() or 1
    methods = values.get("methods") or (
        (base.method.value,) if args.method is not None else tuple(m.value for m in Policy)
    )
    grid = [base.replace(method=m) for m in methods]
    out = _out_dir(values)
    started = _now()
    manifest = "manifest_mc.json"
    want_traces = bool(values.get("traces", False))
    res = run_grid(grid, reps, workers, keep_results=want_traces)
    summaries, per_cfg = res if want_traces else (res, {})
    paths = [out / "summary.csv"]
    records.write_summary(summaries, paths[0], manifest)
    if want_traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for ci in sorted(per_cfg):
            for r in per_cfg[ci]:
                paths += records.write_replication(r, tdir, "../" + manifest)
    cfg_echo = base.to_dict() | {"methods": list(methods), "reps": reps, "workers": workers}
    records.write_manifest(out / manifest, cfg_echo, base.seed, started, _now(), paths)
    print(records.format_summary(summaries))
    return EXIT_OK


def _group(run_name: str) -> str:
    # trace_<method>_<mode>_seed<k> -> <method>_<mode>
    return run_name[len("trace_"):].rsplit("_seed", 1)[0]


def cmd_diagnose(args: argparse.Namespace) -> int:
    trace_dir = Path(args.trace_dir)
    if not trace_dir.is_dir():
        raise DataError(f"not a directory: {trace_dir}")
    try:
        runs = records.load_trace_dir(trace_dir)
    except (ValueError, IndexError) as exc:
        raise DataError(f"unreadable trace: {exc}") from exc
    if not runs:
        raise DataError(f"no trace files in {trace_dir}")
    burn_in = args.burn_in if args.burn_in is not None else BURN_IN
    out = Path(args.out_dir) if args.out_dir else trace_dir / "diagnostics"
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    manifest = "manifest_diagnose.json"
    groups: dict[str, list] = {}
    for r in runs:
        groups.setdefault(_group(r.name), []).append(r)
    paths = []
    for g, rs in sorted(groups.items()):
        d = diagnostics(rs, burn_in)
        p1 = out / f"budget_share_{g}.csv"
        records.write_table(p1, manifest, ("x", "median", "lo95", "hi95"), d.budget_share.tolist())
        p2 = out / f"reward_se_{g}.csv"
        rows = [(int(a), int(b), c, e) for a, b, c, e in d.reward_se]
        records.write_table(p2, manifest, ("replication", "t", "reward_mean", "se_ratio"), rows)
        paths += [p1, p2]
        if d.posterior.size:
            p3 = out / f"posterior_{g}.csv"
            rows = [(int(a), int(b), c, int(e)) for a, b, c, e in d.posterior]
            records.write_table(p3, manifest, ("replication", "arm", "pi", "signal"), rows)
            paths.append(p3)
            print(f"{g}: {len(rs)} replications, posterior signal {d.signal_mean:.4f} "
                  f"noise {d.noise_mean:.4f} gap {d.separation:.4f}, "
                  f"reward-SE corr {d.reward_se_correlation:.3f}")
        else:
            print(f"{g}: {len(rs)} replications")
    records.write_manifest(out / manifest, {"trace_dir": str(trace_dir), "burn_in": burn_in},
                           0, started, _now(), paths)
    return EXIT_OK


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=[m.value for m in Policy])
    p.add_argument("--dgp", choices=["linear", "liang", "liang_hetero"])
    p.add_argument("--budget", type=float, help="total budget B")
    p.add_argument("--batches", type=int, help="number of batches T")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="units per batch n")
    p.add_argument("--p", type=int, help="number of candidate covariates")
    p.add_argument("--candidates", type=int, help="rerandomization draws K")
    p.add_argument("--reward-mode", dest="reward_mode", choices=["fractional", "binary"])
    p.add_argument("--max-arms", dest="max_arms", type=int)
    p.add_argument("--costs", choices=["equal", "uniform", "oracle_costly"])
    p.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUT_DIR_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darts-rct", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one replication, writes a trace")
    _add_sim_flags(run)
    run.set_defaults(func=cmd_run)

    mc = sub.add_parser("mc", help="Monte Carlo comparison, writes summary.csv")
    _add_sim_flags(mc)
    mc.add_argument("--reps", type=int)
    mc.add_argument("--workers", type=int, help="process pool size (default: all cores)")
    mc.add_argument("--traces", action="store_true", default=None,
                    help="also write per-replication traces")
    mc.set_defaults(func=cmd_mc)

    diag = sub.add_parser("diagnose", help="figure-ready diagnostics from a trace directory")
    diag.add_argument("trace_dir")
    diag.add_argument("--burn-in", dest="burn_in", type=int)
    diag.add_argument("--out-dir", dest="out_dir")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
