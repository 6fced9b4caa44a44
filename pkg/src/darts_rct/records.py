"""On-disk formats: per-batch traces, posteriors, Monte Carlo summaries, manifests.

All tables are headered comma-separated text.  The first line of every
table is a ``# manifest=<file>`` comment naming the manifest that produced
it; floats are written with 17 significant digits so that files round-trip
exactly and can be compared byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from darts_rct import __version__
from darts_rct.harness import BatchRecord, McSummary, ReplicationResult

TRACE_COLUMNS = (
    "t", "n_selected", "selected", "spend", "tau_hat", "v_hat", "mu_hat",
    "sigma2_hat", "v_dim", "reward_mean", "oracle_share", "flags",
)
POSTERIOR_COLUMNS = ("arm", "pi", "signal")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_table(path: Path, manifest: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest={manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def trace_name(result: ReplicationResult) -> str:
    cfg = result.config
    label = cfg.method.value
    if cfg.method.value == "darts":
        label += f"_{cfg.reward_mode.value}"
    return f"trace_{label}_seed{cfg.seed}.csv"


def posterior_name(result: ReplicationResult) -> str:
    return trace_name(result).replace("trace_", "posterior_", 1)


def write_trace(result: ReplicationResult, path: Path, manifest: str) -> None:
    rows = (
        (r.t, r.n_selected, ";".join(map(str, r.selected)), r.spend, r.tau_hat, r.v_hat,
         r.mu_hat, r.sigma2_hat, r.v_dim, r.reward_mean, r.oracle_share, ";".join(r.flags))
        for r in result.records
    )
    write_table(path, manifest, TRACE_COLUMNS, rows)


def write_posterior(result: ReplicationResult, path: Path, manifest: str, n_signal: int = 20) -> None:
    if result.posterior is None:
        return
    rows = ((j, pi, int(j < n_signal)) for j, pi in enumerate(result.posterior))
    write_table(path, manifest, POSTERIOR_COLUMNS, rows)


def write_replication(result: ReplicationResult, out_dir: Path, manifest: str) -> list[Path]:
    """Trace, plus the final posterior for adaptive runs."""
    paths = [out_dir / trace_name(result)]
    write_trace(result, paths[0], manifest)
    if result.posterior is not None:
        paths.append(out_dir / posterior_name(result))
        write_posterior(result, paths[1], manifest)
    return paths


def read_trace(path: Path) -> list[BatchRecord]:
    header, rows = read_table(path)
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected trace header {header}")
    out = []
    for r in rows:
        sel = tuple(int(s) for s in r[2].split(";") if s)
        flags = tuple(f for f in r[11].split(";") if f)
        out.append(BatchRecord(
            int(r[0]), sel, float(r[3]), float(r[4]), float(r[5]), float(r[6]),
            float(r[7]), float(r[8]), float(r[9]), float(r[10]), flags,
        ))
    return out


def read_posterior(path: Path) -> NDArray[np.float64]:
    header, rows = read_table(path)
    if tuple(header) != POSTERIOR_COLUMNS:
        raise ValueError(f"{path}: unexpected posterior header {header}")
    return np.array([float(r[1]) for r in rows])


@dataclass
class TraceRun:
    """A replication reloaded from disk (records and, if present, posterior)."""

    name: str
    records: list[BatchRecord]
    posterior: NDArray[np.float64] | None


def load_trace_dir(trace_dir: Path) -> list[TraceRun]:
    runs = []
    for path in sorted(Path(trace_dir).glob("trace_*.csv")):
        post_path = path.with_name(path.name.replace("trace_", "posterior_", 1))
        post = read_posterior(post_path) if post_path.exists() else None
        runs.append(TraceRun(path.stem, read_trace(path), post))
    return runs


def write_summary(summaries: Sequence[McSummary], path: Path, manifest: str) -> None:
    write_table(path, manifest, McSummary.COLUMNS, (s.row() for s in summaries))


def read_summary(path: Path) -> list[dict]:
    header, rows = read_table(path)
    return [dict(zip(header, r)) for r in rows]


def format_summary(summaries: Sequence[McSummary]) -> str:
    """Fixed-width table in the style of the method-comparison tables."""
    head = f"{'setting':<34} {'method':<16} {'bias':>10} {'emp_sd':>9} {'mse':>10} " \
           f"{'med_se':>9} {'cover':>6} {'RE':>7}"
    lines = [head, "-" * len(head)]
    for s in summaries:
        dgp_, p, n, T, B = s.setting[:5]
        setting = f"{dgp_} B={B:g} p={p} n={n} T={T}"
        lines.append(
            f"{setting:<34} {s.method:<16} {s.bias:>10.2e} {s.emp_sd:>9.4f} {s.mse:>10.2e} "
            f"{s.median_se:>9.4f} {s.coverage:>6.3f} {s.re_vs_dim:>7.3f}"
        )
    return "\n".join(lines)


def write_manifest(path: Path, config: dict, base_seed: int, started: str, finished: str,
                   outputs: Sequence[Path]) -> None:
    doc = {
        "artifact": "darts_rct",
        "version": __version__,
        "config": config,
        "base_seed": base_seed,
        "started": started,
        "finished": finished,
        "outputs": [Path(p).name for p in outputs],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
