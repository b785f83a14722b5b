"""Summary tables and SVG plots for a directory of experiment records."""
from __future__ import annotations

from pathlib import Path
import sys

import numpy as np

from .records import ExperimentRecord, load_record, read_csv, record_stem


def _key_metrics(record: ExperimentRecord, limit: int = 3) -> str:
    parts = []
    for k, v in record.metrics.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            continue
        parts.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
        if len(parts) == limit:
            break
    return " ".join(parts)


def load_records(directory, warn=None) -> tuple[list[tuple[Path, ExperimentRecord]], int]:
    """Parse every ``*.json`` record; corrupt ones are reported on ``warn`` and skipped."""
    warn = warn or sys.stderr
    good, bad = [], 0
    for path in sorted(Path(directory).glob("*.json")):
        try:
            good.append((path, load_record(path)))
        except (ValueError, KeyError, TypeError) as exc:
            bad += 1
            print(f"warning: skipping corrupt record {path.name}: {exc}", file=warn)
    return good, bad


def summary_table(records) -> str:
    rows = [("experiment", "seed", "verdict", "status", "key metrics")]
    for _, r in records:
        rows.append((r.experiment, str(r.seed), r.verdict.upper(), r.status, _key_metrics(r)))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row[:4], widths)) + "  " + row[4]
                     for row in rows)


def _plot_spectrum(ax, cols, title):
    ax.scatter(cols["lam_min_ratio"], cols["lam_max_ratio"], s=8, alpha=0.6)
    ax.axvline(1.0, color="k", ls="--", lw=0.8)
    ax.axhline(3.0, color="k", ls="--", lw=0.8)
    ax.set_xlabel("lambda_min N / m")
    ax.set_ylabel("lambda_max N / m")
    ax.set_title(title)


def _plot_contraction(ax, cols, title):
    if "replica" in cols:
        groups = [cols["replica"] == r for r in np.unique(cols["replica"])]
    else:
        groups = [np.ones(cols["step"].size, dtype=bool)]
    for sel in groups:
        steps, dist = cols["step"][sel], cols["distance"][sel]
        keep = dist > 0
        ax.plot(np.maximum(steps[keep], 0.5), dist[keep], lw=0.7, alpha=0.6)
    ax.set_xscale("symlog", linthresh=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("D_HS")
    ax.set_title(title)


_PLOTS = {"spectrum-event": _plot_spectrum, "contraction": _plot_contraction,
          "two-stage": _plot_contraction}


def write_svgs(directory, records) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for path, rec in records:
        plot = _PLOTS.get(rec.experiment)
        csv = path.with_suffix(".csv")
        if plot is None or not csv.exists():
            continue
        fig, ax = plt.subplots(figsize=(5, 4))
        plot(ax, read_csv(csv), f"{rec.experiment} (seed {rec.seed})")
        fig.tight_layout()
        out = Path(directory) / f"{record_stem(rec.experiment, rec.seed)}.svg"
        fig.savefig(out, format="svg")
        plt.close(fig)
        written.append(out)
    return written


def report(directory, svg: bool = False, out=None, warn=None) -> int:
    """Print a summary of the records in ``directory``; returns an exit status."""
    out, warn = out or sys.stdout, warn or sys.stderr
    directory = Path(directory)
    if not directory.is_dir():
        print(f"error: {directory} is not a directory", file=warn)
        return 2
    records, bad = load_records(directory, warn)
    if not records:
        if bad:
            print("error: all records are corrupt", file=warn)
            return 1
        print("no records", file=out)
        return 0
    print(summary_table(records), file=out)
    if svg:
        for p in write_svgs(directory, records):
            print(f"wrote {p}", file=out)
    return 0
