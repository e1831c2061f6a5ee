"""Plot-ready CSV output for metric vectors."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import FEATURES, TopometricVector

META_COLUMNS = ("n_nodes", "n_edges", "n_edges_simple", "motif_size", "motif_sampling_fraction",
                "lanczos_converged", "lanczos_residual")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metric_columns(raw: bool = True) -> list[str]:
    cols = list(FEATURES)
    if raw:
        cols += [f + "_raw" for f in FEATURES]
    return cols + list(META_COLUMNS)


def vector_row(vec: TopometricVector, raw: bool = True) -> list[str]:
    row = [vec.values[f] for f in FEATURES]
    if raw:
        row += [vec.raw[f] for f in FEATURES]
    row += [vec.meta[c] for c in META_COLUMNS]
    return [_fmt(v) for v in row]


def write_metrics_csv(path: str | Path, rows: Iterable[tuple[dict, TopometricVector]],
                      key_columns: Sequence[str], raw: bool = True) -> Path:
    """One row per vector, key columns first; floats written with ``repr`` for exact round trips."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(key_columns) + metric_columns(raw))
        for keys, vec in rows:
            w.writerow([_fmt(keys[k]) for k in key_columns] + vector_row(vec, raw))
    return path


def read_metrics_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
