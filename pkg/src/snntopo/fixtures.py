"""Bundled data: architecture configs and published accuracy tables.

Accuracy CSVs hold one aggregate row per cell (``run`` 0) with the mean and
standard deviation over three training runs.  A cell whose sparse network
did not beat chance has an empty ``acc`` and the note ``below_chance``.
"""

from __future__ import annotations

import csv
import shutil
from importlib import resources
from pathlib import Path

from .archspec import BUNDLED

ACCURACY_FILES = {"CIFAR-10": "cifar10.csv", "CIFAR-100": "cifar100.csv",
                  "Tiny-ImageNet": "tiny_imagenet.csv"}
ACCURACY_COLUMNS = ("architecture", "dataset", "algorithm", "sparsity", "run", "acc", "acc_std",
                    "acc_dense", "acc_dense_std", "note")


def _data_dir() -> Path:
    return Path(str(resources.files("snntopo") / "data"))


def accuracy_paths() -> list[Path]:
    return [_data_dir() / "accuracy" / f for f in ACCURACY_FILES.values()]


def architecture_paths() -> list[Path]:
    return [_data_dir() / "arch" / f for f in BUNDLED.values()]


def read_accuracy(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_accuracy(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(ACCURACY_COLUMNS), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in ACCURACY_COLUMNS})
    return path


def load_accuracy(dataset: str | None = None) -> list[dict]:
    """Rows of one bundled table, or of all three when ``dataset`` is None."""
    if dataset is None:
        return [row for p in accuracy_paths() for row in read_accuracy(p)]
    if dataset not in ACCURACY_FILES:
        raise KeyError(f"no bundled accuracy table for {dataset!r}; choose from {sorted(ACCURACY_FILES)}")
    return read_accuracy(_data_dir() / "accuracy" / ACCURACY_FILES[dataset])


def lookup(rows: list[dict], architecture: str, dataset: str, algorithm: str, sparsity: float) -> dict:
    for row in rows:
        if (row["architecture"], row["dataset"], row["algorithm"]) == (architecture, dataset, algorithm) \
                and abs(float(row["sparsity"]) - sparsity) < 1e-9:
            return row
    raise KeyError(f"{architecture}/{dataset}/{algorithm}/{sparsity} not in table")


def install(dest: str | Path) -> list[Path]:
    """Copy the bundled CSVs and architecture configs under ``dest``."""
    dest = Path(dest)
    (dest / "accuracy").mkdir(parents=True, exist_ok=True)
    (dest / "arch").mkdir(parents=True, exist_ok=True)
    out = []
    for p in accuracy_paths():
        out.append(Path(shutil.copyfile(p, dest / "accuracy" / p.name)))
    for p in architecture_paths():
        out.append(Path(shutil.copyfile(p, dest / "arch" / p.name)))
    return out
