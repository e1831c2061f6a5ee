"""Ranking pruning algorithms by a topometric mixture and scoring rankings with RBO."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class RankingError(ValueError):
    pass


def ranking_coefficient(x: Sequence[float], w_arch: Sequence[float], w_sparsity: Sequence[float]) -> float:
    """``sum_i x_i (wM_i + ws_i) / 2``."""
    x, wm, ws = (np.asarray(v, dtype=np.float64) for v in (x, w_arch, w_sparsity))
    if not (x.shape == wm.shape == ws.shape) or x.ndim != 1:
        raise RankingError(f"length mismatch: {x.shape}, {wm.shape}, {ws.shape}")
    return float(x @ ((wm + ws) / 2.0))


@dataclass
class RankedList:
    names: list[str]
    scores: list[float]
    ties: list[tuple[str, ...]] = field(default_factory=list)

    @property
    def tied(self) -> bool:
        return bool(self.ties)


def order_by(scores: Mapping[str, float], descending: bool = False,
             secondary: Mapping[str, float] | None = None) -> RankedList:
    """Sort names by score (ties: ``secondary`` ascending, then name)."""
    if len(scores) < 2:
        raise RankingError("need at least two algorithms to rank")
    sign = -1.0 if descending else 1.0
    secondary = secondary or {}
    names = sorted(scores, key=lambda n: (sign * scores[n], secondary.get(n, 0.0), n))
    groups = defaultdict(list)
    for n in names:
        groups[scores[n]].append(n)
    ties = [tuple(g) for g in groups.values() if len(g) > 1]
    return RankedList(names, [float(scores[n]) for n in names], ties)


def rank_algorithms(x: Mapping[str, Sequence[float]], w_arch: Sequence[float],
                    w_sparsity: Sequence[float]) -> RankedList:
    """Ascending ranking coefficient; a lower coefficient ranks first."""
    return order_by({p: ranking_coefficient(v, w_arch, w_sparsity) for p, v in x.items()})


def minmax_columns(rows: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1] across rows; constant columns become 0."""
    rows = np.asarray(rows, dtype=np.float64)
    lo, hi = rows.min(axis=0), rows.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (rows - lo) / span


# --- rank-biased overlap -----------------------------------------------------------

def rbo(a: Sequence[str], b: Sequence[str], alpha: float) -> float:
    """``(1 - alpha) sum_d alpha^(d-1) |a[:d] & b[:d]| / d`` for d up to the shorter length."""
    if not 0.0 < alpha < 1.0:
        raise RankingError(f"alpha must lie in (0, 1), got {alpha}")
    depth = min(len(a), len(b))
    seen_a, seen_b = set(), set()
    overlap = 0
    total = 0.0
    for d in range(1, depth + 1):
        x, y = a[d - 1], b[d - 1]
        if x == y:
            overlap += 1
        else:
            overlap += (x in seen_b) + (y in seen_a)
        seen_a.add(x)
        seen_b.add(y)
        total += alpha ** (d - 1) * overlap / d
    return (1.0 - alpha) * total


def rbo_residual(depth: int, alpha: float) -> float:
    """Weight beyond the truncation depth, ``alpha^depth``."""
    return alpha ** depth


RBO_ALPHAS = (0.25, 0.5, 0.75)


def rbo_mean(a: Sequence[str], b: Sequence[str], alphas: Sequence[float] = RBO_ALPHAS) -> float:
    return float(np.mean([rbo(a, b, al) for al in alphas]))


# --- evaluation against accuracy ground truth --------------------------------------

def _cell_key(arch: str, sparsity) -> tuple[str, float]:
    """Architecture names compare case- and punctuation-insensitively ("Conv-6" == "conv6")."""
    return "".join(ch for ch in arch.lower() if ch.isalnum()), round(float(sparsity), 6)


def ground_truth(accuracy_rows: Sequence[dict]) -> dict[tuple[str, str, float], RankedList]:
    """Per (architecture, dataset, sparsity): algorithms by mean accuracy, best first.

    Ties go to the lower standard deviation, then to the name.  Rows without
    an accuracy value and dense rows are ignored.
    """
    accs: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    stds: dict[tuple, dict[str, float]] = defaultdict(dict)
    for row in accuracy_rows:
        if row["algorithm"].lower() == "dense" or row["acc"] in ("", None):
            continue
        key = (row["architecture"], row["dataset"], round(float(row["sparsity"]), 6))
        accs[key][row["algorithm"]].append(float(row["acc"]))
        if row.get("acc_std") not in (None, ""):
            stds[key][row["algorithm"]] = float(row["acc_std"])
    out = {}
    for key, per_alg in accs.items():
        if len(per_alg) < 2:
            continue
        mean = {alg: float(np.mean(v)) for alg, v in per_alg.items()}
        std = {alg: stds[key].get(alg, float(np.std(v))) for alg, v in per_alg.items()}
        out[key] = order_by(mean, descending=True, secondary=std)
    return out


# strategies whose larger values are better; everything else ranks ascending
DESCENDING_STRATEGIES = ("delta_r", "delta_r_imdb", "lambda_imsg", "density")


@dataclass
class StrategyOutput:
    name: str
    rankings: dict[tuple[str, float], RankedList]  # (architecture, sparsity) -> ranking


def read_strategy_csv(path: str | Path, name: str | None = None) -> StrategyOutput:
    """CSV with columns architecture, sparsity, algorithm, score (dataset optional, ignored).

    Rows sharing architecture and sparsity form one ranking.  Scores sort
    descending for the Ramanujan and density baselines, ascending otherwise.
    """
    path = Path(path)
    name = name or path.stem
    scores: dict[tuple, dict[str, float]] = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            scores[_cell_key(row["architecture"], row["sparsity"])][row["algorithm"]] = float(row["score"])
    desc = name in DESCENDING_STRATEGIES
    return StrategyOutput(name, {k: order_by(v, descending=desc) for k, v in scores.items() if len(v) >= 2})


def write_strategy_csv(path: str | Path, rows: Sequence[tuple[str, float, str, float]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["architecture", "sparsity", "algorithm", "score"])
        for arch, s, alg, score in rows:
            w.writerow([arch, repr(float(s)), alg, repr(float(score))])
    return path


def load_strategies(directory: str | Path) -> list[StrategyOutput]:
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise RankingError(f"no strategy CSVs in {directory}")
    return [read_strategy_csv(f) for f in files]


@dataclass
class EvaluationRow:
    architecture: str
    sparsity: float
    strategy: str
    rbo_mean: float
    n_datasets: int


def evaluate_strategies(accuracy_rows: Sequence[dict], strategies: Sequence[StrategyOutput]
                        ) -> list[EvaluationRow]:
    """Mean RBO per strategy and (architecture, sparsity), averaged over datasets.

    Algorithms a strategy ranks but the ground truth lacks are dropped from its
    list; a ground-truth algorithm missing from the strategy is an error.
    """
    truth = ground_truth(accuracy_rows)
    cells: dict[tuple, list[tuple[str, RankedList]]] = defaultdict(list)
    display = {}
    for (arch, dataset, s), ranked in sorted(truth.items()):
        cells[_cell_key(arch, s)].append((dataset, ranked))
        display.setdefault(_cell_key(arch, s), arch)
    rows = []
    for strat in strategies:
        for key in sorted(cells):
            pred = strat.rankings.get(key)
            if pred is None:
                continue
            vals = []
            for dataset, gt in cells[key]:
                missing = set(gt.names) - set(pred.names)
                if missing:
                    raise RankingError(f"strategy {strat.name} misses {sorted(missing)} for {key}")
                common = [n for n in pred.names if n in set(gt.names)]
                if len(common) < 2:
                    raise RankingError(f"fewer than two algorithms for {key}")
                vals.append(rbo_mean(common, gt.names))
            rows.append(EvaluationRow(display[key], key[1], strat.name, float(np.mean(vals)), len(vals)))
    return rows


def write_evaluation_csv(path: str | Path, rows: Sequence[EvaluationRow]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["architecture", "sparsity", "strategy", "rbo_mean", "n_datasets"])
        for r in rows:
            w.writerow([r.architecture, repr(r.sparsity), r.strategy, repr(r.rbo_mean), r.n_datasets])
    return path
