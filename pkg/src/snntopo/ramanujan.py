"""Ramanujan-bound metrics of layer graphs and their correlation with layer density.

``delta_r`` compares the nontrivial adjacency spectrum with the Ramanujan
bound ``2 sqrt(d - 1)``, using the average degree for irregular graphs.  The
iterative variants average over a family of subgraphs, by default the
distinct i-cores for ``i >= 3``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from . import eigen
from .archspec import ArchitectureSpec
from .encoder import BipartiteGraph, UndirectedView, layer_graphs, undirected_view
from .maskgen import SparseMask

MIN_SIDE_DEGREE = 3


@dataclass
class Subgraph:
    """Undirected simple graph given by a weighted adjacency matrix."""

    A: sp.csr_matrix
    regular: bool = True

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    @property
    def n_edges(self) -> int:
        return self.A.nnz // 2

    @property
    def avg_degree(self) -> float:
        return 2.0 * self.n_edges / self.n_nodes if self.n_nodes else 0.0


def bipartite_view(g: BipartiteGraph) -> UndirectedView:
    w = np.ones(g.n_edges) if g.weight is None else np.abs(g.weight)
    return undirected_view(g.src, g.dst + g.n_left, w, g.n_left + g.n_right)


def as_subgraph(view: UndirectedView) -> Subgraph:
    deg = view.degree()
    return Subgraph(view.matrix(weighted=True), bool(deg.size == 0 or deg.min() == deg.max()))


def nontrivial_extent(A, seed: int = 0, tol: float = 1e-8, max_iter: Optional[int] = None
                      ) -> tuple[float, float, eigen.Extremes]:
    """``(mu_0, mu_hat)``: largest eigenvalue and largest magnitude among the others.

    Eigenvalues within the distinctness tolerance of ``+mu_0`` or ``-mu_0``
    are trivial.  ``mu_hat`` is 0 when no nontrivial eigenvalue exists.
    """
    ex = eigen.extremes(A, k_top=2, k_bottom=2, tol=tol, max_iter=max_iter, seed=seed)
    if ex.top.size == 0:
        return 0.0, 0.0, ex
    mu0 = float(ex.top[0])
    thresh = eigen.DISTINCT_RTOL * max(1.0, abs(mu0))
    cands = [abs(v) for v in np.concatenate([ex.top, ex.bottom]) if abs(abs(v) - mu0) > thresh]
    return mu0, (max(cands) if cands else 0.0), ex


def bound_difference(sub: Subgraph, seed: int = 0) -> float:
    """``2 sqrt(d_avg - 1) - mu_hat`` on the unit-weight adjacency; NaN when ``d_avg <= 1``."""
    d = sub.avg_degree
    if d <= 1:
        return math.nan
    unit = sub.A.copy()
    unit.data[:] = 1.0
    _, mu_hat, _ = nontrivial_extent(unit, seed)
    return 2.0 * math.sqrt(d - 1.0) - mu_hat


def weighted_gap(sub: Subgraph, seed: int = 0) -> float:
    mu0, mu_hat, _ = nontrivial_extent(abs(sub.A), seed)
    return mu0 - mu_hat


def core_family(view: UndirectedView, start: int = MIN_SIDE_DEGREE) -> list[Subgraph]:
    """Distinct nonempty i-core subgraphs for ``i = start .. degeneracy``."""
    core = K.core_numbers(view.indptr, view.indices)
    A = view.matrix(weighted=True)
    out, seen = [], set()
    top = int(core.max()) if core.size else 0
    for i in range(start, top + 1):
        nodes = np.flatnonzero(core >= i)
        key = (nodes.size, hash(nodes.tobytes()))
        if nodes.size == 0 or key in seen:
            continue
        seen.add(key)
        sub = A[nodes][:, nodes].tocsr()
        deg = np.diff(sub.indptr)
        out.append(Subgraph(sub, bool(deg.min() == deg.max())))
    return out


SubgraphStrategy = Callable[[UndirectedView], list[Subgraph]]


def _view(g) -> UndirectedView:
    return bipartite_view(g) if isinstance(g, BipartiteGraph) else g


def delta_r(g, seed: int = 0) -> float:
    """Bound difference of the whole graph (all nodes count toward ``d_avg``)."""
    return bound_difference(as_subgraph(_view(g)), seed)


def delta_r_imdb(g, seed: int = 0, strategy: SubgraphStrategy = core_family) -> float:
    family = strategy(_view(g))
    if not family:
        return math.nan
    return float(np.mean([bound_difference(s, seed) for s in family]))


def lambda_imsg(g, seed: int = 0, strategy: SubgraphStrategy = core_family) -> float:
    family = strategy(_view(g))
    if not family:
        return math.nan
    return float(np.mean([weighted_gap(s, seed) for s in family]))


@dataclass
class LayerRamanujanReport:
    layer_index: int
    density: float
    feasible: bool
    d_left: float
    d_right: float
    delta_r: Optional[float] = None
    delta_r_imdb: Optional[float] = None
    lambda_imsg: Optional[float] = None
    n_subgraphs: int = 0
    irregular_subgraphs: int = 0
    unit_weights: bool = False
    notes: list[str] = field(default_factory=list)


def layer_report(g: BipartiteGraph, density: float, seed: int = 0,
                 strategy: SubgraphStrategy = core_family) -> LayerRamanujanReport:
    view = bipartite_view(g)
    d_left = view.n_edges / g.n_left if g.n_left else 0.0
    d_right = view.n_edges / g.n_right if g.n_right else 0.0
    rep = LayerRamanujanReport(g.layer_index, density, min(d_left, d_right) >= MIN_SIDE_DEGREE,
                               d_left, d_right, unit_weights=g.weight is None)
    if not rep.feasible:
        rep.notes.append(f"min side degree {min(d_left, d_right):.3f} < {MIN_SIDE_DEGREE}")
        return rep
    family = strategy(view)
    rep.n_subgraphs = len(family)
    rep.irregular_subgraphs = sum(not s.regular for s in family)
    rep.delta_r = delta_r(view, seed)
    if family:
        rep.delta_r_imdb = float(np.mean([bound_difference(s, seed) for s in family]))
        rep.lambda_imsg = float(np.mean([weighted_gap(s, seed) for s in family]))
    else:
        rep.notes.append("no i-core with i >= 3; iterative metrics undefined")
    for name in ("delta_r", "delta_r_imdb"):
        if getattr(rep, name) is not None and math.isnan(getattr(rep, name)):
            setattr(rep, name, None)
            rep.notes.append(f"{name} undefined (average degree <= 1)")
    return rep


@dataclass
class RamanujanReport:
    architecture: str
    encoding: str
    layers: list[LayerRamanujanReport]

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "encoding": self.encoding,
                "layers": [asdict(layer) for layer in self.layers]}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def network_report(spec: ArchitectureSpec, mask: SparseMask, encoding: str = "rolled",
                   seed: int = 0, strategy: SubgraphStrategy = core_family) -> RamanujanReport:
    """Per-layer report over the chosen layer encoding; weights used when the mask has them."""
    weighted = any(layer.weights is not None for layer in mask.layers)
    graphs = layer_graphs(spec, mask, encoding, weighted=weighted)
    layers = [layer_report(g, mask.layer(g.layer_index).density, seed, strategy) for g in graphs]
    return RamanujanReport(spec.name, encoding, layers)


# --- correlation with density ----------------------------------------------------

METRICS = ("delta_r", "delta_r_imdb", "lambda_imsg")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson r; NaN when either series is constant or shorter than 2."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2 or x.size != y.size:
        return math.nan
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc) / den if den > 0 else math.nan


def sum_normalize(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = x.sum()
    return x / s if s != 0 else np.full_like(x, math.nan)


@dataclass
class CorrelationReport:
    correlations: dict[str, float]  # metric -> Pearson r with layer density
    series: dict[str, list[float]]  # sum-normalized per-layer series, density included
    layer_indices: list[int]
    notes: list[str] = field(default_factory=list)

    def write_series_csv(self, path: str | Path) -> Path:
        import csv
        path = Path(path)
        cols = ["layer_index", "density"] + list(METRICS)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i, idx in enumerate(self.layer_indices):
                w.writerow([idx] + [repr(float(self.series[c][i])) for c in cols[1:]])
        return path


def density_correlation(reports: Sequence[LayerRamanujanReport]) -> CorrelationReport:
    """Pearson r between each metric and layer density over layers where all are defined.

    r is computed on the raw per-layer values; it equals the r of the
    sum-normalized series whenever the metric's sum is positive.
    """
    usable = [r for r in reports if r.feasible and all(getattr(r, m) is not None for m in METRICS)]
    notes = []
    if len(usable) < 3:
        notes.append(f"only {len(usable)} layers with defined metrics; need at least 3")
    density = [r.density for r in usable]
    corr, series = {}, {"density": sum_normalize(density).tolist()}
    for m in METRICS:
        vals = [getattr(r, m) for r in usable]
        corr[m] = pearson(vals, density) if len(usable) >= 3 else math.nan
        if math.isnan(corr[m]) and len(usable) >= 3:
            notes.append(f"{m}: constant series, correlation undefined")
        if sum(vals) <= 0:
            notes.append(f"{m}: nonpositive sum, normalized series flips sign")
        series[m] = sum_normalize(vals).tolist()
    return CorrelationReport(corr, series, [r.layer_index for r in usable], notes)


def density_correlation_study(spec: ArchitectureSpec, masks: Sequence[SparseMask],
                              encoding: str = "rolled", seed: int = 0) -> list[CorrelationReport]:
    return [density_correlation(network_report(spec, m, encoding, seed).layers) for m in masks]
