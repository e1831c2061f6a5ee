"""The sixteen topological metrics over multipartite graph encodings."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import _kernels as K
from .. import eigen
from ..encoder import MultipartiteGraph

FEATURES = ("sink", "source", "disconnected", "r_out", "r_in", "n1", "n2", "motif4", "kcore",
            "strength", "C", "c_avg", "cut_edges", "cut_nodes", "spectral_gap", "spectral_radius")

ROLLED_KINDS = ("rolled", "rolled-channel", "bge-rolled")


@dataclass
class MetricConfig:
    motif_size: Optional[int] = None  # None: 3 on rolled encodings, 4 otherwise
    motif_edge_budget: int = 250_000
    motif_work_budget: float = 2e8
    seed: int = 0
    exclude_padding: bool = False
    lanczos_tol: float = 1e-8
    lanczos_max_iter: Optional[int] = None
    workers: int = 1

    def resolved_motif_size(self, g: MultipartiteGraph) -> int:
        if self.motif_size is not None:
            return self.motif_size
        return 3 if g.kind in ROLLED_KINDS else 4


@dataclass
class TopometricVector:
    values: dict[str, float]
    raw: dict[str, float]
    meta: dict = field(default_factory=dict)

    def __getattr__(self, name: str) -> float:
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def as_array(self) -> np.ndarray:
        return np.array([self.values[f] for f in FEATURES], dtype=np.float64)


def _div(a: float, b: float) -> float:
    return float(a) / b if b else 0.0


def drop_padding(g: MultipartiteGraph) -> MultipartiteGraph:
    """Induced subgraph without padding nodes, partitions preserved."""
    if not g.is_padding.any():
        return g
    keep = ~g.is_padding
    new_id = np.cumsum(keep) - 1
    e_keep = keep[g.src] & keep[g.dst]
    sizes = np.array([keep[a:b].sum() for a, b in zip(g.offsets[:-1], g.offsets[1:])])
    return MultipartiteGraph(sizes, new_id[g.src[e_keep]], new_id[g.dst[e_keep]],
                             None if g.weight is None else g.weight[e_keep],
                             np.zeros(int(keep.sum()), dtype=bool), [], g.source_exempt,
                             g.sink_exempt, g.kind)


# --- metric groups ---------------------------------------------------------------

def local_metrics(g: MultipartiteGraph) -> dict[str, float]:
    """Sink/source/disconnected counts and removable in/out fractions.

    Nodes in ``source_exempt`` partitions never count as sources and nodes in
    ``sink_exempt`` partitions never count as sinks.
    """
    outd, ind = g.out_degree, g.in_degree
    part = g.partition
    sinks = (outd == 0) & ~g.sink_exempt[part]
    sources = (ind == 0) & ~g.source_exempt[part]
    disconnected = (outd == 0) & (ind == 0)
    r_out_raw = int(outd[sources].sum())
    r_in_raw = int(ind[sinks].sum())
    n, m = g.n_nodes, g.n_edges
    return {"sink": _div(sinks.sum(), n), "source": _div(sources.sum(), n),
            "disconnected": _div(disconnected.sum(), n),
            "r_out": _div(r_out_raw, m), "r_in": _div(r_in_raw, m),
            "sink_raw": int(sinks.sum()), "source_raw": int(sources.sum()),
            "disconnected_raw": int(disconnected.sum()), "r_out_raw": r_out_raw, "r_in_raw": r_in_raw}


def khop(g: MultipartiteGraph, k: int) -> np.ndarray:
    indptr, indices, _ = g.out_csr
    return K.khop_counts(indptr, indices, k)


def motif_count(g: MultipartiteGraph, size: int, cfg: MetricConfig) -> tuple[float, float]:
    """(estimated count, sampling fraction) of connected induced ``size``-node subgraphs."""
    if size not in (3, 4):
        raise ValueError(f"motif size must be 3 or 4, got {size}")
    uv = g.simple_undirected
    deg = uv.degree().astype(np.float64)
    fraction = 1.0
    if uv.n_edges > cfg.motif_edge_budget:
        work = float(np.sum(deg ** (size - 1)))
        fraction = min(1.0, cfg.motif_work_budget / work) if work else 1.0
    probs = np.ones(3)
    probs[:size - 1] = fraction ** (1.0 / (size - 1))
    raw = K.esu_count(uv.indptr, uv.indices, size, probs, cfg.seed)
    return raw / float(np.prod(probs[:size - 1])), fraction


def neighbor_metrics(g: MultipartiteGraph, cfg: Optional[MetricConfig] = None) -> dict[str, float]:
    cfg = cfg or MetricConfig()
    n1, n2 = khop(g, 1), khop(g, 2)
    motifs, fraction = motif_count(g, cfg.resolved_motif_size(g), cfg)
    n = g.n_nodes
    return {"n1": _div(n1.sum(), n), "n2": _div(n2.sum(), n), "motif4": _div(motifs, n),
            "n1_raw": int(n1.sum()), "n2_raw": int(n2.sum()), "motif4_raw": motifs,
            "motif_sampling_fraction": fraction}


def strength_metrics(g: MultipartiteGraph) -> dict[str, float]:
    uv = g.simple_undirected
    core = K.core_numbers(uv.indptr, uv.indices)
    s = np.bincount(g.dst, weights=g.abs_weights(), minlength=g.n_nodes)
    n = g.n_nodes
    return {"kcore": _div(core.sum(), n), "strength": _div(s.sum(), n),
            "kcore_raw": int(core.sum()), "strength_raw": float(s.sum())}


def global_metrics(g: MultipartiteGraph) -> dict[str, float]:
    uv = g.simple_undirected
    _, n_comp, is_cut, n_bridges = K.lowlink(uv.indptr, uv.indices)
    n = g.n_nodes
    return {"C": _div(n_comp, n), "c_avg": _div(n, n_comp), "cut_edges": _div(n_bridges, uv.n_edges),
            "cut_nodes": _div(is_cut.sum(), n),
            "C_raw": int(n_comp), "c_avg_raw": _div(n, n_comp), "cut_edges_raw": int(n_bridges),
            "cut_nodes_raw": int(is_cut.sum())}


def expansion_metrics(g: MultipartiteGraph, cfg: Optional[MetricConfig] = None) -> dict[str, float]:
    """Adjacency spectral gap and Laplacian spectral radius of the |w| undirected view."""
    cfg = cfg or MetricConfig()
    A = g.simple_undirected.matrix(weighted=True)
    kw = {"tol": cfg.lanczos_tol, "max_iter": cfg.lanczos_max_iter, "seed": cfg.seed}
    gap, ex_a = eigen.adjacency_gap(A, **kw)
    radius, ex_l = eigen.largest(eigen.laplacian(A), **kw)
    return {"spectral_gap": max(gap, 0.0), "spectral_radius": max(radius, 0.0),
            "spectral_gap_raw": max(gap, 0.0), "spectral_radius_raw": max(radius, 0.0),
            "lanczos_converged": bool(ex_a.converged and ex_l.converged),
            "lanczos_residual": max(ex_a.residual, ex_l.residual),
            "lanczos_notes": ex_a.notes + ex_l.notes}


def compute_all(g: MultipartiteGraph, config: Optional[MetricConfig] = None) -> TopometricVector:
    cfg = config or MetricConfig()
    if cfg.exclude_padding:
        g = drop_padding(g)
    # build shared views once before fanning out
    g.simple_undirected, g.out_csr, g.in_degree, g.out_degree, g.partition
    jobs = [lambda: local_metrics(g), lambda: neighbor_metrics(g, cfg), lambda: strength_metrics(g),
            lambda: global_metrics(g), lambda: expansion_metrics(g, cfg)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(lambda f: f(), jobs))
    else:
        parts = [f() for f in jobs]
    merged: dict = {}
    for p in parts:
        merged.update(p)
    values = {f: float(merged[f]) for f in FEATURES}
    raw = {f: float(merged[f + "_raw"]) for f in FEATURES}
    meta = {"n_nodes": g.n_nodes, "n_edges": g.n_edges, "n_edges_simple": g.simple_undirected.n_edges,
            "n_padding": int(g.is_padding.sum()), "kind": g.kind,
            "motif_size": cfg.resolved_motif_size(g),
            "motif_sampling_fraction": merged["motif_sampling_fraction"],
            "lanczos_converged": merged["lanczos_converged"],
            "lanczos_residual": merged["lanczos_residual"], "notes": merged["lanczos_notes"]}
    for name, v in values.items():
        if not math.isfinite(v):
            raise ArithmeticError(f"metric {name} is not finite")
    return TopometricVector(values, raw, meta)
