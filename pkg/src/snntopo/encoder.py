"""Graph encodings of sparse networks.

Unrolled, input-aware bipartite encodings (one node per feature-map element)
for linear and convolutional layers, the pooling bridge and residual groups
that chain them, and the concatenated multipartite encoding.  The rolled and
rolled-channel layer encodings are kept as comparison baselines.

Node numbering inside a feature map is channel-major: ``c * H * W + y * W + x``.
Convolution left sets include padding nodes, so a conv layer's left grid is
``(C, H + 2P, W + 2P)``.  In the multipartite graph a junction partition holds
the previous layer's outputs first and the next layer's padding nodes after
them; the padding nodes are flagged so metrics can leave them out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .archspec import (ArchitectureSpec, LayerKind, LayerSpec, ShortcutKind, conv_output_hw,
                       pool_output_hw)
from .maskgen import MaskLayer, SparseMask


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Feature-map layout of a node set; ``pad`` cells of padding on each border."""

    channels: int
    height: int
    width: int
    pad: int = 0

    @property
    def padded_hw(self) -> tuple[int, int]:
        return self.height + 2 * self.pad, self.width + 2 * self.pad

    @property
    def size(self) -> int:
        hp, wp = self.padded_hw
        return self.channels * hp * wp

    @property
    def n_real(self) -> int:
        return self.channels * self.height * self.width

    def padding_flags(self) -> np.ndarray:
        hp, wp = self.padded_hw
        flags = np.ones((self.channels, hp, wp), dtype=bool)
        flags[:, self.pad:self.pad + self.height, self.pad:self.pad + self.width] = False
        return flags.ravel()

    def unpadded(self) -> "Grid":
        return Grid(self.channels, self.height, self.width, 0)


def grid_of(shape: tuple[int, int, int], pad: int = 0) -> Grid:
    h, w, c = shape
    return Grid(c, h, w, pad)


@dataclass
class BipartiteGraph:
    """Directed edges ``L -> R`` in local node indices; parallel edges are kept."""

    n_left: int
    n_right: int
    src: np.ndarray
    dst: np.ndarray
    weight: Optional[np.ndarray] = None
    layer_index: int = -1
    left_grid: Optional[Grid] = None
    right_grid: Optional[Grid] = None

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def left_padding(self) -> np.ndarray:
        if self.left_grid is None:
            return np.zeros(self.n_left, dtype=bool)
        return self.left_grid.padding_flags()

    def check(self) -> None:
        if self.src.size != self.dst.size:
            raise EncodingError("src/dst length mismatch")
        if self.src.size and (self.src.min() < 0 or self.src.max() >= self.n_left
                              or self.dst.min() < 0 or self.dst.max() >= self.n_right):
            raise EncodingError(f"layer {self.layer_index}: edge endpoint out of range")


def _empty(dtype=np.int64) -> np.ndarray:
    return np.zeros(0, dtype=dtype)


# --- per-layer encodings ---------------------------------------------------------

def encode_linear(mask: MaskLayer, weighted: bool = False) -> BipartiteGraph:
    """One edge ``(a, b)`` per nonzero ``M[a, b]`` of an ``(n_in, n_out)`` mask."""
    if len(mask.shape) != 2:
        raise EncodingError(f"linear mask must be 2-D, got shape {mask.shape}")
    n_in, n_out = mask.shape
    src, dst = np.divmod(mask.indices, n_out)
    weight = _edge_weights(mask, np.arange(mask.nnz)) if weighted else None
    return BipartiteGraph(n_in, n_out, src.astype(np.int64), dst.astype(np.int64), weight,
                          mask.layer_index, Grid(n_in, 1, 1), Grid(n_out, 1, 1))


def _edge_weights(mask: MaskLayer, cell_ids: np.ndarray) -> np.ndarray:
    if mask.weights is None:
        return np.ones(cell_ids.size)
    return mask.weights[cell_ids]


def encode_conv(mask: MaskLayer, layer: LayerSpec, input_shape: tuple[int, int, int],
                weighted: bool = False, include_padding: bool = True) -> BipartiteGraph:
    """Unrolled encoding of a convolution over an ``(h, w, c_in)`` input.

    For every output position and every unmasked kernel cell ``(o, i, ky, kx)``
    the input element at ``(i, y * S + ky, x * S + kx)`` (padded coordinates)
    is linked to output element ``(o, y, x)``.  With ``include_padding=False``
    padding nodes are not materialised and their edges are dropped.
    """
    if layer.kind is not LayerKind.CONV:
        raise EncodingError(f"encode_conv needs a conv layer, got {layer.kind.value}")
    if tuple(mask.shape) != layer.weight_shape:
        raise EncodingError(f"mask shape {mask.shape} does not match layer {layer.weight_shape}")
    h, w, c = input_shape
    if c != layer.c_in:
        raise EncodingError(f"input has {c} channels, layer expects {layer.c_in}")
    oh, ow = conv_output_hw(h, w, layer)
    if oh <= 0 or ow <= 0:
        raise EncodingError(f"stride/padding give non-positive output {(oh, ow)}")
    P, S = layer.padding, layer.stride
    left = Grid(c, h, w, P if include_padding else 0)
    right = Grid(layer.c_out, oh, ow)
    hp, wp = left.padded_hw

    o, i, ky, kx = np.unravel_index(mask.indices, layer.weight_shape)
    Y, X = np.divmod(np.arange(oh * ow, dtype=np.int64), ow)
    out_pos = Y * ow + X
    if include_padding:
        src = (i * hp * wp + ky * wp + kx)[:, None] + (Y * S * wp + X * S)[None, :]
        dst = (o * oh * ow)[:, None] + out_pos[None, :]
        cells = np.broadcast_to(np.arange(mask.nnz)[:, None], src.shape)
        src, dst, cells = src.ravel(), dst.ravel(), cells.ravel()
    else:
        yy = (Y * S)[None, :] + (ky - P)[:, None]
        xx = (X * S)[None, :] + (kx - P)[:, None]
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        src = (i[:, None] * h * w + yy * w + xx)[ok]
        dst = ((o * oh * ow)[:, None] + out_pos[None, :])[ok]
        cells = np.broadcast_to(np.arange(mask.nnz)[:, None], ok.shape)[ok]
    weight = _edge_weights(mask, cells) if weighted else None
    return BipartiteGraph(left.size, right.size, src.astype(np.int64), dst.astype(np.int64),
                          weight, mask.layer_index, left, right)


def encode_rolled(mask: MaskLayer, weighted: bool = False) -> BipartiteGraph:
    """Kernel-entry nodes ``(i, ky, kx)`` on the left, output channels on the right."""
    if len(mask.shape) == 2:
        return encode_linear(mask, weighted)
    c_out, c_in, kh, kw = mask.shape
    o, rest = np.divmod(mask.indices, c_in * kh * kw)
    weight = _edge_weights(mask, np.arange(mask.nnz)) if weighted else None
    return BipartiteGraph(c_in * kh * kw, c_out, rest.astype(np.int64), o.astype(np.int64), weight,
                          mask.layer_index)


def encode_rolled_channel(mask: MaskLayer, weighted: bool = False) -> BipartiteGraph:
    """Channel nodes; edge ``(i, o)`` iff kernel channel ``(o, i)`` is not fully pruned.

    Weighted edges carry the L1 norm of the surviving kernel channel.
    """
    if len(mask.shape) == 2:
        return encode_linear(mask, weighted)
    c_out, c_in, kh, kw = mask.shape
    channel = mask.indices // (kh * kw)  # o * c_in + i
    pairs, inverse = np.unique(channel, return_inverse=True)
    o, i = np.divmod(pairs, c_in)
    weight = None
    if weighted:
        weight = np.zeros(pairs.size)
        np.add.at(weight, inverse, np.abs(_edge_weights(mask, np.arange(mask.nnz))))
    return BipartiteGraph(c_in, c_out, i.astype(np.int64), o.astype(np.int64), weight, mask.layer_index)


# --- chaining --------------------------------------------------------------------

def _left_map(real: Grid, left: Grid, window: tuple[int, int], stride: int
              ) -> tuple[np.ndarray, np.ndarray, int]:
    """Relabel a padded left grid onto a junction partition.

    Returns ``(offsets, targets, n_pad)`` in CSR form: local left node ``u``
    maps to ``targets[offsets[u]:offsets[u+1]]``.  Interior nodes map to the
    pooling window over ``real``; padding nodes map to themselves, numbered
    after the ``real.n_real`` real nodes.
    """
    kh, kw = window
    if real.channels != left.channels:
        raise EncodingError(f"channel mismatch at junction: {real.channels} vs {left.channels}")
    ph, pw = pool_output_hw(real.height, real.width,
                            LayerSpec(LayerKind.POOL, h_ker=kh, w_ker=kw, stride=stride))
    if (ph, pw) != (left.height, left.width):
        raise EncodingError(
            f"window {kh}x{kw}/{stride} maps {real.height}x{real.width} to {ph}x{pw}, "
            f"next layer expects {left.height}x{left.width}")
    hp, wp = left.padded_hw
    c, yp, xp = np.unravel_index(np.arange(left.size, dtype=np.int64), (left.channels, hp, wp))
    py, px = yp - left.pad, xp - left.pad
    interior = (py >= 0) & (py < left.height) & (px >= 0) & (px < left.width)
    n_pad = int((~interior).sum())

    counts = np.where(interior, kh * kw, 1)
    offsets = np.zeros(left.size + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    targets = np.empty(offsets[-1], dtype=np.int64)

    dy, dx = np.divmod(np.arange(kh * kw, dtype=np.int64), kw)
    ci, pyi, pxi = c[interior], py[interior], px[interior]
    win = ((ci * real.height + pyi * stride) * real.width + pxi * stride)[:, None] \
        + (dy * real.width + dx)[None, :]
    starts = offsets[:-1][interior]
    targets[(starts[:, None] + np.arange(kh * kw)[None, :]).ravel()] = win.ravel()
    targets[offsets[:-1][~interior]] = real.n_real + np.arange(n_pad, dtype=np.int64)
    return offsets, targets, n_pad


def _remap_left(g: BipartiteGraph, offsets: np.ndarray, targets: np.ndarray, n_left: int
                ) -> BipartiteGraph:
    reps = offsets[g.src + 1] - offsets[g.src]
    pos = np.repeat(offsets[g.src], reps) + _ragged_arange(reps)
    src = targets[pos]
    dst = np.repeat(g.dst, reps)
    weight = None if g.weight is None else np.repeat(g.weight, reps)
    return BipartiteGraph(n_left, g.n_right, src, dst, weight, g.layer_index, None, g.right_grid)


def _ragged_arange(lengths: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(n)`` for each ``n`` in ``lengths``."""
    if lengths.size == 0:
        return _empty()
    total = int(lengths.sum())
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.arange(total, dtype=np.int64) - starts


def pooling_bridge(g_i: BipartiteGraph, pool: LayerSpec, g_next: BipartiteGraph,
                   next_grid: Optional[Grid] = None) -> BipartiteGraph:
    """Rewire ``g_next`` so its left side is ``R_i`` (plus ``g_next``'s padding nodes).

    Each edge ``(u, v)`` of ``g_next`` is replicated once per node of ``R_i``
    inside the pooling window that produces ``u``.  ``next_grid`` gives the
    feature-map view of ``g_next``'s left side when it has none (e.g. a linear
    layer after flatten).
    """
    if g_i.right_grid is None:
        raise EncodingError("upstream graph has no output grid")
    left = next_grid or g_next.left_grid
    if left is None:
        raise EncodingError("downstream graph has no input grid")
    if left.size != g_next.n_left:
        raise EncodingError(f"grid of size {left.size} does not describe {g_next.n_left} left nodes")
    offsets, targets, n_pad = _left_map(g_i.right_grid, left, (pool.h_ker, pool.w_ker), pool.stride)
    return _remap_left(g_next, offsets, targets, g_i.right_grid.n_real + n_pad)


def residual_edges(g_i: BipartiteGraph, g_next: BipartiteGraph, shortcut: LayerSpec,
                   mask: Optional[MaskLayer] = None, weighted: bool = False) -> BipartiteGraph:
    """Shortcut from the input of ``g_i`` to the output of ``g_next``.

    Left indices follow ``g_i``'s left layout (padding included) and right
    indices ``g_next``'s right layout, so ``|L| = |L_i|`` and ``|R| = |R_{i+1}|``.
    """
    lg, rg = g_i.left_grid, g_next.right_grid
    if lg is None or rg is None:
        raise EncodingError("residual endpoints need feature-map grids")
    real = lg.unpadded()
    hp, wp = lg.padded_hw

    def to_left(idx: np.ndarray) -> np.ndarray:
        c, y, x = np.unravel_index(idx, (real.channels, real.height, real.width))
        return c * hp * wp + (y + lg.pad) * wp + (x + lg.pad)

    if shortcut.shortcut is ShortcutKind.IDENTITY:
        if (real.channels, real.height, real.width) != (rg.channels, rg.height, rg.width):
            raise EncodingError(f"identity shortcut shape mismatch {real} vs {rg}")
        idx = np.arange(real.n_real, dtype=np.int64)
        weight = np.ones(idx.size) if weighted else None
        return BipartiteGraph(lg.size, rg.size, to_left(idx), idx.copy(), weight, g_i.layer_index, lg, rg)

    if mask is None:
        raise EncodingError("projection shortcut needs its mask")
    proj = encode_conv(mask, shortcut.projection_conv(), (real.height, real.width, real.channels),
                       weighted, include_padding=False)
    if proj.n_right != rg.size:
        raise EncodingError(f"projection output {proj.n_right} does not match {rg.size}")
    return BipartiteGraph(lg.size, rg.size, to_left(proj.src), proj.dst, proj.weight,
                          mask.layer_index, lg, rg)


# --- multipartite graph ----------------------------------------------------------

@dataclass
class EdgeGroup:
    kind: str  # "layer" | "residual"
    layer_index: int
    src_partition: int
    dst_partition: int
    start: int
    stop: int
    source_layer: int = -1
    target_layer: int = -1


@dataclass
class MultipartiteGraph:
    """Node-partitioned directed graph with global node ids ``offset[p] + local``.

    ``source_exempt[p]`` / ``sink_exempt[p]`` mark partitions whose nodes are
    not counted as sources / sinks (the input and output layers of a chain).
    """

    partition_sizes: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weight: Optional[np.ndarray] = None
    is_padding: Optional[np.ndarray] = None
    groups: list[EdgeGroup] = field(default_factory=list)
    source_exempt: Optional[np.ndarray] = None
    sink_exempt: Optional[np.ndarray] = None
    kind: str = "mge"
    junctions: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.partition_sizes = np.asarray(self.partition_sizes, dtype=np.int64)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        n_parts = self.partition_sizes.size
        if self.is_padding is None:
            self.is_padding = np.zeros(self.n_nodes, dtype=bool)
        if self.source_exempt is None:
            self.source_exempt = np.arange(n_parts) == 0
        if self.sink_exempt is None:
            self.sink_exempt = np.arange(n_parts) == n_parts - 1

    @classmethod
    def from_edges(cls, partition_sizes, src, dst, weight=None, **kwargs) -> "MultipartiteGraph":
        g = cls(np.asarray(partition_sizes), np.asarray(src), np.asarray(dst),
                None if weight is None else np.asarray(weight, dtype=np.float64), **kwargs)
        g.check()
        return g

    @classmethod
    def from_bipartite(cls, g: BipartiteGraph) -> "MultipartiteGraph":
        pad = np.concatenate([g.left_padding(), np.zeros(g.n_right, dtype=bool)])
        return cls([g.n_left, g.n_right], g.src, g.dst + g.n_left, g.weight, pad,
                   [EdgeGroup("layer", g.layer_index, 0, 1, 0, g.n_edges)], kind="bge")

    @property
    def n_nodes(self) -> int:
        return int(self.partition_sizes.sum())

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.partition_sizes)]).astype(np.int64)

    @cached_property
    def partition(self) -> np.ndarray:
        """Partition index of every node."""
        return np.repeat(np.arange(self.partition_sizes.size), self.partition_sizes)

    def check(self) -> None:
        part = self.partition
        if self.n_edges:
            if min(self.src.min(), self.dst.min()) < 0 or max(self.src.max(), self.dst.max()) >= self.n_nodes:
                raise EncodingError("edge endpoint outside the node range")
            if np.any(part[self.src] >= part[self.dst]):
                raise EncodingError("edges must go from a lower to a higher partition")
        for grp in self.groups:
            sp, dp = part[self.src[grp.start:grp.stop]], part[self.dst[grp.start:grp.stop]]
            if sp.size and (np.any(sp != grp.src_partition) or np.any(dp != grp.dst_partition)):
                raise EncodingError(f"edge group {grp} leaves its partitions")
            if grp.kind == "layer" and self.kind == "mge" and grp.dst_partition != grp.src_partition + 1:
                raise EncodingError("layer edges must join consecutive partitions")

    # compressed adjacency, built on first use
    @cached_property
    def out_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _csr(self.src, self.dst, self.n_nodes)

    @cached_property
    def in_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _csr(self.dst, self.src, self.n_nodes)

    @cached_property
    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n_nodes)

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def abs_weights(self) -> np.ndarray:
        return np.ones(self.n_edges) if self.weight is None else np.abs(self.weight)

    @cached_property
    def simple_undirected(self) -> "UndirectedView":
        return undirected_view(self.src, self.dst, self.abs_weights(), self.n_nodes)

    def scaled(self, c: float) -> "MultipartiteGraph":
        w = self.abs_weights() * c if self.weight is None else self.weight * c
        return MultipartiteGraph(self.partition_sizes, self.src, self.dst, w, self.is_padding,
                                 self.groups, self.source_exempt, self.sink_exempt, self.kind)

    def with_edges(self, src, dst, weight=None) -> "MultipartiteGraph":
        return MultipartiteGraph(self.partition_sizes, src, dst, weight, self.is_padding, [],
                                 self.source_exempt, self.sink_exempt, self.kind)


def _csr(a: np.ndarray, b: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.argsort(a, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
    return indptr, b[order], order


@dataclass
class UndirectedView:
    """Simple undirected graph: parallel edges merged (weights summed), both directions stored."""

    n_nodes: int
    u: np.ndarray  # one entry per undirected edge, u < v
    v: np.ndarray
    weight: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.u.size)

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def matrix(self, weighted: bool = True):
        import scipy.sparse as sp
        data = self.data if weighted else np.ones_like(self.data)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes),
                             copy=False)


def undirected_view(src: np.ndarray, dst: np.ndarray, weight: np.ndarray, n: int) -> UndirectedView:
    import scipy.sparse as sp
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    keep = lo != hi
    if not keep.all():
        lo, hi, weight = lo[keep], hi[keep], weight[keep]
    upper = sp.csr_matrix((np.asarray(weight, dtype=np.float64), (lo, hi)), shape=(n, n))
    upper.sum_duplicates()
    del lo, hi
    u = np.repeat(np.arange(n, dtype=upper.indices.dtype), np.diff(upper.indptr))
    v = upper.indices.copy()
    w = upper.data.copy()
    sym = (upper + upper.T).tocsr()
    sym.sort_indices()
    return UndirectedView(n, u, v, w, sym.indptr, sym.indices, sym.data)


def _layer_graph(spec: ArchitectureSpec, mask: SparseMask, idx: int, weighted: bool,
                 include_padding: bool) -> BipartiteGraph:
    layer = spec.layers[idx]
    entry = mask.layer(idx)
    if layer.kind is LayerKind.CONV:
        return encode_conv(entry, layer, spec.input_of(idx), weighted, include_padding)
    g = encode_linear(entry, weighted)
    if g.n_left != layer.n_in or g.n_right != layer.n_out:
        raise EncodingError(f"layer {idx}: mask shape {entry.shape} does not match linear layer")
    return g


def build_mge(spec: ArchitectureSpec, mask: SparseMask, weighted: bool = False,
              include_padding: bool = True) -> MultipartiteGraph:
    """Concatenate the unrolled layer encodings into one multipartite graph."""
    mask.validate(spec)
    chain = spec.chain_layers()
    if not chain:
        raise EncodingError("architecture has no conv/linear layers")
    ordinal = {idx: k for k, idx in enumerate(chain)}

    pools: dict[int, LayerSpec] = {}
    prev = -1
    for k, idx in enumerate(chain):
        between = [spec.layers[j] for j in range(prev + 1, idx) if spec.layers[j].kind is LayerKind.POOL]
        if len(between) > 1:
            raise EncodingError(f"layer {idx}: consecutive pooling layers are not supported")
        if between:
            pools[k] = between[0]
        prev = idx
    trailing = [j for j in range(prev + 1, len(spec.layers)) if spec.layers[j].kind is LayerKind.POOL]
    if trailing:
        raise EncodingError("pooling after the last weight layer is not supported")

    bges = [_layer_graph(spec, mask, idx, weighted, include_padding) for idx in chain]

    # real (unpadded) grid of every partition: the network input, then each layer's output
    real = [grid_of(spec.input_shape)] + [g.right_grid for g in bges]

    maps, sizes, junctions = [], [], []
    for k, (idx, g) in enumerate(zip(chain, bges)):
        left = g.left_grid
        if spec.layers[idx].kind is LayerKind.LINEAR:
            h, w, c = spec.input_of(idx)
            left = Grid(c, h, w)
        if k in pools:
            window, stride = (pools[k].h_ker, pools[k].w_ker), pools[k].stride
        else:
            window, stride = (1, 1), 1
            if real[k].n_real == left.n_real and (real[k].height, real[k].width) != (left.height, left.width):
                # flatten: the previous output is viewed with the linear layer's shape
                real[k] = Grid(left.channels, left.height, left.width)
        offs, tgts, n_pad = _left_map(real[k], left, window, stride)
        maps.append((offs, tgts))
        sizes.append(real[k].n_real + n_pad)
        junctions.append({"partition": k, "layer_index": idx, "pool": k in pools,
                          "right_nodes": (bges[k - 1].n_right + n_pad) if k else None,
                          "left_nodes": real[k].n_real + n_pad, "padding_nodes": n_pad})
    sizes.append(real[-1].n_real)
    junctions.append({"partition": len(chain), "layer_index": None, "pool": False,
                      "right_nodes": bges[-1].n_right, "left_nodes": None, "padding_nodes": 0})
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    srcs, dsts, ws, groups = [], [], [], []
    start = 0

    def add(g: BipartiteGraph, p_src: int, p_dst: int, kind: str, layer_index: int,
            source_layer: int = -1, target_layer: int = -1) -> None:
        nonlocal start
        srcs.append(g.src + offsets[p_src])
        dsts.append(g.dst + offsets[p_dst])
        if weighted:
            ws.append(g.weight)
        groups.append(EdgeGroup(kind, layer_index, p_src, p_dst, start, start + g.n_edges,
                                source_layer, target_layer))
        start += g.n_edges

    for k, g in enumerate(bges):
        aligned = _remap_left(g, *maps[k], sizes[k])
        add(aligned, k, k + 1, "layer", chain[k])

    for idx, layer in enumerate(spec.layers):
        if layer.kind is not LayerKind.RESIDUAL:
            continue
        ks, kt = ordinal[layer.source], ordinal[layer.target]
        if ks in pools:
            raise EncodingError(f"layer {idx}: residual source follows a pooling layer")
        entry = mask.layer(idx) if layer.has_weights else None
        res = residual_edges(bges[ks], bges[kt], layer, entry, weighted)
        aligned = _remap_left(res, *maps[ks], sizes[ks])
        add(aligned, ks, kt + 1, "residual", idx, layer.source, layer.target)

    is_padding = np.zeros(offsets[-1], dtype=bool)
    for k in range(len(chain)):
        is_padding[offsets[k] + real[k].n_real:offsets[k + 1]] = True

    mge = MultipartiteGraph(
        np.asarray(sizes), np.concatenate(srcs) if srcs else _empty(),
        np.concatenate(dsts) if dsts else _empty(),
        np.concatenate(ws) if weighted and ws else None,
        is_padding, groups, kind="mge", junctions=junctions)
    mge.check()
    return mge


def layer_graphs(spec: ArchitectureSpec, mask: SparseMask, encoding: str = "rolled",
                 weighted: bool = False, include_padding: bool = True) -> list[BipartiteGraph]:
    """Per-layer bipartite graphs (projection shortcuts included) for any encoding."""
    out = []
    for idx, layer in spec.weighted_layers():
        entry = mask.layer(idx)
        if encoding == "rolled":
            out.append(encode_rolled(entry, weighted))
        elif encoding == "rolled-channel":
            out.append(encode_rolled_channel(entry, weighted))
        elif encoding == "unrolled":
            if layer.kind is LayerKind.RESIDUAL:
                h, w, c = spec.input_of(layer.source)
                out.append(encode_conv(entry, layer.projection_conv(), (h, w, c), weighted, False))
            else:
                out.append(_layer_graph(spec, mask, idx, weighted, include_padding))
        else:
            raise EncodingError(f"unknown encoding {encoding!r}")
    return out


def build_layerwise(spec: ArchitectureSpec, mask: SparseMask, encoding: str = "rolled",
                    weighted: bool = False) -> MultipartiteGraph:
    """Disjoint union of per-layer bipartite graphs (rolled baselines).

    Left partitions are exempt from source counting and right partitions from
    sink counting, as each one is the input/output side of its own layer.
    """
    graphs = layer_graphs(spec, mask, encoding, weighted)
    sizes, srcs, dsts, ws, groups, pads = [], [], [], [], [], []
    offset, start = 0, 0
    for k, g in enumerate(graphs):
        sizes += [g.n_left, g.n_right]
        srcs.append(g.src + offset)
        dsts.append(g.dst + offset + g.n_left)
        if weighted:
            ws.append(g.weight)
        groups.append(EdgeGroup("layer", g.layer_index, 2 * k, 2 * k + 1, start, start + g.n_edges))
        pads.append(np.zeros(g.n_left + g.n_right, dtype=bool))
        offset += g.n_left + g.n_right
        start += g.n_edges
    parts = np.arange(len(sizes))
    mg = MultipartiteGraph(np.asarray(sizes), np.concatenate(srcs), np.concatenate(dsts),
                           np.concatenate(ws) if weighted else None, np.concatenate(pads), groups,
                           source_exempt=parts % 2 == 0, sink_exempt=parts % 2 == 1, kind=encoding)
    mg.check()
    return mg


def encode_network(spec: ArchitectureSpec, mask: SparseMask, encoding: str = "unrolled",
                   weighted: bool = False, include_padding: bool = True) -> MultipartiteGraph:
    if encoding == "unrolled":
        return build_mge(spec, mask, weighted, include_padding)
    return build_layerwise(spec, mask, encoding, weighted)


# --- export ----------------------------------------------------------------------

def _header(g: MultipartiteGraph) -> dict:
    pad_counts = [int(g.is_padding[a:b].sum()) for a, b in zip(g.offsets[:-1], g.offsets[1:])]
    return {"format": "snntopo-graph", "version": 1, "kind": g.kind,
            "partitions": [int(s) for s in g.partition_sizes], "padding": pad_counts,
            "source_exempt": [bool(x) for x in g.source_exempt],
            "sink_exempt": [bool(x) for x in g.sink_exempt],
            "weighted": g.weight is not None,
            "groups": [vars(grp) for grp in g.groups]}


def _from_header(h: dict, src, dst, weight) -> MultipartiteGraph:
    sizes = np.asarray(h["partitions"], dtype=np.int64)
    is_padding = np.zeros(int(sizes.sum()), dtype=bool)
    ends = np.cumsum(sizes)
    for end, n_pad in zip(ends, h["padding"]):
        is_padding[end - n_pad:end] = True
    g = MultipartiteGraph(sizes, src, dst, weight, is_padding,
                          [EdgeGroup(**grp) for grp in h.get("groups", [])],
                          np.asarray(h["source_exempt"]), np.asarray(h["sink_exempt"]), h["kind"])
    g.check()
    return g


def save_edgelist(g: MultipartiteGraph, path: str | Path) -> Path:
    """Text format: a ``#``-prefixed JSON header line, then ``a b [w]`` per edge (global ids)."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(_header(g), sort_keys=True) + "\n")
        if g.weight is None:
            np.savetxt(fh, np.column_stack([g.src, g.dst]), fmt="%d")
        else:
            for a, b, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()):
                fh.write(f"{a} {b} {w!r}\n")
    return path


def load_edgelist(path: str | Path) -> MultipartiteGraph:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise EncodingError(f"{path}: missing header line")
        header = json.loads(first[2:])
        rows = [line.split() for line in fh if line.strip()]
    src = np.array([int(r[0]) for r in rows], dtype=np.int64)
    dst = np.array([int(r[1]) for r in rows], dtype=np.int64)
    weight = np.array([float(r[2]) for r in rows]) if header["weighted"] else None
    return _from_header(header, src, dst, weight)


def save_csr(g: MultipartiteGraph, path: str | Path) -> Path:
    """Binary CSR dump (``.npz``): rows are sources, edges stored in row order."""
    path = Path(path)
    indptr, indices, order = g.out_csr
    arrays = {"indptr": indptr, "indices": indices,
              "header": np.frombuffer(json.dumps(_header(g), sort_keys=True).encode(), dtype=np.uint8),
              "order": order}
    if g.weight is not None:
        arrays["weights"] = g.weight[order]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_csr(path: str | Path) -> MultipartiteGraph:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        indptr, indices, order = data["indptr"], data["indices"], data["order"]
        src_sorted = np.repeat(np.arange(indptr.size - 1, dtype=np.int64), np.diff(indptr))
        # restore original edge order so edge groups stay contiguous
        src = np.empty_like(src_sorted)
        dst = np.empty_like(indices)
        src[order], dst[order] = src_sorted, indices
        weight = None
        if "weights" in data:
            weight = np.empty(order.size)
            weight[order] = data["weights"]
    return _from_header(header, src, dst, weight)


def save_graph(g: MultipartiteGraph, path: str | Path) -> Path:
    path = Path(path)
    return save_csr(g, path) if path.suffix == ".npz" else save_edgelist(g, path)


def load_graph(path: str | Path) -> MultipartiteGraph:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"graph file not found: {path}")
    return load_csr(path) if path.suffix == ".npz" else load_edgelist(path)
