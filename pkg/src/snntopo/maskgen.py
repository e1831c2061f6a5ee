"""Sparse masks: layer-wise random pruning (Uniform, ER, ERK), densities, file I/O.

A mask stores, per weight-carrying layer, the sorted flat indices of the
surviving weights in the layer's weight tensor (conv ``(c_out, c_in, kh, kw)``,
linear ``(n_in, n_out)``, C order) and optionally their values.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .archspec import ArchitectureSpec, LayerKind, LayerSpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class MaskError(ValueError):
    pass


class Init(str, Enum):
    GAUSSIAN_FAN_IN = "gaussian_fan_in"
    UNIT_MAGNITUDE = "unit_magnitude"


@dataclass(frozen=True)
class MaskLayer:
    layer_index: int
    shape: tuple[int, ...]
    indices: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def density(self) -> float:
        return self.nnz / self.size if self.size else 0.0

    def dense(self) -> np.ndarray:
        """Binary mask tensor of ``shape``."""
        out = np.zeros(self.size, dtype=np.int8)
        out[self.indices] = 1
        return out.reshape(self.shape)

    def dense_weights(self) -> np.ndarray:
        """Weight tensor ``theta * M``; unit values when no weights are attached."""
        out = np.zeros(self.size, dtype=np.float64)
        out[self.indices] = 1.0 if self.weights is None else self.weights
        return out.reshape(self.shape)

    def validate(self) -> None:
        idx = self.indices
        if idx.ndim != 1:
            raise MaskError(f"layer {self.layer_index}: indices must be 1-D")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.size or np.any(np.diff(idx) <= 0)):
            raise MaskError(f"layer {self.layer_index}: indices must be strictly increasing within bounds")
        if self.weights is not None:
            if self.weights.shape != idx.shape:
                raise MaskError(f"layer {self.layer_index}: weight count does not match nonzero count")
            if np.any(self.weights == 0.0):
                raise MaskError(f"layer {self.layer_index}: stored weights must be nonzero")


@dataclass(frozen=True)
class SparseMask:
    architecture: str
    layers: tuple[MaskLayer, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def layer(self, layer_index: int) -> MaskLayer:
        for entry in self.layers:
            if entry.layer_index == layer_index:
                return entry
        raise KeyError(f"mask has no entry for layer {layer_index}")

    @property
    def weighted(self) -> bool:
        return any(l.weights is not None for l in self.layers)

    def validate(self, spec: Optional[ArchitectureSpec] = None) -> None:
        for entry in self.layers:
            entry.validate()
        if spec is None:
            return
        expected = [(i, l.weight_shape) for i, l in spec.weighted_layers()]
        got = [(l.layer_index, tuple(l.shape)) for l in self.layers]
        if expected != got:
            raise MaskError(f"mask layers {got} do not match architecture {expected}")

    def equals(self, other: "SparseMask") -> bool:
        if self.architecture != other.architecture or len(self) != len(other):
            return False
        for a, b in zip(self.layers, other.layers):
            if a.layer_index != b.layer_index or a.shape != b.shape:
                return False
            if not np.array_equal(a.indices, b.indices):
                return False
            if (a.weights is None) != (b.weights is None):
                return False
            if a.weights is not None and not np.array_equal(a.weights, b.weights):
                return False
        return True


@dataclass(frozen=True)
class DensityReport:
    per_layer: dict[int, float]
    global_density: float
    average_layer_density: float
    empty_layers: tuple[int, ...] = ()
    saturated_layers: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_layer": {str(k): v for k, v in self.per_layer.items()},
            "global_density": self.global_density,
            "average_layer_density": self.average_layer_density,
            "empty_layers": list(self.empty_layers),
            "saturated_layers": list(self.saturated_layers),
        }


def density_report(mask: SparseMask) -> DensityReport:
    per_layer = {l.layer_index: l.density for l in mask.layers}
    total = sum(l.size for l in mask.layers)
    nnz = sum(l.nnz for l in mask.layers)
    avg = float(np.mean(list(per_layer.values()))) if per_layer else 0.0
    return DensityReport(
        per_layer=per_layer,
        global_density=nnz / total if total else 0.0,
        average_layer_density=avg,
        empty_layers=tuple(l.layer_index for l in mask.layers if l.nnz == 0),
        saturated_layers=tuple(l.layer_index for l in mask.layers if l.size and l.nnz == l.size),
    )


def full_mask(spec: ArchitectureSpec) -> SparseMask:
    layers = tuple(MaskLayer(i, l.weight_shape, np.arange(l.n_weights, dtype=np.int64))
                   for i, l in spec.weighted_layers())
    return SparseMask(spec.name, layers, {"method": "dense"})


def from_dense(spec: ArchitectureSpec, tensors: dict[int, np.ndarray]) -> SparseMask:
    """Build a mask from dense tensors keyed by layer index (nonzero = kept, values kept as weights)."""
    layers = []
    for i, layer in spec.weighted_layers():
        t = np.asarray(tensors[i], dtype=np.float64)
        if t.shape != layer.weight_shape:
            raise MaskError(f"layer {i}: tensor shape {t.shape} != {layer.weight_shape}")
        flat = t.ravel()
        idx = np.flatnonzero(flat).astype(np.int64)
        values = flat[idx]
        weights = None if np.all(values == 1.0) else values.copy()
        layers.append(MaskLayer(i, layer.weight_shape, idx, weights))
    return SparseMask(spec.name, tuple(layers), {"method": "import"})


# --- layer-wise random pruning ------------------------------------------------

def er_term(layer: LayerSpec) -> float:
    """Erdos-Renyi proportional term (n_prev + n) / (n_prev * n)."""
    n_prev, n = _fan_dims(layer)
    return (n_prev + n) / (n_prev * n)


def erk_term(layer: LayerSpec) -> float:
    """ER-Kernel term: (n_prev + n + w + h) / (n_prev * n * w * h); linear layers reduce to ER."""
    if layer.kind is LayerKind.LINEAR:
        return er_term(layer)
    n_prev, n = _fan_dims(layer)
    kh, kw = layer.h_ker, layer.w_ker
    return (n_prev + n + kw + kh) / (n_prev * n * kw * kh)


def _fan_dims(layer: LayerSpec) -> tuple[int, int]:
    if layer.kind is LayerKind.LINEAR:
        return layer.n_in, layer.n_out
    return layer.c_in, layer.c_out


def _check_sparsity(s: float) -> None:
    if not 0.0 <= s < 1.0:
        raise MaskError(f"sparsity must satisfy 0 <= s < 1, got {s}")


def scaled_keep_probabilities(sizes: Sequence[int], terms: Sequence[float], keep: int
                              ) -> tuple[np.ndarray, float]:
    """Keep probabilities ``min(1, eps * term)`` with ``sum(p * size) == keep``.

    Layers whose scaled probability reaches 1 are fixed dense and the factor is
    re-solved over the remaining layers until no new layer saturates.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    terms = np.asarray(terms, dtype=np.float64)
    dense = np.zeros(sizes.size, dtype=bool)
    eps = 0.0
    while True:
        budget = keep - sizes[dense].sum()
        denom = (terms * sizes)[~dense].sum()
        if denom <= 0:
            break
        eps = budget / denom
        newly = (~dense) & (eps * terms >= 1.0)
        if not newly.any():
            break
        dense |= newly
    probs = np.where(dense, 1.0, np.minimum(1.0, eps * terms))
    return probs, eps


def apportion(expected: np.ndarray, caps: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``expected`` to integers summing to ``total``."""
    expected = np.minimum(np.asarray(expected, dtype=np.float64), caps)
    counts = np.floor(expected).astype(np.int64)
    remainder = expected - counts
    short = int(total - counts.sum())
    order = np.lexsort((np.arange(expected.size), -remainder))
    i = 0
    while short > 0 and i < 10 * max(1, expected.size):
        j = order[i % expected.size]
        if counts[j] < caps[j]:
            counts[j] += 1
            short -= 1
        i += 1
    return counts


def _layer_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _sample(spec: ArchitectureSpec, counts: dict[int, int], seed: int, meta: dict) -> SparseMask:
    weighted = list(spec.weighted_layers())
    rngs = _layer_rngs(seed, len(weighted))
    layers = []
    for (i, layer), rng in zip(weighted, rngs):
        size = layer.n_weights
        k = counts[i]
        if k >= size:
            idx = np.arange(size, dtype=np.int64)
        else:
            idx = np.sort(rng.choice(size, size=k, replace=False)).astype(np.int64)
        layers.append(MaskLayer(i, layer.weight_shape, idx))
    mask = SparseMask(spec.name, tuple(layers), meta)
    empty = [l.layer_index for l in layers if l.nnz == 0]
    if empty:
        warnings.warn(f"layers {empty} have no surviving weights", RuntimeWarning, stacklevel=3)
    return mask


def _prunable(spec: ArchitectureSpec, exclude: Iterable[int]) -> tuple[list[tuple[int, LayerSpec]], set[int]]:
    excluded = set(exclude)
    weighted = list(spec.weighted_layers())
    unknown = excluded - {i for i, _ in weighted}
    if unknown:
        raise MaskError(f"excluded layers {sorted(unknown)} carry no weights")
    return [(i, l) for i, l in weighted if i not in excluded], excluded


def generate_uniform(spec: ArchitectureSpec, sparsity: float, seed: int,
                     exclude: Iterable[int] = ()) -> SparseMask:
    """Every prunable layer keeps ``round((1 - s) * n_weights)`` weights."""
    _check_sparsity(sparsity)
    prunable, excluded = _prunable(spec, exclude)
    counts = {i: l.n_weights for i, l in spec.weighted_layers() if i in excluded}
    for i, layer in prunable:
        counts[i] = int(round((1.0 - sparsity) * layer.n_weights))
    meta = {"method": "uniform", "sparsity": sparsity, "seed": seed, "excluded": sorted(excluded)}
    return _sample(spec, counts, seed, meta)


def _generate_scaled(spec: ArchitectureSpec, sparsity: float, seed: int, term, method: str,
                     exclude: Iterable[int]) -> SparseMask:
    _check_sparsity(sparsity)
    prunable, excluded = _prunable(spec, exclude)
    counts = {i: l.n_weights for i, l in spec.weighted_layers() if i in excluded}
    sizes = np.array([l.n_weights for _, l in prunable], dtype=np.int64)
    keep = int(round((1.0 - sparsity) * sizes.sum()))
    probs, eps = scaled_keep_probabilities(sizes, [term(l) for _, l in prunable], keep)
    alloc = apportion(probs * sizes, sizes, keep)
    for (i, _), k in zip(prunable, alloc):
        counts[i] = int(k)
    saturated = [i for (i, _), p in zip(prunable, probs) if p >= 1.0]
    if saturated:
        log.info("%s: layers %s saturate at density 1", method, saturated)
    meta = {"method": method, "sparsity": sparsity, "seed": seed, "epsilon": eps,
            "saturated": saturated, "excluded": sorted(excluded),
            "keep_probabilities": {str(i): float(p) for (i, _), p in zip(prunable, probs)}}
    return _sample(spec, counts, seed, meta)


def generate_er(spec: ArchitectureSpec, sparsity: float, seed: int,
                exclude: Iterable[int] = ()) -> SparseMask:
    return _generate_scaled(spec, sparsity, seed, er_term, "er", exclude)


def generate_erk(spec: ArchitectureSpec, sparsity: float, seed: int,
                 exclude: Iterable[int] = ()) -> SparseMask:
    return _generate_scaled(spec, sparsity, seed, erk_term, "erk", exclude)


GENERATORS = {"uniform": generate_uniform, "er": generate_er, "erk": generate_erk}


def generate(method: str, spec: ArchitectureSpec, sparsity: float, seed: int,
             exclude: Iterable[int] = ()) -> SparseMask:
    try:
        fn = GENERATORS[method.lower()]
    except KeyError:
        raise MaskError(f"unknown method {method!r}; choose from {sorted(GENERATORS)}") from None
    return fn(spec, sparsity, seed, exclude)


def attach_weights(mask: SparseMask, spec: ArchitectureSpec, seed: int,
                   init: Init | str = Init.GAUSSIAN_FAN_IN) -> SparseMask:
    """Draw weights on the surviving entries only.

    ``GAUSSIAN_FAN_IN`` uses N(0, 2 / fan_in); ``UNIT_MAGNITUDE`` sets every weight to 1.
    """
    init = Init(init)
    if mask.weighted:
        raise MaskError("mask already carries weights")
    rngs = _layer_rngs(seed, len(mask.layers))
    layers = []
    for entry, rng in zip(mask.layers, rngs):
        if init is Init.UNIT_MAGNITUDE:
            w = np.ones(entry.nnz)
        else:
            std = np.sqrt(2.0 / spec.layers[entry.layer_index].fan_in())
            w = rng.normal(0.0, std, size=entry.nnz)
            zero = w == 0.0
            while zero.any():
                w[zero] = rng.normal(0.0, std, size=int(zero.sum()))
                zero = w == 0.0
        layers.append(MaskLayer(entry.layer_index, entry.shape, entry.indices, w))
    return SparseMask(mask.architecture, tuple(layers), {**mask.meta, "init": init.value, "init_seed": seed})


# --- file format ----------------------------------------------------------------
# <name>.npz holds layer_<k>_indices (int64) and layer_<k>_weights (float64);
# <name>.npz.json is the metadata sidecar.

def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_mask(mask: SparseMask, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    arrays = {}
    header = []
    for k, entry in enumerate(mask.layers):
        arrays[f"layer_{k}_indices"] = entry.indices.astype("<i8")
        if entry.weights is not None:
            arrays[f"layer_{k}_weights"] = entry.weights.astype("<f8")
        header.append({"layer_index": entry.layer_index, "shape": list(entry.shape),
                       "nnz": entry.nnz, "weights": entry.weights is not None})
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    meta = {"format_version": FORMAT_VERSION, "architecture": mask.architecture,
            "layers": header, "meta": mask.meta}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load_mask(path: str | Path) -> SparseMask:
    path = Path(path)
    side = sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    if not side.exists():
        raise MaskError(f"missing metadata sidecar {side}")
    meta = json.loads(side.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise MaskError(f"unsupported mask format version {meta.get('format_version')}")
    layers = []
    with np.load(path) as data:
        for k, h in enumerate(meta["layers"]):
            idx = data[f"layer_{k}_indices"].astype(np.int64)
            w = data[f"layer_{k}_weights"].astype(np.float64) if h["weights"] else None
            entry = MaskLayer(int(h["layer_index"]), tuple(h["shape"]), idx, w)
            entry.validate()
            layers.append(entry)
    return SparseMask(meta["architecture"], tuple(layers), meta.get("meta", {}))
