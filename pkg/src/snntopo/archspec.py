"""Architecture descriptions: layer sequences, shape arithmetic and bundled configs.

An architecture is an ordered list of layers applied to an input of shape
``(h, w, c)``.  Conv, Linear and Pool layers form the sequential chain; Residual
entries do not change the running shape and only declare a shortcut between the
input of a source layer and the output of a target layer.

Bundled configs (``conv6``, ``resnet20``, ``resnet32``, ``wrn28_2``) live in
``snntopo/data/arch`` and are loaded with :func:`load_bundled`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Optional, Union

Shape = tuple[int, int, int]  # (h, w, c)


class ArchitectureError(ValueError):
    """Raised on schema violations or inconsistent layer shapes."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class LayerKind(str, Enum):
    CONV = "conv"
    LINEAR = "linear"
    POOL = "pool"
    RESIDUAL = "residual"


class PoolMode(str, Enum):
    MAX = "max"
    AVG = "avg"


class ShortcutKind(str, Enum):
    IDENTITY = "identity"
    PROJECTION = "projection"


@dataclass(frozen=True)
class LayerSpec:
    """One layer.  Only the fields relevant to ``kind`` are meaningful.

    Conv: ``c_in, c_out, h_ker, w_ker, stride, padding``.
    Linear: ``n_in, n_out``.
    Pool: ``h_ker, w_ker`` (window), ``stride``, ``pool_mode``.
    Residual: ``source, target`` (layer indices), ``shortcut``; a projection
    shortcut is a 1x1 convolution ``c_in -> c_out`` with ``stride``.
    """

    kind: LayerKind
    c_in: int = 0
    c_out: int = 0
    h_ker: int = 1
    w_ker: int = 1
    stride: int = 1
    padding: int = 0
    n_in: int = 0
    n_out: int = 0
    pool_mode: PoolMode = PoolMode.MAX
    source: int = -1
    target: int = -1
    shortcut: ShortcutKind = ShortcutKind.IDENTITY

    @property
    def has_weights(self) -> bool:
        if self.kind in (LayerKind.CONV, LayerKind.LINEAR):
            return True
        return self.kind is LayerKind.RESIDUAL and self.shortcut is ShortcutKind.PROJECTION

    @property
    def weight_shape(self) -> tuple[int, ...]:
        """Mask/weight tensor shape: conv ``(c_out, c_in, h, w)``, linear ``(n_in, n_out)``."""
        if self.kind is LayerKind.CONV:
            return (self.c_out, self.c_in, self.h_ker, self.w_ker)
        if self.kind is LayerKind.LINEAR:
            return (self.n_in, self.n_out)
        if self.has_weights:
            return (self.c_out, self.c_in, 1, 1)
        return ()

    @property
    def n_weights(self) -> int:
        n = 1
        for d in self.weight_shape:
            n *= d
        return n if self.weight_shape else 0

    def fan_in(self) -> int:
        if self.kind is LayerKind.LINEAR:
            return self.n_in
        return self.c_in * self.h_ker * self.w_ker

    def projection_conv(self) -> "LayerSpec":
        """The 1x1 convolution equivalent of a projection shortcut."""
        return LayerSpec(LayerKind.CONV, c_in=self.c_in, c_out=self.c_out, stride=self.stride)


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: Shape
    layers: tuple[LayerSpec, ...]
    shapes: tuple[Shape, ...] = field(default=(), compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.layers)

    def input_of(self, index: int) -> Shape:
        """Shape entering layer ``index`` (for residual entries: the running shape)."""
        return self.input_shape if index == 0 else self.shapes[index - 1]

    def weighted_layers(self) -> Iterator[tuple[int, LayerSpec]]:
        for i, layer in enumerate(self.layers):
            if layer.has_weights:
                yield i, layer

    def chain_layers(self) -> list[int]:
        """Indices of the sequential weight layers (conv/linear), in order."""
        return [i for i, l in enumerate(self.layers) if l.kind in (LayerKind.CONV, LayerKind.LINEAR)]

    def n_params(self) -> int:
        return sum(layer.n_weights for _, layer in self.weighted_layers())


def conv_output_hw(h: int, w: int, layer: LayerSpec) -> tuple[int, int]:
    """Convolution arithmetic, floor division for non-divisible strides."""
    oh = (h + 2 * layer.padding - layer.h_ker) // layer.stride + 1
    ow = (w + 2 * layer.padding - layer.w_ker) // layer.stride + 1
    return oh, ow


def pool_output_hw(h: int, w: int, layer: LayerSpec) -> tuple[int, int]:
    return (h - layer.h_ker) // layer.stride + 1, (w - layer.w_ker) // layer.stride + 1


def _apply(shape: Shape, layer: LayerSpec, index: int) -> Shape:
    h, w, c = shape
    if layer.kind is LayerKind.CONV:
        if layer.c_in != c:
            raise ArchitectureError(f"conv expects {layer.c_in} input channels, got {c}", index)
        oh, ow = conv_output_hw(h, w, layer)
        out = (oh, ow, layer.c_out)
    elif layer.kind is LayerKind.POOL:
        oh, ow = pool_output_hw(h, w, layer)
        out = (oh, ow, c)
    elif layer.kind is LayerKind.LINEAR:
        if layer.n_in != h * w * c:
            raise ArchitectureError(f"linear expects {layer.n_in} inputs, got {h * w * c}", index)
        out = (1, 1, layer.n_out)
    else:
        out = shape
    if min(out) <= 0:
        raise ArchitectureError(f"non-positive output shape {out}", index)
    return out


def _validate_layer(layer: LayerSpec, index: int) -> None:
    if layer.kind is LayerKind.CONV:
        dims = (layer.c_in, layer.c_out, layer.h_ker, layer.w_ker)
    elif layer.kind is LayerKind.LINEAR:
        dims = (layer.n_in, layer.n_out)
    elif layer.kind is LayerKind.POOL:
        dims = (layer.h_ker, layer.w_ker)
    else:
        dims = (layer.c_in, layer.c_out) if layer.shortcut is ShortcutKind.PROJECTION else ()
    if any(d <= 0 for d in dims):
        raise ArchitectureError(f"dimensions must be positive, got {dims}", index)
    if layer.stride < 1:
        raise ArchitectureError(f"stride must be >= 1, got {layer.stride}", index)
    if layer.padding < 0:
        raise ArchitectureError(f"padding must be >= 0, got {layer.padding}", index)


def _validate_residual(spec_layers: tuple[LayerSpec, ...], shapes: list[Shape],
                       input_shape: Shape, index: int) -> None:
    layer = spec_layers[index]
    n = len(spec_layers)
    if not (0 <= layer.source < layer.target < n):
        raise ArchitectureError(
            f"residual needs 0 <= source < target < {n}, got {layer.source}, {layer.target}", index)
    for end in (layer.source, layer.target):
        if spec_layers[end].kind not in (LayerKind.CONV, LayerKind.LINEAR):
            raise ArchitectureError(f"residual endpoint {end} is not a conv/linear layer", index)
    src_in = input_shape if layer.source == 0 else shapes[layer.source - 1]
    tgt_out = shapes[layer.target]
    if layer.shortcut is ShortcutKind.IDENTITY:
        if src_in != tgt_out:
            raise ArchitectureError(f"identity shortcut shape mismatch {src_in} vs {tgt_out}", index)
        return
    if layer.c_in != src_in[2] or layer.c_out != tgt_out[2]:
        raise ArchitectureError(
            f"projection {layer.c_in}->{layer.c_out} does not match {src_in} -> {tgt_out}", index)
    oh, ow = conv_output_hw(src_in[0], src_in[1], layer.projection_conv())
    if (oh, ow) != tgt_out[:2]:
        raise ArchitectureError(f"projection output {(oh, ow)} does not match {tgt_out[:2]}", index)


def build_spec(name: str, input_shape: Shape, layers: list[LayerSpec]) -> ArchitectureSpec:
    """Validate layers and precompute output shapes."""
    if not layers:
        raise ArchitectureError("architecture needs at least one layer")
    if len(input_shape) != 3 or min(input_shape) <= 0:
        raise ArchitectureError(f"input shape must be three positive ints, got {input_shape}")
    layers_t = tuple(layers)
    shapes: list[Shape] = []
    shape = tuple(input_shape)
    for i, layer in enumerate(layers_t):
        _validate_layer(layer, i)
        shape = _apply(shape, layer, i)
        shapes.append(shape)
    for i, layer in enumerate(layers_t):
        if layer.kind is LayerKind.RESIDUAL:
            _validate_residual(layers_t, shapes, tuple(input_shape), i)
    return ArchitectureSpec(name, tuple(input_shape), layers_t, tuple(shapes))


def output_shape(spec: ArchitectureSpec, layer_index: int) -> Shape:
    """Shape ``(h, w, c)`` after layer ``layer_index``."""
    if not 0 <= layer_index < len(spec.layers):
        raise IndexError(f"layer index {layer_index} out of range [0, {len(spec.layers)})")
    return spec.shapes[layer_index]


# --- JSON schema -----------------------------------------------------------

_POOL_MODES = {m.value: m for m in PoolMode}


def _pair(value: Any, key: str, index: int) -> tuple[int, int]:
    if isinstance(value, int):
        return value, value
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return int(value[0]), int(value[1])
    raise ArchitectureError(f"'{key}' must be an int or a pair of ints", index)


def _int(entry: dict, key: str, index: int, default: Optional[int] = None) -> int:
    value = entry.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ArchitectureError(f"'{key}' must be an integer, got {value!r}", index)
    return value


def _parse_layer(entry: dict, index: int, shape: Shape, n_classes: int) -> LayerSpec:
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ArchitectureError("layer entry must be an object with a 'kind'", index)
    kind = entry["kind"]
    h, w, c = shape
    if kind == "conv":
        kh, kw = _pair(entry.get("kernel", 3), "kernel", index)
        c_in = entry.get("c_in", c)
        return LayerSpec(LayerKind.CONV, c_in=_int({"c_in": c_in}, "c_in", index),
                         c_out=_int(entry, "c_out", index), h_ker=kh, w_ker=kw,
                         stride=_int(entry, "stride", index, 1), padding=_int(entry, "padding", index, 0))
    if kind == "linear":
        n_in = entry.get("n_in", "auto")
        n_out = entry.get("n_out")
        if n_in == "auto":
            n_in = h * w * c
        if n_out == "n_classes":
            n_out = n_classes
        return LayerSpec(LayerKind.LINEAR, n_in=_int({"n_in": n_in}, "n_in", index),
                         n_out=_int({"n_out": n_out}, "n_out", index))
    if kind == "pool":
        mode = entry.get("mode", "max")
        if mode not in _POOL_MODES:
            raise ArchitectureError(f"unknown pool mode {mode!r}", index)
        if entry.get("global", False):
            kh, kw = h, w
            stride = max(h, w)
        else:
            kh, kw = _pair(entry.get("window", 2), "window", index)
            stride = _int(entry, "stride", index, kh)
        return LayerSpec(LayerKind.POOL, h_ker=kh, w_ker=kw, stride=stride, pool_mode=_POOL_MODES[mode])
    if kind == "residual":
        shortcut = entry.get("shortcut", "identity")
        common = dict(source=_int(entry, "source", index), target=_int(entry, "target", index))
        if shortcut == "identity":
            return LayerSpec(LayerKind.RESIDUAL, shortcut=ShortcutKind.IDENTITY, **common)
        if shortcut == "projection":
            return LayerSpec(LayerKind.RESIDUAL, shortcut=ShortcutKind.PROJECTION,
                             c_in=_int(entry, "c_in", index), c_out=_int(entry, "c_out", index),
                             stride=_int(entry, "stride", index, 1), **common)
        raise ArchitectureError(f"unknown shortcut {shortcut!r}", index)
    raise ArchitectureError(f"unknown layer kind {kind!r}", index)


def parse_architecture(doc: dict, *, input_size: Optional[tuple[int, int]] = None,
                       n_classes: Optional[int] = None) -> ArchitectureSpec:
    """Build a spec from an already-decoded JSON document.

    ``input_size`` overrides the spatial input resolution (reduced-scale mode);
    ``"n_in": "auto"`` linear layers and ``"global": true`` pools adapt to it.
    """
    if not isinstance(doc, dict):
        raise ArchitectureError("architecture document must be a JSON object")
    for key in ("name", "input", "layers"):
        if key not in doc:
            raise ArchitectureError(f"missing required field '{key}'")
    inp = doc["input"]
    if not (isinstance(inp, list) and len(inp) == 3 and all(isinstance(v, int) for v in inp)):
        raise ArchitectureError("'input' must be [h, w, c]")
    h, w, c = inp
    if input_size is not None:
        h, w = input_size
    classes = n_classes if n_classes is not None else doc.get("n_classes", 10)
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise ArchitectureError("'layers' must be a non-empty list")

    layers: list[LayerSpec] = []
    shape: Shape = (h, w, c)
    for i, entry in enumerate(doc["layers"]):
        layer = _parse_layer(entry, i, shape, classes)
        _validate_layer(layer, i)
        shape = _apply(shape, layer, i)
        layers.append(layer)
    return build_spec(str(doc["name"]), (h, w, c), layers)


def load_architecture(source: Union[str, Path, dict], **kwargs) -> ArchitectureSpec:
    """Load from a JSON file path, a JSON string, or a decoded dict."""
    if isinstance(source, dict):
        return parse_architecture(source, **kwargs)
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith("{"):
        path = Path(source)
        if not path.exists() and text in BUNDLED:
            return load_bundled(text, **kwargs)
        text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchitectureError(f"invalid JSON: {exc}") from exc
    return parse_architecture(doc, **kwargs)


BUNDLED = {
    "conv6": "conv6.json",
    "resnet20": "resnet20.json",
    "resnet32": "resnet32.json",
    "wrn28_2": "wrn28_2.json",
}


def bundled_path(name: str) -> Path:
    key = name.lower().replace("-", "").replace("_", "")
    for alias, fname in BUNDLED.items():
        if alias.replace("_", "") == key or fname == name:
            return Path(str(resources.files("snntopo") / "data" / "arch" / fname))
    raise KeyError(f"no bundled architecture named {name!r}; choose from {sorted(BUNDLED)}")


def load_bundled(name: str, **kwargs) -> ArchitectureSpec:
    return parse_architecture(json.loads(bundled_path(name).read_text()), **kwargs)


def spec_to_doc(spec: ArchitectureSpec) -> dict:
    """Inverse of :func:`parse_architecture` with every field explicit."""
    layers = []
    for layer in spec.layers:
        if layer.kind is LayerKind.CONV:
            layers.append({"kind": "conv", "c_in": layer.c_in, "c_out": layer.c_out,
                           "kernel": [layer.h_ker, layer.w_ker], "stride": layer.stride,
                           "padding": layer.padding})
        elif layer.kind is LayerKind.LINEAR:
            layers.append({"kind": "linear", "n_in": layer.n_in, "n_out": layer.n_out})
        elif layer.kind is LayerKind.POOL:
            layers.append({"kind": "pool", "mode": layer.pool_mode.value,
                           "window": [layer.h_ker, layer.w_ker], "stride": layer.stride})
        else:
            entry = {"kind": "residual", "source": layer.source, "target": layer.target,
                     "shortcut": layer.shortcut.value}
            if layer.shortcut is ShortcutKind.PROJECTION:
                entry.update(c_in=layer.c_in, c_out=layer.c_out, stride=layer.stride)
            layers.append(entry)
    return {"name": spec.name, "input": list(spec.input_shape), "layers": layers}


__all__ = [
    "ArchitectureError", "ArchitectureSpec", "LayerKind", "LayerSpec", "PoolMode", "ShortcutKind",
    "BUNDLED", "build_spec", "bundled_path", "conv_output_hw", "load_architecture", "load_bundled",
    "output_shape", "parse_architecture", "pool_output_hw", "spec_to_doc",
]
