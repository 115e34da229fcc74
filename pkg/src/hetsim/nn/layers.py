"""Layer specifications with shape and parameter-count inference.

Layers are immutable descriptions; the actual parameter tensors live in a
:class:`~hetsim.nn.params.ParamStore` and the math lives in
:mod:`hetsim.nn.network`. Spatial layers use VALID (no padding) semantics
throughout, and pooling windows step by their own size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

Shape = tuple[int, ...]


class ShapeError(ValueError):
    """A layer cannot accept the shape it was given."""


@dataclass(frozen=True)
class Dense:
    units: int

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("Dense units must be positive")


@dataclass(frozen=True)
class Conv2D:
    kh: int
    kw: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if min(self.kh, self.kw, self.out_channels, self.stride) < 1:
            raise ValueError("Conv2D dimensions and stride must be positive")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2D:
    ph: int
    pw: int

    def __post_init__(self):
        if min(self.ph, self.pw) < 1:
            raise ValueError("MaxPool2D window must be positive")


@dataclass(frozen=True)
class Dropout:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("Dropout p must be in [0, 1)")


@dataclass(frozen=True)
class BranchDropout:
    """Per-sample all-or-nothing dropout of an entire activation vector.

    Unlike :class:`Dropout`, p == 1 is allowed so tests can force the
    drop path deterministically.
    """

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("BranchDropout p must be in [0, 1]")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class Add:
    """Elementwise sum of two equal-shape inputs.

    Only meaningful at the combine point of a cascaded topology; it is
    rejected inside plain sequential chains.
    """


Layer = Union[
    Dense, Conv2D, ReLU, MaxPool2D, Dropout, BranchDropout, Flatten, Softmax, Add
]

_KIND_TO_CLS = {
    "dense": Dense,
    "conv2d": Conv2D,
    "relu": ReLU,
    "maxpool2d": MaxPool2D,
    "dropout": Dropout,
    "branch_dropout": BranchDropout,
    "flatten": Flatten,
    "softmax": Softmax,
    "add": Add,
}
_CLS_TO_KIND = {cls: kind for kind, cls in _KIND_TO_CLS.items()}


def layer_from_dict(spec: dict) -> Layer:
    """Build a layer from a config dict like ``{"kind": "dense", "units": 10}``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"layer spec must be a dict with a 'kind' key, got {spec!r}")
    kind = spec["kind"]
    cls = _KIND_TO_CLS.get(kind)
    if cls is None:
        raise ValueError(f"unknown layer kind {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad parameters for layer kind {kind!r}: {exc}") from exc


def layer_to_dict(layer: Layer) -> dict:
    d = {"kind": _CLS_TO_KIND[type(layer)]}
    for field in getattr(layer, "__dataclass_fields__", {}):
        d[field] = getattr(layer, field)
    return d


def output_shape(layer: Layer, in_shape: Shape) -> Shape:
    """Shape produced by ``layer`` on a single (batch-less) input of ``in_shape``."""
    if isinstance(layer, Dense):
        if len(in_shape) != 1:
            raise ShapeError(
                f"Dense expects a flat input, got shape {in_shape}; add Flatten first"
            )
        return (layer.units,)
    if isinstance(layer, Conv2D):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2D expects (H, W, C) input, got {in_shape}")
        h, w, _ = in_shape
        ho = (h - layer.kh) // layer.stride + 1
        wo = (w - layer.kw) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"Conv2D window {layer.kh}x{layer.kw} too large for {in_shape}")
        return (ho, wo, layer.out_channels)
    if isinstance(layer, MaxPool2D):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool2D expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        ho = (h - layer.ph) // layer.ph + 1
        wo = (w - layer.pw) // layer.pw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"MaxPool2D window {layer.ph}x{layer.pw} too large for {in_shape}")
        return (ho, wo, c)
    if isinstance(layer, Flatten):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)
    if isinstance(layer, (ReLU, Dropout, BranchDropout, Softmax)):
        return in_shape
    if isinstance(layer, Add):
        raise ShapeError("Add is only valid at a cascade combine point, not in a chain")
    raise TypeError(f"unknown layer {layer!r}")


def param_shapes(layer: Layer, in_shape: Shape) -> dict[str, Shape]:
    """Parameter tensor shapes for ``layer``, keyed by tensor name."""
    if isinstance(layer, Dense):
        if len(in_shape) != 1:
            raise ShapeError(
                f"Dense expects a flat input, got shape {in_shape}; add Flatten first"
            )
        return {"w": (in_shape[0], layer.units), "b": (layer.units,)}
    if isinstance(layer, Conv2D):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2D expects (H, W, C) input, got {in_shape}")
        return {
            "w": (layer.kh, layer.kw, in_shape[2], layer.out_channels),
            "b": (layer.out_channels,),
        }
    return {}


def chain_shapes(layers: tuple[Layer, ...] | list[Layer], input_shape: Shape) -> list[Shape]:
    """Per-layer output shapes of a sequential chain (validates it composes)."""
    shapes = []
    shape = tuple(input_shape)
    for layer in layers:
        shape = output_shape(layer, shape)
        shapes.append(shape)
    return shapes


def count_parameters(layers: tuple[Layer, ...] | list[Layer], input_shape: Shape) -> int:
    """Total scalar parameter count of a sequential chain."""
    total = 0
    shape = tuple(input_shape)
    for layer in layers:
        for pshape in param_shapes(layer, shape).values():
            n = 1
            for d in pshape:
                n *= d
            total += n
        shape = output_shape(layer, shape)
    return total


def count_operations(layers: tuple[Layer, ...] | list[Layer], input_shape: Shape) -> int:
    """Rough multiply-accumulate estimate for one forward pass of one sample.

    Counting conventions for operation totals vary widely between tools;
    this estimate (MACs for Dense/Conv2D, one op per element for
    activations and pooling) is for relative comparisons only.
    """
    total = 0
    shape = tuple(input_shape)
    for layer in layers:
        out = output_shape(layer, shape)
        n_out = 1
        for d in out:
            n_out *= d
        if isinstance(layer, Dense):
            total += shape[0] * layer.units + layer.units
        elif isinstance(layer, Conv2D):
            total += n_out * (layer.kh * layer.kw * shape[2] + 1)
        else:
            total += n_out
        shape = out
    return total
