"""Analysis/synthesis transform definitions and tape-based backprop.

Six canonical transforms are built here:

  analysis_v1:     [C  N 9 s2] [C  N 5 s2] [C  N 5 s2]
  synthesis_v1:    [CT N 5 s2] [CT N 5 s2] [CT 1 9 s2]
  analysis_v2:     AB(4N) AB(2N) AB(N) [C N 3]
  synthesis_v2:    SB(N) SB(2N) SB(4N) [C 1 3]
  hyper_analysis:  [C  N 3] [C  N 3 s2] [C  N 3]
  hyper_synthesis: [CT N 3] [CT N 3 s2] [CT N 3]

AB/SB are stride-2 residual blocks: a strided (transposed) convolution
whose output both feeds two stride-1 convolutions and skips to an additive
join after them.  ReLU follows every convolution except the last synthesis
layer (sigmoid, so reconstructions live in (0,1)) and the last
hyper-synthesis layer (exp, so predicted scales stay positive).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, ShapeError, UsageError
from .ops import ConvCache, conv_backward, conv_forward_cached, init_kernel

LayerWeights = List[Tuple[np.ndarray, np.ndarray]]  # [(kernel, bias)] per primitive
TransformWeights = List[LayerWeights]

_KINDS = ("conv", "conv_transpose", "analysis_block", "synthesis_block")
_ACTIVATIONS = ("relu", "sigmoid", "exp", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int
    kernel: int
    stride: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.filters < 1:
            raise ConfigurationError("filters must be >= 1")
        if self.kernel % 2 == 0:
            raise ConfigurationError("kernel size must be odd")
        if self.stride not in (1, 2):
            raise ConfigurationError("stride must be 1 or 2")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class TransformSpec:
    name: str
    layers: Tuple[LayerSpec, ...]
    in_channels: int = 1

    @property
    def downsample_factor(self) -> int:
        f = 1
        for layer in self.layers:
            if layer.kind in ("conv", "analysis_block"):
                f *= layer.stride
        return f

    @property
    def out_channels(self) -> int:
        return self.layers[-1].filters


def analysis_v1(filters: int) -> TransformSpec:
    return TransformSpec("analysis_v1", (
        LayerSpec("conv", filters, 9, 2),
        LayerSpec("conv", filters, 5, 2),
        LayerSpec("conv", filters, 5, 2),
    ))


def synthesis_v1(filters: int) -> TransformSpec:
    # The final layer emits the single occupancy channel through a sigmoid
    # so the reconstruction inverts the analysis shape exactly.
    return TransformSpec("synthesis_v1", (
        LayerSpec("conv_transpose", filters, 5, 2),
        LayerSpec("conv_transpose", filters, 5, 2),
        LayerSpec("conv_transpose", 1, 9, 2, activation="sigmoid"),
    ), in_channels=filters)


def analysis_v2(n3: int) -> TransformSpec:
    # Filter counts grow toward the input: N1 = 4*N3, N2 = 2*N3.
    return TransformSpec("analysis_v2", (
        LayerSpec("analysis_block", 4 * n3, 3, 2),
        LayerSpec("analysis_block", 2 * n3, 3, 2),
        LayerSpec("analysis_block", n3, 3, 2),
        LayerSpec("conv", n3, 3, 1),
    ))


def synthesis_v2(n3: int) -> TransformSpec:
    return TransformSpec("synthesis_v2", (
        LayerSpec("synthesis_block", n3, 3, 2),
        LayerSpec("synthesis_block", 2 * n3, 3, 2),
        LayerSpec("synthesis_block", 4 * n3, 3, 2),
        LayerSpec("conv", 1, 3, 1, activation="sigmoid"),
    ), in_channels=n3)


def hyper_analysis(filters: int) -> TransformSpec:
    return TransformSpec("hyper_analysis", (
        LayerSpec("conv", filters, 3, 1),
        LayerSpec("conv", filters, 3, 2),
        LayerSpec("conv", filters, 3, 1),
    ), in_channels=filters)


def hyper_synthesis(filters: int) -> TransformSpec:
    return TransformSpec("hyper_synthesis", (
        LayerSpec("conv_transpose", filters, 3, 1),
        LayerSpec("conv_transpose", filters, 3, 2),
        LayerSpec("conv_transpose", filters, 3, 1, activation="exp"),
    ), in_channels=filters)


_BUILDERS = {
    "analysis_v1": analysis_v1,
    "synthesis_v1": synthesis_v1,
    "analysis_v2": analysis_v2,
    "synthesis_v2": synthesis_v2,
    "hyper_analysis": hyper_analysis,
    "hyper_synthesis": hyper_synthesis,
}


def transform_spec(name: str, filters: int) -> TransformSpec:
    try:
        return _BUILDERS[name](filters)
    except KeyError:
        raise ConfigurationError(f"unknown transform {name!r}")


def _primitives(layer: LayerSpec, c_in: int):
    """Lower a layer spec to its (kind, k, c_in, c_out, stride, activation) primitives."""
    n = layer.filters
    if layer.kind == "conv":
        return [("conv", layer.kernel, c_in, n, layer.stride, layer.activation)]
    if layer.kind == "conv_transpose":
        return [("conv_transpose", layer.kernel, c_in, n, layer.stride, layer.activation)]
    base = "conv" if layer.kind == "analysis_block" else "conv_transpose"
    return [
        (base, layer.kernel, c_in, n, layer.stride, layer.activation),
        (base, layer.kernel, n, n, 1, layer.activation),
        (base, layer.kernel, n, n, 1, layer.activation),
    ]


def init_transform_weights(spec: TransformSpec, rng: np.random.Generator) -> TransformWeights:
    """Seeded truncated-normal kernels, zero biases."""
    weights: TransformWeights = []
    c = spec.in_channels
    for layer in spec.layers:
        entry: LayerWeights = []
        for kind, k, ci, co, _stride, _act in _primitives(layer, c):
            kernel = init_kernel(rng, k, ci, co, transpose=(kind == "conv_transpose"))
            entry.append((kernel, np.zeros(co, dtype=np.float64)))
        weights.append(entry)
        c = layer.filters
    return weights


class Tape:
    """Forward record of one transform pass, consumed by backward_transform."""

    def __init__(self, spec: TransformSpec, output_shape):
        self.spec = spec
        self.output_shape = tuple(output_shape)
        self.layers: List[dict] = []
        self.consumed = False


def forward_transform(spec: TransformSpec, weights, x: np.ndarray,
                      want_tape: bool = True):
    """Run a transform; returns (output, tape).  Pass want_tape=False to skip
    recording intermediates (inference only, tape is None)."""
    weights = _coerce_weights(spec, weights)
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 4:
        raise ShapeError(f"expected a 4D input tensor, got shape {h.shape}")
    if h.shape[3] != spec.in_channels:
        raise ShapeError(
            f"{spec.name} expects {spec.in_channels} input channels, got {h.shape[3]}"
        )
    records = []
    for layer, entry in zip(spec.layers, weights):
        prims = _primitives(layer, h.shape[3])
        if layer.kind in ("conv", "conv_transpose"):
            (kind, _k, _ci, _co, stride, act) = prims[0]
            kernel, bias = entry[0]
            h, cache = conv_forward_cached(kind, h, kernel, bias, stride, act)
            records.append({"kind": layer.kind, "caches": [cache]})
        else:
            caches = []
            (kind, _k, _ci, _co, stride, act) = prims[0]
            kernel, bias = entry[0]
            skip, c0 = conv_forward_cached(kind, h, kernel, bias, stride, act)
            caches.append(c0)
            b = skip
            for p, (kernel, bias) in zip(prims[1:], entry[1:]):
                b, cache = conv_forward_cached(p[0], b, kernel, bias, p[4], p[5])
                caches.append(cache)
            h = skip + b
            records.append({"kind": layer.kind, "caches": caches})
    if not want_tape:
        return h, None
    tape = Tape(spec, h.shape)
    tape.layers = records
    return h, tape


def backward_transform(tape: Tape, dout: np.ndarray):
    """Backward through a recorded pass.

    Returns (input_gradient, weight_gradients) where the gradients mirror
    the TransformWeights structure.  A tape can be consumed once.
    """
    if tape is None or tape.consumed:
        raise UsageError("tape is missing or already consumed")
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != tape.output_shape:
        raise UsageError(
            f"output gradient shape {dout.shape} does not match tape {tape.output_shape}"
        )
    tape.consumed = True
    grads: TransformWeights = []
    d = dout
    for record in reversed(tape.layers):
        caches: Sequence[ConvCache] = record["caches"]
        if record["kind"] in ("conv", "conv_transpose"):
            d, dk, db = conv_backward(caches[0], d)
            grads.append([(dk, db)])
        else:
            # d flows into both the skip and the two-conv branch.
            d_branch = d
            entry = []
            for cache in reversed(caches[1:]):
                d_branch, dk, db = conv_backward(cache, d_branch)
                entry.append((dk, db))
            d_skip = d + d_branch
            d, dk, db = conv_backward(caches[0], d_skip)
            entry.append((dk, db))
            grads.append(list(reversed(entry)))
    grads.reverse()
    return d, grads


def residual_block_forward(x: np.ndarray, entry: LayerWeights, kind: str) -> np.ndarray:
    """One stride-2 residual block on its own (analysis or synthesis flavor)."""
    if kind not in ("analysis", "synthesis"):
        raise ConfigurationError(f"unknown residual block kind {kind!r}")
    filters = entry[0][1].shape[0]
    layer = LayerSpec(f"{kind}_block", filters, 3, 2)
    spec = TransformSpec(f"{kind}_block", (layer,), in_channels=np.asarray(x).shape[3])
    out, _ = forward_transform(spec, [entry], x, want_tape=False)
    return out


def _coerce_weights(spec: TransformSpec, weights) -> TransformWeights:
    # Accept either the raw per-transform structure or a WeightStore.
    group = getattr(weights, "transform_weights", None)
    if callable(group):
        return group(spec)
    if len(weights) != len(spec.layers):
        raise ShapeError(
            f"{spec.name} has {len(spec.layers)} layers, weights carry {len(weights)}"
        )
    return weights


def flatten_weights(weights: TransformWeights) -> List[np.ndarray]:
    flat: List[np.ndarray] = []
    for entry in weights:
        for kernel, bias in entry:
            flat.append(kernel)
            flat.append(bias)
    return flat


def unflatten_weights(template: TransformWeights, flat: Sequence[np.ndarray]) -> TransformWeights:
    out: TransformWeights = []
    it = iter(flat)
    for entry in template:
        new_entry: LayerWeights = []
        for _ in entry:
            new_entry.append((next(it), next(it)))
        out.append(new_entry)
    return out
