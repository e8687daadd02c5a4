"""Compression model: transforms plus entropy models as one trainable unit.

Two model kinds exist.  The baseline couples an analysis/synthesis pair
with a per-channel factorized density over the quantized latents.  The
hyperprior adds a second autoencoder over the latents whose decoded output
predicts per-element Gaussian scales for the latent coder, while the
factorized density moves to the hyper-latents.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .entropy.models import FactorizedDensity, GaussianConditional
from .errors import ConfigurationError, ShapeError
from .nn.transforms import (
    TransformSpec,
    TransformWeights,
    flatten_weights,
    forward_transform,
    init_transform_weights,
    transform_spec,
    unflatten_weights,
)
from .nn.weights import WeightStore

MODEL_KINDS = ("baseline", "hyperprior")
TRANSFORM_KINDS = ("v1", "v2")

# Filter count used in the published experiments; desk-scale work uses 8.
PAPER_SCALE_FILTERS = 64
DESK_SCALE_FILTERS = 8


class CompressionModel:
    """Holds transform weights and entropy model parameters."""

    def __init__(self, model_kind: str, transform_kind: str, filters: int,
                 block_size: int):
        if model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {model_kind!r}")
        if transform_kind not in TRANSFORM_KINDS:
            raise ConfigurationError(f"unknown transform kind {transform_kind!r}")
        if block_size < 8 or (block_size & (block_size - 1)) != 0:
            raise ConfigurationError("block size must be a power of two >= 8")
        if model_kind == "hyperprior" and block_size < 16:
            raise ConfigurationError(
                "hyperprior needs block size >= 16 (latents must span 2 voxels)"
            )
        self.model_kind = model_kind
        self.transform_kind = transform_kind
        self.filters = int(filters)
        self.block_size = int(block_size)

        suffix = transform_kind
        self.analysis_spec: TransformSpec = transform_spec(f"analysis_{suffix}", filters)
        self.synthesis_spec: TransformSpec = transform_spec(f"synthesis_{suffix}", filters)
        self.analysis_weights: TransformWeights = []
        self.synthesis_weights: TransformWeights = []
        self.hyper_analysis_spec: Optional[TransformSpec] = None
        self.hyper_synthesis_spec: Optional[TransformSpec] = None
        self.hyper_analysis_weights: TransformWeights = []
        self.hyper_synthesis_weights: TransformWeights = []
        if model_kind == "hyperprior":
            self.hyper_analysis_spec = transform_spec("hyper_analysis", filters)
            self.hyper_synthesis_spec = transform_spec("hyper_synthesis", filters)
        self.density: Optional[FactorizedDensity] = None  # over y (baseline) or z
        self.gaussian = GaussianConditional()

    # -- construction ---------------------------------------------------------

    @classmethod
    def create(cls, model_kind: str, transform_kind: str, filters: int,
               block_size: int, seed: int) -> "CompressionModel":
        model = cls(model_kind, transform_kind, filters, block_size)
        rng = np.random.default_rng([seed, 0])
        model.analysis_weights = init_transform_weights(model.analysis_spec, rng)
        model.synthesis_weights = init_transform_weights(model.synthesis_spec, rng)
        if model.hyper_analysis_spec is not None:
            model.hyper_analysis_weights = init_transform_weights(
                model.hyper_analysis_spec, rng)
            model.hyper_synthesis_weights = init_transform_weights(
                model.hyper_synthesis_spec, rng)
        model.density = FactorizedDensity.create(model.filters, rng)
        return model

    # -- weight store round trip -----------------------------------------------

    def to_store(self) -> WeightStore:
        store = WeightStore({
            "format": "voxcodec-model",
            "model_kind": self.model_kind,
            "transform_kind": self.transform_kind,
            "filters": str(self.filters),
            "block_size": str(self.block_size),
        })
        store.set_group("analysis", flatten_weights(self.analysis_weights))
        store.set_group("synthesis", flatten_weights(self.synthesis_weights))
        if self.model_kind == "hyperprior":
            store.set_group("hyper_analysis", flatten_weights(self.hyper_analysis_weights))
            store.set_group("hyper_synthesis", flatten_weights(self.hyper_synthesis_weights))
        store.set_group("density", self.density.params())
        return store

    @classmethod
    def from_store(cls, store: WeightStore) -> "CompressionModel":
        try:
            model = cls(
                store.meta["model_kind"],
                store.meta["transform_kind"],
                int(store.meta["filters"]),
                int(store.meta["block_size"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"weight store lacks metadata key {exc}")
        model.analysis_weights = unflatten_weights(
            init_transform_weights(model.analysis_spec, np.random.default_rng(0)),
            store.group("analysis"))
        model.synthesis_weights = unflatten_weights(
            init_transform_weights(model.synthesis_spec, np.random.default_rng(0)),
            store.group("synthesis"))
        if model.model_kind == "hyperprior":
            model.hyper_analysis_weights = unflatten_weights(
                init_transform_weights(model.hyper_analysis_spec, np.random.default_rng(0)),
                store.group("hyper_analysis"))
            model.hyper_synthesis_weights = unflatten_weights(
                init_transform_weights(model.hyper_synthesis_spec, np.random.default_rng(0)),
                store.group("hyper_synthesis"))
        density = FactorizedDensity.create(model.filters, np.random.default_rng(0))
        density.set_params(store.group("density"))
        model.density = density
        model._validate_shapes()
        return model

    def _validate_shapes(self) -> None:
        for spec, weights in self._spec_weight_pairs():
            if len(weights) != len(spec.layers):
                raise ShapeError(f"{spec.name}: layer count mismatch")

    def _spec_weight_pairs(self):
        pairs = [(self.analysis_spec, self.analysis_weights),
                 (self.synthesis_spec, self.synthesis_weights)]
        if self.model_kind == "hyperprior":
            pairs.append((self.hyper_analysis_spec, self.hyper_analysis_weights))
            pairs.append((self.hyper_synthesis_spec, self.hyper_synthesis_weights))
        return pairs

    # -- trainable parameters ---------------------------------------------------

    def parameters(self) -> List[np.ndarray]:
        flat: List[np.ndarray] = []
        for _spec, weights in self._spec_weight_pairs():
            flat.extend(flatten_weights(weights))
        flat.extend(self.density.params())
        return flat

    def set_parameters(self, arrays: List[np.ndarray]) -> None:
        it = iter(arrays)
        for spec, weights in self._spec_weight_pairs():
            count = sum(2 * len(entry) for entry in weights)
            chunk = [next(it) for _ in range(count)]
            new_weights = unflatten_weights(weights, chunk)
            if spec.name.startswith("analysis"):
                self.analysis_weights = new_weights
            elif spec.name.startswith("synthesis"):
                self.synthesis_weights = new_weights
            elif spec.name == "hyper_analysis":
                self.hyper_analysis_weights = new_weights
            else:
                self.hyper_synthesis_weights = new_weights
        self.density.set_params([next(it) for _ in range(8)])

    # -- inference helpers --------------------------------------------------------

    def analyze(self, x: np.ndarray) -> np.ndarray:
        y, _ = forward_transform(self.analysis_spec, self.analysis_weights, x,
                                 want_tape=False)
        return y

    def synthesize(self, y: np.ndarray) -> np.ndarray:
        x, _ = forward_transform(self.synthesis_spec, self.synthesis_weights, y,
                                 want_tape=False)
        return x

    def hyper_analyze(self, y: np.ndarray) -> np.ndarray:
        z, _ = forward_transform(self.hyper_analysis_spec,
                                 self.hyper_analysis_weights, y, want_tape=False)
        return z

    def hyper_synthesize(self, z: np.ndarray) -> np.ndarray:
        sigma, _ = forward_transform(self.hyper_synthesis_spec,
                                     self.hyper_synthesis_weights, z, want_tape=False)
        return sigma

    def latent_shape(self, block_size: int):
        s = block_size // self.analysis_spec.downsample_factor
        return (s, s, s, self.filters)

    def hyper_latent_shape(self, block_size: int):
        s = block_size // self.analysis_spec.downsample_factor
        h = -(-s // 2)
        return (h, h, h, self.filters)
