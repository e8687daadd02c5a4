"""Quantization, likelihood models and rate estimation.

Two likelihood models back the coder:

* FactorizedDensity -- one learned univariate cumulative per channel,
  built from three monotone affine stages of hidden width 3.  Stage
  matrices pass through softplus and the inner mixing factors through
  tanh, which keeps the cumulative non-decreasing by construction.
* GaussianConditional -- zero-mean normal whose per-element scale is
  predicted by the hyper synthesis transform.

Both report the probability mass of the unit-width bin around a value and
carry hand-written backward passes for training.
"""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np
from scipy.special import expit, ndtr

from ..errors import DomainError, ShapeError

LIKELIHOOD_FLOOR = 1e-9
SIGMA_MIN = 0.11

_STAGE_WIDTHS = [(1, 3), (3, 3), (3, 1)]  # (in, out) per affine stage


def quantize(y: np.ndarray) -> np.ndarray:
    """Round half away from zero to int64."""
    y = np.asarray(y, dtype=np.float64)
    return (np.sign(y) * np.floor(np.abs(y) + 0.5)).astype(np.int64)


def noise_proxy(y: np.ndarray, seed) -> np.ndarray:
    """Quantization proxy for training: add i.i.d. uniform (-0.5, 0.5) noise.

    `seed` may be an int or a numpy Generator; output is deterministic for
    a given seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = np.asarray(y, dtype=np.float64)
    u = rng.random(y.shape) - 0.5
    u = np.where(u == -0.5, 0.0, u)  # keep the support open
    return y + u


def _softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


class FactorizedDensity:
    """Learned per-channel cumulative distribution.

    Parameters (8 arrays, all with a leading channel axis):
      matrices m0 (C,3,1), m1 (C,3,3), m2 (C,1,3)  -- pre-softplus
      biases   b0 (C,3),   b1 (C,3),   b2 (C,1)
      factors  a0 (C,3),   a1 (C,3)                -- pre-tanh
    """

    def __init__(self, channels: int, matrices, biases, factors):
        self.channels = channels
        self.matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.factors = [np.asarray(a, dtype=np.float64) for a in factors]
        for i, (w_in, w_out) in enumerate(_STAGE_WIDTHS):
            if self.matrices[i].shape != (channels, w_out, w_in):
                raise ShapeError(f"stage {i} matrix has shape {self.matrices[i].shape}")
            if self.biases[i].shape != (channels, w_out):
                raise ShapeError(f"stage {i} bias has shape {self.biases[i].shape}")
        for i in range(2):
            if self.factors[i].shape != (channels, _STAGE_WIDTHS[i][1]):
                raise ShapeError(f"stage {i} factor has shape {self.factors[i].shape}")

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator,
               init_scale: float = 3.0) -> "FactorizedDensity":
        """Initial cumulative close to a logistic with the given scale."""
        h = (1.0 / (9.0 * init_scale)) ** (1.0 / 3.0)
        raw = softplus_inverse(h)
        matrices = [np.full((channels, o, i), raw) for i, o in _STAGE_WIDTHS]
        biases = [
            rng.uniform(-0.5, 0.5, (channels, o)) for _i, o in _STAGE_WIDTHS[:2]
        ] + [np.zeros((channels, 1))]
        factors = [np.zeros((channels, o)) for _i, o in _STAGE_WIDTHS[:2]]
        return cls(channels, matrices, biases, factors)

    @classmethod
    def logistic(cls, channels: int, scale: float = 1.0) -> "FactorizedDensity":
        """Exact logistic cumulative with the given scale (for tests/reference)."""
        h = (1.0 / (9.0 * scale)) ** (1.0 / 3.0)
        raw = softplus_inverse(h)
        matrices = [np.full((channels, o, i), raw) for i, o in _STAGE_WIDTHS]
        biases = [np.zeros((channels, o)) for _i, o in _STAGE_WIDTHS]
        factors = [np.zeros((channels, o)) for _i, o in _STAGE_WIDTHS[:2]]
        return cls(channels, matrices, biases, factors)

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> List[np.ndarray]:
        return [self.matrices[0], self.biases[0], self.factors[0],
                self.matrices[1], self.biases[1], self.factors[1],
                self.matrices[2], self.biases[2]]

    def set_params(self, arrays: List[np.ndarray]) -> None:
        (self.matrices[0], self.biases[0], self.factors[0],
         self.matrices[1], self.biases[1], self.factors[1],
         self.matrices[2], self.biases[2]) = [np.asarray(a, dtype=np.float64)
                                              for a in arrays]

    # -- forward ------------------------------------------------------------

    def _stage_forward(self, x, cache):
        """x: (M, C, 1) column; returns sigmoid output (M, C, 1)."""
        for i in range(3):
            h = _softplus(self.matrices[i])
            u = np.einsum("coi,mci->mco", h, x) + self.biases[i]
            if i < 2:
                t = np.tanh(u)
                a = np.tanh(self.factors[i])
                x_next = u + a * t
                cache.append((x, u, t))
                x = x_next
            else:
                cache.append((x, u, None))
                x = expit(u)
        return x

    def _check_channels(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim < 1 or v.shape[-1] != self.channels:
            raise ShapeError(
                f"tensor has {v.shape[-1] if v.ndim else 0} channels, model has {self.channels}"
            )
        return v

    def cdf(self, v: np.ndarray) -> np.ndarray:
        """Cumulative at v; channel axis last."""
        v = self._check_channels(v)
        flat = v.reshape(-1, self.channels)[..., None]
        out = self._stage_forward(flat, [])
        return out[..., 0].reshape(v.shape)

    def likelihood(self, v: np.ndarray) -> Tuple[np.ndarray, dict]:
        """Mass of the unit bin: cdf(v + 1/2) - cdf(v - 1/2), floored."""
        v = self._check_channels(v)
        flat = v.reshape(-1, self.channels)[..., None]
        hi_cache: list = []
        lo_cache: list = []
        hi = self._stage_forward(flat + 0.5, hi_cache)
        lo = self._stage_forward(flat - 0.5, lo_cache)
        raw = (hi - lo)[..., 0].reshape(v.shape)
        p = np.maximum(raw, LIKELIHOOD_FLOOR)
        cache = {"hi": hi_cache, "lo": lo_cache, "hi_out": hi, "lo_out": lo,
                 "mask": raw > LIKELIHOOD_FLOOR, "shape": v.shape}
        return p, cache

    # -- backward -----------------------------------------------------------

    def _stage_backward(self, cache, d_out):
        """Backprop one cumulative pass; returns (d_input, param grads)."""
        grads = [np.zeros_like(p) for p in self.params()]
        d = d_out
        for i in (2, 1, 0):
            x, u, t = cache[i]
            if i == 2:
                s = expit(u)
                du = d * s * (1.0 - s)
            else:
                a = np.tanh(self.factors[i])
                du = d * (1.0 + a * (1.0 - t * t))
                grads[3 * i + 2] += np.einsum("mco,mco->co", d, t) * (1.0 - a * a)
            h = _softplus(self.matrices[i])
            dh = np.einsum("mco,mci->coi", du, x)
            grads[3 * i] += dh * expit(self.matrices[i])
            grads[3 * i + 1] += du.sum(axis=0)
            d = np.einsum("coi,mco->mci", h, du)
        return d, grads

    def backward(self, cache: dict, d_p: np.ndarray):
        """Gradients of sum(d_p * likelihood) w.r.t. input and parameters."""
        d_p = np.asarray(d_p, dtype=np.float64) * cache["mask"]
        flat = d_p.reshape(-1, self.channels)[..., None]
        d_hi, g_hi = self._stage_backward(cache["hi"], flat)
        d_lo, g_lo = self._stage_backward(cache["lo"], -flat)
        dv = (d_hi + d_lo)[..., 0].reshape(cache["shape"])
        grads = [a + b for a, b in zip(g_hi, g_lo)]
        return dv, grads


class GaussianConditional:
    """Zero-mean Gaussian bin masses with a scale floor."""

    def __init__(self, sigma_min: float = SIGMA_MIN):
        if sigma_min <= 0:
            raise DomainError("sigma_min must be positive")
        self.sigma_min = float(sigma_min)

    def likelihood(self, v: np.ndarray, sigma: np.ndarray) -> Tuple[np.ndarray, dict]:
        v = np.asarray(v, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if v.shape != sigma.shape:
            raise ShapeError(f"value shape {v.shape} != scale shape {sigma.shape}")
        sig = np.maximum(sigma, self.sigma_min)
        hi = (v + 0.5) / sig
        lo = (v - 0.5) / sig
        raw = ndtr(hi) - ndtr(lo)
        p = np.maximum(raw, LIKELIHOOD_FLOOR)
        cache = {"hi": hi, "lo": lo, "sig": sig,
                 "sigma_mask": sigma > self.sigma_min,
                 "mask": raw > LIKELIHOOD_FLOOR}
        return p, cache

    @staticmethod
    def _phi(x):
        return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

    def backward(self, cache: dict, d_p: np.ndarray):
        """Returns (d_value, d_sigma) for sum(d_p * likelihood)."""
        d_p = np.asarray(d_p, dtype=np.float64) * cache["mask"]
        hi, lo, sig = cache["hi"], cache["lo"], cache["sig"]
        phi_hi = self._phi(hi)
        phi_lo = self._phi(lo)
        dv = d_p * (phi_hi - phi_lo) / sig
        dsig = d_p * (phi_lo * lo - phi_hi * hi) / sig
        dsig = dsig * cache["sigma_mask"]
        return dv, dsig


def gaussian_likelihood(v: np.ndarray, sigma: np.ndarray,
                        gc: GaussianConditional) -> np.ndarray:
    p, _ = gc.likelihood(v, sigma)
    return p


def factorized_likelihood(v: np.ndarray, model: FactorizedDensity) -> np.ndarray:
    p, _ = model.likelihood(v)
    return p


def rate_bits(probabilities: np.ndarray) -> float:
    """Total information content -sum(log2 p) in bits."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size and (p.min() <= 0.0 or p.max() > 1.0):
        raise DomainError("probabilities must lie in (0, 1]")
    return float(-np.log2(p).sum())


def rate_bits_grad(probabilities: np.ndarray) -> np.ndarray:
    """d rate_bits / d p."""
    p = np.asarray(probabilities, dtype=np.float64)
    return -1.0 / (p * math.log(2.0))
