"""Dense 3D convolution kernels with hand-written backward passes.

Tensors are numpy float64 arrays of shape (W, H, D, C).  Convolutions use
"same" zero padding: stride-s output spatial size is ceil(n / s), padding
split floor-before / rest-after.  The transposed convolution is defined as
the exact adjoint of the matching forward convolution, so its output
spatial size is n * s and the inner-product identity

    <conv3d(x; K), y> == <x, conv3d_transpose(y; K)>

holds to machine precision for zero bias.

Kernel layouts:
  conv:            (k, k, k, C_in, C_out)
  conv_transpose:  (k, k, k, C_out, C_in)   -- i.e. (output, input) channels
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from ..errors import ShapeError

_EXP_CLIP = 40.0


def _check_tensor(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected a 4D tensor, got shape {x.shape}")
    return x


def _check_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 5:
        raise ShapeError(f"expected a 5D kernel, got shape {kernel.shape}")
    k0, k1, k2 = kernel.shape[:3]
    if not (k0 == k1 == k2) or k0 % 2 == 0:
        raise ShapeError(f"kernel must be cubic with odd size, got {kernel.shape[:3]}")
    return kernel


def _same_pads(n: int, k: int, stride: int) -> Tuple[int, int, int]:
    out = -(-n // stride)  # ceil
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


# ---------------------------------------------------------------------------
# raw convolution and its partial derivatives


def conv3d_raw(x: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlation with "same" padding, no bias or activation."""
    x = _check_tensor(x)
    kernel = _check_kernel(kernel)
    k = kernel.shape[0]
    if x.shape[3] != kernel.shape[3]:
        raise ShapeError(
            f"input has {x.shape[3]} channels, kernel expects {kernel.shape[3]}"
        )
    dims = [_same_pads(n, k, stride) for n in x.shape[:3]]
    (ow, pw, _), (oh, ph, _), (od, pd, _) = dims
    xp = np.pad(x, [(pw, dims[0][2]), (ph, dims[1][2]), (pd, dims[2][2]), (0, 0)])
    out = np.zeros((ow, oh, od, kernel.shape[4]), dtype=np.float64)
    for dx in range(k):
        for dy in range(k):
            for dz in range(k):
                patch = xp[dx:dx + ow * stride:stride,
                           dy:dy + oh * stride:stride,
                           dz:dz + od * stride:stride, :]
                out += patch @ kernel[dx, dy, dz]
    return out


def conv3d_input_grad(dout: np.ndarray, kernel: np.ndarray, stride: int,
                      in_spatial: Tuple[int, int, int]) -> np.ndarray:
    """Adjoint of conv3d_raw with respect to its input."""
    dout = _check_tensor(dout)
    kernel = _check_kernel(kernel)
    k = kernel.shape[0]
    dims = [_same_pads(n, k, stride) for n in in_spatial]
    (ow, pw, _), (oh, ph, _), (od, pd, _) = dims
    if dout.shape[:3] != (ow, oh, od):
        raise ShapeError(
            f"output gradient spatial {dout.shape[:3]} does not match {(ow, oh, od)}"
        )
    if dout.shape[3] != kernel.shape[4]:
        raise ShapeError(
            f"output gradient has {dout.shape[3]} channels, kernel emits {kernel.shape[4]}"
        )
    padded_shape = tuple(n + d[1] + d[2] for n, d in zip(in_spatial, dims))
    dxp = np.zeros(padded_shape + (kernel.shape[3],), dtype=np.float64)
    for dx in range(k):
        for dy in range(k):
            for dz in range(k):
                dxp[dx:dx + ow * stride:stride,
                    dy:dy + oh * stride:stride,
                    dz:dz + od * stride:stride, :] += dout @ kernel[dx, dy, dz].T
    return dxp[pw:pw + in_spatial[0], ph:ph + in_spatial[1], pd:pd + in_spatial[2], :]


def conv3d_kernel_grad(x: np.ndarray, dout: np.ndarray, kernel_size: int,
                       stride: int) -> np.ndarray:
    """Gradient of conv3d_raw with respect to the kernel."""
    x = _check_tensor(x)
    dout = _check_tensor(dout)
    k = kernel_size
    dims = [_same_pads(n, k, stride) for n in x.shape[:3]]
    (ow, pw, _), (oh, ph, _), (od, pd, _) = dims
    xp = np.pad(x, [(pw, dims[0][2]), (ph, dims[1][2]), (pd, dims[2][2]), (0, 0)])
    dk = np.zeros((k, k, k, x.shape[3], dout.shape[3]), dtype=np.float64)
    for dx in range(k):
        for dy in range(k):
            for dz in range(k):
                patch = xp[dx:dx + ow * stride:stride,
                           dy:dy + oh * stride:stride,
                           dz:dz + od * stride:stride, :]
                dk[dx, dy, dz] = np.tensordot(patch, dout, axes=([0, 1, 2], [0, 1, 2]))
    return dk


# ---------------------------------------------------------------------------
# activations


def apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    if activation == "exp":
        return np.exp(np.clip(z, -_EXP_CLIP, _EXP_CLIP))
    if activation == "none":
        return z
    raise ShapeError(f"unknown activation {activation!r}")


def activation_grad(z: np.ndarray, out: np.ndarray, dout: np.ndarray,
                    activation: str) -> np.ndarray:
    if activation == "relu":
        return dout * (z > 0.0)
    if activation == "sigmoid":
        return dout * out * (1.0 - out)
    if activation == "exp":
        return dout * out * (np.abs(z) < _EXP_CLIP)
    if activation == "none":
        return dout
    raise ShapeError(f"unknown activation {activation!r}")


# ---------------------------------------------------------------------------
# public layer ops


def conv3d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1,
           activation: str = "none") -> np.ndarray:
    """3D convolution: same padding, stride 1 or 2, elementwise activation."""
    z = conv3d_raw(x, kernel, stride) + np.asarray(bias, dtype=np.float64)
    return apply_activation(z, activation)


def conv3d_transpose(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                     stride: int = 1, activation: str = "none") -> np.ndarray:
    """Transposed 3D convolution: output spatial size is input * stride.

    Defined as the adjoint of conv3d with the same kernel, so the kernel
    layout is (k, k, k, C_out, C_in).
    """
    x = _check_tensor(x)
    kernel = _check_kernel(kernel)
    if x.shape[3] != kernel.shape[4]:
        raise ShapeError(
            f"input has {x.shape[3]} channels, transpose kernel expects {kernel.shape[4]}"
        )
    out_spatial = tuple(n * stride for n in x.shape[:3])
    z = conv3d_input_grad(x, kernel, stride, out_spatial)
    z = z + np.asarray(bias, dtype=np.float64)
    return apply_activation(z, activation)


class ConvCache:
    """Saved forward state for one conv / conv-transpose primitive."""

    __slots__ = ("kind", "x", "z", "out", "kernel", "stride", "activation")

    def __init__(self, kind, x, z, out, kernel, stride, activation):
        self.kind = kind
        self.x = x
        self.z = z
        self.out = out
        self.kernel = kernel
        self.stride = stride
        self.activation = activation


def conv_forward_cached(kind: str, x: np.ndarray, kernel: np.ndarray,
                        bias: np.ndarray, stride: int, activation: str) -> Tuple[np.ndarray, ConvCache]:
    x = _check_tensor(x)
    if kind == "conv":
        z = conv3d_raw(x, kernel, stride) + bias
    elif kind == "conv_transpose":
        kernel = _check_kernel(kernel)
        if x.shape[3] != kernel.shape[4]:
            raise ShapeError(
                f"input has {x.shape[3]} channels, transpose kernel expects {kernel.shape[4]}"
            )
        out_spatial = tuple(n * stride for n in x.shape[:3])
        z = conv3d_input_grad(x, kernel, stride, out_spatial) + bias
    else:
        raise ShapeError(f"unknown primitive kind {kind!r}")
    out = apply_activation(z, activation)
    return out, ConvCache(kind, x, z, out, kernel, stride, activation)


def conv_backward(cache: ConvCache, dout: np.ndarray):
    """Backward through one primitive; returns (dx, dkernel, dbias)."""
    dz = activation_grad(cache.z, cache.out, dout, cache.activation)
    dbias = dz.sum(axis=(0, 1, 2))
    if cache.kind == "conv":
        dx = conv3d_input_grad(dz, cache.kernel, cache.stride, cache.x.shape[:3])
        dk = conv3d_kernel_grad(cache.x, dz, cache.kernel.shape[0], cache.stride)
    else:
        # Transpose layer: its output played the "conv input" role, so the
        # roles of input/output swap in the partial derivatives.
        dx = conv3d_raw(dz, cache.kernel, cache.stride)
        dk = conv3d_kernel_grad(dz, cache.x, cache.kernel.shape[0], cache.stride)
    return dx, dk, dbias


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal samples with |value| <= 2 std, resampled past the bound."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_kernel(rng: np.random.Generator, k: int, c_in: int, c_out: int,
                transpose: bool) -> np.ndarray:
    """Seeded truncated-normal kernel, std 1/sqrt(fan_in)."""
    std = 1.0 / math.sqrt(k ** 3 * c_in)
    if transpose:
        return truncated_normal(rng, (k, k, k, c_out, c_in), std)
    return truncated_normal(rng, (k, k, k, c_in, c_out), std)
