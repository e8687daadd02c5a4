"""Binarization of soft block reconstructions.

Occupancy uses the step rule x_soft >= t.  The 8-bit code i selects
t = (i + 0.5) / 256, keeping both endpoints strictly inside (0, 1).
Optimal thresholding scans all 256 candidates for the one minimizing a
block-local distortion metric; thresholds falling between the same two
reconstruction levels are evaluated once.

A block whose thresholded reconstruction is empty falls back to its single
most confident voxel, on both encoder and decoder, so occupied blocks
always emit geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import VoxelSet
from .metrics import d1_mse_arrays, d2_mse_arrays

N_CODES = 256
FIXED_THRESHOLD_CODE = 127  # nearest candidate below 0.5; ties break low


@dataclass(frozen=True)
class ThresholdCode:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_CODES:
            raise ConfigurationError(f"threshold code {self.index} outside [0, 255]")

    @property
    def value(self) -> float:
        return (self.index + 0.5) / N_CODES


def _soft_cube(x_soft: np.ndarray) -> np.ndarray:
    arr = np.asarray(x_soft, dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[3] != 1:
            raise DomainError("soft reconstruction must have one channel")
        arr = arr[..., 0]
    if arr.ndim != 3:
        raise DomainError(f"expected a 3D occupancy volume, got shape {arr.shape}")
    return arr


def _depth_for(side: int) -> int:
    return max(1, int(side - 1).bit_length())


def apply_threshold(x_soft: np.ndarray, t: float) -> VoxelSet:
    """Voxels where the soft occupancy reaches the threshold (>= t)."""
    if not 0.0 < t < 1.0:
        raise DomainError("threshold must lie strictly inside (0, 1)")
    cube = _soft_cube(x_soft)
    coords = np.argwhere(cube >= t)
    return VoxelSet(coords, _depth_for(max(cube.shape)))


def reconstruct_block(x_soft: np.ndarray, code: ThresholdCode) -> Tuple[VoxelSet, bool]:
    """Thresholded voxels, with the argmax fallback for empty results.

    Returns (voxels, used_fallback).  Deterministic, shared by encoder and
    decoder so both sides rebuild identical geometry.
    """
    cube = _soft_cube(x_soft)
    vs = apply_threshold(cube, code.value)
    if len(vs):
        return vs, False
    flat = int(np.argmax(cube))
    coord = np.unravel_index(flat, cube.shape)
    return VoxelSet(np.array([coord], dtype=np.int64), _depth_for(max(cube.shape))), True


@dataclass(frozen=True)
class OptimalThresholdResult:
    code: ThresholdCode
    distortion: float
    fallback: bool


def optimal_threshold(x_soft: np.ndarray, original: VoxelSet, metric: str,
                      reference_normals: Optional[np.ndarray] = None) -> OptimalThresholdResult:
    """Exhaustive scan of the 256 candidate thresholds for one block.

    `metric` is "d1" or "d2"; d2 measures the reconstruction against the
    original voxels using `reference_normals` (one unit normal per original
    voxel, same order).  Candidates with empty reconstructions are skipped;
    ties resolve to the lowest code index.
    """
    metric = metric.lower()
    if metric not in ("d1", "d2"):
        raise ConfigurationError(f"unknown metric {metric!r}")
    if len(original) == 0:
        raise DomainError("optimal thresholding needs a non-empty original block")
    if metric == "d2":
        if reference_normals is None:
            raise DomainError("point-to-plane optimization needs reference normals")
        reference_normals = np.asarray(reference_normals, dtype=np.float64)
        if reference_normals.shape != (len(original), 3):
            raise DomainError("need one reference normal per original voxel")

    cube = _soft_cube(x_soft)
    orig = original.coords.astype(np.float64)
    values = np.sort(cube.reshape(-1))

    # Number of occupied voxels for each candidate; equal counts mean equal
    # reconstructions, so evaluate one representative per run of counts.
    thresholds = (np.arange(N_CODES) + 0.5) / N_CODES
    counts = len(values) - np.searchsorted(values, thresholds, side="left")

    best_code = None
    best_distortion = float("inf")
    last_count = -1
    for i in range(N_CODES):
        c = int(counts[i])
        if c == last_count:
            continue
        last_count = c
        if c == 0:
            continue
        recon = np.argwhere(cube >= thresholds[i]).astype(np.float64)
        if metric == "d1":
            distortion = max(d1_mse_arrays(recon, orig), d1_mse_arrays(orig, recon))
        else:
            distortion = d2_mse_arrays(recon, orig, reference_normals)
        if distortion < best_distortion:
            best_distortion = distortion
            best_code = i

    if best_code is None:
        # Every candidate was empty; the decoder's fallback voxel stands in.
        code = ThresholdCode(N_CODES - 1)
        recon_vs, _ = reconstruct_block(cube, code)
        recon = recon_vs.coords.astype(np.float64)
        if metric == "d1":
            distortion = max(d1_mse_arrays(recon, orig), d1_mse_arrays(orig, recon))
        else:
            distortion = d2_mse_arrays(recon, orig, reference_normals)
        return OptimalThresholdResult(code, distortion, True)
    return OptimalThresholdResult(ThresholdCode(best_code), best_distortion, False)
