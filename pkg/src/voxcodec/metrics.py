"""Geometry quality metrics: D1, D2, PSNR, normals, BD-PSNR.

D1 is the symmetric-max of mean nearest-neighbor squared distances.  D2
projects each displacement onto the reference point's normal before
squaring; when the test cloud carries no normals the reverse direction is
skipped and the value is one-sided.  Nearest neighbors come from a k-d
tree; ties resolve to the lowest point index so results match a
brute-force scan exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DomainError
from .geometry import PointCloud

_TIE_RTOL = 1e-9


def _nearest_indices(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Index of the nearest target point per query point, ties to lowest index."""
    tree = cKDTree(target)
    dist, idx = tree.query(query, k=1)
    # Equidistant neighbors: the tree's pick is arbitrary, so re-resolve any
    # query whose second neighbor sits at the same distance.
    if len(target) > 1:
        dist2, _ = tree.query(query, k=2)
        ambiguous = np.flatnonzero(
            dist2[:, 1] <= dist2[:, 0] * (1.0 + _TIE_RTOL) + 1e-12)
        for q in ambiguous:
            radius = dist[q] * (1.0 + _TIE_RTOL) + 1e-9
            candidates = tree.query_ball_point(query[q], radius)
            d2 = ((target[candidates] - query[q]) ** 2).sum(axis=1)
            best = min(zip(d2, candidates))[1]
            idx[q] = best
    return idx


def d1_mse_arrays(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared nearest-neighbor distance from a to b (one direction)."""
    tree = cKDTree(b)
    dist, _ = tree.query(a, k=1)
    return float((dist ** 2).mean())


def d2_mse_arrays(a: np.ndarray, b: np.ndarray, b_normals: np.ndarray) -> float:
    """Mean squared normal-projected displacement from a to b (one direction)."""
    idx = _nearest_indices(a, b)
    diff = a - b[idx]
    proj = (diff * b_normals[idx]).sum(axis=1)
    return float((proj ** 2).mean())


def d1_mse(a: PointCloud, b: PointCloud) -> float:
    """Symmetric point-to-point MSE: max of both directional means."""
    if len(a) == 0 or len(b) == 0:
        raise DomainError("point-to-point distance needs non-empty clouds")
    pa = a.points.astype(np.float64)
    pb = b.points.astype(np.float64)
    return max(d1_mse_arrays(pa, pb), d1_mse_arrays(pb, pa))


def d2_mse(a: PointCloud, b_ref: PointCloud) -> float:
    """Symmetric point-to-plane MSE against a reference with normals.

    Falls back to the one-sided a -> b_ref value when `a` has no normals
    (decoded clouds usually don't).
    """
    if len(a) == 0 or len(b_ref) == 0:
        raise DomainError("point-to-plane distance needs non-empty clouds")
    if b_ref.normals is None:
        raise DomainError("reference cloud lacks normals for point-to-plane distance")
    pa = a.points.astype(np.float64)
    pb = b_ref.points.astype(np.float64)
    forward = d2_mse_arrays(pa, pb, b_ref.normals)
    if a.normals is None:
        return forward
    return max(forward, d2_mse_arrays(pb, pa, a.normals))


def geometry_psnr(mse: float, bit_depth: int) -> float:
    """Geometry PSNR with peak 3 * (2^b - 1)^2; zero error reports +inf."""
    if mse < 0:
        raise DomainError("mean squared error cannot be negative")
    peak = 3.0 * float((1 << bit_depth) - 1) ** 2
    if mse == 0.0:
        return float("inf")  # lossless
    return 10.0 * math.log10(peak / mse)


def estimate_normals(pc: PointCloud, k: int = 9) -> PointCloud:
    """Per-point unit normals from PCA over the k nearest neighbors.

    The normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance, oriented away from the cloud centroid.  Degenerate
    neighborhoods fall back to (0, 0, 1) with a warning.
    """
    n = len(pc)
    if k < 3:
        raise ConfigurationError("normal estimation needs k >= 3")
    if n <= k:
        raise ConfigurationError(f"normal estimation needs more than k={k} points")
    pts = pc.points.astype(np.float64)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)  # the point itself plus k neighbors
    neighborhoods = pts[idx]
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]
    degenerate = eigvals[:, 2] < 1e-12
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} degenerate normal neighborhoods")
        normals[degenerate] = (0.0, 0.0, 1.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    outward = pts - pts.mean(axis=0)
    flip = (normals * outward).sum(axis=1) < 0.0
    normals[flip] *= -1.0
    return pc.with_normals(normals)


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr_db: float

    def __post_init__(self):
        if self.bpp <= 0:
            raise DomainError("bits per point must be positive")
        if not math.isfinite(self.psnr_db):
            raise DomainError("PSNR must be finite for RD fitting")


class RdCurve:
    """RD points with strictly increasing bpp."""

    def __init__(self, points: Sequence[RdPoint]):
        pts = sorted(points, key=lambda p: p.bpp)
        for p, q in zip(pts, pts[1:]):
            if q.bpp <= p.bpp:
                raise DomainError("curve bpp values must be strictly increasing")
        self.points: Tuple[RdPoint, ...] = tuple(pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def log_rates(self) -> np.ndarray:
        return np.log10([p.bpp for p in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr_db for p in self.points])


def bd_psnr(curve_test: RdCurve, curve_ref: RdCurve) -> float:
    """Bjontegaard-delta PSNR of test over ref, in dB.

    Both curves are fitted with least-squares cubics in log10(rate); the
    difference polynomial is integrated analytically over the common rate
    interval.  Positive means the test curve is better.
    """
    if len(curve_test) < 4 or len(curve_ref) < 4:
        raise DomainError("BD-PSNR needs at least 4 points per curve")
    lo = max(curve_test.log_rates.min(), curve_ref.log_rates.min())
    hi = min(curve_test.log_rates.max(), curve_ref.log_rates.max())
    if hi <= lo:
        raise DomainError("curves have no overlapping rate interval")
    fit_test = np.polyfit(curve_test.log_rates, curve_test.psnrs, 3)
    fit_ref = np.polyfit(curve_ref.log_rates, curve_ref.psnrs, 3)
    integral = np.polyint(np.polysub(fit_test, fit_ref))
    return float((np.polyval(integral, hi) - np.polyval(integral, lo)) / (hi - lo))


def brute_force_d1(a: np.ndarray, b: np.ndarray) -> float:
    """O(n^2) oracle for the directional point-to-point mean."""
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(d.min(axis=1).mean())


def brute_force_d2(a: np.ndarray, b: np.ndarray, b_normals: np.ndarray) -> float:
    """O(n^2) oracle for the directional point-to-plane mean."""
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    idx = d.argmin(axis=1)
    diff = a - b[idx]
    proj = (diff * b_normals[idx]).sum(axis=1)
    return float((proj ** 2).mean())
