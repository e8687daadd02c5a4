"""Synthetic voxel clouds for training and tests.

Surfaces are produced by supersampling parametric shapes (spheres, boxes,
bumpy Gaussian spheres) and voxelizing the samples, which mimics the
sparse shell-like occupancy of scanned point clouds.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .geometry import PointCloud, VoxelSet, to_voxels
from .partition import block_to_tensor, partition_blocks


def _voxelize_samples(samples: np.ndarray, bit_depth: int) -> PointCloud:
    top = (1 << bit_depth) - 1
    coords = np.clip(np.floor(samples + 0.5), 0, top).astype(np.int64)
    coords = np.unique(coords, axis=0)
    return PointCloud(coords, None, bit_depth)


def sphere_cloud(bit_depth: int = 6, samples: int = 20000, seed: int = 0,
                 radius_scale: float = 0.42, bumpiness: float = 0.0) -> PointCloud:
    """Voxelized sphere shell centered in the grid."""
    rng = np.random.default_rng(seed)
    side = 1 << bit_depth
    center = (side - 1) / 2.0
    direction = rng.standard_normal((samples, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = side * radius_scale
    if bumpiness > 0.0:
        radius = radius * (1.0 + bumpiness * np.sin(
            6.0 * direction[:, 0] + 4.0 * direction[:, 1] * direction[:, 2]))
        radius = radius[:, None]
    pts = center + direction * radius
    return _voxelize_samples(pts, bit_depth)


def box_cloud(bit_depth: int = 6, samples: int = 20000, seed: int = 0,
              extent: float = 0.7) -> PointCloud:
    """Voxelized axis-aligned box shell."""
    rng = np.random.default_rng(seed)
    side = 1 << bit_depth
    half = side * extent / 2.0
    center = (side - 1) / 2.0
    u = rng.uniform(-half, half, (samples, 3))
    axis = rng.integers(0, 3, samples)
    sign = rng.choice([-1.0, 1.0], samples)
    u[np.arange(samples), axis] = sign * half
    return _voxelize_samples(center + u, bit_depth)


def blob_cloud(bit_depth: int = 6, samples: int = 20000, seed: int = 0) -> PointCloud:
    """Bumpy sphere: a smooth shell with angular radius modulation."""
    return sphere_cloud(bit_depth, samples, seed, radius_scale=0.38, bumpiness=0.18)


_SHAPES = (sphere_cloud, box_cloud, blob_cloud)


def synthetic_cloud(bit_depth: int = 6, seed: int = 0, kind: str = "mixed") -> PointCloud:
    """One synthetic shape cloud; `kind` in {sphere, box, blob, mixed}."""
    if kind == "sphere":
        return sphere_cloud(bit_depth, seed=seed)
    if kind == "box":
        return box_cloud(bit_depth, seed=seed)
    if kind == "blob":
        return blob_cloud(bit_depth, seed=seed)
    maker = _SHAPES[seed % len(_SHAPES)]
    return maker(bit_depth, seed=seed)


def synthetic_block_dataset(n_blocks: int, block_size: int = 16,
                            seed: int = 0) -> List[np.ndarray]:
    """Occupancy tensors harvested from synthetic shape clouds.

    Blocks are drawn from partitioned shells at one resolution above the
    block size, densest blocks first, cycling shapes and seeds until the
    requested count is reached.
    """
    depth = max(1, int(block_size).bit_length() - 1) + 1  # 2x2x2 blocks per cloud
    blocks: List[np.ndarray] = []
    attempt = 0
    while len(blocks) < n_blocks:
        maker = _SHAPES[attempt % len(_SHAPES)]
        cloud = maker(depth, seed=seed + attempt)
        grid = partition_blocks(to_voxels(cloud), block_size)
        ranked = sorted(grid.blocks.values(), key=len, reverse=True)
        for vs in ranked:
            blocks.append(block_to_tensor(vs, block_size))
            if len(blocks) == n_blocks:
                break
        attempt += 1
    return blocks
