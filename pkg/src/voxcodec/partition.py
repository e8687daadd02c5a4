"""Block partitioning of voxel sets.

A voxel set is split into fixed-size cubic blocks in a single vectorized
pass: block index = coordinate div block_size, local offset = coordinate
mod block_size.  This replaces recursive octree descent with linear-time
bucketing and is exactly invertible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import VoxelSet


@dataclass
class BlockGrid:
    """Sparse set of occupied blocks keyed by (i, j, k) block index.

    Local voxel coordinates lie in [0, block_size)^3.  Keys iterate in
    lexicographic order.
    """

    block_size: int
    bit_depth: int
    blocks: Dict[Tuple[int, int, int], VoxelSet]

    @property
    def grid_side(self) -> int:
        return (1 << self.bit_depth) // self.block_size

    def __len__(self) -> int:
        return len(self.blocks)


def _check_block_size(block_size: int, bit_depth: int) -> None:
    if block_size < 1 or (block_size & (block_size - 1)) != 0:
        raise ConfigurationError(f"block size {block_size} is not a power of two")
    if block_size > (1 << bit_depth):
        raise ConfigurationError(
            f"block size {block_size} exceeds the cloud extent 2^{bit_depth}"
        )


def partition_blocks(vs: VoxelSet, block_size: int) -> BlockGrid:
    """Bucket voxels into non-empty blocks of `block_size` voxels per axis."""
    _check_block_size(block_size, vs.bit_depth)
    coords = vs.coords
    local_depth = max(1, block_size.bit_length() - 1)
    blocks: Dict[Tuple[int, int, int], VoxelSet] = {}
    if len(coords) == 0:
        return BlockGrid(block_size, vs.bit_depth, blocks)

    idx = coords // block_size
    local = coords - idx * block_size
    side = (1 << vs.bit_depth) // block_size
    packed = (idx[:, 0] * side + idx[:, 1]) * side + idx[:, 2]
    order = np.argsort(packed, kind="stable")
    packed = packed[order]
    local = local[order]
    boundaries = np.flatnonzero(np.diff(packed)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(packed)]))
    for s, e in zip(starts, ends):
        p = int(packed[s])
        key = (p // (side * side), (p // side) % side, p % side)
        blocks[key] = VoxelSet(local[s:e], local_depth)
    return BlockGrid(block_size, vs.bit_depth, blocks)


def merge_blocks(bg: BlockGrid) -> VoxelSet:
    """Inverse of partition_blocks: re-offset local sets into one global set."""
    if not bg.blocks:
        return VoxelSet(np.empty((0, 3), dtype=np.int64), bg.bit_depth)
    parts = []
    for (i, j, k), vs in bg.blocks.items():
        offset = np.array([i, j, k], dtype=np.int64) * bg.block_size
        parts.append(vs.coords + offset)
    return VoxelSet(np.concatenate(parts, axis=0), bg.bit_depth)


def block_to_tensor(local: VoxelSet, block_size: int) -> np.ndarray:
    """Dense binary occupancy tensor (block_size^3 x 1) for one block."""
    coords = local.coords
    if len(coords) and coords.max() >= block_size:
        raise DomainError("local voxel coordinate outside the block")
    t = np.zeros((block_size, block_size, block_size, 1), dtype=np.float64)
    if len(coords):
        t[coords[:, 0], coords[:, 1], coords[:, 2], 0] = 1.0
    return t


def tensor_to_block(t: np.ndarray) -> VoxelSet:
    """Occupied voxels of an already-binary tensor.

    Entries must be exactly 0.0 or 1.0; soft reconstructions must go
    through thresholding first.
    """
    arr = np.asarray(t)
    if arr.ndim != 4 or arr.shape[3] != 1:
        raise DomainError(f"expected a (W,H,D,1) tensor, got shape {arr.shape}")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise DomainError("tensor has entries outside {0.0, 1.0}")
    coords = np.argwhere(arr[..., 0] == 1.0).astype(np.int64)
    depth = max(1, int(max(arr.shape[:3]) - 1).bit_length())
    return VoxelSet(coords, depth)
