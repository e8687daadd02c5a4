"""End-to-end encoder and decoder.

Bitstream layout (little-endian):

    header: magic "PCG2" | version u8 | bit_depth u8 | block_size_log2 u8
            | model_kind u8 | metric_flag u8 | model_hash u64 | block_count u32
    per block, in lexicographic block-index order:
            block_index u16 | threshold_code u8
            | [hyper-latent coded block]   (hyperprior models only)
            | [latent coded block]

Each coded block is framed as [min i16][max i16][len u32][payload].  Model
weights travel out of band; the header's 64-bit hash must match the weight
container used for decoding.  Threshold side information costs exactly one
byte per occupied block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import ndtr

from .entropy.models import quantize
from .entropy.rangecoder import (
    MAX_SYMBOLS,
    CdfTable,
    cdf_table_from_probs,
    range_decode,
    range_encode,
    read_coded_block,
    table_entropy_bits,
    write_coded_block,
)
from .errors import (
    ConfigurationError,
    DecodingError,
    DomainError,
    EncodingError,
    ModelMismatchError,
)
from .geometry import PointCloud, VoxelSet, from_voxels, to_voxels
from .metrics import estimate_normals
from .model import CompressionModel
from .nn.weights import WeightStore
from .partition import block_to_tensor, partition_blocks
from .threshold import (
    FIXED_THRESHOLD_CODE,
    ThresholdCode,
    optimal_threshold,
    reconstruct_block,
)

MAGIC = b"PCG2"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBBQI")
_BLOCK_PREFIX = struct.Struct("<HB")

MODEL_KIND_CODES = {"baseline": 0, "hyperprior": 1}
MODEL_KIND_NAMES = {v: k for k, v in MODEL_KIND_CODES.items()}
METRIC_CODES = {"d1": 0, "d2": 1}
METRIC_NAMES = {v: k for k, v in METRIC_CODES.items()}


@dataclass(frozen=True)
class ConditionPreset:
    """One experimental condition: model family, transforms, loss weight,
    thresholding mode and training scheme."""

    name: str
    model: str
    transforms: str
    alpha: float
    thresholding: str
    training: str


# Cumulative one-factor-at-a-time conditions.
PRESETS: Dict[str, ConditionPreset] = {
    "c1": ConditionPreset("c1", "baseline", "v1", 0.90, "fixed", "independent"),
    "c2": ConditionPreset("c2", "hyperprior", "v1", 0.90, "fixed", "independent"),
    "c3": ConditionPreset("c3", "hyperprior", "v2", 0.90, "fixed", "independent"),
    "c4": ConditionPreset("c4", "hyperprior", "v2", 0.75, "fixed", "independent"),
    "c5": ConditionPreset("c5", "hyperprior", "v2", 0.75, "optimal", "independent"),
    "c6": ConditionPreset("c6", "hyperprior", "v2", 0.75, "optimal", "sequential"),
}


@dataclass
class BlockRecord:
    block_index: int
    threshold_code: int
    z_block: Optional[bytes]
    y_block: bytes

    def serialize(self) -> bytes:
        out = _BLOCK_PREFIX.pack(self.block_index, self.threshold_code)
        if self.z_block is not None:
            out += self.z_block
        return out + self.y_block


@dataclass
class Bitstream:
    bit_depth: int
    block_size_log2: int
    model_kind: str
    metric_flag: str
    model_hash: int
    records: List[BlockRecord] = field(default_factory=list)

    def serialize(self) -> bytes:
        header = _HEADER.pack(
            MAGIC, VERSION, self.bit_depth, self.block_size_log2,
            MODEL_KIND_CODES[self.model_kind], METRIC_CODES[self.metric_flag],
            self.model_hash, len(self.records))
        return header + b"".join(r.serialize() for r in self.records)

    def size_breakdown(self) -> Dict[str, int]:
        """Byte counts per stream component; values sum to the stream size."""
        payload = sum(len(r.y_block) + len(r.z_block or b"") for r in self.records)
        framing = 0
        for r in self.records:
            framing += 8 if r.z_block is not None else 0  # z range+len fields
        # y framing fields
        framing_y = 8 * len(self.records)
        return {
            "header": _HEADER.size,
            "block_indices": 2 * len(self.records),
            "threshold_bytes": len(self.records),
            "range_and_length_fields": framing + framing_y,
            "entropy_payloads": payload - framing - framing_y,
        }


def _grid_side(bit_depth: int, block_size_log2: int) -> int:
    return 1 << (bit_depth - block_size_log2)


def _build_gaussian_tables(model: CompressionModel, sigma: np.ndarray,
                           lo: int, hi: int) -> List[CdfTable]:
    """One table per latent element from its predicted scale."""
    sig = np.maximum(sigma.reshape(-1), model.gaussian.sigma_min)
    grid = np.arange(lo, hi + 1, dtype=np.float64)
    upper = ndtr((grid[None, :] + 0.5) / sig[:, None])
    lower = ndtr((grid[None, :] - 0.5) / sig[:, None])
    masses = upper - lower
    return [cdf_table_from_probs(row, lo) for row in masses]


def _build_factorized_tables(model: CompressionModel, lo: int, hi: int) -> List[CdfTable]:
    """One table per channel from the factorized density."""
    grid = np.arange(lo, hi + 1, dtype=np.float64)
    values = np.repeat(grid[:, None], model.filters, axis=1)
    upper = model.density.cdf(values + 0.5)
    lower = model.density.cdf(values - 0.5)
    masses = (upper - lower).T  # (channels, symbols)
    return [cdf_table_from_probs(row, lo) for row in masses]


def _symbol_range(values: np.ndarray) -> Tuple[int, int]:
    lo = int(values.min()) - 1
    hi = int(values.max()) + 1
    if not (-32768 <= lo <= hi <= 32767):
        raise EncodingError(f"latent range [{lo}, {hi}] does not fit in i16")
    if hi - lo + 1 > MAX_SYMBOLS:
        raise ConfigurationError(
            f"latent range [{lo}, {hi}] exceeds the table budget {MAX_SYMBOLS}")
    return lo, hi


def _per_symbol_tables(tables_by_channel: List[CdfTable], count: int,
                       channels: int) -> List[CdfTable]:
    return [tables_by_channel[i % channels] for i in range(count)]


@dataclass
class BlockStats:
    block_index: int
    y_bits: int
    z_bits: int
    y_entropy_bits: float
    z_entropy_bits: float
    threshold_fallback: bool


@dataclass
class EncodeResult:
    data: bytes
    bitstream: Bitstream
    reconstruction: PointCloud
    n_input_points: int
    block_stats: List[BlockStats]

    @property
    def bpp(self) -> float:
        return 8.0 * len(self.data) / max(self.n_input_points, 1)


def _check_weights_compatible(model: CompressionModel, preset: ConditionPreset,
                              block_size: int) -> None:
    if model.model_kind != preset.model or model.transform_kind != preset.transforms:
        raise ModelMismatchError(
            f"weights are {model.model_kind}/{model.transform_kind}, preset "
            f"{preset.name} needs {preset.model}/{preset.transforms}")
    if block_size > model.block_size:
        raise ConfigurationError(
            f"block size {block_size} exceeds the trained size {model.block_size}")
    if block_size % model.analysis_spec.downsample_factor != 0:
        raise ConfigurationError(
            f"block size {block_size} is not divisible by the transform "
            f"downsampling factor {model.analysis_spec.downsample_factor}")


def encode(pc: PointCloud, weights: WeightStore, preset: ConditionPreset,
           metric_flag: str = "d1", block_size: Optional[int] = None) -> EncodeResult:
    """Compress a point cloud into a bitstream.

    Also returns the encoder-side reconstruction, which the decoder
    reproduces bit for bit from the stream and the same weights.
    """
    if metric_flag not in METRIC_CODES:
        raise ConfigurationError(f"unknown metric flag {metric_flag!r}")
    weights = weights.canonical()
    model = CompressionModel.from_store(weights)
    block_size = block_size or model.block_size
    _check_weights_compatible(model, preset, block_size)
    if model.model_kind == "hyperprior" and block_size < 16:
        raise ConfigurationError("hyperprior models need block size >= 16")

    bs_log2 = block_size.bit_length() - 1
    if pc.bit_depth < bs_log2:
        raise ConfigurationError(
            f"block size {block_size} exceeds the cloud extent 2^{pc.bit_depth}")
    side = _grid_side(pc.bit_depth, bs_log2)
    if side ** 3 > 65536:
        raise ConfigurationError(
            f"grid of {side}^3 blocks does not fit 16-bit block indices; "
            "use a larger block size or shallower cloud")

    vs = to_voxels(pc)
    grid = partition_blocks(vs, block_size)

    normals_by_voxel: Dict[Tuple[int, int, int], np.ndarray] = {}
    if preset.thresholding == "optimal" and metric_flag == "d2":
        ref = pc if pc.normals is not None else estimate_normals(pc, k=9)
        for point, normal in zip(ref.points, ref.normals):
            normals_by_voxel.setdefault(tuple(point.tolist()), normal)

    stream = Bitstream(pc.bit_depth, bs_log2, model.model_kind, metric_flag,
                       weights.model_hash())
    stats: List[BlockStats] = []
    recon_parts: List[np.ndarray] = []

    for (i, j, k), local in grid.blocks.items():
        x = block_to_tensor(local, block_size)
        y = model.analyze(x)
        y_hat = quantize(y)
        z_block = None
        z_bits = 0
        z_entropy = 0.0
        if model.model_kind == "hyperprior":
            z = model.hyper_analyze(y)
            z_hat = quantize(z)
            sigma = model.hyper_synthesize(z_hat.astype(np.float64))
            z_lo, z_hi = _symbol_range(z_hat)
            z_tables = _per_symbol_tables(
                _build_factorized_tables(model, z_lo, z_hi),
                z_hat.size, model.filters)
            z_symbols = z_hat.reshape(-1).tolist()
            z_payload = range_encode(z_symbols, z_tables)
            z_block = write_coded_block(z_lo, z_hi, z_payload)
            z_bits = 8 * len(z_payload)
            z_entropy = table_entropy_bits(z_symbols, z_tables)
            y_lo, y_hi = _symbol_range(y_hat)
            y_tables = _build_gaussian_tables(model, sigma, y_lo, y_hi)
        else:
            y_lo, y_hi = _symbol_range(y_hat)
            y_tables = _per_symbol_tables(
                _build_factorized_tables(model, y_lo, y_hi),
                y_hat.size, model.filters)
        y_symbols = y_hat.reshape(-1).tolist()
        y_payload = range_encode(y_symbols, y_tables)
        y_block = write_coded_block(y_lo, y_hi, y_payload)

        x_soft = model.synthesize(y_hat.astype(np.float64))
        if preset.thresholding == "optimal":
            if metric_flag == "d2":
                ref_normals = np.array([
                    normals_by_voxel[(int(vi + i * block_size),
                                      int(vj + j * block_size),
                                      int(vk + k * block_size))]
                    for vi, vj, vk in local.coords])
                result = optimal_threshold(x_soft, local, "d2", ref_normals)
            else:
                result = optimal_threshold(x_soft, local, "d1")
            code = result.code
        else:
            code = ThresholdCode(FIXED_THRESHOLD_CODE)
        recon_local, fallback = reconstruct_block(x_soft, code)

        block_index = (i * side + j) * side + k
        stream.records.append(BlockRecord(block_index, code.index, z_block, y_block))
        stats.append(BlockStats(block_index, 8 * len(y_payload), z_bits,
                                table_entropy_bits(y_symbols, y_tables),
                                z_entropy, fallback))
        offset = np.array([i, j, k], dtype=np.int64) * block_size
        recon_parts.append(recon_local.coords + offset)

    if recon_parts:
        recon = from_voxels(VoxelSet(np.concatenate(recon_parts), pc.bit_depth))
    else:
        recon = PointCloud(np.empty((0, 3), dtype=np.int64), None, pc.bit_depth)
    data = stream.serialize()
    return EncodeResult(data, stream, recon, len(pc), stats)


def parse_bitstream(data: bytes) -> Bitstream:
    """Split a stream into header and block records, validating framing."""
    if len(data) < _HEADER.size:
        raise DecodingError("bitstream shorter than its header")
    magic, version, bit_depth, bs_log2, kind_code, metric_code, model_hash, count = (
        _HEADER.unpack_from(data, 0))
    if magic != MAGIC:
        raise DecodingError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DecodingError(f"unsupported bitstream version {version}")
    if kind_code not in MODEL_KIND_NAMES:
        raise DecodingError(f"unknown model kind code {kind_code}")
    if metric_code not in METRIC_NAMES:
        raise DecodingError(f"unknown metric flag code {metric_code}")
    if not 1 <= bit_depth <= 24:
        raise DecodingError(f"implausible bit depth {bit_depth}")
    if not 3 <= bs_log2 <= 12 or bs_log2 > bit_depth:
        raise DecodingError(f"implausible block size log2 {bs_log2}")
    stream = Bitstream(bit_depth, bs_log2, MODEL_KIND_NAMES[kind_code],
                       METRIC_NAMES[metric_code], model_hash)
    side = _grid_side(bit_depth, bs_log2)
    offset = _HEADER.size
    for _ in range(count):
        if offset + _BLOCK_PREFIX.size > len(data):
            raise DecodingError(f"block record truncated at byte {offset}")
        block_index, code = _BLOCK_PREFIX.unpack_from(data, offset)
        if block_index >= side ** 3:
            raise DecodingError(f"block index {block_index} outside the grid")
        offset += _BLOCK_PREFIX.size
        z_block = None
        if stream.model_kind == "hyperprior":
            lo, hi, payload, offset = read_coded_block(data, offset)
            z_block = write_coded_block(lo, hi, payload)
        lo, hi, payload, offset = read_coded_block(data, offset)
        stream.records.append(BlockRecord(block_index, code, z_block,
                                          write_coded_block(lo, hi, payload)))
    if offset != len(data):
        raise DecodingError(f"{len(data) - offset} trailing bytes after records")
    return stream


def decode(data: bytes, weights: WeightStore) -> PointCloud:
    """Reconstruct the point cloud; exact inverse of the encoder's output."""
    stream = parse_bitstream(data)
    weights = weights.canonical()
    if stream.model_hash != weights.model_hash():
        raise ModelMismatchError(
            "bitstream was produced with different model weights")
    model = CompressionModel.from_store(weights)
    if stream.model_kind != model.model_kind:
        raise ModelMismatchError("bitstream model kind differs from the weights")
    block_size = 1 << stream.block_size_log2
    side = _grid_side(stream.bit_depth, stream.block_size_log2)
    y_shape = model.latent_shape(block_size)
    z_shape = model.hyper_latent_shape(block_size)
    y_count = int(np.prod(y_shape))
    z_count = int(np.prod(z_shape))

    parts: List[np.ndarray] = []
    for record in stream.records:
        try:
            if model.model_kind == "hyperprior":
                z_lo, z_hi, z_payload, _ = read_coded_block(record.z_block, 0)
                z_tables = _per_symbol_tables(
                    _build_factorized_tables(model, z_lo, z_hi),
                    z_count, model.filters)
                z_symbols = range_decode(z_payload, z_tables, z_count)
                z_hat = np.array(z_symbols, dtype=np.float64).reshape(z_shape)
                sigma = model.hyper_synthesize(z_hat)
                y_lo, y_hi, y_payload, _ = read_coded_block(record.y_block, 0)
                y_tables = _build_gaussian_tables(model, sigma, y_lo, y_hi)
            else:
                y_lo, y_hi, y_payload, _ = read_coded_block(record.y_block, 0)
                y_tables = _per_symbol_tables(
                    _build_factorized_tables(model, y_lo, y_hi),
                    y_count, model.filters)
            y_symbols = range_decode(y_payload, y_tables, y_count)
        except (ConfigurationError, DomainError) as exc:
            raise DecodingError(f"block {record.block_index}: {exc}")
        y_hat = np.array(y_symbols, dtype=np.float64).reshape(y_shape)
        x_soft = model.synthesize(y_hat)
        recon_local, _ = reconstruct_block(x_soft, ThresholdCode(record.threshold_code))
        i = record.block_index // (side * side)
        j = (record.block_index // side) % side
        k = record.block_index % side
        offset = np.array([i, j, k], dtype=np.int64) * block_size
        parts.append(recon_local.coords + offset)

    if not parts:
        return PointCloud(np.empty((0, 3), dtype=np.int64), None, stream.bit_depth)
    return from_voxels(VoxelSet(np.concatenate(parts), stream.bit_depth))
