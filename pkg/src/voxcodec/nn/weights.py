"""Versioned binary container for model parameters.

Layout (little-endian): magic "VCWS", version byte, a metadata table of
key/value strings, then named groups of float32 arrays with per-array
shape headers.  The container's SHA-256 (truncated to 64 bits) identifies
the model inside bitstreams.

Arrays are stored as float32; `canonical()` rounds in-memory float64
parameters through float32 so that encoder- and decoder-side math agrees
bit for bit after a save/load round trip.
"""

from __future__ import annotations

import hashlib
import struct
from typing import BinaryIO, Dict, List

import numpy as np

from ..errors import ParseError

MAGIC = b"VCWS"
VERSION = 1


class WeightStore:
    """Named groups of parameter arrays plus string metadata."""

    def __init__(self, meta: Dict[str, str] | None = None):
        self.meta: Dict[str, str] = dict(meta or {})
        self._groups: Dict[str, List[np.ndarray]] = {}

    def set_group(self, name: str, arrays: List[np.ndarray]) -> None:
        self._groups[name] = [np.asarray(a, dtype=np.float64) for a in arrays]

    def group(self, name: str) -> List[np.ndarray]:
        if name not in self._groups:
            raise KeyError(f"weight group {name!r} not present")
        return self._groups[name]

    def has_group(self, name: str) -> bool:
        return name in self._groups

    def group_names(self) -> List[str]:
        return sorted(self._groups)

    # -- serialization -------------------------------------------------------

    def _serialize_body(self) -> bytes:
        out = bytearray()

        def put_str(s: str) -> None:
            b = s.encode("utf-8")
            out.extend(struct.pack("<H", len(b)))
            out.extend(b)

        out.extend(struct.pack("<H", len(self.meta)))
        for key in sorted(self.meta):
            put_str(key)
            put_str(self.meta[key])
        out.extend(struct.pack("<H", len(self._groups)))
        for name in sorted(self._groups):
            put_str(name)
            arrays = self._groups[name]
            out.extend(struct.pack("<H", len(arrays)))
            for a in arrays:
                out.extend(struct.pack("<B", a.ndim))
                for dim in a.shape:
                    out.extend(struct.pack("<I", dim))
                out.extend(a.astype("<f4").tobytes())
        return bytes(out)

    def serialize(self) -> bytes:
        return MAGIC + struct.pack("<B", VERSION) + self._serialize_body()

    def save(self, target) -> None:
        data = self.serialize()
        if hasattr(target, "write"):
            target.write(data)
        else:
            with open(target, "wb") as fh:
                fh.write(data)

    @classmethod
    def deserialize(cls, data: bytes) -> "WeightStore":
        if data[:4] != MAGIC:
            raise ParseError("not a weight container (bad magic)")
        if len(data) < 5 or data[4] != VERSION:
            raise ParseError("unsupported weight container version")
        pos = 5

        def take(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(data):
                raise ParseError("weight container truncated")
            values = struct.unpack_from(fmt, data, pos)
            pos += size
            return values

        def take_str() -> str:
            nonlocal pos
            (n,) = take("<H")
            if pos + n > len(data):
                raise ParseError("weight container truncated")
            s = data[pos:pos + n].decode("utf-8")
            pos += n
            return s

        store = cls()
        (n_meta,) = take("<H")
        for _ in range(n_meta):
            key = take_str()
            store.meta[key] = take_str()
        (n_groups,) = take("<H")
        for _ in range(n_groups):
            name = take_str()
            (n_arrays,) = take("<H")
            arrays = []
            for _ in range(n_arrays):
                (ndim,) = take("<B")
                shape = tuple(take("<I")[0] for _ in range(ndim))
                count = int(np.prod(shape)) if shape else 1
                nbytes = count * 4
                if pos + nbytes > len(data):
                    raise ParseError("weight container truncated")
                arr = np.frombuffer(data[pos:pos + nbytes], dtype="<f4")
                pos += nbytes
                arrays.append(arr.reshape(shape).astype(np.float64))
            store._groups[name] = arrays
        return store

    @classmethod
    def load(cls, source) -> "WeightStore":
        if hasattr(source, "read"):
            return cls.deserialize(source.read())
        with open(source, "rb") as fh:
            return cls.deserialize(fh.read())

    # -- identity ------------------------------------------------------------

    def model_hash(self) -> int:
        """64-bit content hash used as the model identifier in bitstreams."""
        digest = hashlib.sha256(self.serialize()).digest()
        return struct.unpack("<Q", digest[:8])[0]

    def canonical(self) -> "WeightStore":
        """Round every array through float32, matching a save/load cycle."""
        store = WeightStore(self.meta)
        for name, arrays in self._groups.items():
            store._groups[name] = [a.astype("<f4").astype(np.float64) for a in arrays]
        return store
