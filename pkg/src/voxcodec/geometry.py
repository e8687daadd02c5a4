"""Point cloud containers and PLY I/O.

Clouds are ordered lists of non-negative integer voxel coordinates with
optional unit normals.  Voxel sets are the deduplicated, lexicographically
sorted view of the same geometry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .errors import DomainError, ParseError

NORMAL_TOL = 1e-6

# PLY scalar type name -> (struct char, numpy dtype)
_PLY_TYPES = {
    "char": ("b", np.int8), "int8": ("b", np.int8),
    "uchar": ("B", np.uint8), "uint8": ("B", np.uint8),
    "short": ("h", np.int16), "int16": ("h", np.int16),
    "ushort": ("H", np.uint16), "uint16": ("H", np.uint16),
    "int": ("i", np.int32), "int32": ("i", np.int32),
    "uint": ("I", np.uint32), "uint32": ("I", np.uint32),
    "float": ("f", np.float32), "float32": ("f", np.float32),
    "double": ("d", np.float64), "float64": ("d", np.float64),
}


def _min_bit_depth(coords: np.ndarray) -> int:
    """Smallest b >= 1 such that all coordinates fit in [0, 2^b)."""
    if coords.size == 0:
        return 1
    top = int(coords.max())
    return max(1, top.bit_length())


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered integer point list with optional unit normals.

    All coordinates must lie in [0, 2^bit_depth).  Normals, when present,
    are one unit vector per point.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    bit_depth: int = field(default=0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        depth = self.bit_depth if self.bit_depth else _min_bit_depth(pts)
        object.__setattr__(self, "bit_depth", int(depth))
        if pts.size and pts.min() < 0:
            raise DomainError("negative coordinate in point cloud")
        if pts.size and pts.max() >= (1 << self.bit_depth):
            raise DomainError(
                f"coordinate {int(pts.max())} exceeds bit depth {self.bit_depth}"
            )
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise DomainError("normals length differs from points length")
            lens = np.linalg.norm(nrm, axis=1)
            if len(nrm) and np.abs(lens - 1.0).max() > NORMAL_TOL:
                raise DomainError("normals are not unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if self.bit_depth != other.bit_depth:
            return False
        if not np.array_equal(self.points, other.points):
            return False
        if (self.normals is None) != (other.normals is None):
            return False
        if self.normals is not None and not np.array_equal(self.normals, other.normals):
            return False
        return True

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, normals, self.bit_depth)


@dataclass(frozen=True, eq=False)
class VoxelSet:
    """Deduplicated voxel occupancy: unique coordinates, lexicographically sorted."""

    coords: np.ndarray
    bit_depth: int

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if arr.size:
            arr = np.unique(arr, axis=0)  # sorts lexicographically
            if arr.min() < 0:
                raise DomainError("negative voxel coordinate")
            if arr.max() >= (1 << self.bit_depth):
                raise DomainError("voxel coordinate exceeds bit depth")
        object.__setattr__(self, "coords", arr)
        object.__setattr__(self, "bit_depth", int(self.bit_depth))

    def __len__(self) -> int:
        return len(self.coords)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelSet):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(
            self.coords, other.coords
        )

    def as_set(self) -> set:
        return set(map(tuple, self.coords.tolist()))


def to_voxels(pc: PointCloud) -> VoxelSet:
    """Collapse duplicate points into a voxel occupancy set."""
    return VoxelSet(pc.points, pc.bit_depth)


def from_voxels(vs: VoxelSet) -> PointCloud:
    """Voxel set as a point cloud, lexicographic order, no normals."""
    return PointCloud(vs.coords.copy(), None, vs.bit_depth)


# ---------------------------------------------------------------------------
# PLY reading


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.properties = []  # (type_name, prop_name) or ("list", ...) marker


def _parse_header(stream: BinaryIO):
    """Parse the PLY header, returning (format, elements, comments, header_len)."""

    def next_line():
        raw = stream.readline()
        if not raw:
            raise ParseError("unexpected end of file inside PLY header")
        return raw

    first = next_line()
    if first.strip() != b"ply":
        raise ParseError(f"not a PLY file, first line: {first!r}")

    fmt = None
    elements = []
    comments = []
    while True:
        raw = next_line()
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError(f"non-ASCII header line: {raw!r}")
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format line: {line!r}")
            fmt = parts[1]
        elif key == "comment":
            comments.append(line[len("comment"):].strip())
        elif key == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line: {line!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(f"bad element count in line: {line!r}")
            elements.append(_Element(parts[1], count))
        elif key == "property":
            if not elements:
                raise ParseError(f"property before any element: {line!r}")
            if len(parts) >= 2 and parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"malformed list property line: {line!r}")
                elements[-1].properties.append(("list", parts[2], parts[3], parts[4]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"malformed property line: {line!r}")
                elements[-1].properties.append((parts[1], parts[2]))
        elif key == "end_header":
            break
        elif key == "obj_info":
            continue
        else:
            raise ParseError(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise ParseError("PLY header has no format line")
    return fmt, elements, comments


def _bit_depth_from_comments(comments) -> Optional[int]:
    for c in comments:
        text = c.replace("=", " ")
        parts = text.split()
        if len(parts) >= 2 and parts[0] == "bit_depth":
            try:
                return int(parts[1])
            except ValueError:
                continue
    return None


def _round_half_up(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise DomainError("non-finite vertex coordinate")
    return np.floor(values + 0.5).astype(np.int64)


def read_ply(stream: BinaryIO) -> PointCloud:
    """Read an ASCII or binary-little-endian PLY vertex cloud.

    Float coordinates are rounded half-up to integers.  Bit depth is taken
    from a ``comment bit_depth=N`` header line when present, otherwise the
    smallest covering power of two is used.
    """
    fmt, elements, comments = _parse_header(stream)

    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise ParseError("PLY has no vertex element")
    prop_names = [p[1] for p in vertex.properties if p[0] != "list"]
    if any(p[0] == "list" for p in vertex.properties):
        raise ParseError("list property on vertex element is unsupported")
    for axis in ("x", "y", "z"):
        if axis not in prop_names:
            raise ParseError(f"vertex element lacks property {axis!r}")
    has_normals = all(n in prop_names for n in ("nx", "ny", "nz"))

    if fmt == "ascii":
        columns = _read_ascii_vertex_rows(stream, elements, vertex)
    else:
        columns = _read_binary_vertex_rows(stream, elements, vertex)

    xyz = np.stack([columns[prop_names.index(a)] for a in ("x", "y", "z")], axis=1)
    coords = _round_half_up(xyz.astype(np.float64))
    if coords.size and coords.min() < 0:
        raise DomainError("negative coordinate after rounding")

    normals = None
    if has_normals:
        normals = np.stack(
            [columns[prop_names.index(a)] for a in ("nx", "ny", "nz")], axis=1
        ).astype(np.float64)

    depth = _bit_depth_from_comments(comments) or _min_bit_depth(coords)
    return PointCloud(coords, normals, depth)


def _read_ascii_vertex_rows(stream, elements, vertex):
    vertex_rows = None
    for element in elements:
        rows = []
        for i in range(element.count):
            raw = stream.readline()
            if not raw:
                raise ParseError(
                    f"unexpected end of file in element {element.name!r} row {i}"
                )
            tokens = raw.decode("ascii", errors="replace").split()
            if element is vertex:
                if len(tokens) < len(element.properties):
                    raise ParseError(f"short vertex row: {raw!r}")
                try:
                    rows.append([float(t) for t in tokens[: len(element.properties)]])
                except ValueError:
                    raise ParseError(f"non-numeric vertex row: {raw!r}")
        if element is vertex:
            vertex_rows = rows
            break  # anything after the vertex element is irrelevant
    if vertex_rows is None:
        raise ParseError("vertex element missing from PLY body")
    arr = np.asarray(vertex_rows, dtype=np.float64).reshape(
        -1, len(vertex.properties)
    )
    return [arr[:, i] for i in range(arr.shape[1])]


def _read_binary_vertex_rows(stream, elements, vertex):
    # Skip fixed-size elements that precede the vertex element.
    for element in elements:
        if element is vertex:
            break
        if any(p[0] == "list" for p in element.properties):
            raise ParseError(
                f"cannot skip binary element {element.name!r} with list properties"
            )
        row = sum(struct.calcsize("<" + _PLY_TYPES[p[0]][0]) for p in element.properties)
        stream.read(row * element.count)

    dtype = np.dtype(
        [(f"f{i}", np.dtype(_PLY_TYPES[t][1]).newbyteorder("<"))
         for i, (t, _name) in enumerate(vertex.properties)]
    )
    need = dtype.itemsize * vertex.count
    raw = stream.read(need)
    if len(raw) != need:
        raise ParseError(
            f"vertex payload truncated: expected {need} bytes, got {len(raw)}"
        )
    table = np.frombuffer(raw, dtype=dtype)
    return [table[f"f{i}"].astype(np.float64) for i in range(len(vertex.properties))]


# ---------------------------------------------------------------------------
# PLY writing


def write_ply(pc: PointCloud, stream: BinaryIO) -> None:
    """Write a binary-little-endian PLY with int32 coordinates.

    Normals, when present, are stored as float64 so the read/write round
    trip is exact.  The bit depth travels in a header comment.
    """
    if pc.bit_depth > 31:
        raise DomainError("bit depth too large for int32 PLY coordinates")
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment bit_depth={pc.bit_depth}",
        f"element vertex {len(pc)}",
        "property int x",
        "property int y",
        "property int z",
    ]
    if pc.normals is not None:
        header += [
            "property double nx",
            "property double ny",
            "property double nz",
        ]
    header.append("end_header")
    stream.write(("\n".join(header) + "\n").encode("ascii"))

    if pc.normals is not None:
        dtype = np.dtype([("x", "<i4"), ("y", "<i4"), ("z", "<i4"),
                          ("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")])
        rows = np.empty(len(pc), dtype=dtype)
        rows["x"], rows["y"], rows["z"] = pc.points.T
        rows["nx"], rows["ny"], rows["nz"] = pc.normals.T
    else:
        dtype = np.dtype([("x", "<i4"), ("y", "<i4"), ("z", "<i4")])
        rows = np.empty(len(pc), dtype=dtype)
        rows["x"], rows["y"], rows["z"] = pc.points.T
    stream.write(rows.tobytes())
