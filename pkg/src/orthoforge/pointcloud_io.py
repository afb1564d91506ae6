from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from orthoforge.errors import (
    ArtifactIOError, DomainError, FormatError, PlyParseError, SchemaError,
    TruncatedBodyError
)

logger = logging.getLogger(__name__)

COORDS = ('x', 'y', 'z')
CHANNELS = ('red', 'green', 'blue')
COORD_TYPES = {'f4', 'f8'}

VERTEX_DTYPE = [
    ('x', '<f4'), ('y', '<f4'), ('z', '<f4'),
    ('red', 'u1'), ('green', 'u1'), ('blue', 'u1'),
]


@dataclass(eq=False)
class ColoredPointCloud:
    points: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    dropped: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise DomainError(
                f'{len(self.points)} points but {len(self.colors)} colors'
            )
        if not np.isfinite(self.points).all():
            raise DomainError('point coordinates must be finite')
        self.points.setflags(write=False)
        self.colors.setflags(write=False)

    @property
    def count(self) -> int:
        return len(self.points)

    def same_as(self, other: ColoredPointCloud) -> bool:
        return np.array_equal(self.points, other.points) and \
            np.array_equal(self.colors, other.colors)


@dataclass(frozen=True)
class Aabb:
    min_corner: tuple
    max_corner: tuple

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.subtract(self.max_corner, self.min_corner)))

    @property
    def extent(self) -> tuple:
        return tuple(np.subtract(self.max_corner, self.min_corner).tolist())


def _header_end(raw: bytes) -> int:
    marker = raw.find(b'end_header')
    if marker < 0:
        lines = raw.count(b'\n') + 1
        raise PlyParseError('missing end_header', lines)
    newline = raw.find(b'\n', marker)
    return len(raw) if newline < 0 else newline + 1


def _check_format(raw: bytes, header_end: int):
    for number, line in enumerate(raw[:header_end].split(b'\n'), start=1):
        words = line.split()
        if words[:1] == [b'format']:
            if len(words) < 2 or words[1] not in (b'ascii', b'binary_little_endian'):
                fmt = words[1].decode('ascii', 'replace') if len(words) > 1 else ''
                raise FormatError(
                    f'line {number}: unsupported PLY format {fmt!r} '
                    '(only ascii and binary_little_endian are read)'
                )
            return words[1]
    raise PlyParseError('missing format line', 2)


def _truncation(e: PlyElementParseError, body: int, fmt: bytes) -> TruncatedBodyError:
    element = getattr(e, 'element', None)
    if element is None:
        return TruncatedBodyError('truncated PLY body', body + 1, body)
    if fmt == b'ascii':
        row = getattr(e, 'row', None) or 0
        return TruncatedBodyError(
            f'truncated PLY body ({element.name} rows {row} of {element.count})',
            element.count, row
        )
    stride = sum(np.dtype(p.dtype('<')).itemsize for p in element.properties)
    return TruncatedBodyError(
        f'truncated PLY body ({element.name})', element.count * stride, body
    )


def load_ply(path) -> ColoredPointCloud:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f'cannot read {path}: {e}') from e

    header_end = _header_end(raw)
    fmt = _check_format(raw, header_end)

    try:
        ply = PlyData.read(io.BytesIO(raw), mmap=False)
    except PlyHeaderParseError as e:
        raise PlyParseError(str(e.message), e.line or 0) from e
    except (PlyElementParseError, StopIteration) as e:
        raise _truncation(e, len(raw) - header_end, fmt) from e

    if 'vertex' not in [el.name for el in ply.elements]:
        raise SchemaError(f'{path}: no "vertex" element')
    vertex = ply['vertex']
    names = {p.name: p for p in vertex.properties}
    missing = [n for n in COORDS + CHANNELS if n not in names]
    if missing:
        raise SchemaError(f'{path}: vertex lacks properties {", ".join(missing)}')
    for name in COORDS:
        if np.dtype(names[name].dtype()).str[1:] not in COORD_TYPES:
            raise SchemaError(f'{path}: property {name} must be float32 or float64')
    for name in CHANNELS:
        if np.dtype(names[name].dtype()).str[1:] != 'u1':
            raise SchemaError(f'{path}: property {name} must be uint8')

    data = vertex.data
    points = np.stack([np.asarray(data[n], dtype=np.float64) for n in COORDS], axis=1)
    colors = np.stack([np.asarray(data[n], dtype=np.uint8) for n in CHANNELS], axis=1)

    finite = np.isfinite(points).all(axis=1)
    dropped = int(len(points) - finite.sum())
    if dropped:
        logger.warning('%s: dropped %d non-finite vertices', path, dropped)
    return ColoredPointCloud(points[finite], colors[finite], dropped)


def save_ply(cloud: ColoredPointCloud, path) -> None:
    """Write ``cloud`` as binary_little_endian with float32 coordinates.

    Coordinates are held in float64 but written as float32, so clouds that
    did not come from a float32 file lose precision here.
    """
    vertices = np.empty(cloud.count, dtype=VERTEX_DTYPE)
    for axis, name in enumerate(COORDS):
        vertices[name] = cloud.points[:, axis]
    for channel, name in enumerate(CHANNELS):
        vertices[name] = cloud.colors[:, channel]

    element = PlyElement.describe(vertices, 'vertex')
    try:
        with open(path, 'wb') as f:
            PlyData([element], text=False, byte_order='<').write(f)
    except OSError as e:
        raise ArtifactIOError(f'cannot write {path}: {e}') from e


def bounding_box(cloud: ColoredPointCloud) -> Aabb:
    if cloud.count == 0:
        raise DomainError('bounding box of an empty cloud')
    return Aabb(
        tuple(cloud.points.min(axis=0).tolist()),
        tuple(cloud.points.max(axis=0).tolist())
    )
