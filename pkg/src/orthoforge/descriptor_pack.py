"""Binary descriptor packs and the labels-CSV + raw matrix alternative.

Pack layout (little-endian)::

    b'UAVDESC1' | u16 version | u8 normalized | u8 reserved | u32 count | u32 dim
    count x ( u16 len | id | u16 len | label | dim x f32 )
    [ b'META' | u32 len | key=value lines ]
"""
from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from orthoforge.errors import ArtifactIOError, FormatError, NormalizationError, TruncatedBodyError
from orthoforge.retrieval import DescriptorSet
from orthoforge.settings import parse_pairs

logger = logging.getLogger(__name__)

MAGIC = b'UAVDESC1'
VERSION = 1
HEADER = struct.Struct('<8sHBBII')
LENGTH = struct.Struct('<H')
META_TAG = b'META'
META_LENGTH = struct.Struct('<I')
UNIT_TOLERANCE = 1e-6


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.pos = 0
        self.source = source

    @property
    def remaining(self) -> int:
        return len(self.raw) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.remaining < n:
            raise TruncatedBodyError(f'{self.source}: truncated {what}', n, self.remaining)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def text(self, what: str) -> str:
        (n,) = LENGTH.unpack(self.take(LENGTH.size, what + ' length'))
        try:
            return self.take(n, what).decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError(f'{self.source}: {what} is not UTF-8') from None


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f'cannot read {path}: {e}') from e


def _check_unit(ids: List[str], vectors: np.ndarray, source: str) -> None:
    norms = np.linalg.norm(np.asarray(vectors, dtype=np.float64), axis=1)
    bad = np.flatnonzero(~(np.abs(norms - 1.0) <= UNIT_TOLERANCE))
    if bad.size:
        i = bad[0]
        raise NormalizationError(f"{source}: descriptor {ids[i]!r} has norm {norms[i]:.9g}, flagged as normalized")


def decode_pack(raw: bytes, source: str = '<pack>') -> DescriptorSet:
    reader = _Reader(raw, source)
    magic, version, normalized, _, count, dim = HEADER.unpack(reader.take(HEADER.size, 'header'))
    if magic != MAGIC:
        raise FormatError(f'{source}: bad magic {magic!r}')
    if version != VERSION:
        raise FormatError(f'{source}: unsupported pack version {version}')

    smallest = count * (2 * LENGTH.size + 4 * dim)
    if smallest > reader.remaining:
        raise TruncatedBodyError(f'{source}: truncated records', smallest, reader.remaining)

    ids: List[str] = []
    labels: List[str] = []
    vectors = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        ids.append(reader.text('id'))
        labels.append(reader.text('label'))
        vectors[i] = np.frombuffer(reader.take(4 * dim, 'vector'), dtype='<f4')

    meta: Dict[str, str] = {}
    if reader.remaining:
        if reader.take(len(META_TAG), 'trailer') != META_TAG:
            raise FormatError(f'{source}: unexpected bytes after {count} records')
        (n,) = META_LENGTH.unpack(reader.take(META_LENGTH.size, 'metadata length'))
        text = reader.take(n, 'metadata').decode('utf-8', errors='replace')
        meta = parse_pairs(text.splitlines(), source)
        if reader.remaining:
            raise FormatError(f'{source}: {reader.remaining} bytes after metadata')

    if normalized:
        _check_unit(ids, vectors, source)
        return DescriptorSet(ids, vectors, labels, meta)
    logger.debug('%s stores raw latents; normalizing %d rows', source, count)
    return DescriptorSet.from_raw(ids, vectors, labels, meta)


def encode_pack(descriptors: DescriptorSet) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, 1, 0, len(descriptors), descriptors.dim)]
    for key, label, vector in zip(descriptors.ids, descriptors.labels, descriptors.vectors):
        for text in (key, label):
            data = text.encode('utf-8')
            parts += [LENGTH.pack(len(data)), data]
        parts.append(vector.astype('<f4').tobytes())
    if descriptors.meta:
        text = '\n'.join(f'{k}={v}' for k, v in descriptors.meta.items()).encode('utf-8')
        parts += [META_TAG, META_LENGTH.pack(len(text)), text]
    return b''.join(parts)


def load_descriptor_pack(path) -> DescriptorSet:
    path = Path(path)
    return decode_pack(_read_bytes(path), str(path))


def save_descriptor_pack(descriptors: DescriptorSet, path) -> None:
    try:
        Path(path).write_bytes(encode_pack(descriptors))
    except OSError as e:
        raise ArtifactIOError(f'cannot write {path}: {e}') from e


def read_labels(path) -> Tuple[List[str], List[str]]:
    """``id,class_label`` rows; a first row ``id,class_label`` is a header."""
    path = Path(path)
    try:
        with path.open(newline='', encoding='utf-8') as f:
            rows = [row for row in csv.reader(f) if row]
    except OSError as e:
        raise ArtifactIOError(f'cannot read {path}: {e}') from e
    if rows and [c.strip() for c in rows[0]] == ['id', 'class_label']:
        rows = rows[1:]
    for number, row in enumerate(rows, start=1):
        if len(row) != 2:
            raise FormatError(f'{path}: row {number} needs id,class_label, got {len(row)} fields')
    return [r[0].strip() for r in rows], [r[1].strip() for r in rows]


def load_labeled_matrix(labels_path, matrix_path, normalized: bool = False) -> DescriptorSet:
    """Descriptors from a labels CSV and a raw little-endian float32 matrix."""
    ids, labels = read_labels(labels_path)
    if not ids:
        raise FormatError(f'{labels_path}: no rows')
    raw = _read_bytes(Path(matrix_path))
    values, rest = divmod(len(raw), 4)
    if rest or values % len(ids):
        raise FormatError(f'{matrix_path}: {len(raw)} bytes do not split into {len(ids)} float32 rows')
    matrix = np.frombuffer(raw, dtype='<f4').reshape(len(ids), -1)
    if normalized:
        _check_unit(ids, matrix, str(matrix_path))
        return DescriptorSet(ids, matrix, labels)
    return DescriptorSet.from_raw(ids, matrix, labels)
