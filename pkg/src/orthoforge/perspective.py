"""Correspondence-driven orthorectification used when no ground plane is found."""
from __future__ import annotations

import itertools
import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from orthoforge.errors import ArtifactIOError, DomainError, FormatError
from orthoforge.rendering import GeoRef, OrthoImage

logger = logging.getLogger(__name__)

COLLINEAR_TOL = 1e-9
EDGE_TOL = 1e-6


def homogenize(pts: np.ndarray) -> np.ndarray:
    return np.hstack([pts, np.ones((len(pts), 1))])


def dehomogenize(pts: np.ndarray) -> np.ndarray:
    return pts[:, :2] / pts[:, 2:3]


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    return dehomogenize(homogenize(pts) @ H.T)


def normalize_points(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Similarity moving ``pts`` to zero mean and mean distance sqrt(2)."""
    mean = pts.mean(axis=0)
    spread = np.linalg.norm(pts - mean, axis=1).mean()
    s = np.sqrt(2) / spread
    T = np.array([
        [s, 0, -s * mean[0]],
        [0, s, -s * mean[1]],
        [0, 0, 1]
    ])
    return homogenize(pts) @ T.T, T


def _check_general_position(pts: np.ndarray, name: str):
    scale = max(np.ptp(pts, axis=0).max(), 1e-300)
    for a, b, c in itertools.combinations(range(len(pts)), 3):
        area = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        if abs(area) <= COLLINEAR_TOL * scale ** 2:
            raise DomainError(f'{name} points {a}, {b}, {c} are collinear')


def estimate_homography(src, dst) -> np.ndarray:
    """Normalized direct linear estimate of H with dst ~ H @ src."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise DomainError(f'correspondences must be two (N, 2) arrays, got {src.shape} and {dst.shape}')
    if len(src) < 4:
        raise DomainError(f'a homography needs 4 correspondences, got {len(src)}')
    _check_general_position(src, 'source')
    _check_general_position(dst, 'target')

    x, T_src = normalize_points(src)
    y, T_dst = normalize_points(dst)
    rows = []
    for (x1, x2, _), (u, v, _) in zip(x, y):
        rows.append([-x1, -x2, -1, 0, 0, 0, u * x1, u * x2, u])
        rows.append([0, 0, 0, -x1, -x2, -1, v * x1, v * x2, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    H = np.linalg.inv(T_dst) @ vt[-1].reshape(3, 3) @ T_src
    return H / H[2, 2]


def perspective_fallback(image: OrthoImage, src, dst, shape: Optional[Tuple[int, int]] = None,
                         origin=(0.0, 0.0), scale: float = 1.0) -> OrthoImage:
    """Warp a photo so that ``src`` pixels land on ``dst`` ground positions.

    Targets become output pixels as ``(dst - origin) / scale``. Output pixels
    whose preimage falls outside the photo, or on a photo hole, are holes.
    """
    targets = (np.asarray(dst, dtype=np.float64) - np.asarray(origin, dtype=np.float64)) / scale
    H = estimate_homography(src, targets)
    inverse = np.linalg.inv(H)
    height, width = shape or (image.height, image.width)

    rows, cols = np.mgrid[0:height, 0:width]
    grid = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)
    sx, sy = apply_homography(inverse, grid).T

    inside = (sx >= -EDGE_TOL) & (sx <= image.width - 1 + EDGE_TOL) & \
        (sy >= -EDGE_TOL) & (sy <= image.height - 1 + EDGE_TOL) & np.isfinite(sx) & np.isfinite(sy)
    coords = np.stack([
        np.clip(np.nan_to_num(sy), 0, image.height - 1),
        np.clip(np.nan_to_num(sx), 0, image.width - 1)
    ])
    rgb = np.stack([
        ndimage.map_coordinates(image.rgb[..., c], coords, order=1, mode='nearest')
        for c in range(3)
    ], axis=-1)
    source_holes = ndimage.map_coordinates(image.hole_mask.astype(np.uint8), coords, order=0, mode='nearest') > 0
    holes = ~inside | source_holes
    rgb[holes] = 0.0
    logger.debug('perspective warp left %d of %d pixels as holes', np.count_nonzero(holes), holes.size)

    # integer output coordinates are pixel centres, rows grow with v
    georef = GeoRef(
        u_min=float(origin[0]) - 0.5 * scale, v_min=float(origin[1]) - 0.5 * scale,
        pixel_scale=scale, full_height=height, rows_down=True
    )
    return OrthoImage(
        rgb.reshape(height, width, 3), holes.reshape(height, width), scale, georef
    )


def load_correspondences(path) -> Tuple[np.ndarray, np.ndarray]:
    """Rows ``sx,sy,tu,tv``; a non-numeric first row is taken as a header."""
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise ArtifactIOError(f'cannot read correspondences {path}: {e}') from e

    values = []
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split(',')
        try:
            row = [float(f) for f in fields]
        except ValueError:
            if not values and number == 1:
                continue
            raise FormatError(f'{path}:{number}: non-numeric correspondence {line!r}') from None
        if len(row) != 4:
            raise FormatError(f'{path}:{number}: expected sx,sy,tu,tv, got {len(row)} fields')
        values.append(row)
    if not values:
        raise FormatError(f'{path}: no correspondences')
    table = np.asarray(values)
    return table[:, :2], table[:, 2:]
