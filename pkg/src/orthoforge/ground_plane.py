from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from orthoforge.errors import DegenerateGeometryError, DomainError, NoPlaneError
from orthoforge.pointcloud_io import ColoredPointCloud, bounding_box
from orthoforge.seeding import stream
from orthoforge.settings import PlaneConfig

logger = logging.getLogger(__name__)

HYPOTHESES_PER_CHUNK = 32
COLLINEAR_TOL = 1e-12


@dataclass(eq=False)
class GroundPlane:
    normal: np.ndarray  # unit (a, b, c)
    offset: float  # d in a*x + b*y + c*z + d = 0
    centroid: np.ndarray
    inlier_fraction: float
    threshold: float
    basis_u: Optional[np.ndarray] = None
    basis_v: Optional[np.ndarray] = None

    @property
    def coefficients(self) -> Tuple[float, float, float, float]:
        a, b, c = self.normal.tolist()
        return a, b, c, float(self.offset)

    @property
    def has_frame(self) -> bool:
        return self.basis_u is not None and self.basis_v is not None

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of ``points`` to the plane."""
        return points @ self.normal + self.offset


@dataclass(eq=False)
class PlanePointSet:
    coords: np.ndarray  # (N, 3) columns u, v, h
    colors: np.ndarray

    def __len__(self):
        return len(self.coords)

    @property
    def u(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.coords[:, 1]

    @property
    def h(self) -> np.ndarray:
        return self.coords[:, 2]


def _canonical_sign(normal: np.ndarray) -> np.ndarray:
    # largest component positive, lowest axis on ties
    return normal if normal[np.argmax(np.abs(normal))] >= 0 else -normal


def _hypotheses(points: np.ndarray, samples: np.ndarray, scale: float):
    p0, p1, p2 = (points[samples[:, k]] for k in range(3))
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > COLLINEAR_TOL * max(scale, 1e-300) ** 2
    normals[valid] /= norms[valid, None]
    normals[~valid] = 0.0
    offsets = -np.einsum('ij,ij->i', normals, p0)
    return normals, offsets, valid


def _score_chunk(scored: np.ndarray, normals: np.ndarray, offsets: np.ndarray, threshold: float) -> np.ndarray:
    dist = np.abs(scored @ normals.T + offsets)
    return np.count_nonzero(dist <= threshold, axis=0)


def _refine(inliers: np.ndarray):
    centroid = inliers.mean(axis=0)
    centered = inliers - centroid
    _, vectors = np.linalg.eigh(centered.T @ centered)
    normal = _canonical_sign(vectors[:, 0])
    return normal / np.linalg.norm(normal), centroid


def fit_plane_ransac(cloud: ColoredPointCloud, threshold: Optional[float] = None,
                     iterations: int = PlaneConfig.iterations, seed: int = 0,
                     score_sample: int = PlaneConfig.score_sample,
                     min_inlier_fraction: float = PlaneConfig.min_inlier_fraction,
                     threads: int = 1) -> GroundPlane:
    """Best-consensus plane of ``cloud``, refined by least squares over its inliers.

    Hypotheses are drawn up front from one seeded stream and scored on a
    fixed subsample, so the result does not depend on ``threads``. The
    winning hypothesis is the lowest-index one with the highest count.
    """
    points = cloud.points
    n_points = len(points)
    if n_points < 3:
        raise DegenerateGeometryError(f'plane fit needs at least 3 points, got {n_points}')
    if iterations < 1:
        raise DomainError(f'iterations must be positive, got {iterations}')

    diagonal = bounding_box(cloud).diagonal
    if threshold is None:
        threshold = PlaneConfig.threshold_frac * diagonal
    if not threshold > 0:
        raise DegenerateGeometryError('all points coincide; no plane is defined')

    centered = points - points.mean(axis=0)
    spread = np.linalg.eigvalsh(centered.T @ centered)
    if spread[1] <= COLLINEAR_TOL * max(spread[2], 1e-300):
        raise DegenerateGeometryError('points are collinear; no plane is defined')

    samples = stream(seed, 'ransac').integers(0, n_points, size=(iterations, 3))
    if n_points > score_sample:
        chosen = stream(seed, 'ransac', 'score').choice(n_points, score_sample, replace=False)
        scored = points[np.sort(chosen)]
    else:
        scored = points

    normals, offsets, valid = _hypotheses(points, samples, diagonal)
    if not valid.any():
        raise DegenerateGeometryError(f'no non-degenerate sample in {iterations} iterations')

    chunks = [slice(i, i + HYPOTHESES_PER_CHUNK) for i in range(0, iterations, HYPOTHESES_PER_CHUNK)]
    work = lambda s: _score_chunk(scored, normals[s], offsets[s], threshold)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = np.concatenate(list(pool.map(work, chunks)))
    else:
        counts = np.concatenate([work(s) for s in chunks])
    counts = np.where(valid, counts, -1)
    best = int(np.argmax(counts))
    logger.debug('ransac best hypothesis %d with %d/%d scored inliers', best, counts[best], len(scored))

    inliers = np.abs(points @ normals[best] + offsets[best]) <= threshold
    fraction = float(np.count_nonzero(inliers)) / n_points

    if fraction < min_inlier_fraction:
        raise NoPlaneError(
            f'best plane holds {fraction:.1%} of points (< {min_inlier_fraction:.0%}); '
            'use the perspective fallback (orthoforge warp)'
        )

    # single least-squares pass over the winning hypothesis' inliers
    normal, centroid = _refine(points[inliers])
    offset = float(-normal @ centroid)
    return GroundPlane(normal, offset, centroid, fraction, float(threshold))


def build_frame(plane: GroundPlane) -> GroundPlane:
    normal = np.asarray(plane.normal, dtype=np.float64)
    axis = np.eye(3)[int(np.argmin(np.abs(normal)))]
    basis_u = axis - (axis @ normal) * normal
    basis_u /= np.linalg.norm(basis_u)
    basis_v = np.cross(normal, basis_u)
    return dataclasses.replace(plane, normal=normal, basis_u=basis_u, basis_v=basis_v)


def frame_matrix(plane: GroundPlane) -> np.ndarray:
    """Rows u, v, n."""
    if not plane.has_frame:
        plane = build_frame(plane)
    return np.stack([plane.basis_u, plane.basis_v, plane.normal])


def to_plane_coords(cloud: ColoredPointCloud, plane: GroundPlane) -> PlanePointSet:
    coords = (cloud.points - plane.centroid) @ frame_matrix(plane).T
    return PlanePointSet(coords, cloud.colors)


def from_plane_coords(coords: np.ndarray, plane: GroundPlane) -> np.ndarray:
    return plane.centroid + np.asarray(coords, dtype=np.float64) @ frame_matrix(plane)


def fix_orientation(pts: PlanePointSet, plane: GroundPlane) -> Tuple[PlanePointSet, GroundPlane]:
    if len(pts) == 0:
        raise DomainError('cannot orient an empty point set')
    if not plane.has_frame:
        plane = build_frame(plane)

    eps = plane.threshold
    above = np.count_nonzero(pts.h > eps)
    below = np.count_nonzero(pts.h < -eps)
    if above >= below:
        return pts, plane

    logger.info('flipping plane normal (%d points above, %d below)', above, below)
    coords = pts.coords * np.array([1.0, -1.0, -1.0])
    flipped = dataclasses.replace(
        plane, normal=-plane.normal, offset=-plane.offset, basis_v=-plane.basis_v
    )
    return PlanePointSet(coords, pts.colors), flipped
