"""Synthetic box-city scenes with analytic nadir ground truth."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from orthoforge.errors import DomainError
from orthoforge.pointcloud_io import ColoredPointCloud
from orthoforge.rendering import GeoRef, OrthoImage
from orthoforge.seeding import stream

logger = logging.getLogger(__name__)

Color = Tuple[int, int, int]

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
CLOSE_ENOUGH = 16


@dataclass(frozen=True)
class Box:
    center_x: float
    center_y: float
    width: float  # along x
    depth: float  # along y
    height: float
    roof_rgb: Color = (200, 40, 40)
    wall_rgb: Color = (90, 90, 200)

    @property
    def x_range(self) -> Tuple[float, float]:
        return self.center_x - self.width / 2, self.center_x + self.width / 2

    @property
    def y_range(self) -> Tuple[float, float]:
        return self.center_y - self.depth / 2, self.center_y + self.depth / 2

    def contains(self, x, y, margin: float = 0.0) -> np.ndarray:
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        return (x >= x0 + margin) & (x < x1 - margin) & (y >= y0 + margin) & (y < y1 - margin)


@dataclass(frozen=True)
class BoxCityScene:
    extent: Tuple[float, float] = (40.0, 40.0)  # ground spans [0, W] x [0, H]
    ground_rgb: Color = (40, 140, 50)
    checker_rgb: Optional[Color] = None
    checker_cell: float = 1.0
    boxes: Tuple[Box, ...] = ()
    density: float = 50.0  # points per unit^2
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        width, height = self.extent
        if width <= 0 or height <= 0:
            raise DomainError(f'ground extent must be positive, got {self.extent}')
        if self.density <= 0:
            raise DomainError(f'density must be positive, got {self.density}')
        if self.noise_sigma < 0:
            raise DomainError('noise sigma must be nonnegative')
        if self.checker_rgb is not None and self.checker_cell <= 0:
            raise DomainError('checker cell must be positive')
        for i, box in enumerate(self.boxes):
            (x0, x1), (y0, y1) = box.x_range, box.y_range
            if box.height <= 0 or box.width <= 0 or box.depth <= 0:
                raise DomainError(f'box {i} needs positive size and height')
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise DomainError(f'box {i} leaves the ground extent')

    def ground_color(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        rgb = np.empty(x.shape + (3,))
        rgb[...] = self.ground_rgb
        if self.checker_rgb is not None:
            odd = (np.floor(x / self.checker_cell) + np.floor(y / self.checker_cell)) % 2 == 1
            rgb[odd] = self.checker_rgb
        return rgb

    def _by_height(self) -> List[int]:
        return sorted(range(len(self.boxes)), key=lambda i: (self.boxes[i].height, i))

    def visible_box(self, x, y, margin: float = 0.0) -> np.ndarray:
        """Index of the box seen from nadir at (x, y), or -1 for ground.

        Overlaps go to the taller box. ``margin`` shrinks every footprint.
        """
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        index = np.full(x.shape, -1)
        for i in self._by_height():
            index[self.boxes[i].contains(x, y, margin)] = i
        return index

    def truth_at(self, x, y) -> np.ndarray:
        rgb = self.ground_color(x, y)
        index = self.visible_box(x, y)
        for i, box in enumerate(self.boxes):
            rgb[index == i] = box.roof_rgb
        return rgb

    def _hidden(self, x, y, z, owner: int) -> np.ndarray:
        # inside a taller box, so no camera sees it
        hidden = np.zeros(x.shape, dtype=bool)
        for i, box in enumerate(self.boxes):
            if i != owner:
                hidden |= box.contains(x, y) & (z < box.height)
        return hidden


def _surface_count(area: float, density: float) -> int:
    return int(round(area * density))


def _sample_ground(scene: BoxCityScene, rng: np.random.Generator):
    width, height = scene.extent
    n = _surface_count(width * height, scene.density)
    x = rng.uniform(0, width, n)
    y = rng.uniform(0, height, n)
    keep = scene.visible_box(x, y) < 0
    x, y = x[keep], y[keep]
    return np.stack([x, y, np.zeros_like(x)], axis=1), scene.ground_color(x, y)


def _sample_box(scene: BoxCityScene, index: int, rng: np.random.Generator):
    box = scene.boxes[index]
    (x0, x1), (y0, y1) = box.x_range, box.y_range
    parts, colors = [], []

    n = _surface_count(box.width * box.depth, scene.density)
    roof = np.stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), np.full(n, box.height)], axis=1)
    parts.append(roof)
    colors.append(np.tile(np.asarray(box.roof_rgb, dtype=np.float64), (n, 1)))

    walls = [
        ((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)),
        ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0)),
    ]
    for (ax, ay), (bx, by) in walls:
        length = np.hypot(bx - ax, by - ay)
        n = _surface_count(length * box.height, scene.density)
        t = rng.uniform(0, 1, n)
        wall = np.stack([ax + t * (bx - ax), ay + t * (by - ay), rng.uniform(0, box.height, n)], axis=1)
        parts.append(wall)
        colors.append(np.tile(np.asarray(box.wall_rgb, dtype=np.float64), (n, 1)))

    points = np.concatenate(parts)
    keep = ~scene._hidden(points[:, 0], points[:, 1], points[:, 2], index)
    return points[keep], np.concatenate(colors)[keep]


def truth_image(scene: BoxCityScene, pixel_scale: float) -> OrthoImage:
    """Nadir projection of ``scene`` on a grid anchored at the ground origin."""
    if pixel_scale <= 0:
        raise DomainError(f'pixel scale must be positive, got {pixel_scale}')
    width = int(round(scene.extent[0] / pixel_scale))
    height = int(round(scene.extent[1] / pixel_scale))
    georef = GeoRef(0.0, 0.0, pixel_scale, height, centroid=np.zeros(3), basis=np.eye(3))
    rows, cols = np.mgrid[0:height, 0:width]
    u, v = georef.pixel_to_plane(cols, rows)
    return OrthoImage(scene.truth_at(u, v), None, pixel_scale, georef)


def generate_box_city(scene: BoxCityScene, pixel_scale: float = 0.1) -> Tuple[ColoredPointCloud, OrthoImage]:
    """Sample ground, roofs and walls; deterministic for ``scene.seed``."""
    parts = [_sample_ground(scene, stream(scene.seed, 'box-city', 'ground'))]
    for i in range(len(scene.boxes)):
        parts.append(_sample_box(scene, i, stream(scene.seed, 'box-city', 'box', i)))
    points = np.concatenate([p for p, _ in parts])
    colors = np.concatenate([c for _, c in parts])
    if scene.noise_sigma > 0:
        points = points + stream(scene.seed, 'box-city', 'noise').normal(0, scene.noise_sigma, points.shape)
    logger.debug('box city: %d points over %d boxes', len(points), len(scene.boxes))
    cloud = ColoredPointCloud(points.astype(np.float32), colors.astype(np.uint8))
    return cloud, truth_image(scene, pixel_scale)


def four_box_city(extent: float = 40.0, density: float = 50.0, noise_sigma: float = 0.02,
                  seed: int = 0, tall: bool = False) -> BoxCityScene:
    """Four boxes of different heights on a green ground; ``tall`` triples the heights."""
    s = extent / 40.0
    k = 3.0 if tall else 1.0
    boxes = (
        Box(10 * s, 10 * s, 8 * s, 6 * s, 4 * s * k, (200, 40, 40), (90, 90, 200)),
        Box(28 * s, 11 * s, 10 * s, 8 * s, 6 * s * k, (230, 200, 40), (90, 90, 200)),
        Box(11 * s, 29 * s, 7 * s, 10 * s, 3 * s * k, (40, 60, 220), (200, 120, 200)),
        Box(29 * s, 29 * s, 9 * s, 9 * s, 8 * s * k, (240, 240, 240), (120, 60, 20)),
    )
    return BoxCityScene((extent, extent), (40, 140, 50), boxes=boxes, density=density,
                        noise_sigma=noise_sigma, seed=seed)


def scene_xy(georef: GeoRef, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Ground (x, y) under every pixel centre of an image with ``georef``."""
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]]
    u, v = georef.pixel_to_plane(cols, rows)
    scene = georef.plane_to_scene(u, v)
    # pixel rays are along the plane normal; follow them down to z = 0
    normal = georef.basis[2]
    if abs(normal[2]) > 1e-12:
        scene = scene - (scene[..., 2:3] / normal[2]) * normal
    return scene[..., 0], scene[..., 1]


def truth_for(scene: BoxCityScene, img: OrthoImage) -> OrthoImage:
    """Ground truth resampled onto the pixel grid of a rendered image."""
    x, y = scene_xy(img.georef, (img.height, img.width))
    return OrthoImage(scene.truth_at(x, y), None, img.pixel_scale, img.georef)


@dataclass
class ImageComparison:
    channel_mad: np.ndarray
    within_16: float
    ssim: float
    pixels: int

    @property
    def mean_abs_diff(self) -> float:
        return float(np.mean(self.channel_mad))

    def to_pairs(self) -> dict:
        return {
            'mean_abs_diff': repr(self.mean_abs_diff),
            'channel_mad': ','.join(repr(float(c)) for c in self.channel_mad),
            'within_16': repr(self.within_16),
            'ssim': repr(self.ssim),
            'pixels': str(self.pixels),
        }


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM of two single-channel images over 8x8 windows."""
    mean = lambda x: ndimage.uniform_filter(x, SSIM_WINDOW, mode='reflect')  # noqa: E731
    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a * mu_a
    var_b = mean(b * b) - mu_b * mu_b
    cov = mean(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / \
        ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))


def compare_images(a: OrthoImage, b: OrthoImage, exclude_holes: bool = True,
                   mask: Optional[np.ndarray] = None) -> ImageComparison:
    """Mean absolute difference, fraction within 16 levels and SSIM.

    ``mask`` restricts the statistics to selected pixels on top of the hole
    exclusion.
    """
    if a.rgb.shape != b.rgb.shape:
        raise DomainError(f'image sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}')
    valid = np.ones(a.rgb.shape[:2], dtype=bool)
    if exclude_holes:
        valid &= ~(a.hole_mask | b.hole_mask)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise DomainError('no pixels left to compare')

    diff = np.abs(a.rgb - b.rgb)[valid]
    ssim = np.mean([ssim_map(a.rgb[..., c], b.rgb[..., c])[valid] for c in range(3)])
    return ImageComparison(
        channel_mad=diff.mean(axis=0),
        within_16=float(np.mean(diff.max(axis=1) <= CLOSE_ENOUGH)),
        ssim=float(ssim),
        pixels=int(np.count_nonzero(valid)),
    )


@dataclass
class ObliqueCamera:
    """Pinhole camera; image rows grow along the camera's down vector."""
    position: np.ndarray
    look_at: np.ndarray
    focal_px: float
    width: int
    height: int
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        forward = self.look_at - self.position
        if np.linalg.norm(forward) == 0:
            raise DomainError('camera position and target coincide')
        self.forward = forward / np.linalg.norm(forward)
        right = np.cross(self.forward, self.up)
        if np.linalg.norm(right) < 1e-9:
            raise DomainError('camera up vector is parallel to the viewing direction')
        self.right = right / np.linalg.norm(right)
        self.down = np.cross(self.forward, self.right)

    def project(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Continuous (column, row) and depth of scene points."""
        rel = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.position
        depth = rel @ self.forward
        with np.errstate(divide='ignore', invalid='ignore'):
            col = self.width / 2 + self.focal_px * (rel @ self.right) / depth
            row = self.height / 2 + self.focal_px * (rel @ self.down) / depth
        return col, row, depth


def render_oblique_view(cloud: ColoredPointCloud, camera: ObliqueCamera) -> OrthoImage:
    """Photo of ``cloud`` with a nearest-point z-buffer; empty pixels are holes."""
    col, row, depth = camera.project(cloud.points)
    ok = (depth > 0) & np.isfinite(col) & np.isfinite(row)
    ci = np.floor(np.where(ok, col, -1)).astype(np.int64)
    ri = np.floor(np.where(ok, row, -1)).astype(np.int64)
    ok &= (ci >= 0) & (ci < camera.width) & (ri >= 0) & (ri < camera.height)

    ids = np.flatnonzero(ok)
    key = ri[ids] * camera.width + ci[ids]
    order = np.lexsort((depth[ids], key))
    pixels, first = np.unique(key[order], return_index=True)
    nearest = ids[order[first]]

    rgb = np.zeros((camera.height * camera.width, 3))
    rgb[pixels] = cloud.colors[nearest]
    holes = np.ones(camera.height * camera.width, dtype=bool)
    holes[pixels] = False
    return OrthoImage(rgb.reshape(camera.height, camera.width, 3),
                      holes.reshape(camera.height, camera.width))
