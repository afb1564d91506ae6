from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from orthoforge.errors import DegenerateGeometryError, DomainError
from orthoforge.ground_plane import (
    GroundPlane, PlanePointSet, build_frame, fit_plane_ransac, fix_orientation,
    frame_matrix, to_plane_coords
)
from orthoforge.pointcloud_io import ColoredPointCloud
from orthoforge.rendering import GeoRef, OrthoImage, center_crop, downsample_lanczos
from orthoforge.settings import PlaneConfig, RasterConfig

logger = logging.getLogger(__name__)

HEIGHT_SCALE_PERCENTILE = 98
ROBUST_RANGE = (5, 95)


@dataclass
class HeightBands:
    h_norm: np.ndarray
    scale: float  # p98 of positive heights
    delta: float  # roof band width, normalized units
    ground_band: float

    @property
    def tau(self) -> float:
        return self.delta / 2 if self.delta > 0 else 1.0

    @property
    def ground(self) -> np.ndarray:
        return np.abs(self.h_norm) <= self.ground_band

    @property
    def roof(self) -> np.ndarray:
        return self.h_norm > self.ground_band


def height_bands(h: np.ndarray, cfg: RasterConfig, floor: float = 0.0) -> HeightBands:
    """Normalize heights by the p98 of positive heights, never below ``floor``.

    Passing ``floor = threshold / ground_band`` keeps every plane inlier
    inside the ground band even on clouds with nothing above the ground.
    """
    positive = h[h > 0]
    scale = float(np.percentile(positive, HEIGHT_SCALE_PERCENTILE)) if positive.size else 0.0
    scale = max(scale, floor)
    if not scale > 0:
        scale = 1.0
    h_norm = h / scale
    lo, hi = np.percentile(h_norm, ROBUST_RANGE) if h_norm.size else (0.0, 0.0)
    return HeightBands(h_norm, scale, cfg.roof_band_frac * float(hi - lo), cfg.ground_band)


def roof_weight(h, h_max, delta: float):
    """Top-band fusion weight exp((h - h_max) / tau) with tau = delta / 2."""
    return np.exp((np.asarray(h, dtype=np.float64) - h_max) / (delta / 2))


@dataclass
class PixelGrid:
    pixel_scale: float
    width: int
    height: int
    u_min: float = 0.0
    v_min: float = 0.0
    fallback: bool = False  # ground band had no area

    def __iter__(self):
        return iter((self.pixel_scale, self.width, self.height))

    @property
    def pixels(self) -> int:
        return self.width * self.height


def pixel_scale_for(area: float, count: int, cfg: RasterConfig) -> float:
    target_pixels = count / cfg.rho
    return float(np.clip(np.sqrt(area / target_pixels), cfg.r_min, cfg.r_max))


def _grid_size(extent: float, r: float) -> int:
    return int(np.floor(extent / r)) + 1


def fit_pixel_grid(extent_u: float, extent_v: float, r: float, p_max: int) -> Tuple[float, int, int]:
    width, height = _grid_size(extent_u, r), _grid_size(extent_v, r)
    if width * height > p_max:
        r *= np.sqrt(width * height / p_max)
        width, height = _grid_size(extent_u, r), _grid_size(extent_v, r)
    while width * height > p_max:
        r *= 1 + 1 / min(width, height)
        width, height = _grid_size(extent_u, r), _grid_size(extent_v, r)
    return float(r), width, height


def choose_resolution(pts: PlanePointSet, cfg: RasterConfig, bands: Optional[HeightBands] = None) -> PixelGrid:
    if len(pts) == 0:
        raise DomainError('cannot choose a resolution for an empty point set')
    bands = bands or height_bands(pts.h, cfg)
    ground = bands.ground

    fallback = False
    area = 0.0
    if ground.any():
        area = float(np.ptp(pts.u[ground]) * np.ptp(pts.v[ground]))
        count = int(np.count_nonzero(ground))
    if area <= 0:
        fallback = True
        area = float(np.ptp(pts.u) * np.ptp(pts.v))
        count = len(pts)
        logger.warning('ground band has zero area; using the full bounding rectangle')
    if area <= 0:
        raise DegenerateGeometryError('point set has zero footprint in the plane')

    r = pixel_scale_for(area, count, cfg)
    r, width, height = fit_pixel_grid(float(np.ptp(pts.u)), float(np.ptp(pts.v)), r, cfg.p_max)
    grid = PixelGrid(r, width, height, float(pts.u.min()), float(pts.v.min()), fallback)
    logger.debug('grid r=%.6g %dx%d (A=%.6g, N=%d)', r, width, height, area, count)
    return grid


@dataclass(eq=False)
class OrthoFrameBuffer:
    """Layered accumulators on the supersampled grid; row 0 is the far v edge."""
    roof_color: np.ndarray  # (H, W, 3) weighted sums
    roof_weight: np.ndarray
    roof_hits: np.ndarray
    h_max: np.ndarray  # -inf where no roof candidate reaches
    ground_color: np.ndarray
    ground_weight: np.ndarray
    ground_hits: np.ndarray
    origin: Tuple[float, float]
    pixel_scale: float
    ssaa: int
    m_min: int
    w_sat: float

    @property
    def height(self) -> int:
        return self.roof_weight.shape[0]

    @property
    def width(self) -> int:
        return self.roof_weight.shape[1]

    @property
    def occupancy(self) -> np.ndarray:
        return np.minimum(1.0, self.roof_weight / self.w_sat)

    @property
    def holes(self) -> np.ndarray:
        return (self.roof_hits < self.m_min) & (self.ground_hits == 0)

    def roof_rgb(self) -> np.ndarray:
        return _mean_color(self.roof_color, self.roof_weight)

    def ground_rgb(self) -> np.ndarray:
        return _mean_color(self.ground_color, self.ground_weight)


def _mean_color(total: np.ndarray, weight: np.ndarray) -> np.ndarray:
    out = np.zeros_like(total)
    filled = weight > 0
    out[filled] = total[filled] / weight[filled, None]
    return out


class _Splatter:
    """Truncated Gaussian disc footprints of samples on a row-major pixel grid."""

    def __init__(self, u, v, origin, pixel_scale, width, height, radius):
        self.width, self.height = width, height
        self.radius = radius
        self.sigma = radius / 2
        self.reach = int(np.ceil(radius))
        self.fx = (u - origin[0]) / pixel_scale
        self.fy = (v - origin[1]) / pixel_scale
        self.col = np.clip(np.floor(self.fx).astype(np.int64), 0, width - 1)
        self.row_up = np.clip(np.floor(self.fy).astype(np.int64), 0, height - 1)
        # image rows grow downwards while v grows upwards
        self.row = height - 1 - self.row_up

    def offsets(self) -> List[Tuple[int, int]]:
        span = range(-self.reach, self.reach + 1)
        return [(dy, dx) for dy in span for dx in span]

    def footprint(self, rows: Tuple[int, int]) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (sample ids, local pixel index, kernel) per offset for pixels in ``rows``."""
        first, last = rows
        near = np.flatnonzero((self.row >= first - self.reach) & (self.row < last + self.reach))
        for dy, dx in self.offsets():
            col = self.col[near] + dx
            up = self.row_up[near] + dy
            d2 = (col + 0.5 - self.fx[near]) ** 2 + (up + 0.5 - self.fy[near]) ** 2
            row = self.height - 1 - up
            keep = (d2 <= self.radius ** 2) & (col >= 0) & (col < self.width) & (row >= first) & (row < last)
            if not keep.any():
                continue
            kernel = np.exp(-d2[keep] / (2 * self.sigma ** 2))
            yield near[keep], (row[keep] - first) * self.width + col[keep], kernel


def _row_bands(height: int, count: int) -> List[Tuple[int, int]]:
    edges = np.linspace(0, height, max(1, min(count, height)) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_tiles(work, bands, threads: int) -> list:
    if threads > 1 and len(bands) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, bands))
    return [work(band) for band in bands]


def _accumulate(splat: _Splatter, band, weights_of, colors: np.ndarray):
    """Weighted color sums, weight sums and hit counts for the pixel rows in ``band``.

    ``weights_of(ids, pixels, kernel)`` maps footprint entries (``pixels`` as
    flat indices into the whole grid) to ``(weights, cloud ids, kept)``.
    """
    first = band[0] * splat.width
    size = (band[1] - band[0]) * splat.width
    color = np.zeros((size, 3))
    weight = np.zeros(size)
    hits = np.zeros(size, dtype=np.int64)
    for ids, index, kernel in splat.footprint(band):
        w, cloud_ids, kept = weights_of(ids, index + first, kernel)
        index = index[kept]
        for channel in range(3):
            color[:, channel] += np.bincount(index, weights=w * colors[cloud_ids, channel], minlength=size)
        weight += np.bincount(index, weights=w, minlength=size)
        hits += np.bincount(index, minlength=size)
    return color, weight, hits


def rasterize_layers(pts: PlanePointSet, cfg: RasterConfig, grid: Optional[PixelGrid] = None,
                     threads: int = 1, bands: Optional[HeightBands] = None) -> OrthoFrameBuffer:
    """Two-pass roof/ground rasterization on the ``ssaa``-times finer grid.

    Pass one finds the highest roof candidate reaching each pixel; pass two
    fuses roof samples in the band [h_max - delta, h_max] with
    exp((h - h_max) / tau) weights and averages ground-band samples. Every
    contribution is additionally scaled by the splat kernel.
    """
    bands = bands or height_bands(pts.h, cfg)
    grid = grid or choose_resolution(pts, cfg, bands)
    scale = grid.pixel_scale / cfg.ssaa
    width, height = grid.width * cfg.ssaa, grid.height * cfg.ssaa
    origin = (grid.u_min, grid.v_min)
    tiles = _row_bands(height, threads)
    colors = pts.colors.astype(np.float64)

    roof = np.flatnonzero(bands.roof)
    ground = np.flatnonzero(bands.ground)
    roof_splat = _Splatter(pts.u[roof], pts.v[roof], origin, scale, width, height, cfg.splat_radius_px)
    ground_splat = _Splatter(pts.u[ground], pts.v[ground], origin, scale, width, height, cfg.splat_radius_px)
    roof_h = bands.h_norm[roof]

    def top_of_band(band):
        h_max = np.full((band[1] - band[0]) * width, -np.inf)
        for ids, index, _ in roof_splat.footprint(band):
            np.maximum.at(h_max, index, roof_h[ids])
        return h_max

    h_max = np.concatenate(_run_tiles(top_of_band, tiles, threads))

    def roof_weights(ids, pixels, kernel):
        top = h_max[pixels]
        keep = roof_h[ids] >= top - bands.delta
        w = np.exp((roof_h[ids][keep] - top[keep]) / bands.tau) * kernel[keep]
        return w, roof[ids[keep]], keep

    def ground_weights(ids, pixels, kernel):
        return kernel, ground[ids], slice(None)

    roof_layer = _run_tiles(lambda b: _accumulate(roof_splat, b, roof_weights, colors), tiles, threads)
    ground_layer = _run_tiles(lambda b: _accumulate(ground_splat, b, ground_weights, colors), tiles, threads)

    def stack(layer, part, shape):
        return np.concatenate([tile[part] for tile in layer]).reshape(shape)

    buf = OrthoFrameBuffer(
        roof_color=stack(roof_layer, 0, (height, width, 3)),
        roof_weight=stack(roof_layer, 1, (height, width)),
        roof_hits=stack(roof_layer, 2, (height, width)),
        h_max=h_max.reshape(height, width),
        ground_color=stack(ground_layer, 0, (height, width, 3)),
        ground_weight=stack(ground_layer, 1, (height, width)),
        ground_hits=stack(ground_layer, 2, (height, width)),
        origin=origin, pixel_scale=scale, ssaa=cfg.ssaa,
        m_min=cfg.m_min, w_sat=cfg.w_sat
    )
    sparse = buf.roof_hits < cfg.m_min
    buf.roof_color[sparse] = 0.0
    buf.roof_weight[sparse] = 0.0
    return buf


def composite(buf: OrthoFrameBuffer, georef: Optional[GeoRef] = None) -> OrthoImage:
    """c = alpha * c_roof + (1 - alpha) * c_ground on the supersampled grid."""
    alpha = buf.occupancy
    roof, ground = buf.roof_rgb(), buf.ground_rgb()
    # roof without any ground underneath shows the roof alone
    alpha = np.where((buf.ground_weight > 0) | (alpha == 0), alpha, 1.0)
    rgb = alpha[..., None] * roof + (1 - alpha[..., None]) * ground
    holes = buf.holes
    rgb[holes] = 0.0

    if georef is None:
        georef = GeoRef()
    georef = GeoRef(
        u_min=buf.origin[0], v_min=buf.origin[1], pixel_scale=buf.pixel_scale,
        full_height=buf.height, centroid=georef.centroid, basis=georef.basis
    )
    return OrthoImage(rgb, holes, buf.pixel_scale, georef)


class OrthoRenderer:
    """Cloud to cropped orthophoto; keeps every intermediate for inspection."""

    def __init__(self, cfg: Optional[RasterConfig] = None, plane_cfg: Optional[PlaneConfig] = None,
                 seed: int = 0, threads: int = 1):
        self.cfg = cfg or RasterConfig()
        self.plane_cfg = plane_cfg or PlaneConfig()
        self.seed = seed
        self.threads = threads

        self.timings: Dict[str, float] = {}
        self.plane: Optional[GroundPlane] = None
        self.points: Optional[PlanePointSet] = None
        self.bands: Optional[HeightBands] = None
        self.grid: Optional[PixelGrid] = None
        self.buffer: Optional[OrthoFrameBuffer] = None
        self.supersampled: Optional[OrthoImage] = None
        self.uncropped: Optional[OrthoImage] = None

    def _timed(self, stage: str, func, *args, **kwargs):
        start = time.perf_counter()
        result = func(*args, **kwargs)
        self.timings[stage] = time.perf_counter() - start
        logger.info('%s took %.3fs', stage, self.timings[stage])
        return result

    def _fit(self, cloud: ColoredPointCloud):
        plane = fit_plane_ransac(
            cloud, self.plane_cfg.threshold, self.plane_cfg.iterations, self.seed,
            self.plane_cfg.score_sample, self.plane_cfg.min_inlier_fraction, self.threads
        )
        plane = build_frame(plane)
        points, plane = fix_orientation(to_plane_coords(cloud, plane), plane)
        return plane, points

    def render(self, cloud: ColoredPointCloud) -> OrthoImage:
        self.plane, self.points = self._timed('plane', self._fit, cloud)
        floor = self.plane.threshold / self.cfg.ground_band if self.cfg.ground_band > 0 else 0.0
        self.bands = height_bands(self.points.h, self.cfg, floor)
        self.grid = self._timed('resolution', choose_resolution, self.points, self.cfg, self.bands)
        self.buffer = self._timed(
            'rasterize', rasterize_layers, self.points, self.cfg, self.grid, self.threads, self.bands
        )
        frame = GeoRef(centroid=self.plane.centroid, basis=frame_matrix(self.plane))
        self.supersampled = self._timed('composite', composite, self.buffer, frame)
        self.uncropped = self._timed('downsample', downsample_lanczos, self.supersampled, self.cfg.ssaa)
        return center_crop(self.uncropped, self.cfg.crop_frac)


def render_orthophoto(cloud: ColoredPointCloud, cfg: Optional[RasterConfig] = None, seed: int = 0,
                      plane_cfg: Optional[PlaneConfig] = None, threads: int = 1) -> OrthoImage:
    return OrthoRenderer(cfg, plane_cfg, seed, threads).render(cloud)
