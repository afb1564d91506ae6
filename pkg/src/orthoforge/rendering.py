from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

os.environ.setdefault('PYGAME_HIDE_SUPPORT_PROMPT', '1')
import pygame as pg  # noqa: E402

from orthoforge.errors import ArtifactIOError, DomainError, FormatError  # noqa: E402
from orthoforge.settings import parse_pairs  # noqa: E402

LANCZOS_LOBES = 3
GREY_PALETTE = [(i, i, i) for i in range(256)]


@dataclass
class GeoRef:
    """Maps pixels of a (possibly cropped) orthophoto back to the ground plane.

    ``u_min``/``v_min`` and ``full_height`` describe the uncropped base frame;
    ``crop_x``/``crop_y`` are the columns/rows removed from its left/top.
    Orthophotos put +v at the top row; ``rows_down`` frames (homography warps)
    grow v with the row index instead.
    """
    u_min: float = 0.0
    v_min: float = 0.0
    pixel_scale: float = 1.0
    full_height: int = 0
    crop_x: int = 0
    crop_y: int = 0
    centroid: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None  # rows u, v, n
    rows_down: bool = False

    def pixel_to_plane(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        """Plane (u, v) of the centre of pixel column ``x``, row ``y``."""
        col = np.asarray(x, dtype=np.float64) + self.crop_x
        row = np.asarray(y, dtype=np.float64) + self.crop_y
        u = self.u_min + (col + 0.5) * self.pixel_scale
        if self.rows_down:
            v = self.v_min + (row + 0.5) * self.pixel_scale
        else:
            v = self.v_min + (self.full_height - 1 - row + 0.5) * self.pixel_scale
        return u, v

    def plane_to_scene(self, u, v, h=0.0) -> np.ndarray:
        if self.centroid is None or self.basis is None:
            raise DomainError('georef carries no plane frame')
        coords = np.stack(np.broadcast_arrays(
            np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64),
            np.asarray(h, dtype=np.float64)
        ), axis=-1)
        return self.centroid + coords @ self.basis

    def scene_to_pixel(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Continuous (column, row) of scene points; integers are pixel centres."""
        if self.centroid is None or self.basis is None:
            raise DomainError('georef carries no plane frame')
        local = (np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.centroid) @ self.basis.T
        col = (local[:, 0] - self.u_min) / self.pixel_scale - 0.5 - self.crop_x
        if self.rows_down:
            row = (local[:, 1] - self.v_min) / self.pixel_scale - 0.5 - self.crop_y
        else:
            row = self.full_height - 0.5 - (local[:, 1] - self.v_min) / self.pixel_scale - self.crop_y
        return col, row

    def cropped(self, dx: int, dy: int) -> GeoRef:
        return dataclasses.replace(self, crop_x=self.crop_x + dx, crop_y=self.crop_y + dy)

    def to_pairs(self) -> dict:
        pairs = {
            'u_min': repr(float(self.u_min)),
            'v_min': repr(float(self.v_min)),
            'r': repr(float(self.pixel_scale)),
            'full_height': str(self.full_height),
            'crop_x': str(self.crop_x),
            'crop_y': str(self.crop_y),
        }
        if self.rows_down:
            pairs['rows_down'] = '1'
        if self.centroid is not None and self.basis is not None:
            pairs['centroid'] = ','.join(repr(float(c)) for c in self.centroid)
            for name, row in zip(('basis_u', 'basis_v', 'normal'), self.basis):
                pairs[name] = ','.join(repr(float(c)) for c in row)
        return pairs

    @classmethod
    def from_pairs(cls, pairs: dict, source: str = '<georef>') -> GeoRef:
        vector = lambda key: np.array([float(c) for c in pairs[key].split(',')])  # noqa: E731
        try:
            georef = cls(
                u_min=float(pairs['u_min']), v_min=float(pairs['v_min']),
                pixel_scale=float(pairs['r']), full_height=int(pairs['full_height']),
                crop_x=int(pairs.get('crop_x', 0)), crop_y=int(pairs.get('crop_y', 0)),
                rows_down=pairs.get('rows_down', '0') == '1'
            )
            if 'centroid' in pairs:
                georef.centroid = vector('centroid')
                georef.basis = np.stack([vector(k) for k in ('basis_u', 'basis_v', 'normal')])
        except (KeyError, ValueError) as e:
            raise FormatError(f'{source}: bad georef entry {e}') from e
        return georef


@dataclass(eq=False)
class OrthoImage:
    rgb: np.ndarray  # (H, W, 3) float64 in [0, 255]
    hole_mask: np.ndarray = None  # (H, W) bool
    pixel_scale: float = 1.0
    georef: GeoRef = field(default_factory=GeoRef)

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DomainError(f'expected an (H, W, 3) image, got shape {self.rgb.shape}')
        if self.hole_mask is None:
            self.hole_mask = np.zeros(self.rgb.shape[:2], dtype=bool)
        self.hole_mask = np.asarray(self.hole_mask, dtype=bool)
        if self.hole_mask.shape != self.rgb.shape[:2]:
            raise DomainError(f'hole mask {self.hole_mask.shape} does not match image {self.rgb.shape[:2]}')
        if self.georef.full_height == 0:
            self.georef = dataclasses.replace(
                self.georef, pixel_scale=self.pixel_scale, full_height=self.height
            )

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def hole_count(self) -> int:
        return int(np.count_nonzero(self.hole_mask))

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.rgb), 0, 255).astype(np.uint8)

    def with_rgb(self, rgb: np.ndarray, hole_mask: Optional[np.ndarray] = None) -> OrthoImage:
        return OrthoImage(
            rgb, self.hole_mask if hole_mask is None else hole_mask,
            self.pixel_scale, self.georef
        )


def lanczos(x: np.ndarray, a: int = LANCZOS_LOBES) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)


def _lanczos_taps(n_in: int, factor: int):
    """Source indices and normalized weights for each of ``n_in // factor`` outputs."""
    n_out = n_in // factor
    centers = (np.arange(n_out) + 0.5) * factor - 0.5
    reach = LANCZOS_LOBES * factor
    offsets = np.arange(-reach, reach + 2)
    index = np.floor(centers)[:, None].astype(np.int64) + offsets
    weights = lanczos((index - centers[:, None]) / factor)
    weights /= weights.sum(axis=1, keepdims=True)
    return np.clip(index, 0, n_in - 1), weights


def _resample_axis(data: np.ndarray, factor: int, axis: int) -> np.ndarray:
    index, weights = _lanczos_taps(data.shape[axis], factor)
    moved = np.moveaxis(data, axis, 0)
    out = np.zeros((index.shape[0],) + moved.shape[1:])
    expand = (slice(None),) + (None,) * (moved.ndim - 1)
    for tap in range(index.shape[1]):
        out += weights[:, tap][expand] * moved[index[:, tap]]
    return np.moveaxis(out, 0, axis)


def downsample_lanczos(img: OrthoImage, ssaa: int) -> OrthoImage:
    if ssaa < 1:
        raise DomainError(f'ssaa must be >= 1, got {ssaa}')
    if ssaa == 1:
        return img.with_rgb(img.rgb.copy(), img.hole_mask.copy())

    height, width = img.height // ssaa, img.width // ssaa
    if height < 1 or width < 1:
        raise DomainError(f'{img.width}x{img.height} image is smaller than the ssaa factor {ssaa}')
    rgb = img.rgb[:height * ssaa, :width * ssaa]
    rgb = _resample_axis(_resample_axis(rgb, ssaa, 0), ssaa, 1)
    rgb = np.clip(rgb, 0.0, 255.0)

    votes = img.hole_mask[:height * ssaa, :width * ssaa] \
        .reshape(height, ssaa, width, ssaa).sum(axis=(1, 3))
    holes = 2 * votes > ssaa * ssaa
    rgb[holes] = 0.0

    scale = img.pixel_scale * ssaa
    georef = dataclasses.replace(
        img.georef, pixel_scale=scale, full_height=img.georef.full_height // ssaa,
        crop_x=img.georef.crop_x // ssaa, crop_y=img.georef.crop_y // ssaa
    )
    return OrthoImage(rgb, holes, scale, georef)


def center_crop(img: OrthoImage, crop_frac: float) -> OrthoImage:
    if not 0 <= crop_frac < 0.5:
        raise DomainError(f'crop_frac must be in [0, 0.5), got {crop_frac}')
    dx = int(np.floor(crop_frac * img.width))
    dy = int(np.floor(crop_frac * img.height))
    width, height = img.width - 2 * dx, img.height - 2 * dy
    if width < 1 or height < 1:
        raise DomainError(f'cropping {img.width}x{img.height} by {crop_frac} leaves nothing')
    return OrthoImage(
        img.rgb[dy:dy + height, dx:dx + width].copy(),
        img.hole_mask[dy:dy + height, dx:dx + width].copy(),
        img.pixel_scale, img.georef.cropped(dx, dy)
    )


def holes_path(path) -> Path:
    path = Path(path)
    return path.with_name(f'{path.stem}.holes.png')


def georef_path(path) -> Path:
    path = Path(path)
    return path.with_name(f'{path.stem}.georef.txt')


def _load_surface(path) -> pg.Surface:
    try:
        return pg.image.load(str(path))
    except (pg.error, FileNotFoundError, OSError) as e:
        raise ArtifactIOError(f'cannot read image {path}: {e}') from e


def _save_surface(surface: pg.Surface, path):
    try:
        pg.image.save(surface, str(path))
    except (pg.error, OSError) as e:
        raise ArtifactIOError(f'cannot write image {path}: {e}') from e


def read_rgb(path) -> np.ndarray:
    """(H, W, 3) float64 pixels of an image file."""
    return pg.surfarray.array3d(_load_surface(path)).transpose(1, 0, 2).astype(np.float64)


def write_rgb(rgb: np.ndarray, path):
    pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    _save_surface(pg.surfarray.make_surface(pixels.transpose(1, 0, 2)), path)


def read_grey(path) -> np.ndarray:
    """(H, W) float64 grey levels of an image file."""
    return pg.surfarray.array3d(_load_surface(path))[..., 0].T.astype(np.float64)


def write_grey(values: np.ndarray, path):
    values = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    surface = pg.Surface((values.shape[1], values.shape[0]), depth=8)
    surface.set_palette(GREY_PALETTE)
    pg.surfarray.blit_array(surface, values.T)
    _save_surface(surface, path)


def read_mask(path) -> np.ndarray:
    return read_grey(path) >= 128


def write_mask(mask: np.ndarray, path):
    write_grey(np.where(mask, 255, 0), path)


def save_georef(georef: GeoRef, path):
    lines = [f'{k} = {v}' for k, v in georef.to_pairs().items()]
    try:
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    except OSError as e:
        raise ArtifactIOError(f'cannot write georef {path}: {e}') from e


def load_georef(path) -> GeoRef:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ArtifactIOError(f'cannot read georef {path}: {e}') from e
    return GeoRef.from_pairs(parse_pairs(text.splitlines(), str(path)), str(path))


def save_image(img: OrthoImage, path, sidecars: bool = True):
    """Write the PNG and, with ``sidecars``, its hole mask and georef files."""
    write_rgb(img.rgb, path)
    if sidecars:
        write_mask(img.hole_mask, holes_path(path))
        save_georef(img.georef, georef_path(path))


def load_image(path, mask_path=None) -> OrthoImage:
    """Read an image plus whichever sidecars exist next to it."""
    rgb = read_rgb(path)
    mask_path = Path(mask_path) if mask_path is not None else holes_path(path)
    mask = read_mask(mask_path) if mask_path.exists() else None
    if mask is not None and mask.shape != rgb.shape[:2]:
        raise DomainError(f'mask {mask_path} is {mask.shape}, image is {rgb.shape[:2]}')
    meta = georef_path(path)
    georef = load_georef(meta) if meta.exists() else GeoRef()
    return OrthoImage(rgb, mask, georef.pixel_scale, georef)
