from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from orthoforge.errors import DomainError
from orthoforge.rendering import OrthoImage

logger = logging.getLogger(__name__)

KNOWN, BAND, INSIDE = 0, 1, 2
NEIGHBOURS = [(-1, 0), (1, 0), (0, -1), (0, 1)]


@dataclass
class HoleMask:
    flags: np.ndarray  # (H, W) bool, True = fill
    dilation: int = 0

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.ndim != 2:
            raise DomainError(f'hole mask must be 2-D, got shape {self.flags.shape}')

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.flags))

    @classmethod
    def from_image(cls, img: OrthoImage, dilation: int = 0) -> HoleMask:
        return cls(img.hole_mask.copy()).dilated(dilation)

    def dilated(self, pixels: int) -> HoleMask:
        if pixels < 0:
            raise DomainError(f'dilation must be >= 0, got {pixels}')
        if pixels == 0 or not self.flags.any():
            return HoleMask(self.flags.copy(), self.dilation)
        grown = ndimage.binary_dilation(
            self.flags, structure=np.ones((3, 3), dtype=bool), iterations=pixels
        )
        return HoleMask(grown, self.dilation + pixels)


def _eikonal(a: float, b: float) -> float:
    """Arrival time from one vertical and one horizontal neighbour."""
    if math.isinf(a) and math.isinf(b):
        return math.inf
    if math.isinf(a) or math.isinf(b):
        return 1.0 + min(a, b)
    if abs(a - b) >= 1.0:
        return 1.0 + min(a, b)
    return 0.5 * (a + b + math.sqrt(2.0 - (a - b) ** 2))


class FastMarchingInpainter:
    """Fills holes in order of distance from the known region.

    Each reached pixel takes the average of the already known pixels within
    ``radius``, weighted by inverse squared distance and by closeness in
    arrival time.
    """

    def __init__(self, radius: int = 5):
        if radius < 1:
            raise DomainError(f'inpaint radius must be >= 1, got {radius}')
        self.radius = radius
        span = np.arange(-radius, radius + 1)
        dy, dx = np.meshgrid(span, span, indexing='ij')
        d2 = (dx ** 2 + dy ** 2).astype(np.float64)
        self.in_disc = (d2 <= radius ** 2) & (d2 > 0)
        self.inv_d2 = np.where(self.in_disc, 1.0 / np.where(d2 > 0, d2, 1.0), 0.0)

    def _arrival(self, times: np.ndarray, i: int, j: int) -> float:
        height, width = times.shape
        t = lambda r, c: times[r, c] if 0 <= r < height and 0 <= c < width else math.inf  # noqa: E731
        up, down = t(i - 1, j), t(i + 1, j)
        left, right = t(i, j - 1), t(i, j + 1)
        return min(_eikonal(up, left), _eikonal(down, left), _eikonal(up, right), _eikonal(down, right))

    def _fill(self, rgb, flags, times, i, j):
        height, width = flags.shape
        r = self.radius
        top, bottom = max(0, i - r), min(height, i + r + 1)
        left, right = max(0, j - r), min(width, j + r + 1)
        window = (slice(top, bottom), slice(left, right))
        disc = (slice(top - i + r, bottom - i + r), slice(left - j + r, right - j + r))

        known = (flags[window] != INSIDE) & self.in_disc[disc]
        weights = self.inv_d2[disc] / (1.0 + np.abs(times[window] - times[i, j]))
        weights = np.where(known, weights, 0.0)
        total = weights.sum()
        if total > 0:
            rgb[i, j] = np.tensordot(weights, rgb[window], axes=([0, 1], [0, 1])) / total

    def run(self, rgb: np.ndarray, holes: np.ndarray) -> np.ndarray:
        rgb = np.array(rgb, dtype=np.float64)
        flags = np.where(holes, INSIDE, KNOWN).astype(np.uint8)
        times = np.where(holes, math.inf, 0.0)

        touching = ndimage.binary_dilation(holes, structure=ndimage.generate_binary_structure(2, 1))
        heap = [(0.0, int(i), int(j)) for i, j in zip(*np.nonzero(touching & ~holes))]
        heapq.heapify(heap)
        flags[touching & ~holes] = BAND

        while heap:
            _, i, j = heapq.heappop(heap)
            if flags[i, j] == KNOWN:
                continue
            flags[i, j] = KNOWN
            for di, dj in NEIGHBOURS:
                k, m = i + di, j + dj
                if not (0 <= k < flags.shape[0] and 0 <= m < flags.shape[1]):
                    continue
                if flags[k, m] != INSIDE:
                    continue
                times[k, m] = self._arrival(times, k, m)
                self._fill(rgb, flags, times, k, m)
                flags[k, m] = BAND
                heapq.heappush(heap, (times[k, m], k, m))
        return rgb


def inpaint(img: OrthoImage, mask: Optional[HoleMask] = None, radius: int = 5) -> OrthoImage:
    mask = mask or HoleMask(img.hole_mask)
    if (mask.height, mask.width) != (img.height, img.width):
        raise DomainError(f'mask {mask.width}x{mask.height} does not match image {img.width}x{img.height}')
    if mask.count == 0:
        return img.with_rgb(img.rgb.copy(), np.zeros_like(mask.flags))
    if mask.count == mask.flags.size:
        raise DomainError('every pixel is a hole; nothing to inpaint from')

    logger.debug('inpainting %d pixels (radius %d)', mask.count, radius)
    rgb = FastMarchingInpainter(radius).run(img.rgb, mask.flags)
    return img.with_rgb(rgb, np.zeros_like(mask.flags))


def harmonize(img: OrthoImage, reference: Optional[OrthoImage] = None) -> OrthoImage:
    """Match per-channel mean and standard deviation of non-hole pixels to ``reference``."""
    if reference is None:
        return img
    source_px = img.rgb[~img.hole_mask]
    reference_px = reference.rgb[~reference.hole_mask]
    if len(source_px) == 0 or len(reference_px) == 0:
        raise DomainError('harmonize needs non-hole pixels in both images')

    mean, std = source_px.mean(axis=0), source_px.std(axis=0)
    target_mean, target_std = reference_px.mean(axis=0), reference_px.std(axis=0)
    gain = np.ones(3)
    for channel in range(3):
        if std[channel] > 0:
            gain[channel] = target_std[channel] / std[channel]
        else:
            logger.warning('channel %d has zero variance; shifting its mean only', channel)

    rgb = np.clip((img.rgb - mean) * gain + target_mean, 0.0, 255.0)
    rgb[img.hole_mask] = img.rgb[img.hole_mask]
    return img.with_rgb(rgb)
