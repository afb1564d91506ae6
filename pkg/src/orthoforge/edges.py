import numpy as np
from scipy import ndimage

from orthoforge.settings import CannyConfig

LUMINANCE = np.array([0.299, 0.587, 0.114])

# neighbour along the gradient for each quantized direction (0, 45, 90, 135 degrees)
DIRECTIONS = [(0, 1), (1, 1), (1, 0), (1, -1)]


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., :3] @ LUMINANCE


def _shifted(padded: np.ndarray, di: int, dj: int) -> np.ndarray:
    height, width = padded.shape[0] - 2, padded.shape[1] - 2
    return padded[1 + di:1 + di + height, 1 + dj:1 + dj + width]


def non_maximum_suppression(magnitude: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Keep pixels that are maxima along their quantized gradient direction.

    Ties go to the pixel whose forward neighbour is not larger, so a ridge
    two pixels wide thins to one.
    """
    direction = np.rint(np.degrees(np.mod(angle, np.pi)) / 45).astype(int) % 4
    padded = np.pad(magnitude, 1)
    keep = np.zeros(magnitude.shape, dtype=bool)
    for index, (di, dj) in enumerate(DIRECTIONS):
        forward = _shifted(padded, di, dj)
        backward = _shifted(padded, -di, -dj)
        keep |= (direction == index) & (magnitude >= forward) & (magnitude > backward)
    return keep


def hysteresis(candidates: np.ndarray, strong: np.ndarray) -> np.ndarray:
    """8-connected components of ``candidates`` that contain a strong pixel."""
    labels, count = ndimage.label(candidates, structure=np.ones((3, 3)))
    if count == 0:
        return np.zeros(candidates.shape, dtype=bool)
    seeded = np.unique(labels[strong & candidates])
    return np.isin(labels, seeded[seeded > 0])


def canny_edges(img, sigma: float = CannyConfig.sigma, low_frac: float = CannyConfig.low_frac,
                high_frac: float = CannyConfig.high_frac) -> np.ndarray:
    """Binary (0/1) Canny edge map; thresholds are fractions of the peak gradient."""
    CannyConfig(sigma, low_frac, high_frac)
    gray = luminance(img)
    smoothed = ndimage.gaussian_filter(gray, sigma, mode='nearest') if sigma > 0 else gray

    grad_y = ndimage.sobel(smoothed, axis=0)
    grad_x = ndimage.sobel(smoothed, axis=1)
    magnitude = np.hypot(grad_x, grad_y)
    peak = magnitude.max() if magnitude.size else 0.0
    if peak <= 0:
        return np.zeros(gray.shape, dtype=np.uint8)

    thin = non_maximum_suppression(magnitude, np.arctan2(grad_y, grad_x))
    candidates = thin & (magnitude >= low_frac * peak)
    strong = magnitude >= high_frac * peak
    return hysteresis(candidates, strong).astype(np.uint8)
