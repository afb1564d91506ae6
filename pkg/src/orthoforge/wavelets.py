"""Undecimated (a trous) wavelet transform and the losses built on it."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pywt

from orthoforge.errors import DomainError
from orthoforge.settings import SwtConfig

SUBBANDS = ('horizontal', 'vertical', 'diagonal')


@dataclass
class SwtLevel:
    horizontal: np.ndarray  # high-pass down the rows, low-pass along them
    vertical: np.ndarray
    diagonal: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.horizontal, self.vertical, self.diagonal])


@dataclass
class SwtPyramid:
    levels: List[SwtLevel]
    approximation: np.ndarray
    wavelet: str = 'haar'
    boundary: str = 'periodic'

    @property
    def depth(self) -> int:
        return len(self.levels)

    def details(self, level: int) -> np.ndarray:
        """Detail planes of ``level`` (1-based), shape (3, H, W[, C])."""
        return self.levels[level - 1].stack()


@dataclass
class LossWeights:
    swt_level_weights: Tuple[float, ...] = SwtConfig.weights
    mask_weights: Tuple[float, ...] = ()
    uncertainty_logvars: Tuple[float, ...] = ()

    def __post_init__(self):
        self.swt_level_weights = tuple(float(w) for w in self.swt_level_weights)
        self.mask_weights = tuple(float(w) for w in self.mask_weights)
        self.uncertainty_logvars = tuple(float(s) for s in self.uncertainty_logvars)
        if any(w < 0 for w in self.swt_level_weights) or not any(w > 0 for w in self.swt_level_weights):
            raise DomainError('level weights must be nonnegative with at least one positive')
        if any(w < 0 for w in self.mask_weights):
            raise DomainError('mask weights must be nonnegative')


@dataclass
class StructuralMaskSet:
    masks: List[np.ndarray] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=np.float64) for m in self.masks]
        if not self.labels:
            self.labels = [f'mask{i}' for i in range(len(self.masks))]
        if len(self.labels) != len(self.masks):
            raise DomainError(f'{len(self.labels)} labels for {len(self.masks)} masks')
        shapes = {m.shape for m in self.masks}
        if len(shapes) > 1:
            raise DomainError(f'masks differ in shape: {sorted(shapes)}')
        for label, mask in zip(self.labels, self.masks):
            if mask.ndim != 2:
                raise DomainError(f'mask {label} must be 2-D, got shape {mask.shape}')
            if mask.size and (mask.min() < 0 or mask.max() > 1):
                raise DomainError(f'mask {label} has values outside [0, 1]')

    def __len__(self):
        return len(self.masks)

    def add(self, mask: np.ndarray, label: str) -> StructuralMaskSet:
        return StructuralMaskSet(self.masks + [mask], self.labels + [label])


def filter_bank(wavelet: str) -> Tuple[np.ndarray, np.ndarray]:
    """Analysis low/high-pass taps of an orthogonal wavelet."""
    if wavelet not in ('haar', 'db2'):
        raise DomainError(f'unsupported filter {wavelet!r}')
    bank = pywt.Wavelet(wavelet)
    return np.asarray(bank.dec_lo, dtype=np.float64), np.asarray(bank.dec_hi, dtype=np.float64)


def support(wavelet: str, levels: int) -> int:
    taps = len(filter_bank(wavelet)[0])
    return (taps - 1) * 2 ** (levels - 1) + 1


def _check_size(shape, wavelet: str, levels: int):
    if levels < 1:
        raise DomainError(f'levels must be >= 1, got {levels}')
    needed = max(2 ** levels, support(wavelet, levels))
    if min(shape[:2]) < needed:
        raise DomainError(
            f'{shape[1]}x{shape[0]} image is too small for {levels} {wavelet} levels (needs {needed} px)'
        )


def _filter(x: np.ndarray, taps: np.ndarray, step: int, axis: int) -> np.ndarray:
    # periodic convolution with the filter dilated by ``step``
    out = np.zeros_like(x)
    for k, tap in enumerate(taps):
        out += tap * np.roll(x, k * step, axis=axis)
    return out


def _adjoint(y: np.ndarray, taps: np.ndarray, step: int, axis: int) -> np.ndarray:
    out = np.zeros_like(y)
    for k, tap in enumerate(taps):
        out += tap * np.roll(y, -k * step, axis=axis)
    return out


def swt_forward(img, levels: int = 3, wavelet: str = 'haar', boundary: str = 'periodic') -> SwtPyramid:
    """Decompose ``img`` (H, W) or (H, W, C); every plane keeps the input size."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise DomainError(f'expected a 2-D or 3-D image, got shape {x.shape}')
    _check_size(x.shape, wavelet, levels)
    lo, hi = filter_bank(wavelet)

    pad = 0
    if boundary == 'symmetric':
        pad = (len(lo) - 1) * 2 ** (levels - 1)
        widths = [(pad, pad), (pad, pad)] + [(0, 0)] * (x.ndim - 2)
        x = np.pad(x, widths, mode='symmetric')
    elif boundary != 'periodic':
        raise DomainError(f'unsupported boundary {boundary!r}')

    crop = (slice(pad, x.shape[0] - pad), slice(pad, x.shape[1] - pad))
    approx = x
    details = []
    for j in range(levels):
        step = 2 ** j
        rows_lo = _filter(approx, lo, step, 0)
        rows_hi = _filter(approx, hi, step, 0)
        details.append(SwtLevel(
            horizontal=_filter(rows_hi, lo, step, 1)[crop],
            vertical=_filter(rows_lo, hi, step, 1)[crop],
            diagonal=_filter(rows_hi, hi, step, 1)[crop],
        ))
        approx = _filter(rows_lo, lo, step, 1)
    return SwtPyramid(details, approx[crop], wavelet, boundary)


def swt_inverse(pyramid: SwtPyramid) -> np.ndarray:
    if pyramid.boundary != 'periodic':
        raise DomainError('only periodic pyramids can be inverted')
    lo, hi = filter_bank(pyramid.wavelet)
    approx = pyramid.approximation
    for j in reversed(range(pyramid.depth)):
        step = 2 ** j
        level = pyramid.levels[j]
        rows_lo = _adjoint(approx, lo, step, 1) + _adjoint(level.vertical, hi, step, 1)
        rows_hi = _adjoint(level.horizontal, lo, step, 1) + _adjoint(level.diagonal, hi, step, 1)
        approx = (_adjoint(rows_lo, lo, step, 0) + _adjoint(rows_hi, hi, step, 0)) / 4
    return approx


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DomainError(f'image shapes differ: {a.shape} vs {b.shape}')


def swt_loss(a, b, weights: Optional[Sequence[float]] = None, wavelet: str = 'haar',
             levels: Optional[int] = None, boundary: str = 'periodic', reduction: str = 'mean') -> float:
    """Sum over levels of w_j times the l1 norm of the detail difference.

    With ``reduction='mean'`` the norm is the mean absolute value over the
    three subbands and all channels of a level; ``'sum'`` uses the plain sum.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    weights = tuple(SwtConfig.weights if weights is None else weights)
    levels = levels or len(weights)
    if len(weights) != levels:
        raise DomainError(f'{len(weights)} level weights for {levels} levels')
    if reduction not in ('mean', 'sum'):
        raise DomainError(f'unsupported reduction {reduction!r}')
    LossWeights(swt_level_weights=weights)

    # the transform is linear, so D(a) - D(b) = D(a - b)
    pyramid = swt_forward(a - b, levels, wavelet, boundary)
    reduce = np.mean if reduction == 'mean' else np.sum
    return float(sum(
        w * reduce(np.abs(pyramid.details(j + 1))) for j, w in enumerate(weights)
    ))


def mask_loss(a, b, masks, weights: Optional[Sequence[float]] = None) -> float:
    """Sum over masks of lambda_m times mean |(a - b) * S_m| over pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if not isinstance(masks, StructuralMaskSet):
        masks = StructuralMaskSet(list(masks))
    weights = tuple(weights) if weights is not None else (1.0,) * len(masks)
    if len(weights) != len(masks):
        raise DomainError(f'{len(weights)} mask weights for {len(masks)} masks')
    LossWeights(mask_weights=weights)

    residual = np.abs(a - b)
    total = 0.0
    for lam, mask in zip(weights, masks.masks):
        if mask.shape != a.shape[:2]:
            raise DomainError(f'mask shape {mask.shape} does not match image {a.shape[:2]}')
        weighted = residual * (mask[..., None] if residual.ndim == 3 else mask)
        total += lam * float(weighted.mean())
    return total


def uncertainty_total(losses: Sequence[float], logvars: Sequence[float]) -> float:
    """sum_i exp(-s_i) * L_i + s_i."""
    if len(losses) != len(logvars):
        raise DomainError(f'{len(losses)} losses but {len(logvars)} log-variances')
    return float(sum(np.exp(-s) * loss + s for loss, s in zip(losses, logvars)))
