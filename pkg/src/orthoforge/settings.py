from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from orthoforge.errors import ArtifactIOError, ConfigError, DomainError


@dataclass
class RasterConfig:
    rho: float = 4.0  # target points per base pixel
    r_min: float = 0.02  # units/px
    r_max: float = 0.50
    p_max: int = 16_777_216  # base H*W
    ssaa: int = 2
    roof_band_frac: float = 0.15  # of the robust (p95 - p05) normalized height range
    ground_band: float = 0.12  # normalized height units
    m_min: int = 3
    splat_radius_px: float = 2.0
    crop_frac: float = 0.10  # per side
    w_sat: float = 1.0

    def __post_init__(self):
        if not 0 < self.r_min <= self.r_max:
            raise DomainError(f'need 0 < r_min <= r_max, got {self.r_min}, {self.r_max}')
        if self.ssaa not in (1, 2, 3, 4):
            raise DomainError(f'ssaa must be one of 1..4, got {self.ssaa}')
        if not 0 <= self.crop_frac < 0.5:
            raise DomainError(f'crop_frac must be in [0, 0.5), got {self.crop_frac}')
        if self.rho <= 0:
            raise DomainError(f'rho must be positive, got {self.rho}')
        if self.m_min < 1:
            raise DomainError(f'm_min must be >= 1, got {self.m_min}')
        if self.p_max < 1:
            raise DomainError(f'p_max must be >= 1, got {self.p_max}')
        if self.roof_band_frac < 0 or self.ground_band < 0:
            raise DomainError('band widths must be nonnegative')
        if self.splat_radius_px <= 0 or self.w_sat <= 0:
            raise DomainError('splat_radius_px and w_sat must be positive')


@dataclass
class PlaneConfig:
    threshold: Optional[float] = None  # absolute units; None -> threshold_frac * diagonal
    threshold_frac: float = 0.01
    iterations: int = 1024
    score_sample: int = 100_000
    min_inlier_fraction: float = 0.05

    def __post_init__(self):
        if self.threshold is not None and self.threshold <= 0:
            raise DomainError(f'RANSAC threshold must be positive, got {self.threshold}')
        if self.threshold_frac <= 0:
            raise DomainError('threshold_frac must be positive')
        if self.iterations < 1:
            raise DomainError(f'iterations must be positive, got {self.iterations}')


@dataclass
class InpaintConfig:
    radius: int = 5
    dilation: int = 1
    harmonize_ref: Optional[str] = None

    def __post_init__(self):
        if self.radius < 1:
            raise DomainError(f'inpaint radius must be >= 1, got {self.radius}')
        if self.dilation < 0:
            raise DomainError(f'mask dilation must be >= 0, got {self.dilation}')


@dataclass
class SwtConfig:
    levels: int = 3
    wavelet: str = 'haar'
    weights: Tuple[float, ...] = (0.5, 0.3, 0.2)
    boundary: str = 'periodic'
    reduction: str = 'mean'

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if self.levels < 1:
            raise DomainError(f'levels must be >= 1, got {self.levels}')
        if self.wavelet not in ('haar', 'db2'):
            raise DomainError(f'unsupported filter {self.wavelet!r}')
        if len(self.weights) != self.levels:
            raise DomainError(f'{len(self.weights)} level weights for {self.levels} levels')
        if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
            raise DomainError('level weights must be nonnegative with at least one positive')
        if self.boundary not in ('periodic', 'symmetric'):
            raise DomainError(f'unsupported boundary {self.boundary!r}')
        if self.reduction not in ('mean', 'sum'):
            raise DomainError(f'unsupported reduction {self.reduction!r}')


@dataclass
class CannyConfig:
    sigma: float = 1.4
    low_frac: float = 0.1
    high_frac: float = 0.3

    def __post_init__(self):
        if not 0 < self.low_frac < self.high_frac <= 1:
            raise DomainError(f'need 0 < low < high <= 1, got {self.low_frac}, {self.high_frac}')
        if self.sigma < 0:
            raise DomainError('sigma must be nonnegative')


@dataclass
class PipelineConfig:
    """Flat configuration of a full run, one field per key=value key."""

    # raster
    rho: float = RasterConfig.rho
    r_min: float = RasterConfig.r_min
    r_max: float = RasterConfig.r_max
    p_max: int = RasterConfig.p_max
    ssaa: int = RasterConfig.ssaa
    roof_band_frac: float = RasterConfig.roof_band_frac
    ground_band: float = RasterConfig.ground_band
    m_min: int = RasterConfig.m_min
    splat_radius_px: float = RasterConfig.splat_radius_px
    crop_frac: float = RasterConfig.crop_frac
    w_sat: float = RasterConfig.w_sat
    # plane
    ransac_threshold: Optional[float] = PlaneConfig.threshold
    ransac_iterations: int = PlaneConfig.iterations
    # inpaint / harmonize
    inpaint_radius: int = InpaintConfig.radius
    mask_dilation: int = InpaintConfig.dilation
    harmonize_ref: Optional[str] = InpaintConfig.harmonize_ref
    # swt loss
    swt_levels: int = SwtConfig.levels
    swt_filter: str = SwtConfig.wavelet
    swt_weights: Tuple[float, ...] = field(default_factory=lambda: SwtConfig().weights)
    # run
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise DomainError(f'threads must be >= 1, got {self.threads}')
        # sub-configs validate their own ranges
        self.raster()
        self.plane()
        self.inpaint()
        self.swt()

    def raster(self) -> RasterConfig:
        return RasterConfig(
            rho=self.rho, r_min=self.r_min, r_max=self.r_max, p_max=self.p_max,
            ssaa=self.ssaa, roof_band_frac=self.roof_band_frac,
            ground_band=self.ground_band, m_min=self.m_min,
            splat_radius_px=self.splat_radius_px, crop_frac=self.crop_frac,
            w_sat=self.w_sat
        )

    def plane(self) -> PlaneConfig:
        return PlaneConfig(threshold=self.ransac_threshold, iterations=self.ransac_iterations)

    def inpaint(self) -> InpaintConfig:
        return InpaintConfig(
            radius=self.inpaint_radius, dilation=self.mask_dilation,
            harmonize_ref=self.harmonize_ref
        )

    def swt(self) -> SwtConfig:
        return SwtConfig(levels=self.swt_levels, wavelet=self.swt_filter, weights=self.swt_weights)

    def to_pairs(self) -> Dict[str, str]:
        return {f.name: format_value(getattr(self, f.name)) for f in fields(self)}

    def replace(self, **overrides) -> PipelineConfig:
        overrides = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(sorted(unknown))}')
        return dataclasses.replace(self, **overrides)


def format_value(value) -> str:
    if value is None:
        return ''
    if isinstance(value, tuple):
        return ','.join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if name in ('ransac_threshold', 'harmonize_ref'):
            if raw == '':
                return None
            return float(raw) if name == 'ransac_threshold' else raw
        if isinstance(default, bool):
            return raw.lower() in ('1', 'true', 'yes', 'on')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(',') if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f'bad value for {name}: {raw!r}') from None


def parse_pairs(lines: Iterable[str], source: str = '<config>') -> Dict[str, str]:
    pairs = {}
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError(f'{source}:{number}: expected key=value, got {line!r}')
        key, value = line.split('=', 1)
        pairs[key.strip()] = value.strip()
    return pairs


def config_from_pairs(pairs: Dict[str, str], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    base = base or PipelineConfig()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    unknown = sorted(set(pairs) - set(known))
    if unknown:
        raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
    values = {name: _coerce(name, raw, known[name]) for name, raw in pairs.items()}
    return dataclasses.replace(base, **values)


def load_config(path, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ArtifactIOError(f'cannot read config {path}: {e}') from e
    return config_from_pairs(parse_pairs(text.splitlines(), str(path)), base)


def save_config(config: PipelineConfig, path) -> None:
    lines: List[str] = [f'{k} = {v}' for k, v in config.to_pairs().items()]
    try:
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    except OSError as e:
        raise ArtifactIOError(f'cannot write config {path}: {e}') from e
