"""End-to-end run: render, inpaint, harmonize, write artifacts and a manifest."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from orthoforge.errors import ArtifactIOError, FormatError, SchemaError
from orthoforge.inpaint import HoleMask, harmonize, inpaint
from orthoforge.ortho_raster import OrthoRenderer
from orthoforge.pointcloud_io import ColoredPointCloud, load_ply
from orthoforge.rendering import (
    OrthoImage, georef_path, holes_path, load_image, save_georef, save_image, write_mask
)
from orthoforge.settings import PipelineConfig, config_from_pairs

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1


def manifest_path_for(image_path) -> Path:
    path = Path(image_path)
    return path.with_name(path.stem + '.manifest.json')


@dataclass
class RunResult:
    image: OrthoImage
    rendered: OrthoImage
    manifest: Dict = field(default_factory=dict)


class Pipeline:
    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()
        self.timings: Dict[str, float] = {}
        self.renderer: Optional[OrthoRenderer] = None

    def _timed(self, stage: str, func, *args):
        start = time.perf_counter()
        result = func(*args)
        self.timings[stage] = time.perf_counter() - start
        logger.info('%s took %.3fs', stage, self.timings[stage])
        return result

    def run(self, cloud: ColoredPointCloud) -> RunResult:
        cfg = self.config
        self.renderer = OrthoRenderer(cfg.raster(), cfg.plane(), cfg.seed, cfg.threads)
        rendered = self.renderer.render(cloud)
        self.timings.update(self.renderer.timings)

        mask = HoleMask.from_image(rendered, cfg.mask_dilation if rendered.hole_count else 0)
        image = self._timed('inpaint', inpaint, rendered, mask, cfg.inpaint_radius)
        if cfg.harmonize_ref:
            reference = load_image(cfg.harmonize_ref)
            image = self._timed('harmonize', harmonize, image, reference)
        return RunResult(image, rendered, self.manifest(cloud, rendered, image))

    def manifest(self, cloud: ColoredPointCloud, rendered: OrthoImage, image: OrthoImage) -> Dict:
        plane = self.renderer.plane
        return {
            'schema_version': MANIFEST_SCHEMA_VERSION,
            'config': self.config.to_pairs(),
            'timings': dict(self.timings),
            'points': cloud.count,
            'plane': {
                'coefficients': [float(c) for c in plane.coefficients],
                'inlier_fraction': float(plane.inlier_fraction),
                'threshold': float(plane.threshold),
            },
            'pixel_scale': float(image.pixel_scale),
            'height': image.height,
            'width': image.width,
            'holes_before_inpaint': rendered.hole_count,
            'ground_band_fallback': bool(self.renderer.grid.fallback),
        }


def write_manifest(manifest: Dict, path) -> None:
    try:
        Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as e:
        raise ArtifactIOError(f'cannot write manifest {path}: {e}') from e


def read_manifest(path) -> Dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise ArtifactIOError(f'cannot read manifest {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise FormatError(f'{path}: not JSON ({e})') from e
    if not isinstance(manifest, dict) or manifest.get('schema_version') != MANIFEST_SCHEMA_VERSION:
        raise SchemaError(f'{path}: unsupported manifest schema')
    for key in ('input', 'config'):
        if key not in manifest:
            raise SchemaError(f'{path}: manifest lacks {key!r}')
    return manifest


def run_pipeline(cloud_path, config: Optional[PipelineConfig], out_path,
                 manifest_path=None) -> RunResult:
    """Cloud file to inpainted orthophoto plus hole mask, georef and manifest files."""
    config = config or PipelineConfig()
    cloud = load_ply(cloud_path)
    result = Pipeline(config).run(cloud)

    # the hole sidecar records what the renderer left uncovered, before inpainting
    save_image(result.image, out_path, sidecars=False)
    write_mask(result.rendered.hole_mask, holes_path(out_path))
    save_georef(result.image.georef, georef_path(out_path))
    manifest_path = Path(manifest_path) if manifest_path else manifest_path_for(out_path)
    result.manifest['input'] = str(cloud_path)
    result.manifest['outputs'] = {
        'image': str(out_path),
        'holes': str(holes_path(out_path)),
        'georef': str(georef_path(out_path)),
        'manifest': str(manifest_path),
    }
    write_manifest(result.manifest, manifest_path)
    return result


def replay(manifest_path, out_path=None) -> RunResult:
    """Re-run the pipeline recorded in a manifest."""
    manifest = read_manifest(manifest_path)
    config = config_from_pairs(manifest['config'])
    out_path = out_path or manifest.get('outputs', {}).get('image')
    if not out_path:
        raise SchemaError(f'{manifest_path}: no output image recorded; pass one explicitly')
    return run_pipeline(manifest['input'], config, out_path)
