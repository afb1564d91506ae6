"""Command-line entry point; results go to stdout as key=value lines."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from orthoforge.descriptor_pack import load_descriptor_pack, load_labeled_matrix
from orthoforge.edges import canny_edges
from orthoforge.errors import ArtifactIOError, OrthoforgeError, UsageError
from orthoforge.fixtures import compare_images, four_box_city, generate_box_city
from orthoforge.ground_plane import build_frame, fit_plane_ransac
from orthoforge.inpaint import HoleMask, harmonize, inpaint
from orthoforge.ortho_raster import OrthoRenderer
from orthoforge.perspective import load_correspondences, perspective_fallback
from orthoforge.pipeline import replay, run_pipeline
from orthoforge.pointcloud_io import bounding_box, load_ply, save_ply
from orthoforge.rendering import load_image, read_grey, save_image, write_grey
from orthoforge.retrieval import DRONE_TO_SATELLITE, SATELLITE_TO_DRONE, evaluate
from orthoforge.settings import InpaintConfig, PipelineConfig, load_config
from orthoforge.wavelets import mask_loss, swt_loss, uncertainty_total

logger = logging.getLogger('orthoforge')

# config key -> (type, option strings); the short spellings come first
RASTER_FLAGS = {
    'rho': (float, '--rho'),
    'r_min': (float, '--rmin', '--r-min'),
    'r_max': (float, '--rmax', '--r-max'),
    'p_max': (int, '--pmax', '--p-max'),
    'ssaa': (int, '--ssaa'),
    'roof_band_frac': (float, '--roof-band', '--roof-band-frac'),
    'ground_band': (float, '--ground-band'),
    'm_min': (int, '--mmin', '--m-min'),
    'splat_radius_px': (float, '--splat-radius', '--splat-radius-px'),
    'crop_frac': (float, '--crop', '--crop-frac'),
    'w_sat': (float, '--w-sat'),
    'ransac_threshold': (float, '--threshold', '--ransac-threshold'),
    'ransac_iterations': (int, '--iters', '--ransac-iterations'),
}


def emit(**values):
    for key, value in values.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ','.join(format(float(v), '.9g') for v in value)
        elif isinstance(value, float):
            value = format(value, '.9g')
        print(f'{key}={value}')


def floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated numbers, got {text!r}') from None


def ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated integers, got {text!r}') from None


def paths(text: str) -> List[str]:
    return [v.strip() for v in text.split(',') if v.strip()]


def pipeline_config(args) -> PipelineConfig:
    """Defaults, then the config file, then flags given on the command line."""
    config = load_config(args.config) if getattr(args, 'config', None) else PipelineConfig()
    overrides = {name: getattr(args, name, None) for name in RASTER_FLAGS}
    for name in ('seed', 'inpaint_radius', 'mask_dilation', 'harmonize_ref'):
        overrides[name] = getattr(args, name, None)
    if args.threads is not None:
        overrides['threads'] = args.threads
    return config.replace(**overrides)


# -- commands ---------------------------------------------------------------

def cmd_cloud_info(args):
    cloud = load_ply(args.cloud)
    box = bounding_box(cloud)
    emit(points=cloud.count, dropped=cloud.dropped, min=box.min_corner, max=box.max_corner,
         diagonal=box.diagonal)


def cmd_plane_fit(args):
    config = pipeline_config(args)
    cloud = load_ply(args.cloud)
    plane_cfg = config.plane()
    plane = build_frame(fit_plane_ransac(
        cloud, plane_cfg.threshold, plane_cfg.iterations, config.seed,
        plane_cfg.score_sample, plane_cfg.min_inlier_fraction, config.threads
    ))
    emit(coefficients=plane.coefficients, inlier_fraction=plane.inlier_fraction,
         threshold=plane.threshold, basis_u=plane.basis_u, basis_v=plane.basis_v)


def cmd_render(args):
    config = pipeline_config(args)
    renderer = OrthoRenderer(config.raster(), config.plane(), config.seed, config.threads)
    img = renderer.render(load_ply(args.cloud))
    save_image(img, args.output)
    emit(pixel_scale=img.pixel_scale, width=img.width, height=img.height, holes=img.hole_count,
         ground_band_fallback=int(renderer.grid.fallback))


def cmd_warp(args):
    photo = load_image(args.image)
    src, dst = load_correspondences(args.corr)
    shape = (args.height, args.width) if args.width and args.height else None
    img = perspective_fallback(photo, src, dst, shape, tuple(args.origin), args.scale)
    save_image(img, args.output)
    emit(width=img.width, height=img.height, holes=img.hole_count)


def cmd_inpaint(args):
    img = load_image(args.image, args.mask)
    mask = HoleMask.from_image(img, args.dilation)
    out = inpaint(img, mask, args.radius)
    if args.harmonize_ref:
        out = harmonize(out, load_image(args.harmonize_ref))
    save_image(out, args.output)
    emit(filled=mask.count, holes=out.hole_count)


def cmd_edges(args):
    edges = canny_edges(load_image(args.image).rgb, args.sigma, args.low, args.high)
    write_grey(edges * 255, args.output)
    emit(edge_pixels=int(edges.sum()))


def _two_images(args):
    return load_image(args.a).rgb, load_image(args.b).rgb


def cmd_loss_swt(args):
    if args.levels and args.weights and args.levels != len(args.weights):
        raise UsageError(f'--levels {args.levels} needs {args.levels} weights, got {len(args.weights)}')
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {'swt_filter': args.filter}
    if args.weights:
        overrides.update(swt_weights=tuple(args.weights), swt_levels=len(args.weights))
    elif args.levels:
        if args.levels != len(config.swt_weights):
            raise UsageError(f'--levels {args.levels} needs --weights with {args.levels} values')
        overrides['swt_levels'] = args.levels
    cfg = dataclasses.replace(config.replace(**overrides).swt(), boundary=args.boundary, reduction=args.reduction)
    a, b = _two_images(args)
    emit(swt_loss=swt_loss(a, b, cfg.weights, cfg.wavelet, cfg.levels, cfg.boundary, cfg.reduction))


def cmd_loss_mask(args):
    a, b = _two_images(args)
    masks = [read_grey(path) / 255.0 for path in args.mask]
    emit(mask_loss=mask_loss(a, b, masks, args.weights))


def cmd_loss_total(args):
    emit(total=uncertainty_total(args.losses, args.logvars))


def _descriptors(path, matrix):
    if matrix:
        return load_labeled_matrix(path, matrix)
    return load_descriptor_pack(path)


def cmd_retrieve(args):
    queries = _descriptors(args.queries, args.queries_matrix)
    refs = _descriptors(args.refs, args.refs_matrix)
    reports = [evaluate(queries, refs, args.k, DRONE_TO_SATELLITE, args.threads or 1)]
    if args.both:
        reports.append(evaluate(refs, queries, args.k, SATELLITE_TO_DRONE, args.threads or 1))

    for report in reports:
        for k, value in sorted(report.recall_at.items()):
            emit(**{f'{report.direction}.recall@{k}': value})
        emit(**{f'{report.direction}.ap': report.ap_mean,
                f'{report.direction}.excluded': len(report.excluded_queries)})
    if args.report:
        body = reports[0].to_dict() if len(reports) == 1 else {
            'schema_version': reports[0].schema_version,
            'reports': [r.to_dict() for r in reports],
        }
        try:
            Path(args.report).write_text(json.dumps(body, indent=2) + '\n', encoding='utf-8')
        except OSError as e:
            raise ArtifactIOError(f'cannot write report {args.report}: {e}') from e


def cmd_fixture_box_city(args):
    scene = four_box_city(args.extent, args.density, args.noise, args.seed, args.tall)
    cloud, truth = generate_box_city(scene, args.pixel_scale)
    save_ply(cloud, args.output)
    if args.truth:
        save_image(truth, args.truth)
    emit(points=cloud.count, boxes=len(scene.boxes), truth_width=truth.width, truth_height=truth.height)


def cmd_compare(args):
    report = compare_images(load_image(args.a), load_image(args.b), not args.include_holes)
    emit(**report.to_pairs())


def cmd_pipeline(args):
    if args.replay:
        result = replay(args.replay, args.output)
    else:
        if not args.cloud or not args.output:
            raise UsageError('pipeline needs CLOUD and -o/--output, or --replay MANIFEST')
        result = run_pipeline(args.cloud, pipeline_config(args), args.output, args.manifest)
    emit(pixel_scale=result.image.pixel_scale, width=result.image.width,
         height=result.image.height, holes_before_inpaint=result.rendered.hole_count)


# -- parser -----------------------------------------------------------------

def _add_config_flags(parser: argparse.ArgumentParser, inpainting: bool = False):
    parser.add_argument('--config', help='key=value configuration file')
    parser.add_argument('--seed', type=int)
    for name, (kind, *options) in RASTER_FLAGS.items():
        parser.add_argument(*options, dest=name, type=kind)
    if inpainting:
        parser.add_argument('--inpaint-radius', dest='inpaint_radius', type=int)
        parser.add_argument('--mask-dilation', dest='mask_dilation', type=int)
        parser.add_argument('--harmonize-ref', dest='harmonize_ref')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='orthoforge', description=main.__doc__)
    parser.add_argument('--threads', type=int, help='worker threads (default 1)')
    parser.add_argument('-v', '--verbose', action='store_true')
    parser.add_argument('-q', '--quiet', action='store_true')
    commands = parser.add_subparsers(dest='command', required=True)

    cloud = commands.add_parser('cloud').add_subparsers(dest='action', required=True)
    p = cloud.add_parser('info', help='point count and bounding box')
    p.add_argument('cloud')
    p.set_defaults(func=cmd_cloud_info)

    plane = commands.add_parser('plane').add_subparsers(dest='action', required=True)
    p = plane.add_parser('fit', help='RANSAC ground plane')
    p.add_argument('cloud')
    _add_config_flags(p)
    p.set_defaults(func=cmd_plane_fit)

    p = commands.add_parser('render', help='orthophoto of a colored point cloud')
    p.add_argument('cloud')
    p.add_argument('-o', '--output', required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_render)

    p = commands.add_parser('warp', help='homography fallback from correspondences')
    p.add_argument('image')
    p.add_argument('--corr', '--points', dest='corr', required=True, help='CSV of sx,sy,tu,tv rows')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--width', type=int)
    p.add_argument('--height', type=int)
    p.add_argument('--origin', type=floats, default=[0.0, 0.0])
    p.add_argument('--scale', type=float, default=1.0)
    p.set_defaults(func=cmd_warp)

    p = commands.add_parser('inpaint', help='fill hole pixels')
    p.add_argument('image')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--mask', help='hole mask PNG (default: the image sidecar)')
    p.add_argument('--radius', type=int, default=InpaintConfig.radius)
    p.add_argument('--dilation', type=int, default=InpaintConfig.dilation)
    p.add_argument('--harmonize-ref', '--harmonize', dest='harmonize_ref',
                   help='reference image for color statistics')
    p.set_defaults(func=cmd_inpaint)

    p = commands.add_parser('edges', help='Canny edge map')
    p.add_argument('image')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--sigma', type=float, default=1.4)
    p.add_argument('--low', type=float, default=0.1)
    p.add_argument('--high', type=float, default=0.3)
    p.set_defaults(func=cmd_edges)

    loss = commands.add_parser('loss').add_subparsers(dest='action', required=True)
    p = loss.add_parser('swt', help='wavelet detail loss between two images')
    p.add_argument('a')
    p.add_argument('b')
    p.add_argument('--config', help='key=value configuration file (swt_levels, swt_filter, swt_weights)')
    p.add_argument('--levels', type=int)
    p.add_argument('--weights', type=floats)
    p.add_argument('--filter', choices=('haar', 'db2'))
    p.add_argument('--boundary', default='periodic', choices=('periodic', 'symmetric'))
    p.add_argument('--reduction', default='mean', choices=('mean', 'sum'))
    p.set_defaults(func=cmd_loss_swt)
    p = loss.add_parser('mask', help='masked l1 loss')
    p.add_argument('a')
    p.add_argument('b')
    p.add_argument('--mask', type=paths, action='extend', required=True, help='grey PNGs, comma-separated')
    p.add_argument('--lambda', '--weights', dest='weights', type=floats, help='one weight per mask')
    p.set_defaults(func=cmd_loss_mask)
    p = loss.add_parser('total', help='uncertainty-weighted sum of losses')
    p.add_argument('--losses', type=floats, required=True)
    p.add_argument('--logvars', type=floats, required=True)
    p.set_defaults(func=cmd_loss_total)

    p = commands.add_parser('retrieve', help='Recall@K and AP of descriptor retrieval')
    p.add_argument('--queries', required=True, help='descriptor pack, or labels CSV with --queries-matrix')
    p.add_argument('--refs', required=True, help='descriptor pack, or labels CSV with --refs-matrix')
    p.add_argument('--queries-matrix')
    p.add_argument('--refs-matrix')
    p.add_argument('--k', type=ints, default=[1, 5, 10])
    p.add_argument('--report', help='JSON report path')
    p.add_argument('--both', action='store_true', help='also evaluate satellite->drone')
    p.set_defaults(func=cmd_retrieve)

    fixture = commands.add_parser('fixture').add_subparsers(dest='action', required=True)
    p = fixture.add_parser('box-city', help='synthetic scene with ground truth')
    p.add_argument('-o', '--output', required=True, help='PLY path')
    p.add_argument('--truth', help='ground-truth PNG path')
    p.add_argument('--extent', type=float, default=40.0)
    p.add_argument('--density', type=float, default=50.0)
    p.add_argument('--noise', type=float, default=0.02)
    p.add_argument('--pixel-scale', type=float, default=0.1)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--tall', action='store_true')
    p.set_defaults(func=cmd_fixture_box_city)

    p = commands.add_parser('compare', help='difference statistics of two images')
    p.add_argument('a')
    p.add_argument('b')
    p.add_argument('--include-holes', action='store_true')
    p.set_defaults(func=cmd_compare)

    p = commands.add_parser('pipeline', help='render, inpaint and write a run manifest')
    p.add_argument('cloud', nargs='?')
    p.add_argument('-o', '--output')
    p.add_argument('--manifest')
    p.add_argument('--replay', help='re-run from a manifest')
    _add_config_flags(p, inpainting=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format='%(levelname)s %(name)s: %(message)s')


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Orthophoto rendering, inpainting, wavelet losses and retrieval metrics."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    logger.debug('running %s', args.command)
    try:
        args.func(args)
    except OrthoforgeError as e:
        print(f'error category={e.category} message={e}', file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
