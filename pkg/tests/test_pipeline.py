import json

import numpy as np
import pytest
from conftest import flat_cloud

from orthoforge.errors import FormatError, NoPlaneError, SchemaError
from orthoforge.fixtures import (
    ObliqueCamera, compare_images, four_box_city, generate_box_city, render_oblique_view, truth_for,
    truth_image
)
from orthoforge.inpaint import inpaint
from orthoforge.perspective import perspective_fallback
from orthoforge.pipeline import (
    MANIFEST_SCHEMA_VERSION, Pipeline, manifest_path_for, read_manifest, replay, run_pipeline
)
from orthoforge.pointcloud_io import ColoredPointCloud, save_ply
from orthoforge.rendering import holes_path, read_mask, read_rgb
from orthoforge.settings import PipelineConfig


@pytest.fixture(scope='module')
def small_city_ply(tmp_path_factory):
    cloud, _ = generate_box_city(four_box_city(extent=12.0, density=30.0, seed=1))
    path = tmp_path_factory.mktemp('city') / 'city.ply'
    save_ply(cloud, path)
    return path


def test_run_writes_image_sidecars_and_manifest(small_city_ply, tmp_path):
    out = tmp_path / 'ortho.png'
    result = run_pipeline(small_city_ply, PipelineConfig(seed=4), out)
    assert result.image.hole_count == 0
    for name in ('ortho.png', 'ortho.holes.png', 'ortho.georef.txt', 'ortho.manifest.json'):
        assert (tmp_path / name).exists()

    manifest = read_manifest(manifest_path_for(out))
    assert manifest['schema_version'] == MANIFEST_SCHEMA_VERSION
    assert manifest['input'] == str(small_city_ply)
    assert manifest['config']['seed'] == '4'
    assert manifest['width'] == result.image.width
    assert manifest['plane']['inlier_fraction'] > 0.3
    assert {'plane', 'resolution', 'rasterize', 'inpaint'} <= set(manifest['timings'])
    assert manifest['ground_band_fallback'] is False


def test_replay_reproduces_the_image(small_city_ply, tmp_path):
    first = tmp_path / 'first.png'
    run_pipeline(small_city_ply, PipelineConfig(seed=2, ssaa=3), first)
    second = tmp_path / 'second.png'
    result = replay(manifest_path_for(first), second)
    np.testing.assert_array_equal(read_rgb(first), read_rgb(second))
    assert result.manifest['config']['ssaa'] == '3'


def test_manifest_validation(tmp_path):
    path = tmp_path / 'm.json'
    path.write_text('{not json', encoding='utf-8')
    with pytest.raises(FormatError):
        read_manifest(path)
    path.write_text(json.dumps({'schema_version': 99}), encoding='utf-8')
    with pytest.raises(SchemaError):
        read_manifest(path)
    path.write_text(json.dumps({'schema_version': 1, 'config': {}}), encoding='utf-8')
    with pytest.raises(SchemaError, match='input'):
        read_manifest(path)


def test_ball_without_ground_has_no_plane():
    gen = np.random.default_rng(1)
    direction = gen.normal(size=(3000, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    cloud = ColoredPointCloud(direction * gen.uniform(0, 1, (3000, 1)) ** (1 / 3), np.zeros((3000, 3)))
    with pytest.raises(NoPlaneError):
        Pipeline(PipelineConfig(ransac_threshold=0.002)).run(cloud)


def test_point_cloud_beats_the_homography_fallback():
    scene = four_box_city(extent=20.0, density=20.0, seed=2, tall=True)
    cloud, _ = generate_box_city(scene)

    result = Pipeline(PipelineConfig(seed=1, roof_band_frac=0.02)).run(cloud)
    ours = compare_images(result.image, truth_for(scene, result.image))

    camera = ObliqueCamera([10.0, -15.0, 25.0], [10.0, 10.0, 0.0], 90.0, 96, 72)
    photo = render_oblique_view(cloud, camera)
    truth = truth_image(scene, 0.25)
    ground = np.array([[2.0, 2.0, 0.0], [18.0, 2.0, 0.0], [18.0, 18.0, 0.0], [2.0, 18.0, 0.0]])
    col, row, _ = camera.project(ground)
    src = np.column_stack([col - 0.5, row - 0.5])
    dst = np.column_stack([ground[:, 0] / 0.25 - 0.5, truth.height - 0.5 - ground[:, 1] / 0.25])
    warped = inpaint(perspective_fallback(photo, src, dst, shape=(truth.height, truth.width)))
    theirs = compare_images(warped, truth)

    assert ours.within_16 >= theirs.within_16 + 0.10


def test_hole_sidecar_keeps_the_rendered_holes(tmp_path):
    cloud = flat_cloud(n=4000)
    x, y, _ = cloud.points.T
    keep = (x - 5.0) ** 2 + (y - 5.0) ** 2 > 1.5 ** 2
    path = tmp_path / 'gap.ply'
    save_ply(ColoredPointCloud(cloud.points[keep], cloud.colors[keep]), path)

    out = tmp_path / 'gap.png'
    result = run_pipeline(path, PipelineConfig(seed=1), out)
    assert result.image.hole_count == 0
    assert result.rendered.hole_count > 0
    sidecar = read_mask(holes_path(out))
    np.testing.assert_array_equal(sidecar, result.rendered.hole_mask)
    assert read_manifest(manifest_path_for(out))['holes_before_inpaint'] == int(sidecar.sum())
