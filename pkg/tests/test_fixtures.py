import numpy as np
import pytest

from orthoforge.errors import DomainError
from orthoforge.fixtures import (
    Box, BoxCityScene, ObliqueCamera, compare_images, four_box_city, generate_box_city,
    render_oblique_view, ssim_map, truth_image
)
from orthoforge.pointcloud_io import ColoredPointCloud
from orthoforge.rendering import OrthoImage


def test_scene_without_boxes_is_uniform_ground():
    scene = BoxCityScene((10.0, 6.0), ground_rgb=(10, 20, 30), density=5.0)
    cloud, truth = generate_box_city(scene, pixel_scale=0.5)
    assert (truth.width, truth.height) == (20, 12)
    assert (truth.rgb == [10, 20, 30]).all()
    assert (cloud.colors == [10, 20, 30]).all()
    assert cloud.count == 300


def test_single_box_truth():
    box = Box(5.0, 5.0, 10.0, 10.0, 2.0)
    scene = BoxCityScene((10.0, 10.0), boxes=(box,), density=4.0, noise_sigma=0.0)
    truth = truth_image(scene, 0.1)
    assert (truth.width, truth.height) == (100, 100)
    assert (truth.rgb == box.roof_rgb).all()


def test_taller_box_wins_overlaps():
    low = Box(4.0, 4.0, 4.0, 4.0, 1.0, roof_rgb=(1, 1, 1))
    high = Box(6.0, 6.0, 4.0, 4.0, 3.0, roof_rgb=(2, 2, 2))
    scene = BoxCityScene((10.0, 10.0), boxes=(high, low))
    assert scene.visible_box(5.0, 5.0) == 0
    assert scene.visible_box(2.5, 2.5) == 1
    assert scene.visible_box(9.5, 0.5) == -1
    np.testing.assert_array_equal(scene.truth_at(5.0, 5.0), [2, 2, 2])


def test_points_hidden_inside_taller_boxes_are_dropped():
    low = Box(4.0, 4.0, 4.0, 4.0, 1.0)
    high = Box(6.0, 6.0, 4.0, 4.0, 3.0)
    cloud, _ = generate_box_city(BoxCityScene((10.0, 10.0), boxes=(low, high), noise_sigma=0.0))
    x, y, z = cloud.points.T
    inside_high = (x > 4.01) & (x < 7.99) & (y > 4.01) & (y < 7.99)
    assert not (inside_high & (z < 2.99)).any()


def test_generation_is_seeded():
    scene = four_box_city(extent=10.0, density=10.0, seed=5)
    a, _ = generate_box_city(scene)
    b, _ = generate_box_city(scene)
    assert a.same_as(b)
    c, _ = generate_box_city(four_box_city(extent=10.0, density=10.0, seed=6))
    assert not np.array_equal(a.points, c.points)


def test_four_box_city_scales_and_stretches():
    scene = four_box_city(extent=20.0)
    assert len(scene.boxes) == 4
    assert scene.boxes[0].width == 4.0
    assert four_box_city(extent=20.0, tall=True).boxes[0].height == 3 * scene.boxes[0].height


def test_checkerboard_ground():
    scene = BoxCityScene((4.0, 4.0), checker_rgb=(255, 255, 255), checker_cell=1.0)
    np.testing.assert_array_equal(scene.ground_color(0.5, 0.5), scene.ground_rgb)
    np.testing.assert_array_equal(scene.ground_color(1.5, 0.5), [255, 255, 255])


@pytest.mark.parametrize('kwargs', [
    {'extent': (0.0, 5.0)},
    {'density': 0.0},
    {'noise_sigma': -1.0},
    {'boxes': (Box(9.0, 5.0, 4.0, 2.0, 1.0),)},
    {'boxes': (Box(5.0, 5.0, 2.0, 2.0, 0.0),)},
])
def test_scene_validation(kwargs):
    params = {'extent': (10.0, 10.0), **kwargs}
    with pytest.raises(DomainError):
        BoxCityScene(**params)


def test_compare_identical_images(rng):
    img = OrthoImage(rng.uniform(0, 255, (16, 16, 3)))
    report = compare_images(img, img)
    assert report.mean_abs_diff == 0.0
    assert report.within_16 == 1.0
    assert report.ssim == pytest.approx(1.0)
    assert report.pixels == 256


def test_compare_counts_close_pixels():
    a = OrthoImage(np.zeros((2, 2, 3)))
    b = OrthoImage(np.array([[[16, 0, 0], [17, 0, 0]], [[0, 0, 0], [0, 0, 100]]], dtype=float))
    report = compare_images(a, b)
    assert report.within_16 == 0.5
    np.testing.assert_allclose(report.channel_mad, [33 / 4, 0, 25])


def test_compare_excludes_holes_and_masks():
    holes = np.zeros((2, 2), dtype=bool)
    holes[1, 1] = True
    a = OrthoImage(np.zeros((2, 2, 3)), holes)
    b = OrthoImage(np.full((2, 2, 3), 200.0))
    assert compare_images(a, b).pixels == 3
    assert compare_images(a, b, exclude_holes=False).pixels == 4
    mask = np.array([[True, False], [False, False]])
    assert compare_images(a, b, mask=mask).pixels == 1
    with pytest.raises(DomainError):
        compare_images(a, b, mask=np.zeros((2, 2), dtype=bool))
    with pytest.raises(DomainError):
        compare_images(a, OrthoImage(np.zeros((3, 2, 3))))


def test_ssim_drops_for_unrelated_images(rng):
    a = rng.uniform(0, 255, (32, 32))
    b = rng.uniform(0, 255, (32, 32))
    assert ssim_map(a, b).mean() < 0.2
    np.testing.assert_allclose(ssim_map(a, a), 1.0)


def test_oblique_camera_projects_the_target_to_the_centre():
    camera = ObliqueCamera([0.0, -10.0, 10.0], [0.0, 0.0, 0.0], 50.0, 64, 48)
    col, row, depth = camera.project([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert (col[0], row[0]) == pytest.approx((32.0, 24.0))
    assert depth[0] == pytest.approx(np.sqrt(200))
    assert col[1] > 32.0
    assert row[2] < 24.0
    with pytest.raises(DomainError):
        ObliqueCamera([0.0, 0.0, 5.0], [0.0, 0.0, 0.0], 50.0, 64, 48, up=[0.0, 0.0, 1.0])


def test_oblique_view_keeps_the_nearest_point():
    camera = ObliqueCamera([0.0, 0.0, 10.0], [0.0, 0.0, 0.0], 10.0, 8, 8)
    points = np.array([[0.01, 0.01, 0.0], [0.01, 0.01, 5.0]])
    cloud = ColoredPointCloud(points, np.array([[255, 0, 0], [0, 0, 255]]))
    view = render_oblique_view(cloud, camera)
    assert view.hole_count == 63
    filled = np.argwhere(~view.hole_mask)[0]
    np.testing.assert_array_equal(view.rgb[tuple(filled)], [0, 0, 255])
