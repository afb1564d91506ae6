import numpy as np
import pytest

from orthoforge.errors import ArtifactIOError, DomainError, FormatError
from orthoforge.rendering import (
    GeoRef, OrthoImage, center_crop, downsample_lanczos, georef_path, holes_path, lanczos,
    load_georef, load_image, read_mask, save_image, write_mask
)


def tilted_georef():
    angle = np.radians(20)
    basis = np.array([
        [np.cos(angle), 0.0, -np.sin(angle)],
        [0.0, 1.0, 0.0],
        [np.sin(angle), 0.0, np.cos(angle)],
    ])
    return GeoRef(-3.5, 2.25, 0.2, 60, crop_x=4, crop_y=7, centroid=np.array([10.0, -4.0, 2.0]), basis=basis)


def test_lanczos_kernel_values():
    np.testing.assert_allclose(lanczos(np.array([0.0, 1.0, 2.0, 3.0, 4.5])), [1, 0, 0, 0, 0], atol=1e-15)


def test_lanczos_suppresses_aliasing():
    x = np.arange(128)
    row = 128 + 100 * np.sin(2 * np.pi * 0.4 * x)
    rgb = np.repeat(np.tile(row, (8, 1))[..., None], 3, axis=2)
    img = OrthoImage(rgb)

    filtered = downsample_lanczos(img, 2).rgb[:, 4:-4, 0]
    strided = rgb[::2, ::2][:, 4:-4, 0]
    assert filtered.std() < 0.1 * strided.std()


def test_downsample_keeps_flat_color():
    img = OrthoImage(np.full((12, 16, 3), 77.0))
    out = downsample_lanczos(img, 4)
    assert (out.height, out.width) == (3, 4)
    np.testing.assert_allclose(out.rgb, 77.0)
    assert out.pixel_scale == 4.0


def test_ssaa_one_copies():
    img = OrthoImage(np.full((4, 4, 3), 5.0))
    out = downsample_lanczos(img, 1)
    assert out is not img
    assert out.rgb is not img.rgb
    np.testing.assert_array_equal(out.rgb, img.rgb)


def test_holes_need_a_majority():
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = mask[0, 1] = mask[1, 0] = True  # 3 of 4
    mask[0, 2] = mask[1, 3] = True  # 2 of 4
    img = OrthoImage(np.full((4, 4, 3), 100.0), mask)
    out = downsample_lanczos(img, 2)
    np.testing.assert_array_equal(out.hole_mask, [[True, False], [False, False]])
    np.testing.assert_array_equal(out.rgb[0, 0], [0, 0, 0])


def test_downsample_rejects_bad_factors():
    img = OrthoImage(np.zeros((2, 2, 3)))
    with pytest.raises(DomainError):
        downsample_lanczos(img, 0)
    with pytest.raises(DomainError):
        downsample_lanczos(img, 3)


def test_center_crop_shifts_the_georef():
    img = OrthoImage(np.zeros((50, 100, 3)), pixel_scale=0.5)
    out = center_crop(img, 0.1)
    assert (out.width, out.height) == (80, 40)
    assert (out.georef.crop_x, out.georef.crop_y) == (10, 5)
    np.testing.assert_allclose(out.georef.pixel_to_plane(0, 0), img.georef.pixel_to_plane(10, 5))


def test_center_crop_rejects_half():
    with pytest.raises(DomainError):
        center_crop(OrthoImage(np.zeros((4, 4, 3))), 0.5)


def test_scene_to_pixel_inverts_pixel_centres():
    georef = tilted_georef()
    rows, cols = np.mgrid[0:5, 0:7]
    u, v = georef.pixel_to_plane(cols.ravel(), rows.ravel())
    col, row = georef.scene_to_pixel(georef.plane_to_scene(u, v))
    np.testing.assert_allclose(col, cols.ravel(), atol=1e-9)
    np.testing.assert_allclose(row, rows.ravel(), atol=1e-9)


def test_georef_without_frame_cannot_reach_the_scene():
    with pytest.raises(DomainError):
        GeoRef().plane_to_scene(0.0, 0.0)


def test_image_shape_is_checked():
    with pytest.raises(DomainError):
        OrthoImage(np.zeros((4, 4)))
    with pytest.raises(DomainError):
        OrthoImage(np.zeros((4, 4, 3)), np.zeros((3, 4), dtype=bool))


def test_png_round_trip_with_sidecars(tmp_path, rng):
    rgb = rng.integers(0, 256, (9, 13, 3)).astype(np.float64)
    mask = rng.random((9, 13)) < 0.2
    img = OrthoImage(rgb, mask, 0.2, tilted_georef())
    path = tmp_path / 'ortho.png'
    save_image(img, path)
    assert holes_path(path).exists()
    assert georef_path(path).exists()

    loaded = load_image(path)
    np.testing.assert_array_equal(loaded.rgb, rgb)
    np.testing.assert_array_equal(loaded.hole_mask, mask)
    assert loaded.georef.to_pairs() == img.georef.to_pairs()
    assert loaded.pixel_scale == 0.2


def test_mask_png_round_trip(tmp_path):
    mask = np.eye(6, 10, dtype=bool)
    path = tmp_path / 'mask.png'
    write_mask(mask, path)
    np.testing.assert_array_equal(read_mask(path), mask)


def test_image_without_sidecars(tmp_path):
    img = OrthoImage(np.full((3, 5, 3), 9.0))
    path = tmp_path / 'plain.png'
    save_image(img, path, sidecars=False)
    loaded = load_image(path)
    assert loaded.hole_count == 0
    assert loaded.georef.full_height == 3


def test_missing_image_is_an_io_error(tmp_path):
    with pytest.raises(ArtifactIOError):
        load_image(tmp_path / 'none.png')


def test_broken_georef_is_a_format_error(tmp_path):
    path = tmp_path / 'x.georef.txt'
    path.write_text('u_min = 0\nr = 1\n', encoding='utf-8')
    with pytest.raises(FormatError):
        load_georef(path)
