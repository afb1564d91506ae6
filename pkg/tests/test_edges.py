import numpy as np
import pytest

from orthoforge.edges import canny_edges, hysteresis, luminance, non_maximum_suppression
from orthoforge.errors import DomainError


def step_image(size=32):
    img = np.zeros((size, size))
    img[:, size // 2:] = 255.0
    return img


def test_step_edge_is_one_pixel_wide():
    edges = canny_edges(step_image())
    assert edges.dtype == np.uint8
    for row in edges:
        columns = np.flatnonzero(row)
        assert len(columns) == 1
        assert columns[0] in (15, 16)


def test_constant_image_has_no_edges():
    edges = canny_edges(np.full((20, 20, 3), 90.0))
    assert edges.shape == (20, 20)
    assert not edges.any()


def test_square_outline_hugs_the_square():
    img = np.zeros((40, 40))
    img[15:25, 15:25] = 200.0
    edges = canny_edges(img).astype(bool)
    assert edges.sum() >= 30
    rows, cols = np.nonzero(edges)
    distance = np.minimum(
        np.minimum(np.abs(rows - 14.5), np.abs(rows - 24.5)),
        np.minimum(np.abs(cols - 14.5), np.abs(cols - 24.5))
    )
    assert distance.max() <= 2.0


def test_rgb_uses_luminance():
    grey = step_image()
    rgb = np.repeat(grey[..., None], 3, axis=2)
    np.testing.assert_allclose(luminance(rgb), grey)
    np.testing.assert_array_equal(canny_edges(rgb), canny_edges(luminance(rgb)))


def test_ridge_two_pixels_wide_thins_to_one():
    magnitude = np.zeros((3, 6))
    magnitude[:, 2:4] = 5.0
    keep = non_maximum_suppression(magnitude, np.zeros((3, 6)))
    np.testing.assert_array_equal(keep[1], [False, False, True, False, False, False])


def test_hysteresis_drops_unseeded_components():
    candidates = np.zeros((5, 7), dtype=bool)
    candidates[1, 0:3] = True
    candidates[3, 4:7] = True
    strong = np.zeros((5, 7), dtype=bool)
    strong[1, 1] = True
    np.testing.assert_array_equal(hysteresis(candidates, strong), candidates & (np.arange(5)[:, None] == 1))


@pytest.mark.parametrize('low, high', [(0.3, 0.1), (0.0, 0.5), (0.2, 1.5)])
def test_thresholds_are_validated(low, high):
    with pytest.raises(DomainError):
        canny_edges(step_image(), low_frac=low, high_frac=high)


def test_negative_sigma_is_rejected():
    with pytest.raises(DomainError):
        canny_edges(step_image(), sigma=-1.0)


def test_wider_smoothing_keeps_fewer_edges(rng):
    texture = rng.uniform(0, 255, (64, 64))
    texture[16:48, 16:48] += 300.0
    fine = canny_edges(texture, sigma=1.0).sum()
    coarse = canny_edges(texture, sigma=3.0).sum()
    assert 0 < coarse < fine
