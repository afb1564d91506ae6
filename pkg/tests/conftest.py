from pathlib import Path

import numpy as np
import pytest

from orthoforge.fixtures import generate_box_city, four_box_city, truth_for
from orthoforge.ortho_raster import OrthoRenderer
from orthoforge.pointcloud_io import ColoredPointCloud
from orthoforge.settings import RasterConfig

DATA = Path(__file__).parent / 'data'

# narrow roof band keeps wall tops out of roof edges
BOX_CITY_RASTER = RasterConfig(roof_band_frac=0.02)


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def flat_cloud(n=2000, size=10.0, seed=0, z=0.0) -> ColoredPointCloud:
    gen = np.random.default_rng(seed)
    points = np.column_stack([gen.uniform(0, size, n), gen.uniform(0, size, n), np.full(n, z)])
    colors = np.tile([30, 160, 60], (n, 1))
    return ColoredPointCloud(points, colors)


@pytest.fixture(scope='session')
def box_city():
    scene = four_box_city(extent=30.0, density=50.0, noise_sigma=0.02, seed=7)
    cloud, truth = generate_box_city(scene, pixel_scale=0.1)
    return scene, cloud, truth


@pytest.fixture(scope='session')
def box_city_render(box_city):
    scene, cloud, _ = box_city
    renderer = OrthoRenderer(BOX_CITY_RASTER, seed=3)
    image = renderer.render(cloud)
    return renderer, image, truth_for(scene, image)
