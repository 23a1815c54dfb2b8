import math

import numpy as np
import pytest

from cbct.geometry import (
    ConeBeamGeometry,
    GeometryError,
    ProjectionData,
    Volume,
    cone_angle,
    make_geometry,
)


def test_paper_default_cone_angle():
    # source radius 10x the 10 cm phantom, N=1024: full opening ~5.7 degrees
    g = make_geometry(1024, 360, 10.0, 10.0)
    assert abs(cone_angle(g) - 5.7) < 0.05


def test_cone_angle_parallel_limit():
    g = make_geometry(64, 16, 1e6, 10.0)
    assert cone_angle(g) < 1e-3


def test_cone_angle_hand_trigonometry():
    # independent oracle: 2*atan(half detector height / source-to-detector)
    n, factor, phys = 64, 2.5, 10.0
    g = make_geometry(n, 16, factor, phys)
    source_radius = factor * phys
    magnification = (source_radius + source_radius) / source_radius
    half_height = 0.5 * n * (phys / n) * magnification
    expected = math.degrees(2.0 * math.atan(half_height / (2 * source_radius)))
    assert abs(cone_angle(g) - expected) < 1e-12
    assert cone_angle(g) > 0


def test_cone_angle_zero_height_limit():
    g = make_geometry(64, 16, 10.0, 10.0)
    tiny = ConeBeamGeometry(
        n_voxels=g.n_voxels, voxel_size=g.voxel_size, n_detector=g.n_detector,
        pixel_size=1e-9, n_angles=g.n_angles, source_radius=g.source_radius,
        detector_radius=g.detector_radius, angles=g.angles,
    )
    assert cone_angle(tiny) < 1e-6


def test_cone_angle_monotonicity():
    base = make_geometry(32, 8, 5.0, 10.0)
    taller = ConeBeamGeometry(
        n_voxels=32, voxel_size=base.voxel_size, n_detector=32,
        pixel_size=2 * base.pixel_size, n_angles=8,
        source_radius=base.source_radius, detector_radius=base.detector_radius,
        angles=base.angles,
    )
    assert cone_angle(taller) > cone_angle(base)
    # doubled detector height: hand trigonometry oracle
    half_height = 0.5 * 32 * taller.pixel_size
    expected = math.degrees(2 * math.atan(half_height / taller.source_to_detector))
    assert abs(cone_angle(taller) - expected) < 1e-12
    farther = make_geometry(32, 8, 7.0, 10.0)
    assert cone_angle(farther) < cone_angle(base)


def test_make_geometry_post_conditions():
    g = make_geometry(64, 32, 10.0, 10.0)
    assert g.voxel_size == 10.0 / 64
    # detector covers the magnified central cross-section
    assert g.n_detector == 64
    assert np.isclose(g.n_detector * g.pixel_size, 10.0 * g.magnification)
    assert g.detector_radius == g.source_radius
    assert g.angles.shape == (32,)
    assert g.angles[0] == 0.0
    assert np.all(np.diff(g.angles) > 0)
    assert g.angles[-1] < 2 * math.pi


def test_make_geometry_detector_radius_override():
    g = make_geometry(32, 8, 10.0, 10.0, detector_radius=30.0)
    assert g.detector_radius == 30.0
    assert g.source_to_detector == 130.0


def test_source_inside_volume_rejected():
    with pytest.raises(GeometryError):
        make_geometry(32, 8, 0.5, 10.0)
    with pytest.raises(GeometryError):
        make_geometry(32, 8, 0.5 * math.sqrt(3.0), 10.0)


def test_invalid_sizes_rejected():
    with pytest.raises(GeometryError):
        make_geometry(3, 8, 10.0, 10.0)
    with pytest.raises(GeometryError):
        make_geometry(32, 8, 10.0, -1.0)


def test_angles_validation():
    g = make_geometry(8, 4, 10.0, 10.0)
    bad = g.angles.copy()
    bad[1], bad[2] = bad[2], bad[1]
    with pytest.raises(GeometryError):
        ConeBeamGeometry(8, g.voxel_size, 8, g.pixel_size, 4,
                         g.source_radius, g.detector_radius, bad)
    with pytest.raises(GeometryError):
        ConeBeamGeometry(8, g.voxel_size, 8, g.pixel_size, 4,
                         g.source_radius, g.detector_radius,
                         np.array([0.0, 1.0, 2.0, 6.4]))


def test_serialization_round_trip_bit_exact():
    g = make_geometry(48, 96, 7.3, 11.17)
    assert ConeBeamGeometry.from_json(g.to_json()) == g
    assert np.array_equal(ConeBeamGeometry.from_json(g.to_json()).angles, g.angles)


def test_volume_validation():
    g = make_geometry(8, 4, 10.0, 10.0)
    Volume(np.zeros((8, 8, 8)), g)
    with pytest.raises(GeometryError):
        Volume(np.zeros((8, 8, 4)), g)
    bad = np.zeros((8, 8, 8))
    bad[0, 0, 0] = np.nan
    with pytest.raises(GeometryError):
        Volume(bad, g)


def test_projection_data_validation():
    g = make_geometry(8, 4, 10.0, 10.0)
    ProjectionData(np.zeros((4, 8, 8)), g)
    with pytest.raises(GeometryError):
        ProjectionData(np.zeros((5, 8, 8)), g)
    bad = np.zeros((4, 8, 8))
    bad[1, 1, 1] = np.inf
    with pytest.raises(GeometryError):
        ProjectionData(bad, g)
