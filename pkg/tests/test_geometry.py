import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiersem.errors import InputError
from hiersem.geometry import CameraIntrinsics, depth_to_cloud, image_to_lab, rgb_to_lab

# skimage.color.rgb2lab on (119, 119, 119), computed once and frozen
GRAY_119_LAB = (50.034438792538225, -0.0013975038274938179, 0.002649017710121271)
RED_LAB = (53.2405879437449, 80.0923082256922, 67.2027510444287)


def _k(w=8, h=6):
    return CameraIntrinsics(500.0, 500.0, (w - 1) / 2, (h - 1) / 2, 0.001)


def test_principal_point_on_optical_axis():
    k = CameraIntrinsics(525.0, 525.0, 3.0, 2.0, 0.001)
    depth = np.zeros((5, 7), dtype=np.uint16)
    depth[2, 3] = 1000
    cloud = depth_to_cloud(depth, np.zeros((5, 7, 3), np.uint8), k)
    np.testing.assert_allclose(cloud.points[2, 3], [0.0, 0.0, 1.0])
    assert cloud.valid[2, 3]
    assert cloud.valid.sum() == 1


def test_missing_depth_is_invalid():
    depth = np.full((6, 8), 1500, dtype=np.uint16)
    depth[1, 4] = 0
    cloud = depth_to_cloud(depth, np.zeros((6, 8, 3), np.uint8), _k())
    assert not cloud.valid[1, 4]
    assert cloud.valid.sum() == 47


def test_one_focal_length_off_axis():
    k = CameraIntrinsics(4.0, 4.0, 2.0, 1.0, 0.001)
    depth = np.full((3, 8), 1000, dtype=np.uint16)
    cloud = depth_to_cloud(depth, np.zeros((3, 8, 3), np.uint8), k)
    u, v, z = 6, 1, 1.0  # u = cx + fx
    expected_x = (u - 2.0) * z / 4.0
    assert cloud.points[v, u, 0] == pytest.approx(expected_x)
    assert cloud.points[v, u, 0] == pytest.approx(1.0)


def test_dimension_mismatch_rejected():
    with pytest.raises(InputError):
        depth_to_cloud(np.ones((4, 4), np.uint16), np.zeros((4, 5, 3), np.uint8), _k(4, 4))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 31),
    st.integers(0, 23),
    st.integers(1, 65535),
    st.floats(100, 1000),
    st.floats(100, 1000),
)
def test_backprojection_roundtrip(u, v, raw, fx, fy):
    k = CameraIntrinsics(fx, fy, 15.5, 11.5, 0.001)
    depth = np.zeros((24, 32), np.uint16)
    depth[v, u] = raw
    cloud = depth_to_cloud(depth, np.zeros((24, 32, 3), np.uint8), k)
    uv = k.project(cloud.points[v, u])
    assert abs(uv[0] - u) < 1e-6 and abs(uv[1] - v) < 1e-6


def test_x_affine_in_u_and_z_linear_in_raw():
    depth = np.full((6, 8), 2000, np.uint16)
    cloud = depth_to_cloud(depth, np.zeros((6, 8, 3), np.uint8), _k())
    dx = np.diff(cloud.points[3, :, 0])
    assert np.all(dx > 0)
    np.testing.assert_allclose(dx, dx[0])
    d2 = depth.copy()
    d2[:] = 4000
    c2 = depth_to_cloud(d2, np.zeros((6, 8, 3), np.uint8), _k())
    np.testing.assert_allclose(c2.points[..., 2], 2 * cloud.points[..., 2])


def test_lab_white_black():
    L, a, b = rgb_to_lab(255, 255, 255)
    assert L == pytest.approx(100.0, abs=0.1)
    assert a == pytest.approx(0.0, abs=0.1) and b == pytest.approx(0.0, abs=0.1)
    assert rgb_to_lab(0, 0, 0) == pytest.approx((0.0, 0.0, 0.0), abs=1e-9)


def test_lab_reference_values():
    assert rgb_to_lab(119, 119, 119) == pytest.approx(GRAY_119_LAB, abs=0.01)
    assert rgb_to_lab(255, 0, 0) == pytest.approx(RED_LAB, abs=0.01)


def test_lab_matches_skimage_on_random_colors():
    skcolor = pytest.importorskip("skimage.color")
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
    np.testing.assert_allclose(image_to_lab(img), skcolor.rgb2lab(img), atol=0.02)


@given(st.integers(0, 255))
def test_gray_is_achromatic(v):
    _, a, b = rgb_to_lab(v, v, v)
    assert abs(a) < 0.5 and abs(b) < 0.5


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0, 0)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 0, 0, depth_scale=0)
    k = CameraIntrinsics.kinect_default(640, 480)
    assert (k.fx, k.fy, k.cx, k.cy, k.depth_scale) == (525.0, 525.0, 319.5, 239.5, 0.001)
    with pytest.raises(InputError):
        k.check_image(160, 120)
