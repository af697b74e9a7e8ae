import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egoflow.errors import ParameterError
from egoflow.geometry import (
    CameraIntrinsics, DepthModel, EgoMotion, MotionField,
    compose_field, ego_field, pixel_grid, rotational_field, translational_field,
)

from oracles import rotation_terms, translation_terms, ulps_off


def unit_camera(width=9, height=9):
    # f = 1 with the principal point on a pixel center so centered coords are integers
    return CameraIntrinsics(1.0, 1.0, (width - 1) / 2, (height - 1) / 2, width, height)


def at(field, intr, x, y):
    col = int(round(intr.principal_x + x))
    row = int(round(intr.principal_y + y))
    return field.u[row, col], field.v[row, col]


small = st.floats(-0.05, 0.05, allow_nan=False)
vec3 = st.tuples(small, small, small)
# zero or comfortably normal, so scaling by two never underflows
normal = st.one_of(st.just(0.0), st.floats(1e-6, 0.05), st.floats(-0.05, -1e-6))
normal_vec3 = st.tuples(normal, normal, normal)


# ---------------------------------------------------------------- types

def test_intrinsics_validation():
    with pytest.raises(ParameterError):
        CameraIntrinsics(0.0, 1.0, 0, 0, 4, 4)
    with pytest.raises(ParameterError):
        CameraIntrinsics(1.0, 1.0, 4.0, 0, 4, 4)
    with pytest.raises(ParameterError):
        CameraIntrinsics(1.0, 1.0, 0, 0, 0, 4)
    with pytest.raises(ParameterError):
        CameraIntrinsics(float("nan"), 1.0, 0, 0, 4, 4)


def test_intrinsics_matrix_round_trip():
    intr = CameraIntrinsics(721.5, 718.0, 609.5, 172.8, 1242, 375)
    assert CameraIntrinsics.from_matrix(intr.matrix(), 1242, 375) == intr
    assert intr.cross_focal == pytest.approx(math.sqrt(721.5 * 718.0))
    assert intr.shape == (375, 1242)


def test_egomotion_rejects_nonfinite_and_bad_interval():
    with pytest.raises(ParameterError):
        EgoMotion((0, float("inf"), 0))
    with pytest.raises(ParameterError):
        EgoMotion(translation=(0, 0, float("nan")))
    with pytest.raises(ParameterError):
        EgoMotion(frame_interval=0.0)
    with pytest.raises(ParameterError):
        EgoMotion((0, 0))


def test_egomotion_from_rates():
    ego = EgoMotion.from_rates((0.0, 0.0, 0.1), (10.0, 0.0, 0.0), 0.1)
    assert ego.omega[2] == pytest.approx(0.01)
    assert ego.translation[0] == pytest.approx(1.0)
    assert ego.frame_interval == 0.1


def test_depth_and_field_validation():
    for z in (0.0, -1.0, float("inf")):
        with pytest.raises(ParameterError):
            DepthModel(z)
    with pytest.raises(ParameterError):
        MotionField(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ParameterError):
        MotionField(np.array([[np.nan]]), np.array([[0.0]]))
    with pytest.raises(ParameterError):
        MotionField(np.zeros((0, 0)), np.zeros((0, 0)))


# ---------------------------------------------------------------- rotation

def test_zero_rotation_gives_zero_field():
    f = rotational_field(CameraIntrinsics(500, 500, 100, 50, 200, 100), (0, 0, 0))
    assert not f.u.any() and not f.v.any()


def test_rotation_examples():
    intr = unit_camera()
    assert at(rotational_field(intr, (0, 0, 0.1)), intr, 2, 3) == pytest.approx((0.3, -0.2))
    assert at(rotational_field(intr, (0, 0.1, 0)), intr, 1, 0) == pytest.approx((-0.2, 0.0))
    assert at(rotational_field(intr, (0.05, 0, 0)), intr, 0, 0) == pytest.approx((0.0, 0.05))


def test_rotation_matches_exact_evaluation():
    intr = CameraIntrinsics(320.0, 300.0, 80.3, 40.7, 160, 90)
    omega = (0.013, -0.007, 0.021)
    f = rotational_field(intr, omega)
    for row, col in [(0, 0), (89, 159), (40, 80), (13, 150)]:
        ut, vt = rotation_terms(320.0, 300.0, intr.cross_focal, 80.3, 40.7, col, row, omega)
        assert ulps_off(f.u[row, col], ut) <= 4
        assert ulps_off(f.v[row, col], vt) <= 4


def test_rotation_rejects_bad_input():
    intr = unit_camera()
    with pytest.raises(ParameterError):
        rotational_field(intr, (0, float("nan"), 0))
    with pytest.raises(ParameterError):
        rotational_field("camera", (0, 0, 0))


def test_anisotropic_focal_extension():
    intr = CameraIntrinsics(400.0, 100.0, 10.0, 10.0, 21, 21)
    # x-terms use focal_x, y-terms focal_y, cross terms sqrt(fx*fy) = 200
    u, v = at(rotational_field(intr, (0.0, 0.01, 0.0)), intr, 4, 2)
    assert u == pytest.approx(-0.01 * 400 - 0.01 / 400 * 16)
    assert v == pytest.approx(-0.01 / 200 * 8)
    u, v = at(rotational_field(intr, (0.01, 0.0, 0.0)), intr, 4, 2)
    assert u == pytest.approx(0.01 / 200 * 8)
    assert v == pytest.approx(0.01 * 100 + 0.01 / 100 * 4)
    u, v = at(translational_field(intr, (1.0, 1.0, 0.0), DepthModel(10)), intr, 4, 2)
    assert (u, v) == pytest.approx((-40.0, -10.0))


def test_normalized_mode_uses_unit_focal_length():
    intr = CameraIntrinsics(200.0, 200.0, 50.0, 30.0, 101, 61)
    px = rotational_field(intr, (0.0, 0.0, 0.1))
    norm = rotational_field(intr, (0.0, 0.0, 0.1), normalized=True)
    # pure roll scales with the coordinates, so image-plane flow is pixel flow / f
    np.testing.assert_allclose(norm.u * 200.0, px.u, rtol=1e-12, atol=1e-12)
    t = translational_field(intr, (1.0, 0.0, 0.0), DepthModel(5.0), normalized=True)
    np.testing.assert_allclose(t.u, -0.2)


def term_magnitudes(intr, omega):
    mu = mv = 0.0
    for axis in range(3):
        w = [0.0, 0.0, 0.0]
        w[axis] = abs(omega[axis])
        f = rotational_field(intr, tuple(w))
        mu, mv = mu + np.abs(f.u), mv + np.abs(f.v)
    return mu, mv


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, st.floats(-3, 3), st.floats(-3, 3))
def test_rotation_is_linear(w1, w2, a, b):
    intr = CameraIntrinsics(300.0, 280.0, 31.5, 20.25, 64, 40)
    combo = tuple(a * p + b * q for p, q in zip(w1, w2))
    lhs = rotational_field(intr, combo)
    f1, f2 = rotational_field(intr, w1), rotational_field(intr, w2)
    # terms may cancel, so measure error against their summed magnitudes
    mu, mv = term_magnitudes(intr, combo)
    for w, k in ((w1, abs(a)), (w2, abs(b))):
        tu, tv = term_magnitudes(intr, w)
        mu, mv = mu + k * tu, mv + k * tv
    eps = 16 * np.finfo(float).eps
    assert (np.abs(lhs.u - (a * f1.u + b * f2.u)) <= eps * mu + 1e-300).all()
    assert (np.abs(lhs.v - (a * f1.v + b * f2.v)) <= eps * mv + 1e-300).all()


@settings(max_examples=60, deadline=None)
@given(vec3, vec3)
def test_negation_negates_exactly(w, t):
    intr = CameraIntrinsics(250.0, 250.0, 20.0, 10.0, 41, 23)
    neg = tuple(-x for x in w)
    assert rotational_field(intr, neg).equals(-rotational_field(intr, w))
    neg = tuple(-x for x in t)
    d = DepthModel(7.5)
    assert translational_field(intr, neg, d).equals(-translational_field(intr, t, d))


def test_rotation_independent_of_depth():
    intr = CameraIntrinsics(300.0, 300.0, 40.0, 20.0, 80, 40)
    ego = EgoMotion((0.01, -0.02, 0.003))
    ref = ego_field(intr, ego, DepthModel(1.0))
    for z in (10.0, 100.0, 0.37):
        assert ego_field(intr, ego, DepthModel(z)).equals(ref)
    assert ref.equals(rotational_field(intr, ego.omega))


# ---------------------------------------------------------------- translation

def test_translation_examples():
    intr = unit_camera()
    zero = translational_field(intr, (0, 0, 0), DepthModel(3.0))
    assert not zero.u.any() and not zero.v.any()
    assert at(translational_field(intr, (0, 0, 0.5), DepthModel(10)), intr, 1, 2) == pytest.approx((0.05, 0.10))
    flat = translational_field(intr, (1, 0, 0), DepthModel(5))
    np.testing.assert_allclose(flat.u, -0.2)
    np.testing.assert_allclose(flat.v, 0.0)


def test_translation_matches_exact_evaluation():
    intr = CameraIntrinsics(700.0, 690.0, 60.2, 33.9, 120, 70)
    T, Z = (0.11, -0.04, 0.9), 13.0
    f = translational_field(intr, T, DepthModel(Z))
    for row, col in [(0, 0), (69, 119), (34, 61)]:
        ut, vt = translation_terms(700.0, 690.0, 60.2, 33.9, col, row, T, Z)
        assert ulps_off(f.u[row, col], ut) <= 4
        assert ulps_off(f.v[row, col], vt) <= 4


@settings(max_examples=60, deadline=None)
@given(normal_vec3, st.floats(0.5, 200))
def test_doubling_depth_halves_translation_field(t, z):
    intr = CameraIntrinsics(300.0, 300.0, 15.5, 9.5, 32, 20)
    near = translational_field(intr, t, DepthModel(z))
    far = translational_field(intr, t, DepthModel(2 * z))
    assert np.array_equal(far.u, near.u / 2) and np.array_equal(far.v, near.v / 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.5, 100))
def test_forward_motion_expands(tz, z):
    intr = CameraIntrinsics(500.0, 500.0, 32.3, 18.6, 64, 36)
    f = translational_field(intr, (0, 0, tz), DepthModel(z))
    x, y = pixel_grid(intr)
    assert (f.u[x > 0] > 0).all() and (f.u[x < 0] < 0).all()
    assert (f.v[y > 0] > 0).all() and (f.v[y < 0] < 0).all()


def test_translation_rejects_bad_depth():
    with pytest.raises(ParameterError):
        translational_field(unit_camera(), (0, 0, 1), -1.0)


# ---------------------------------------------------------------- composition

def test_compose_examples():
    intr = unit_camera()
    rot = rotational_field(intr, (0, 0, 0.1))
    trans = translational_field(intr, (0, 0, 0.5), DepthModel(10))
    assert at(rot, intr, 1, 2) == pytest.approx((0.2, -0.1))
    assert at(compose_field(rot, trans), intr, 1, 2) == pytest.approx((0.25, 0.0))
    assert compose_field(MotionField.zeros(9, 9), trans).equals(trans)
    assert compose_field(rot, trans).equals(compose_field(trans, rot))


def test_compose_rejects_mismatch():
    with pytest.raises(ParameterError):
        compose_field(MotionField.zeros(3, 4), MotionField.zeros(4, 3))


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, st.floats(0.5, 100))
def test_ego_field_is_exact_three_step_composition(w, t, z):
    intr = CameraIntrinsics(410.0, 395.0, 27.0, 11.0, 48, 30)
    d = DepthModel(z)
    manual = compose_field(rotational_field(intr, w), translational_field(intr, t, d))
    assert ego_field(intr, EgoMotion(w, t), d).equals(manual)


def test_zero_ego_and_yaw_direction():
    intr = CameraIntrinsics(700.0, 700.0, 300.0, 90.0, 612, 184)
    zero = ego_field(intr, EgoMotion(), DepthModel())
    assert not zero.u.any() and not zero.v.any()
    # yawing right: the whole scene drifts left
    yaw = ego_field(intr, EgoMotion((0.0, 0.01, 0.0)), DepthModel())
    assert (yaw.u < 0).all()


def test_field_helpers():
    f = MotionField.uniform(4, 3, 3.0, 4.0)
    assert f.shape == (3, 4) and f.width == 4 and f.height == 3
    assert f.max_magnitude() == 5.0
    assert f.stacked().shape == (3, 4, 2)
    np.testing.assert_array_equal(f.magnitude(), 5.0)
