import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import naive_matmul, random_reconstruction
from selfcal_sfm.exceptions import (
    DegenerateProjectionError,
    DimensionError,
    PointAtInfinityError,
    SingularHomographyError,
)
from selfcal_sfm.geometry import (
    ProjectiveReconstruction,
    apply_homography,
    cross_residual,
    dehomogenize,
    fit_point_homography,
    intrinsics_matrix,
    intrinsics_params,
    project_point,
    projectively_equal,
    rotation_xyz,
)

P0 = np.eye(3, 4)


def test_project_canonical_camera():
    x = project_point(P0, [1, 2, 3, 1])
    np.testing.assert_allclose(x, [1, 2, 3])
    np.testing.assert_allclose(dehomogenize(x), [1 / 3, 2 / 3])


def test_project_camera_centre_is_degenerate():
    with pytest.raises(DegenerateProjectionError):
        project_point(P0, [0, 0, 0, 1])


def test_project_matches_loop_oracle(rng):
    for _ in range(20):
        P = rng.normal(size=(3, 4))
        X = rng.normal(size=4)
        np.testing.assert_allclose(project_point(P, X), naive_matmul(P, X), rtol=1e-13, atol=1e-13)


def test_project_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        project_point(np.eye(3), [1, 2, 3, 1])
    with pytest.raises(DimensionError):
        project_point(P0, [0, 0, 0, 0])


@pytest.mark.parametrize(
    "v, expected",
    [([2, 4, 2], [1, 2]), ([3, 6, 9, 3], [1, 2, 3])],
)
def test_dehomogenize(v, expected):
    np.testing.assert_allclose(dehomogenize(v), expected)


def test_dehomogenize_point_at_infinity():
    with pytest.raises(PointAtInfinityError):
        dehomogenize([1, 1, 0])


def test_identity_homography_is_noop(rng):
    rec = random_reconstruction(rng)
    out = apply_homography(np.eye(4), rec)
    np.testing.assert_allclose(out.cameras, rec.cameras)
    np.testing.assert_allclose(out.points, rec.points)


def test_scaled_identity_preserves_projections(rng):
    rec = random_reconstruction(rng)
    out = apply_homography(2 * np.eye(4), rec)
    for P, Q in zip(rec.cameras, out.cameras):
        for X, Y in zip(rec.points.T, out.points.T):
            assert projectively_equal(P @ X, Q @ Y)


def test_random_homography_cross_product_oracle(rng):
    rec = random_reconstruction(rng, n=3, m=5)
    H = rng.normal(size=(4, 4))
    out = apply_homography(H, rec)
    for P, Q in zip(rec.cameras, out.cameras):
        for X, Y in zip(rec.points.T, out.points.T):
            assert cross_residual(P @ X, Q @ Y) < 1e-9


def test_singular_homography_rejected(rng):
    rec = random_reconstruction(rng)
    H = np.eye(4)
    H[3] = H[2]
    with pytest.raises(SingularHomographyError):
        apply_homography(H, rec)


def test_homography_composition(rng):
    rec = random_reconstruction(rng)
    H1, H2 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    a = apply_homography(H2, apply_homography(H1, rec))
    b = apply_homography(H2 @ H1, rec)
    for P, Q in zip(a.cameras, b.cameras):
        assert projectively_equal(P, Q)
    for X, Y in zip(a.points.T, b.points.T):
        assert projectively_equal(X, Y)


def test_homography_round_trip(rng):
    rec = random_reconstruction(rng)
    H = rng.normal(size=(4, 4))
    back = apply_homography(np.linalg.inv(H), apply_homography(H, rec))
    for P, Q in zip(rec.cameras, back.cameras):
        assert projectively_equal(P, Q, tol=1e-9)
    for X, Y in zip(rec.points.T, back.points.T):
        assert projectively_equal(X, Y, tol=1e-9)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(
    P=arrays(float, (3, 4), elements=finite),
    X=arrays(float, 4, elements=finite),
    s=st.floats(0.01, 100) | st.floats(-100, -0.01),
)
def test_projection_scale_invariance(P, X, s):
    x = P @ X
    if np.linalg.norm(x) < 1e-6 * max(np.linalg.norm(P) * np.linalg.norm(X), 1e-300):
        return
    assert projectively_equal(project_point(P, X), project_point(P, s * X), tol=1e-8)


def test_projectively_equal_sign_and_zero():
    assert projectively_equal([1, 2, 3], [-2, -4, -6])
    assert not projectively_equal([1, 2, 3], [1, 2, 4])
    assert not projectively_equal([0, 0, 0], [1, 0, 0])


def test_reconstruction_validates_shapes():
    with pytest.raises(DimensionError):
        ProjectiveReconstruction(np.zeros((2, 3, 3)), np.zeros((4, 5)))
    with pytest.raises(DimensionError):
        ProjectiveReconstruction(np.zeros((2, 3, 4)), np.zeros((3, 5)))


def test_reconstruction_is_read_only(rng):
    rec = random_reconstruction(rng)
    with pytest.raises(ValueError):
        rec.points[0, 0] = 1.0


def test_intrinsics_round_trip():
    K = intrinsics_matrix(800, 790, 1.5, 320, 240)
    np.testing.assert_allclose(intrinsics_params(K), [800, 790, 1.5, 320, 240])
    np.testing.assert_allclose(intrinsics_params(2 * K), [800, 790, 1.5, 320, 240])


def test_rotation_is_orthonormal():
    R = rotation_xyz(0.3, -0.2, 0.1)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_point_homography_dlt_round_trip(rng):
    X = rng.normal(size=(4, 12))
    H = rng.normal(size=(4, 4))
    Y = H @ X
    H_est = fit_point_homography(X, Y)
    assert projectively_equal(H_est, H, tol=1e-8)


def test_point_homography_needs_five_points(rng):
    with pytest.raises(DimensionError):
        fit_point_homography(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))
