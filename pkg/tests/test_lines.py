import numpy as np
import pytest

from src.exceptions import CoincidentPoints, DegenerateLine
from src.geometry.lines import (cofactor, nearest_rotation, orthonormal_to_plucker,
                                plucker_from_points, plucker_to_orthonormal, reorthonormalize,
                                skew, so3_exp, transform_line_to_camera, update_orthonormal)
from src.models import PluckerLine
from src.synth.scene import random_line


def camera_point(cam, X, v):
    """Brute-force pose at row v applied to a world point"""
    R = (np.eye(3) + v * skew(cam.omega)) @ cam.R0
    return R @ X + cam.t0 + v * cam.d


def test_skew_matches_cross(rng):
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    assert np.allclose(skew(x) @ y, np.cross(x, y))


def test_so3_exp_inverse(rng):
    for _ in range(100):
        psi = rng.normal(scale=1.0, size=3)
        assert np.allclose(so3_exp(psi) @ so3_exp(-psi), np.eye(3), atol=1e-12)


def test_so3_exp_is_rotation_and_small_angle_branch(rng):
    R = so3_exp(rng.standard_normal(3))
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-10)
    assert np.linalg.det(R) == pytest.approx(1.0)
    tiny = np.array([1e-10, -2e-10, 0.5e-10])
    assert np.allclose(so3_exp(tiny), np.eye(3) + skew(tiny), atol=1e-18)


def test_cofactor_of_invertible_matrix(rng):
    M = rng.standard_normal((3, 3))
    assert np.allclose(cofactor(M), np.linalg.det(M) * np.linalg.inv(M).T)


def test_nearest_rotation_projects_noisy_matrix(rng):
    R = so3_exp(rng.standard_normal(3))
    Q = nearest_rotation(R + 1e-3 * rng.standard_normal((3, 3)))
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-10)
    assert np.linalg.det(Q) > 0
    assert np.abs(Q - R).max() < 1e-2


def test_plucker_from_points_satisfies_klein():
    L = plucker_from_points([1.0, 2.0, 3.0], [-1.0, 0.5, 4.0])
    assert np.allclose(L.a, [2.0, 1.5, -1.0])
    assert abs(L.klein()) < 1e-12


def test_plucker_from_homogeneous_points():
    L = plucker_from_points([2.0, 4.0, 6.0, 2.0], [0.0, 0.0, 1.0])
    assert np.allclose(L.a, [1.0, 2.0, 2.0])


def test_coincident_points_rejected():
    with pytest.raises(CoincidentPoints):
        plucker_from_points([1.0, 1.0, 1.0], [1.0, 1.0, 1.0 + 1e-14])


def test_zero_plucker_vector_rejected():
    with pytest.raises(DegenerateLine):
        plucker_to_orthonormal(PluckerLine(n=np.zeros(3), a=np.zeros(3)))


def test_orthonormal_round_trip(rng):
    for _ in range(100):
        L = random_line(rng).scaled(rng.uniform(0.1, 10.0))
        tau = plucker_to_orthonormal(L)
        assert np.allclose(tau.U.T @ tau.U, np.eye(3), atol=1e-9)
        assert np.linalg.det(tau.U) == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(tau.W.T @ tau.W, np.eye(2), atol=1e-12)
        back = orthonormal_to_plucker(tau)
        assert back.is_close(L)
        assert abs(back.klein()) < 1e-10


def test_line_through_origin_round_trip():
    L = PluckerLine(n=np.zeros(3), a=np.array([0.0, 0.0, 2.0]))
    assert orthonormal_to_plucker(plucker_to_orthonormal(L)).is_close(L)


def test_update_keeps_orthonormality(rng):
    tau = plucker_to_orthonormal(random_line(rng))
    for _ in range(20):
        tau = update_orthonormal(tau, rng.normal(scale=0.3, size=4))
    tau = reorthonormalize(tau)
    assert np.allclose(tau.U.T @ tau.U, np.eye(3), atol=1e-12)
    assert np.allclose(tau.W.T @ tau.W, np.eye(2), atol=1e-12)


def test_zero_update_is_identity(rng):
    tau = plucker_to_orthonormal(random_line(rng))
    same = update_orthonormal(tau, np.zeros(4))
    assert np.allclose(same.U, tau.U)
    assert np.allclose(same.W, tau.W)


def test_plucker_matrix_and_klein_coordinates():
    L = plucker_from_points([1.0, 0.0, 5.0], [0.0, 1.0, 4.0])
    M = L.matrix()
    assert np.allclose(M, -M.T)
    assert PluckerLine.from_matrix(M).is_close(L)
    assert (L.l14, L.l24, L.l34) == (L.a[0], L.a[1], L.a[2])
    assert (L.l23, L.l13, L.l12) == (-L.n[0], L.n[1], -L.n[2])


def test_closest_point_is_on_line_and_nearest(rng):
    L = random_line(rng)
    P = L.closest_point()
    assert np.allclose(np.cross(P, L.a), L.n)
    assert abs(np.dot(P, L.a)) < 1e-9


def test_transform_matches_transformed_points(rng, moving_camera):
    for _ in range(20):
        Pa = rng.uniform(-2, 2, 3) + [0, 0, 6]
        Pb = rng.uniform(-2, 2, 3) + [0, 0, 6]
        L = plucker_from_points(Pa, Pb)
        v = rng.uniform(0, 480)
        expected = plucker_from_points(camera_point(moving_camera, Pa, v), camera_point(moving_camera, Pb, v))
        assert transform_line_to_camera(L, moving_camera, v).is_close(expected)


def test_transform_preserves_klein(rng, moving_camera):
    L = random_line(rng)
    Lc = transform_line_to_camera(L, moving_camera, 300.0)
    assert abs(Lc.klein()) < 1e-9
