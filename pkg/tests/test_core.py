"""Rotation, quaternion, and camera-geometry primitives."""

from __future__ import annotations

import numpy as np

from splatterlab.core import (Camera, camera_rays_grid, compose_covariance,
                              lookat_rotation, minimal_rotation,
                              quat_from_rotation, quat_mul, quat_to_rotation,
                              rng_for)

RT2 = np.sqrt(0.5)


def test_quat_identity():
    assert np.allclose(quat_to_rotation(np.array([1.0, 0, 0, 0])), np.eye(3))


def test_quat_z90_swaps_axes():
    q = np.array([RT2, 0.0, 0.0, RT2])  # 90 deg about z
    R = quat_to_rotation(q)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    assert np.allclose(R @ [0, 1, 0], [-1, 0, 0], atol=1e-12)


def test_quat_norm_invariance_and_orthonormality():
    rng = rng_for(1, 10)
    for _ in range(20):
        q = rng.normal(size=4)
        R = quat_to_rotation(q)
        assert np.allclose(R, quat_to_rotation(3.7 * q), atol=1e-12)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0, atol=1e-12)


def test_quat_zero_falls_back_to_identity():
    assert np.allclose(quat_to_rotation(np.zeros(4)), np.eye(3))


def test_quat_round_trip_up_to_sign():
    rng = rng_for(1, 11)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        q2 = quat_from_rotation(quat_to_rotation(q))
        assert np.allclose(q, q2, atol=1e-9) or np.allclose(q, -q2, atol=1e-9)


def test_quat_mul_composes_rotations():
    rng = rng_for(1, 12)
    a = rng.normal(size=4)
    b = rng.normal(size=4)
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    assert np.allclose(quat_to_rotation(quat_mul(a, b)),
                       quat_to_rotation(a) @ quat_to_rotation(b), atol=1e-12)


def test_compose_covariance_identity_quat():
    cov = compose_covariance(np.array([1.0, 0, 0, 0]), np.array([0.2, 0.3, 0.4]))
    assert np.allclose(cov, np.diag([0.04, 0.09, 0.16]), atol=1e-15)


def test_compose_covariance_z90_swaps_variances():
    q = np.array([RT2, 0.0, 0.0, RT2])
    cov = compose_covariance(q, np.array([0.2, 0.3, 0.4]))
    assert np.allclose(cov, np.diag([0.09, 0.04, 0.16]), atol=1e-15)


def test_minimal_rotation_maps_a_to_b():
    rng = rng_for(1, 13)
    for _ in range(20):
        a = rng.normal(size=3)
        b = rng.normal(size=3)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        R = minimal_rotation(a, b)
        assert np.allclose(R @ a, b, atol=1e-12)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0, atol=1e-12)


def test_minimal_rotation_parallel_is_identity():
    a = np.array([0.0, 0.0, 1.0])
    assert np.allclose(minimal_rotation(a, a), np.eye(3), atol=1e-12)


def test_lookat_points_z_at_target():
    eye = np.array([0.3, -0.2, 1.5])
    target = np.array([0.0, 0.0, 0.5])
    R = lookat_rotation(eye, target)
    fwd = (target - eye) / np.linalg.norm(target - eye)
    assert np.allclose(R[:, 2], fwd, atol=1e-12)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_center_pixel_ray_is_optical_axis():
    cam = Camera(rotation=np.eye(3), center=np.zeros(3), focal=10.0,
                 principal_point=np.array([1.5, 1.5]), width=3, height=3)
    rays = camera_rays_grid(cam)
    assert np.allclose(rays[1, 1], [0, 0, 1], atol=1e-15)
    assert np.allclose(np.linalg.norm(rays, axis=2), 1.0, atol=1e-12)


def test_off_axis_ray_direction():
    # pixel center 500 px right of the principal point at focal 500
    cam = Camera(rotation=np.eye(3), center=np.zeros(3), focal=500.0,
                 principal_point=np.array([0.5, 0.5]), width=501, height=1)
    rays = camera_rays_grid(cam)
    assert np.allclose(rays[0, 500], [RT2, 0, RT2], atol=1e-12)


def test_rng_for_determinism_and_tag_independence():
    a = rng_for(0, 100).normal(size=8)
    b = rng_for(0, 100).normal(size=8)
    c = rng_for(0, 200).normal(size=8)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
