"""ROI virtual camera, homography warp, and frame-change of Gaussians."""

from __future__ import annotations

import numpy as np
import pytest

from splatterlab.core import Camera, Image, camera_rays_grid, rng_for
from splatterlab.errors import BoxOutsideFrustum, CameraCenterMismatch
from splatterlab.roi import (FaceBox, RoiMapping, build_roi_camera,
                             conditioning_channels, gaussians_to_source_frame,
                             warp_image)

from conftest import random_gaussians


def _src_cam() -> Camera:
    return Camera(rotation=np.eye(3), center=np.zeros(3), focal=80.0,
                  principal_point=np.array([48.0, 32.0]), width=96, height=64)


def test_centered_box_is_pure_crop():
    cam = _src_cam()
    m = build_roi_camera(cam, FaceBox(center=cam.principal_point.copy(), size=30.0),
                         out_size=64)
    assert np.allclose(m.cam_roi.rotation, np.eye(3), atol=1e-12)
    H = m.homography / m.homography[2, 2]
    off_diag = H - np.diag(np.diag(H))
    assert np.allclose(off_diag[:, :2], 0.0, atol=1e-12)
    assert np.isclose(H[0, 0], H[1, 1])


def test_third_rule_focal():
    cam = _src_cam()
    # box subtending 20 degrees: the ROI FOV must open to 60
    size = 2 * cam.focal * np.tan(np.deg2rad(10.0))
    m = build_roi_camera(cam, FaceBox(center=np.array([60.0, 30.0]), size=size),
                         out_size=64)
    assert np.isclose(m.cam_roi.focal, 32.0 / np.tan(np.deg2rad(30.0)), rtol=1e-12)
    assert np.allclose(m.cam_roi.principal_point, [32.0, 32.0])
    assert m.cam_roi.center is not m.cam_roi.rotation
    assert np.allclose(m.cam_roi.center, cam.center)


def test_box_outside_frame_rejected():
    cam = _src_cam()
    with pytest.raises(BoxOutsideFrustum):
        build_roi_camera(cam, FaceBox(center=np.array([500.0, 32.0]), size=30.0),
                         out_size=64)


def test_warp_identity():
    rng = rng_for(4, 1)
    src = Image(rng.uniform(0, 1, (64, 64, 3)))
    mapping = RoiMapping(cam_roi=_src_cam(), homography=np.eye(3))
    out = warp_image(src, mapping, 64)
    assert out.data.shape == (64, 64, 4)
    assert np.allclose(out.data[..., :3], src.data, atol=1e-9)
    assert np.allclose(out.data[..., 3], 1.0, atol=1e-9)


def test_warp_scale_preserves_constant():
    src = Image(np.full((64, 64, 3), 0.42))
    mapping = RoiMapping(cam_roi=_src_cam(),
                         homography=np.diag([0.5, 0.5, 1.0]))
    out = warp_image(src, mapping, 64)
    # first row/column sample half a pixel outside the source and fade
    assert np.allclose(out.data[1:, 1:, :3], 0.42, atol=1e-12)
    assert np.all(out.data[0, :, 3] < 1.0)


def test_warp_out_of_frame_is_transparent():
    src = Image(np.ones((32, 32, 3)))
    shift = np.eye(3)
    shift[0, 2] = 100.0  # sample far right of the source frame
    out = warp_image(src, RoiMapping(cam_roi=_src_cam(), homography=shift), 32)
    assert not out.data.any()


def test_conditioning_channels():
    cam = _src_cam()
    m = build_roi_camera(cam, FaceBox(center=np.array([60.0, 30.0]), size=30.0),
                         out_size=63)
    cond = conditioning_channels(m, 63)
    assert cond.data.shape == (63, 63, 6)
    rays = camera_rays_grid(m.cam_roi)
    # first three channels are the ROI rays in the ROI camera frame
    assert np.allclose(cond.data[..., :3] @ m.cam_roi.rotation.T, rays, atol=1e-6)
    assert np.allclose(cond.data[31, 31, :3], [0, 0, 1], atol=1e-9)
    assert np.allclose(cond.data[..., 3] * cond.data[..., 4], 1.0, atol=1e-6)


def test_frame_change_identity_and_inverse():
    cam = _src_cam()
    m = build_roi_camera(cam, FaceBox(center=np.array([60.0, 30.0]), size=30.0),
                         out_size=64)
    gs = random_gaussians(11, 16)
    same = gaussians_to_source_frame(gs, cam, cam)
    assert np.allclose(same.means, gs.means, atol=1e-15)
    assert np.allclose(same.quats, gs.quats, atol=1e-15)
    fwd = gaussians_to_source_frame(gs, m.cam_roi, cam)
    back = gaussians_to_source_frame(fwd, cam, m.cam_roi)
    assert np.allclose(back.means, gs.means, atol=1e-12)
    assert np.allclose(np.abs(np.sum(back.quats * gs.quats, axis=1)), 1.0,
                       atol=1e-12)
    assert np.allclose(back.scales, gs.scales, atol=1e-12)


def test_frame_change_requires_shared_center():
    cam = _src_cam()
    moved = Camera(rotation=np.eye(3), center=np.array([0.1, 0.0, 0.0]),
                   focal=80.0, principal_point=np.array([48.0, 32.0]),
                   width=96, height=64)
    with pytest.raises(CameraCenterMismatch):
        gaussians_to_source_frame(random_gaussians(1, 2), cam, moved)
