"""Face-box driven virtual cameras and homography warping.

A face box in the source image defines a virtual ROI camera that shares the
source optical center but is rotated to look straight at the box center,
with its field of view set so the face spans a third of it. Because the two
cameras share a center, resampling between them is an exact planar
homography; no scene geometry is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianSet, Image, quat_from_rotation, quat_mul
from .errors import (BoxOutsideFrustum, CameraCenterMismatch, DimensionMismatch,
                     SingularCovariance)

CENTER_TOL = 1e-9
DET_MIN = 1e-12


@dataclass
class FaceBox:
    """Square region in source pixels: center (x, y) and side length."""

    center: np.ndarray
    size: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(2)
        self.size = float(self.size)
        if self.size <= 0:
            raise ValueError(f"box size must be positive, got {self.size}")

    def to_json(self) -> dict:
        return {"center": [float(self.center[0]), float(self.center[1])],
                "size": self.size}

    @staticmethod
    def from_json(d: dict) -> "FaceBox":
        return FaceBox(center=np.array(d["center"], dtype=np.float64),
                       size=float(d["size"]))


@dataclass
class RoiMapping:
    """Virtual camera plus the homography taking ROI pixels to source pixels."""

    cam_roi: Camera
    homography: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.homography, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(h)) <= DET_MIN:
            raise SingularCovariance("homography is not invertible")
        self.homography = h

    @property
    def normalized_focal(self) -> float:
        return self.cam_roi.focal / self.cam_roi.width


def _intrinsics_inv(cam: Camera) -> np.ndarray:
    f = cam.focal
    px, py = cam.principal_point
    return np.array([[1.0 / f, 0.0, -px / f],
                     [0.0, 1.0 / f, -py / f],
                     [0.0, 0.0, 1.0]])


def build_roi_camera(cam_src: Camera, box: FaceBox, out_size: int) -> RoiMapping:
    """Virtual camera looking at the box center, FOV = 3x the face angle.

    The ROI rotation points the optical axis along the ray through the box
    center; roll is fixed by keeping the ROI up direction as close to the
    source camera's up as possible (Gram-Schmidt on the source y axis).
    The box center must project inside the source image and the face angle
    must stay under 60 degrees so the tripled FOV is below 180.
    """
    cx, cy = float(box.center[0]), float(box.center[1])
    if not (0.0 <= cx <= cam_src.width and 0.0 <= cy <= cam_src.height):
        raise BoxOutsideFrustum(
            f"box center ({cx:.1f}, {cy:.1f}) outside the {cam_src.width}x"
            f"{cam_src.height} source image")
    theta_face = 2.0 * np.arctan(box.size / (2.0 * cam_src.focal))
    fov = 3.0 * theta_face
    if fov >= np.pi:
        raise BoxOutsideFrustum(
            f"face angle {np.degrees(theta_face):.1f} deg gives FOV >= 180")

    d_cam = np.array([(cx - cam_src.principal_point[0]) / cam_src.focal,
                      (cy - cam_src.principal_point[1]) / cam_src.focal,
                      1.0])
    z_new = cam_src.rotation @ (d_cam / np.linalg.norm(d_cam))
    y_src = cam_src.rotation[:, 1]
    y_new = y_src - np.dot(y_src, z_new) * z_new
    y_new = y_new / np.linalg.norm(y_new)  # never degenerate: d_cam has z > 0
    x_new = np.cross(y_new, z_new)
    r_roi = np.stack([x_new, y_new, z_new], axis=1)

    focal_roi = (out_size / 2.0) / np.tan(fov / 2.0)
    cam_roi = Camera(
        rotation=r_roi, center=cam_src.center.copy(), focal=focal_roi,
        principal_point=np.array([out_size / 2.0, out_size / 2.0]),
        width=out_size, height=out_size,
    )
    k_src = cam_src.intrinsics()
    h = k_src @ cam_src.rotation.T @ r_roi @ _intrinsics_inv(cam_roi)
    return RoiMapping(cam_roi=cam_roi, homography=h)


def warp_image(src: Image, mapping: RoiMapping, out_size: int) -> Image:
    """Resample the source image on the ROI pixel grid; RGBA output.

    Bilinear sampling of homography-mapped pixel centers; anything falling
    outside the source frame contributes transparent black, which downstream
    masks read as not observed.
    """
    data = src.as_f64()
    if data.shape[2] == 3:
        data = np.concatenate([data, np.ones_like(data[:, :, :1])], axis=2)
    elif data.shape[2] != 4:
        raise DimensionMismatch(f"warp needs RGB or RGBA, got {data.shape[2]} channels")
    Hs, Ws = data.shape[0], data.shape[1]

    jj, ii = np.meshgrid(np.arange(out_size), np.arange(out_size))
    pts = np.stack([jj + 0.5, ii + 0.5, np.ones_like(jj, dtype=np.float64)], axis=-1)
    mapped = pts @ mapping.homography.T
    w = mapped[..., 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    u = mapped[..., 0] / w - 0.5
    v = mapped[..., 1] / w - 0.5

    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fu = u - iu
    fv = v - iv
    out = np.zeros((out_size, out_size, 4))
    for du, dv, wt in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                       (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        tu = iu + du
        tv = iv + dv
        ok = (tu >= 0) & (tu < Ws) & (tv >= 0) & (tv < Hs)
        tuc = np.clip(tu, 0, Ws - 1)
        tvc = np.clip(tv, 0, Hs - 1)
        out += np.where(ok[..., None], data[tvc, tuc] * wt[..., None], 0.0)
    return Image(out.astype(np.float32))


def conditioning_channels(mapping: RoiMapping, out_size: int) -> Image:
    """Six-channel grid describing the ROI camera to a per-pixel consumer.

    Channels 0-2: unit ray direction in the ROI camera frame. Channel 3:
    normalized focal f/w; channel 4: its inverse; channel 5: reserved zero.
    """
    cam = mapping.cam_roi
    jj, ii = np.meshgrid(np.arange(out_size), np.arange(out_size))
    x = (jj + 0.5 - cam.principal_point[0]) / cam.focal
    y = (ii + 0.5 - cam.principal_point[1]) / cam.focal
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    nf = mapping.normalized_focal
    out = np.zeros((out_size, out_size, 6), dtype=np.float32)
    out[:, :, 0:3] = d
    out[:, :, 3] = nf
    out[:, :, 4] = 1.0 / nf
    return Image(out)


def gaussians_to_source_frame(gs: GaussianSet, cam_roi: Camera,
                              cam_src: Camera) -> GaussianSet:
    """Re-express Gaussians so the source camera sees what the ROI camera saw.

    Rotates the set about the shared optical center by R_src * R_roi^T, the
    world rotation under which source-camera coordinates of the output equal
    ROI-camera coordinates of the input. Scales, opacities, and colors are
    untouched.
    """
    if np.linalg.norm(cam_roi.center - cam_src.center) > CENTER_TOL:
        raise CameraCenterMismatch(
            "cameras must share an optical center for a pure-rotation remap")
    r_rel = cam_src.rotation @ cam_roi.rotation.T
    q_rel = quat_from_rotation(r_rel)
    means = cam_src.center + (gs.means - cam_src.center) @ r_rel.T
    quats = quat_mul(q_rel[None, :], gs.quats)
    return GaussianSet(
        means=means, quats=quats, scales=gs.scales.copy(),
        opacities=gs.opacities.copy(), colors=gs.colors.copy(),
    )
