"""The splatter-image representation.

A splatter image is an H x W x K x 15 grid of raw parameters, K Gaussians
per pixel. Decoding maps raw channels through bounded activations and places
each Gaussian along its pixel's camera ray:

    channel 0      depth_raw     z = z_near + z_range * sigmoid(.)
    channels 1:4   offset_raw    offset = offset_bound * tanh(.), camera frame
    channels 4:8   quat_raw      normalized (zero norm decodes to identity)
    channels 8:11  logscale_raw  scales = exp(clamp(., min, max))
    channel 11     opacity_raw   sigmoid
    channels 12:15 color_raw     sigmoid

Decode is differentiable; decode_backward chains Gaussian-parameter
gradients back to the raw grid. direct_color_sample optionally replaces the
decoded color with a bilinear sample of the input image where the Gaussian
reprojects, blended by color_mix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .core import Camera, GaussianSet, Image, camera_rays_grid, rng_for
from .errors import DimensionMismatch, IoError

RAW_CHANNELS = 15
BLOB_VERSION = 1


@dataclass
class DecodeConfig:
    """Activation ranges for decoding a raw grid."""

    z_near: float = 0.15
    z_range: float = 1.5
    offset_bound: float = 0.1
    logscale_min: float = float(np.log(1e-4))
    logscale_max: float = float(np.log(0.05))
    color_mix: float = 0.5

    def __post_init__(self):
        if self.z_near <= 0 or self.z_range <= 0 or self.offset_bound < 0:
            raise ValueError("invalid decode ranges")
        if self.logscale_min >= self.logscale_max:
            raise ValueError("logscale_min must be < logscale_max")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "DecodeConfig":
        return DecodeConfig(**d)


@dataclass
class SplatterImage:
    """Raw parameter grid, shape (H, W, K, 15), float64."""

    raw: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.raw, dtype=np.float64)
        if a.ndim != 4 or a.shape[3] != RAW_CHANNELS or a.shape[2] < 1:
            raise DimensionMismatch(f"raw grid must be (H, W, K>=1, {RAW_CHANNELS}), got {a.shape}")
        self.raw = np.ascontiguousarray(a)

    @property
    def height(self) -> int:
        return self.raw.shape[0]

    @property
    def width(self) -> int:
        return self.raw.shape[1]

    @property
    def layers(self) -> int:
        return self.raw.shape[2]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))  # stable for large |x|


@dataclass
class DecodeCache:
    """Forward intermediates for decode_backward (grid shapes)."""

    cam: Camera
    cfg: DecodeConfig
    rays: np.ndarray
    sig_d: np.ndarray
    tanh_o: np.ndarray
    qhat: np.ndarray
    qnorm: np.ndarray
    scales: np.ndarray
    inbounds: np.ndarray
    opacity: np.ndarray
    color: np.ndarray


def decode(sp: SplatterImage, cam_roi: Camera, cfg: DecodeConfig,
           return_cache: bool = False):
    """Decode the raw grid into a GaussianSet in world coordinates.

    Gaussian order is row-major by pixel, layer-minor: index (i*W + j)*K + k.
    """
    H, W, K = sp.height, sp.width, sp.layers
    if cam_roi.width != W or cam_roi.height != H:
        raise DimensionMismatch(
            f"camera is {cam_roi.width}x{cam_roi.height}, grid is {W}x{H}")
    raw = sp.raw
    rays = camera_rays_grid(cam_roi)  # (H, W, 3) world frame

    sig_d = _sigmoid(raw[..., 0])
    z = cfg.z_near + cfg.z_range * sig_d  # (H, W, K)
    tanh_o = np.tanh(raw[..., 1:4])
    off_local = cfg.offset_bound * tanh_o
    off_world = off_local @ cam_roi.rotation.T
    means = cam_roi.center + z[..., None] * rays[:, :, None, :] + off_world

    q_raw = raw[..., 4:8]
    qnorm = np.linalg.norm(q_raw, axis=-1)
    safe = np.where(qnorm == 0.0, 1.0, qnorm)
    qhat = q_raw / safe[..., None]
    identity = np.zeros_like(qhat)
    identity[..., 0] = 1.0
    qhat = np.where(qnorm[..., None] == 0.0, identity, qhat)

    ls = raw[..., 8:11]
    inbounds = (ls > cfg.logscale_min) & (ls < cfg.logscale_max)
    scales = np.exp(np.clip(ls, cfg.logscale_min, cfg.logscale_max))
    opacity = _sigmoid(raw[..., 11])
    color = _sigmoid(raw[..., 12:15])

    gs = GaussianSet(
        means=means.reshape(-1, 3),
        quats=qhat.reshape(-1, 4),
        scales=scales.reshape(-1, 3),
        opacities=opacity.reshape(-1),
        colors=color.reshape(-1, 3),
    )
    if not return_cache:
        return gs
    cache = DecodeCache(
        cam=cam_roi, cfg=cfg, rays=rays, sig_d=sig_d, tanh_o=tanh_o,
        qhat=qhat, qnorm=qnorm, scales=scales, inbounds=inbounds,
        opacity=opacity, color=color,
    )
    return gs, cache


def decode_backward(cache: DecodeCache, grads: dict) -> np.ndarray:
    """Chain GaussianSet gradients back to the raw grid; returns (H, W, K, 15)."""
    H, W, _ = cache.rays.shape
    K = cache.sig_d.shape[2]
    cfg = cache.cfg
    g_means = grads["means"].reshape(H, W, K, 3)
    g_quats = grads["quats"].reshape(H, W, K, 4)
    g_scales = grads["scales"].reshape(H, W, K, 3)
    g_op = grads["opacities"].reshape(H, W, K)
    g_col = grads["colors"].reshape(H, W, K, 3)

    g_raw = np.zeros((H, W, K, RAW_CHANNELS))
    g_z = np.einsum("hwkc,hwc->hwk", g_means, cache.rays)
    g_raw[..., 0] = g_z * cfg.z_range * cache.sig_d * (1.0 - cache.sig_d)
    g_local = g_means @ cache.cam.rotation
    g_raw[..., 1:4] = g_local * cfg.offset_bound * (1.0 - cache.tanh_o ** 2)
    dot = np.sum(g_quats * cache.qhat, axis=-1, keepdims=True)
    g_qproj = g_quats - dot * cache.qhat
    safe = np.where(cache.qnorm == 0.0, np.inf, cache.qnorm)
    g_raw[..., 4:8] = g_qproj / safe[..., None]
    g_raw[..., 8:11] = np.where(cache.inbounds, g_scales * cache.scales, 0.0)
    g_raw[..., 11] = g_op * cache.opacity * (1.0 - cache.opacity)
    g_raw[..., 12:15] = g_col * cache.color * (1.0 - cache.color)
    return g_raw


def layer_mean_opacity(cache_or_gs, H: int | None = None, W: int | None = None,
                       K: int | None = None) -> np.ndarray:
    """Per-layer mean decoded opacity, shape (K,)."""
    if isinstance(cache_or_gs, DecodeCache):
        return cache_or_gs.opacity.mean(axis=(0, 1))
    gs = cache_or_gs
    return gs.opacities.reshape(H, W, K).mean(axis=(0, 1))


@dataclass
class ColorSampleCache:
    """Forward intermediates for direct_color_sample backward."""

    cam: Camera
    cfg: DecodeConfig
    image: np.ndarray
    inside: np.ndarray
    p_cam: np.ndarray
    iu: np.ndarray
    iv: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    color_in: np.ndarray


def direct_color_sample(gs: GaussianSet, input_image: Image, cam_roi: Camera,
                        cfg: DecodeConfig, return_cache: bool = False):
    """Blend decoded colors with bilinear samples of the input image.

    Each Gaussian mean is reprojected into cam_roi; when the reprojection has
    positive depth and lands inside the image, the color becomes
    (1 - color_mix) * decoded + color_mix * sample. Behind-camera or
    out-of-frame Gaussians keep their decoded color.
    """
    if input_image.width != cam_roi.width or input_image.height != cam_roi.height:
        raise DimensionMismatch("input image does not match the ROI camera")
    img = input_image.rgb()
    Hh, Ww = img.shape[0], img.shape[1]
    p_cam = (gs.means - cam_roi.center) @ cam_roi.rotation
    z = p_cam[:, 2]
    front = z > 1e-6
    zsafe = np.where(front, z, 1.0)
    px = cam_roi.principal_point[0] + cam_roi.focal * p_cam[:, 0] / zsafe
    py = cam_roi.principal_point[1] + cam_roi.focal * p_cam[:, 1] / zsafe
    u = px - 0.5
    v = py - 0.5
    inside = front & (u >= 0) & (u <= Ww - 1) & (v >= 0) & (v <= Hh - 1)

    iu = np.clip(np.floor(u).astype(np.int64), 0, Ww - 2)
    iv = np.clip(np.floor(v).astype(np.int64), 0, Hh - 2)
    fu = np.where(inside, u - iu, 0.0)
    fv = np.where(inside, v - iv, 0.0)
    c00 = img[iv, iu]
    c01 = img[iv, iu + 1]
    c10 = img[iv + 1, iu]
    c11 = img[iv + 1, iu + 1]
    sample = (
        c00 * ((1 - fu) * (1 - fv))[:, None]
        + c01 * (fu * (1 - fv))[:, None]
        + c10 * ((1 - fu) * fv)[:, None]
        + c11 * (fu * fv)[:, None]
    )
    m = cfg.color_mix
    colors = np.where(inside[:, None], (1.0 - m) * gs.colors + m * sample, gs.colors)
    out = GaussianSet(
        means=gs.means, quats=gs.quats, scales=gs.scales,
        opacities=gs.opacities, colors=colors,
    )
    for memo in ("_rot_memo", "_jq_memo"):
        if memo in gs.__dict__:  # geometry is untouched; share rotation tables
            out.__dict__[memo] = (out.quats, gs.__dict__[memo][1])
    if not return_cache:
        return out
    cache = ColorSampleCache(
        cam=cam_roi, cfg=cfg, image=img, inside=inside, p_cam=p_cam,
        iu=iu, iv=iv, fu=fu, fv=fv, color_in=gs.colors,
    )
    return out, cache


def direct_color_sample_backward(cache: ColorSampleCache, grads_out: dict) -> dict:
    """Adjoint of direct_color_sample.

    Returns gradients w.r.t. the input set's colors and means; other fields
    pass through unchanged (caller reuses grads_out arrays for them).
    """
    cam = cache.cam
    m = cache.cfg.color_mix
    g_col_out = grads_out["colors"]
    inside = cache.inside
    g_col_in = np.where(inside[:, None], (1.0 - m) * g_col_out, g_col_out)

    g_sample = m * g_col_out * inside[:, None]
    img = cache.image
    iu, iv, fu, fv = cache.iu, cache.iv, cache.fu, cache.fv
    c00 = img[iv, iu]
    c01 = img[iv, iu + 1]
    c10 = img[iv + 1, iu]
    c11 = img[iv + 1, iu + 1]
    d_fu = np.sum(g_sample * (
        -c00 * (1 - fv)[:, None] + c01 * (1 - fv)[:, None]
        - c10 * fv[:, None] + c11 * fv[:, None]), axis=1)
    d_fv = np.sum(g_sample * (
        -c00 * (1 - fu)[:, None] - c01 * fu[:, None]
        + c10 * (1 - fu)[:, None] + c11 * fu[:, None]), axis=1)

    p = cache.p_cam
    z = np.where(inside, p[:, 2], 1.0)
    f = cam.focal
    g_x = d_fu * f / z
    g_y = d_fv * f / z
    g_z = -(d_fu * p[:, 0] + d_fv * p[:, 1]) * f / (z * z)
    g_pcam = np.stack([g_x, g_y, g_z], axis=1) * inside[:, None]
    g_means = grads_out["means"] + g_pcam @ cam.rotation.T
    return {
        "means": g_means,
        "quats": grads_out["quats"],
        "scales": grads_out["scales"],
        "opacities": grads_out["opacities"],
        "colors": g_col_in,
    }


def init_params(H: int, W: int, K: int, seed: int,
                focal: float | None = None,
                cfg: DecodeConfig | None = None) -> SplatterImage:
    """Fresh raw grid: mid-depth, on-ray, identity rotation, near-opaque.

    Log-scales start at a roughly one-pixel footprint at mid depth, which
    needs the ROI focal; pass it when known (default: W, the nominal desk
    focal). Only color_raw is randomized (N(0, 0.1^2), given seed).
    """
    cfg = cfg or DecodeConfig()
    f = float(focal) if focal is not None else float(W)
    z_mid = cfg.z_near + 0.5 * cfg.z_range
    ls = float(np.clip(np.log(2.0 * z_mid / f), cfg.logscale_min, cfg.logscale_max))
    raw = np.zeros((H, W, K, RAW_CHANNELS))
    raw[..., 4] = 1.0  # identity quaternion
    raw[..., 8:11] = ls
    raw[..., 11] = 1.0  # sigmoid(1) ~ 0.73
    rng = rng_for(seed, 300)
    raw[..., 12:15] = rng.normal(0.0, 0.1, size=(H, W, K, 3))
    return SplatterImage(raw)


def save_splatter(path: str, sp: SplatterImage, cfg: DecodeConfig) -> None:
    """Binary blob: 16-byte header (H, W, K, version as LE u32) + f32 grid.

    The DecodeConfig rides in a JSON sidecar at path + ".json".
    """
    with open(path, "wb") as f:
        f.write(struct.pack("<4I", sp.height, sp.width, sp.layers, BLOB_VERSION))
        f.write(sp.raw.astype("<f4").tobytes())
    with open(path + ".json", "w") as f:
        json.dump(cfg.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")


def load_splatter(path: str) -> tuple[SplatterImage, DecodeConfig]:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16:
            raise IoError(f"truncated splatter blob: {path}")
        H, W, K, version = struct.unpack("<4I", head)
        if version != BLOB_VERSION:
            raise IoError(f"unsupported splatter blob version {version}")
        data = np.frombuffer(f.read(H * W * K * RAW_CHANNELS * 4), dtype="<f4")
    if data.size != H * W * K * RAW_CHANNELS:
        raise IoError(f"truncated splatter blob: {path}")
    try:
        with open(path + ".json") as f:
            cfg = DecodeConfig.from_json(json.load(f))
    except FileNotFoundError:
        cfg = DecodeConfig()
    return SplatterImage(data.reshape(H, W, K, RAW_CHANNELS).astype(np.float64)), cfg
