"""Image quality metrics, temporal-stability measurement, and geometry views.

psnr/ssim follow the usual conventions (peak 1.0; 11x11 Gaussian window with
sigma 1.5 for SSIM). The jitter metric compares temporal differences of
rendered frames against temporal differences of ground truth, so any static
reconstruction error cancels and only flicker is measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera, GaussianSet, Image
from .errors import DimensionMismatch, EmptyMask, ShapeMismatch
from .losses import composite_over_background
from .rasterizer import render
from .splatter import SplatterImage
from .synthgen import background_color
from .training import FitConfig, perturb_face_box, pipeline_render

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10
GRAY = np.array([0.299, 0.587, 0.114])
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _rgb(x) -> np.ndarray:
    a = x.as_f64() if hasattr(x, "as_f64") else np.asarray(x, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] < 3:
        raise DimensionMismatch(f"expected an RGB image, got shape {a.shape}")
    return a[:, :, :3]


def psnr(X, Y, mask: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) over (optionally masked) pixels, capped at 99 dB."""
    x, y = _rgb(X), _rgb(Y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes {x.shape} vs {y.shape}")
    se = (x - y) ** 2
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if not m.any():
            raise EmptyMask("PSNR mask selects no pixels")
        se = se[m]
    mse = float(np.mean(se))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1D kernel along both axes."""
    n = k.size
    out = img
    for axis in (0, 1):
        m = out.shape[axis] - n + 1
        acc = np.zeros(out.shape[:axis] + (m,) + out.shape[axis + 1:])
        for t in range(n):
            acc += k[t] * np.take(out, np.arange(t, t + m), axis=axis)
        out = acc
    return out


def ssim(X, Y) -> float:
    """Mean structural similarity on the luma plane, valid-window mode."""
    x, y = _rgb(X), _rgb(Y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes {x.shape} vs {y.shape}")
    gx = x @ GRAY
    gy = y @ GRAY
    k = _gaussian_window()
    if gx.shape[0] < k.size or gx.shape[1] < k.size:
        raise DimensionMismatch("image smaller than the SSIM window")
    mu_x = _filter_valid(gx, k)
    mu_y = _filter_valid(gy, k)
    var_x = _filter_valid(gx * gx, k) - mu_x ** 2
    var_y = _filter_valid(gy * gy, k) - mu_y ** 2
    cov = _filter_valid(gx * gy, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def jitter_metric(frames_gt, frames_rd) -> float:
    """Flicker score: how much render motion disagrees with GT motion.

    frames_gt/frames_rd are per-view lists of per-frame images. For each
    consecutive frame pair the residual (I_t - I_{t-1}) - (R_t - R_{t-1}) is
    reduced to its mean per-pixel 3-vector norm; the result averages over
    frame pairs and views. Static offsets between render and GT cancel.
    """
    if len(frames_gt) != len(frames_rd) or not frames_gt:
        raise ShapeMismatch(f"{len(frames_gt)} GT views vs {len(frames_rd)}")
    acc = []
    for seq_gt, seq_rd in zip(frames_gt, frames_rd):
        if len(seq_gt) != len(seq_rd) or len(seq_gt) < 2:
            raise ShapeMismatch("need two aligned frames per view")
        for t in range(1, len(seq_gt)):
            di = _rgb(seq_gt[t]) - _rgb(seq_gt[t - 1])
            dr = _rgb(seq_rd[t]) - _rgb(seq_rd[t - 1])
            if di.shape != dr.shape:
                raise ShapeMismatch(f"frame shapes {di.shape} vs {dr.shape}")
            acc.append(np.mean(np.linalg.norm(di - dr, axis=2)))
    return float(np.mean(acc))


def _cdiff(arr: np.ndarray, axis: int) -> np.ndarray:
    """Central differences, degrading to one-sided at the borders."""
    idx = np.arange(arr.shape[axis])
    lo = np.take(arr, np.clip(idx - 1, 0, None), axis=axis)
    hi = np.take(arr, np.clip(idx + 1, None, arr.shape[axis] - 1), axis=axis)
    return hi - lo


def geometry_normals(gs: GaussianSet, cam: Camera):
    """Camera-frame normals and alpha from the 1.5x-inflated depth render."""
    inflated = GaussianSet(
        means=gs.means.copy(), quats=gs.quats.copy(), scales=1.5 * gs.scales,
        opacities=gs.opacities.copy(), colors=gs.colors.copy(),
    )
    out = render(inflated, cam)
    depth = out.depth_norm.as_f64()[:, :, 0]
    alpha = out.alpha.as_f64()[:, :, 0]
    H, W = depth.shape
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64),
                         np.arange(H, dtype=np.float64))
    x = (jj + 0.5 - cam.principal_point[0]) / cam.focal
    y = (ii + 0.5 - cam.principal_point[1]) / cam.focal
    pts = np.stack([x * depth, y * depth, depth], axis=-1)
    n = np.cross(_cdiff(pts, 1), _cdiff(pts, 0))
    norm = np.linalg.norm(n, axis=2, keepdims=True)
    n = np.where(norm > 1e-12, n / np.maximum(norm, 1e-12), 0.0)
    n = np.where(n[..., 2:3] > 0, -n, n)  # face the camera (-z is toward it)
    return n, alpha


def geometry_render(gs: GaussianSet, cam: Camera) -> Image:
    """Shaded normal visualization of the splat geometry.

    Renders depth with scales inflated 1.5x, unprojects the depth map to a
    camera-frame point grid, takes central-difference surface normals, and
    shades with clamp(0.35*m + 0.65*m^2) where m is the toward-camera normal
    component. Output is premultiplied RGBA using the inflated render alpha.
    """
    n, alpha = geometry_normals(gs, cam)
    m = np.clip(-n[..., 2], 0.0, 1.0)
    shade = np.clip(0.35 * m + 0.65 * m * m, 0.0, 1.0)
    shade = np.where(alpha > 0, shade, 0.0)
    rgba = np.stack([shade * alpha, shade * alpha, shade * alpha, alpha], axis=-1)
    return Image(rgba.astype(np.float32))


@dataclass
class MetricsReport:
    view_psnr: list
    view_ssim: list
    mean_psnr: float
    mean_ssim: float
    input_psnr: float
    heldout_psnr: float
    jitter: float
    config: dict = field(default_factory=dict)
    renders: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "view_psnr": [float(v) for v in self.view_psnr],
            "view_ssim": [float(v) for v in self.view_ssim],
            "mean_psnr": float(self.mean_psnr),
            "mean_ssim": float(self.mean_ssim),
            "input_psnr": float(self.input_psnr),
            "heldout_psnr": float(self.heldout_psnr),
            "jitter": float(self.jitter),
            "config": self.config,
            "renders": list(self.renders),
        }


def jitter_eval(sample, sp: SplatterImage, cfg: FitConfig,
                n_frames: int = 4) -> float:
    """Temporal-stability protocol: re-run the pipeline with a freshly
    perturbed face box per frame (static scene, static cameras) and measure
    render flicker against the static ground truth."""
    bg = background_color(sample.bg_seed)
    gts = [composite_over_background(r, bg) for r in sample.all_rgba()]
    n_views = len(gts)
    frames_rd = [[] for _ in range(n_views)]
    frames_gt = [[] for _ in range(n_views)]
    for t in range(n_frames):
        box = perturb_face_box(sample.box, cfg.perturb_magnitude,
                               seed=int((cfg.seed * 9176 + 900 + t) % (2 ** 31)))
        _, views = pipeline_render(sample, sp, cfg, box=box)
        for v in range(n_views):
            frames_rd[v].append(views[v])
            frames_gt[v].append(gts[v])
    return jitter_metric(frames_gt, frames_rd)


def evaluate_fit(sample, sp: SplatterImage, cfg: FitConfig,
                 n_jitter_frames: int = 4) -> MetricsReport:
    """Full quality report for a fitted grid on its sample."""
    _, views = pipeline_render(sample, sp, cfg)
    bg = background_color(sample.bg_seed)
    gts = [composite_over_background(r, bg) for r in sample.all_rgba()]
    view_psnr = [psnr(views[v], gts[v]) for v in range(len(gts))]
    view_ssim = [ssim(views[v], gts[v]) for v in range(len(gts))]
    jit = jitter_eval(sample, sp, cfg, n_frames=n_jitter_frames)
    return MetricsReport(
        view_psnr=view_psnr, view_ssim=view_ssim,
        mean_psnr=float(np.mean(view_psnr)), mean_ssim=float(np.mean(view_ssim)),
        input_psnr=float(view_psnr[0]),
        heldout_psnr=float(np.mean(view_psnr[1:])) if len(view_psnr) > 1 else float("nan"),
        jitter=jit,
        config={"K": cfg.K, "grid_size": cfg.grid_size,
                "iterations": cfg.iterations,
                "jitter_pairing": cfg.jitter_pairing,
                "perceptual_note": "L_p is a Gaussian-pyramid L1 surrogate"},
    )
