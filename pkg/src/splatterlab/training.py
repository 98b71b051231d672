"""Scale-corrected direct fitting of a splatter image to one sample.

One fit iteration mirrors the four-step loop: build the ROI mapping from
the face box, decode the raw grid (plus direct color sampling from the
warped input), render depth in the input view and solve the global scale,
apply the scale about the input camera center, then render every view over
the sample's random background and take a gradient step on the total loss.

With jitter pairing on, a second "twin" runs the same raw grid through a
perturbed face box each iteration; the jitter loss penalizes differences
between the twins' renders, and all other terms average over both twins.

Everything is deterministic in FitConfig.seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GaussianSet, rng_for
from .errors import EmptyOverlap, NonFiniteLoss
from .losses import (LossWeights, composite_backward, composite_over_background,
                     loss_euclidean_rgb, loss_euclidean_rgb_backward,
                     loss_jitter, loss_jitter_backward, loss_opacity_bias,
                     loss_opacity_bias_backward, loss_opacity_mean,
                     loss_opacity_mean_backward, loss_perceptual_surrogate,
                     loss_perceptual_surrogate_backward, loss_scale_reg,
                     loss_scale_reg_backward, total_loss)
from .rasterizer import render, render_backward
from .roi import FaceBox, build_roi_camera, warp_image
from .splatter import (DecodeConfig, SplatterImage, decode, decode_backward,
                       direct_color_sample, direct_color_sample_backward,
                       init_params, layer_mean_opacity)
from .synthgen import MultiViewSample, background_color

ALPHA_THRESHOLD = 0.5  # rendered-depth mask cut for the overlap region


@dataclass
class ScaleCorrection:
    s: float
    pivot: np.ndarray
    overlap_count: int

    def __post_init__(self):
        self.pivot = np.asarray(self.pivot, dtype=np.float64).reshape(3)
        if self.s <= 0:
            raise ValueError(f"scale must be positive, got {self.s}")


@dataclass
class ScaleSolveCache:
    mask: np.ndarray
    depth_pred: np.ndarray
    depth_gt: np.ndarray
    num: float
    den: float


def _plane(x) -> np.ndarray:
    a = x.as_f64() if hasattr(x, "as_f64") else np.asarray(x, dtype=np.float64)
    if a.ndim == 3:
        a = a[:, :, 0]
    return a


def solve_scale(depth_pred, alpha_pred, depth_gt, mask_gt,
                pivot: np.ndarray | None = None, return_cache: bool = False):
    """Least-squares global depth scale on the overlap region.

    Minimizes sum over M of (s * d_pred - d_gt)^2 where M is the pixels both
    the render (alpha > 0.5) and the ground truth mask claim; the closed form
    is s = sum(d_pred * d_gt) / sum(d_pred^2).
    """
    dp = _plane(depth_pred)
    ap = _plane(alpha_pred)
    dg = _plane(depth_gt)
    mg = _plane(mask_gt)
    if not (dp.shape == ap.shape == dg.shape == mg.shape):
        raise EmptyOverlap(f"shape mismatch: {dp.shape} vs {dg.shape}")
    m = (ap > ALPHA_THRESHOLD) & (mg > 0.5)
    count = int(np.count_nonzero(m))
    if count == 0:
        raise EmptyOverlap("render and ground-truth masks do not overlap")
    num = float(np.sum(dp[m] * dg[m]))
    den = float(np.sum(dp[m] ** 2))
    if den <= 1e-30 or num <= 0:
        raise EmptyOverlap("overlap region carries no usable depth")
    corr = ScaleCorrection(s=num / den,
                           pivot=np.zeros(3) if pivot is None else pivot,
                           overlap_count=count)
    if not return_cache:
        return corr
    return corr, ScaleSolveCache(mask=m, depth_pred=dp, depth_gt=dg,
                                 num=num, den=den)


def solve_scale_backward(cache: ScaleSolveCache, g_s: float) -> np.ndarray:
    """d s / d depth_pred, scaled by the incoming adjoint g_s."""
    m = cache.mask
    out = np.zeros_like(cache.depth_pred)
    out[m] = g_s * (cache.depth_gt[m] * cache.den
                    - 2.0 * cache.depth_pred[m] * cache.num) / cache.den ** 2
    return out


def apply_scale(gs: GaussianSet, corr: ScaleCorrection) -> GaussianSet:
    """Scale the set about the pivot: means and scales multiply by s.

    Seen from a camera at the pivot, projected footprints are unchanged
    (the projection Jacobian shrinks exactly as the covariance grows) while
    every depth multiplies by s; that invariance is what lets a depth-only
    measurement fix the global scale without disturbing the image.
    """
    out = GaussianSet(
        means=corr.pivot + corr.s * (gs.means - corr.pivot),
        quats=gs.quats,
        scales=corr.s * gs.scales,
        opacities=gs.opacities.copy(),
        colors=gs.colors.copy(),
    )
    for memo in ("_rot_memo", "_jq_memo"):
        if memo in gs.__dict__:  # quats are shared, so rotation tables are too
            out.__dict__[memo] = (out.quats, gs.__dict__[memo][1])
    return out


def apply_scale_backward(gs: GaussianSet, corr: ScaleCorrection, grads_out: dict):
    """Returns (grads w.r.t. the unscaled set, d loss / d s)."""
    g_s = (float(np.sum(grads_out["means"] * (gs.means - corr.pivot)))
           + float(np.sum(grads_out["scales"] * gs.scales)))
    grads_in = {
        "means": corr.s * grads_out["means"],
        "quats": grads_out["quats"],
        "scales": corr.s * grads_out["scales"],
        "opacities": grads_out["opacities"],
        "colors": grads_out["colors"],
    }
    return grads_in, g_s


def perturb_face_box(box: FaceBox, magnitude: float, seed: int) -> FaceBox:
    """Jittered box: center shifts by +/-magnitude*size, size by 1+/-magnitude."""
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    rng = rng_for(seed, 400)
    offset = rng.uniform(-magnitude, magnitude, size=2) * box.size
    factor = 1.0 + rng.uniform(-magnitude, magnitude)
    return FaceBox(center=box.center + offset, size=box.size * factor)


@dataclass
class FitConfig:
    iterations: int = 2000
    lr: float = 1e-2
    lr_end: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    K: int = 2
    grid_size: int = 64
    jitter_pairing: bool = True
    perturb_magnitude: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0 or self.lr_end <= 0:
            raise ValueError("step sizes must be positive")


def cosine_lr(iteration: int, cfg: FitConfig) -> float:
    if cfg.iterations <= 1:
        return cfg.lr
    t = iteration / (cfg.iterations - 1)
    return cfg.lr_end + (cfg.lr - cfg.lr_end) * 0.5 * (1.0 + np.cos(np.pi * t))


def _perturb_seed(cfg_seed: int, iteration: int) -> int:
    return int((cfg_seed * 2654435761 + iteration) % (2 ** 31))


@dataclass
class TwinRecord:
    mapping: object
    warped: object
    dcache: object
    ccache: object
    rcache_in: object
    scache: object | None
    corr: ScaleCorrection
    gs_sampled: GaussianSet
    gs_scaled: GaussianSet
    vcaches: list
    views: list  # composited (H, W, 3) float64 renders


class FitGraph:
    """Differentiable forward/backward of one full fit iteration.

    Shared by the optimizer loop and the end-to-end gradient checks, so the
    finite-difference probe exercises exactly the production path.
    """

    def __init__(self, sample: MultiViewSample, cfg: FitConfig):
        self.sample = sample
        self.cfg = cfg
        self.bg = background_color(sample.bg_seed)
        self.mapping0 = build_roi_camera(sample.input_cam, sample.box,
                                         cfg.grid_size)
        self.warped0 = warp_image(sample.input_rgba, self.mapping0,
                                  cfg.grid_size)
        self.cams = sample.all_cams()
        self.gts = [composite_over_background(r, self.bg)
                    for r in sample.all_rgba()]
        self.depth_gt = sample.input_depth
        self.mask_gt = sample.input_mask

    def _twin_inputs(self, iteration: int) -> list:
        twins = [(self.mapping0, self.warped0)]
        if self.cfg.jitter_pairing:
            box = perturb_face_box(self.sample.box, self.cfg.perturb_magnitude,
                                   _perturb_seed(self.cfg.seed, iteration))
            mapping = build_roi_camera(self.sample.input_cam, box,
                                       self.cfg.grid_size)
            twins.append((mapping, warp_image(self.sample.input_rgba, mapping,
                                              self.cfg.grid_size)))
        return twins

    def _twin_forward(self, sp: SplatterImage, mapping, warped) -> TwinRecord:
        gs0, dcache = decode(sp, mapping.cam_roi, self.cfg.decode,
                             return_cache=True)
        gs1, ccache = direct_color_sample(gs0, warped, mapping.cam_roi,
                                          self.cfg.decode, return_cache=True)
        ro_in, rcache_in = render(gs1, self.sample.input_cam, return_cache=True)
        scache = None
        try:
            corr, scache = solve_scale(
                rcache_in.depth_norm64, rcache_in.alpha64,
                self.depth_gt, self.mask_gt,
                pivot=self.sample.input_cam.center, return_cache=True)
        except EmptyOverlap:
            corr = ScaleCorrection(s=1.0, pivot=self.sample.input_cam.center,
                                   overlap_count=0)
        gs2 = apply_scale(gs1, corr)
        vcaches, views = [], []
        for cam in self.cams:
            _, rc = render(gs2, cam, return_cache=True)
            vcaches.append(rc)
            views.append(composite_over_background(
                np.concatenate([rc.color64, rc.alpha64[..., None]], axis=2),
                self.bg))
        return TwinRecord(mapping=mapping, warped=warped, dcache=dcache,
                          ccache=ccache, rcache_in=rcache_in, scache=scache,
                          corr=corr, gs_sampled=gs1, gs_scaled=gs2,
                          vcaches=vcaches, views=views)

    def forward(self, sp: SplatterImage, iteration: int):
        """Returns (LossBreakdown, cache-of-twins for backward)."""
        twins = [self._twin_forward(sp, m, w)
                 for m, w in self._twin_inputs(iteration)]
        n_views = len(self.cams)
        L_e = np.mean([[loss_euclidean_rgb(t.views[v], self.gts[v])
                        for v in range(n_views)] for t in twins])
        L_p = np.mean([[loss_perceptual_surrogate(t.views[v], self.gts[v])
                        for v in range(n_views)] for t in twins])
        sigma_bar = layer_mean_opacity(twins[0].dcache)
        L_m = loss_opacity_mean(sigma_bar, self.cfg.weights.tau)
        L_sig = loss_opacity_bias(sigma_bar)
        L_c = float(np.mean([loss_scale_reg(t.corr.s) if t.scache is not None
                             else 0.0 for t in twins]))
        L_j = (loss_jitter(twins[0].views, twins[1].views)
               if len(twins) == 2 else 0.0)
        bd = total_loss({"L_e": L_e, "L_p": L_p, "L_m": L_m, "L_sigma": L_sig,
                         "L_c": L_c, "L_j": L_j}, self.cfg.weights)
        return bd, twins

    def backward(self, twins: list) -> np.ndarray:
        """Gradient of the total loss w.r.t. the raw grid."""
        cfg = self.cfg
        w = cfg.weights
        n_views = len(self.cams)
        n_twins = len(twins)
        wt = 1.0 / (n_twins * n_views)
        jitter_g = (loss_jitter_backward(twins[0].views, twins[1].views,
                                         g=w.lambda_j)
                    if n_twins == 2 and w.lambda_j > 0 else None)
        g_raw = np.zeros((cfg.grid_size, cfg.grid_size, cfg.K, 15))
        sigma_bar = layer_mean_opacity(twins[0].dcache)
        g_sigma_bar = (w.lambda_m * loss_opacity_mean_backward(sigma_bar, w.tau)
                       + w.lambda_sigma * loss_opacity_bias_backward(sigma_bar))

        for ti, twin in enumerate(twins):
            grads2 = {"means": np.zeros_like(twin.gs_scaled.means),
                      "quats": np.zeros_like(twin.gs_scaled.quats),
                      "scales": np.zeros_like(twin.gs_scaled.scales),
                      "opacities": np.zeros_like(twin.gs_scaled.opacities),
                      "colors": np.zeros_like(twin.gs_scaled.colors)}
            for v in range(n_views):
                d_img = wt * loss_euclidean_rgb_backward(twin.views[v], self.gts[v])
                d_img += wt * w.lambda_p * loss_perceptual_surrogate_backward(
                    twin.views[v], self.gts[v])
                if jitter_g is not None:
                    d_img = d_img + (jitter_g[v] if ti == 0 else -jitter_g[v])
                d_color, d_alpha = composite_backward(d_img, self.bg)
                g = render_backward(twin.gs_scaled, self.cams[v],
                                    d_color=d_color, d_alpha=d_alpha,
                                    cache=twin.vcaches[v], accumulate=False)
                for k in grads2:
                    grads2[k] += g[k]
            grads1, g_s = apply_scale_backward(twin.gs_sampled, twin.corr, grads2)
            if twin.scache is not None:
                g_s += (w.lambda_c / n_twins) * loss_scale_reg_backward(twin.corr.s)
                d_dn = solve_scale_backward(twin.scache, g_s)
                g = render_backward(twin.gs_sampled, self.sample.input_cam,
                                    d_depth_norm=d_dn, cache=twin.rcache_in,
                                    accumulate=False)
                for k in grads1:
                    grads1[k] += g[k]
            if ti == 0:
                opac_extra = np.tile(g_sigma_bar / (cfg.grid_size ** 2),
                                     cfg.grid_size ** 2)
                grads1["opacities"] = grads1["opacities"] + opac_extra
            grads0 = direct_color_sample_backward(twin.ccache, grads1)
            g_raw += decode_backward(twin.dcache, grads0)
        return g_raw


def fit(sample: MultiViewSample, cfg: FitConfig, callback=None):
    """Optimize a raw grid against one sample.

    Returns (fitted SplatterImage, list of per-iteration LossBreakdowns,
    final scaled GaussianSet from the unperturbed box).
    """
    graph = FitGraph(sample, cfg)
    sp = init_params(cfg.grid_size, cfg.grid_size, cfg.K, cfg.seed,
                     focal=graph.mapping0.cam_roi.focal, cfg=cfg.decode)
    m = np.zeros_like(sp.raw)
    v = np.zeros_like(sp.raw)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    trace = []
    for it in range(cfg.iterations):
        try:
            bd, twins = graph.forward(sp, it)
        except NonFiniteLoss as e:
            raise NonFiniteLoss(f"iteration {it}: {e}") from e
        g = graph.backward(twins)
        lr = cosine_lr(it, cfg)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** (it + 1))
        vhat = v / (1.0 - beta2 ** (it + 1))
        sp = SplatterImage(sp.raw - lr * mhat / (np.sqrt(vhat) + eps))
        trace.append(bd)
        if callback is not None:
            callback(it, bd)
    bd, twins = graph.forward(sp, cfg.iterations)
    return sp, trace, twins[0].gs_scaled


def pipeline_render(sample: MultiViewSample, sp: SplatterImage, cfg: FitConfig,
                    box: FaceBox | None = None):
    """One non-differentiated pass of the fit pipeline for a given box.

    Returns (scaled GaussianSet, list of composited (H, W, 3) view renders
    in sample view order). Used for evaluation and novel-view rendering.
    """
    graph = FitGraph(sample, cfg)
    if box is None:
        twin = graph._twin_forward(sp, graph.mapping0, graph.warped0)
    else:
        mapping = build_roi_camera(sample.input_cam, box, cfg.grid_size)
        warped = warp_image(sample.input_rgba, mapping, cfg.grid_size)
        twin = graph._twin_forward(sp, mapping, warped)
    return twin.gs_scaled, twin.views
