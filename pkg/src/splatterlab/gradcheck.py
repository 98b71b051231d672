"""Finite-difference verification of every analytic gradient.

The renderer and losses are piecewise smooth: contribution cutoffs, alpha
caps, L1 signs, clamp bounds, and mask thresholds all switch branches on
small input changes. A central difference straddling such a switch measures
nothing useful, so each probe records a branch indicator (contribution
counts, masks, signs) at both probe points and only accepts steps where the
indicator matches the base point; on a mismatch the step is shrunk (h, h/8,
h/64) before the coordinate is abandoned. A coordinate passes if any
indicator-stable step agrees with the analytic gradient within tolerance;
a case with no checkable coordinate is redrawn. Failures are never masked:
an indicator-stable disagreement fails the suite.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianSet, Image, rng_for
from .errors import EmptyOverlap
from .losses import (composite_backward, composite_over_background,
                     loss_euclidean_rgb, loss_euclidean_rgb_backward,
                     loss_jitter, loss_jitter_backward, loss_opacity_bias,
                     loss_opacity_bias_backward, loss_opacity_mean,
                     loss_opacity_mean_backward, loss_perceptual_surrogate,
                     loss_perceptual_surrogate_backward, loss_scale_reg,
                     loss_scale_reg_backward, pyr_down)
from .rasterizer import render, render_backward, render_reference
from .splatter import (DecodeConfig, SplatterImage, decode, decode_backward,
                       direct_color_sample, direct_color_sample_backward,
                       init_params)
from .training import (FitConfig, FitGraph, apply_scale, apply_scale_backward,
                       ScaleCorrection, solve_scale, solve_scale_backward)

H_LEVELS = (1.0, 1.0 / 8.0, 1.0 / 64.0)
MAX_REDRAWS = 5


@dataclass
class SuiteResult:
    name: str
    cases: int
    failed: int
    skipped_coords: int
    checked_coords: int
    max_err: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.checked_coords > 0


def _digest(*arrays) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.digest()


def _tol(g: float, fd: float, rtol: float, atol: float) -> float:
    return max(atol, rtol * max(abs(g), abs(fd)))


def check_case(f, x0: np.ndarray, grad: np.ndarray, coords, h0: float,
               rtol: float, atol: float):
    """Verify grad[i] against indicator-guarded central differences.

    f maps a flat parameter vector to (scalar, indicator bytes). Returns
    (n_failed, n_checked, n_skipped, max_err).
    """
    _, ind0 = f(x0)
    failed = checked = skipped = 0
    max_err = 0.0
    for i in coords:
        best = None
        passed = False
        for hs in H_LEVELS:
            h = h0 * hs
            xp = x0.copy()
            xp[i] += h
            vp, indp = f(xp)
            xm = x0.copy()
            xm[i] -= h
            vm, indm = f(xm)
            if indp != ind0 or indm != ind0:
                continue
            fd = (vp - vm) / (2.0 * h)
            err = abs(grad[i] - fd)
            best = err if best is None else min(best, err)
            if err <= _tol(grad[i], fd, rtol, atol):
                passed = True
                break
        if best is None:
            skipped += 1
        elif passed:
            checked += 1
            max_err = max(max_err, best)
        else:
            failed += 1
            max_err = max(max_err, best)
    return failed, checked, skipped, max_err


def _run_suite(name: str, make_case, cases: int, rtol: float, atol: float,
               seed: int) -> SuiteResult:
    """make_case(case_seed) -> (f, x0, grad, coords, h0) or None to redraw."""
    t0 = time.perf_counter()
    failed = checked = skipped = 0
    max_err = 0.0
    for c in range(cases):
        for attempt in range(MAX_REDRAWS):
            built = make_case(seed + 7919 * c + 1000003 * attempt)
            if built is None:
                continue
            f, x0, grad, coords, h0 = built
            nf, nc, ns, me = check_case(f, x0, grad, coords, h0, rtol, atol)
            if nc == 0 and nf == 0:
                continue  # every coordinate straddled a branch: redraw
            failed += nf
            checked += nc
            skipped += ns
            max_err = max(max_err, me)
            break
        else:
            failed += 1  # could not build a checkable case
    return SuiteResult(name=name, cases=cases, failed=failed,
                       skipped_coords=skipped, checked_coords=checked,
                       max_err=max_err, seconds=time.perf_counter() - t0)


def _pick(rng, n_dims: int, k: int) -> np.ndarray:
    k = min(k, n_dims)
    return rng.choice(n_dims, size=k, replace=False)


# --- rasterizer -------------------------------------------------------------

def _random_camera(rng, w: int = 12, h: int = 12) -> Camera:
    from .core import lookat_rotation
    eye = rng.normal(0.0, 0.2, size=3)
    target = np.array([0.0, 0.0, 1.5]) + rng.normal(0.0, 0.1, size=3)
    return Camera(rotation=lookat_rotation(eye, target), center=eye,
                  focal=float(rng.uniform(8.0, 14.0)),
                  principal_point=np.array([w / 2.0, h / 2.0]),
                  width=w, height=h)


def _random_set(rng, n: int) -> GaussianSet:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(0.2, 0.95, size=n)
    hard = rng.random(n) < 0.1
    opac[hard] = 1.0  # exercise the alpha cap branch
    return GaussianSet(
        means=np.column_stack([rng.normal(0.0, 0.35, size=(n, 2)),
                               rng.uniform(0.8, 2.2, size=n)]),
        quats=q,
        scales=rng.uniform(0.05, 0.3, size=(n, 3)),
        opacities=opac,
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
    )


def _flatten_set(gs: GaussianSet) -> np.ndarray:
    return np.concatenate([gs.means.ravel(), gs.quats.ravel(),
                           gs.scales.ravel(), gs.opacities.ravel(),
                           gs.colors.ravel()])


def _unflatten_set(x: np.ndarray, n: int) -> GaussianSet:
    o = 0
    means = x[o:o + 3 * n].reshape(n, 3); o += 3 * n
    quats = x[o:o + 4 * n].reshape(n, 4); o += 4 * n
    scales = x[o:o + 3 * n].reshape(n, 3); o += 3 * n
    opac = x[o:o + n]; o += n
    colors = x[o:o + 3 * n].reshape(n, 3)
    return GaussianSet(means=means, quats=quats, scales=scales,
                       opacities=opac, colors=colors)


def _flatten_grads(grads: dict) -> np.ndarray:
    return np.concatenate([grads["means"].ravel(), grads["quats"].ravel(),
                           grads["scales"].ravel(), grads["opacities"].ravel(),
                           grads["colors"].ravel()])


def make_rasterizer_case(case_seed: int):
    rng = rng_for(case_seed, 1)
    n = int(rng.integers(1, 9))
    gs = _random_set(rng, n)
    cam = _random_camera(rng)
    wc = rng.normal(0.0, 1.0, size=(cam.height, cam.width, 3))
    wa = rng.normal(0.0, 1.0, size=(cam.height, cam.width))
    wd = rng.normal(0.0, 1.0, size=(cam.height, cam.width))
    wn = rng.normal(0.0, 0.3, size=(cam.height, cam.width))

    def f(x):
        g = _unflatten_set(x, n)
        ref = render_reference(g, cam)
        val = (np.sum(wc * ref.color) + np.sum(wa * ref.alpha)
               + np.sum(wd * ref.depth_premul) + np.sum(wn * ref.depth_norm))
        return float(val), _digest(ref.n_contrib, ref.n_capped)

    x0 = _flatten_set(gs)
    _, cache = render(gs, cam, return_cache=True)
    grads = render_backward(gs, cam, d_color=wc, d_alpha=wa, d_depth_premul=wd,
                            d_depth_norm=wn, cache=cache, accumulate=False)
    grad = _flatten_grads(grads)
    coords = _pick(rng, x0.size, 10)
    return f, x0, grad, coords, 1e-4


# --- decode and color sampling ----------------------------------------------

def make_decode_case(case_seed: int):
    rng = rng_for(case_seed, 2)
    H = W = 3
    K = 2
    cfg = DecodeConfig()
    raw = rng.normal(0.0, 1.0, size=(H, W, K, 15))
    cam = _random_camera(rng, w=W, h=H)
    n = H * W * K
    w = {"means": rng.normal(size=(n, 3)), "quats": rng.normal(size=(n, 4)),
         "scales": rng.normal(size=(n, 3)), "opacities": rng.normal(size=n),
         "colors": rng.normal(size=(n, 3))}

    def f(x):
        sp = SplatterImage(x.reshape(H, W, K, 15))
        gs, cache = decode(sp, cam, cfg, return_cache=True)
        val = sum(np.sum(w[k] * getattr(gs, k)) for k in w)
        return float(val), _digest(cache.inbounds, cache.qnorm == 0.0)

    gs, cache = decode(SplatterImage(raw), cam, cfg, return_cache=True)
    g_raw = decode_backward(cache, w)
    x0 = raw.ravel().copy()
    coords = _pick(rng, x0.size, 10)
    return f, x0, g_raw.ravel(), coords, 1e-4


def make_color_sample_case(case_seed: int):
    rng = rng_for(case_seed, 3)
    S = 8
    cfg = DecodeConfig()
    cam = _random_camera(rng, w=S, h=S)
    img = Image(rng.uniform(0.0, 1.0, size=(S, S, 3)).astype(np.float32))
    n = 6
    gs = _random_set(rng, n)
    gs = GaussianSet(means=cam.center + (gs.means - np.mean(gs.means, axis=0)
                                         + np.array([0.0, 0.0, 1.2])) @ cam.rotation.T,
                     quats=gs.quats, scales=gs.scales,
                     opacities=gs.opacities, colors=gs.colors)
    w_col = rng.normal(size=(n, 3))
    w_mean = rng.normal(size=(n, 3))

    def f(x):
        g = _unflatten_set(x, n)
        out, cache = direct_color_sample(g, img, cam, cfg, return_cache=True)
        val = np.sum(w_col * out.colors) + np.sum(w_mean * out.means)
        return float(val), _digest(cache.inside, cache.iu, cache.iv)

    out, cache = direct_color_sample(gs, img, cam, cfg, return_cache=True)
    zero = {"means": w_mean, "quats": np.zeros((n, 4)),
            "scales": np.zeros((n, 3)), "opacities": np.zeros(n),
            "colors": w_col}
    grads = direct_color_sample_backward(cache, zero)
    x0 = _flatten_set(gs)
    grad = _flatten_grads(grads)
    coords = np.concatenate([_pick(rng, 3 * n, 6),
                             11 * n + _pick(rng, 3 * n, 3)])  # means + colors
    return f, x0, grad, coords, 1e-5


# --- losses -----------------------------------------------------------------

def make_loss_euclidean_case(case_seed: int):
    rng = rng_for(case_seed, 4)
    x = rng.uniform(0, 1, size=(7, 9, 3))
    y = rng.uniform(0, 1, size=(7, 9, 3))

    def f(v):
        return loss_euclidean_rgb(v.reshape(x.shape), y), b""

    grad = loss_euclidean_rgb_backward(x, y).ravel()
    return f, x.ravel().copy(), grad, _pick(rng, x.size, 8), 1e-5


def make_loss_perceptual_case(case_seed: int):
    rng = rng_for(case_seed, 5)
    x = rng.uniform(0, 1, size=(8, 10, 3))
    y = rng.uniform(0, 1, size=(8, 10, 3))

    def f(v):
        xv = v.reshape(x.shape)
        ind = _digest(np.sign(xv - y), np.sign(pyr_down(xv) - pyr_down(y)))
        return loss_perceptual_surrogate(xv, y), ind

    grad = loss_perceptual_surrogate_backward(x, y).ravel()
    return f, x.ravel().copy(), grad, _pick(rng, x.size, 8), 1e-5


def make_loss_opacity_mean_case(case_seed: int):
    rng = rng_for(case_seed, 6)
    sb = rng.uniform(0.0, 1.0, size=4)
    tau = 50.0

    def f(v):
        return loss_opacity_mean(v, tau), b""

    return f, sb.copy(), loss_opacity_mean_backward(sb, tau), np.arange(4), 1e-6


def make_loss_opacity_bias_case(case_seed: int):
    rng = rng_for(case_seed, 7)
    sb = rng.uniform(0.0, 1.0, size=4)

    def f(v):
        return loss_opacity_bias(v), b""

    return f, sb.copy(), loss_opacity_bias_backward(sb), np.arange(4), 1e-6


def make_loss_scale_reg_case(case_seed: int):
    rng = rng_for(case_seed, 8)
    s = float(rng.uniform(0.3, 3.0))

    def f(v):
        return loss_scale_reg(float(v[0])), b""

    return (f, np.array([s]), np.array([loss_scale_reg_backward(s)]),
            np.array([0]), 1e-6)


def make_loss_jitter_case(case_seed: int):
    rng = rng_for(case_seed, 9)
    shape = (6, 6, 3)
    a = [rng.uniform(0, 1, size=shape) for _ in range(2)]
    b = [rng.uniform(0, 1, size=shape) for _ in range(2)]
    n = a[0].size

    def f(v):
        av = [v[:n].reshape(shape), v[n:].reshape(shape)]
        return loss_jitter(av, b), b""

    grads = loss_jitter_backward(a, b)
    x0 = np.concatenate([a[0].ravel(), a[1].ravel()])
    grad = np.concatenate([g.ravel() for g in grads])
    return f, x0, grad, _pick(rng, x0.size, 8), 1e-5


def make_composite_case(case_seed: int):
    rng = rng_for(case_seed, 10)
    H = W = 6
    rgba = rng.uniform(0, 1, size=(H, W, 4))
    bg = rng.uniform(0, 1, size=3)
    w = rng.normal(size=(H, W, 3))

    def f(v):
        out = composite_over_background(v.reshape(H, W, 4), bg)
        return float(np.sum(w * out)), b""

    d_color, d_alpha = composite_backward(w, bg)
    grad = np.concatenate([d_color, d_alpha[..., None]], axis=2).ravel()
    return f, rgba.ravel().copy(), grad, _pick(rng, rgba.size, 8), 1e-6


# --- scale correction -------------------------------------------------------

def make_solve_scale_case(case_seed: int):
    rng = rng_for(case_seed, 11)
    H = W = 8
    dp = rng.uniform(0.5, 2.0, size=(H, W))
    ap = rng.uniform(0.0, 1.0, size=(H, W))
    dg = rng.uniform(0.5, 2.0, size=(H, W))
    mg = (rng.random((H, W)) > 0.4).astype(np.float64)
    try:
        _, cache = solve_scale(dp, ap, dg, mg, return_cache=True)
    except EmptyOverlap:
        return None

    def f(v):
        c = solve_scale(v.reshape(H, W), ap, dg, mg)
        return c.s, _digest((ap > 0.5) & (mg > 0.5))

    grad = solve_scale_backward(cache, 1.0).ravel()
    return f, dp.ravel().copy(), grad, _pick(rng, dp.size, 8), 1e-5


def make_apply_scale_case(case_seed: int):
    rng = rng_for(case_seed, 12)
    n = 5
    gs = _random_set(rng, n)
    pivot = rng.normal(0.0, 0.3, size=3)
    s = float(rng.uniform(0.5, 2.0))
    w_mean = rng.normal(size=(n, 3))
    w_scale = rng.normal(size=(n, 3))

    def f(v):
        g = GaussianSet(means=v[:3 * n].reshape(n, 3), quats=gs.quats,
                        scales=v[3 * n:6 * n].reshape(n, 3),
                        opacities=gs.opacities, colors=gs.colors)
        out = apply_scale(g, ScaleCorrection(s=float(v[6 * n]), pivot=pivot,
                                             overlap_count=1))
        return float(np.sum(w_mean * out.means)
                     + np.sum(w_scale * out.scales)), b""

    corr = ScaleCorrection(s=s, pivot=pivot, overlap_count=1)
    grads_out = {"means": w_mean, "quats": np.zeros((n, 4)),
                 "scales": w_scale, "opacities": np.zeros(n),
                 "colors": np.zeros((n, 3))}
    grads_in, g_s = apply_scale_backward(gs, corr, grads_out)
    x0 = np.concatenate([gs.means.ravel(), gs.scales.ravel(), [s]])
    grad = np.concatenate([grads_in["means"].ravel(),
                           grads_in["scales"].ravel(), [g_s]])
    coords = np.append(_pick(rng, 6 * n, 7), 6 * n)  # always include s
    return f, x0, grad, coords, 1e-5


# --- end-to-end fit graph ---------------------------------------------------

_FIT_SAMPLES = {}


def _tiny_sample(idx: int):
    """Small cached sample: 24x16 input, 16x16 supervision, 4 views."""
    if idx not in _FIT_SAMPLES:
        from .synthgen import DatasetConfig, generate_sample
        cfg = DatasetConfig(n_samples=1, input_size=(24, 16), sup_size=(16, 16),
                            seed=9000 + idx)
        sample, _ = generate_sample(cfg, 0)
        sample.sup_cams = sample.sup_cams[:3]
        sample.sup_rgba = sample.sup_rgba[:3]
        sample.sup_depth = sample.sup_depth[:3]
        sample.sup_mask = sample.sup_mask[:3]
        _FIT_SAMPLES[idx] = sample
    return _FIT_SAMPLES[idx]


def _graph_indicator(graph: FitGraph, twins) -> bytes:
    parts = []
    for t in twins:
        parts.append(t.rcache_in.n_contrib)
        parts.append(t.rcache_in.n_capped)
        parts.append(np.int64(t.corr.overlap_count))
        if t.scache is not None:
            parts.append(t.scache.mask)
        for rc in t.vcaches:
            parts.append(rc.n_contrib)
            parts.append(rc.n_capped)
        for v, gt in zip(t.views, graph.gts):
            parts.append(np.sign(v - gt))
            parts.append(np.sign(pyr_down(v) - pyr_down(gt)))
    return _digest(*parts)


def make_fit_graph_case(case_seed: int):
    rng = rng_for(case_seed, 13)
    sample = _tiny_sample(int(rng.integers(0, 6)))
    cfg = FitConfig(iterations=10, K=2, grid_size=16, jitter_pairing=True,
                    seed=int(rng.integers(2 ** 31)))
    graph = FitGraph(sample, cfg)
    sp = init_params(cfg.grid_size, cfg.grid_size, cfg.K, cfg.seed,
                     focal=graph.mapping0.cam_roi.focal)
    raw = sp.raw + rng.normal(0.0, 0.3, size=sp.raw.shape)
    iteration = int(rng.integers(0, 10))

    def f(x):
        bd, twins = graph.forward(SplatterImage(x.reshape(raw.shape)), iteration)
        return bd.total, _graph_indicator(graph, twins)

    _, twins = graph.forward(SplatterImage(raw), iteration)
    grad = graph.backward(twins).ravel()
    coords = _pick(rng, raw.size, 3)
    return f, raw.ravel().copy(), grad, coords, 1e-3


SUITES = [
    ("rasterizer", make_rasterizer_case),
    ("decode", make_decode_case),
    ("color_sample", make_color_sample_case),
    ("loss_euclidean", make_loss_euclidean_case),
    ("loss_perceptual", make_loss_perceptual_case),
    ("loss_opacity_mean", make_loss_opacity_mean_case),
    ("loss_opacity_bias", make_loss_opacity_bias_case),
    ("loss_scale_reg", make_loss_scale_reg_case),
    ("loss_jitter", make_loss_jitter_case),
    ("composite", make_composite_case),
    ("solve_scale", make_solve_scale_case),
    ("apply_scale", make_apply_scale_case),
    ("fit_graph", make_fit_graph_case),
]


def run_all(cases: int = 100, rtol: float = 1e-3, atol: float = 1e-6,
            seed: int = 0, names=None) -> list:
    results = []
    for name, builder in SUITES:
        if names is not None and name not in names:
            continue
        results.append(_run_suite(name, builder, cases, rtol, atol, seed))
    return results
