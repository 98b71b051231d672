"""Differentiable forward rendering of a GaussianSet and its analytic backward pass.

Forward model per pixel (front-to-back, z ascending, ties by source index):

    alpha_i = min(0.999, opacity_i * exp(-0.5 * d^T cov2d^-1 d))
    C  = sum_i color_i * alpha_i * T_i          (premultiplied color)
    A  = sum_i alpha_i * T_i
    D  = sum_i z_i * alpha_i * T_i              (premultiplied depth)
    T_i = prod_{j<i} (1 - alpha_j)

with cov2d = J W Sigma W^T J^T + 0.3^2 I (EWA projection of the world
covariance through the projection Jacobian J at the mean, W the
world-to-camera rotation). Contributions with Mahalanobis^2 > 9 or
alpha < 1/255 are skipped; the same rule is applied by the brute-force
reference evaluator and by the backward pass. The tiled kernels add one
cut the reference does not: a pixel stops compositing once transmittance
drops below 1e-7, which perturbs every channel by less than 1e-7.

The backward pass replays each pixel front-to-back with the identical
cuts, recovering the suffix sums needed by d alpha from the forward
totals, then chains the per-splat screen gradients through the projection
to every Gaussian parameter (mean, quaternion, scales, opacity, color).
Gradients match central finite differences on the smooth branches; see
gradcheck.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Camera, Gaussian3D, GaussianSet, Image, quat_rotation_jacobian, quat_to_rotation
from .errors import SingularCovariance

Z_CULL = 0.01
DILATION = 0.09  # 0.3 px low-pass, added as variance
DET_MIN = 1e-12
DEPTH_NORM_EPS = 1e-8

_threads_configured = False


def _ensure_threads():
    """Apply the SPLATTERLAB_THREADS cap once, before the first kernel call."""
    global _threads_configured
    if _threads_configured:
        return
    _threads_configured = True
    v = os.environ.get("SPLATTERLAB_THREADS")
    if v:
        try:
            n = int(v)
        except ValueError:
            return
        import numba
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


@dataclass
class Splat2D:
    """Screen-space projection of one Gaussian."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    z: float
    opacity: float
    color: np.ndarray
    source_index: int

    @property
    def radius(self) -> float:
        a, b, c = self.cov2d[0, 0], self.cov2d[0, 1], self.cov2d[1, 1]
        lam_max = 0.5 * (a + c) + np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
        return float(3.0 * np.sqrt(lam_max))


@dataclass
class RenderOutput:
    """Rendered images: premultiplied color, alpha, and two depth variants.

    depth_premul is the raw alpha-composited depth; depth_norm divides it by
    max(alpha, 1e-8) so partially covered pixels carry metric depth.
    """

    color: Image
    alpha: Image
    depth_premul: Image
    depth_norm: Image


def _rot_of(gs: GaussianSet) -> np.ndarray:
    """Rotation matrices of gs.quats, memoized on the set by array identity."""
    tab = gs.__dict__.get("_rot_memo")
    if tab is not None and tab[0] is gs.quats:
        return tab[1]
    R_q = quat_to_rotation(gs.quats)
    gs.__dict__["_rot_memo"] = (gs.quats, R_q)
    return R_q


def _jq_of(gs: GaussianSet) -> np.ndarray:
    """dR/dq tables of gs.quats, memoized like _rot_of."""
    tab = gs.__dict__.get("_jq_memo")
    if tab is not None and tab[0] is gs.quats:
        return tab[1]
    Jq = quat_rotation_jacobian(gs.quats)
    gs.__dict__["_jq_memo"] = (gs.quats, Jq)
    return Jq


@dataclass
class RenderCache:
    """Forward intermediates kept for the backward pass (sorted splat order)."""

    cam: Camera
    source: GaussianSet
    n_orig: int
    orig_idx: np.ndarray
    p_cam: np.ndarray
    mean2d: np.ndarray
    conic: np.ndarray
    M: np.ndarray
    sigma_w: np.ndarray
    quats: np.ndarray
    scales: np.ndarray
    opac: np.ndarray
    colors: np.ndarray
    zs: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    row_ptr: np.ndarray
    row_idx: np.ndarray
    color64: np.ndarray
    alpha64: np.ndarray
    depth64: np.ndarray
    depth_norm64: np.ndarray
    final_T: np.ndarray
    n_contrib: np.ndarray
    n_capped: np.ndarray


def _project_batch(gs: GaussianSet, cam: Camera):
    """Project all Gaussians; returns sorted screen arrays and chain intermediates.

    Culling: camera depth z <= 0.01 m, or the 3-sigma circle of the projected
    covariance misses every pixel center. The circle is a superset of the
    Mahalanobis<=3 support, so culling never removes a true contribution.
    """
    n = len(gs)
    R_q = _rot_of(gs)
    p_cam = np.empty((n, 3))
    mean2d = np.empty((n, 2))
    conic = np.empty((n, 3))
    sigma_w = np.empty((n, 3, 3))
    M = np.empty((n, 2, 3))
    x0 = np.empty(n, dtype=np.int64)
    x1 = np.empty(n, dtype=np.int64)
    y0 = np.empty(n, dtype=np.int64)
    y1 = np.empty(n, dtype=np.int64)
    keep = np.empty(n, dtype=np.bool_)
    detbad = np.empty(n, dtype=np.bool_)
    _kernels.project_kernel(
        np.ascontiguousarray(gs.means), np.ascontiguousarray(R_q),
        np.ascontiguousarray(gs.scales), np.ascontiguousarray(cam.rotation),
        np.ascontiguousarray(cam.center), cam.focal,
        cam.principal_point[0], cam.principal_point[1], cam.width, cam.height,
        p_cam, mean2d, conic, sigma_w, M, x0, x1, y0, y1, keep, detbad,
    )
    if np.any(detbad):
        raise SingularCovariance("projected covariance is singular; decode produced invalid scales")
    sel = np.nonzero(keep)[0]
    if sel.size == 0:
        return None
    order = np.argsort(p_cam[sel, 2], kind="stable")  # stable keeps source order on z ties
    sel = sel[order]
    return {
        "orig_idx": sel,
        "p_cam": p_cam[sel],
        "mean2d": mean2d[sel],
        "conic": conic[sel],
        "M": M[sel],
        "sigma_w": sigma_w[sel],
        "quats": gs.quats[sel],
        "scales": gs.scales[sel],
        "x0": x0[sel],
        "x1": x1[sel],
        "y0": y0[sel],
        "y1": y1[sel],
    }


def compose_covariance_batch(quats: np.ndarray, scales: np.ndarray) -> np.ndarray:
    R = quat_to_rotation(quats)
    s2 = scales * scales
    return (R * s2[:, None, :]) @ R.transpose(0, 2, 1)


def project_gaussian(g: Gaussian3D, cam: Camera, source_index: int = 0):
    """Project one Gaussian; returns a Splat2D, or None when culled."""
    gs = GaussianSet(
        means=g.mean[None, :], quats=g.rotation[None, :], scales=g.scales[None, :],
        opacities=np.array([g.opacity]), colors=g.color[None, :],
    )
    pb = _project_batch(gs, cam)
    if pb is None:
        return None
    conic = pb["conic"][0]
    det = 1.0 / (conic[0] * conic[2] - conic[1] * conic[1])
    cov = np.array([[conic[2], -conic[1]], [-conic[1], conic[0]]]) * det
    return Splat2D(
        mean2d=pb["mean2d"][0],
        cov2d=cov,
        z=float(pb["p_cam"][0, 2]),
        opacity=g.opacity,
        color=np.asarray(g.color, dtype=np.float64),
        source_index=source_index,
    )


def _empty_output(cam: Camera):
    H, W = cam.height, cam.width
    return {
        "color64": np.zeros((H, W, 3)),
        "alpha64": np.zeros((H, W)),
        "depth64": np.zeros((H, W)),
        "final_T": np.ones((H, W)),
        "n_contrib": np.zeros((H, W), dtype=np.int32),
        "n_capped": np.zeros((H, W), dtype=np.int32),
    }


def render(gs: GaussianSet, cam: Camera, return_cache: bool = False):
    """Render a GaussianSet; returns RenderOutput (and a RenderCache if asked).

    Deterministic: same inputs give bit-identical images for any thread count.
    """
    _ensure_threads()
    H, W = cam.height, cam.width
    pb = _project_batch(gs, cam) if len(gs) else None
    if pb is None:
        out = _empty_output(cam)
        cache = RenderCache(
            cam=cam, source=gs, n_orig=len(gs), orig_idx=np.zeros(0, dtype=np.int64),
            p_cam=np.zeros((0, 3)), mean2d=np.zeros((0, 2)), conic=np.zeros((0, 3)),
            M=np.zeros((0, 2, 3)), sigma_w=np.zeros((0, 3, 3)), quats=np.zeros((0, 4)),
            scales=np.zeros((0, 3)), opac=np.zeros(0), colors=np.zeros((0, 3)),
            zs=np.zeros(0), x0=np.zeros(0, dtype=np.int64), x1=np.zeros(0, dtype=np.int64),
            row_ptr=np.zeros(H + 1, dtype=np.int64), row_idx=np.zeros(0, dtype=np.int64),
            color64=out["color64"], alpha64=out["alpha64"], depth64=out["depth64"],
            depth_norm64=np.zeros((H, W)), final_T=out["final_T"],
            n_contrib=out["n_contrib"], n_capped=out["n_capped"],
        )
        ro = _wrap_output(cache)
        return (ro, cache) if return_cache else ro

    y0, y1 = pb["y0"], pb["y1"]
    counts = np.zeros(H + 1, dtype=np.int64)
    np.add.at(counts, y0, 1)
    np.add.at(counts, y1 + 1, -1)
    per_row = np.cumsum(counts[:H])
    row_ptr = np.zeros(H + 1, dtype=np.int64)
    row_ptr[1:] = np.cumsum(per_row)
    row_idx = np.empty(int(row_ptr[-1]), dtype=np.int64)
    _kernels.build_row_lists(y0, y1, row_ptr, row_idx)

    opac = gs.opacities[pb["orig_idx"]]
    colors = gs.colors[pb["orig_idx"]]
    zs = np.ascontiguousarray(pb["p_cam"][:, 2])

    color64 = np.empty((H, W, 3))
    alpha64 = np.empty((H, W))
    depth64 = np.empty((H, W))
    final_T = np.empty((H, W))
    n_contrib = np.empty((H, W), dtype=np.int32)
    n_capped = np.empty((H, W), dtype=np.int32)
    _kernels.forward_kernel(
        H, W, row_ptr, row_idx,
        np.ascontiguousarray(pb["mean2d"]), np.ascontiguousarray(pb["conic"]),
        np.ascontiguousarray(opac), np.ascontiguousarray(colors), zs,
        pb["x0"], pb["x1"],
        color64, alpha64, depth64, final_T, n_contrib, n_capped,
    )
    depth_norm64 = depth64 / np.maximum(alpha64, DEPTH_NORM_EPS)
    cache = RenderCache(
        cam=cam, source=gs, n_orig=len(gs), orig_idx=pb["orig_idx"], p_cam=pb["p_cam"],
        mean2d=pb["mean2d"], conic=pb["conic"], M=pb["M"], sigma_w=pb["sigma_w"],
        quats=pb["quats"], scales=pb["scales"], opac=opac, colors=colors, zs=zs,
        x0=pb["x0"], x1=pb["x1"], row_ptr=row_ptr, row_idx=row_idx,
        color64=color64, alpha64=alpha64, depth64=depth64, depth_norm64=depth_norm64,
        final_T=final_T, n_contrib=n_contrib, n_capped=n_capped,
    )
    ro = _wrap_output(cache)
    return (ro, cache) if return_cache else ro


def _wrap_output(cache: RenderCache) -> RenderOutput:
    if cache.depth_norm64 is None:
        cache.depth_norm64 = cache.depth64 / np.maximum(cache.alpha64, DEPTH_NORM_EPS)
    return RenderOutput(
        color=Image(cache.color64.astype(np.float32)),
        alpha=Image(cache.alpha64.astype(np.float32)),
        depth_premul=Image(cache.depth64.astype(np.float32)),
        depth_norm=Image(cache.depth_norm64.astype(np.float32)),
    )


def render_backward(gs: GaussianSet, cam: Camera,
                    d_color: np.ndarray | None = None,
                    d_alpha: np.ndarray | None = None,
                    d_depth_premul: np.ndarray | None = None,
                    d_depth_norm: np.ndarray | None = None,
                    cache: RenderCache | None = None,
                    detach_depth_norm_denominator: bool = False,
                    accumulate: bool = True) -> dict:
    """Backpropagate image-space adjoints to Gaussian parameter gradients.

    Adjoints are (H, W, 3) for color and (H, W) for alpha and the two depth
    outputs; omitted ones are treated as zero. Returns a dict of arrays keyed
    like GaussianSet.grad, and (by default) accumulates into gs.grad.
    """
    _ensure_threads()
    if cache is None:
        _, cache = render(gs, cam, return_cache=True)
    H, W = cam.height, cam.width
    dC = np.zeros((H, W, 3)) if d_color is None else np.asarray(d_color, dtype=np.float64)
    dA = np.zeros((H, W)) if d_alpha is None else np.asarray(d_alpha, dtype=np.float64).copy()
    dD = np.zeros((H, W)) if d_depth_premul is None else np.asarray(d_depth_premul, dtype=np.float64).copy()
    if d_depth_norm is not None:
        ddn = np.asarray(d_depth_norm, dtype=np.float64)
        denom = np.maximum(cache.alpha64, DEPTH_NORM_EPS)
        dD = dD + ddn / denom
        if not detach_depth_norm_denominator:
            live = cache.alpha64 > DEPTH_NORM_EPS
            dA = dA - np.where(live, ddn * cache.depth64 / (denom * denom), 0.0)

    grads = {
        "means": np.zeros((cache.n_orig, 3)),
        "quats": np.zeros((cache.n_orig, 4)),
        "scales": np.zeros((cache.n_orig, 3)),
        "opacities": np.zeros(cache.n_orig),
        "colors": np.zeros((cache.n_orig, 3)),
    }
    n_s = len(cache.orig_idx)
    if n_s:
        # per-pixel total of u_j * alpha_j * T_j; the kernel derives suffix
        # sums from it, so the backward can replay the forward order
        V = (np.einsum("hwc,hwc->hw", dC, cache.color64)
             + dA * cache.alpha64 + dD * cache.depth64)
        gbuf = np.empty((_kernels.N_ROW_BLOCKS, n_s, 10))
        _kernels.backward_kernel(
            H, W, cache.row_ptr, cache.row_idx,
            np.ascontiguousarray(cache.mean2d), np.ascontiguousarray(cache.conic),
            np.ascontiguousarray(cache.opac), np.ascontiguousarray(cache.colors),
            cache.zs, cache.x0, cache.x1,
            np.ascontiguousarray(dC), np.ascontiguousarray(dA), np.ascontiguousarray(dD),
            V, gbuf,
        )
        g10 = gbuf.sum(axis=0)  # fixed block order: deterministic reduction
        _chain_projection(cache, g10, grads)

    if accumulate:
        for k in grads:
            gs.grad[k] += grads[k]
    return grads


def _chain_projection(cache: RenderCache, g10: np.ndarray, grads: dict):
    """Map screen-space splat gradients back to 3D Gaussian parameters."""
    n = len(g10)
    oi = cache.orig_idx  # unique by construction: one row per surviving splat
    R_q = _rot_of(cache.source)[oi]
    Jq = _jq_of(cache.source)[oi]
    g_means = np.empty((n, 3))
    g_quats = np.empty((n, 4))
    g_scales = np.empty((n, 3))
    _kernels.chain_kernel(
        np.ascontiguousarray(g10), np.ascontiguousarray(cache.conic),
        np.ascontiguousarray(cache.M), np.ascontiguousarray(cache.sigma_w),
        np.ascontiguousarray(R_q), np.ascontiguousarray(Jq),
        np.ascontiguousarray(cache.quats), np.ascontiguousarray(cache.scales),
        np.ascontiguousarray(cache.p_cam), np.ascontiguousarray(cache.cam.rotation),
        cache.cam.focal, g_means, g_quats, g_scales,
    )
    grads["means"][oi] += g_means
    grads["quats"][oi] += g_quats
    grads["scales"][oi] += g_scales
    grads["opacities"][oi] += g10[:, 6]
    grads["colors"][oi] += g10[:, 7:10]


@dataclass
class ReferenceRender:
    """Output of the brute-force per-pixel evaluator (float64 arrays)."""

    color: np.ndarray
    alpha: np.ndarray
    depth_premul: np.ndarray
    depth_norm: np.ndarray
    final_T: np.ndarray
    n_contrib: np.ndarray
    n_capped: np.ndarray


def render_reference(gs: GaussianSet, cam: Camera) -> ReferenceRender:
    """Naive all-pairs evaluator used as the rendering oracle.

    No footprint or off-screen culling; behind-camera splats (z <= 0.01) are
    excluded, and the shared contribution rule (Mahalanobis^2 <= 9, capped
    alpha >= 1/255) is applied, matching the tiled renderer exactly.
    """
    H, W = cam.height, cam.width
    out = ReferenceRender(
        color=np.zeros((H, W, 3)), alpha=np.zeros((H, W)), depth_premul=np.zeros((H, W)),
        depth_norm=np.zeros((H, W)), final_T=np.ones((H, W)),
        n_contrib=np.zeros((H, W), dtype=np.int32), n_capped=np.zeros((H, W), dtype=np.int32),
    )
    if len(gs) == 0:
        return out
    R_wc = cam.rotation
    p_cam = (gs.means - cam.center) @ R_wc
    keep = np.nonzero(p_cam[:, 2] > Z_CULL)[0]
    if keep.size == 0:
        return out
    order = keep[np.argsort(p_cam[keep, 2], kind="stable")]
    p_cam = p_cam[order]
    z = p_cam[:, 2]
    mean2d = cam.principal_point[None, :] + cam.focal * p_cam[:, :2] / z[:, None]
    sigma_w = compose_covariance_batch(gs.quats[order], gs.scales[order])
    J = np.zeros((len(order), 2, 3))
    J[:, 0, 0] = cam.focal / z
    J[:, 0, 2] = -cam.focal * p_cam[:, 0] / (z * z)
    J[:, 1, 1] = cam.focal / z
    J[:, 1, 2] = -cam.focal * p_cam[:, 1] / (z * z)
    M = J @ R_wc.T
    cov = np.einsum("nij,njk,nlk->nil", M, sigma_w, M)
    cov[:, 0, 0] += DILATION
    cov[:, 1, 1] += DILATION
    A, B, C = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = A * C - B * B
    if np.any(det < DET_MIN):
        raise SingularCovariance("projected covariance is singular")
    conic = np.stack([C / det, -B / det, A / det], axis=1)

    ys = np.arange(H) + 0.5
    xs = np.arange(W) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    px = gx.reshape(-1)
    py = gy.reshape(-1)
    dx = px[:, None] - mean2d[None, :, 0]
    dy = py[:, None] - mean2d[None, :, 1]
    maha = conic[None, :, 0] * dx * dx + 2.0 * conic[None, :, 1] * dx * dy + conic[None, :, 2] * dy * dy
    al = gs.opacities[order][None, :] * np.exp(-0.5 * maha)
    capped = al > _kernels.ALPHA_CAP
    al = np.where(capped, _kernels.ALPHA_CAP, al)
    live = (maha <= _kernels.MAHA_MAX) & (al >= _kernels.ALPHA_MIN)
    al = np.where(live, al, 0.0)

    P = H * W
    T = np.ones(P)
    colP = np.zeros((P, 3))
    aP = np.zeros(P)
    dP = np.zeros(P)
    cols = gs.colors[order]
    for j in range(len(order)):
        w = al[:, j] * T
        colP += w[:, None] * cols[j][None, :]
        aP += w
        dP += w * z[j]
        T = T * (1.0 - al[:, j])
    out.color = colP.reshape(H, W, 3)
    out.alpha = aP.reshape(H, W)
    out.depth_premul = dP.reshape(H, W)
    out.depth_norm = out.depth_premul / np.maximum(out.alpha, DEPTH_NORM_EPS)
    out.final_T = T.reshape(H, W)
    out.n_contrib = live.sum(axis=1).astype(np.int32).reshape(H, W)
    out.n_capped = (capped & live).sum(axis=1).astype(np.int32).reshape(H, W)
    return out
