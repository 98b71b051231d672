"""Acceptance suite: nine numbered end-to-end checks with visible verdicts.

Each test prints one `[N/9 name] PASS/FAIL: detail` line outside pytest's
capture, so a full run always ends with nine human-readable verdict lines;
the assertion that follows carries the same condition. Checks 5-7 run real
multi-view fits and dominate the suite's wall time; everything else is
seconds. Pinned regression values live in tests/data/a5_pinned.json and are
written on the first green run of check 5.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np
import pytest

from conftest import origin_camera, random_gaussians
from splatterlab.core import Camera, rng_for
from splatterlab.evaluation import evaluate_fit, jitter_eval, psnr
from splatterlab.gradcheck import run_all
from splatterlab.losses import (
    LossWeights, composite_over_background, loss_euclidean_rgb,
    loss_jitter, loss_opacity_bias, loss_opacity_mean,
    loss_perceptual_surrogate, loss_scale_reg, total_loss,
)
from splatterlab.rasterizer import render, render_reference
from splatterlab.roi import FaceBox, RoiMapping, build_roi_camera, warp_image
from splatterlab.splatter import init_params
from splatterlab.synthgen import (
    DatasetConfig, background_color, generate_dataset, generate_sample,
    validate_dataset,
)
from splatterlab.training import (
    FitConfig, ScaleCorrection, apply_scale, fit, pipeline_render,
    solve_scale,
)
from splatterlab.core import Image

PINNED_PATH = os.path.join(os.path.dirname(__file__), "data", "a5_pinned.json")

# Ten-seed sweep scale for checks 6 and 7: small enough that twenty fits
# stay tractable, large enough that the fits converge to where capacity and
# stability effects are visible rather than noise.
SWEEP = dict(input_size=(72, 48), sup_size=(48, 48))
SWEEP_GRID = 32
SWEEP_ITERS = 800
SWEEP_SEEDS = list(range(1000, 1010))


def _verdict(capsys, idx: int, name: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"[{idx}/9 {name}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


def _view_psnrs(sample, sp, cfg) -> list:
    _, views = pipeline_render(sample, sp, cfg)
    bg = background_color(sample.bg_seed)
    gts = [composite_over_background(r, bg) for r in sample.all_rgba()]
    return [psnr(views[v], gts[v]) for v in range(len(gts))]


def test_gradient_suite(capsys):
    t0 = time.time()
    results = run_all(cases=100, rtol=1e-3, atol=1e-6, seed=0)
    dt = time.time() - t0
    worst = max(r.max_err for r in results)
    bad = [r.name for r in results if not r.ok]
    ok = not bad and dt <= 300.0
    _verdict(capsys, 1, "gradient-suite", ok,
             f"{len(results)} ops x 100 cases, max rel err {worst:.2e}, "
             f"{dt:.1f}s" + (f", failed: {bad}" if bad else ""))


def test_rasterizer_oracle_equivalence(capsys):
    worst = 0.0
    for trial in range(50):
        n = 1 + (trial * 7) % 32
        z_lo = 0.3 if trial % 5 == 0 else 0.8
        opac_hi = 0.999 if trial % 3 == 0 else 0.95
        gs = random_gaussians(trial, n, z_lo=z_lo, opac_hi=opac_hi)
        if trial % 7 == 0:
            # outliers: one behind the camera, one far off screen
            gs.means[0] = (0.0, 0.0, -1.0)
            if n > 1:
                gs.means[1] = (50.0, 0.0, 1.0)
        cam = origin_camera(32, 24, focal=40.0)
        out = render(gs, cam)
        ref = render_reference(gs, cam)
        worst = max(
            worst,
            float(np.abs(out.color.data - ref.color).max()),
            float(np.abs(out.alpha.data[..., 0] - ref.alpha).max()),
            float(np.abs(out.depth_premul.data[..., 0] - ref.depth_premul).max()),
            float(np.abs(out.depth_norm.data[..., 0] - ref.depth_norm).max()),
        )
    ok = worst <= 1e-5
    _verdict(capsys, 2, "rasterizer-oracle", ok,
             f"50 scenes (<=32 gaussians), max channel diff {worst:.2e}")


def test_scale_correction_exactness(capsys):
    rng = rng_for(9, 42)
    worst_s = worst_img = worst_depth = 0.0
    for s_star in (0.5, 0.9, 2.0):
        depth_pred = rng.uniform(0.5, 2.0, (16, 16))
        mask = (rng.uniform(size=(16, 16)) < 0.7).astype(np.float64)
        depth_gt = s_star * depth_pred
        corr = solve_scale(depth_pred, np.ones((16, 16)), depth_gt, mask)
        worst_s = max(worst_s, abs(corr.s - s_star))

        gs = random_gaussians(int(s_star * 10), 24)
        cam = origin_camera(32, 24, focal=40.0)
        before = render(gs, cam)
        pivot_corr = ScaleCorrection(s=s_star, pivot=cam.center,
                                     overlap_count=1)
        after = render(apply_scale(gs, pivot_corr), cam)
        worst_img = max(
            worst_img,
            float(np.abs(after.color.data - before.color.data).max()),
            float(np.abs(after.alpha.data - before.alpha.data).max()))
        worst_depth = max(worst_depth, float(np.abs(
            after.depth_norm.data - s_star * before.depth_norm.data).max()))
    ok = worst_s <= 1e-6 and worst_img <= 1e-6 and worst_depth <= 1e-6
    _verdict(capsys, 3, "scale-correction", ok,
             f"s recovery {worst_s:.2e}, pivot-view image diff "
             f"{worst_img:.2e}, depth_norm vs s*depth {worst_depth:.2e}")


def test_homography_properties(capsys):
    cam = Camera(rotation=np.eye(3), center=np.zeros(3), focal=80.0,
                 principal_point=np.array([32.0, 32.0]), width=64, height=64)
    rng = rng_for(4, 42)

    # third rule: the face subtends exactly a third of the ROI field of view
    worst_third = 0.0
    for _ in range(200):
        box = FaceBox(center=rng.uniform(10.0, 54.0, 2),
                      size=float(rng.uniform(8.0, 40.0)))
        m = build_roi_camera(cam, box, 64)
        theta_face = 2.0 * np.arctan(box.size / (2.0 * cam.focal))
        fov = 2.0 * np.arctan((64 / 2.0) / m.cam_roi.focal)
        worst_third = max(worst_third, abs(theta_face / fov - 1.0 / 3.0))

    # warp / inverse-warp round trip on a smooth test card; coverage alpha
    # carried through both warps masks pixels that ever left the frame
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    card = np.stack([0.5 + 0.45 * np.sin(xx / 6.0),
                     0.5 + 0.45 * np.cos(yy / 7.0),
                     0.5 + 0.45 * np.sin((xx + yy) / 9.0)], axis=-1)
    src = Image(card)
    worst_rt = np.inf
    for _ in range(50):
        box = FaceBox(center=rng.uniform(20.0, 44.0, 2),
                      size=float(rng.uniform(12.0, 26.0)))
        m = build_roi_camera(cam, box, 64)
        roi = warp_image(src, m, 64)
        inv = RoiMapping(cam_roi=cam,
                         homography=np.linalg.inv(m.homography))
        back = warp_image(roi, inv, 64)
        valid = back.data[..., 3] >= 0.999
        worst_rt = min(worst_rt,
                       psnr(Image(back.data[..., :3]), src, valid))

    # ray route vs homography route, pixel for pixel
    box = FaceBox(center=np.array([26.0, 38.0]), size=20.0)
    m = build_roi_camera(cam, box, 64)
    k_roi_inv = np.linalg.inv(m.cam_roi.intrinsics())
    uv = rng.uniform(0.0, 64.0, (1000, 2))
    homog = np.column_stack([uv, np.ones(1000)])
    via_h = (m.homography @ homog.T).T
    via_h = via_h[:, :2] / via_h[:, 2:3]
    dirs_world = (m.cam_roi.rotation @ (k_roi_inv @ homog.T)).T
    dirs_src = (cam.rotation.T @ dirs_world.T).T
    via_ray = (cam.focal * dirs_src[:, :2] / dirs_src[:, 2:3]
               + cam.principal_point)
    worst_ray = float(np.abs(via_h - via_ray).max())

    ok = worst_third <= 1e-9 and worst_rt >= 40.0 and worst_ray <= 1e-6
    _verdict(capsys, 4, "homography", ok,
             f"third rule {worst_third:.1e}, round trip {worst_rt:.1f} dB, "
             f"ray vs H {worst_ray:.1e} px")


def test_fit_regression(capsys, sample0):
    cfg = FitConfig(iterations=2000, K=2, grid_size=64, seed=0)
    mapping = build_roi_camera(sample0.input_cam, sample0.box, cfg.grid_size)
    sp0 = init_params(cfg.grid_size, cfg.grid_size, cfg.K, cfg.seed,
                      focal=mapping.cam_roi.focal, cfg=cfg.decode)
    init_input = _view_psnrs(sample0, sp0, cfg)[0]

    t0 = time.time()
    sp, trace, _ = fit(sample0, cfg)
    dt = time.time() - t0
    rep = evaluate_fit(sample0, sp, cfg)

    gain = rep.input_psnr - init_input
    gap = abs(rep.input_psnr - rep.heldout_psnr)
    ok = gain >= 10.0 and gap <= 6.0
    if os.cpu_count() >= 8:
        ok = ok and dt <= 600.0

    pin_note = ""
    if os.path.exists(PINNED_PATH):
        with open(PINNED_PATH) as f:
            pin = json.load(f)
        d_in = abs(rep.input_psnr - pin["input_psnr"])
        d_held = abs(rep.heldout_psnr - pin["heldout_psnr"])
        ok = ok and d_in <= 0.1 and d_held <= 0.1
        pin_note = f", vs pinned d={max(d_in, d_held):.3f} dB"
    elif ok:
        with open(PINNED_PATH, "w") as f:
            json.dump({"input_psnr": rep.input_psnr,
                       "heldout_psnr": rep.heldout_psnr,
                       "jitter": rep.jitter}, f, indent=1)
        pin_note = ", pinned values recorded"

    _verdict(capsys, 5, "fit-regression", ok,
             f"input {rep.input_psnr:.2f} dB (init {init_input:.2f}, "
             f"gain {gain:.2f}), held-out {rep.heldout_psnr:.2f} "
             f"(gap {gap:.2f}), {dt:.0f}s{pin_note}")


def test_multi_layer_benefit(capsys):
    held = {1: [], 2: []}
    for seed in SWEEP_SEEDS:
        sample, _ = generate_sample(
            DatasetConfig(n_samples=1, seed=seed, **SWEEP), 0)
        for k in (1, 2):
            cfg = FitConfig(iterations=SWEEP_ITERS, K=k,
                            grid_size=SWEEP_GRID, seed=0,
                            jitter_pairing=False)
            sp, _, _ = fit(sample, cfg)
            vp = _view_psnrs(sample, sp, cfg)
            held[k].append(float(np.mean(vp[1:])))
    m1, m2 = float(np.mean(held[1])), float(np.mean(held[2]))
    wins = sum(b >= a for a, b in zip(held[1], held[2]))
    ok = m2 >= m1
    _verdict(capsys, 6, "multi-layer", ok,
             f"held-out mean K=2 {m2:.2f} dB vs K=1 {m1:.2f} dB "
             f"({len(SWEEP_SEEDS)} seeds, {SWEEP_ITERS} iters, "
             f"K=2 wins {wins}/{len(SWEEP_SEEDS)})")


def test_jitter_direction(capsys):
    jit = {0.0: [], 1.0: []}
    inp = {0.0: [], 1.0: []}
    for seed in SWEEP_SEEDS:
        sample, _ = generate_sample(
            DatasetConfig(n_samples=1, seed=seed, **SWEEP), 0)
        for lam in (0.0, 1.0):
            cfg = FitConfig(iterations=SWEEP_ITERS, K=2,
                            grid_size=SWEEP_GRID, seed=0,
                            jitter_pairing=True,
                            weights=LossWeights(lambda_j=lam))
            sp, _, _ = fit(sample, cfg)
            jit[lam].append(jitter_eval(sample, sp, cfg, n_frames=8))
            inp[lam].append(_view_psnrs(sample, sp, cfg)[0])
    m0, m1 = float(np.mean(jit[0.0])), float(np.mean(jit[1.0]))
    wins = sum(b < a for a, b in zip(jit[0.0], jit[1.0]))
    cost = float(np.mean(inp[0.0]) - np.mean(inp[1.0]))
    ok = m1 < m0 and wins >= 7 and cost <= 0.5
    _verdict(capsys, 7, "jitter-direction", ok,
             f"jitter {m1:.5f} (on) vs {m0:.5f} (off), wins "
             f"{wins}/{len(SWEEP_SEEDS)}, input cost {cost:+.2f} dB")


def test_loss_closed_forms(capsys):
    rng = rng_for(8, 42)
    checks = []

    x = rng.uniform(0.0, 1.0, (9, 7, 3))
    y = rng.uniform(0.0, 1.0, (9, 7, 3))
    base = loss_euclidean_rgb(x, y)
    for _ in range(10):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        rot = loss_euclidean_rgb((x - y) @ q.T, np.zeros_like(x))
        checks.append(("L_e rotation invariance", abs(rot - base) <= 1e-9))
    checks.append(("L_e zero", loss_euclidean_rgb(x, x) == 0.0))
    checks.append(("L_e unit residual", abs(loss_euclidean_rgb(
        x + np.array([1.0, 0, 0]), x) - 1.0) <= 1e-12))

    checks.append(("L_m all-zero", loss_opacity_mean([0.0, 0.0], 50.0) == 1.0))
    checks.append(("L_m saturated", abs(loss_opacity_mean([1.0], 50.0)
                                        - np.exp(-50.0)) <= 1e-30))
    checks.append(("L_m mixed", abs(loss_opacity_mean([0.0, 1.0], 50.0)
                                    - (1.0 + np.exp(-50.0)) / 2.0) <= 1e-15))

    checks.append(("L_sigma opaque", loss_opacity_bias([1.0, 1.0]) == 0.0))
    checks.append(("L_sigma empty", loss_opacity_bias([0.0, 0.0]) == 1.0))
    checks.append(("L_sigma mid", abs(loss_opacity_bias([0.25, 0.75]) - 0.5)
                   <= 1e-15))

    checks.append(("L_c unit", loss_scale_reg(1.0) == 0.0))
    checks.append(("L_c symmetry", abs(loss_scale_reg(np.e) - 1.0) <= 1e-12
                   and abs(loss_scale_reg(1.0 / np.e) - 1.0) <= 1e-12))

    checks.append(("L_j identical", loss_jitter([x], [x.copy()]) == 0.0))
    shifted = x.copy()
    shifted[..., 1] += 0.1
    checks.append(("L_j constant step", abs(loss_jitter([x], [shifted])
                                            - 0.01 / 3.0) <= 1e-12))

    rgba = np.zeros((4, 4, 4))
    rgba[..., 0] = 0.5
    rgba[..., 3] = 0.5
    comp = composite_over_background(Image(rgba), np.array([0.0, 0.0, 1.0]))
    checks.append(("composite half-alpha", float(np.abs(
        comp - np.array([0.5, 0.0, 0.5])).max()) <= 1e-12))

    w = LossWeights()
    zero = {k: 0.0 for k in ("L_e", "L_p", "L_m", "L_sigma", "L_c", "L_j")}
    checks.append(("total zero", total_loss(zero, w).total == 0.0))
    only_m = dict(zero, L_m=1.0)
    checks.append(("total lambda_m", total_loss(only_m, w).total == 5.0))
    only_s = dict(zero, L_sigma=1.0)
    checks.append(("total lambda_sigma",
                   abs(total_loss(only_s, w).total - 1e-4) <= 1e-19))
    checks.append(("L_p zero", loss_perceptual_surrogate(x, x) == 0.0))
    checks.append(("L_p constant offset", abs(loss_perceptual_surrogate(
        x * 0.5, x * 0.5 + 0.07) - 0.07) <= 1e-9))

    bad = [name for name, good in checks if not good]
    ok = not bad
    _verdict(capsys, 8, "loss-closed-forms", ok,
             f"{len(checks)} identities" + (f", failed: {bad}" if bad else ""))


def test_dataset_protocol(capsys, tmp_path):
    cfg = DatasetConfig(n_samples=100, seed=11)
    root = generate_dataset(cfg, str(tmp_path / "big"))
    problems = validate_dataset(root)

    # independent spot check of the capture bounds, straight from the files
    worst_dist, worst_face, worst_cap, bad_views = 0.0, 0.0, 0.0, 0
    for i in range(100):
        d = os.path.join(root, f"sample_{i:04d}")
        with open(os.path.join(d, "cameras.json")) as f:
            cams = json.load(f)
        with open(os.path.join(d, "manifest.json")) as f:
            meta = json.load(f)
        head = np.array(meta["head_center"])
        axis = np.array(meta["face_axis"])
        c_in = np.array(cams["input"]["center"])
        dist = float(np.linalg.norm(c_in - head))
        worst_dist = max(worst_dist, max(0.4 - dist, dist - 1.0))
        w_dir = (c_in - head) / dist
        worst_face = max(worst_face, float(np.degrees(
            np.arccos(np.clip(w_dir @ axis, -1, 1)))))
        if 1 + len(cams["supervision"]) != 11:
            bad_views += 1
        for cv in cams["supervision"]:
            u = np.array(cv["center"]) - head
            u = u / np.linalg.norm(u)
            worst_cap = max(worst_cap, float(np.degrees(
                np.arccos(np.clip(u @ w_dir, -1, 1)))))

    # byte-level determinism: regenerate three samples twice, compare files
    small = DatasetConfig(n_samples=3, seed=11)
    r1 = generate_dataset(small, str(tmp_path / "det1"))
    r2 = generate_dataset(small, str(tmp_path / "det2"))
    mismatch = []
    for dirpath, _, files in os.walk(r1):
        rel = os.path.relpath(dirpath, r1)
        for name in sorted(files):
            a = open(os.path.join(dirpath, name), "rb").read()
            b = open(os.path.join(r2, rel, name), "rb").read()
            if a != b:
                mismatch.append(os.path.join(rel, name))

    ok = (not problems and worst_dist <= 1e-9 and worst_face <= 30.0 + 1e-4
          and worst_cap <= 45.0 + 1e-4 and bad_views == 0 and not mismatch)
    _verdict(capsys, 9, "dataset-protocol", ok,
             f"100 samples, validator problems {len(problems)}, dist slack "
             f"{worst_dist:.1e}, face max {worst_face:.2f} deg, cap max "
             f"{worst_cap:.2f} deg, byte mismatches {len(mismatch)}")
