"""Command-line entry point.

Subcommands: gen, fit, render, geo, eval, gradcheck, validate-ds.
Exit codes: 0 success, 1 domain error, 2 usage error. Every subcommand with
a --seed is deterministic; SPLATTERLAB_THREADS caps worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import Camera, Image, lookat_rotation
from .errors import SplatterError, ValidationError
from .evaluation import evaluate_fit, geometry_render
from .gradcheck import SUITES, run_all
from .imgio import read_json, save_png, write_json
from .losses import LossWeights
from .rasterizer import render
from .report import write_report
from .splatter import DecodeConfig, load_splatter, save_splatter
from .synthgen import (DatasetConfig, generate_dataset, load_sample,
                       validate_dataset)
from .training import FitConfig, fit, pipeline_render

SWEEP_DEGREES = (-40, -20, 0, 20, 40)


def _merge_config(cls, file_section: dict, overrides: dict):
    """Build a config dataclass from file values plus CLI overrides.

    Unknown keys are rejected rather than ignored, so a typo in a config
    file fails loudly.
    """
    merged = dict(file_section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except TypeError as e:
        raise ValidationError(f"bad config for {cls.__name__}: {e}") from e


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    cfg = read_json(path)
    known = {"dataset", "fit", "weights", "decode"}
    unknown = set(cfg) - known
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _fit_config(args, file_cfg: dict) -> FitConfig:
    weights = _merge_config(LossWeights, file_cfg.get("weights", {}),
                            {"lambda_j": getattr(args, "lambda_j", None)})
    decode = _merge_config(DecodeConfig, file_cfg.get("decode", {}), {})
    overrides = {
        "iterations": getattr(args, "iters", None),
        "K": getattr(args, "k", None),
        "grid_size": getattr(args, "grid", None),
        "seed": getattr(args, "seed", None),
    }
    if getattr(args, "no_jitter", False):
        overrides["jitter_pairing"] = False
    cfg = _merge_config(FitConfig, file_cfg.get("fit", {}), overrides)
    cfg.weights = weights
    cfg.decode = decode
    return cfg


def cmd_gen(args) -> int:
    file_cfg = _load_config_file(args.config)
    overrides = {"n_samples": args.n, "seed": args.seed}
    if args.input_size:
        overrides["input_size"] = tuple(args.input_size)
    if args.sup_size:
        overrides["sup_size"] = tuple(args.sup_size)
    cfg = _merge_config(DatasetConfig, file_cfg.get("dataset", {}), overrides)
    generate_dataset(cfg, args.out)
    print(f"wrote {cfg.n_samples} samples to {args.out}")
    return 0


def cmd_fit(args) -> int:
    sample = load_sample(args.sample)
    cfg = _fit_config(args, _load_config_file(args.config))
    os.makedirs(args.out, exist_ok=True)

    def _log(it, bd):
        if it % max(1, cfg.iterations // 20) == 0 or it == cfg.iterations - 1:
            print(f"iter {it:5d}  total {bd.total:.5f}  L_d {bd.L_d:.5f}  "
                  f"L_c {bd.L_c:.6f}  L_j {bd.L_j:.6f}")

    sp, trace, _ = fit(sample, cfg, callback=_log if args.verbose else None)
    save_splatter(os.path.join(args.out, "grid.bin"), sp, cfg.decode)
    _, views = pipeline_render(sample, sp, cfg)
    for v, img in enumerate(views):
        name = "render_input.png" if v == 0 else f"render_view_{v:02d}.png"
        save_png(os.path.join(args.out, name),
                 Image(np.clip(img, 0.0, 1.0).astype(np.float32)))
    rep = evaluate_fit(sample, sp, cfg)
    write_report(args.out, trace, rep)
    print(f"fit done: input {rep.input_psnr:.2f} dB, "
          f"held-out {rep.heldout_psnr:.2f} dB, jitter {rep.jitter:.6f}")
    return 0


def _orbit_cameras(sample, degrees=SWEEP_DEGREES):
    """Orbit the head center in the input camera's horizontal plane.

    Every supervision camera looks straight at the head center, so the
    center is triangulated from the first two optical axes; the orbit
    radius is the supervision distance and the orbit axis is the input
    camera's up direction, making the sweep pan left-right.
    """
    sup = sample.sup_cams[0]
    c1, d1 = sample.sup_cams[0].center, sample.sup_cams[0].rotation[:, 2]
    c2, d2 = sample.sup_cams[1].center, sample.sup_cams[1].rotation[:, 2]
    a = np.array([[d1 @ d1, -d1 @ d2], [d1 @ d2, -d2 @ d2]])
    b = np.array([(c2 - c1) @ d1, (c2 - c1) @ d2])
    t = np.linalg.solve(a, b)
    head = 0.5 * ((c1 + t[0] * d1) + (c2 + t[1] * d2))
    dist = float(np.linalg.norm(sup.center - head))

    up = -sample.input_cam.rotation[:, 1]  # camera up in world
    base = sample.input_cam.center - head
    base = base - (base @ up) * up
    base /= np.linalg.norm(base)
    side = np.cross(up, base)
    cams = []
    for deg in degrees:
        a = np.radians(deg)
        direction = np.cos(a) * base + np.sin(a) * side
        c = head + dist * direction
        cams.append(Camera(
            rotation=lookat_rotation(c, head), center=c, focal=sup.focal,
            principal_point=sup.principal_point.copy(),
            width=sup.width, height=sup.height))
    return cams


def cmd_render(args) -> int:
    sample = load_sample(args.sample)
    sp, decode_cfg = load_splatter(args.grid)
    cfg = FitConfig(grid_size=sp.height, K=sp.layers, decode=decode_cfg,
                    jitter_pairing=False)
    gs, _ = pipeline_render(sample, sp, cfg)
    os.makedirs(args.out, exist_ok=True)
    if not args.sweep:
        raise ValidationError("render requires --sweep (the only mode)")
    for deg, cam in zip(SWEEP_DEGREES, _orbit_cameras(sample)):
        out = render(gs, cam)
        rgba = np.concatenate([out.color.data, out.alpha.data], axis=2)
        save_png(os.path.join(args.out, f"sweep_{deg:+03d}.png"),
                 Image(np.clip(rgba, 0.0, 1.0)))
    print(f"wrote {len(SWEEP_DEGREES)} sweep renders to {args.out}")
    return 0


def cmd_geo(args) -> int:
    sample = load_sample(args.sample)
    sp, decode_cfg = load_splatter(args.grid)
    cfg = FitConfig(grid_size=sp.height, K=sp.layers, decode=decode_cfg,
                    jitter_pairing=False)
    gs, _ = pipeline_render(sample, sp, cfg)
    os.makedirs(args.out, exist_ok=True)
    for v, cam in enumerate(sample.all_cams()):
        name = "geo_input.png" if v == 0 else f"geo_view_{v:02d}.png"
        save_png(os.path.join(args.out, name), geometry_render(gs, cam))
    print(f"wrote {1 + len(sample.sup_cams)} geometry renders to {args.out}")
    return 0


def cmd_eval(args) -> int:
    sample = load_sample(args.sample)
    sp, decode_cfg = load_splatter(args.grid)
    cfg = _fit_config(args, _load_config_file(args.config))
    cfg.grid_size = sp.height
    cfg.K = sp.layers
    cfg.decode = decode_cfg
    rep = evaluate_fit(sample, sp, cfg)
    write_json(args.out, rep.to_json())
    print(f"input {rep.input_psnr:.2f} dB  held-out {rep.heldout_psnr:.2f} dB  "
          f"mean SSIM {rep.mean_ssim:.4f}  jitter {rep.jitter:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    names = set(args.only) if args.only else None
    results = run_all(cases=args.cases, rtol=args.tol, atol=args.atol,
                      seed=args.seed, names=names)
    all_ok = True
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        all_ok &= r.ok
        print(f"[gradcheck] {r.name:18s} {status}  cases={r.cases} "
              f"checked={r.checked_coords} skipped={r.skipped_coords} "
              f"failed={r.failed} max_err={r.max_err:.3e} ({r.seconds:.1f}s)")
    return 0 if all_ok else 1


def cmd_validate_ds(args) -> int:
    problems = validate_dataset(args.path)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return 1
    print("dataset valid")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatterlab",
                                description="Gaussian-splat fitting toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a procedural dataset")
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--input-size", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--sup-size", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit a splatter grid to one sample")
    f.add_argument("--sample", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--iters", type=int)
    f.add_argument("--k", type=int)
    f.add_argument("--grid", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--lambda-j", type=float)
    f.add_argument("--no-jitter", action="store_true")
    f.add_argument("--config")
    f.add_argument("--verbose", action="store_true")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", help="novel-view sweep from a fitted grid")
    r.add_argument("--grid", required=True)
    r.add_argument("--sample", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--sweep", action="store_true")
    r.set_defaults(func=cmd_render)

    ge = sub.add_parser("geo", help="geometry renders from a fitted grid")
    ge.add_argument("--grid", required=True)
    ge.add_argument("--sample", required=True)
    ge.add_argument("--out", required=True)
    ge.set_defaults(func=cmd_geo)

    e = sub.add_parser("eval", help="metrics report for a fitted grid")
    e.add_argument("--grid", required=True)
    e.add_argument("--sample", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--cases", type=int, default=100)
    gc.add_argument("--tol", type=float, default=1e-3)
    gc.add_argument("--atol", type=float, default=1e-6)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--only", nargs="*",
                    choices=[name for name, _ in SUITES])
    gc.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("validate-ds", help="check dataset protocol bounds")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate_ds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SplatterError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
