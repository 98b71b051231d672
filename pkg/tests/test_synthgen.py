"""Procedural scenes, camera sampling, ray tracing, and dataset IO."""

from __future__ import annotations

import shutil

import numpy as np

from splatterlab.core import Camera, lookat_rotation
from splatterlab.synthgen import (DatasetConfig, Ellipsoid, ProceduralScene,
                                  build_scene, face_box_gt, generate_sample,
                                  raytrace_view, sample_cameras,
                                  validate_dataset)


def _sphere_scene(center, radius: float) -> ProceduralScene:
    ball = Ellipsoid(center=np.asarray(center, dtype=np.float64),
                     semi_axes=np.full(3, radius), rotation=np.eye(3),
                     base_color=np.array([0.8, 0.6, 0.5]), albedo_seed=1)
    return ProceduralScene(primitives=[ball], light_dir=np.array([0.0, 0.0, -1.0]),
                           face_axis=np.array([0.0, 0.0, -1.0]), seed=1)


def test_build_scene_deterministic():
    a = build_scene(3)
    b = build_scene(3)
    assert len(a.primitives) == len(b.primitives)
    for p, q in zip(a.primitives, b.primitives):
        assert np.array_equal(p.center, q.center)
        assert np.array_equal(p.semi_axes, q.semi_axes)
    assert not np.array_equal(a.head.semi_axes, build_scene(4).head.semi_axes)


def test_raytrace_miss_and_sphere_depth():
    scene = _sphere_scene([0.0, 0.0, 0.5], 0.1)
    cam = Camera(rotation=np.eye(3), center=np.zeros(3), focal=20.0,
                 principal_point=np.array([8.5, 8.5]), width=17, height=17)
    rgba, depth = raytrace_view(scene, cam)
    assert np.isclose(depth[8, 8], 0.4, atol=1e-9)  # on-axis first hit
    assert rgba.data[8, 8, 3] == 1.0
    assert rgba.data[0, 0, 3] == 0.0  # corner ray misses
    assert depth[0, 0] == 0.0
    assert not rgba.data[0, 0, :3].any()


def test_raytrace_deterministic():
    scene = build_scene(5)
    eye = scene.head_center + np.array([0.0, 0.0, -0.5])
    cam = Camera(rotation=lookat_rotation(eye, scene.head_center), center=eye,
                 focal=20.0, principal_point=np.array([12.0, 12.0]),
                 width=24, height=24)
    r1, d1 = raytrace_view(scene, cam)
    r2, d2 = raytrace_view(scene, cam)
    assert np.array_equal(r1.data, r2.data)
    assert np.array_equal(d1, d2)
    assert (r1.data[..., 3] > 0).any()


def test_sample_cameras_bounds():
    cfg = DatasetConfig()
    for s in range(5):
        scene = build_scene(s)
        input_cam, sup_cams = sample_cameras(scene, cfg, sample_seed=s)
        assert len(sup_cams) == 10
        head = scene.head_center
        dist = np.linalg.norm(input_cam.center - head)
        assert cfg.dist_min <= dist <= cfg.dist_max
        # face angle: the face axis stays within 30 degrees of the view ray
        to_cam = (input_cam.center - head) / dist
        ang = np.degrees(np.arccos(np.clip(to_cam @ scene.face_axis, -1, 1)))
        assert ang <= cfg.face_deg + 1e-9
        base = to_cam
        for c in sup_cams:
            d = np.linalg.norm(c.center - head)
            assert np.isclose(d, cfg.sup_distance, atol=1e-9)
            cap = np.degrees(np.arccos(np.clip(
                (c.center - head) / d @ base, -1, 1)))
            assert cap <= cfg.cap_deg + 1e-9


def test_face_box_tangency():
    # points on the head surface must project inside the margin-1 box,
    # and the extreme projections must touch its edges
    scene = build_scene(2)
    input_cam, _ = sample_cameras(scene, DatasetConfig(), sample_seed=2)
    box = face_box_gt(scene, input_cam, margin=1.0)
    head = scene.head
    rng = np.random.default_rng(0)
    u = rng.normal(size=(4096, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = head.center + (u * head.semi_axes) @ head.rotation.T
    rel = (pts - input_cam.center) @ input_cam.rotation
    px = rel[:, :2] / rel[:, 2:3] * input_cam.focal + input_cam.principal_point
    half = box.size / 2
    d = np.abs(px - box.center)
    assert np.all(d <= half + 1e-6)
    assert d.max() >= half - half * 0.01  # tangent within sampling slack


def test_generate_sample_consistency():
    sample, _ = generate_sample(DatasetConfig(n_samples=1, seed=0), 0)
    W, H = (96, 64)
    assert sample.input_rgba.data.shape == (H, W, 4)
    assert sample.input_depth.shape == (H, W)
    assert len(sample.sup_cams) == 10
    assert len(sample.sup_rgba) == 10
    mask = sample.input_mask > 0.5
    assert mask.any()
    # coverage is supersampled but depth is the center ray, so only
    # solidly covered pixels are guaranteed a hit
    solid = sample.input_rgba.data[..., 3] >= 0.6
    assert np.all(sample.input_depth[solid] > 0)
    assert np.all(sample.input_depth[~mask] == 0)


def test_dataset_round_trip(ds_dir, sample0):
    mem, _ = generate_sample(DatasetConfig(n_samples=2, seed=0), 0)
    assert np.isclose(np.linalg.norm(sample0.input_cam.center
                                     - mem.input_cam.center), 0.0, atol=1e-12)
    # PNG quantizes to 8 bits on both paths, PFM stores depth at f32
    assert np.array_equal(sample0.input_rgba.data, mem.input_rgba.data)
    assert np.array_equal(sample0.input_depth, mem.input_depth)
    assert sample0.bg_seed == mem.bg_seed
    assert np.isclose(sample0.box.size, mem.box.size)


def test_validate_dataset_clean_and_corrupt(ds_dir, tmp_path):
    assert validate_dataset(ds_dir) == []
    bad = tmp_path / "bad_ds"
    shutil.copytree(ds_dir, bad)
    cam_path = bad / "sample_0001" / "cameras.json"
    text = cam_path.read_text().replace('"focal"', '"focal_typo"')
    cam_path.write_text(text)
    problems = validate_dataset(str(bad))
    assert problems
    assert any("sample_0001" in p for p in problems)
