"""PNG, PFM, and camera JSON round trips."""

from __future__ import annotations

import os

import numpy as np

from splatterlab.core import Camera, Image, rng_for
from splatterlab.imgio import (load_camera_json, load_pfm, load_png,
                               save_camera_json, save_pfm, save_png)


def test_png_round_trip_on_quantized_values(tmp_path):
    rng = rng_for(9, 1)
    data = np.round(rng.uniform(0, 1, (10, 12, 4)) * 255.0) / 255.0
    path = os.path.join(tmp_path, "img.png")
    save_png(path, Image(data))
    back = load_png(path)
    assert back.data.shape == (10, 12, 4)
    assert np.allclose(back.data, data, atol=1e-7)


def test_png_clamps_out_of_range(tmp_path):
    data = np.array([[[1.5, -0.2, 0.5, 1.0]]])
    path = os.path.join(tmp_path, "clamp.png")
    save_png(path, Image(data))
    back = load_png(path).data[0, 0]
    assert back[0] == 1.0 and back[1] == 0.0


def test_pfm_round_trip(tmp_path):
    rng = rng_for(9, 2)
    depth = rng.uniform(0, 3, (7, 9)).astype(np.float32).astype(np.float64)
    path = os.path.join(tmp_path, "d.pfm")
    save_pfm(path, depth)
    back = load_pfm(path)
    assert back.shape == (7, 9)
    assert np.array_equal(back.astype(np.float32), depth.astype(np.float32))
    raw = open(path, "rb").read()
    assert raw.startswith(b"Pf\n")
    assert b"-1.0" in raw[:32]  # little-endian scale marker


def test_camera_json_round_trip(tmp_path):
    rng = rng_for(9, 3)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    cam = Camera(rotation=q, center=rng.normal(size=3), focal=55.5,
                 principal_point=np.array([31.5, 23.5]), width=64, height=48)
    path = os.path.join(tmp_path, "cam.json")
    save_camera_json(path, cam)
    back = load_camera_json(path)
    assert np.allclose(back.rotation, cam.rotation, atol=1e-15)
    assert np.allclose(back.center, cam.center, atol=1e-15)
    assert back.focal == cam.focal
    assert back.width == cam.width and back.height == cam.height
