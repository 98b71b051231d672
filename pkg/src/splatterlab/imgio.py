"""Image and camera file I/O.

PNG: 8-bit, linear storage (no transfer curve); values are clamped to [0,1]
and scaled by 255. RGBA color planes are stored as-is, which for rendered
output means premultiplied alpha.

PFM: little-endian, scale -1.0, rows bottom-to-top per the format convention.
Used for depth maps in meters.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image as PilImage

from .core import Camera, Image
from .errors import IoError


def save_png(path: str, img: Image) -> None:
    a = img.data
    if img.channels not in (1, 3, 4):
        raise IoError(f"PNG supports 1/3/4 channels, got {img.channels}")
    u8 = np.clip(np.rint(np.clip(a, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    mode = {1: "L", 3: "RGB", 4: "RGBA"}[img.channels]
    if img.channels == 1:
        u8 = u8[:, :, 0]
    PilImage.fromarray(u8, mode=mode).save(path, format="PNG")


def load_png(path: str) -> Image:
    try:
        with PilImage.open(path) as im:
            a = np.asarray(im)
    except OSError as e:
        raise IoError(str(e)) from e
    if a.dtype != np.uint8:
        raise IoError(f"expected 8-bit PNG at {path}")
    return Image(a.astype(np.float32) / 255.0)


def save_pfm(path: str, depth: np.ndarray) -> None:
    """Write a single-channel float32 PFM (little-endian, scale -1.0)."""
    d = np.asarray(depth, dtype=np.float32)
    if d.ndim == 3:
        if d.shape[2] != 1:
            raise IoError("PFM writer takes a single channel")
        d = d[:, :, 0]
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(d[::-1, :]).tobytes())


def load_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise IoError(f"not a grayscale PFM: {path}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        data = np.frombuffer(f.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h:
        raise IoError(f"truncated PFM: {path}")
    return np.ascontiguousarray(data.reshape(h, w)[::-1, :]).astype(np.float32)


def save_camera_json(path: str, cam: Camera) -> None:
    with open(path, "w") as f:
        json.dump(cam.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")


def load_camera_json(path: str) -> Camera:
    with open(path) as f:
        return Camera.from_json(json.load(f))


def write_json(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def read_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)
