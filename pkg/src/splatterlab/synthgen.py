"""Procedural multi-view dataset generation with a ray-tracing oracle.

Scenes are textured ellipsoid assemblies ("heads"): one large body plus a
few surface features, shaded by a fixed directional light. Views follow the
capture protocol: one input camera at arm's-length distance with the head
placed loosely in frame, plus ten closer supervision cameras aimed at the
head center on a spherical cap around the input direction.

The ray tracer here is the ground-truth oracle for fitting and evaluation.
It must stay independent of the Gaussian rasterizer: nothing in this module
may import from rasterizer.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, asdict

import numpy as np

from .core import (Camera, Image, lookat_rotation, minimal_rotation,
                   quat_to_rotation, rng_for)
from .errors import IoError, RejectionExhausted, ValidationError
from .imgio import (load_camera_json, load_pfm, load_png, read_json,
                    save_camera_json, save_pfm, save_png, write_json)
from .roi import FaceBox

DATASET_FORMAT = "splatterlab-ds/1"
N_SUPERVISION = 10
SUP_DISTANCE = 0.35
AMBIENT = 0.3
DIFFUSE = 0.7


@dataclass
class Ellipsoid:
    center: np.ndarray
    semi_axes: np.ndarray
    rotation: np.ndarray
    base_color: np.ndarray
    albedo_seed: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.semi_axes = np.asarray(self.semi_axes, dtype=np.float64).reshape(3)
        if np.any(self.semi_axes <= 0):
            raise ValueError("semi-axes must be positive")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.base_color = np.asarray(self.base_color, dtype=np.float64).reshape(3)


@dataclass
class ProceduralScene:
    primitives: list
    light_dir: np.ndarray
    face_axis: np.ndarray
    seed: int

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64).reshape(3)
        self.face_axis = np.asarray(self.face_axis, dtype=np.float64).reshape(3)

    @property
    def head(self) -> Ellipsoid:
        return self.primitives[0]

    @property
    def head_center(self) -> np.ndarray:
        return self.head.center


@dataclass
class DatasetConfig:
    n_samples: int = 1
    input_size: tuple = (96, 64)  # (W, H)
    sup_size: tuple = (64, 64)
    dist_min: float = 0.4
    dist_max: float = 1.0
    sup_distance: float = SUP_DISTANCE
    cap_deg: float = 45.0
    face_deg: float = 30.0
    fov_deg: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.dist_min <= 0 or self.dist_max < self.dist_min:
            raise ValueError("invalid distance range")
        if not (0.0 < self.cap_deg <= 90.0):
            raise ValueError("cap angle must be in (0, 90] degrees")
        self.input_size = tuple(int(v) for v in self.input_size)
        self.sup_size = tuple(int(v) for v in self.sup_size)

    def to_json(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["sup_size"] = list(self.sup_size)
        return d

    @staticmethod
    def from_json(d: dict) -> "DatasetConfig":
        d = dict(d)
        d["input_size"] = tuple(d["input_size"])
        d["sup_size"] = tuple(d["sup_size"])
        return DatasetConfig(**d)


@dataclass
class MultiViewSample:
    input_cam: Camera
    input_rgba: Image
    input_depth: np.ndarray
    input_mask: np.ndarray
    box: FaceBox
    sup_cams: list
    sup_rgba: list
    sup_depth: list
    sup_mask: list
    bg_seed: int

    @property
    def n_views(self) -> int:
        return 1 + len(self.sup_cams)

    def all_cams(self) -> list:
        return [self.input_cam] + list(self.sup_cams)

    def all_rgba(self) -> list:
        return [self.input_rgba] + list(self.sup_rgba)


def background_color(bg_seed: int) -> np.ndarray:
    return rng_for(bg_seed, 500).uniform(0.0, 1.0, size=3)


# --- value-noise albedo -----------------------------------------------------

_U32 = np.uint32


def _hash_lattice(ix, iy, iz, seed: int):
    with np.errstate(over="ignore"):
        h = (ix.astype(_U32) * _U32(374761393)
             + iy.astype(_U32) * _U32(668265263)
             + iz.astype(_U32) * _U32(974593) + _U32(seed & 0x7FFFFFFF) * _U32(2654435761))
        h ^= h >> _U32(13)
        h *= _U32(1274126177)
        h ^= h >> _U32(16)
    return h.astype(np.float64) / 4294967296.0


def value_noise(p: np.ndarray, seed: int) -> np.ndarray:
    """Smoothstep-interpolated lattice noise in [0, 1), shape = p.shape[:-1]."""
    i = np.floor(p).astype(np.int64)
    f = p - i
    s = f * f * (3.0 - 2.0 * f)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                v = _hash_lattice(i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz, seed)
                w = ((s[..., 0] if dx else 1 - s[..., 0])
                     * (s[..., 1] if dy else 1 - s[..., 1])
                     * (s[..., 2] if dz else 1 - s[..., 2]))
                out += v * w
    return out


def _albedo(prim: Ellipsoid, p_world: np.ndarray) -> np.ndarray:
    """3-octave value-noise modulation of the primitive's base color."""
    q = (p_world - prim.center) @ prim.rotation / prim.semi_axes
    out = np.zeros(p_world.shape[:-1] + (3,))
    for c in range(3):
        n = np.zeros(p_world.shape[:-1])
        freq, amp = 2.5, 0.5
        for octave in range(3):
            n += amp * value_noise(q * freq, prim.albedo_seed * 4 + c + 17 * octave)
            freq *= 2.0
            amp *= 0.5
        out[..., c] = np.clip(prim.base_color[c] * (0.55 + 0.9 * n), 0.02, 1.0)
    return out


# --- scene construction -----------------------------------------------------

def _unit_in_cap(rng, axis: np.ndarray, max_deg: float) -> np.ndarray:
    """Uniform direction within max_deg of axis."""
    cos_t = rng.uniform(np.cos(np.radians(max_deg)), 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    local = np.array([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
    return minimal_rotation(np.array([0.0, 0.0, 1.0]), axis) @ local


def _random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_to_rotation(q)


def build_scene(seed: int) -> ProceduralScene:
    """A head ellipsoid with 2-5 surface features, deterministic in seed."""
    rng = rng_for(seed, 100)
    face_axis = rng.normal(size=3)
    face_axis /= np.linalg.norm(face_axis)
    head_semi = rng.uniform(0.09, 0.11, size=3)
    r_head = minimal_rotation(np.array([0.0, 0.0, 1.0]), face_axis)
    prims = [Ellipsoid(
        center=np.zeros(3), semi_axes=head_semi, rotation=r_head,
        base_color=rng.uniform(0.35, 0.9, size=3),
        albedo_seed=int(rng.integers(2 ** 31)),
    )]
    for _ in range(int(rng.integers(2, 6))):
        cos_t = rng.uniform(0.3, 1.0)  # biased toward the face side
        phi = rng.uniform(0.0, 2.0 * np.pi)
        sin_t = np.sqrt(1.0 - cos_t * cos_t)
        d_local = np.array([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
        prims.append(Ellipsoid(
            center=r_head @ (d_local * head_semi),
            semi_axes=rng.uniform(0.015, 0.04, size=3),
            rotation=_random_rotation(rng),
            base_color=rng.uniform(0.2, 0.95, size=3),
            albedo_seed=int(rng.integers(2 ** 31)),
        ))
    light = face_axis + rng.normal(0.0, 0.4, size=3)
    light /= np.linalg.norm(light)
    return ProceduralScene(primitives=prims, light_dir=light,
                           face_axis=face_axis, seed=seed)


def scene_bounding_radius(scene: ProceduralScene) -> float:
    r = 0.0
    for p in scene.primitives:
        r = max(r, float(np.linalg.norm(p.center - scene.head_center)
                         + np.max(p.semi_axes)))
    return r


# --- ray tracing ------------------------------------------------------------

def _trace_rays(scene: ProceduralScene, origin: np.ndarray,
                dirs: np.ndarray) -> tuple:
    """Nearest-hit over primitives. dirs (..., 3) world, unnormalized.

    Returns (t, prim_index) with t = +inf and index -1 on miss; t is the
    ray parameter, which equals camera-frame depth when dirs have unit z in
    the camera frame.
    """
    flat = dirs.reshape(-1, 3)
    t_best = np.full(flat.shape[0], np.inf)
    idx_best = np.full(flat.shape[0], -1, dtype=np.int64)
    for pi, prim in enumerate(scene.primitives):
        A = (prim.rotation / prim.semi_axes[:, None]).T  # diag(1/a) @ R^T
        oc = A @ (origin - prim.center)
        dd = flat @ A.T
        a = np.sum(dd * dd, axis=1)
        b = 2.0 * (dd @ oc)
        c = float(oc @ oc) - 1.0
        disc = b * b - 4.0 * a * c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = (-b - sq) / (2.0 * a)
        ok &= t > 1e-6
        better = ok & (t < t_best)
        t_best = np.where(better, t, t_best)
        idx_best = np.where(better, pi, idx_best)
    return t_best.reshape(dirs.shape[:-1]), idx_best.reshape(dirs.shape[:-1])


def _shade_hits(scene: ProceduralScene, origin: np.ndarray, dirs: np.ndarray,
                t: np.ndarray, idx: np.ndarray) -> np.ndarray:
    flat_d = dirs.reshape(-1, 3)
    flat_t = t.reshape(-1)
    flat_i = idx.reshape(-1)
    color = np.zeros((flat_d.shape[0], 3))
    for pi, prim in enumerate(scene.primitives):
        sel = flat_i == pi
        if not np.any(sel):
            continue
        p = origin + flat_t[sel, None] * flat_d[sel]
        A = (prim.rotation / prim.semi_axes[:, None]).T
        n = (p - prim.center) @ (A.T @ A).T
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        facing = np.sum(n * flat_d[sel], axis=1) > 0
        n[facing] *= -1.0
        lam = AMBIENT + DIFFUSE * np.maximum(0.0, n @ scene.light_dir)
        color[sel] = _albedo(prim, p) * lam[:, None]
    return color.reshape(dirs.shape[:-1] + (3,))


def raytrace_view(scene: ProceduralScene, cam: Camera,
                  resolution: tuple | None = None) -> tuple:
    """Render (RGBA Image, depth array) by ray tracing.

    Color and alpha are 2x2 supersampled (premultiplied-alpha average of the
    four sub-rays); depth is the center-ray hit distance, zeroed on pixels
    whose supersampled alpha is zero so masked consumers never see a stray
    depth. A fully covered pixel whose center ray slips through a gap
    between primitives (possible on concave silhouettes) takes the mean of
    its sub-ray depths instead, so full coverage always implies depth > 0.
    """
    W, H = (cam.width, cam.height) if resolution is None else resolution
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64),
                         np.arange(H, dtype=np.float64))
    color = np.zeros((H, W, 3))
    alpha = np.zeros((H, W))
    t_hit_sum = np.zeros((H, W))
    for du, dv in ((-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)):
        x = (jj + 0.5 + du - cam.principal_point[0]) / cam.focal
        y = (ii + 0.5 + dv - cam.principal_point[1]) / cam.focal
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        dirs = d_cam @ cam.rotation.T
        t, idx = _trace_rays(scene, cam.center, dirs)
        hit = idx >= 0
        color += np.where(hit[..., None],
                          _shade_hits(scene, cam.center, dirs, t, idx), 0.0) * 0.25
        alpha += hit * 0.25
        t_hit_sum += np.where(hit, t, 0.0)

    x = (jj + 0.5 - cam.principal_point[0]) / cam.focal
    y = (ii + 0.5 - cam.principal_point[1]) / cam.focal
    dirs = np.stack([x, y, np.ones_like(x)], axis=-1) @ cam.rotation.T
    t, idx = _trace_rays(scene, cam.center, dirs)
    depth = np.where((idx >= 0) & (alpha > 0), t, 0.0)
    stranded = (alpha >= 1.0) & (idx < 0)
    if np.any(stranded):
        depth[stranded] = 0.25 * t_hit_sum[stranded]
    rgba = np.concatenate([color, alpha[..., None]], axis=2).astype(np.float32)
    return Image(rgba), depth


# --- ground-truth face box --------------------------------------------------

def face_box_gt(scene: ProceduralScene, cam: Camera, margin: float = 1.2) -> FaceBox:
    """Square bounding box of the projected head ellipsoid, with margin.

    Uses the dual-quadric projection: the ellipsoid's dual Q* maps through
    the camera matrix to a dual conic whose axis-aligned tangent lines give
    exact extents.
    """
    head = scene.head
    T = np.eye(4)
    T[:3, :3] = head.rotation @ np.diag(head.semi_axes)
    T[:3, 3] = head.center
    q_dual = T @ np.diag([1.0, 1.0, 1.0, -1.0]) @ T.T
    P = np.zeros((3, 4))
    P[:, :3] = cam.intrinsics() @ cam.rotation.T
    P[:, 3] = -cam.intrinsics() @ cam.rotation.T @ cam.center
    C = P @ q_dual @ P.T
    if C[2, 2] < 0:
        C = -C  # dual conic is homogeneous; fix the sign so roots order
    disc_x = C[0, 2] ** 2 - C[0, 0] * C[2, 2]
    disc_y = C[1, 2] ** 2 - C[1, 1] * C[2, 2]
    if disc_x < 0 or disc_y < 0 or abs(C[2, 2]) < 1e-15:
        raise RejectionExhausted("head does not project to a bounded ellipse")
    x_lo = (C[0, 2] - np.sqrt(disc_x)) / C[2, 2]
    x_hi = (C[0, 2] + np.sqrt(disc_x)) / C[2, 2]
    y_lo = (C[1, 2] - np.sqrt(disc_y)) / C[2, 2]
    y_hi = (C[1, 2] + np.sqrt(disc_y)) / C[2, 2]
    center = np.array([(x_lo + x_hi) / 2.0, (y_lo + y_hi) / 2.0])
    size = margin * max(x_hi - x_lo, y_hi - y_lo)
    return FaceBox(center=center, size=size)


# --- cameras ----------------------------------------------------------------

def _focal_for(width: int, fov_deg: float) -> float:
    return (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)


def sample_cameras(scene: ProceduralScene, cfg: DatasetConfig,
                   sample_seed: int) -> tuple:
    """Input camera plus ten supervision cameras per the capture protocol.

    The input camera sits at a random distance in [dist_min, dist_max] along
    a direction within face_deg of the face axis, oriented so the head lands
    uniformly in the central 60% of the frame. Supervision cameras sit at
    sup_distance on a cap_deg cap around the input direction, all aimed
    exactly at the head center.
    """
    rng = rng_for(cfg.seed, 200, sample_seed)
    head = scene.head_center
    dist = rng.uniform(cfg.dist_min, cfg.dist_max)
    w_dir = _unit_in_cap(rng, scene.face_axis, cfg.face_deg)
    center = head + dist * w_dir
    W, H = cfg.input_size
    focal = _focal_for(W, cfg.fov_deg)
    pp = np.array([W / 2.0, H / 2.0])
    r_base = lookat_rotation(center, head)

    cam_in = None
    for _ in range(1000):
        px = rng.uniform(0.2 * W, 0.8 * W)
        py = rng.uniform(0.2 * H, 0.8 * H)
        d_cam = np.array([(px - pp[0]) / focal, (py - pp[1]) / focal, 1.0])
        d_cam /= np.linalg.norm(d_cam)
        rot = r_base @ minimal_rotation(d_cam, np.array([0.0, 0.0, 1.0]))
        cand = Camera(rotation=rot, center=center, focal=focal,
                      principal_point=pp, width=W, height=H)
        try:
            box = face_box_gt(scene, cand)
        except RejectionExhausted:
            continue
        cx, cy = box.center
        if 0.1 * W <= cx <= 0.9 * W and 0.1 * H <= cy <= 0.9 * H \
                and 2.0 * np.arctan(box.size / (2.0 * focal)) < np.radians(55.0):
            cam_in = cand
            break
    if cam_in is None:
        raise RejectionExhausted("could not frame the head in 1000 attempts")

    Ws, Hs = cfg.sup_size
    focal_s = _focal_for(Ws, cfg.fov_deg)
    pp_s = np.array([Ws / 2.0, Hs / 2.0])
    sup = []
    for _ in range(N_SUPERVISION):
        u = _unit_in_cap(rng, w_dir, cfg.cap_deg)
        c = head + cfg.sup_distance * u
        sup.append(Camera(rotation=lookat_rotation(c, head), center=c,
                          focal=focal_s, principal_point=pp_s,
                          width=Ws, height=Hs))
    return cam_in, sup


# --- dataset I/O ------------------------------------------------------------

def _sample_dir(root: str, i: int) -> str:
    return os.path.join(root, f"sample_{i:04d}")


def _quantize_rgba(img: Image) -> Image:
    """Snap to the 8-bit grid save_png/load_png use, so in-memory samples
    equal their disk round-trip bit for bit."""
    u8 = np.clip(np.rint(np.clip(img.data, 0.0, 1.0) * 255.0), 0, 255)
    return Image((u8.astype(np.uint8).astype(np.float32)) / 255.0)


def generate_sample(cfg: DatasetConfig, index: int):
    """Build one sample fully in memory; deterministic in (cfg.seed, index)."""
    root_rng = rng_for(cfg.seed, 700, index)
    scene_seed = int(root_rng.integers(2 ** 31))
    bg_seed = int(root_rng.integers(2 ** 31))
    scene = build_scene(scene_seed)
    cam_in, sup_cams = sample_cameras(scene, cfg, index)
    rgba_in, depth_in = raytrace_view(scene, cam_in)
    rgba_in = _quantize_rgba(rgba_in)
    depth_in = depth_in.astype(np.float32)
    box = face_box_gt(scene, cam_in)
    sup_rgba, sup_depth = [], []
    for cam in sup_cams:
        rgba, depth = raytrace_view(scene, cam)
        sup_rgba.append(_quantize_rgba(rgba))
        sup_depth.append(depth.astype(np.float32))
    sample = MultiViewSample(
        input_cam=cam_in, input_rgba=rgba_in, input_depth=depth_in,
        input_mask=(rgba_in.alpha() > 0.5).astype(np.float64), box=box,
        sup_cams=sup_cams, sup_rgba=sup_rgba, sup_depth=sup_depth,
        sup_mask=[(r.alpha() > 0.5).astype(np.float64) for r in sup_rgba],
        bg_seed=bg_seed,
    )
    meta = {
        "format": DATASET_FORMAT,
        "sample_index": index,
        "scene_seed": scene_seed,
        "bg_seed": bg_seed,
        "head_center": [float(v) for v in scene.head_center],
        "face_axis": [float(v) for v in scene.face_axis],
        "config": cfg.to_json(),
    }
    return sample, meta


def _mask_image(mask: np.ndarray) -> Image:
    return Image(mask.astype(np.float32)[..., None])


def write_sample(dirpath: str, sample: MultiViewSample, meta: dict) -> None:
    os.makedirs(dirpath, exist_ok=True)
    cams = {"input": sample.input_cam.to_json(),
            "supervision": [c.to_json() for c in sample.sup_cams]}
    write_json(os.path.join(dirpath, "cameras.json"), cams)
    write_json(os.path.join(dirpath, "face_box.json"), sample.box.to_json())
    save_png(os.path.join(dirpath, "input.png"), sample.input_rgba)
    save_pfm(os.path.join(dirpath, "input_depth.pfm"), sample.input_depth)
    save_png(os.path.join(dirpath, "input_mask.png"), _mask_image(sample.input_mask))
    for k in range(len(sample.sup_cams)):
        save_png(os.path.join(dirpath, f"view_{k + 1:02d}.png"), sample.sup_rgba[k])
        save_pfm(os.path.join(dirpath, f"view_{k + 1:02d}_depth.pfm"),
                 sample.sup_depth[k])
        save_png(os.path.join(dirpath, f"view_{k + 1:02d}_mask.png"),
                 _mask_image(sample.sup_mask[k]))
    write_json(os.path.join(dirpath, "manifest.json"), meta)


def generate_dataset(cfg: DatasetConfig, out_dir: str) -> str:
    """Write cfg.n_samples sample directories plus a top-level manifest."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(cfg.n_samples):
        sample, meta = generate_sample(cfg, i)
        d = _sample_dir(out_dir, i)
        write_sample(d, sample, meta)
        names.append(os.path.basename(d))
    write_json(os.path.join(out_dir, "manifest.json"), {
        "format": DATASET_FORMAT,
        "n_samples": cfg.n_samples,
        "samples": names,
        "config": cfg.to_json(),
    })
    return out_dir


def load_sample(dirpath: str) -> MultiViewSample:
    cams = read_json(os.path.join(dirpath, "cameras.json"))
    cam_in = Camera.from_json(cams["input"])
    sup_cams = [Camera.from_json(c) for c in cams["supervision"]]
    box = FaceBox.from_json(read_json(os.path.join(dirpath, "face_box.json")))
    meta = read_json(os.path.join(dirpath, "manifest.json"))
    rgba_in = load_png(os.path.join(dirpath, "input.png"))
    depth_in = load_pfm(os.path.join(dirpath, "input_depth.pfm"))
    mask_in = load_png(os.path.join(dirpath, "input_mask.png")).as_f64()[..., 0]
    sup_rgba, sup_depth, sup_mask = [], [], []
    for k in range(len(sup_cams)):
        sup_rgba.append(load_png(os.path.join(dirpath, f"view_{k + 1:02d}.png")))
        sup_depth.append(load_pfm(os.path.join(dirpath, f"view_{k + 1:02d}_depth.pfm")))
        sup_mask.append(load_png(
            os.path.join(dirpath, f"view_{k + 1:02d}_mask.png")).as_f64()[..., 0])
    return MultiViewSample(
        input_cam=cam_in, input_rgba=rgba_in, input_depth=depth_in,
        input_mask=mask_in, box=box, sup_cams=sup_cams, sup_rgba=sup_rgba,
        sup_depth=sup_depth, sup_mask=sup_mask, bg_seed=int(meta["bg_seed"]),
    )


def validate_dataset(root: str) -> list:
    """Check every sample against the capture-protocol bounds.

    Returns a list of problem strings; empty means the dataset is valid.
    """
    problems = []
    try:
        manifest = read_json(os.path.join(root, "manifest.json"))
    except IoError as e:
        return [str(e)]
    if manifest.get("format") != DATASET_FORMAT:
        problems.append(f"unknown format {manifest.get('format')!r}")
        return problems
    cfg = DatasetConfig.from_json(manifest["config"])
    eps = 1e-6
    for name in manifest["samples"]:
        d = os.path.join(root, name)
        try:
            sample = load_sample(d)
            meta = read_json(os.path.join(d, "manifest.json"))
        except (IoError, OSError, KeyError, ValueError) as e:
            problems.append(f"{name}: unreadable ({e})")
            continue
        head = np.array(meta["head_center"], dtype=np.float64)
        axis = np.array(meta["face_axis"], dtype=np.float64)
        if sample.n_views != 1 + N_SUPERVISION:
            problems.append(f"{name}: expected {1 + N_SUPERVISION} views")
        dist = float(np.linalg.norm(sample.input_cam.center - head))
        if not (cfg.dist_min - eps <= dist <= cfg.dist_max + eps):
            problems.append(f"{name}: input distance {dist:.4f} out of range")
        w_dir = (sample.input_cam.center - head) / dist
        face_ang = np.degrees(np.arccos(np.clip(w_dir @ axis, -1, 1)))
        if face_ang > cfg.face_deg + 1e-4:
            problems.append(f"{name}: face angle {face_ang:.2f} deg too large")
        for k, cam in enumerate(sample.sup_cams):
            sd = float(np.linalg.norm(cam.center - head))
            if abs(sd - cfg.sup_distance) > 1e-6:
                problems.append(f"{name}: view {k + 1} distance {sd:.4f}")
            u = (cam.center - head) / sd
            cap = np.degrees(np.arccos(np.clip(u @ w_dir, -1, 1)))
            if cap > cfg.cap_deg + 1e-4:
                problems.append(f"{name}: view {k + 1} cap angle {cap:.2f} deg")
            look = cam.rotation[:, 2]
            aim = float(np.linalg.norm(np.cross(look, head - cam.center)))
            if aim > 1e-6 * sd:
                problems.append(f"{name}: view {k + 1} not aimed at the head")
        quant = 0.5 / 255.0 + 1e-6
        for label, rgba, depth, mask in (
                [("input", sample.input_rgba, sample.input_depth, sample.input_mask)]
                + [(f"view_{k + 1:02d}", sample.sup_rgba[k], sample.sup_depth[k],
                    sample.sup_mask[k]) for k in range(len(sample.sup_cams))]):
            a = rgba.alpha().astype(np.float64)
            if not np.array_equal(mask > 0.5, a > 0.5):
                problems.append(f"{name}/{label}: mask != (alpha > 0.5)")
            if np.any(depth[a <= quant] != 0.0):
                problems.append(f"{name}/{label}: depth on empty pixels")
            if np.any(depth[a >= 1.0 - quant] <= 0.0):
                problems.append(f"{name}/{label}: full-coverage pixel missing depth")
            if a.max() <= 0.0:
                problems.append(f"{name}/{label}: camera sees nothing")
        if not (0 <= sample.box.center[0] <= sample.input_cam.width
                and 0 <= sample.box.center[1] <= sample.input_cam.height):
            problems.append(f"{name}: face box center outside the image")
    return problems
