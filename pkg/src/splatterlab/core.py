"""Cameras, rotations, images, and the explicit Gaussian primitive.

Conventions used throughout the package:

- Camera frame is vision-style: +x right, +y down, +z forward. The stored
  rotation is world-from-camera, so a camera-frame vector v maps to world as
  R @ v and a world point p maps into the camera as R.T @ (p - center).
- Pixel (i, j) of an image (row i, column j) has its continuous center at
  (j + 0.5, i + 0.5). All projections and samplers use this convention.
- World units are meters. All internal math is float64; image payloads are
  stored float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonPositiveDepth

ROTATION_ORTHO_TOL = 1e-9


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    """Deterministic child generator for (seed, tags).

    Every documented random stream in the package draws from its own child
    so streams stay independent and reproducible.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, *[int(t) & 0x7FFFFFFF for t in tags]]))


# ---------------------------------------------------------------------------
# Quaternions and rotations (w, x, y, z convention)
# ---------------------------------------------------------------------------

def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for quaternions, normalizing internally.

    Accepts shape (4,) or (N, 4); zero-norm quaternions map to the identity.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    n = np.linalg.norm(q, axis=1, keepdims=True)
    qn = np.where(n > 0, q / np.where(n == 0, 1.0, n), np.array([1.0, 0.0, 0.0, 0.0]))
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    R = np.empty((len(qn), 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def quat_rotation_jacobian(q_unit: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions, shape (..., 4, 3, 3).

    Derivatives are of the un-normalized quadratic form evaluated at a unit
    quaternion; combine with the normalization projector for raw inputs.
    """
    q = np.atleast_2d(np.asarray(q_unit, dtype=np.float64))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    N = len(q)
    J = np.zeros((N, 4, 3, 3), dtype=np.float64)
    zero = np.zeros(N)
    # dR/dw
    J[:, 0] = 2 * np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    # dR/dx
    J[:, 1] = 2 * np.stack([
        np.stack([zero, y, z], axis=-1),
        np.stack([y, -2 * x, -w], axis=-1),
        np.stack([z, w, -2 * x], axis=-1),
    ], axis=-2)
    # dR/dy
    J[:, 2] = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=-1),
        np.stack([x, zero, z], axis=-1),
        np.stack([-w, z, -2 * y], axis=-1),
    ], axis=-2)
    # dR/dz
    J[:, 3] = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=-1),
        np.stack([w, -2 * z, y], axis=-1),
        np.stack([x, y, zero], axis=-1),
    ], axis=-2)
    return J if np.asarray(q_unit).ndim > 1 else J[0]


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b for (..., 4) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, v1 = a[..., 0], a[..., 1:]
    w2, v2 = b[..., 0], b[..., 1:]
    w = w1 * w2 - np.sum(v1 * v2, axis=-1)
    v = w1[..., None] * v2 + w2[..., None] * v1 + np.cross(v1, v2)
    return np.concatenate([w[..., None], v], axis=-1)


def quat_from_rotation(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) for an orthonormal 3x3 matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = float(np.dot(a, b))
    if c > 1.0 - 1e-15:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        # 180 degrees: rotate about any axis perpendicular to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-8:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    v = np.cross(a, b)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K * (1.0 / (1.0 + c))


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    """Pinhole camera with pose.

    rotation: 3x3 world-from-camera rotation (orthonormal within 1e-9).
    center: optical center in world meters.
    focal: focal length in pixels (square pixels, symmetric scaling).
    principal_point: (px, py) in pixels.
    width, height: image size in pixels.
    """

    rotation: np.ndarray
    center: np.ndarray
    focal: float
    principal_point: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        pp = np.asarray(self.principal_point, dtype=np.float64).reshape(2)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "principal_point", pp)
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not np.allclose(R.T @ R, np.eye(3), atol=ROTATION_ORTHO_TOL * 10):
            raise ValueError("camera rotation is not orthonormal")
        if self.focal <= 0:
            raise ValueError("focal must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be >= 1")

    @property
    def normalized_focal(self) -> float:
        return self.focal / self.width

    def intrinsics(self) -> np.ndarray:
        K = np.array([
            [self.focal, 0.0, self.principal_point[0]],
            [0.0, self.focal, self.principal_point[1]],
            [0.0, 0.0, 1.0],
        ])
        return K

    def world_to_cam(self, p_world: np.ndarray) -> np.ndarray:
        p = np.asarray(p_world, dtype=np.float64)
        return (p - self.center) @ self.rotation  # (p-c) @ R == R.T @ (p-c) rowwise

    def cam_to_world(self, p_cam: np.ndarray) -> np.ndarray:
        p = np.asarray(p_cam, dtype=np.float64)
        return p @ self.rotation.T + self.center

    def to_json(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "center": [float(v) for v in self.center],
            "focal": float(self.focal),
            "pp": [float(v) for v in self.principal_point],
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_json(d: dict) -> "Camera":
        return Camera(
            rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
            center=np.array(d["center"], dtype=np.float64),
            focal=float(d["focal"]),
            principal_point=np.array(d["pp"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def camera_project(cam: Camera, p_world: np.ndarray) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, camera-frame depth).

    Raises NonPositiveDepth when the camera-frame z is <= 1e-6.
    """
    p_cam = cam.rotation.T @ (np.asarray(p_world, dtype=np.float64) - cam.center)
    z = float(p_cam[2])
    if z <= 1e-6:
        raise NonPositiveDepth(f"point has non-positive camera depth {z:.3e}")
    pixel = cam.principal_point + cam.focal * p_cam[:2] / z
    return pixel, z


def camera_ray(cam: Camera, pixel: np.ndarray) -> np.ndarray:
    """World-frame unit direction through a continuous pixel position."""
    px, py = float(pixel[0]), float(pixel[1])
    d = np.array([
        (px - cam.principal_point[0]) / cam.focal,
        (py - cam.principal_point[1]) / cam.focal,
        1.0,
    ])
    d /= np.linalg.norm(d)
    return cam.rotation @ d


def camera_rays_grid(cam: Camera) -> np.ndarray:
    """(H, W, 3) world-frame unit rays through every pixel center."""
    ys = np.arange(cam.height) + 0.5
    xs = np.arange(cam.width) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    d = np.stack([
        (gx - cam.principal_point[0]) / cam.focal,
        (gy - cam.principal_point[1]) / cam.focal,
        np.ones_like(gx),
    ], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ cam.rotation.T


def compose_covariance(quat: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """World covariance R(q) diag(s^2) R(q)^T; q is normalized internally."""
    R = quat_to_rotation(quat)
    s = np.asarray(scales, dtype=np.float64)
    if R.ndim == 2:
        return (R * (s * s)) @ R.T
    return np.einsum("nij,nj,nkj->nik", R, s * s, R)


# ---------------------------------------------------------------------------
# Image
# ---------------------------------------------------------------------------

@dataclass
class Image:
    """Row-major float image, shape (height, width, channels).

    Channel meanings by count: 1 = depth (meters) or alpha, 3 = RGB in [0,1],
    4 = RGBA with premultiplied color. Other channel counts are allowed for
    derived feature maps (e.g. conditioning channels) but are not serializable.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] < 1:
            raise DimensionMismatch(f"image data must be (H, W, C>=1), got {a.shape}")
        self.data = np.ascontiguousarray(a, dtype=np.float32)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def as_f64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def rgb(self) -> np.ndarray:
        if self.channels < 3:
            raise DimensionMismatch("image has no RGB channels")
        return self.data[:, :, :3].astype(np.float64)

    def alpha(self) -> np.ndarray:
        if self.channels == 4:
            return self.data[:, :, 3].astype(np.float64)
        if self.channels == 1:
            return self.data[:, :, 0].astype(np.float64)
        raise DimensionMismatch("image has no alpha channel")


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gaussian3D:
    """One explicit splat primitive.

    mean: world position (m); rotation: unit quaternion (w, x, y, z);
    scales: positive standard deviations (m); opacity, color in [0,1].
    """

    mean: np.ndarray
    rotation: np.ndarray
    scales: np.ndarray
    opacity: float
    color: np.ndarray


GRAD_FIELDS = ("means", "quats", "scales", "opacities", "colors")


@dataclass
class GaussianSet:
    """Flat set of Gaussians (structure-of-arrays) plus a parallel gradient buffer.

    means (N,3), quats (N,4) unit, scales (N,3), opacities (N,), colors (N,3),
    all float64. grad holds one array per parameter field with identical shape.
    """

    means: np.ndarray
    quats: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    grad: dict = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.quats = np.ascontiguousarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64).reshape(n)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(n, 3)
        if not self.grad:
            self.zero_grad()

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[i].copy(),
            rotation=self.quats[i].copy(),
            scales=self.scales[i].copy(),
            opacity=float(self.opacities[i]),
            color=self.colors[i].copy(),
        )

    def zero_grad(self):
        self.grad = {
            "means": np.zeros_like(self.means),
            "quats": np.zeros_like(self.quats),
            "scales": np.zeros_like(self.scales),
            "opacities": np.zeros_like(self.opacities),
            "colors": np.zeros_like(self.colors),
        }

    def copy(self) -> "GaussianSet":
        gs = GaussianSet(
            means=self.means.copy(), quats=self.quats.copy(), scales=self.scales.copy(),
            opacities=self.opacities.copy(), colors=self.colors.copy(),
        )
        return gs

    @staticmethod
    def from_gaussians(gaussians) -> "GaussianSet":
        return GaussianSet(
            means=np.array([g.mean for g in gaussians], dtype=np.float64).reshape(-1, 3),
            quats=np.array([g.rotation for g in gaussians], dtype=np.float64).reshape(-1, 4),
            scales=np.array([g.scales for g in gaussians], dtype=np.float64).reshape(-1, 3),
            opacities=np.array([g.opacity for g in gaussians], dtype=np.float64).reshape(-1),
            colors=np.array([g.color for g in gaussians], dtype=np.float64).reshape(-1, 3),
        )


def lookat_rotation(eye: np.ndarray, target: np.ndarray, up_hint: np.ndarray | None = None) -> np.ndarray:
    """World-from-camera rotation looking from eye toward target.

    +z points at the target; +y is image-down, chosen so the world up_hint
    (default -world-z ... i.e. hint = (0,0,1) maps to image up) stays up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("lookat target coincides with eye")
    z = z / nz
    hint = np.array([0.0, 0.0, 1.0]) if up_hint is None else np.asarray(up_hint, dtype=np.float64)
    # +y is image-down; align -y with the up hint projected off the axis
    y = -(hint - np.dot(hint, z) * z)
    ny = np.linalg.norm(y)
    if ny < 1e-8:
        # axis parallel to the hint: fall back to world x as the down direction
        y = np.array([1.0, 0.0, 0.0]) - z * z[0]
        y /= np.linalg.norm(y)
    else:
        y = y / ny
    x = np.cross(y, z)
    R = np.stack([x, y, z], axis=1)
    return R
