"""Training objective terms and background compositing.

Every operation has a matching *_backward returning gradients w.r.t. its
differentiable inputs. Image terms work on (H, W, 3) float arrays; scalar
terms are plain functions of their scalar or vector inputs.

The perceptual term is a two-level Gaussian-pyramid L1 surrogate, not a
learned feature loss; reports label it as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, LengthMismatch, NonFiniteLoss,
                     NonPositiveScale)

PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
NORM_EPS = 1e-12


@dataclass
class LossWeights:
    lambda_p: float = 0.5
    lambda_m: float = 5.0
    tau: float = 50.0
    lambda_sigma: float = 1e-4
    lambda_c: float = 1.0
    lambda_j: float = 1.0

    def __post_init__(self):
        for name in ("lambda_p", "lambda_m", "tau", "lambda_sigma",
                     "lambda_c", "lambda_j"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_json(self) -> dict:
        return {"lambda_p": self.lambda_p, "lambda_m": self.lambda_m,
                "tau": self.tau, "lambda_sigma": self.lambda_sigma,
                "lambda_c": self.lambda_c, "lambda_j": self.lambda_j}

    @staticmethod
    def from_json(d: dict) -> "LossWeights":
        return LossWeights(**d)


@dataclass
class LossBreakdown:
    total: float
    L_d: float
    L_e: float
    L_p: float
    L_m: float
    L_sigma: float
    L_c: float
    L_j: float

    def to_json(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("total", "L_d", "L_e", "L_p", "L_m", "L_sigma", "L_c", "L_j")}


def _as_array(img) -> np.ndarray:
    data = img.as_f64() if hasattr(img, "as_f64") else np.asarray(img, dtype=np.float64)
    return data


def composite_over_background(rgba, bg: np.ndarray) -> np.ndarray:
    """Premultiplied color over a constant background: out = C + (1-A)*bg."""
    data = _as_array(rgba)
    if data.ndim != 3 or data.shape[2] != 4:
        raise DimensionMismatch(f"expected RGBA, got shape {data.shape}")
    bg = np.asarray(bg, dtype=np.float64).reshape(3)
    return data[:, :, :3] + (1.0 - data[:, :, 3:4]) * bg


def composite_backward(g_out: np.ndarray, bg: np.ndarray):
    """Returns (d_color, d_alpha) for the premultiplied RGBA input."""
    bg = np.asarray(bg, dtype=np.float64).reshape(3)
    d_color = g_out.copy()
    d_alpha = -(g_out @ bg)
    return d_color, d_alpha


def loss_euclidean_rgb(X, Y) -> float:
    """Mean over pixels of the Euclidean RGB distance."""
    x, y = _as_array(X), _as_array(Y)
    if x.shape != y.shape or x.ndim != 3 or x.shape[2] != 3:
        raise DimensionMismatch(f"shapes {x.shape} vs {y.shape}")
    r = x - y
    return float(np.mean(np.linalg.norm(r, axis=2)))


def loss_euclidean_rgb_backward(X, Y, g: float = 1.0) -> np.ndarray:
    """d loss / dX; dY is its negation. Zero-residual pixels get zero."""
    x, y = _as_array(X), _as_array(Y)
    r = x - y
    n = np.linalg.norm(r, axis=2, keepdims=True)
    npix = x.shape[0] * x.shape[1]
    return np.where(n > NORM_EPS, r / np.maximum(n, NORM_EPS), 0.0) * (g / npix)


def _reflect_idx(idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.abs(idx)
    return np.where(idx >= n, 2 * n - 2 - idx, idx)


def _down_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Blur with the binomial kernel (reflect padding) and keep every 2nd sample."""
    n = x.shape[axis]
    m = (n + 1) // 2
    out = np.zeros(x.shape[:axis] + (m,) + x.shape[axis + 1:])
    centers = 2 * np.arange(m)
    for t in range(5):
        src = _reflect_idx(centers + t - 2, n)
        out += PYR_KERNEL[t] * np.take(x, src, axis=axis)
    return out


def _down_axis_adjoint(g: np.ndarray, axis: int, n: int) -> np.ndarray:
    out = np.zeros(g.shape[:axis] + (n,) + g.shape[axis + 1:])
    m = g.shape[axis]
    centers = 2 * np.arange(m)
    moved = np.moveaxis(out, axis, 0)
    g_moved = np.moveaxis(g, axis, 0)
    for t in range(5):
        src = _reflect_idx(centers + t - 2, n)
        np.add.at(moved, src, PYR_KERNEL[t] * g_moved)
    return out


def pyr_down(x: np.ndarray) -> np.ndarray:
    return _down_axis(_down_axis(x, 0), 1)


def pyr_down_adjoint(g: np.ndarray, shape) -> np.ndarray:
    return _down_axis_adjoint(_down_axis_adjoint(g, 1, shape[1]), 0, shape[0])


def loss_perceptual_surrogate(X, Y) -> float:
    """Mean absolute difference averaged over full and half resolution."""
    x, y = _as_array(X), _as_array(Y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes {x.shape} vs {y.shape}")
    l0 = np.mean(np.abs(x - y))
    l1 = np.mean(np.abs(pyr_down(x) - pyr_down(y)))
    return float(0.5 * (l0 + l1))


def loss_perceptual_surrogate_backward(X, Y, g: float = 1.0) -> np.ndarray:
    x, y = _as_array(X), _as_array(Y)
    r0 = x - y
    d0 = np.sign(r0) / r0.size
    xd, yd = pyr_down(x), pyr_down(y)
    r1 = xd - yd
    d1 = pyr_down_adjoint(np.sign(r1) / r1.size, x.shape)
    return 0.5 * g * (d0 + d1)


def loss_opacity_mean(sigma_bar: np.ndarray, tau: float) -> float:
    """Penalty that spikes when any layer's mean opacity collapses to zero."""
    sb = np.asarray(sigma_bar, dtype=np.float64).reshape(-1)
    return float(np.mean(np.exp(-tau * sb)))


def loss_opacity_mean_backward(sigma_bar: np.ndarray, tau: float,
                               g: float = 1.0) -> np.ndarray:
    sb = np.asarray(sigma_bar, dtype=np.float64).reshape(-1)
    return g * (-tau / sb.size) * np.exp(-tau * sb)


def loss_opacity_bias(sigma_bar: np.ndarray) -> float:
    """Gentle push of every layer's mean opacity toward one."""
    sb = np.asarray(sigma_bar, dtype=np.float64).reshape(-1)
    return float(np.mean(1.0 - sb))


def loss_opacity_bias_backward(sigma_bar: np.ndarray, g: float = 1.0) -> np.ndarray:
    sb = np.asarray(sigma_bar, dtype=np.float64).reshape(-1)
    return np.full(sb.shape, -g / sb.size)


def loss_scale_reg(s: float) -> float:
    if s <= 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return float(np.log(s) ** 2)


def loss_scale_reg_backward(s: float, g: float = 1.0) -> float:
    if s <= 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return g * 2.0 * np.log(s) / s


def loss_jitter(renders_a, renders_b) -> float:
    """Mean over paired views of the per-pixel, per-channel MSE."""
    if len(renders_a) != len(renders_b):
        raise LengthMismatch(f"{len(renders_a)} vs {len(renders_b)} renders")
    if not renders_a:
        return 0.0
    acc = 0.0
    for a, b in zip(renders_a, renders_b):
        xa, xb = _as_array(a), _as_array(b)
        if xa.shape != xb.shape:
            raise LengthMismatch(f"paired shapes {xa.shape} vs {xb.shape}")
        acc += np.mean((xa - xb) ** 2)
    return float(acc / len(renders_a))


def loss_jitter_backward(renders_a, renders_b, g: float = 1.0):
    """Per-pair gradients: list of dL/dA arrays (dL/dB is the negation)."""
    n = len(renders_a)
    grads = []
    for a, b in zip(renders_a, renders_b):
        xa, xb = _as_array(a), _as_array(b)
        grads.append(2.0 * (xa - xb) * (g / (n * xa.size)))
    return grads


def total_loss(parts: dict, weights: LossWeights) -> LossBreakdown:
    """Assemble the weighted objective from already view-averaged parts.

    parts carries L_e, L_p, L_m, L_sigma, L_c, L_j. The data term folds the
    perceptual surrogate: L_d = L_e + lambda_p * L_p.
    """
    vals = {k: float(parts[k]) for k in ("L_e", "L_p", "L_m", "L_sigma", "L_c", "L_j")}
    for k, v in vals.items():
        if not np.isfinite(v):
            raise NonFiniteLoss(f"{k} is not finite: {v}")
    L_d = vals["L_e"] + weights.lambda_p * vals["L_p"]
    total = (L_d + weights.lambda_sigma * vals["L_sigma"]
             + weights.lambda_m * vals["L_m"] + weights.lambda_c * vals["L_c"]
             + weights.lambda_j * vals["L_j"])
    if not np.isfinite(total):
        raise NonFiniteLoss(f"total is not finite: {total}")
    return LossBreakdown(total=total, L_d=L_d, L_e=vals["L_e"], L_p=vals["L_p"],
                         L_m=vals["L_m"], L_sigma=vals["L_sigma"],
                         L_c=vals["L_c"], L_j=vals["L_j"])
