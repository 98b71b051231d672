"""Differentiable Gaussian-splat fitting on procedural multi-view scenes."""

from .core import (Camera, GaussianSet, Image, camera_rays_grid,
                   compose_covariance, lookat_rotation, minimal_rotation,
                   quat_from_rotation, quat_mul, quat_to_rotation, rng_for)
from .errors import (BoxOutsideFrustum, CameraCenterMismatch,
                     DimensionMismatch, EmptyMask, EmptyOverlap, IoError,
                     LengthMismatch, NonFiniteLoss, NonPositiveDepth,
                     NonPositiveScale, RejectionExhausted, ShapeMismatch,
                     SingularCovariance, SplatterError, ValidationError)
from .evaluation import (MetricsReport, evaluate_fit, geometry_normals,
                         geometry_render, jitter_eval, jitter_metric, psnr,
                         ssim)
from .gradcheck import SuiteResult, run_all
from .imgio import (load_camera_json, load_pfm, load_png, read_json,
                    save_camera_json, save_pfm, save_png, write_json)
from .losses import (LossBreakdown, LossWeights, composite_over_background,
                     loss_euclidean_rgb, loss_jitter, loss_opacity_bias,
                     loss_opacity_mean, loss_perceptual_surrogate,
                     loss_scale_reg, pyr_down, total_loss)
from .rasterizer import (RenderCache, RenderOutput, render, render_backward,
                         render_reference)
from .roi import (FaceBox, RoiMapping, build_roi_camera, conditioning_channels,
                  gaussians_to_source_frame, warp_image)
from .splatter import (DecodeConfig, SplatterImage, decode, decode_backward,
                       direct_color_sample, init_params, layer_mean_opacity,
                       load_splatter, save_splatter)
from .synthgen import (DatasetConfig, MultiViewSample, ProceduralScene,
                       build_scene, face_box_gt, generate_dataset,
                       generate_sample, load_sample, raytrace_view,
                       sample_cameras, validate_dataset)
from .training import (FitConfig, FitGraph, ScaleCorrection, apply_scale,
                       cosine_lr, fit, perturb_face_box, pipeline_render,
                       solve_scale)

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianSet", "Image", "camera_rays_grid",
    "compose_covariance", "lookat_rotation", "minimal_rotation",
    "quat_from_rotation", "quat_mul", "quat_to_rotation", "rng_for",
    "BoxOutsideFrustum", "CameraCenterMismatch", "DimensionMismatch",
    "EmptyMask", "EmptyOverlap", "IoError", "LengthMismatch", "NonFiniteLoss",
    "NonPositiveDepth", "NonPositiveScale", "RejectionExhausted",
    "ShapeMismatch", "SingularCovariance", "SplatterError", "ValidationError",
    "MetricsReport", "evaluate_fit", "geometry_normals", "geometry_render",
    "jitter_eval", "jitter_metric", "psnr", "ssim",
    "SuiteResult", "run_all",
    "load_camera_json", "load_pfm", "load_png", "read_json",
    "save_camera_json", "save_pfm", "save_png", "write_json",
    "LossBreakdown", "LossWeights", "composite_over_background",
    "loss_euclidean_rgb", "loss_jitter", "loss_opacity_bias",
    "loss_opacity_mean", "loss_perceptual_surrogate", "loss_scale_reg",
    "pyr_down", "total_loss",
    "RenderCache", "RenderOutput", "render", "render_backward",
    "render_reference",
    "FaceBox", "RoiMapping", "build_roi_camera", "conditioning_channels",
    "gaussians_to_source_frame", "warp_image",
    "DecodeConfig", "SplatterImage", "decode", "decode_backward",
    "direct_color_sample", "init_params", "layer_mean_opacity",
    "load_splatter", "save_splatter",
    "DatasetConfig", "MultiViewSample", "ProceduralScene", "build_scene",
    "face_box_gt", "generate_dataset", "generate_sample", "load_sample",
    "raytrace_view", "sample_cameras", "validate_dataset",
    "FitConfig", "FitGraph", "ScaleCorrection", "apply_scale", "cosine_lr",
    "fit", "perturb_face_box", "pipeline_render", "solve_scale",
    "__version__",
]
