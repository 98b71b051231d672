"""Shared fixtures and scene builders for the test suite.

The session-scoped dataset fixtures run the real generation and IO paths
once; everything downstream loads from disk exactly as the CLI would.
"""

from __future__ import annotations

import numpy as np
import pytest

from splatterlab.core import Camera, GaussianSet, rng_for
from splatterlab.synthgen import DatasetConfig, generate_dataset, load_sample


def random_gaussians(seed: int, n: int, z_lo: float = 0.8, z_hi: float = 2.0,
                     opac_hi: float = 0.95) -> GaussianSet:
    """Well-conditioned random scene in front of an origin camera."""
    rng = rng_for(seed, 42)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        means=np.column_stack([rng.uniform(-0.4, 0.4, n),
                               rng.uniform(-0.3, 0.3, n),
                               rng.uniform(z_lo, z_hi, n)]),
        quats=q,
        scales=rng.uniform(0.05, 0.3, (n, 3)),
        opacities=rng.uniform(0.2, opac_hi, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)))


def origin_camera(width: int = 32, height: int = 24, focal: float = 40.0) -> Camera:
    """Identity-pose camera with the principal point at the frame center."""
    return Camera(rotation=np.eye(3), center=np.zeros(3), focal=focal,
                  principal_point=np.array([width / 2, height / 2]),
                  width=width, height=height)


@pytest.fixture(scope="session")
def ds_dir(tmp_path_factory):
    """Two-sample dataset at desk scale, written through the real IO path."""
    root = tmp_path_factory.mktemp("ds")
    return generate_dataset(DatasetConfig(n_samples=2, seed=0), str(root / "toyheads"))


@pytest.fixture(scope="session")
def sample0(ds_dir):
    import os
    return load_sample(os.path.join(ds_dir, "sample_0000"))


@pytest.fixture(scope="session")
def reduced_sample(tmp_path_factory):
    """Half-scale sample for fit tests that only need the wiring."""
    from splatterlab.synthgen import generate_sample
    cfg = DatasetConfig(n_samples=1, input_size=(48, 32), sup_size=(32, 32), seed=7)
    sample, _ = generate_sample(cfg, 0)
    return sample
