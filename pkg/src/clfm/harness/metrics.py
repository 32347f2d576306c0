"""Sample-based evaluation metrics and the prior-sampling baseline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .. import networks as nets

__all__ = ["MetricsReport", "compute_metrics", "sample_vae_prior"]


@dataclass
class MetricsReport:
    """First- and second-moment errors between two sample ensembles.

    MSE metrics are symmetric in the two ensembles; the relative L2 metrics
    normalize by the truth side. ``coherence_mse`` is filled only by
    spectral experiments.
    """

    mean_mse: float
    covariance_mse: float
    variance_mse: float
    rel_l2_mean: float
    rel_l2_variance: float
    n_generated: int
    n_truth: int
    coherence_mse: Optional[float] = None
    variance_ratio: Optional[float] = None

    def __post_init__(self):
        for name in ("mean_mse", "covariance_mse", "variance_mse",
                     "rel_l2_mean", "rel_l2_variance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.coherence_mse is not None and self.coherence_mse < 0:
            raise ValueError("coherence_mse must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def compute_metrics(generated: np.ndarray, truth: np.ndarray,
                    grid: np.ndarray) -> MetricsReport:
    """Compare moment estimates of two ensembles sampled on one grid.

    ``generated`` and ``truth`` are (n_samples, n_grid). Mean/variance MSEs
    average over grid points; covariance MSE averages over all ordered grid
    pairs including the diagonal.
    """
    generated = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    n_grid = len(grid)
    if n_grid < 2:
        raise ValueError("need at least two grid points")
    if len(np.unique(grid, axis=0)) != n_grid:
        raise ValueError("grid has duplicate points")
    if generated.shape[1] != n_grid or truth.shape[1] != n_grid:
        raise ValueError("sample columns must match the grid size")
    if len(generated) < 2 or len(truth) < 2:
        raise ValueError("need at least two samples on each side")

    mean_g = generated.mean(axis=0)
    mean_t = truth.mean(axis=0)
    var_g = generated.var(axis=0, ddof=1)
    var_t = truth.var(axis=0, ddof=1)
    cov_g = np.cov(generated, rowvar=False)
    cov_t = np.cov(truth, rowvar=False)

    norm_mean = np.linalg.norm(mean_t)
    norm_var = np.linalg.norm(var_t)
    if norm_mean == 0.0 or norm_var == 0.0:
        raise ValueError("degenerate truth ensemble (zero mean or variance)")

    return MetricsReport(
        mean_mse=float(np.mean((mean_g - mean_t) ** 2)),
        covariance_mse=float(np.mean((cov_g - cov_t) ** 2)),
        variance_mse=float(np.mean((var_g - var_t) ** 2)),
        rel_l2_mean=float(np.linalg.norm(mean_g - mean_t) / norm_mean),
        rel_l2_variance=float(np.linalg.norm(var_g - var_t) / norm_var),
        n_generated=len(generated),
        n_truth=len(truth),
    )


def sample_vae_prior(decoder, n: int, coords: np.ndarray,
                     seed: int = 0) -> np.ndarray:
    """Decode latents drawn straight from N(0, I), skipping the flow."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if n == 0:
        return np.empty((0, len(coords)))
    z = np.random.default_rng(seed).standard_normal((n, decoder.d_z))
    return nets.decode_eval(decoder, z, coords)
