"""Differentiable residuals that push generated field batches toward known
statistics (covariance, correlation, spectral coherence) or a known governing
equation (1-D diffusion with spatially varying coefficient).

All functions build on the reverse-mode graph, so residual gradients reach the
decoder parameters. Randomness (pair subsets) is injected by the caller
through an explicit generator; given decoded values and pairs the residuals
are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "StatisticalConstraint",
    "PhysicalConstraint",
    "select_pairs",
    "welch_segment_length",
    "covariance_residual",
    "correlation_residual",
    "welch_coherence",
    "coherence_residual",
    "poisson_physics_residual",
]

STAT_KINDS = ("covariance", "correlation", "coherence")

# additive guard for coherence denominators
_COH_EPS = 1e-30
# batch std below this at a point makes correlation ill-defined there
_DEGENERATE_STD = 1e-8


@dataclass
class StatisticalConstraint:
    """Target second-order structure the decoded ensemble must reproduce.

    ``target`` signature depends on ``kind``: for covariance/correlation a
    kernel ``C(Xa, Xb) -> values`` vectorized over coordinate rows; for
    coherence ``Coh(x1, x2, freqs) -> values`` on a frequency grid.
    ``weight`` scales the residual before the trainer applies its own
    loss coefficient.
    """

    kind: str
    target: Callable
    weight: float = 1.0
    pair_budget: int = 128
    # coherence-specific: uniform time grid (the trailing field coordinate),
    # spatial points drawn per step, Welch segment length
    time_grid: Optional[np.ndarray] = None
    n_spatial: int = 4
    seg_len: Optional[int] = None

    def __post_init__(self):
        if self.kind not in STAT_KINDS:
            raise ValueError(f"kind must be one of {STAT_KINDS}, got {self.kind!r}")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.pair_budget < 1:
            raise ValueError("pair_budget must be >= 1")
        if self.kind == "coherence":
            if self.time_grid is None or len(self.time_grid) < 8:
                raise ValueError("coherence constraint needs a uniform time grid")
            self.time_grid = np.asarray(self.time_grid, dtype=np.float64)


@dataclass
class PhysicalConstraint:
    """Governing-equation residual; only 1-D  (v u')' = -f  is supported."""

    forcing: Callable
    weight: float = 1.0
    kind: str = "poisson1d"
    h: Optional[float] = None
    boundary_penalty: bool = True
    domain: tuple = (0.0, np.pi)

    def __post_init__(self):
        if self.kind != "poisson1d":
            raise ValueError(f"unsupported physical constraint kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.h is None:
            self.h = 1e-3 * (self.domain[1] - self.domain[0])
        if self.h <= 0:
            raise ValueError("finite-difference step must be positive")


def select_pairs(n_points: int, budget: int = 128, rng=None,
                 include_diagonal: bool = True):
    """Index pairs (i, j) with i <= j; exhaustive for small point sets.

    All pairs when n_points <= 16, otherwise ``budget`` random ones. The
    diagonal carries variances; coherence callers exclude it (trivially 1).
    """
    if n_points <= 16:
        i, j = np.triu_indices(n_points, k=0 if include_diagonal else 1)
        return i, j
    if rng is None:
        rng = np.random.default_rng()
    a = rng.integers(0, n_points, size=budget)
    lo = 0 if include_diagonal else 1
    b = (a + rng.integers(lo, n_points, size=budget)) % n_points
    return np.minimum(a, b), np.maximum(a, b)


def _batch_covariance(U: Tensor) -> Tensor:
    # (B, C) -> (C, C) empirical covariance, centered on the batch mean,
    # 1/N_B normalization
    n_b = U.shape[0]
    Uc = U - ad.mean(U, axis=0, keepdims=True)
    return ad.matmul(ad.transpose(Uc), Uc) / float(n_b)


def covariance_residual(U: Tensor, X: np.ndarray, kernel: Callable,
                        pairs=None, rng=None, pair_budget: int = 128) -> Tensor:
    """Mean over point pairs of (empirical covariance - kernel)^2.

    U: (N_B, C) decoded values at collocation points X (C, d_x).
    """
    if U.ndim != 2 or U.shape[0] < 2:
        raise ValueError(f"need a batch of at least 2 samples, got shape {U.shape}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cov = _batch_covariance(U)
    if pairs is None:
        pairs = select_pairs(X.shape[0], pair_budget, rng)
    i, j = pairs
    target = np.asarray(kernel(X[i], X[j]), dtype=np.float64)
    emp = cov[(i, j)]
    return ad.mean(ad.square(emp - ad.constant(target)))


def correlation_residual(U: Tensor, X: np.ndarray, kernel: Callable,
                         pairs=None, rng=None, pair_budget: int = 128) -> Tensor:
    """Covariance residual with both sides normalized to correlations.

    Pairs touching a point whose batch standard deviation is below 1e-8 are
    skipped; if nothing remains the batch is degenerate and rejected.
    """
    if U.ndim != 2 or U.shape[0] < 2:
        raise ValueError(f"need a batch of at least 2 samples, got shape {U.shape}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cov = _batch_covariance(U)
    if pairs is None:
        pairs = select_pairs(X.shape[0], pair_budget, rng)
    i, j = pairs

    std_vals = np.sqrt(np.diag(cov.value))
    ok = (std_vals[i] > _DEGENERATE_STD) & (std_vals[j] > _DEGENERATE_STD)
    if not ok.any():
        raise ValueError("batch variance is degenerate at every sampled pair")
    i, j = i[ok], j[ok]

    diag_idx = np.arange(X.shape[0])
    std = ad.sqrt(cov[(diag_idx, diag_idx)])
    emp = cov[(i, j)] / (std[i] * std[j])

    t_cov = np.asarray(kernel(X[i], X[j]), dtype=np.float64)
    t_var_i = np.asarray(kernel(X[i], X[i]), dtype=np.float64)
    t_var_j = np.asarray(kernel(X[j], X[j]), dtype=np.float64)
    target = t_cov / np.sqrt(t_var_i * t_var_j)
    return ad.mean(ad.square(emp - ad.constant(target)))


# ---------------------------------------------------------------------------
# spectral coherence via Welch-averaged periodograms, built from graph ops

def welch_segment_length(n_t: int) -> int:
    """Largest power of two not exceeding n_t // 4."""
    quarter = n_t // 4
    if quarter < 2:
        raise ValueError(f"series of length {n_t} is too short for Welch averaging")
    return 1 << (quarter.bit_length() - 1)


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _segment_index(n_t: int, seg_len: int, overlap: float):
    hop = max(1, int(round(seg_len * (1.0 - overlap))))
    starts = np.arange(0, n_t - seg_len + 1, hop)
    return starts[:, None] + np.arange(seg_len)[None, :]


def _welch_rfft(u: Tensor, seg_len: int, overlap: float, window: np.ndarray):
    """Stack windowed segments of every batch series; return DFT parts.

    u: (B, N_t). Output R, I: (B*n_seg, n_freq) with n_freq = seg_len//2 + 1.
    Segments are mean-detrended before windowing.
    """
    n_b, n_t = u.shape
    cols = _segment_index(n_t, seg_len, overlap)
    n_seg = cols.shape[0]
    rows = np.repeat(np.arange(n_b), n_seg)
    idx = (rows[:, None], np.tile(cols, (n_b, 1)))
    seg = u[idx]
    seg = seg - ad.mean(seg, axis=1, keepdims=True)
    seg = seg * ad.constant(window)

    k = np.arange(seg_len // 2 + 1)
    t = np.arange(seg_len)
    phase = 2.0 * np.pi * np.outer(t, k) / seg_len
    R = ad.matmul(seg, ad.constant(np.cos(phase)))
    I = ad.matmul(seg, ad.constant(-np.sin(phase)))
    return R, I


def _coherence_from_parts(R1, I1, R2, I2) -> Tensor:
    # average spectra over all (batch x segment) rows, then normalize;
    # DC bin dropped
    p11 = ad.mean(ad.square(R1) + ad.square(I1), axis=0)
    p22 = ad.mean(ad.square(R2) + ad.square(I2), axis=0)
    p12r = ad.mean(R1 * R2 + I1 * I2, axis=0)
    p12i = ad.mean(I1 * R2 - R1 * I2, axis=0)
    num = ad.square(p12r) + ad.square(p12i)
    gamma2 = num / (p11 * p22 + _COH_EPS)
    return gamma2[1:]


def _welch_prepare(u, seg_len, window, overlap):
    u = ad.as_tensor(u) if not isinstance(u, Tensor) else u
    if u.ndim == 1:
        u = ad.reshape(u, (1, u.shape[0]))
    n_t = u.shape[1]
    if seg_len is None:
        seg_len = welch_segment_length(n_t)
    if seg_len > n_t:
        raise ValueError(f"segment length {seg_len} exceeds series length {n_t}")
    n_seg = _segment_index(n_t, seg_len, overlap).shape[0]
    if n_seg < 2:
        raise ValueError("need at least 2 Welch segments; coherence of one segment is 1")
    if window == "hann":
        win = _hann_periodic(seg_len)
    elif isinstance(window, np.ndarray) and window.shape == (seg_len,):
        win = window
    else:
        raise ValueError(f"unsupported window {window!r}")
    return u, seg_len, win


def welch_coherence(u1, u2, dt: float = 1.0, seg_len: Optional[int] = None,
                    overlap: float = 0.5, window="hann"):
    """Magnitude-squared coherence of two (batched) series on the Welch grid.

    Returns (freqs, gamma2) where gamma2 is a graph tensor in [0, 1] per
    frequency; the DC bin is dropped. Spectra are averaged over batch rows
    and overlapping Hann-windowed segments jointly.
    """
    u1, seg_len, win = _welch_prepare(u1, seg_len, window, overlap)
    u2, _, _ = _welch_prepare(u2, seg_len, window, overlap)
    if u1.shape != u2.shape:
        raise ad.ShapeError("welch_coherence", u1.shape, u2.shape)
    R1, I1 = _welch_rfft(u1, seg_len, overlap, win)
    R2, I2 = _welch_rfft(u2, seg_len, overlap, win)
    gamma2 = _coherence_from_parts(R1, I1, R2, I2)
    freqs = np.arange(1, seg_len // 2 + 1) / (seg_len * dt)
    return freqs, gamma2


def coherence_residual(U: Tensor, X_s: np.ndarray, dt: float, coh: Callable,
                       pairs=None, rng=None, pair_budget: int = 128,
                       seg_len: Optional[int] = None) -> Tensor:
    """Mean over spatial pairs and frequencies of (Welch coherence - target)^2.

    U: (N_B, C_s, N_t) decoded series at spatial points X_s (C_s, d_s) on a
    uniform time grid with spacing dt. ``coh(x1, x2, freqs)`` gives the
    target per frequency.
    """
    if U.ndim != 3:
        raise ad.ShapeError("coherence_residual", U.shape)
    n_b, c_s, n_t = U.shape
    X_s = np.atleast_2d(np.asarray(X_s, dtype=np.float64))
    if pairs is None:
        pairs = select_pairs(c_s, pair_budget, rng, include_diagonal=False)
    i_idx, j_idx = pairs
    if len(i_idx) == 0:
        raise ValueError("need at least one spatial pair")

    if seg_len is None:
        seg_len = welch_segment_length(n_t)
    win = _hann_periodic(seg_len)
    freqs = np.arange(1, seg_len // 2 + 1) / (seg_len * dt)

    parts = {}
    for c in sorted(set(np.concatenate([i_idx, j_idx]).tolist())):
        series = U[(slice(None), c, slice(None))]
        parts[c] = _welch_rfft(series, seg_len, 0.5, win)

    total = None
    for ci, cj in zip(i_idx, j_idx):
        R1, I1 = parts[ci]
        R2, I2 = parts[cj]
        gamma2 = _coherence_from_parts(R1, I1, R2, I2)
        target = np.asarray(coh(X_s[ci], X_s[cj], freqs), dtype=np.float64)
        term = ad.mean(ad.square(gamma2 - ad.constant(target)))
        total = term if total is None else total + term
    return total / float(len(i_idx))


# ---------------------------------------------------------------------------
# governing-equation residual for  (v u')' = -f  on an interval

def _as_decode_fn(decoder):
    if callable(decoder):
        return decoder
    from . import networks as nets
    return lambda z, X: nets.decode(decoder, z, X)


def poisson_physics_residual(decoder_u, decoder_v, z: Tensor, X, forcing: Callable,
                             h: float = 1e-3, boundary_penalty: bool = True,
                             domain: tuple = (0.0, np.pi)) -> Tensor:
    """Mean squared residual of  v'u' + v u'' + f  over (sample, point).

    Spatial derivatives come from second-order central differences at
    {x-h, x, x+h}; every stencil evaluation is a graph node, so parameter
    gradients of the discretized residual are exact. Points closer than h to
    a domain end are shifted inward. Optionally adds the mean squared field
    value at both ends (homogeneous Dirichlet penalty).
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    lo, hi = domain
    x = np.asarray(X, dtype=np.float64).reshape(-1)
    x = np.clip(x, lo + h, hi - h)
    c = x.size

    decode_u = _as_decode_fn(decoder_u)
    decode_v = _as_decode_fn(decoder_v)
    stencil = np.concatenate([x - h, x, x + h]).reshape(-1, 1)
    Uvals = decode_u(z, stencil)
    Vvals = decode_v(z, stencil)
    um, u0, up = Uvals[:, :c], Uvals[:, c:2 * c], Uvals[:, 2 * c:]
    vm, v0, vp = Vvals[:, :c], Vvals[:, c:2 * c], Vvals[:, 2 * c:]

    du = (up - um) / (2.0 * h)
    d2u = (up - 2.0 * u0 + um) / (h * h)
    dv = (vp - vm) / (2.0 * h)
    f = ad.constant(np.asarray(forcing(x), dtype=np.float64)[None, :])
    r = dv * du + v0 * d2u + f
    res = ad.mean(ad.square(r))

    if boundary_penalty:
        ends = np.array([[lo], [hi]])
        Ub = decode_u(z, ends)
        res = res + ad.mean(ad.sum(ad.square(Ub), axis=1))
    return res
