"""Synthetic ground-truth ensembles: Gaussian-process paths, solutions of a
1-D diffusion equation with random coefficient, boundary-layer wind histories
synthesized by spectral representation, and a lognormal field from a
truncated Karhunen-Loeve expansion.

Everything is pure numpy and deterministic given (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "GpSpec",
    "PoissonSpec",
    "WindSpec",
    "LognormalKlSpec",
    "gp_kernel",
    "gp_sample",
    "poisson_solve",
    "poisson_sample",
    "wind_mean",
    "sigma1_sq",
    "integral_length",
    "coherence_target",
    "auto_spectrum",
    "cpsd",
    "srm_sample",
    "wind_sample",
    "lognormal_kl_sample",
    "fft",
    "ifft",
]


# ---------------------------------------------------------------------------
# squared-exponential Gaussian process

@dataclass(frozen=True)
class GpSpec:
    """Process with mean mu(x) and kernel sigma2*exp(-|x-x'|^2/(2 l^2))."""

    mean: Callable = lambda X: np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
    sigma2: float = 0.5
    length: float = 0.1
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.sigma2 <= 0 or self.length <= 0:
            raise ValueError("kernel variance and length scale must be positive")


def gp_kernel(spec: GpSpec, xa, xb) -> np.ndarray:
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    d = np.linalg.norm(xa - xb, axis=-1)
    return spec.sigma2 * np.exp(-(d**2) / (2.0 * spec.length**2))


def _chol_with_jitter(K: np.ndarray, start: float = 1e-8, cap: float = 1e-4):
    jitter = start
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[0])), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > cap:
                raise np.linalg.LinAlgError(
                    f"Cholesky failed with jitter escalated to {cap:g}") from None


def gp_sample(spec: GpSpec, X, n: int, seed: int) -> np.ndarray:
    """n draws at coordinates X (C, d) -> (n, C)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(np.unique(X, axis=0)) != len(X):
        raise ValueError("coordinates must be distinct")
    diff = X[:, None, :] - X[None, :, :]
    K = spec.sigma2 * np.exp(-np.sum(diff**2, axis=-1) / (2.0 * spec.length**2))
    L, _ = _chol_with_jitter(K)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n, len(X)))
    mu = np.asarray(spec.mean(X), dtype=float).reshape(-1)
    return mu[None, :] + xi @ L.T


# ---------------------------------------------------------------------------
# 1-D diffusion  (v u')' = -sin x  on [0, pi], u(0) = u(pi) = 0

@dataclass(frozen=True)
class PoissonSpec:
    eps_mean: float = 0.2
    eps_std: float = 0.05
    resolution: int = 256
    domain: tuple = (0.0, np.pi)

    def __post_init__(self):
        if self.resolution < 64:
            raise ValueError("resolution must be at least 64")


def _cumulative_trapezoid(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * dx * (y[1:] + y[:-1]), out=out[1:])
    return out


def poisson_solve(eps: float, resolution: int = 256):
    """Solve for u with coefficient v(x) = 1 + eps x^2 and forcing sin x.

    Integrating once gives v u' = A - (1 - cos x); A is fixed by u(pi) = 0.
    Returns (x grid, u, v); both boundary values are zero by construction.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    x = np.linspace(0.0, np.pi, resolution)
    dx = x[1] - x[0]
    v = 1.0 + eps * x**2
    if np.any(v <= 0):
        raise ValueError(f"coefficient v is non-positive on the grid (eps={eps})")
    inv_v = 1.0 / v
    c1 = _cumulative_trapezoid(inv_v, dx)
    c2 = _cumulative_trapezoid((1.0 - np.cos(x)) * inv_v, dx)
    A = c2[-1] / c1[-1]
    u = A * c1 - c2
    u[-1] = 0.0  # analytically zero; snap the last-bit rounding residue
    return x, u, v


def poisson_sample(spec: PoissonSpec, n: int, seed: int):
    """n coefficient draws eps ~ N(eps_mean, eps_std^2) -> (x, U, V, eps).

    Draws giving a non-positive coefficient anywhere are rejected and
    redrawn (vanishingly rare at the default parameters).
    """
    rng = np.random.default_rng(seed)
    x = np.linspace(spec.domain[0], spec.domain[1], spec.resolution)
    U = np.empty((n, spec.resolution))
    V = np.empty((n, spec.resolution))
    eps_out = np.empty(n)
    for i in range(n):
        while True:
            eps = spec.eps_mean + spec.eps_std * rng.standard_normal()
            if np.all(1.0 + eps * x**2 > 0):
                break
        _, U[i], V[i] = poisson_solve(eps, spec.resolution)
        eps_out[i] = eps
    return x, U, V, eps_out


# ---------------------------------------------------------------------------
# boundary-layer wind statistics

@dataclass(frozen=True)
class WindSpec:
    """Log-profile mean flow with Kaimal-type spectra and exponential coherence.

    Spatial grid: n2 cross-wind positions over [0, width] by n3 heights over
    [h_min, height]. Frequency grid: n_f bins over [0, f_max] sampled at bin
    midpoints; time grid has 2*n_f steps at dt = 1/(2 f_max).
    """

    u_star: float = 1.8
    z0: float = 0.015
    c_decay: tuple = (3.0, 3.0, 0.5)
    lambda1: float = 6.868
    width: float = 30.0
    height: float = 40.0
    h_min: float = 1.0
    n2: int = 4
    n3: int = 4
    n_f: int = 64
    f_max: float = 3.0

    def __post_init__(self):
        if self.h_min <= self.z0:
            raise ValueError("lowest height must exceed the roughness length")
        if self.n_f < 2 or (self.n_f & (self.n_f - 1)) != 0:
            raise ValueError("n_f must be a power of two")

    @property
    def df(self) -> float:
        return self.f_max / self.n_f

    @property
    def n_t(self) -> int:
        return 2 * self.n_f

    @property
    def dt(self) -> float:
        return 1.0 / (2.0 * self.f_max)

    def freq_bins(self) -> np.ndarray:
        # midpoint frequencies avoid the n=0 singularity of the log profile
        return (np.arange(self.n_f) + 0.5) * self.df

    def time_grid(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt

    def grid_points(self) -> np.ndarray:
        """(n2*n3, 2) points (x2, x3), x3 varying fastest."""
        x2 = np.linspace(0.0, self.width, self.n2)
        x3 = np.linspace(self.h_min, self.height, self.n3)
        g2, g3 = np.meshgrid(x2, x3, indexing="ij")
        return np.column_stack([g2.ravel(), g3.ravel()])


def wind_mean(x3, u_star: float = 1.8, z0: float = 0.015):
    """Log-profile mean speed 2.5 u* ln(x3/z0); zero at the roughness length."""
    x3 = np.asarray(x3, dtype=float)
    if np.any(x3 < z0):
        raise ValueError(f"height below roughness length {z0}")
    return 2.5 * u_star * np.log(x3 / z0)


def sigma1_sq(u_star: float = 1.8, z0: float = 0.015) -> float:
    """Along-wind turbulence variance from the roughness parameterization."""
    return (6.0 - 1.1 * np.arctan(np.log(z0) + 1.75)) * u_star**2


def integral_length(x3, z0: float = 0.015):
    return 300.0 * (np.asarray(x3, dtype=float) / 200.0) ** (0.67 + 0.05 * np.log(z0))


def auto_spectrum(x3, n, u_star: float = 1.8, z0: float = 0.015,
                  lambda1: float = 6.868):
    """One-sided along-wind spectrum S11(x3; n); integrates to sigma1_sq."""
    x3 = np.asarray(x3, dtype=float)
    n = np.asarray(n, dtype=float)
    mu = wind_mean(x3, u_star, z0)
    L1 = integral_length(x3, z0)
    s2 = sigma1_sq(u_star, z0)
    ratio = L1 / mu
    return s2 * lambda1 * ratio / (1.0 + 1.5 * lambda1 * n * ratio) ** (5.0 / 3.0)


def _pair_decay(x, xp, c_decay):
    x = np.asarray(x, dtype=float).reshape(-1)
    xp = np.asarray(xp, dtype=float).reshape(-1)
    if x.shape != xp.shape or not 1 <= x.size <= 3:
        raise ValueError("points must share a dimension of 1, 2, or 3")
    # trailing components of c apply: 1-D points are heights, 2-D are (x2, x3)
    c = np.asarray(c_decay, dtype=float)[-x.size:]
    return np.linalg.norm(c * (x - xp)), x[-1], xp[-1]


def coherence_target(x, xp, n, u_star: float = 1.8, z0: float = 0.015,
                     c_decay: tuple = (3.0, 3.0, 0.5)):
    """Exponential decay exp(-n ||c o (x - x')|| / mean speed) in (0, 1].

    The normalizing speed is the average of the two heights' mean speeds.
    """
    dist, h1, h2 = _pair_decay(x, xp, c_decay)
    mu = 0.5 * (wind_mean(h1, u_star, z0) + wind_mean(h2, u_star, z0))
    if mu <= 0:
        raise ValueError("mean speed of the pair is zero; coherence undefined")
    n = np.asarray(n, dtype=float)
    return np.exp(-n * dist / mu)


def cpsd(x, xp, n, u_star: float = 1.8, z0: float = 0.015,
         lambda1: float = 6.868, c_decay: tuple = (3.0, 3.0, 0.5)):
    """Cross-power spectrum sqrt(S(x) S(x')) * coherence; diagonal is S11."""
    _, h1, h2 = _pair_decay(x, xp, c_decay)
    s1 = auto_spectrum(h1, n, u_star, z0, lambda1)
    s2 = auto_spectrum(h2, n, u_star, z0, lambda1)
    return np.sqrt(s1 * s2) * coherence_target(x, xp, n, u_star, z0, c_decay)


def _psd_factor(S: np.ndarray, tol: float = 1e-2) -> np.ndarray:
    """Factor H with H H^T = S, tolerating mild indefiniteness.

    The height-averaged coherence denominator makes large cross-spectral
    matrices indefinite at the 1e-3 level; eigenvalue clipping projects onto
    the nearest PSD matrix. Anything worse than tol (relative to the
    diagonal scale) is a genuinely invalid spectrum and raises.
    """
    scale = np.mean(np.diag(S))
    try:
        return np.linalg.cholesky(S + 1e-12 * scale * np.eye(len(S)))
    except np.linalg.LinAlgError:
        evals, evecs = np.linalg.eigh(S)
        if evals.min() < -tol * scale:
            raise np.linalg.LinAlgError(
                f"cross-spectral matrix indefinite: min eigenvalue "
                f"{evals.min():.3e} vs scale {scale:.3e}") from None
        return evecs * np.sqrt(np.clip(evals, 0.0, None))


def _srm_factors(spec: WindSpec):
    """Cholesky factor of the two-sided cross-spectral matrix per frequency.

    Off-diagonals carry the square root of the coherence target so that the
    magnitude-squared coherence of the synthesized ensemble reproduces the
    target itself.
    """
    pts = spec.grid_points()
    p = len(pts)
    freqs = spec.freq_bins()
    S = np.empty((spec.n_f, p, p))
    auto = np.array([auto_spectrum(pt[1], freqs, spec.u_star, spec.z0, spec.lambda1)
                     for pt in pts])  # (p, n_f)
    for a in range(p):
        S[:, a, a] = auto[a]
        for b in range(a + 1, p):
            coh = coherence_target(pts[a], pts[b], freqs, spec.u_star, spec.z0,
                                   spec.c_decay)
            cross = np.sqrt(auto[a] * auto[b]) * np.sqrt(coh)
            S[:, a, b] = cross
            S[:, b, a] = cross
    S *= 0.5  # two-sided density carried on positive frequencies
    H = np.empty_like(S)
    for l in range(spec.n_f):
        H[l] = _psd_factor(S[l])
    return pts, freqs, H


def srm_sample(spec: WindSpec, n_samples: int, seed: int) -> np.ndarray:
    """Zero-mean turbulence histories W of shape (n_samples, P, n_t).

    W_j(t) = sum_m sum_l 2 H_jm(n_l) sqrt(df) cos(2 pi n_l t + Phi_ml) with
    independent uniform phases per sample; the full wind is mean profile + W.
    """
    pts, freqs, H = _srm_factors(spec)
    p = len(pts)
    t = spec.time_grid()
    rng = np.random.default_rng(seed)
    out = np.empty((n_samples, p, spec.n_t))
    base = 2.0 * np.sqrt(spec.df)
    omega_t = 2.0 * np.pi * freqs[:, None] * t[None, :]  # (n_f, n_t)
    chunk = max(1, 2**22 // (spec.n_f * p * spec.n_t))
    for s0 in range(0, n_samples, chunk):
        s1 = min(s0 + chunk, n_samples)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(s1 - s0, p, spec.n_f))
        args = omega_t[None, :, None, :] + phases.transpose(0, 2, 1)[:, :, :, None]
        out[s0:s1] = base * np.einsum("lpm,slmt->spt", H, np.cos(args))
    return out


def wind_sample(spec: WindSpec, n_samples: int, seed: int):
    """Full wind histories mean + turbulence -> (points, t, U (n, P, n_t))."""
    pts = spec.grid_points()
    W = srm_sample(spec, n_samples, seed)
    mu = wind_mean(pts[:, 1], spec.u_star, spec.z0)
    return pts, spec.time_grid(), mu[None, :, None] + W


# ---------------------------------------------------------------------------
# lognormal field from a truncated discrete Karhunen-Loeve expansion

@dataclass(frozen=True)
class LognormalKlSpec:
    alpha: float = 1.0
    beta: float = 0.1
    length: float = 1.0
    k_terms: int = 5

    def __post_init__(self):
        if self.k_terms < 1 or self.length <= 0:
            raise ValueError("need at least one KL term and a positive length scale")


def lognormal_kl_sample(spec: LognormalKlSpec, grid, n: int, seed: int):
    """Samples of V = alpha + beta exp(g) with g a k-term KL field.

    grid: (P, d) points. Returns (V (n, P), retained variance fraction).
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    diff = grid[:, None, :] - grid[None, :, :]
    K = np.exp(-np.sum(diff**2, axis=-1) / (2.0 * spec.length**2))
    evals, evecs = np.linalg.eigh(K)
    evals = np.clip(evals[::-1], 0.0, None)
    evecs = evecs[:, ::-1]
    k = min(spec.k_terms, len(evals))
    retained = float(evals[:k].sum() / evals.sum())
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n, k))
    g = xi @ (np.sqrt(evals[:k])[:, None] * evecs[:, :k].T)
    return spec.alpha + spec.beta * np.exp(g), retained


# ---------------------------------------------------------------------------
# power-of-two DFT wrappers

def _check_pow2(n: int):
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")


def fft(x) -> np.ndarray:
    x = np.asarray(x)
    _check_pow2(x.shape[-1])
    return np.fft.fft(x)


def ifft(X) -> np.ndarray:
    X = np.asarray(X)
    _check_pow2(X.shape[-1])
    return np.fft.ifft(X)
