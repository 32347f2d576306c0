"""Training loop for the function-decoder VAE with residual constraints.

One gradient step: encode the observation batch, draw a latent per element by
the reparameterization trick, decode at the sensor coordinates for the
reconstruction error, decode at freshly sampled collocation points for the
active residual, assemble

    total = reconstruction + lam_kl * kl + lam_r * statistics + lam_f * physics

and take an Adam step over encoder and decoder parameters jointly. All
randomness comes from one generator in a fixed draw order (latent noise,
collocation points, pair subset), so a seeded run is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import constraints as cons
from . import networks as nets
from .autodiff import Tensor
from .optim import Adam

__all__ = [
    "MeasurementOperator",
    "VaeLossBreakdown",
    "TrainConfig",
    "VaeModel",
    "reparameterize",
    "kl_diag_gaussian",
    "reconstruction_loss",
    "sample_collocation",
    "vae_loss",
    "vae_train_step",
    "train_vae",
]


@dataclass
class MeasurementOperator:
    """Restriction of a decoded function to fixed sensor coordinates."""

    coords: np.ndarray
    channel: Optional[int] = None

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        if len(self.coords) < 1:
            raise ValueError("need at least one sensor")

    @property
    def m(self) -> int:
        return len(self.coords)

    def check_inside(self, lo, hi):
        if np.any(self.coords < np.asarray(lo)) or np.any(self.coords > np.asarray(hi)):
            raise ValueError("sensor coordinates fall outside the domain box")

    def observe(self, decoder, z: Tensor) -> Tensor:
        out = nets.decode(decoder, z, self.coords)
        if self.channel is not None and out.ndim == 3:
            out = out[:, :, self.channel]
        return out


@dataclass(frozen=True)
class VaeLossBreakdown:
    reconstruction: float
    kl: float
    statistics_residual: float
    physics_residual: float
    total: float
    lam_kl: float
    lam_r: float
    lam_f: float

    def __post_init__(self):
        parts = (self.reconstruction, self.kl, self.statistics_residual,
                 self.physics_residual)
        if any(p < 0 for p in parts):
            raise ValueError("loss components must be nonnegative")
        expect = (self.reconstruction + self.lam_kl * self.kl
                  + self.lam_r * self.statistics_residual
                  + self.lam_f * self.physics_residual)
        if abs(self.total - expect) > 1e-12 * max(1.0, abs(expect)):
            raise ValueError("total does not equal the weighted sum of parts")


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 2000
    lam_kl: float = 1e-6
    lam_r: float = 0.0
    lam_f: float = 0.0
    n_colloc: int = 16
    seed: int = 0

    def __post_init__(self):
        if min(self.lam_kl, self.lam_r, self.lam_f) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lam_r > 0 and self.lam_f > 0:
            raise ValueError("statistical and physical residuals are applied "
                             "one at a time; zero one of lam_r, lam_f")
        if self.n_colloc < 1:
            raise ValueError("need at least one collocation point")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class VaeModel:
    """Encoder plus one function decoder per field; v is optional."""

    encoder: nets.Encoder
    decoder_u: nets.DeepOnetDecoder
    sensors: MeasurementOperator
    decoder_v: Optional[nets.DeepOnetDecoder] = None

    def __post_init__(self):
        self.sensors.check_inside(self.decoder_u.x_lo, self.decoder_u.x_hi)

    @property
    def domain(self):
        return self.decoder_u.x_lo, self.decoder_u.x_hi

    def parameters(self) -> list[Tensor]:
        out = self.encoder.tensors() + self.decoder_u.tensors()
        if self.decoder_v is not None:
            out += self.decoder_v.tensors()
        return out


def reparameterize(mu: Tensor, sigma: Tensor, eps) -> Tensor:
    """z = mu + eps * sigma; differentiable in mu and sigma."""
    eps = ad.as_tensor(eps)
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ad.ShapeError("reparameterize", mu.shape, sigma.shape, eps.shape)
    return mu + eps * sigma


def kl_diag_gaussian(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL from N(mu, diag sigma^2) to N(0, I): 0.5 sum(mu^2 + s^2 - 1 - 2 ln s).

    Summed over latent dimensions; averaged over the batch axis when the
    inputs are 2-D.
    """
    mu, sigma = ad.as_tensor(mu), ad.as_tensor(sigma)
    if np.any(sigma.value <= 0):
        raise ValueError("sigma must be strictly positive")
    per = 0.5 * (ad.square(mu) + ad.square(sigma) - 1.0) - ad.log(sigma)
    if per.ndim == 2:
        return ad.mean(ad.sum(per, axis=1))
    return ad.sum(per)


def reconstruction_loss(decoder, z: Tensor, sensors: MeasurementOperator, y) -> Tensor:
    """Mean squared error between decoded sensor values and observations."""
    y = ad.as_tensor(y)
    pred = sensors.observe(decoder, z)
    if pred.shape != y.shape:
        raise ad.ShapeError("reconstruction_loss", pred.shape, y.shape)
    return ad.mean(ad.square(pred - y))


def sample_collocation(c: int, lo, hi, rng: np.random.Generator) -> np.ndarray:
    """c i.i.d. uniform points in the box [lo, hi] -> (c, d)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if np.any(hi <= lo):
        raise ValueError("domain box is empty")
    return rng.uniform(lo, hi, size=(c, len(lo)))


def _statistics_term(model, z, constraint, config, rng):
    lo, hi = model.domain
    if constraint.kind == "coherence":
        t_grid = constraint.time_grid
        dt = float(t_grid[1] - t_grid[0])
        xs = sample_collocation(constraint.n_spatial, lo[:-1], hi[:-1], rng)
        coords = np.hstack([np.repeat(xs, len(t_grid), axis=0),
                            np.tile(t_grid, len(xs))[:, None]])
        U = nets.decode(model.decoder_u, z, coords)
        U = ad.reshape(U, (z.shape[0], len(xs), len(t_grid)))
        pairs = cons.select_pairs(len(xs), constraint.pair_budget, rng,
                                  include_diagonal=False)
        res = cons.coherence_residual(U, xs, dt, constraint.target, pairs=pairs,
                                      seg_len=constraint.seg_len)
        return constraint.weight * res
    xc = sample_collocation(config.n_colloc, lo, hi, rng)
    U = nets.decode(model.decoder_u, z, xc)
    pairs = cons.select_pairs(len(xc), constraint.pair_budget, rng)
    if constraint.kind == "covariance":
        res = cons.covariance_residual(U, xc, constraint.target, pairs=pairs)
    else:
        res = cons.correlation_residual(U, xc, constraint.target, pairs=pairs)
    return constraint.weight * res


def _physics_term(model, z, constraint, config, rng):
    if model.decoder_v is None:
        raise ValueError("physics residual needs a second decoder for v")
    xc = sample_collocation(config.n_colloc, *constraint.domain, rng).ravel()
    res = cons.poisson_physics_residual(
        model.decoder_u, model.decoder_v, z, xc, constraint.forcing,
        h=constraint.h, boundary_penalty=constraint.boundary_penalty,
        domain=constraint.domain)
    return constraint.weight * res


def vae_loss(model: VaeModel, y: np.ndarray, config: TrainConfig,
             constraint=None, *, eps: np.ndarray,
             rng: Optional[np.random.Generator] = None):
    """Assemble the constrained loss for one batch.

    Collocation points and pair subsets are drawn from ``rng``; pass a
    freshly seeded generator to make the value repeatable. Returns
    (total Tensor, parts dict of Tensors).
    """
    mu, sigma = nets.encode(model.encoder, ad.constant(y))
    z = reparameterize(mu, sigma, eps)
    parts = {
        "reconstruction": reconstruction_loss(model.decoder_u, z, model.sensors, y),
        "kl": kl_diag_gaussian(mu, sigma),
        "statistics_residual": None,
        "physics_residual": None,
    }
    if rng is None:
        rng = np.random.default_rng(0)
    if isinstance(constraint, cons.StatisticalConstraint) and config.lam_r > 0:
        parts["statistics_residual"] = _statistics_term(model, z, constraint,
                                                        config, rng)
    if isinstance(constraint, cons.PhysicalConstraint) and config.lam_f > 0:
        parts["physics_residual"] = _physics_term(model, z, constraint,
                                                  config, rng)

    total = parts["reconstruction"] + config.lam_kl * parts["kl"]
    if parts["statistics_residual"] is not None:
        total = total + config.lam_r * parts["statistics_residual"]
    if parts["physics_residual"] is not None:
        total = total + config.lam_f * parts["physics_residual"]
    return total, parts


def _breakdown(total, parts, config) -> VaeLossBreakdown:
    def val(key):
        t = parts[key]
        return 0.0 if t is None else float(t.value)

    rec, kl = val("reconstruction"), val("kl")
    stat, phys = val("statistics_residual"), val("physics_residual")
    for name, v in [("reconstruction", rec), ("kl", kl),
                    ("statistics_residual", stat), ("physics_residual", phys),
                    ("total", float(total.value))]:
        if not np.isfinite(v):
            raise FloatingPointError(f"loss term {name!r} is not finite")
    return VaeLossBreakdown(
        reconstruction=rec, kl=kl, statistics_residual=stat,
        physics_residual=phys,
        total=rec + config.lam_kl * kl + config.lam_r * stat + config.lam_f * phys,
        lam_kl=config.lam_kl, lam_r=config.lam_r, lam_f=config.lam_f)


def vae_train_step(model: VaeModel, y: np.ndarray, config: TrainConfig,
                   constraint, opt: Adam, rng: np.random.Generator) -> VaeLossBreakdown:
    """One Adam step; returns the loss breakdown evaluated before the update."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(y) == 0:
        raise ValueError("empty batch")
    eps = rng.standard_normal((len(y), model.encoder.d_z))
    total, parts = vae_loss(model, y, config, constraint, eps=eps, rng=rng)
    breakdown = _breakdown(total, parts, config)
    opt.zero_grad()
    ad.backward(total)
    opt.step()
    return breakdown


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_total: float = np.inf


def train_vae(model: VaeModel, Y: np.ndarray, config: TrainConfig,
              constraint=None, log=None) -> TrainHistory:
    """Minibatch training over ``config.epochs`` epochs.

    Tracks the epoch with minimum mean total loss and restores those
    parameters at the end. ``log`` is an optional text stream receiving CSV
    rows (epoch, reconstruction, kl, stat_residual, phys_residual, total).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    params = model.parameters()
    opt = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    hist = TrainHistory()
    best_values = None
    if log is not None:
        log.write("epoch,reconstruction,kl,stat_residual,phys_residual,total\n")
    n = len(Y)
    bs = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(5)
        n_steps = 0
        for start in range(0, n - bs + 1, bs):
            batch = Y[order[start:start + bs]]
            b = vae_train_step(model, batch, config, constraint, opt, rng)
            sums += (b.reconstruction, b.kl, b.statistics_residual,
                     b.physics_residual, b.total)
            n_steps += 1
        rec, kl, stat, phys, total = sums / n_steps
        hist.epochs.append(VaeLossBreakdown(
            reconstruction=rec, kl=kl, statistics_residual=stat,
            physics_residual=phys,
            total=rec + config.lam_kl * kl + config.lam_r * stat + config.lam_f * phys,
            lam_kl=config.lam_kl, lam_r=config.lam_r, lam_f=config.lam_f))
        if log is not None:
            log.write(f"{epoch},{rec:.10e},{kl:.10e},{stat:.10e},"
                      f"{phys:.10e},{total:.10e}\n")
        if total < hist.best_total:
            hist.best_total = total
            hist.best_epoch = epoch
            best_values = [p.value.copy() for p in params]
    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value[...] = v
    return hist
