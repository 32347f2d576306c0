"""Flow matching in the latent space of a trained VAE.

Training regresses a velocity network onto the straight-line displacement
between an encoded latent z0 and a standard-normal draw z1, evaluated at a
uniformly random point on the connecting segment. Sampling starts from z1 ~
N(0, I) and integrates the learned velocity backward from t=1 to t=0 with
classical Runge-Kutta, then decodes the arrived latent into a field.

The VAE stays frozen throughout; only the velocity parameters update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import networks as nets
from .optim import Adam

__all__ = [
    "VelocityNet",
    "FlowTrainConfig",
    "init_velocity_net",
    "interpolate",
    "flow_matching_loss",
    "fm_train_step",
    "train_flow",
    "rk4_sample",
    "generate_fields",
]


@dataclass
class VelocityNet:
    """MLP over the concatenated (z_t, t) input, returning a d_z velocity."""

    mlp: nets.MlpParams
    d_z: int

    def tensors(self):
        return self.mlp.tensors()

    def __call__(self, z: np.ndarray, t) -> np.ndarray:
        # numpy evaluation path used by the sampler
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        t_col = np.full((len(z), 1), float(t)) if np.ndim(t) == 0 else np.asarray(t)
        return nets.mlp_eval(self.mlp, np.hstack([z, t_col]))


@dataclass
class FlowTrainConfig:
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1000
    noise: float = 0.01
    sample_z0: bool = False  # draw z0 from the posterior instead of its mean
    seed: int = 0

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("interpolation noise must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def init_velocity_net(d_z: int, hidden: tuple = (128, 128, 128),
                      seed: int = 0) -> VelocityNet:
    spec = nets.MlpSpec((d_z + 1, *hidden, d_z), activation="gelu")
    return VelocityNet(nets.init_params(spec, seed), d_z)


def interpolate(z0, z1, t):
    """Point on the segment from z0 to z1: (1 - t) z0 + t z1.

    t may be a scalar or a per-row column; values must lie in [0, 1].
    """
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ad.ShapeError("interpolate", z0.shape, z1.shape)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("interpolation time must lie in [0, 1]")
    return (1.0 - t) * z0 + t * z1


def flow_matching_loss(vnet: VelocityNet, z_t: np.ndarray, t: np.ndarray,
                       target: np.ndarray) -> ad.Tensor:
    """Batch-mean squared norm of (target - velocity(z_t, t))."""
    inp = ad.constant(np.hstack([z_t, t]))
    pred = nets.mlp_forward(vnet.mlp, inp)
    diff = pred - ad.constant(target)
    return ad.mean(ad.sum(ad.square(diff), axis=1))


def fm_train_step(y: np.ndarray, encoder: nets.Encoder, vnet: VelocityNet,
                  config: FlowTrainConfig, opt: Adam,
                  rng: np.random.Generator) -> float:
    """One Adam step of velocity regression; returns the pre-update loss.

    Draw order per step: optional posterior noise, reference draw z1,
    interpolation times t, perturbation noise.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(y) == 0:
        raise ValueError("empty batch")
    mu, sigma = nets.encode_eval(encoder, y)
    if config.sample_z0:
        z0 = mu + sigma * rng.standard_normal(mu.shape)
    else:
        z0 = mu
    z1 = rng.standard_normal(z0.shape)
    t = rng.uniform(0.0, 1.0, size=(len(y), 1))
    z_t = interpolate(z0, z1, t) + config.noise * rng.standard_normal(z0.shape)
    loss = flow_matching_loss(vnet, z_t, t, z1 - z0)
    value = float(loss.value)
    if not np.isfinite(value):
        raise FloatingPointError("flow-matching loss is not finite")
    opt.zero_grad()
    ad.backward(loss)
    opt.step()
    return value


def train_flow(Y: np.ndarray, encoder: nets.Encoder, vnet: VelocityNet,
               config: FlowTrainConfig, log=None) -> list[float]:
    """Minibatch epochs over the observation set; restores the min-loss state.

    Returns per-epoch mean losses. ``log`` optionally receives CSV rows
    (epoch, fm_loss).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    params = vnet.tensors()
    opt = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    history: list[float] = []
    best = np.inf
    best_values = None
    if log is not None:
        log.write("epoch,fm_loss\n")
    n = len(Y)
    bs = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = [fm_train_step(Y[order[s:s + bs]], encoder, vnet, config, opt, rng)
                  for s in range(0, n - bs + 1, bs)]
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        if log is not None:
            log.write(f"{epoch},{mean_loss:.10e}\n")
        if mean_loss < best:
            best = mean_loss
            best_values = [p.value.copy() for p in params]
    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value[...] = v
    return history


def rk4_sample(velocity, n_samples: int, d_z: int = None, *, seed: int = 0,
               n_steps: int = 100) -> np.ndarray:
    """Integrate dz = -velocity(z, t) dt from t=1 to t=0, z(1) ~ N(0, I).

    ``velocity`` is a VelocityNet or any callable (z, t) -> array. Classical
    4th-order Runge-Kutta on uniform steps; equivalently, the forward flow
    run in reverse so that a constant field c maps z1 to z1 - c.
    """
    if n_steps < 1:
        raise ValueError("need at least one integration step")
    if d_z is None:
        if not isinstance(velocity, VelocityNet):
            raise ValueError("d_z is required for a bare velocity callable")
        d_z = velocity.d_z
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, d_z))
    h = 1.0 / n_steps
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            t = 1.0 - k * h
            k1 = velocity(z, t)
            k2 = velocity(z - 0.5 * h * k1, t - 0.5 * h)
            k3 = velocity(z - 0.5 * h * k2, t - 0.5 * h)
            k4 = velocity(z - h * k3, t - h)
            z = z - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError(
            f"latent integration diverged over {n_steps} steps")
    return z


def generate_fields(velocity, decoders, n: int, coords, *, seed: int = 0,
                    n_steps: int = 100):
    """Sample n latents and decode on ``coords``.

    ``decoders`` may be a single decoder or a sequence; all decode the same
    latent draw, so multi-decoder outputs are jointly distributed. Returns an
    array (n, C) for a single decoder, else a tuple of such arrays.
    """
    single = not isinstance(decoders, (list, tuple))
    dec_list = [decoders] if single else list(decoders)
    d_z = dec_list[0].d_z
    if n == 0:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        empty = [np.empty((0, len(coords))) if len(dec.branches) == 1
                 else np.empty((0, len(coords), len(dec.branches)))
                 for dec in dec_list]
        return empty[0] if single else tuple(empty)
    z0 = rk4_sample(velocity, n, d_z, seed=seed, n_steps=n_steps)
    fields = [nets.decode_eval(dec, z0, coords) for dec in dec_list]
    return fields[0] if single else tuple(fields)
