"""Estimator facade over the VAE + latent flow pipeline.

``ConstrainedLatentFlow`` packages network construction, two-phase training
(autoencoder, then flow matching in the frozen latent space) and flow-based
sampling behind a fit/sample interface with scikit-learn parameter
semantics: constructor arguments are stored verbatim, all validation and
work happen in :meth:`fit`, and fitted state lives in trailing-underscore
attributes.
"""

from __future__ import annotations

import operator
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import flow
from . import networks as nets
from . import vae
from .constraints import PhysicalConstraint, StatisticalConstraint

__all__ = ["ConstrainedLatentFlow"]


def _as_seed(value, default: int) -> int:
    if value is None:
        return default
    try:
        return operator.index(value)
    except TypeError:
        raise TypeError(f"random_state must be an integer, got {value!r}")


class ConstrainedLatentFlow(BaseEstimator):
    """Generative model for random functions observed at fixed sensors.

    ``fit`` learns a latent-variable model of the training ensemble: an
    encoder maps each observation vector to a Gaussian posterior over a
    low-dimensional latent code, a branch/trunk decoder maps codes to
    functions over the domain, and a velocity network learns to transport
    a standard normal onto the aggregate latent posterior. ``sample``
    integrates that transport backwards and decodes, yielding new function
    realizations on any coordinate grid.

    An optional constraint term regularizes the decoder ensemble during
    training: a :class:`StatisticalConstraint` penalizes mismatch with a
    target second-moment structure, a :class:`PhysicalConstraint` penalizes
    the residual of a governing equation (and adds a second decoder for the
    inferred coefficient field, exposed via :meth:`sample_fields`).

    Parameters mirror the underlying training configs; ``lam_constraint``
    is routed to the statistical or physical residual weight according to
    the constraint's type.
    """

    def __init__(self, d_z: int = 4, p: int = 64,
                 encoder_hidden: Sequence[int] = (128, 128, 128),
                 branch_hidden: Sequence[int] = (128, 128),
                 trunk_hidden: Sequence[int] = (128, 128),
                 constraint=None, lam_kl: float = 1e-6,
                 lam_constraint: float = 0.1, n_colloc: int = 50,
                 vae_epochs: int = 200, vae_batch_size: int = 64,
                 vae_lr: float = 1e-3, flow_epochs: int = 200,
                 flow_batch_size: int = 64, flow_lr: float = 1e-3,
                 noise: float = 0.01, rk4_steps: int = 100,
                 domain: Optional[tuple] = None, random_state: int = 0):
        self.d_z = d_z
        self.p = p
        self.encoder_hidden = encoder_hidden
        self.branch_hidden = branch_hidden
        self.trunk_hidden = trunk_hidden
        self.constraint = constraint
        self.lam_kl = lam_kl
        self.lam_constraint = lam_constraint
        self.n_colloc = n_colloc
        self.vae_epochs = vae_epochs
        self.vae_batch_size = vae_batch_size
        self.vae_lr = vae_lr
        self.flow_epochs = flow_epochs
        self.flow_batch_size = flow_batch_size
        self.flow_lr = flow_lr
        self.noise = noise
        self.rk4_steps = rk4_steps
        self.domain = domain
        self.random_state = random_state

    # -- fitting ----------------------------------------------------------

    def _resolve_domain(self, coords: np.ndarray):
        if self.domain is not None:
            lo = np.atleast_1d(np.asarray(self.domain[0], dtype=np.float64))
            hi = np.atleast_1d(np.asarray(self.domain[1], dtype=np.float64))
        else:
            lo, hi = coords.min(axis=0), coords.max(axis=0)
        if lo.shape != (coords.shape[1],) or hi.shape != (coords.shape[1],):
            raise ValueError("domain bounds must match coordinate dimension")
        if np.any(hi <= lo):
            raise ValueError(
                "degenerate domain; pass domain=(lo, hi) explicitly when "
                "sensor coordinates do not span a box")
        return tuple(lo), tuple(hi)

    def _split_constraint_weight(self):
        c = self.constraint
        if c is None:
            return 0.0, 0.0
        if self.lam_constraint < 0:
            raise ValueError("lam_constraint must be >= 0")
        if isinstance(c, PhysicalConstraint):
            return 0.0, self.lam_constraint
        if isinstance(c, StatisticalConstraint):
            return self.lam_constraint, 0.0
        raise TypeError(
            "constraint must be a StatisticalConstraint, a "
            f"PhysicalConstraint or None, got {type(c).__name__}")

    def fit(self, Y, coords=None):
        """Train on an ensemble of sensor observations.

        Y : (n_samples, n_sensors) array, one function realization per row.
        coords : (n_sensors, d_x) sensor locations; defaults to an equally
            spaced grid on [0, 1].
        """
        Y = check_array(Y, dtype=np.float64)
        n, m = Y.shape
        if n < 2:
            raise ValueError("need at least two training realizations")
        if coords is None:
            coords = np.linspace(0.0, 1.0, m).reshape(-1, 1) if m > 1 \
                else np.array([[0.5]])
        coords = check_array(coords, dtype=np.float64)
        if coords.shape[0] != m:
            raise ValueError(
                f"coords has {coords.shape[0]} rows for {m} sensor columns")
        lam_r, lam_f = self._split_constraint_weight()
        seed = _as_seed(self.random_state, 0)
        lo, hi = self._resolve_domain(coords)

        enc = nets.init_params(
            nets.EncoderSpec(m, self.d_z, hidden=tuple(self.encoder_hidden)),
            seed)
        dspec = nets.DecoderSpec(
            self.d_z, coords.shape[1], self.p,
            branch_hidden=tuple(self.branch_hidden),
            trunk_hidden=tuple(self.trunk_hidden),
            domain_lo=lo, domain_hi=hi)
        dec_u = nets.init_params(dspec, seed + 1)
        dec_v = nets.init_params(dspec, seed + 2) if lam_f > 0 else None
        self.model_ = vae.VaeModel(enc, dec_u, vae.MeasurementOperator(coords),
                                   decoder_v=dec_v)

        vae_cfg = vae.TrainConfig(
            batch_size=min(self.vae_batch_size, n), lr=self.vae_lr,
            epochs=self.vae_epochs, lam_kl=self.lam_kl, lam_r=lam_r,
            lam_f=lam_f, n_colloc=self.n_colloc, seed=seed)
        self.vae_history_ = vae.train_vae(self.model_, Y, vae_cfg,
                                          self.constraint)

        self.velocity_ = flow.init_velocity_net(self.d_z, seed=seed + 10)
        flow_cfg = flow.FlowTrainConfig(
            batch_size=min(self.flow_batch_size, n), lr=self.flow_lr,
            epochs=self.flow_epochs, noise=self.noise, seed=seed + 20)
        self.flow_history_ = flow.train_flow(Y, self.model_.encoder,
                                             self.velocity_, flow_cfg)
        self.coords_ = coords
        self.n_features_in_ = m
        return self

    # -- inference --------------------------------------------------------

    def _decoders(self):
        model = self.model_
        if model.decoder_v is not None:
            return (model.decoder_u, model.decoder_v)
        return (model.decoder_u,)

    def sample_latent(self, n_samples: int, random_state=None) -> np.ndarray:
        """Integrate the learned transport; returns (n_samples, d_z) codes."""
        check_is_fitted(self, "velocity_")
        seed = _as_seed(random_state, _as_seed(self.random_state, 0) + 30)
        return flow.rk4_sample(self.velocity_, n_samples, seed=seed,
                               n_steps=self.rk4_steps)

    def sample(self, n_samples: int, coords=None,
               random_state=None) -> np.ndarray:
        """Generate new realizations of the observed field.

        coords defaults to the training sensor locations; pass a denser
        grid to evaluate the decoded functions anywhere in the domain.
        """
        fields = self.sample_fields(n_samples, coords, random_state)
        return fields[0]

    def sample_fields(self, n_samples: int, coords=None,
                      random_state=None) -> tuple:
        """Like :meth:`sample` but returns every decoded field, sharing one
        latent draw; a physics-constrained model yields (observed, inferred).
        """
        check_is_fitted(self, "model_")
        if coords is None:
            coords = self.coords_
        coords = check_array(np.asarray(coords, dtype=np.float64))
        seed = _as_seed(random_state, _as_seed(self.random_state, 0) + 30)
        fields = flow.generate_fields(self.velocity_, self._decoders(),
                                      n_samples, coords, seed=seed,
                                      n_steps=self.rk4_steps)
        if isinstance(fields, np.ndarray):
            return (fields,)
        return fields

    def encode(self, Y) -> np.ndarray:
        """Posterior mean latent code for each observation row."""
        check_is_fitted(self, "model_")
        Y = check_array(Y, dtype=np.float64)
        if Y.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} sensor "
                             f"columns, got {Y.shape[1]}")
        mu, _ = nets.encode_eval(self.model_.encoder, Y)
        return mu

    def reconstruct(self, Y, coords=None) -> np.ndarray:
        """Decode each observation's posterior mean, by default back onto
        the training sensors."""
        z = self.encode(Y)
        if coords is None:
            coords = self.coords_
        coords = check_array(np.asarray(coords, dtype=np.float64))
        return nets.decode_eval(self.model_.decoder_u, z, coords)

    def score(self, Y) -> float:
        """Negative mean squared reconstruction error (higher is better)."""
        Y = check_array(Y, dtype=np.float64)
        recon = self.reconstruct(Y)
        return -float(np.mean((recon - Y) ** 2))
