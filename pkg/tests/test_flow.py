"""Latent flow matching: interpolation, training objective, RK4 sampling."""

import io

import numpy as np
import pytest

from clfm import autodiff as ad
from clfm import flow
from clfm import networks as nets
from clfm.optim import Adam


def identity_encoder(d_z: int) -> nets.Encoder:
    # single linear layer mapping y to (mean=y, logvar=0)
    W = np.zeros((d_z, 2 * d_z))
    W[:d_z, :d_z] = np.eye(d_z)
    mlp = nets.MlpParams([ad.tensor(W)], [ad.tensor(np.zeros(2 * d_z))])
    return nets.Encoder(mlp, d_z)


def zero_net_with_bias(d_z: int, bias: np.ndarray) -> flow.VelocityNet:
    # all weights zero so the output equals the final bias everywhere
    vnet = flow.init_velocity_net(d_z, hidden=(8,), seed=0)
    for w in vnet.mlp.weights:
        w.value[...] = 0.0
    for b in vnet.mlp.biases:
        b.value[...] = 0.0
    vnet.mlp.biases[-1].value[...] = bias
    return vnet


def optimal_flow_loss(d_z: int, sigma: float, n_grid: int = 20001) -> float:
    """Bayes risk of the velocity regression under the unit-Gaussian pairing.

    The target v = z1 - z0 and the input w = (1-t) z0 + t z1 + sigma * eps are
    jointly Gaussian per dimension, so the conditional expectation E[v | w, t]
    leaves residual variance Var(v) - Cov(v,w)^2 / Var(w); integrate over t.
    """
    t = np.linspace(0.0, 1.0, n_grid)
    a = np.array([-1.0, 1.0, 0.0])
    risks = np.empty_like(t)
    for i, ti in enumerate(t):
        b = np.array([1.0 - ti, ti, sigma])
        risks[i] = a @ a - (a @ b) ** 2 / (b @ b)
    return d_z * float(np.trapezoid(risks, t))


class TestInterpolate:
    def test_endpoints(self):
        z0 = np.array([[1.0, -2.0]])
        z1 = np.array([[3.0, 5.0]])
        assert np.array_equal(flow.interpolate(z0, z1, 0.0), z0)
        assert np.array_equal(flow.interpolate(z0, z1, 1.0), z1)

    def test_midpoint(self):
        out = flow.interpolate(np.array([0.0, 0.0]), np.array([2.0, 2.0]), 0.5)
        assert np.array_equal(out, np.array([1.0, 1.0]))

    def test_per_row_times(self):
        z0 = np.zeros((3, 2))
        z1 = np.ones((3, 2))
        t = np.array([[0.0], [0.5], [1.0]])
        out = flow.interpolate(z0, z1, t)
        assert np.array_equal(out, np.array([[0, 0], [0.5, 0.5], [1, 1]]))

    def test_time_out_of_range(self):
        z = np.zeros((1, 2))
        with pytest.raises(ValueError):
            flow.interpolate(z, z, 1.5)
        with pytest.raises(ValueError):
            flow.interpolate(z, z, -0.1)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            flow.interpolate(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)


class TestFlowMatchingLoss:
    def test_exact_velocity_gives_zero_loss(self):
        # network output is the constant c; target z1 - z0 is also c
        c = np.array([0.7, -1.3])
        vnet = zero_net_with_bias(2, c)
        z_t = np.random.default_rng(0).standard_normal((6, 2))
        t = np.random.default_rng(1).uniform(0, 1, (6, 1))
        target = np.broadcast_to(c, (6, 2)).copy()
        loss = flow.flow_matching_loss(vnet, z_t, t, target)
        assert float(loss.value) == 0.0

    def test_zero_net_loss_is_mean_squared_target(self):
        vnet = zero_net_with_bias(2, np.zeros(2))
        rng = np.random.default_rng(2)
        z_t = rng.standard_normal((5, 2))
        t = rng.uniform(0, 1, (5, 1))
        target = rng.standard_normal((5, 2))
        loss = flow.flow_matching_loss(vnet, z_t, t, target)
        assert np.isclose(float(loss.value), np.mean(np.sum(target**2, axis=1)))

    def test_gradients_match_finite_differences(self):
        vnet = flow.init_velocity_net(2, hidden=(6, 5), seed=4)
        rng = np.random.default_rng(5)
        z_t = rng.standard_normal((4, 2))
        t = rng.uniform(0, 1, (4, 1))
        target = rng.standard_normal((4, 2))
        err = ad.grad_check(
            lambda: flow.flow_matching_loss(vnet, z_t, t, target),
            vnet.tensors())
        assert err < 1e-5


class TestTrainStep:
    def setup_method(self):
        self.enc = identity_encoder(2)
        self.cfg = flow.FlowTrainConfig(batch_size=8, noise=0.01, seed=0)

    def run_step(self, seed=9, **kw):
        cfg = flow.FlowTrainConfig(batch_size=8, noise=0.01, **kw)
        vnet = flow.init_velocity_net(2, hidden=(8, 8), seed=1)
        opt = Adam(vnet.tensors(), lr=cfg.lr)
        rng = np.random.default_rng(seed)
        y = np.random.default_rng(3).standard_normal((8, 2))
        loss = flow.fm_train_step(y, self.enc, vnet, cfg, opt, rng)
        return loss, vnet

    def test_step_is_bit_reproducible(self):
        loss_a, net_a = self.run_step()
        loss_b, net_b = self.run_step()
        assert loss_a == loss_b
        for pa, pb in zip(net_a.tensors(), net_b.tensors()):
            assert np.array_equal(pa.value, pb.value)

    def test_encoder_untouched_and_velocity_updated(self):
        enc_before = [p.value.copy() for p in self.enc.tensors()]
        vnet = flow.init_velocity_net(2, hidden=(8, 8), seed=1)
        vnet_before = [p.value.copy() for p in vnet.tensors()]
        opt = Adam(vnet.tensors(), lr=1e-3)
        y = np.random.default_rng(3).standard_normal((8, 2))
        flow.fm_train_step(y, self.enc, vnet, self.cfg, opt,
                           np.random.default_rng(9))
        for p, before in zip(self.enc.tensors(), enc_before):
            assert np.array_equal(p.value, before)
        assert any(not np.array_equal(p.value, before)
                   for p, before in zip(vnet.tensors(), vnet_before))

    def test_posterior_sampling_switch_changes_input(self):
        loss_mean, _ = self.run_step(sample_z0=False)
        loss_sampled, _ = self.run_step(sample_z0=True)
        assert loss_mean != loss_sampled

    def test_empty_batch_rejected(self):
        vnet = flow.init_velocity_net(2, seed=1)
        opt = Adam(vnet.tensors())
        with pytest.raises(ValueError):
            flow.fm_train_step(np.empty((0, 2)), self.enc, vnet, self.cfg,
                               opt, np.random.default_rng(0))

    def test_nonfinite_loss_aborts_before_update(self):
        vnet = flow.init_velocity_net(2, hidden=(8,), seed=1)
        vnet.mlp.weights[0].value[...] = 1e200
        before = [p.value.copy() for p in vnet.tensors()]
        opt = Adam(vnet.tensors())
        y = np.random.default_rng(3).standard_normal((8, 2))
        with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
            flow.fm_train_step(y, self.enc, vnet, self.cfg, opt,
                               np.random.default_rng(9))
        for p, b in zip(vnet.tensors(), before):
            assert np.array_equal(p.value, b)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            flow.FlowTrainConfig(noise=-0.01)
        with pytest.raises(ValueError):
            flow.FlowTrainConfig(batch_size=0)


class TestTrainedLossLevel:
    def test_loss_approaches_conditional_expectation_bound(self):
        # identity encoder feeds z0 = y ~ N(0, I); regression on fresh batches
        d_z = 2
        enc = identity_encoder(d_z)
        vnet = flow.init_velocity_net(d_z, hidden=(48, 48), seed=3)
        cfg = flow.FlowTrainConfig(batch_size=128, lr=2e-3, noise=0.01, seed=5)
        opt = Adam(vnet.tensors(), lr=cfg.lr)
        rng = np.random.default_rng(7)
        losses = []
        for _ in range(1500):
            y = rng.standard_normal((cfg.batch_size, d_z))
            losses.append(flow.fm_train_step(y, enc, vnet, cfg, opt, rng))
        tail = float(np.mean(losses[-300:]))
        oracle = optimal_flow_loss(d_z, cfg.noise)
        assert abs(tail - oracle) / oracle < 0.08
        assert tail > oracle - 0.05  # cannot beat the Bayes risk
        assert tail < 2.0 * d_z  # strictly below the naive variance level

    def test_oracle_matches_closed_form_at_zero_noise(self):
        assert np.isclose(optimal_flow_loss(1, 0.0), np.pi / 2, atol=1e-8)


class TestTrainFlow:
    def make_problem(self):
        enc = identity_encoder(2)
        vnet = flow.init_velocity_net(2, hidden=(16, 16), seed=2)
        Y = np.random.default_rng(11).standard_normal((64, 2))
        return enc, vnet, Y

    def test_history_and_log(self):
        enc, vnet, Y = self.make_problem()
        cfg = flow.FlowTrainConfig(batch_size=32, epochs=5, seed=1)
        log = io.StringIO()
        history = flow.train_flow(Y, enc, vnet, cfg, log=log)
        assert len(history) == 5 and all(np.isfinite(h) for h in history)
        lines = log.getvalue().strip().split("\n")
        assert lines[0] == "epoch,fm_loss"
        assert len(lines) == 6
        assert np.isclose(float(lines[1].split(",")[1]), history[0],
                          rtol=1e-9)

    def test_training_reduces_loss(self):
        # wide latent spread puts the initial loss far above the optimum
        enc, vnet, _ = self.make_problem()
        Y = 5.0 * np.random.default_rng(11).standard_normal((64, 2))
        cfg = flow.FlowTrainConfig(batch_size=32, epochs=60, lr=3e-3, seed=1)
        history = flow.train_flow(Y, enc, vnet, cfg)
        assert np.mean(history[-5:]) < 0.6 * history[0]

    def test_same_seed_same_history_and_params(self):
        enc, vnet_a, Y = self.make_problem()
        cfg = flow.FlowTrainConfig(batch_size=32, epochs=4, seed=6)
        hist_a = flow.train_flow(Y, enc, vnet_a, cfg)
        vnet_b = flow.init_velocity_net(2, hidden=(16, 16), seed=2)
        hist_b = flow.train_flow(Y, enc, vnet_b, cfg)
        assert hist_a == hist_b
        for pa, pb in zip(vnet_a.tensors(), vnet_b.tensors()):
            assert np.array_equal(pa.value, pb.value)


class TestRk4Sample:
    def test_constant_field_shifts_by_exactly_c(self):
        c = np.array([0.4, -1.1, 2.0])
        z0 = flow.rk4_sample(lambda z, t: np.broadcast_to(c, z.shape), 5, 3,
                             seed=12)
        z1 = np.random.default_rng(12).standard_normal((5, 3))
        assert np.allclose(z0, z1 - c, atol=1e-12)

    def test_constant_field_through_network_path(self):
        c = np.array([0.4, -1.1])
        vnet = zero_net_with_bias(2, c)
        z0 = flow.rk4_sample(vnet, 4, seed=13)
        z1 = np.random.default_rng(13).standard_normal((4, 2))
        assert np.allclose(z0, z1 - c, atol=1e-12)

    def test_linear_field_contracts_by_e(self):
        # dz/dt = z integrated backward over unit time scales by exp(-1)
        z0 = flow.rk4_sample(lambda z, t: z, 6, 2, seed=14, n_steps=100)
        z1 = np.random.default_rng(14).standard_normal((6, 2))
        exact = z1 * np.exp(-1.0)
        rel = np.abs(z0 - exact) / np.abs(exact)
        assert rel.max() < 1e-8

    def test_halving_steps_scales_error_fourth_order(self):
        z1 = np.random.default_rng(15).standard_normal((8, 2))
        exact = z1 * np.exp(-1.0)
        errs = {}
        for n_steps in (50, 100):
            z0 = flow.rk4_sample(lambda z, t: z, 8, 2, seed=15,
                                 n_steps=n_steps)
            errs[n_steps] = np.abs(z0 - exact).max()
        ratio = errs[50] / errs[100]
        assert 14.0 < ratio < 18.0

    def test_time_argument_seen_by_field(self):
        # velocity 2t has backward integral 1, independent of z
        z0 = flow.rk4_sample(
            lambda z, t: np.full(z.shape, 2.0 * t), 3, 2, seed=16)
        z1 = np.random.default_rng(16).standard_normal((3, 2))
        assert np.allclose(z0, z1 - 1.0, atol=1e-12)

    def test_divergence_raises(self):
        with pytest.raises(FloatingPointError):
            flow.rk4_sample(lambda z, t: -1e5 * z, 2, 2, seed=0,
                            n_steps=100)

    def test_bare_callable_requires_d_z(self):
        with pytest.raises(ValueError):
            flow.rk4_sample(lambda z, t: z, 2, seed=0)

    def test_seed_determinism(self):
        a = flow.rk4_sample(lambda z, t: z, 4, 2, seed=21)
        b = flow.rk4_sample(lambda z, t: z, 4, 2, seed=21)
        c = flow.rk4_sample(lambda z, t: z, 4, 2, seed=22)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestGenerateFields:
    def make_parts(self):
        spec = nets.DecoderSpec(d_z=2, d_x=1, p=6, branch_hidden=(8,),
                                trunk_hidden=(8,))
        dec_u = nets.init_params(spec, seed=30)
        dec_v = nets.init_params(spec, seed=31)
        vnet = flow.init_velocity_net(2, hidden=(8,), seed=32)
        coords = np.linspace(0, 1, 7)[:, None]
        return dec_u, dec_v, vnet, coords

    def test_zero_samples_gives_empty(self):
        dec_u, dec_v, vnet, coords = self.make_parts()
        out = flow.generate_fields(vnet, dec_u, 0, coords, seed=0)
        assert out.shape == (0, 7)
        pair = flow.generate_fields(vnet, [dec_u, dec_v], 0, coords, seed=0)
        assert pair[0].shape == (0, 7) and pair[1].shape == (0, 7)

    def test_single_decoder_shape_and_determinism(self):
        dec_u, _, vnet, coords = self.make_parts()
        a = flow.generate_fields(vnet, dec_u, 5, coords, seed=40)
        b = flow.generate_fields(vnet, dec_u, 5, coords, seed=40)
        c = flow.generate_fields(vnet, dec_u, 5, coords, seed=41)
        assert a.shape == (5, 7)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_paired_decoders_share_latents(self):
        dec_u, dec_v, vnet, coords = self.make_parts()
        u, v = flow.generate_fields(vnet, [dec_u, dec_v], 5, coords, seed=42)
        z0 = flow.rk4_sample(vnet, 5, seed=42)
        assert np.array_equal(u, nets.decode_eval(dec_u, z0, coords))
        assert np.array_equal(v, nets.decode_eval(dec_v, z0, coords))
