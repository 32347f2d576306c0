"""VAE loss pieces against closed forms, a naive-loop oracle, and
end-to-end training smoke checks on miniature models."""

import io

import numpy as np
import pytest

import clfm.autodiff as ad
from clfm import constraints as cons
from clfm import fieldgen as fg
from clfm import networks as nets
from clfm import vae
from clfm.optim import Adam


def tiny_model(seed=0, m=6, d_z=2, p=6, hidden=(16,), domain=(0.0, 1.0), with_v=False):
    xs = np.linspace(domain[0], domain[1], m).reshape(-1, 1)
    enc = nets.init_params(nets.EncoderSpec(m, d_z, hidden=hidden), seed)
    dspec = nets.DecoderSpec(d_z, 1, p, branch_hidden=hidden, trunk_hidden=hidden,
                             domain_lo=(domain[0],), domain_hi=(domain[1],))
    dec_u = nets.init_params(dspec, seed + 1)
    dec_v = nets.init_params(dspec, seed + 2) if with_v else None
    return vae.VaeModel(enc, dec_u, vae.MeasurementOperator(xs), decoder_v=dec_v)


def se_kernel(xa, xb):
    d = np.linalg.norm(np.atleast_2d(xa) - np.atleast_2d(xb), axis=-1)
    return 0.5 * np.exp(-d**2 / (2.0 * 0.1**2))


# -- reparameterization -------------------------------------------------

def test_reparameterize_zero_noise_returns_mean():
    mu = ad.constant(np.array([[1.0, -2.0]]))
    sigma = ad.constant(np.array([[0.5, 3.0]]))
    z = vae.reparameterize(mu, sigma, np.zeros((1, 2)))
    np.testing.assert_array_equal(z.value, mu.value)


def test_reparameterize_clamped_sigma_floor():
    mu = ad.constant(np.array([[2.0]]))
    sigma = ad.constant(np.array([[np.exp(-5.0)]]))
    z = vae.reparameterize(mu, sigma, np.ones((1, 1)))
    assert z.value.item() == pytest.approx(2.0 + np.exp(-5.0), rel=1e-15)


def test_reparameterize_monte_carlo_mean():
    rng = np.random.default_rng(0)
    n = 100_000
    mu = ad.constant(np.full((n, 1), 0.7))
    sigma = ad.constant(np.full((n, 1), 1.3))
    z = vae.reparameterize(mu, sigma, rng.standard_normal((n, 1)))
    assert abs(z.value.mean() - 0.7) < 3.0 * 1.3 / np.sqrt(n)


def test_reparameterize_gradient_reaches_both_heads():
    mu = ad.tensor(np.zeros((2, 3)))
    sigma = ad.tensor(np.ones((2, 3)))
    eps = np.random.default_rng(1).standard_normal((2, 3))
    ad.backward(ad.sum(ad.square(vae.reparameterize(mu, sigma, eps))))
    assert mu.grad is not None and sigma.grad is not None
    assert np.abs(sigma.grad).max() > 0


def test_reparameterize_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        vae.reparameterize(ad.constant(np.zeros((1, 2))),
                           ad.constant(np.ones((1, 3))), np.zeros((1, 2)))


# -- KL divergence ------------------------------------------------------

def test_kl_standard_normal_is_zero():
    kl = vae.kl_diag_gaussian(ad.constant(np.zeros(3)), ad.constant(np.ones(3)))
    assert kl.value.item() == 0.0


def test_kl_unit_mean_shift():
    kl = vae.kl_diag_gaussian(ad.constant(np.array([1.0])), ad.constant(np.array([1.0])))
    assert kl.value.item() == pytest.approx(0.5, rel=1e-15)


def test_kl_sigma_e_closed_form():
    kl = vae.kl_diag_gaussian(ad.constant(np.array([0.0])), ad.constant(np.array([np.e])))
    assert kl.value.item() == pytest.approx(2.1945280494653247, rel=1e-12)


def test_kl_batch_averages_rowwise_sums():
    rng = np.random.default_rng(2)
    mu = rng.standard_normal((4, 3))
    sig = np.abs(rng.standard_normal((4, 3))) + 0.3
    kl = vae.kl_diag_gaussian(ad.constant(mu), ad.constant(sig))
    rows = [sum(0.5 * (m**2 + s**2 - 1.0) - np.log(s)
                for m, s in zip(mu[i], sig[i])) for i in range(4)]
    assert kl.value.item() == pytest.approx(np.mean(rows), rel=1e-12)
    assert kl.value.item() >= 0.0


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        vae.kl_diag_gaussian(ad.constant(np.zeros(2)), ad.constant(np.array([1.0, 0.0])))


# -- reconstruction -----------------------------------------------------

def test_reconstruction_zero_when_decoder_matches():
    model = tiny_model()
    z = ad.constant(np.random.default_rng(3).standard_normal((4, 2)))
    y = model.sensors.observe(model.decoder_u, z).value
    loss = vae.reconstruction_loss(model.decoder_u, z, model.sensors, y)
    assert loss.value.item() == 0.0


def test_reconstruction_constant_offset():
    model = tiny_model()
    z = ad.constant(np.random.default_rng(4).standard_normal((3, 2)))
    y = model.sensors.observe(model.decoder_u, z).value + 0.25
    loss = vae.reconstruction_loss(model.decoder_u, z, model.sensors, y)
    assert loss.value.item() == pytest.approx(0.0625, rel=1e-12)


def test_reconstruction_matches_naive_loops():
    model = tiny_model(seed=5)
    rng = np.random.default_rng(5)
    z = ad.constant(rng.standard_normal((3, 2)))
    y = rng.standard_normal((3, model.sensors.m))
    loss = vae.reconstruction_loss(model.decoder_u, z, model.sensors, y)
    pred = nets.decode_eval(model.decoder_u, z.value, model.sensors.coords)
    acc = 0.0
    for b in range(3):
        for s in range(model.sensors.m):
            acc += (pred[b, s] - y[b, s]) ** 2
    assert loss.value.item() == pytest.approx(acc / (3 * model.sensors.m), rel=1e-12)


def test_reconstruction_sensor_count_mismatch():
    model = tiny_model()
    z = ad.constant(np.zeros((2, 2)))
    with pytest.raises(ad.ShapeError):
        vae.reconstruction_loss(model.decoder_u, z, model.sensors,
                                np.zeros((2, model.sensors.m + 1)))


# -- collocation sampling -----------------------------------------------

def test_sample_collocation_reproducible_and_bounded():
    a = vae.sample_collocation(3, 0.0, 1.0, np.random.default_rng(42))
    b = vae.sample_collocation(3, 0.0, 1.0, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    pts = vae.sample_collocation(10_000, 0.0, 1.0, np.random.default_rng(0))
    assert np.all((pts >= 0.0) & (pts <= 1.0))
    assert abs(pts.mean() - 0.5) < 0.02


def test_sample_collocation_box_and_errors():
    pts = vae.sample_collocation(500, [0.0, 2.0], [1.0, 3.0], np.random.default_rng(1))
    assert pts.shape == (500, 2)
    assert np.all(pts[:, 1] >= 2.0) and np.all(pts[:, 1] <= 3.0)
    with pytest.raises(ValueError):
        vae.sample_collocation(3, 1.0, 1.0, np.random.default_rng(0))


# -- loss assembly and training step ------------------------------------

def test_breakdown_invariant_enforced():
    with pytest.raises(ValueError):
        vae.VaeLossBreakdown(reconstruction=1.0, kl=1.0, statistics_residual=0.0,
                             physics_residual=0.0, total=5.0,
                             lam_kl=0.1, lam_r=0.0, lam_f=0.0)
    with pytest.raises(ValueError):
        vae.VaeLossBreakdown(reconstruction=-1.0, kl=0.0, statistics_residual=0.0,
                             physics_residual=0.0, total=-1.0,
                             lam_kl=0.0, lam_r=0.0, lam_f=0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        vae.TrainConfig(lam_r=1.0, lam_f=1.0)
    with pytest.raises(ValueError):
        vae.TrainConfig(lam_kl=-1e-6)
    with pytest.raises(ValueError):
        vae.TrainConfig(n_colloc=0)


def test_sensors_must_sit_inside_domain():
    with pytest.raises(ValueError):
        tiny_model(m=4, domain=(0.0, 1.0)).sensors.check_inside([0.5], [1.0])


def test_plain_vae_step_reports_zero_residuals():
    model = tiny_model()
    cfg = vae.TrainConfig(batch_size=4, epochs=1, lam_r=0.0, lam_f=0.0)
    opt = Adam(model.parameters(), lr=1e-3)
    y = np.random.default_rng(6).standard_normal((4, model.sensors.m))
    b = vae.vae_train_step(model, y, cfg, None, opt, np.random.default_rng(0))
    assert b.statistics_residual == 0.0
    assert b.physics_residual == 0.0
    assert b.total == pytest.approx(b.reconstruction + cfg.lam_kl * b.kl)


def test_train_step_bit_reproducible():
    def run():
        model = tiny_model(seed=7)
        cfg = vae.TrainConfig(batch_size=4, lam_r=1.0, n_colloc=5)
        constraint = cons.StatisticalConstraint("covariance", se_kernel, weight=1.0)
        opt = Adam(model.parameters(), lr=1e-3)
        y = np.random.default_rng(8).standard_normal((4, model.sensors.m))
        b = vae.vae_train_step(model, y, cfg, constraint, opt, np.random.default_rng(9))
        return b, [p.value.copy() for p in model.parameters()]

    b1, p1 = run()
    b2, p2 = run()
    assert b1 == b2
    for a, c in zip(p1, p2):
        np.testing.assert_array_equal(a, c)


def test_constraint_weight_scales_residual():
    def residual(weight):
        model = tiny_model(seed=7)
        cfg = vae.TrainConfig(batch_size=4, lam_r=1.0, n_colloc=5)
        constraint = cons.StatisticalConstraint("covariance", se_kernel,
                                                weight=weight)
        y = np.random.default_rng(8).standard_normal((4, model.sensors.m))
        eps = np.random.default_rng(9).standard_normal((4, 2))
        _, parts = vae.vae_loss(model, y, cfg, constraint, eps=eps,
                                rng=np.random.default_rng(10))
        return float(parts["statistics_residual"].value)

    assert residual(2.0) == pytest.approx(2.0 * residual(1.0), rel=1e-12)


def test_train_step_aborts_on_non_finite_loss():
    model = tiny_model()
    model.encoder.mlp.weights[0].value[0, 0] = np.nan
    cfg = vae.TrainConfig(batch_size=2)
    opt = Adam(model.parameters(), lr=1e-3)
    y = np.zeros((2, model.sensors.m))
    with pytest.raises(FloatingPointError):
        vae.vae_train_step(model, y, cfg, None, opt, np.random.default_rng(0))


def test_physics_step_requires_second_decoder():
    model = tiny_model(domain=(0.0, np.pi))
    cfg = vae.TrainConfig(batch_size=2, lam_f=1.0, n_colloc=3)
    constraint = cons.PhysicalConstraint(forcing=np.sin)
    opt = Adam(model.parameters(), lr=1e-3)
    y = np.zeros((2, model.sensors.m))
    with pytest.raises(ValueError):
        vae.vae_train_step(model, y, cfg, constraint, opt, np.random.default_rng(0))


def test_unconstrained_overfit_single_point():
    # with all weights off, repeated observation drives reconstruction down
    model = tiny_model(seed=11)
    cfg = vae.TrainConfig(batch_size=8, lam_kl=0.0)
    opt = Adam(model.parameters(), lr=1e-2)
    y = np.tile(np.sin(np.linspace(0, 3, model.sensors.m)), (8, 1))
    rng = np.random.default_rng(10)
    losses = [vae.vae_train_step(model, y, cfg, None, opt, rng).reconstruction
              for _ in range(51)]
    assert losses[50] < losses[0]


def test_full_loss_gradcheck_covariance():
    model = tiny_model(seed=12, m=4, hidden=(5,), p=3)
    cfg = vae.TrainConfig(batch_size=2, lam_kl=0.01, lam_r=0.5, n_colloc=3)
    constraint = cons.StatisticalConstraint("covariance", se_kernel, weight=0.5)
    y = np.random.default_rng(13).standard_normal((2, 4))
    eps = np.random.default_rng(14).standard_normal((2, 2))

    def fn():
        total, _ = vae.vae_loss(model, y, cfg, constraint, eps=eps,
                                rng=np.random.default_rng(15))
        return total

    assert ad.grad_check(fn, model.parameters()) < 1e-4


def test_full_loss_gradcheck_physics():
    model = tiny_model(seed=16, m=4, hidden=(5,), p=3, domain=(0.0, np.pi),
                       with_v=True)
    cfg = vae.TrainConfig(batch_size=2, lam_kl=0.01, lam_f=0.5, n_colloc=3)
    constraint = cons.PhysicalConstraint(forcing=np.sin, weight=0.5, h=1e-2)
    y = np.random.default_rng(17).standard_normal((2, 4))
    eps = np.random.default_rng(18).standard_normal((2, 2))

    def fn():
        total, _ = vae.vae_loss(model, y, cfg, constraint, eps=eps,
                                rng=np.random.default_rng(19))
        return total

    assert ad.grad_check(fn, model.parameters()) < 1e-4


def test_coherence_constraint_step_runs():
    # field of (height, time); two spatial draws give one coherence pair
    t_grid = np.arange(32) / 6.0
    enc = nets.init_params(nets.EncoderSpec(8, 2, hidden=(8,)), 20)
    dec = nets.init_params(nets.DecoderSpec(2, 2, 4, branch_hidden=(8,),
                                            trunk_hidden=(8,),
                                            domain_lo=(1.0, 0.0),
                                            domain_hi=(40.0, t_grid[-1])), 21)
    sensor_coords = np.column_stack([np.full(8, 10.0), t_grid[::4]])
    model = vae.VaeModel(enc, dec, vae.MeasurementOperator(sensor_coords))
    constraint = cons.StatisticalConstraint(
        "coherence", lambda x1, x2, f: fg.coherence_target(x1, x2, f),
        weight=1.0, time_grid=t_grid, n_spatial=2, seg_len=8)
    cfg = vae.TrainConfig(batch_size=3, lam_r=1.0)
    opt = Adam(model.parameters(), lr=1e-3)
    y = np.random.default_rng(22).standard_normal((3, 8))
    b = vae.vae_train_step(model, y, cfg, constraint, opt, np.random.default_rng(23))
    assert np.isfinite(b.total)
    assert b.statistics_residual > 0


def test_train_vae_history_and_logging():
    model = tiny_model(seed=24)
    spec = fg.GpSpec()
    Y = fg.gp_sample(spec, model.sensors.coords, 32, seed=25)
    cfg = vae.TrainConfig(batch_size=16, epochs=30, lam_r=1.0, n_colloc=5, seed=3)
    constraint = cons.StatisticalConstraint("covariance",
                                            lambda a, b: fg.gp_kernel(spec, a, b))
    log = io.StringIO()
    hist = vae.train_vae(model, Y, cfg, constraint, log=log)
    assert len(hist.epochs) == 30
    assert hist.best_total == min(e.total for e in hist.epochs)
    assert hist.epochs[-1].total < hist.epochs[0].total  # learning happened
    lines = log.getvalue().strip().split("\n")
    assert lines[0] == "epoch,reconstruction,kl,stat_residual,phys_residual,total"
    assert len(lines) == 31


def test_train_vae_restores_best_parameters():
    def run(epochs):
        model = tiny_model(seed=26)
        Y = np.random.default_rng(27).standard_normal((16, model.sensors.m))
        cfg = vae.TrainConfig(batch_size=8, epochs=epochs, seed=4)
        vae.train_vae(model, Y, cfg)
        return model

    # training twice as long cannot end worse than the best seen: the
    # restored parameters always achieve hist.best_total
    m = run(20)
    Y = np.random.default_rng(27).standard_normal((16, m.sensors.m))
    cfg = vae.TrainConfig(batch_size=8, epochs=0, seed=4)
    hist2 = vae.train_vae(m, Y, cfg)
    assert hist2.epochs == []
