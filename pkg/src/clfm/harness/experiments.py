"""Experiment pipelines behind the CLI.

Each experiment id wires generators, model construction, training, sampling,
and evaluation into staged runs that leave all artifacts (dataset, loss
curves, checkpoints, sample dumps, metrics, manifest) in a working
directory. Stages fail loudly with their name; artifacts written before the
failure stay on disk.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import os
import typing

import numpy as np

from .. import autodiff as ad
from .. import constraints as cons
from .. import fieldgen as fg
from .. import flow
from .. import networks as nets
from .. import vae
from . import checkpoint as ckpt_mod
from . import config as config_mod
from . import datasets
from .config import ConfigError, ExperimentConfig
from .metrics import MetricsReport, compute_metrics, sample_vae_prior

__all__ = ["StageError", "sensor_coords", "architecture_string",
           "config_from_architecture", "build_model", "build_velocity",
           "build_constraint", "generate_dataset", "run_experiment",
           "run_sweep", "model_param_items", "velocity_param_items",
           "stage_generate", "stage_vae", "stage_flow", "stage_eval",
           "sample_from_checkpoint"]

GP_DOMAIN = (0.0, 1.0)
POISSON_DOMAIN = (0.0, np.pi)
VELOCITY_HIDDEN = (128, 128, 128)

# desk-scale wind setup shared by wind_verification and wind_desk
WIND_VERIFY_SPEC = fg.WindSpec()
WIND_DESK_SPEC = fg.WindSpec(n2=2, n3=2, n_f=32)


class StageError(Exception):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def sensor_coords(m: int, lo: float, hi: float) -> np.ndarray:
    """Equally spaced sensors including endpoints; midpoint when m == 1."""
    if m < 1:
        raise ConfigError("need at least one sensor")
    if m == 1:
        return np.array([[0.5 * (lo + hi)]])
    return np.linspace(lo, hi, m).reshape(-1, 1)


def _wind_spec(cfg: ExperimentConfig) -> fg.WindSpec:
    return WIND_VERIFY_SPEC if cfg.experiment == "wind_verification" \
        else WIND_DESK_SPEC


def _wind_coords(spec: fg.WindSpec):
    """Space-time rows (point-major, time-minor) and their box bounds."""
    pts = spec.grid_points()
    t = spec.time_grid()
    coords = np.hstack([np.repeat(pts, len(t), axis=0),
                        np.tile(t, len(pts))[:, None]])
    lo = (0.0, spec.h_min, float(t[0]))
    hi = (spec.width, spec.h_min + spec.height, float(t[-1]))
    return coords, lo, hi


def architecture_string(cfg: ExperimentConfig) -> str:
    """Flat key=value echo of the model layout; checked at checkpoint load
    and sufficient to rebuild the networks for standalone sampling."""
    net = cfg.network
    d_obs, d_x, n_dec = _model_dims(cfg)
    parts = [
        f"experiment={cfg.experiment}",
        f"d_obs={d_obs}", f"d_x={d_x}", f"d_z={net.d_z}", f"p={net.p}",
        "enc=" + ",".join(str(w) for w in net.encoder_hidden),
        "branch=" + ",".join(str(w) for w in net.branch_hidden),
        "trunk=" + ",".join(str(w) for w in net.trunk_hidden),
        f"blocks={net.branch_blocks}", f"decoders={n_dec}",
        "velocity=" + ",".join(str(w) for w in VELOCITY_HIDDEN),
        f"m_sensors={cfg.dataset.m_sensors}",
    ]
    return " ".join(parts)


def config_from_architecture(arch: str) -> ExperimentConfig:
    """Invert architecture_string enough to rebuild the same networks."""
    try:
        kv = dict(item.split("=", 1) for item in arch.split(" "))
        cfg = config_mod.experiment_defaults(kv["experiment"])
        cfg.dataset.m_sensors = int(kv["m_sensors"])
        cfg.network = config_mod.NetworkConfig(
            d_z=int(kv["d_z"]), p=int(kv["p"]),
            encoder_hidden=tuple(int(w) for w in kv["enc"].split(",")),
            branch_hidden=tuple(int(w) for w in kv["branch"].split(",")),
            trunk_hidden=tuple(int(w) for w in kv["trunk"].split(",")),
            branch_blocks=int(kv["blocks"]))
    except (KeyError, ValueError) as e:
        raise ckpt_mod.CheckpointError(
            f"unreadable architecture echo: {e}") from e
    return cfg


def _model_dims(cfg: ExperimentConfig):
    if cfg.experiment == "gp_reconstruction":
        return cfg.dataset.m_sensors, 1, 1
    if cfg.experiment == "poisson_inference":
        return cfg.dataset.m_sensors, 1, 2
    spec = _wind_spec(cfg)
    return len(spec.grid_points()) * spec.n_t, 3, 1


def build_model(cfg: ExperimentConfig, seed: int = None) -> vae.VaeModel:
    if seed is None:
        seed = cfg.seed
    net = cfg.network
    d_obs, d_x, n_dec = _model_dims(cfg)
    if cfg.experiment == "gp_reconstruction":
        sensors = sensor_coords(cfg.dataset.m_sensors, *GP_DOMAIN)
        lo, hi = (GP_DOMAIN[0],), (GP_DOMAIN[1],)
    elif cfg.experiment == "poisson_inference":
        sensors = sensor_coords(cfg.dataset.m_sensors, *POISSON_DOMAIN)
        lo, hi = (POISSON_DOMAIN[0],), (POISSON_DOMAIN[1],)
    else:
        sensors, lo, hi = _wind_coords(_wind_spec(cfg))
    enc = nets.init_params(
        nets.EncoderSpec(d_obs, net.d_z, hidden=net.encoder_hidden), seed)
    dspec = nets.DecoderSpec(
        net.d_z, d_x, net.p, branch_hidden=net.branch_hidden,
        trunk_hidden=net.trunk_hidden, branch_blocks=net.branch_blocks,
        domain_lo=lo, domain_hi=hi)
    dec_u = nets.init_params(dspec, seed + 1)
    dec_v = nets.init_params(dspec, seed + 2) if n_dec == 2 else None
    return vae.VaeModel(enc, dec_u, vae.MeasurementOperator(sensors),
                        decoder_v=dec_v)


def build_velocity(cfg: ExperimentConfig, seed: int = None) -> flow.VelocityNet:
    if seed is None:
        seed = cfg.seed + 10
    return flow.init_velocity_net(cfg.network.d_z, hidden=VELOCITY_HIDDEN,
                                  seed=seed)


def build_constraint(cfg: ExperimentConfig):
    kind = cfg.constraint.kind
    if kind == "none":
        return None
    if kind in ("covariance", "correlation"):
        gp = fg.GpSpec()

        def kernel(xa, xb):
            xa = np.atleast_2d(xa)
            xb = np.atleast_2d(xb)
            d = np.linalg.norm(xa - xb, axis=-1)
            cov = gp.sigma2 * np.exp(-d**2 / (2.0 * gp.length**2))
            if kind == "correlation":
                return cov / gp.sigma2
            return cov

        return cons.StatisticalConstraint(
            kind, kernel, weight=cfg.constraint.weight,
            pair_budget=cfg.constraint.pair_budget)
    if kind == "coherence":
        spec = _wind_spec(cfg)

        def target(x1, x2, freqs):
            return fg.coherence_target(x1, x2, freqs, u_star=spec.u_star,
                                       z0=spec.z0, c_decay=spec.c_decay)

        return cons.StatisticalConstraint(
            "coherence", target, weight=cfg.constraint.weight,
            pair_budget=cfg.constraint.pair_budget,
            time_grid=spec.time_grid(), n_spatial=cfg.constraint.n_spatial)
    if kind == "physics":
        return cons.PhysicalConstraint(
            forcing=np.sin, weight=cfg.constraint.weight,
            domain=POISSON_DOMAIN)
    raise ConfigError(f"unsupported constraint kind {kind!r}")


def generate_dataset(cfg: ExperimentConfig):
    """Draw training observations; returns (Y, sensor coords, meta)."""
    ds = cfg.dataset
    if cfg.experiment == "gp_reconstruction":
        sensors = sensor_coords(ds.m_sensors, *GP_DOMAIN)
        Y = fg.gp_sample(fg.GpSpec(), sensors, ds.n_train, seed=ds.seed)
        meta = {"experiment": cfg.experiment, "generator": "gp",
                "n": ds.n_train, "m": ds.m_sensors, "seed": ds.seed,
                "sensors": datasets.encode_coords(sensors)}
        return Y, sensors, meta
    if cfg.experiment == "poisson_inference":
        sensors = sensor_coords(ds.m_sensors, *POISSON_DOMAIN)
        x, U, _, _ = fg.poisson_sample(fg.PoissonSpec(), ds.n_train,
                                       seed=ds.seed)
        Y = np.vstack([np.interp(sensors.ravel(), x, u) for u in U])
        meta = {"experiment": cfg.experiment, "generator": "poisson",
                "n": ds.n_train, "m": ds.m_sensors, "seed": ds.seed,
                "sensors": datasets.encode_coords(sensors)}
        return Y, sensors, meta
    spec = _wind_spec(cfg)
    coords, _, _ = _wind_coords(spec)
    _, _, W = fg.wind_sample(spec, ds.n_train, seed=ds.seed)
    Y = W.reshape(ds.n_train, -1)
    meta = {"experiment": cfg.experiment, "generator": "wind_srm",
            "n": ds.n_train, "n2": spec.n2, "n3": spec.n3, "n_f": spec.n_f,
            "seed": ds.seed, "sensors": datasets.encode_coords(coords)}
    return Y, coords, meta


def _config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_mod.dump_config(cfg).encode()).hexdigest()


def model_param_items(model: vae.VaeModel):
    items = [(f"encoder.{i}", t)
             for i, t in enumerate(model.encoder.mlp.tensors())]
    items += [(f"decoder_u.{i}", t)
              for i, t in enumerate(model.decoder_u.tensors())]
    if model.decoder_v is not None:
        items += [(f"decoder_v.{i}", t)
                  for i, t in enumerate(model.decoder_v.tensors())]
    return items


def velocity_param_items(vnet: flow.VelocityNet):
    return [(f"velocity.{i}", t) for i, t in enumerate(vnet.tensors())]


def _save_params(path, items, cfg: ExperimentConfig):
    ckpt = ckpt_mod.Checkpoint(
        architecture=architecture_string(cfg),
        params={name: t.value for name, t in items},
        seed=cfg.seed, config_digest=_config_digest(cfg))
    ckpt_mod.checkpoint_save(path, ckpt)


def _restore_items(ckpt: ckpt_mod.Checkpoint, items):
    for name, t in items:
        if name not in ckpt.params:
            raise ckpt_mod.CheckpointError(f"missing parameter {name}")
        arr = ckpt.params[name]
        if arr.shape != t.value.shape:
            raise ckpt_mod.CheckpointError(
                f"parameter {name} has shape {arr.shape}, "
                f"expected {t.value.shape}")
        t.value[...] = arr


def _restore_params(path, items, cfg: ExperimentConfig):
    ckpt = ckpt_mod.checkpoint_load(path, architecture_string(cfg))
    _restore_items(ckpt, items)


def _eval_grid(cfg: ExperimentConfig) -> np.ndarray:
    size = cfg.evaluation.grid_size
    if cfg.experiment == "gp_reconstruction":
        return np.linspace(*GP_DOMAIN, size).reshape(-1, 1)
    if cfg.experiment == "poisson_inference":
        return np.linspace(*POISSON_DOMAIN, size).reshape(-1, 1)
    coords, _, _ = _wind_coords(_wind_spec(cfg))
    return coords


def _ensemble_coherence_mse(samples: np.ndarray, spec: fg.WindSpec,
                            max_pairs: int = 6) -> float:
    """Welch coherence of (n, P, T) draws against the prescribed target,
    averaged over distinct point pairs and positive frequencies."""
    pts = spec.grid_points()
    n_pts = len(pts)
    pairs = [(i, j) for i in range(n_pts) for j in range(i + 1, n_pts)]
    if len(pairs) > max_pairs:
        idx = np.linspace(0, len(pairs) - 1, max_pairs).astype(int)
        pairs = [pairs[i] for i in idx]
    total = 0.0
    count = 0
    for i, j in pairs:
        freqs, gamma2 = cons.welch_coherence(
            ad.constant(samples[:, i, :]), ad.constant(samples[:, j, :]),
            dt=spec.dt)
        target = fg.coherence_target(pts[i], pts[j], freqs,
                                     u_star=spec.u_star, z0=spec.z0,
                                     c_decay=spec.c_decay)
        total += float(np.sum((gamma2.value - target) ** 2))
        count += len(freqs)
    return total / count


def _variance_ratio(samples: np.ndarray, spec: fg.WindSpec) -> float:
    """Worst-case ratio of empirical point variance to the spectral integral."""
    pts = spec.grid_points()
    ratios = []
    for i in range(len(pts)):
        psd = fg.auto_spectrum(pts[i][-1], spec.freq_bins(),
                               u_star=spec.u_star, z0=spec.z0,
                               lambda1=spec.lambda1)
        target = float(np.sum(psd) * spec.df)
        ratios.append(samples[:, i, :].var() / target)
    ratios = np.asarray(ratios)
    return float(ratios[np.argmax(np.abs(ratios - 1.0))])


class _Run:
    """Shared state for one staged experiment run."""

    def __init__(self, cfg: ExperimentConfig, workdir: str):
        self.cfg = cfg
        self.workdir = workdir
        self.artifacts: list[str] = []
        os.makedirs(workdir, exist_ok=True)
        self._write_text("effective_config.ini", config_mod.dump_config(cfg))

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, name)

    def _write_text(self, name: str, text: str):
        with open(self.path(name), "w") as fh:
            fh.write(text)
        self.note(name)

    def note(self, name: str):
        if name not in self.artifacts:
            self.artifacts.append(name)

    def write_manifest(self):
        lines = [f"experiment {self.cfg.experiment}",
                 f"config_digest {_config_digest(self.cfg)}"]
        for name in self.artifacts:
            digest = hashlib.sha256(
                open(self.path(name), "rb").read()).hexdigest()
            lines.append(f"artifact {name} sha256:{digest}")
        with open(self.path("manifest.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _stage(run: _Run, name: str, fn):
    try:
        return fn()
    except Exception as e:
        run.write_manifest()
        raise StageError(name, e) from e


def _stage_dataset(run: _Run, prefer_existing: bool = False):
    cfg = run.cfg
    local = run.path("dataset.csv")
    source = cfg.dataset.path or (local if prefer_existing
                                  and os.path.exists(local) else "")
    if source:
        Y, meta = datasets.load_table(source)
        sensors = datasets.decode_coords(meta["sensors"])
        return Y, sensors
    Y, sensors, meta = generate_dataset(cfg)
    datasets.save_table(local, Y, meta)
    run.note("dataset.csv")
    return Y, sensors


def _stage_train_vae(run: _Run, Y):
    cfg = run.cfg
    model = build_model(cfg)
    constraint = build_constraint(cfg)
    with open(run.path("vae_loss.csv"), "w") as log:
        run.note("vae_loss.csv")
        vae.train_vae(model, Y, cfg.vae_train, constraint, log=log)
    _save_params(run.path("model.ckpt"), model_param_items(model), cfg)
    run.note("model.ckpt")
    return model


def _stage_train_flow(run: _Run, model, Y):
    cfg = run.cfg
    vnet = build_velocity(cfg)
    with open(run.path("flow_loss.csv"), "w") as log:
        run.note("flow_loss.csv")
        flow.train_flow(Y, model.encoder, vnet, cfg.flow_train, log=log)
    # combined checkpoint carries everything standalone sampling needs
    _save_params(run.path("checkpoint.ckpt"),
                 model_param_items(model) + velocity_param_items(vnet), cfg)
    run.note("checkpoint.ckpt")
    return vnet


def _stage_sample(run: _Run, model, vnet):
    cfg = run.cfg
    grid = _eval_grid(cfg)
    n = cfg.evaluation.n_eval_samples
    decoders = [model.decoder_u]
    names = ["samples_u.csv"]
    if model.decoder_v is not None:
        decoders.append(model.decoder_v)
        names.append("samples_v.csv")
    fields = flow.generate_fields(vnet, decoders, n, grid,
                                  seed=cfg.evaluation.seed)
    fields = fields if isinstance(fields, tuple) else (fields,)
    meta = {"experiment": cfg.experiment, "n": n,
            "seed": cfg.evaluation.seed,
            "grid": datasets.encode_coords(grid)}
    for name, data in zip(names, fields):
        datasets.save_table(run.path(name), data, meta)
        run.note(name)
    return grid, fields


def _stage_evaluate(run: _Run, grid, fields):
    cfg = run.cfg
    n = cfg.evaluation.n_eval_samples
    truth_seed = cfg.evaluation.seed + 1
    if cfg.experiment == "gp_reconstruction":
        truth = fg.gp_sample(fg.GpSpec(), grid, n, seed=truth_seed)
        report = compute_metrics(fields[0], truth, grid)
    elif cfg.experiment == "poisson_inference":
        x, _, V, _ = fg.poisson_sample(fg.PoissonSpec(), n, seed=truth_seed)
        truth_v = np.vstack([np.interp(grid.ravel(), x, v) for v in V])
        report = compute_metrics(fields[1], truth_v, grid)
    else:
        report = _evaluate_wind(cfg, fields[0], n, truth_seed)
    run._write_text("metrics.json", report.to_json() + "\n")
    return report


def _evaluate_wind(cfg, flat_samples, n, truth_seed) -> MetricsReport:
    spec = _wind_spec(cfg)
    n_pts = len(spec.grid_points())
    samples = np.asarray(flat_samples).reshape(len(flat_samples), n_pts,
                                               spec.n_t)
    truth = fg.wind_sample(spec, n, seed=truth_seed)[2]
    # moment metrics on the first point's time series; spectra over all pairs
    probe_grid = spec.time_grid().reshape(-1, 1)
    report = compute_metrics(samples[:, 0, :], truth[:, 0, :], probe_grid)
    report.coherence_mse = _ensemble_coherence_mse(samples, spec)
    report.variance_ratio = _variance_ratio(samples, spec)
    return report


def run_experiment(cfg: ExperimentConfig, workdir: str) -> MetricsReport:
    """Full staged pipeline; returns the metrics report.

    wind_verification skips training and evaluates generator draws directly.
    """
    if cfg.experiment == "wind_verification":
        return stage_eval(cfg, workdir)

    run = _Run(cfg, workdir)
    Y, _ = _stage(run, "generate-data", lambda: _stage_dataset(run))
    model = _stage(run, "train-vae", lambda: _stage_train_vae(run, Y))
    vnet = _stage(run, "train-flow", lambda: _stage_train_flow(run, model, Y))
    grid, fields = _stage(run, "sample", lambda: _stage_sample(run, model, vnet))
    report = _stage(run, "evaluate", lambda: _stage_evaluate(run, grid, fields))
    run.write_manifest()
    return report


def stage_generate(cfg: ExperimentConfig, workdir: str):
    """generate-data subcommand: write the dataset and stop."""
    run = _Run(cfg, workdir)
    Y, sensors = _stage(run, "generate-data", lambda: _stage_dataset(run))
    run.write_manifest()
    return Y, sensors


def stage_vae(cfg: ExperimentConfig, workdir: str):
    """train-vae subcommand: dataset (reused if present) through model.ckpt."""
    run = _Run(cfg, workdir)
    Y, _ = _stage(run, "generate-data",
                  lambda: _stage_dataset(run, prefer_existing=True))
    model = _stage(run, "train-vae", lambda: _stage_train_vae(run, Y))
    run.write_manifest()
    return model


def stage_flow(cfg: ExperimentConfig, workdir: str):
    """train-flow subcommand: restores model.ckpt, trains the velocity net."""
    run = _Run(cfg, workdir)
    model_path = run.path("model.ckpt")
    if not os.path.exists(model_path):
        raise ConfigError(f"no model checkpoint at {model_path}; "
                          "run train-vae first")
    Y, _ = _stage(run, "generate-data",
                  lambda: _stage_dataset(run, prefer_existing=True))
    model = build_model(cfg)
    _restore_params(model_path, model_param_items(model), cfg)
    vnet = _stage(run, "train-flow", lambda: _stage_train_flow(run, model, Y))
    run.write_manifest()
    return vnet


def stage_eval(cfg: ExperimentConfig, workdir: str) -> MetricsReport:
    """evaluate subcommand: restores the combined checkpoint, samples, scores."""
    run = _Run(cfg, workdir)
    if cfg.experiment == "wind_verification":
        Y, _ = _stage(run, "generate-data",
                      lambda: _stage_dataset(run, prefer_existing=True))
        def evaluate():
            n = min(cfg.evaluation.n_eval_samples, len(Y))
            report = _evaluate_wind(cfg, Y[:n], n, cfg.evaluation.seed + 1)
            run._write_text("metrics.json", report.to_json() + "\n")
            return report
        report = _stage(run, "evaluate", evaluate)
        run.write_manifest()
        return report
    combined = run.path("checkpoint.ckpt")
    if not os.path.exists(combined):
        raise ConfigError(f"no checkpoint at {combined}; run train-flow first")
    model = build_model(cfg)
    vnet = build_velocity(cfg)
    _restore_params(combined,
                    model_param_items(model) + velocity_param_items(vnet), cfg)
    grid, fields = _stage(run, "sample",
                          lambda: _stage_sample(run, model, vnet))
    report = _stage(run, "evaluate",
                    lambda: _stage_evaluate(run, grid, fields))
    run.write_manifest()
    return report


def sample_from_checkpoint(ckpt_path: str, n: int, grid_size: int,
                           seed: int, out_path: str = None):
    """Standalone sampling: rebuild networks from the checkpoint's
    architecture echo, integrate the flow, decode, optionally dump CSV."""
    ckpt = ckpt_mod.checkpoint_load(ckpt_path)
    cfg = config_from_architecture(ckpt.architecture)
    cfg.evaluation.grid_size = grid_size
    model = build_model(cfg)
    vnet = build_velocity(cfg)
    _restore_items(ckpt, model_param_items(model) + velocity_param_items(vnet))
    grid = _eval_grid(cfg)
    decoders = [model.decoder_u]
    if model.decoder_v is not None:
        decoders.append(model.decoder_v)
    fields = flow.generate_fields(vnet, decoders, n, grid, seed=seed)
    fields = fields if isinstance(fields, tuple) else (fields,)
    if out_path:
        meta = {"experiment": cfg.experiment, "n": n, "seed": seed,
                "grid": datasets.encode_coords(grid)}
        stem, ext = os.path.splitext(out_path)
        names = [out_path] if len(fields) == 1 else \
            [f"{stem}_u{ext}", f"{stem}_v{ext}"]
        for name, data in zip(names, fields):
            datasets.save_table(name, data, meta)
    return grid, fields


def _apply_override(cfg: ExperimentConfig, param: str, raw_value: str):
    if "." not in param:
        raise ConfigError(f"sweep parameter must be section.key, got {param!r}")
    section, key = param.split(".", 1)
    if section not in config_mod._SECTIONS:
        raise ConfigError(f"unknown section {section!r}")
    target = getattr(cfg, section)
    hints = typing.get_type_hints(type(target))
    if key not in hints:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    value = config_mod._parse_value(str(raw_value), hints[key])
    setattr(target, key, value)
    try:
        setattr(cfg, section, dataclasses.replace(target))
    except ValueError as e:
        raise ConfigError(f"invalid override {param}={raw_value}: {e}") from e


def run_sweep(cfg: ExperimentConfig, param: str, values, workdir: str):
    """Run the experiment once per override value; returns (value, report)
    pairs and writes a summary CSV."""
    os.makedirs(workdir, exist_ok=True)
    results = []
    for raw in values:
        sub = copy.deepcopy(cfg)
        _apply_override(sub, param, raw)
        subdir = os.path.join(workdir, f"{param}={raw}")
        results.append((raw, run_experiment(sub, subdir)))
    lines = [f"{param},mean_mse,covariance_mse,variance_mse,"
             "rel_l2_mean,rel_l2_variance"]
    for raw, rep in results:
        lines.append(f"{raw},{rep.mean_mse!r},{rep.covariance_mse!r},"
                     f"{rep.variance_mse!r},{rep.rel_l2_mean!r},"
                     f"{rep.rel_l2_variance!r}")
    with open(os.path.join(workdir, "sweep.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return results
