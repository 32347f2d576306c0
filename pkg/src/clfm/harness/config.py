"""Experiment configuration: typed sections, INI round trip, per-experiment
defaults.

A config file is flat INI with one section per pipeline stage. Every field
has a default, and the effective (fully populated) config is echoed into the
run directory so a run is reproducible from its artifacts alone.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
import typing
from dataclasses import dataclass, field

from ..flow import FlowTrainConfig
from ..vae import TrainConfig

EXPERIMENTS = ("gp_reconstruction", "poisson_inference",
               "wind_verification", "wind_desk")


class ConfigError(Exception):
    """Malformed, inconsistent, or unresolvable configuration."""


@dataclass
class DatasetConfig:
    n_train: int = 1000
    m_sensors: int = 3
    seed: int = 100
    path: str = ""  # load this dataset instead of generating one


@dataclass
class NetworkConfig:
    d_z: int = 4
    p: int = 64
    encoder_hidden: tuple = (128, 128, 128)
    branch_hidden: tuple = (128, 128)
    trunk_hidden: tuple = (128, 128)
    branch_blocks: int = 0  # > 0 switches the branch to residual blocks


@dataclass
class ConstraintConfig:
    kind: str = "none"  # none | covariance | correlation | coherence | physics
    weight: float = 1.0
    pair_budget: int = 128
    n_spatial: int = 4

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError("constraint weight must be >= 0")
        allowed = ("none", "covariance", "correlation", "coherence", "physics")
        if self.kind not in allowed:
            raise ConfigError(f"constraint kind must be one of {allowed}")


@dataclass
class EvaluationConfig:
    n_eval_samples: int = 1000
    grid_size: int = 100
    seed: int = 900
    metrics: tuple = ("mean_mse", "covariance_mse", "variance_mse")


@dataclass
class ExperimentConfig:
    experiment: str = "gp_reconstruction"
    seed: int = 0
    output_dir: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    vae_train: TrainConfig = field(default_factory=TrainConfig)
    flow_train: FlowTrainConfig = field(default_factory=FlowTrainConfig)
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; "
                f"expected one of {EXPERIMENTS}")


_SECTIONS = {
    "dataset": DatasetConfig,
    "network": NetworkConfig,
    "vae_train": TrainConfig,
    "flow_train": FlowTrainConfig,
    "constraint": ConstraintConfig,
    "evaluation": EvaluationConfig,
}


def experiment_defaults(experiment: str) -> ExperimentConfig:
    """Baseline config per experiment id, at desk-scale budgets."""
    cfg = ExperimentConfig(experiment=experiment)
    if experiment == "gp_reconstruction":
        cfg.dataset = DatasetConfig(n_train=1000, m_sensors=3)
        cfg.constraint = ConstraintConfig(kind="covariance")
        cfg.vae_train = TrainConfig(batch_size=256, lr=1e-3, epochs=2000,
                                    lam_kl=1e-6, lam_r=0.1, n_colloc=50)
        cfg.flow_train = FlowTrainConfig(epochs=500)
    elif experiment == "poisson_inference":
        cfg.dataset = DatasetConfig(n_train=100, m_sensors=25)
        cfg.constraint = ConstraintConfig(kind="physics")
        # inverse problem converges slower than reconstruction; budget set
        # by a convergence study on the mean-field error
        cfg.vae_train = TrainConfig(batch_size=256, lr=1e-3, epochs=10000,
                                    lam_kl=1e-6, lam_f=0.001, n_colloc=50)
        cfg.flow_train = FlowTrainConfig(epochs=1000)
    elif experiment == "wind_verification":
        # pure generator check, no training stages
        cfg.dataset = DatasetConfig(n_train=2000, m_sensors=0)
        cfg.evaluation = EvaluationConfig(n_eval_samples=2000, grid_size=0,
                                          metrics=("coherence_mse",
                                                   "variance_ratio"))
    elif experiment == "wind_desk":
        cfg.dataset = DatasetConfig(n_train=64, m_sensors=0)
        cfg.network = NetworkConfig(d_z=8, p=32, encoder_hidden=(128, 128),
                                    branch_hidden=(64, 64),
                                    trunk_hidden=(64, 64))
        cfg.constraint = ConstraintConfig(kind="coherence", n_spatial=3)
        cfg.vae_train = TrainConfig(batch_size=32, lr=5e-4, epochs=200,
                                    lam_kl=1e-7, lam_r=1e-2)
        cfg.flow_train = FlowTrainConfig(epochs=200)
        cfg.evaluation = EvaluationConfig(n_eval_samples=200, grid_size=0,
                                          metrics=("coherence_mse",
                                                   "variance_ratio"))
    return cfg


def _parse_value(raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is str:
        return raw
    if typ is tuple or typing.get_origin(typ) is tuple:
        if not raw:
            return ()
        parts = [p.strip() for p in raw.split(",")]
        if all(_is_int(p) for p in parts):
            return tuple(int(p) for p in parts)
        if all(_is_float(p) for p in parts):
            return tuple(float(p) for p in parts)
        return tuple(parts)
    raise ConfigError(f"unsupported config field type {typ}")


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _apply_section(target, section: configparser.SectionProxy, name: str):
    hints = typing.get_type_hints(type(target))
    fields = {f.name: f for f in dataclasses.fields(target)}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        try:
            value = _parse_value(raw, hints[key])
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"bad value for {name}.{key}: {e}") from e
        setattr(target, key, value)


def load_config(path_or_text) -> ExperimentConfig:
    """Read an INI config; unknown sections or keys are errors.

    Accepts a file path or a file-like object. Defaults come from the
    experiment id named in [experiment], then file values override.
    """
    parser = configparser.ConfigParser()
    try:
        if hasattr(path_or_text, "read"):
            parser.read_file(path_or_text)
        else:
            with open(path_or_text) as fh:
                parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    if "experiment" not in parser:
        raise ConfigError("config must have an [experiment] section")
    exp_sec = parser["experiment"]
    known = {"id", "seed", "output_dir"}
    extra = set(exp_sec) - known
    if extra:
        raise ConfigError(f"unknown keys in [experiment]: {sorted(extra)}")
    exp_id = exp_sec.get("id", "gp_reconstruction")
    try:
        cfg = experiment_defaults(exp_id)
    except ConfigError:
        raise
    except Exception as e:
        raise ConfigError(str(e)) from e
    if exp_id not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {exp_id!r}; expected one of {EXPERIMENTS}")
    cfg.seed = int(exp_sec.get("seed", cfg.seed))
    cfg.output_dir = exp_sec.get("output_dir", cfg.output_dir)

    for name in parser.sections():
        if name == "experiment":
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        try:
            _apply_section(getattr(cfg, name), parser[name], name)
        except ValueError as e:
            raise ConfigError(f"invalid section [{name}]: {e}") from e
    _validate(cfg)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize the full effective config, defaults included."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "id": cfg.experiment,
        "seed": str(cfg.seed),
        "output_dir": cfg.output_dir,
    }
    for name in _SECTIONS:
        sub = getattr(cfg, name)
        parser[name] = {f.name: _format_value(getattr(sub, f.name))
                        for f in dataclasses.fields(sub)}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def _validate(cfg: ExperimentConfig):
    # re-run each section constructor so dataclass validation sees overrides
    for name in _SECTIONS:
        try:
            setattr(cfg, name, dataclasses.replace(getattr(cfg, name)))
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"invalid section [{name}]: {e}") from e
    ds = cfg.dataset
    if ds.n_train < 1:
        raise ConfigError("dataset.n_train must be >= 1")
    if ds.path and not os.path.exists(ds.path):
        raise ConfigError(f"dataset path not found: {ds.path}")
    if cfg.experiment in ("gp_reconstruction", "poisson_inference"):
        if ds.m_sensors < 1:
            raise ConfigError("dataset.m_sensors must be >= 1")
    if cfg.evaluation.n_eval_samples < 2:
        raise ConfigError("evaluation.n_eval_samples must be >= 2")
    kind = cfg.constraint.kind
    if kind == "physics" and cfg.vae_train.lam_r > 0:
        raise ConfigError("physics constraint pairs with lam_f, not lam_r")
    if kind in ("covariance", "correlation", "coherence") \
            and cfg.vae_train.lam_f > 0:
        raise ConfigError("statistical constraints pair with lam_r, not lam_f")
