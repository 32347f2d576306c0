"""Network building blocks: plain MLPs, residual-block MLPs, a Gaussian
encoder, and the branch-trunk function decoder.

The decoder represents a function of the coordinates: its value at x is the
dot product of a latent-conditioned branch vector and a coordinate-conditioned
trunk vector, so it can be queried at arbitrary points after training.

Each architecture has a graph forward (for training) and a numpy-only eval
forward (for cheap sampling); the two agree to the last bit because they share
the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "MlpSpec",
    "ResidualMlpSpec",
    "EncoderSpec",
    "DecoderSpec",
    "MlpParams",
    "ResidualBlockParams",
    "Encoder",
    "DeepOnetDecoder",
    "init_params",
    "mlp_forward",
    "mlp_eval",
    "encode",
    "encode_eval",
    "decode",
    "decode_eval",
]

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

_ACT = {
    "gelu": (ad.gelu, ad.gelu_np),
    "silu": (ad.silu, ad.silu_np),
    "tanh": (ad.tanh, np.tanh),
}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# architecture specs (shape-level descriptions, serializable)

@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (d_in, hidden..., d_out) and hidden activation."""

    sizes: tuple
    activation: str = "gelu"

    def __post_init__(self):
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ValueError(f"need at least in/out sizes, all positive: {self.sizes}")
        if self.activation not in _ACT:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ResidualMlpSpec:
    """Entry projection, n_blocks width-preserving residual blocks, exit projection."""

    d_in: int
    width: int
    n_blocks: int
    d_out: int

    def __post_init__(self):
        if min(self.d_in, self.width, self.d_out) < 1 or self.n_blocks < 1:
            raise ValueError("all dims and block count must be positive")


@dataclass(frozen=True)
class EncoderSpec:
    d_obs: int
    d_z: int
    hidden: tuple = (128, 128, 128)
    activation: str = "gelu"


@dataclass(frozen=True)
class DecoderSpec:
    d_z: int
    d_x: int
    p: int
    n_channels: int = 1
    branch_hidden: tuple = (128, 128)
    trunk_hidden: tuple = (128, 128)
    branch_blocks: int = 0  # >0 switches the branch to residual blocks of that count
    domain_lo: tuple = (0.0,)
    domain_hi: tuple = (1.0,)

    def __post_init__(self):
        if len(self.domain_lo) != self.d_x or len(self.domain_hi) != self.d_x:
            raise ValueError("domain bounds must have one entry per coordinate dim")


# ---------------------------------------------------------------------------
# parameter containers

@dataclass
class MlpParams:
    weights: list
    biases: list
    activation: str = "gelu"

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class ResidualBlockParams:
    """Entry linear, per-block (norm gain, norm shift, two linears), exit linear."""

    w_in: Tensor
    b_in: Tensor
    blocks: list  # each entry: (gain, shift, w1, b1, w2, b2)
    w_out: Tensor
    b_out: Tensor

    def tensors(self) -> list[Tensor]:
        out = [self.w_in, self.b_in]
        for blk in self.blocks:
            out.extend(blk)
        out.extend([self.w_out, self.b_out])
        return out


@dataclass
class Encoder:
    """Maps a flattened observation to (mean, std) of the latent posterior."""

    mlp: MlpParams
    d_z: int

    def tensors(self) -> list[Tensor]:
        return self.mlp.tensors()


@dataclass
class DeepOnetDecoder:
    """One (branch, trunk) pair per output channel; shared interaction width p.

    Coordinates are mapped affinely onto [-1, 1] per dimension before the
    trunk, using the stored domain box.
    """

    branches: list  # MlpParams or ResidualBlockParams, one per channel
    trunks: list    # MlpParams, one per channel
    p: int
    x_lo: np.ndarray = field(default_factory=lambda: np.zeros(1))
    x_hi: np.ndarray = field(default_factory=lambda: np.ones(1))

    @property
    def d_z(self) -> int:
        first = self.branches[0]
        if isinstance(first, ResidualBlockParams):
            return first.w_in.shape[0]
        return first.weights[0].shape[0]

    def tensors(self) -> list[Tensor]:
        out = []
        for br, tr in zip(self.branches, self.trunks):
            out.extend(br.tensors())
            out.extend(tr.tensors())
        return out

    @property
    def n_channels(self) -> int:
        return len(self.branches)


def _init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    weights, biases = [], []
    for d_in, d_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        weights.append(ad.tensor(_glorot(rng, d_in, d_out)))
        biases.append(ad.tensor(np.zeros(d_out)))
    return MlpParams(weights, biases, spec.activation)


def _init_residual(spec: ResidualMlpSpec, rng: np.random.Generator) -> ResidualBlockParams:
    w = spec.width
    blocks = []
    for _ in range(spec.n_blocks):
        blocks.append((
            ad.tensor(np.ones(w)),   # norm gain
            ad.tensor(np.zeros(w)),  # norm shift
            ad.tensor(_glorot(rng, w, w)),
            ad.tensor(np.zeros(w)),
            ad.tensor(_glorot(rng, w, w)),
            ad.tensor(np.zeros(w)),
        ))
    return ResidualBlockParams(
        w_in=ad.tensor(_glorot(rng, spec.d_in, w)),
        b_in=ad.tensor(np.zeros(w)),
        blocks=blocks,
        w_out=ad.tensor(_glorot(rng, w, spec.d_out)),
        b_out=ad.tensor(np.zeros(spec.d_out)),
    )


def init_params(spec, seed: int):
    """Build parameters for any architecture spec; same seed, same bits."""
    rng = np.random.default_rng(seed)
    if isinstance(spec, MlpSpec):
        return _init_mlp(spec, rng)
    if isinstance(spec, ResidualMlpSpec):
        return _init_residual(spec, rng)
    if isinstance(spec, EncoderSpec):
        sizes = (spec.d_obs, *spec.hidden, 2 * spec.d_z)
        return Encoder(_init_mlp(MlpSpec(sizes, spec.activation), rng), spec.d_z)
    if isinstance(spec, DecoderSpec):
        branches, trunks = [], []
        for _ in range(spec.n_channels):
            if spec.branch_blocks > 0:
                width = spec.branch_hidden[0]
                branches.append(_init_residual(
                    ResidualMlpSpec(spec.d_z, width, spec.branch_blocks, spec.p), rng))
            else:
                branches.append(_init_mlp(
                    MlpSpec((spec.d_z, *spec.branch_hidden, spec.p)), rng))
            trunks.append(_init_mlp(
                MlpSpec((spec.d_x, *spec.trunk_hidden, spec.p)), rng))
        return DeepOnetDecoder(branches, trunks, spec.p,
                               x_lo=np.asarray(spec.domain_lo, dtype=float),
                               x_hi=np.asarray(spec.domain_hi, dtype=float))
    raise TypeError(f"unknown spec type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# forward passes

def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    """x: (B, d_in) graph tensor -> (B, d_out); hidden layers activated, last linear."""
    act = _ACT[params.activation][0]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.matmul(h, w) + b
        if i < last:
            h = act(h)
    return h


def mlp_eval(params: MlpParams, x: np.ndarray) -> np.ndarray:
    act = _ACT[params.activation][1]
    h = np.asarray(x, dtype=np.float64)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.value + b.value
        if i < last:
            h = act(h)
    return h


def residual_forward(params: ResidualBlockParams, x: Tensor) -> Tensor:
    h = ad.matmul(x, params.w_in) + params.b_in
    for gain, shift, w1, b1, w2, b2 in params.blocks:
        y = ad.layer_norm(h) * gain + shift
        y = ad.silu(ad.matmul(y, w1) + b1)
        y = ad.matmul(y, w2) + b2
        h = h + y
    return ad.matmul(h, params.w_out) + params.b_out


def residual_eval(params: ResidualBlockParams, x: np.ndarray) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64) @ params.w_in.value + params.b_in.value
    for gain, shift, w1, b1, w2, b2 in params.blocks:
        y = ad.layer_norm_np(h) * gain.value + shift.value
        y = ad.silu_np(y @ w1.value + b1.value)
        y = y @ w2.value + b2.value
        h = h + y
    return h @ params.w_out.value + params.b_out.value


def _net_forward(params, x: Tensor) -> Tensor:
    if isinstance(params, ResidualBlockParams):
        return residual_forward(params, x)
    return mlp_forward(params, x)


def _net_eval(params, x: np.ndarray) -> np.ndarray:
    if isinstance(params, ResidualBlockParams):
        return residual_eval(params, x)
    return mlp_eval(params, x)


# ---------------------------------------------------------------------------
# encoder

def _split_heads(out, d_z):
    mu = out[:, :d_z]
    logvar = ad.clip(out[:, d_z:], LOGVAR_MIN, LOGVAR_MAX)
    sigma = ad.exp(0.5 * logvar)
    return mu, sigma


def encode(enc: Encoder, y: Tensor) -> tuple[Tensor, Tensor]:
    """y: (B, m*n) -> posterior mean and std, each (B, d_z); std > 0 always."""
    if y.ndim != 2:
        raise ad.ShapeError("encode", y.shape)
    if not np.all(np.isfinite(y.value)):
        raise ValueError("encode: non-finite observation")
    out = mlp_forward(enc.mlp, y)
    return _split_heads(out, enc.d_z)


def encode_eval(enc: Encoder, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    out = mlp_eval(enc.mlp, y)
    mu = out[:, :enc.d_z]
    logvar = np.clip(out[:, enc.d_z:], LOGVAR_MIN, LOGVAR_MAX)
    return mu, np.exp(0.5 * logvar)


# ---------------------------------------------------------------------------
# decoder

def _normalize_coords(dec: DeepOnetDecoder, X: np.ndarray) -> np.ndarray:
    span = dec.x_hi - dec.x_lo
    span = np.where(span == 0.0, 1.0, span)
    return 2.0 * (X - dec.x_lo) / span - 1.0


def decode(dec: DeepOnetDecoder, z: Tensor, X) -> Tensor:
    """Evaluate the decoded function at coordinates X.

    z: (B, d_z) graph tensor; X: (C, d_x) array-like of query points.
    Returns (B, C) for a single channel, (B, C, n) otherwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if z.ndim != 2:
        raise ad.ShapeError("decode", z.shape)
    Xn = ad.constant(_normalize_coords(dec, X))
    channels = []
    for br, tr in zip(dec.branches, dec.trunks):
        b = _net_forward(br, z)                     # (B, p)
        t = _net_forward(tr, Xn)                    # (C, p)
        channels.append(ad.matmul(b, ad.transpose(t)))  # (B, C)
    if len(channels) == 1:
        return channels[0]
    B, C = channels[0].shape
    stacked = [ad.reshape(ch, (B, C, 1)) for ch in channels]
    return ad.concat(stacked, axis=2)


def decode_eval(dec: DeepOnetDecoder, z: np.ndarray, X) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xn = _normalize_coords(dec, X)
    # contiguous transpose mirrors the graph path bit for bit
    channels = [_net_eval(br, z) @ np.ascontiguousarray(_net_eval(tr, Xn).T)
                for br, tr in zip(dec.branches, dec.trunks)]
    if len(channels) == 1:
        return channels[0]
    return np.stack(channels, axis=2)
