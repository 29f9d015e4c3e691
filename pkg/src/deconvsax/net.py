"""Deconvolutional autoencoder for multivariate time series.

A sample with ``C`` channels and ``L`` time steps is treated as a
one-channel ``C x L`` image. The encoder is

    conv(3x3) -> relu -> max-pool along time -> conv(3x3) -> relu  = code

and the decoder mirrors it around the code:

    deconv -> relu -> unpool (encoder switches) -> deconv -> final activation

Deconvolutions are transposed convolutions. With ``tie_weights`` the decoder
uses the encoder filters in transpose mode, so each filter receives the sum
of its encoder-path and decoder-path gradients.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .container import FormatError, read_container, write_container
from .tensor import DimensionError, PoolIndices

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DCSXCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    channels: int
    length: int
    filters1: int = 8
    filters2: int = 5
    kernel: tuple[int, int] = (3, 3)
    pool_w: int = 2
    tie_weights: bool = True
    final_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.channels < 1 or self.length < 1:
            raise ValueError("channels and length must be >= 1")
        if self.filters1 < 1 or self.filters2 < 1:
            raise ValueError("filter counts must be >= 1")
        if self.pool_w < 1:
            raise ValueError("pool_w must be >= 1")
        if len(self.kernel) != 2 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValueError(f"kernel extents must be positive and odd, got {self.kernel}")
        if self.final_activation not in ("linear", "relu"):
            raise ValueError(f"final_activation must be 'linear' or 'relu', got {self.final_activation!r}")

    @property
    def code_length(self) -> int:
        return -(-self.length // self.pool_w)

    @property
    def code_shape(self) -> tuple[int, int, int]:
        return (self.filters2, self.channels, self.code_length)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    rho: float = 0.95
    epsilon: float = 1e-6
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


# Parameter names. Decoder filters exist as separate storage only when untied.
ENCODER_NAMES = ("W1", "b1", "W2", "b2")
DECODER_NAMES = ("W2_dec", "c2", "W1_dec", "c1")


@dataclass
class ModelParams:
    config: NetworkConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def decoder_w2(self) -> np.ndarray:
        return self.tensors["W2"] if self.config.tie_weights else self.tensors["W2_dec"]

    @property
    def decoder_w1(self) -> np.ndarray:
        return self.tensors["W1"] if self.config.tie_weights else self.tensors["W1_dec"]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    kh, kw = cfg.kernel
    shapes = {
        "W1": (cfg.filters1, 1, kh, kw),
        "b1": (cfg.filters1,),
        "W2": (cfg.filters2, cfg.filters1, kh, kw),
        "b2": (cfg.filters2,),
        "c2": (cfg.filters1,),
        "c1": (1,),
    }
    if not cfg.tie_weights:
        shapes["W2_dec"] = shapes["W2"]
        shapes["W1_dec"] = shapes["W1"]
    return shapes


def init_params(cfg: NetworkConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform filters, zero biases."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 4:
            cout, cin, kh, kw = shape
            limit = np.sqrt(6.0 / ((cin + cout) * kh * kw))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(cfg, tensors)


def zero_params(cfg: NetworkConfig) -> ModelParams:
    return ModelParams(cfg, {n: np.zeros(s) for n, s in param_shapes(cfg).items()})


@dataclass
class Code:
    maps: np.ndarray
    pool_indices: PoolIndices


@dataclass
class _Cache:
    """Intermediate activations kept for the backward pass."""

    x: np.ndarray
    z1: np.ndarray
    pooled: np.ndarray
    z2: np.ndarray
    code: Code
    zd2: np.ndarray
    unpooled: np.ndarray
    zy: np.ndarray
    y: np.ndarray


def _as_input(cfg: NetworkConfig, x) -> np.ndarray:
    """Accept (C, L), (1, C, L) or (B, 1, C, L); return (B, 1, C, L)."""
    x = T.as_tensor(x)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (1, cfg.channels, cfg.length):
        raise DimensionError(f"expected input shaped (1, {cfg.channels}, {cfg.length}), got {x.shape}")
    return x


def _forward(params: ModelParams, x) -> _Cache:
    cfg = params.config
    x = _as_input(cfg, x)
    z1 = T.conv2d_same(x, params["W1"], params["b1"])
    pooled, idx = T.maxpool_time(T.relu(z1), cfg.pool_w)
    z2 = T.conv2d_same(pooled, params["W2"], params["b2"])
    code = Code(T.relu(z2), idx)
    zd2 = T.conv2d_transpose_same(code.maps, params.decoder_w2, params["c2"])
    unpooled = T.unpool_time(T.relu(zd2), idx, cfg.length)
    zy = T.conv2d_transpose_same(unpooled, params.decoder_w1, params["c1"])
    y = T.relu(zy) if cfg.final_activation == "relu" else zy
    return _Cache(x, z1, pooled, z2, code, zd2, unpooled, zy, y)


def forward_encode(params: ModelParams, x) -> Code:
    """Encode ``x``; a single sample yields maps shaped (filters2, C, ceil(L/pool_w))."""
    cfg = params.config
    single = T.as_tensor(x).ndim < 4
    xb = _as_input(cfg, x)
    z1 = T.conv2d_same(xb, params["W1"], params["b1"])
    pooled, idx = T.maxpool_time(T.relu(z1), cfg.pool_w)
    maps = T.relu(T.conv2d_same(pooled, params["W2"], params["b2"]))
    if single:
        return Code(maps[0], PoolIndices(idx.index[0], idx.pool_w, idx.width))
    return Code(maps, idx)


def forward_decode(params: ModelParams, code: Code) -> np.ndarray:
    """Reconstruct from a code; returns (1, C, L) for a single sample, (B, 1, C, L) for a batch."""
    cfg = params.config
    maps = T.as_tensor(code.maps)
    if maps.shape[-3:] != cfg.code_shape:
        raise DimensionError(f"code maps shaped {maps.shape}, expected (..., {cfg.code_shape})")
    zd2 = T.conv2d_transpose_same(maps, params.decoder_w2, params["c2"])
    unpooled = T.unpool_time(T.relu(zd2), code.pool_indices, cfg.length)
    zy = T.conv2d_transpose_same(unpooled, params.decoder_w1, params["c1"])
    return T.relu(zy) if cfg.final_activation == "relu" else zy


def reconstruct(params: ModelParams, x) -> np.ndarray:
    return _forward(params, x).y.reshape(T.as_tensor(x).shape)


def reconstruction_loss(x, y) -> float:
    """Mean squared error over all elements."""
    x = T.as_tensor(x)
    y = T.as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def loss_and_grads(params: ModelParams, x) -> tuple[float, dict[str, np.ndarray]]:
    """Reconstruction MSE and its exact gradient for every parameter tensor."""
    cfg = params.config
    c = _forward(params, x)
    k = cfg.kernel
    diff = c.y - c.x
    loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise T.NumericError("reconstruction loss is not finite")

    dy = 2.0 * diff / diff.size
    if cfg.final_activation == "relu":
        dy = T.relu_backward(c.zy, dy)
    g = {"c1": dy.sum(axis=(0, 2, 3))}
    g_w1_dec = T.conv2d_filter_grad(dy, c.unpooled, k)
    d_unpooled = T.conv2d_same(dy, params.decoder_w1)

    d_zd2 = T.relu_backward(c.zd2, T.unpool_time_backward(d_unpooled, c.code.pool_indices))
    g["c2"] = d_zd2.sum(axis=(0, 2, 3))
    g_w2_dec = T.conv2d_filter_grad(d_zd2, c.code.maps, k)
    d_code = T.conv2d_same(d_zd2, params.decoder_w2)

    d_z2 = T.relu_backward(c.z2, d_code)
    g["b2"] = d_z2.sum(axis=(0, 2, 3))
    g["W2"] = T.conv2d_filter_grad(c.pooled, d_z2, k)
    d_pooled = T.conv2d_transpose_same(d_z2, params["W2"])

    d_z1 = T.relu_backward(c.z1, T.unpool_time(d_pooled, c.code.pool_indices, cfg.length))
    g["b1"] = d_z1.sum(axis=(0, 2, 3))
    g["W1"] = T.conv2d_filter_grad(c.x, d_z1, k)

    if cfg.tie_weights:
        g["W1"] = g["W1"] + g_w1_dec
        g["W2"] = g["W2"] + g_w2_dec
    else:
        g["W1_dec"] = g_w1_dec
        g["W2_dec"] = g_w2_dec
    return loss, g


def backward(params: ModelParams, x) -> dict[str, np.ndarray]:
    return loss_and_grads(params, x)[1]


@dataclass
class AdadeltaState:
    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)
    sq_delta: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray]) -> "AdadeltaState":
        return cls({k: np.zeros_like(v) for k, v in tensors.items()}, {k: np.zeros_like(v) for k, v in tensors.items()})


def adadelta_step(
    tensors: dict[str, np.ndarray],
    state: AdadeltaState,
    grads: dict[str, np.ndarray],
    tc: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdadeltaState]:
    """One Adadelta update with a global learning-rate multiplier.

    Returns new parameter and state dicts; inputs are not modified.
    """
    rho, eps, lr = tc.rho, tc.epsilon, tc.learning_rate
    new_t, sq_g, sq_d = {}, {}, {}
    for name, p in tensors.items():
        g = grads[name]
        eg = rho * state.sq_grad[name] + (1.0 - rho) * g * g
        delta = -lr * np.sqrt(state.sq_delta[name] + eps) / np.sqrt(eg + eps) * g
        sq_g[name] = eg
        sq_d[name] = rho * state.sq_delta[name] + (1.0 - rho) * delta * delta
        new_t[name] = p + delta
    return new_t, AdadeltaState(sq_g, sq_d)


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    initial_params: ModelParams


def train(
    samples: Sequence[np.ndarray],
    net: NetworkConfig,
    tc: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
    init: ModelParams | None = None,
) -> TrainResult:
    """Train the autoencoder on ``samples`` (each shaped (C, L)).

    Mini-batches are drawn from a per-epoch shuffle seeded by ``tc.seed``,
    which also seeds the initialization, so results are bit-reproducible.
    The reported epoch loss is the mean per-sample MSE seen during the epoch.
    """
    if len(samples) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = np.stack([T.as_tensor(s) for s in samples])[:, None]
    if X.shape[1:] != (1, net.channels, net.length):
        raise DimensionError(f"samples shaped {X.shape[2:]}, expected ({net.channels}, {net.length})")
    rng = np.random.default_rng(tc.seed)
    params = init.copy() if init is not None else init_params(net, rng)
    initial = params.copy()
    state = AdadeltaState.zeros_like(params.tensors)
    losses = []
    n = len(X)
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            batch = X[order[start:start + tc.batch_size]]
            loss, grads = loss_and_grads(params, batch)
            total += loss * len(batch)
            tensors, state = adadelta_step(params.tensors, state, grads, tc)
            params = ModelParams(net, tensors)
        losses.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, losses[-1])
        log.debug("epoch %d loss %.6g", epoch + 1, losses[-1])
    return TrainResult(params, losses, initial)


def encode_features(params: ModelParams, x) -> tuple[list[np.ndarray], np.ndarray]:
    """Flattened code maps of one sample and their concatenation."""
    maps = forward_encode(params, x).maps
    per_map = [m.reshape(-1).copy() for m in maps]
    return per_map, np.concatenate(per_map)


def encode_dataset(params: ModelParams, samples: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    """Code maps for many samples, shaped (N, filters2, C * code_length)."""
    cfg = params.config
    out = np.empty((len(samples), cfg.filters2, cfg.channels * cfg.code_length))
    for start in range(0, len(samples), batch_size):
        xb = np.stack([T.as_tensor(s) for s in samples[start:start + batch_size]])[:, None]
        maps = forward_encode(params, xb).maps
        out[start:start + len(xb)] = maps.reshape(len(xb), cfg.filters2, -1)
    return out


def save_checkpoint(path, params: ModelParams, tc: TrainConfig | None = None, extra: dict | None = None) -> None:
    cfg = asdict(params.config)
    cfg["kernel"] = list(params.config.kernel)
    meta = {
        "network": cfg,
        "train": asdict(tc) if tc is not None else None,
        "seed": tc.seed if tc is not None else None,
        "extra": extra or {},
    }
    names = sorted(params.tensors)
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, meta, {n: params.tensors[n] for n in names})


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig | None, dict]:
    meta, arrays = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        cfg = NetworkConfig(**meta["network"])
        tc = TrainConfig(**meta["train"]) if meta.get("train") else None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid configuration block ({exc})") from exc
    expected = param_shapes(cfg)
    if set(arrays) != set(expected) or any(arrays[k].shape != s for k, s in expected.items()):
        raise FormatError(f"{path}: parameter tensors do not match the stored configuration")
    return ModelParams(cfg, {k: arrays[k].astype(np.float64) for k in expected}), tc, meta.get("extra", {})
