"""U-Net denoiser for ghost-imaging reconstructions, with its training loop.

Architecture for ``depth`` pooling levels and ``base`` channels::

    level l (contracting):  conv+ReLU, conv+ReLU  -> base * 2**l channels, keep as skip, maxpool 2x2
    bottleneck:             conv+ReLU, conv+ReLU  -> base * 2**depth channels, dropout
    level l (expansive):    upsample 2x2, concat skip, conv+ReLU, conv+ReLU -> base * 2**l channels
    head:                   1x1 conv -> 1 channel, sigmoid

The first three convolutions use ``first_kernel`` (9 by default), all others
``inner_kernel``; every convolution is zero-padded to keep its spatial size.
For the desk-scale default (input 32, depth 2, base 8) the feature maps are:

    =========  ===========  ============
    layer      kernel       output C,H,W
    =========  ===========  ============
    enc0.c1    8x1x9x9      8x32x32
    enc0.c2    8x8x9x9      8x32x32
    enc1.c1    16x8x9x9     16x16x16
    enc1.c2    16x16x3x3    16x16x16
    mid.c1     32x16x3x3    32x8x8
    mid.c2     32x32x3x3    32x8x8
    dec1.c1    16x48x3x3    16x16x16
    dec1.c2    16x16x3x3    16x16x16
    dec0.c1    8x24x3x3     8x32x32
    dec0.c2    8x8x3x3      8x32x32
    head       1x8x1x1      1x32x32
    =========  ===========  ============
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gftn
from .errors import ConfigError, ContractError, LoadError, ShapeError, TrainingError
from .fileio import atomic_write_bytes
from .filters import BilateralConfig, bilateral_filter
from .tensor import (
    Tensor,
    backward,
    concat_channels,
    conv2d,
    dropout,
    maxpool2d,
    mse_loss,
    relu,
    sigmoid,
    upsample2d_nearest,
)

CHECKPOINT_FORMAT = "ghostforge-unet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 32
    depth: int = 2
    base_channels: int = 8
    first_kernel: int = 9
    inner_kernel: int = 3
    dropout_rate: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.input_size < 1 or self.input_size % (2 ** self.depth):
            raise ConfigError(f"input_size {self.input_size} is not divisible by 2**depth = {2 ** self.depth}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        for k in (self.first_kernel, self.inner_kernel):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and positive, got {k}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> UNetConfig:
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad UNet config: {exc}") from exc


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 3
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_epsilon > 0):
            raise ConfigError("invalid Adam hyper-parameters")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


@dataclass(frozen=True)
class LayerSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    resolution: int
    activation: str = "relu"

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


def layer_specs(config: UNetConfig) -> list[LayerSpec]:
    """Convolution layers in forward order."""
    base, depth, size = config.base_channels, config.depth, config.input_size
    raw: list[tuple[str, int, int, int]] = []
    cin = 1
    for lvl in range(depth):
        cout = base * 2 ** lvl
        res = size >> lvl
        raw += [(f"enc{lvl}.c1", cin, cout, res), (f"enc{lvl}.c2", cout, cout, res)]
        cin = cout
    mid = base * 2 ** depth
    raw += [("mid.c1", cin, mid, size >> depth), ("mid.c2", mid, mid, size >> depth)]
    below = mid
    for lvl in reversed(range(depth)):
        cout = base * 2 ** lvl
        res = size >> lvl
        raw += [(f"dec{lvl}.c1", below + cout, cout, res), (f"dec{lvl}.c2", cout, cout, res)]
        below = cout
    specs = [
        LayerSpec(name, ci, co, config.first_kernel if k < 3 else config.inner_kernel, res)
        for k, (name, ci, co, res) in enumerate(raw)
    ]
    specs.append(LayerSpec("head", below, 1, 1, size, "sigmoid"))
    return specs


def shape_table(config: UNetConfig) -> list[tuple[str, tuple[int, ...], tuple[int, int, int]]]:
    """``(layer, kernel shape, output C,H,W)`` rows, as in the module docstring."""
    return [(s.name, s.weight_shape, (s.out_channels, s.resolution, s.resolution)) for s in layer_specs(config)]


@dataclass
class UNetParams:
    config: UNetConfig
    arrays: list[np.ndarray] = field(repr=False)

    @property
    def names(self) -> list[str]:
        return [f"{s.name}.{part}" for s in layer_specs(self.config) for part in ("weight", "bias")]

    def expected_shapes(self) -> list[tuple[int, ...]]:
        return _expected_shapes(self.config)

    def copy(self) -> UNetParams:
        return UNetParams(self.config, [a.copy() for a in self.arrays])

    def count(self) -> int:
        return int(sum(a.size for a in self.arrays))


def _expected_shapes(config: UNetConfig) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for s in layer_specs(config):
        out += [s.weight_shape, (s.out_channels,)]
    return out


def build(config: UNetConfig, seed: int | None = None) -> UNetParams:
    """Freshly initialised parameters.

    ReLU layers get He-uniform weights, the sigmoid head Glorot-uniform;
    biases start at zero. Draws come from one Philox stream keyed by ``seed``
    (default ``config.seed``) in declared layer order.
    """
    rng = np.random.Generator(np.random.Philox(key=config.seed if seed is None else seed))
    arrays = []
    for s in layer_specs(config):
        fan_in = s.in_channels * s.kernel * s.kernel
        fan_out = s.out_channels * s.kernel * s.kernel
        if s.activation == "relu":
            limit = math.sqrt(6.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        arrays.append(rng.uniform(-limit, limit, size=s.weight_shape))
        arrays.append(np.zeros(s.out_channels))
    return UNetParams(config, arrays)


def _dropout_seed(seed: int, step: int) -> int:
    return (int(seed) << 64) | (int(step) & ((1 << 64) - 1))


def forward_tensors(params: UNetParams, weights: Sequence[Tensor], x: Tensor, training: bool, seed: int = 0,
                    ablate_skips: bool = False) -> Tensor:
    """Forward pass over already-wrapped parameter tensors (for training)."""
    cfg = params.config
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"network input must be (N, 1, H, W), got {x.shape}")
    if x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise ShapeError(f"network expects {cfg.input_size}x{cfg.input_size} inputs, got {x.shape[2]}x{x.shape[3]}")
    it = iter(zip(weights[0::2], weights[1::2]))

    def conv_relu(h: Tensor) -> Tensor:
        w, b = next(it)
        return relu(conv2d(h, w, b))

    skips = []
    h = x
    for _ in range(cfg.depth):
        h = conv_relu(conv_relu(h))
        skips.append(h)
        h = maxpool2d(h)
    h = conv_relu(conv_relu(h))
    h = dropout(h, cfg.dropout_rate, training, seed)
    for skip in reversed(skips):
        h = upsample2d_nearest(h)
        if ablate_skips:
            skip = Tensor(np.zeros(skip.shape))
        h = concat_channels(h, skip)
        h = conv_relu(conv_relu(h))
    w, b = next(it)
    return sigmoid(conv2d(h, w, b))


def forward(params: UNetParams, x, training: bool = False, seed: int = 0, ablate_skips: bool = False) -> Tensor:
    """Network output for a batch ``x`` of shape (N, 1, H, W)."""
    weights = [Tensor._wrap(a) for a in params.arrays]
    return forward_tensors(params, weights, x if isinstance(x, Tensor) else Tensor(x), training, seed, ablate_skips)


def loss_and_grads(params: UNetParams, x: np.ndarray, y: np.ndarray, training: bool = True,
                   seed: int = 0) -> tuple[float, list[np.ndarray]]:
    weights = [Tensor(a, requires_grad=True) for a in params.arrays]
    pred = forward_tensors(params, weights, Tensor(x), training, seed)
    loss = mse_loss(pred, Tensor(y))
    backward(loss)
    return loss.item(), [w.grad for w in weights]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> AdamState:
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, t: int,
              cfg: TrainConfig) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and state."""
    if t < 1:
        raise ContractError(f"Adam step index must be >= 1, got {t}")
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeError("parameter and gradient shapes differ")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient", t)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def _pair_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        noisy, clean = dataset
    else:
        items = list(dataset)
        if not items:
            raise ContractError("training set is empty")
        if hasattr(items[0], "noisy"):
            noisy = np.stack([p.noisy for p in items])
            clean = np.stack([p.clean for p in items])
        else:
            noisy = np.stack([np.asarray(a) for a, _ in items])
            clean = np.stack([np.asarray(b) for _, b in items])
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape[0] == 0:
        raise ContractError("training set is empty")
    if noisy.shape != clean.shape or noisy.ndim != 3:
        raise ShapeError(f"noisy/clean stacks must share an (N, H, W) shape, got {noisy.shape} and {clean.shape}")
    return noisy, clean


def batch_order(count: int, tcfg: TrainConfig) -> list[np.ndarray]:
    """Index batches for the whole run; the last partial batch of an epoch is kept."""
    rng = np.random.Generator(np.random.Philox(key=tcfg.shuffle_seed))
    out = []
    for _ in range(tcfg.epochs):
        perm = rng.permutation(count)
        out += [perm[i:i + tcfg.batch_size] for i in range(0, count, tcfg.batch_size)]
    return out


def train(params: UNetParams, dataset, tcfg: TrainConfig,
          on_step: Callable[[int, float], None] | None = None) -> tuple[UNetParams, list[float]]:
    """Minimise the MSE between network output and clean targets with Adam.

    Args:
        params: starting parameters (not modified).
        dataset: ``(noisy, clean)`` stacks of shape (N, H, W), or a sequence
            of pairs / objects with ``noisy`` and ``clean`` attributes.
        tcfg: optimiser and batching settings.
        on_step: optional callback receiving ``(step, loss)``.

    Returns:
        Trained parameters and the per-step training loss.
    """
    noisy, clean = _pair_arrays(dataset)
    size = params.config.input_size
    if noisy.shape[1:] != (size, size):
        raise ShapeError(f"pairs are {noisy.shape[1]}x{noisy.shape[2]}, network expects {size}x{size}")
    arrays = [a.copy() for a in params.arrays]
    state = AdamState.zeros_like(arrays)
    history: list[float] = []
    for step, idx in enumerate(batch_order(noisy.shape[0], tcfg), start=1):
        current = UNetParams(params.config, arrays)
        loss, grads = loss_and_grads(current, noisy[idx][:, None], clean[idx][:, None], True,
                                     _dropout_seed(params.config.seed, step))
        if not math.isfinite(loss):
            raise TrainingError("non-finite loss", step)
        arrays, state = adam_step(arrays, grads, state, step, tcfg)
        history.append(loss)
        if on_step is not None:
            on_step(step, loss)
    return UNetParams(params.config, arrays), history


# ---------------------------------------------------------------------------
# inference


def _check_image(params: UNetParams, img) -> np.ndarray:
    x = np.asarray(img, dtype=np.float64)
    size = params.config.input_size
    if x.shape != (size, size):
        raise ShapeError(f"image is {x.shape}, network expects ({size}, {size})")
    return x


def denoise(params: UNetParams, img) -> np.ndarray:
    x = _check_image(params, img)
    return forward(params, x[None, None], training=False).data[0, 0].copy()


def denoise_batch(params: UNetParams, imgs: np.ndarray, chunk: int = 64) -> np.ndarray:
    imgs = np.asarray(imgs, dtype=np.float64)
    if imgs.shape[0] == 0:
        return imgs.copy()
    outs = [forward(params, imgs[i:i + chunk][:, None], training=False).data[:, 0] for i in range(0, len(imgs), chunk)]
    return np.concatenate(outs)


def denoise_with_filters(params: UNetParams, img, pre_cfg: BilateralConfig, post_cfg: BilateralConfig,
                         trace: dict | None = None) -> np.ndarray:
    """bilateral(pre) -> network -> bilateral(post).

    If ``trace`` is given it receives the intermediate images under
    ``"pre"``, ``"dnn"`` and ``"post"``.
    """
    x = _check_image(params, img)
    pre = bilateral_filter(x, pre_cfg)
    mid = denoise(params, pre)
    post = bilateral_filter(mid, post_cfg)
    if trace is not None:
        trace.update(pre=pre, dnn=mid, post=post)
    return post


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(params: UNetParams, meta: dict | None = None) -> bytes:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "params": [{"name": n, "shape": list(a.shape)} for n, a in zip(params.names, params.arrays)],
        "meta": meta or {},
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for a in params.arrays:
        gftn.write_tensor(buf, a)
    return buf.getvalue()


def save_params(path: str | Path, params: UNetParams, meta: dict | None = None) -> None:
    atomic_write_bytes(path, checkpoint_bytes(params, meta))


def load_params(path: str | Path) -> tuple[UNetParams, dict]:
    """Read a checkpoint; returns parameters and the stored metadata.

    Raises:
        LoadError: unreadable file, wrong format/version, corrupt tensors, or
            tensor shapes inconsistent with the stored config.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise LoadError("checkpoint has no header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"bad checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"not a {CHECKPOINT_FORMAT} checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise LoadError(f"unsupported checkpoint version {header.get('version')}")
    try:
        config = UNetConfig.from_dict(header["config"])
    except (ConfigError, KeyError) as exc:
        raise LoadError(f"bad config in checkpoint: {exc}") from exc
    arrays = gftn.read_all(io.BytesIO(raw[nl + 1:]))
    expected = _expected_shapes(config)
    if len(arrays) != len(expected):
        raise LoadError(f"checkpoint holds {len(arrays)} tensors, config needs {len(expected)}")
    for k, (a, shape) in enumerate(zip(arrays, expected)):
        if a.shape != shape:
            raise LoadError(f"tensor {k} has shape {a.shape}, config implies {shape}")
    declared = [tuple(p["shape"]) for p in header.get("params", [])]
    if declared and declared != expected:
        raise LoadError("declared parameter shapes disagree with the config")
    return UNetParams(config, [np.array(a) for a in arrays]), header.get("meta", {})


def with_dropout(config: UNetConfig, rate: float) -> UNetConfig:
    return replace(config, dropout_rate=rate)
