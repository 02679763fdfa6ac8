"""Convolutional autoencoders (families A1/A2/A3 in 2D and 3D) and training.

Every architecture shares the same trunk::

    conv(16, s1, 6x6) -> conv(16, s2, 5x5) -> conv(16, s2, 4x4) -> conv(16, s2, 3x3)

followed by a family bottleneck, and a mirrored decoder ending in
``deconv(out, s1, 6x6, tanh)``. On a 32x32 input the hidden representation
has 64 (A1), 32 (A2) or 16 (A3) elements. 3D models read three neighbouring
B-scans as input channels.

Checkpoint layout (little-endian)::

    b"GPAE"  u16 version=1  u8 family(1..3)  u8 dims(2|3)  u32 input_t  u32 input_x
    u32 n_encoder  u32 n_decoder
    per layer: u8 mode(0=conv,1=transposed) u8 activation(0=none,1=tanh,2=leaky) u16 0
               u32 in_channels u32 out_channels u32 kh u32 kw u32 sh u32 sw
    per layer: kernel then bias as f64, C order
"""

from __future__ import annotations

import copy
import enum
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered, single_blas
from .nn import (
    Activation,
    AdamState,
    ConvLayer,
    Mode,
    ShapeError,
    adam_step,
    glorot_uniform,
    stack_backward,
    stack_forward,
)


class SpecError(ValueError):
    pass


class DataError(ValueError):
    pass


class Family(str, enum.Enum):
    A1 = "a1"
    A2 = "a2"
    A3 = "a3"


class Dims(str, enum.Enum):
    D2 = "2d"
    D3 = "3d"

    @property
    def channels(self) -> int:
        return 1 if self is Dims.D2 else 3


def _parse_enum(cls, value):
    if isinstance(value, cls):
        return value
    return cls(str(value).strip().lower())


@dataclass(frozen=True)
class ArchitectureSpec:
    family: Family = Family.A3
    dims: Dims = Dims.D3
    input_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "family", _parse_enum(Family, self.family))
        object.__setattr__(self, "dims", _parse_enum(Dims, self.dims))
        size = tuple(int(n) for n in self.input_size)
        for n in size:
            if n < 32 or n & (n - 1):
                raise SpecError(f"input sizes must be powers of two >= 32, got {size}")
        object.__setattr__(self, "input_size", size)

    @property
    def channels(self) -> int:
        return self.dims.channels

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.channels, *self.input_size)

    @property
    def name(self) -> str:
        return f"{self.family.value.upper()}-{self.dims.value.upper()}"


# (channels, stride, kernel) per layer
_TRUNK = [(16, 1, 6), (16, 2, 5), (16, 2, 4), (16, 2, 3)]
_BOTTLENECK = {
    Family.A1: [(16, 2, 2)],
    Family.A2: [(8, 2, 1)],
    Family.A3: [(16, 2, 2), (16, 2, 1)],
}
_DECODER = [(16, 2, 2), (16, 2, 3), (16, 2, 4), (16, 2, 5)]


@dataclass(eq=False)
class AutoencoderModel:
    spec: ArchitectureSpec
    encoder_layers: list[ConvLayer]
    decoder_layers: list[ConvLayer]

    @property
    def layers(self) -> list[ConvLayer]:
        return self.encoder_layers + self.decoder_layers

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def hidden_shape(self) -> tuple[int, int, int]:
        h, w = self.spec.input_size
        for layer in self.encoder_layers:
            h, w = layer.output_size(h, w)
        return (self.encoder_layers[-1].out_channels, h, w)

    def copy(self) -> "AutoencoderModel":
        return copy.deepcopy(self)


def build_model(spec: ArchitectureSpec, seed: int = 0) -> AutoencoderModel:
    if not isinstance(spec, ArchitectureSpec):
        raise SpecError("build_model expects an ArchitectureSpec")
    rng = np.random.default_rng(seed)

    def make(cin, cout, stride, k, mode, act):
        shape = (cout, cin, k, k) if mode is Mode.CONV else (cin, cout, k, k)
        kernel = glorot_uniform(shape, rng, mode)
        return ConvLayer(kernel, np.zeros(cout), (stride, stride), mode, act)

    enc, cin = [], spec.channels
    for cout, s, k in _TRUNK + _BOTTLENECK[spec.family]:
        enc.append(make(cin, cout, s, k, Mode.CONV, Activation.LEAKY))
        cin = cout
    dec_plan = list(_DECODER)
    if spec.family is Family.A3:
        dec_plan.insert(0, (16, 2, 2))
    dec = []
    for cout, s, k in dec_plan:
        dec.append(make(cin, cout, s, k, Mode.TRANSPOSED, Activation.LEAKY))
        cin = cout
    dec.append(make(cin, spec.channels, 1, 6, Mode.TRANSPOSED, Activation.TANH))
    return AutoencoderModel(spec, enc, dec)


# ---------------------------------------------------------------------------
# forward passes; internal batches are channel-major (C, B, H, W)


def _to_internal(x, expected, what):
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != tuple(expected):
        raise ShapeError(f"{what} shape {np.shape(x)[-3:]} != expected {tuple(expected)}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)), single


def _from_internal(x, single):
    x = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    return x[0] if single else x


def encode(model: AutoencoderModel, block) -> np.ndarray:
    """Hidden representation of a ``(C, H, W)`` block (or a batch of them)."""
    x, single = _to_internal(block, model.spec.input_shape, "block")
    return _from_internal(stack_forward(model.encoder_layers, x), single)


def decode(model: AutoencoderModel, hidden) -> np.ndarray:
    h, single = _to_internal(hidden, model.hidden_shape, "hidden")
    return _from_internal(stack_forward(model.decoder_layers, h), single)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    """Training hyper-parameters.

    ``n_training_bscans`` is informational here (the block set is built by
    the caller); ``min_delta`` is the relative validation improvement that
    resets the patience counter. ``shard_size`` fixes how a batch is split
    for gradient accumulation, independent of ``threads``.
    """

    n_training_bscans: int = 5
    epochs_max: int = 100
    batch_size: int = 32
    patience: int = 5
    validation_fraction: float = 0.1
    seed: int = 0
    min_delta: float = 0.0
    lr: float = 0.001
    shard_size: int = 8
    threads: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.shard_size < 1:
            raise ValueError("batch_size and shard_size must be >= 1")
        if self.epochs_max < 0:
            raise ValueError("epochs_max must be >= 0")


@dataclass
class TrainResult:
    model: AutoencoderModel
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def val_losses(self) -> list[float]:
        return [v for _, _, v in self.history]


def _shard_grads(model, x, scale):
    out, caches = stack_forward(model.layers, x, keep=True)
    diff = out - x
    sse = float(np.sum(diff.astype(np.float64) ** 2))
    grads = stack_backward(model.layers, caches, (2.0 * scale) * diff)
    return sse, [g for pair in grads for g in pair]


def _gather(blocks, idx):
    return np.ascontiguousarray(blocks[idx].transpose(1, 0, 2, 3))


def reconstruction_mse(model, blocks, chunk: int = 16, threads: int = 1) -> float:
    """Mean squared reconstruction error over an ``(N, C, H, W)`` block array."""
    starts = range(0, len(blocks), chunk)

    def sse(i):
        x = _gather(blocks, slice(i, i + chunk))
        out = stack_forward(model.layers, x)
        return float(np.sum((out - x).astype(np.float64) ** 2))

    with single_blas():
        total = sum(map_ordered(sse, starts, threads))
    return total / blocks.size


def train(model: AutoencoderModel, blocks, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit the autoencoder to background blocks with Adam and early stopping.

    ``blocks`` is an array ``(N, C, H, W)`` matching the model input. The
    input model is left untouched; the returned model holds the parameters
    of the best validation epoch.
    """
    cfg = cfg or TrainConfig()
    blocks = np.asarray(blocks)
    if blocks.ndim != 4 or len(blocks) == 0:
        raise DataError("training needs a non-empty (N, C, H, W) block array")
    if blocks.shape[1:] != model.spec.input_shape:
        raise ShapeError(f"blocks shape {blocks.shape[1:]} != model input {model.spec.input_shape}")
    model = model.copy()
    if cfg.epochs_max == 0:
        return TrainResult(model, [], 0)

    n = len(blocks)
    n_val = min(max(1, int(round(n * cfg.validation_fraction))), n - 1)
    if n_val < 1:
        raise DataError("need at least two blocks to hold out a validation set")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    data = np.asarray(blocks, dtype=cfg.dtype)
    train_x, val_x = data[order[: n - n_val]], data[order[n - n_val:]]

    params = model.params
    state = AdamState(lr=cfg.lr)
    best, best_params, best_epoch, wait = np.inf, [p.copy() for p in params], 0, 0
    history = []
    per_block = int(np.prod(train_x.shape[1:]))
    with single_blas():
        for epoch in range(1, cfg.epochs_max + 1):
            perm = rng.permutation(len(train_x))
            sse_total = 0.0
            for start in range(0, len(perm), cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                scale = 1.0 / (len(idx) * per_block)
                shards = [idx[i:i + cfg.shard_size] for i in range(0, len(idx), cfg.shard_size)]
                results = map_ordered(
                    lambda s: _shard_grads(model, _gather(train_x, s), scale), shards, cfg.threads
                )
                grads = results[0][1]
                for sse, g in results[1:]:
                    grads = [a + b for a, b in zip(grads, g)]
                sse_total += sum(r[0] for r in results)
                adam_step(params, grads, state)
            train_loss = sse_total / train_x.size
            val_loss = reconstruction_mse(model, val_x, threads=cfg.threads)
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            history.append((epoch, train_loss, val_loss))
            if val_loss < best * (1.0 - cfg.min_delta):
                best, best_epoch, wait = val_loss, epoch, 0
                best_params = [p.copy() for p in params]
            else:
                wait += 1
                if wait >= cfg.patience:
                    break
    for p, b in zip(params, best_params):
        p[...] = b
    return TrainResult(model, history, best_epoch)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"GPAE"
_VERSION = 1
_HEAD = struct.Struct("<4sHBBIIII")
_LAYER = struct.Struct("<BBH6I")
_MODES = [Mode.CONV, Mode.TRANSPOSED]
_ACTS = [Activation.NONE, Activation.TANH, Activation.LEAKY]
_FAMILIES = {Family.A1: 1, Family.A2: 2, Family.A3: 3}


def model_to_bytes(model: AutoencoderModel) -> bytes:
    spec = model.spec
    buf = io.BytesIO()
    buf.write(_HEAD.pack(
        _MAGIC, _VERSION, _FAMILIES[spec.family], 2 if spec.dims is Dims.D2 else 3,
        *spec.input_size, len(model.encoder_layers), len(model.decoder_layers),
    ))
    for layer in model.layers:
        buf.write(_LAYER.pack(
            _MODES.index(layer.mode), _ACTS.index(layer.activation), 0,
            layer.in_channels, layer.out_channels, *layer.kernel_size, *layer.stride,
        ))
    for layer in model.layers:
        buf.write(np.ascontiguousarray(layer.kernel, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(raw: bytes) -> AutoencoderModel:
    try:
        return _parse_model(raw)
    except (struct.error, ValueError, KeyError, IndexError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"corrupt model file: {exc}") from exc


def _parse_model(raw: bytes) -> AutoencoderModel:
    if len(raw) < _HEAD.size:
        raise SpecError("model file is shorter than its header")
    magic, version, fam, dims, it, ix, n_enc, n_dec = _HEAD.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise SpecError(f"not a version-{_VERSION} model file (magic {magic!r}, version {version})")
    family = {v: k for k, v in _FAMILIES.items()}[fam]
    spec = ArchitectureSpec(family, Dims.D2 if dims == 2 else Dims.D3, (it, ix))
    pos = _HEAD.size
    descriptors = []
    for _ in range(n_enc + n_dec):
        descriptors.append(_LAYER.unpack_from(raw, pos))
        pos += _LAYER.size
    layers = []
    for mode_i, act_i, _, cin, cout, kh, kw, sh, sw in descriptors:
        mode = _MODES[mode_i]
        shape = (cout, cin, kh, kw) if mode is Mode.CONV else (cin, cout, kh, kw)
        nk = int(np.prod(shape))
        kernel = np.frombuffer(raw, "<f8", nk, pos).reshape(shape)
        pos += 8 * nk
        bias = np.frombuffer(raw, "<f8", cout, pos)
        pos += 8 * cout
        layers.append(ConvLayer(kernel.copy(), bias.copy(), (sh, sw), mode, _ACTS[act_i]))
    if pos != len(raw):
        raise SpecError("model file has trailing or missing parameter bytes")
    return AutoencoderModel(spec, layers[:n_enc], layers[n_enc:])


def save_model(model: AutoencoderModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> AutoencoderModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
