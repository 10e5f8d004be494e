"""U-Net with a summed bidirectional LSTM bottleneck, plus its training loop.

Topology (depth 5, base 8 channels, 2 x 3616 padded input)::

    enc1  8 @3616 -> pool -> enc2 16 @1808 -> ... -> enc5 128 @226 -> pool
    bottleneck 256 @113 -> BiLSTM(256, summed) -> 256 @113
    dec5  up+1x1 -> 128 @226, concat enc5 skip -> 256 -> double conv -> 128
    ...
    dec1  ... -> 8 @3616 -> 1x1 head -> logits, truncated to the input length

Each double conv is ``conv3 -> ReLU -> BN -> dropout -> conv3 -> ReLU -> BN``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .nn import ops
from .nn.lstm import LstmCellParams
from .nn.params import ParameterStore, adam_step, layer_rng
from .nn.tensor import Tensor

log = logging.getLogger(__name__)

LABEL_MODES = ("smooth", "binary")
LOSSES = ("bce", "mse")


@dataclass
class ModelConfig:
    input_channels: int = 2
    base_channels: int = 8
    depth: int = 5
    lstm_units: int = 256
    use_bilstm: bool = True
    label_mode: str = "smooth"
    loss: str = "bce"
    dropout_rate: float = 0.2
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    kernel_size: int = 3
    # test builds only: allow shapes that break the depth/width coupling
    relax_invariants: bool = False

    def validate(self) -> "ModelConfig":
        if self.input_channels not in (1, 2):
            raise ValueError(f"input_channels must be 1 or 2, got {self.input_channels}")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.base_channels < 1 or self.depth < 1 or self.lstm_units < 1:
            raise ValueError("base_channels, depth and lstm_units must be positive")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.batch_size < 1 or self.epochs < 1 or self.lr < 0:
            raise ValueError("batch_size and epochs must be >= 1, lr >= 0")
        if not self.relax_invariants:
            if self.depth != 5:
                raise ValueError(f"depth must be 5, got {self.depth}")
            if self.use_bilstm and self.base_channels * 2**self.depth != self.lstm_units:
                raise ValueError(
                    "base_channels * 2**depth must equal lstm_units "
                    f"({self.base_channels} * {2**self.depth} != {self.lstm_units})"
                )
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def architecture_hash(self) -> str:
        """Hash of the fields that determine parameter shapes and semantics."""
        keys = ("input_channels", "base_channels", "depth", "lstm_units", "use_bilstm", "kernel_size")
        blob = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class NetworkOutput:
    probabilities: np.ndarray
    logits: np.ndarray


def pad_for_depth(x: np.ndarray, depth: int) -> tuple[np.ndarray, int]:
    """Right-pad the last axis by edge replication to a multiple of ``2**depth``."""
    length = x.shape[-1]
    unit = 2**depth
    target = max(unit, -(-length // unit) * unit)
    if target == length:
        return x, length
    pad = [(0, 0)] * (x.ndim - 1) + [(0, target - length)]
    return np.pad(x, pad, mode="edge"), length


class UNetBiLSTM:
    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.store = ParameterStore(rng_seed=config.seed)
        self.bn: dict[str, nn.BatchNormState] = {}
        self._build()

    # -- construction --------------------------------------------------------

    def _conv(self, name: str, c_in: int, c_out: int, k: int) -> None:
        rng = layer_rng(self.config.seed, name)
        std = math.sqrt(2.0 / (c_in * k))
        self.store.add(f"{name}.w", rng.normal(0.0, std, size=(c_out, c_in, k)))
        self.store.add(f"{name}.b", np.zeros(c_out))

    def _bn(self, name: str, c: int) -> None:
        self.store.add(f"{name}.gamma", np.ones(c))
        self.store.add(f"{name}.beta", np.zeros(c))
        self.bn[name] = nn.BatchNormState(c, momentum=0.9, initialized=True)

    def _double(self, name: str, c_in: int, c_out: int) -> None:
        k = self.config.kernel_size
        self._conv(f"{name}.conv1", c_in, c_out, k)
        self._bn(f"{name}.bn1", c_out)
        self._conv(f"{name}.conv2", c_out, c_out, k)
        self._bn(f"{name}.bn2", c_out)

    def _lstm(self, name: str, d: int, h: int) -> None:
        rng = layer_rng(self.config.seed, name)
        bound = 1.0 / math.sqrt(h)
        self.store.add(f"{name}.W", rng.uniform(-bound, bound, size=(4 * h, d)))
        self.store.add(f"{name}.U", rng.uniform(-bound, bound, size=(4 * h, h)))
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget-gate bias
        self.store.add(f"{name}.b", b)

    def channels(self, stage: int) -> int:
        return self.config.base_channels * 2**stage

    def _build(self) -> None:
        cfg = self.config
        c_in = cfg.input_channels
        for s in range(cfg.depth):
            self._double(f"enc{s + 1}", c_in, self.channels(s))
            c_in = self.channels(s)
        c_bot = self.channels(cfg.depth)
        self._double("bottleneck", c_in, c_bot)
        features = c_bot
        if cfg.use_bilstm:
            self._lstm("lstm.fwd", c_bot, cfg.lstm_units)
            self._lstm("lstm.bwd", c_bot, cfg.lstm_units)
            features = cfg.lstm_units
        for s in reversed(range(cfg.depth)):
            c = self.channels(s)
            self._conv(f"dec{s + 1}.up", features, c, 1)
            self._double(f"dec{s + 1}", 2 * c, c)
            features = c
        self._conv("head", features, 1, 1)

    # -- evaluation ----------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.store.params[name]

    def _conv_relu_bn(self, name: str, bn: str, x: Tensor, training: bool) -> Tensor:
        y = ops.relu(ops.conv1d(x, self._p(f"{name}.w"), self._p(f"{name}.b")))
        return ops.batch_norm(y, self._p(f"{bn}.gamma"), self._p(f"{bn}.beta"), self.bn[bn], training)

    def _double_fwd(self, name: str, x: Tensor, training: bool, rng) -> Tensor:
        x = self._conv_relu_bn(f"{name}.conv1", f"{name}.bn1", x, training)
        x = ops.dropout(x, self.config.dropout_rate, training, rng)
        return self._conv_relu_bn(f"{name}.conv2", f"{name}.bn2", x, training)

    def _lstm_params(self, name: str) -> LstmCellParams:
        return LstmCellParams(self._p(f"{name}.W"), self._p(f"{name}.U"), self._p(f"{name}.b"))

    def logits(
        self,
        x: np.ndarray | Tensor,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Logits (N, L) for input (N, C, L); any L is padded then truncated back."""
        cfg = self.config
        xt = x if isinstance(x, Tensor) else Tensor(x)
        if xt.ndim != 3 or xt.shape[1] != cfg.input_channels:
            raise ValueError(f"expected input (N, {cfg.input_channels}, L), got {xt.shape}")
        length = xt.shape[-1]
        unit = 2**cfg.depth
        padded_len = max(unit, -(-length // unit) * unit)
        h = ops.pad_edge(xt, padded_len - length)

        skips = []
        for s in range(cfg.depth):
            h = self._double_fwd(f"enc{s + 1}", h, training, rng)
            skips.append(h)
            h = ops.maxpool1d(h, 3, 2)
        h = self._double_fwd("bottleneck", h, training, rng)
        if cfg.use_bilstm:
            seq = ops.transpose(h, (0, 2, 1))
            seq = nn.bilstm_sum(seq, self._lstm_params("lstm.fwd"), self._lstm_params("lstm.bwd"))
            h = ops.transpose(seq, (0, 2, 1))
        for s in reversed(range(cfg.depth)):
            up = ops.conv1d(ops.upsample2(h), self._p(f"dec{s + 1}.up.w"), self._p(f"dec{s + 1}.up.b"))
            skip = skips[s]
            if up.shape != skip.shape:
                raise AssertionError(f"skip shape mismatch at stage {s + 1}: {up.shape} vs {skip.shape}")
            h = self._double_fwd(f"dec{s + 1}", ops.concat([up, skip], axis=1), training, rng)
        out = ops.conv1d(h, self._p("head.w"), self._p("head.b"))
        n = out.shape[0]
        out = ops.reshape(out, (n, padded_len))
        if padded_len != length:
            out = ops.slice_axis(out, 0, length, axis=-1)
        return out

    def forward(self, x: np.ndarray, batch_size: int = 16) -> NetworkOutput:
        """Inference-mode probabilities for a batch (N, C, L)."""
        x = np.asarray(x, dtype=np.float64)
        with nn.no_grad():
            chunks = [self.logits(x[i : i + batch_size]).data for i in range(0, len(x), batch_size)]
        z = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, x.shape[-1]))
        return NetworkOutput(probabilities=ops._stable_sigmoid(z), logits=z)

    def loss(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        if self.config.loss == "bce":
            return ops.bce_with_logits(logits, targets)
        return ops.mse_with_logits(logits, targets)

    # -- checkpointing -------------------------------------------------------

    def _sync_buffers(self) -> None:
        for name, st in self.bn.items():
            self.store.buffers[f"{name}.mean"] = st.mean.copy()
            self.store.buffers[f"{name}.var"] = st.var.copy()

    def checkpoint(self) -> bytes:
        self._sync_buffers()
        meta = {"model_config": self.config.to_dict(), "arch_hash": self.config.architecture_hash()}
        return self.store.serialize(meta)

    @classmethod
    def from_checkpoint(cls, data: bytes) -> "UNetBiLSTM":
        store, meta = ParameterStore.deserialize(data)
        net = cls(ModelConfig.from_dict(meta["model_config"]))
        if set(store.params) != set(net.store.params):
            raise ValueError("checkpoint parameters do not match the configured architecture")
        net.store = store
        for name, st in net.bn.items():
            st.mean = store.buffers[f"{name}.mean"].copy()
            st.var = store.buffers[f"{name}.var"].copy()
        return net

    def restore(self, data: bytes) -> None:
        other = UNetBiLSTM.from_checkpoint(data)
        self.store, self.bn = other.store, other.bn


def build(config: ModelConfig) -> UNetBiLSTM:
    return UNetBiLSTM(config)


# ----------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    steps: int


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_checkpoint: Optional[bytes] = None
    best_epoch: int = -1
    steps: int = 0
    stopped_by_callback: bool = False

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for r in self.history:
            val = "" if r.val_loss is None else repr(r.val_loss)
            lines.append(f"{r.epoch},{r.train_loss!r},{val}")
        return "\n".join(lines) + "\n"


def stack_segments(segments: Sequence, input_channels: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.channels[:input_channels] for s in segments]).astype(np.float64)
    y = np.stack([s.target for s in segments]).astype(np.float64)
    return x, y


def evaluate_loss(net: UNetBiLSTM, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        z = net.logits(x[i : i + batch_size])
        total += float(net.loss(z, y[i : i + batch_size]).data) * len(z.data)
    return total / len(x)


def train(
    net: UNetBiLSTM,
    train_segments: Sequence,
    val_segments: Sequence = (),
    config: Optional[ModelConfig] = None,
    max_steps: Optional[int] = None,
    callback: Optional[Callable[[int, UNetBiLSTM], bool]] = None,
) -> TrainResult:
    """Mini-batch Adam training with best-validation checkpoint selection.

    ``callback(step, net)`` runs after every optimizer step; returning True
    stops training (the current weights are then kept as the result).
    """
    cfg = config or net.config
    if not train_segments:
        raise ValueError("training set is empty")
    x, y = stack_segments(train_segments, net.config.input_channels)
    xv, yv = stack_segments(val_segments, net.config.input_channels) if val_segments else (None, None)
    shuffle_rng = layer_rng(cfg.seed, "shuffle")
    dropout_rng = layer_rng(cfg.seed, "dropout")

    result = TrainResult()
    best = math.inf
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(x))
        losses = []
        for b, start in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            net.store.zero_grad()
            z = net.logits(x[idx], training=True, rng=dropout_rng)
            loss = net.loss(z, y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            loss.backward()
            adam_step(net.store, net.store.gradients(), lr=cfg.lr)
            result.steps += 1
            losses.append(value)
            if callback is not None and callback(result.steps, net):
                result.stopped_by_callback = True
                break
            if max_steps is not None and result.steps >= max_steps:
                break
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(net, xv, yv, cfg.batch_size) if xv is not None else None
        result.history.append(EpochRecord(epoch, train_loss, val_loss, result.steps))
        log.info("epoch %d train %.5f val %s", epoch, train_loss, val_loss)
        score = val_loss if val_loss is not None else train_loss
        if score < best:
            best, since_best = score, 0
            result.best_checkpoint = net.checkpoint()
            result.best_epoch = epoch
        else:
            since_best += 1
        if result.stopped_by_callback or (max_steps is not None and result.steps >= max_steps):
            break
        if since_best >= cfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
            break
    if result.stopped_by_callback:
        result.best_checkpoint = net.checkpoint()
        result.best_epoch = result.history[-1].epoch
    return result
