"""Named parameters, optimizer state, and checkpoint (de)serialization."""

from __future__ import annotations

import zlib
from typing import Iterator, Optional

import numpy as np

from .. import container
from .tensor import Tensor

CHECKPOINT_FORMAT = "dualqrs-checkpoint/1"


def layer_rng(seed: int, name: str) -> np.random.Generator:
    """Independent reproducible stream for one named consumer of randomness."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


class ParameterStore:
    def __init__(self, rng_seed: int = 0):
        self.rng_seed = rng_seed
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.params.items()
        }

    def count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # -- serialization -------------------------------------------------------

    def to_arrays(self, meta: Optional[dict] = None) -> dict[str, np.ndarray]:
        header = {
            "format": CHECKPOINT_FORMAT,
            "rng_seed": self.rng_seed,
            "step": self.step,
            "params": list(self.params),
            "buffers": list(self.buffers),
            "meta": meta or {},
        }
        arrays = {"__header__": container.pack_json(header)}
        for k, t in self.params.items():
            arrays[f"param/{k}"] = t.data
            arrays[f"adam_m/{k}"] = self.m[k]
            arrays[f"adam_v/{k}"] = self.v[k]
        for k, b in self.buffers.items():
            arrays[f"buffer/{k}"] = b
        return arrays

    def serialize(self, meta: Optional[dict] = None) -> bytes:
        return container.dumps(self.to_arrays(meta))

    @classmethod
    def deserialize(cls, data: bytes) -> tuple["ParameterStore", dict]:
        arrays = container.loads(data)
        header = container.unpack_json(arrays["__header__"])
        if header.get("format") != CHECKPOINT_FORMAT:
            raise container.ContainerError(f"unknown checkpoint format {header.get('format')!r}")
        store = cls(rng_seed=header["rng_seed"])
        store.step = header["step"]
        for k in header["params"]:
            store.add(k, arrays[f"param/{k}"])
            store.m[k] = arrays[f"adam_m/{k}"]
            store.v[k] = arrays[f"adam_v/{k}"]
        for k in header["buffers"]:
            store.buffers[k] = arrays[f"buffer/{k}"]
        return store, header["meta"]


def adam_step(
    store: ParameterStore,
    gradients: dict[str, np.ndarray],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """Bias-corrected Adam update applied in place; returns ``store``."""
    for name, g in gradients.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in gradients.items():
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr:
            store.params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
