"""Named parameter storage, the Adam optimizer and the checkpoint codec."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError, ContractError

CKPT_MAGIC = b"CGRD"
CKPT_VERSION = 1


class ParamStore:
    """Insertion-ordered name -> Tensor map with matching gradient buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(value)
        self.params[name] = t
        self.grads[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def scale_grads(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def n_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def copy_values_from(self, other: "ParamStore", prefix: str = "") -> list[str]:
        """Copy values for every shared name starting with ``prefix``."""
        copied = []
        for name, src in other.params.items():
            if name.startswith(prefix) and name in self.params:
                dst = self.params[name]
                if dst.shape != src.shape:
                    raise ContractError(
                        f"parameter {name!r} shape mismatch: {dst.shape} vs {src.shape}")
                dst.data[...] = src.data
                copied.append(name)
        return copied


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, store: ParamStore, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for name, p in store.params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update from ``store.grads``."""
    if set(state.m) != set(store.params):
        raise ContractError("optimizer state does not match the parameter store")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in store.params.items():
        g = store.grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_exponential_decay(initial_lr: float, epoch: int, decay: float = 0.85) -> float:
    """Learning rate for ``epoch`` (0-based): initial_lr * decay**epoch."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return initial_lr * decay ** epoch


def save_params(store: ParamStore, path) -> None:
    """Write magic, version, a JSON manifest and raw little-endian payload."""
    manifest = [
        {"name": name, "dtype": "<f8", "shape": list(t.shape)}
        for name, t in store.params.items()
    ]
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in store.params.values():
            fh.write(t.data.astype("<f8", copy=False).tobytes())


def load_params(store: ParamStore, path) -> None:
    """Fill ``store`` from a checkpoint written by save_params.

    The file must cover exactly the store's parameter names with matching
    shapes; anything missing or unexpected raises CheckpointError naming
    the offenders.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        file_names = [entry["name"] for entry in manifest]
        missing = [n for n in store.params if n not in file_names]
        extra = [n for n in file_names if n not in store.params]
        if missing or extra:
            raise CheckpointError(
                f"parameter mismatch: missing {missing}, unexpected {extra}")
        for entry in manifest:
            name = entry["name"]
            shape = tuple(entry["shape"])
            have = store.params[name]
            if have.shape != shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: file {shape}, store {have.shape}")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"truncated payload at {name!r}")
            have.data[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
