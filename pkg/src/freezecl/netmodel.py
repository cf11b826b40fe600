"""Dense detectors split into an encoder and a classifier.

Layers ``0 .. split_index-1`` form the encoder, which maps a feature row to an
embedding; the remaining layers form the classifier producing two logits
(index 1 is the fake class).

Checkpoint file layout (all integers and floats little-endian)::

    b"FZCLCKPT1\\n"
    uint64 header length H
    H bytes of UTF-8 JSON: {"spec": {...}, "params": [[name, shape], ...]}
    float64 parameter buffers, row-major, in header order
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, SpecError

ACTIVATIONS = ("relu", "none")
_MAGIC = b"FZCLCKPT1\n"


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    split_index: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self) -> None:
        n = len(self.layers)
        if n < 2:
            raise SpecError(f"need at least 2 layers, got {n}")
        if not 1 <= self.split_index < n:
            raise SpecError(f"split_index must satisfy 1 <= split_index < {n}, got {self.split_index}")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise SpecError(f"layer {i}: widths must be positive")
        for i in range(n - 1):
            if self.layers[i].out_dim != self.layers[i + 1].in_dim:
                raise SpecError(
                    f"chain broken between layer {i} (out {self.layers[i].out_dim}) "
                    f"and layer {i + 1} (in {self.layers[i + 1].in_dim})"
                )
        if self.layers[-1].out_dim != 2:
            raise SpecError(f"last layer must emit 2 logits, got {self.layers[-1].out_dim}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def embedding_dim(self) -> int:
        return self.layers[self.split_index - 1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.in_dim * l.out_dim + l.out_dim for l in self.layers)

    @classmethod
    def from_widths(cls, widths: Sequence[int], split_index: int) -> "ModelSpec":
        """``widths = [in, h1, ..., 2]``; relu everywhere except the logit layer."""
        n = len(widths) - 1
        layers = [
            LayerSpec(widths[i], widths[i + 1], "none" if i == n - 1 else "relu")
            for i in range(n)
        ]
        return cls(tuple(layers), split_index)

    def to_dict(self) -> dict:
        return {
            "layers": [[l.in_dim, l.out_dim, l.activation] for l in self.layers],
            "split_index": self.split_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            layers = tuple(LayerSpec(int(a), int(b), str(c)) for a, b, c in d["layers"])
            return cls(layers, int(d["split_index"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"malformed model spec: {exc}") from exc


def default_spec(input_dim: int = 32) -> ModelSpec:
    return ModelSpec.from_widths([input_dim, 64, 32, 16, 2], split_index=2)


def param_names(spec: ModelSpec) -> list[str]:
    names = []
    for i in range(len(spec.layers)):
        names += [f"layer{i}.weight", f"layer{i}.bias"]
    return names


class SplitModel:
    """Trainable split detector. Parameters live in ``params`` keyed by name."""

    def __init__(self, spec: ModelSpec, params: dict[str, ad.Tensor]):
        self.spec = spec
        self.params = params
        for name, shape in _expected_shapes(spec):
            if name not in params or params[name].shape != shape:
                got = params[name].shape if name in params else None
                raise DimensionError(f"{name}: expected shape {shape}, got {got}")

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def copy(self) -> "SplitModel":
        return SplitModel(self.spec, {
            k: ad.Tensor(p.data, trainable=True, name=k) for k, p in self.params.items()
        })

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    """Immutable copy of a model used as the distillation teacher."""

    spec: ModelSpec
    arrays: dict[str, np.ndarray] = field(repr=False)

    def digest(self) -> str:
        return params_digest(self.arrays)


def _expected_shapes(spec: ModelSpec):
    for i, layer in enumerate(spec.layers):
        yield f"layer{i}.weight", (layer.in_dim, layer.out_dim)
        yield f"layer{i}.bias", (layer.out_dim,)


def init_model(spec: ModelSpec, seed: int) -> SplitModel:
    """Uniform He-style weights in ``±sqrt(6 / fan_in)``, zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for i, layer in enumerate(spec.layers):
        bound = math.sqrt(6.0 / layer.in_dim)
        w = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
        params[f"layer{i}.weight"] = ad.Tensor(w, trainable=True, name=f"layer{i}.weight")
        params[f"layer{i}.bias"] = ad.Tensor(np.zeros(layer.out_dim), trainable=True, name=f"layer{i}.bias")
    return SplitModel(spec, params)


def snapshot(model: SplitModel) -> ModelSnapshot:
    arrays = {}
    for k, p in model.params.items():
        a = p.data.copy()
        a.setflags(write=False)
        arrays[k] = a
    return ModelSnapshot(model.spec, arrays)


def _tensors(model: SplitModel | ModelSnapshot) -> dict[str, ad.Tensor]:
    if isinstance(model, SplitModel):
        return model.params
    return {k: ad.constant(v) for k, v in model.arrays.items()}


def forward(model: SplitModel | ModelSnapshot, X) -> tuple[ad.Tensor, ad.Tensor]:
    """Return ``(embedding, logits)`` for a batch of feature rows."""
    x = ad.as_tensor(X)
    spec = model.spec
    if x.data.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match input_dim {spec.input_dim}")
    params = _tensors(model)
    h = x
    emb = None
    for i, layer in enumerate(spec.layers):
        h = ad.add_bias(ad.matmul(h, params[f"layer{i}.weight"]), params[f"layer{i}.bias"])
        if layer.activation == "relu":
            h = ad.relu(h)
        if i == spec.split_index - 1:
            emb = h
    return emb, h


def softmax_fake(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=1)


def predict_scores(model: SplitModel | ModelSnapshot, X: np.ndarray) -> np.ndarray:
    """Fake-class probability for each row, in [0, 1]."""
    _, logits = forward(model, X)
    return softmax_fake(logits.data)


def param_partition(model: SplitModel | ModelSnapshot) -> tuple[list[str], list[str]]:
    """Split parameter names into (encoder, classifier) by layer index."""
    encoder, classifier = [], []
    for i in range(len(model.spec.layers)):
        side = encoder if i < model.spec.split_index else classifier
        side += [f"layer{i}.weight", f"layer{i}.bias"]
    return encoder, classifier


def params_digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(model: SplitModel | ModelSnapshot, path: str | Path) -> None:
    arrays = model.state() if isinstance(model, SplitModel) else model.arrays
    names = param_names(model.spec)
    header = json.dumps({
        "spec": model.spec.to_dict(),
        "params": [[k, list(arrays[k].shape)] for k in names],
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> SplitModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise SpecError(f"{path}: not a checkpoint file")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos:pos + hlen].decode())
    pos += hlen
    spec = ModelSpec.from_dict(header["spec"])
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        buf = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        params[name] = ad.Tensor(buf.astype(np.float64), trainable=True, name=name)
    if pos != len(raw):
        raise SpecError(f"{path}: {len(raw) - pos} trailing bytes")
    return SplitModel(spec, params)
