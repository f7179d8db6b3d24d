"""The lightweight pyramidal 1D CNN and its four published variants."""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .nn import BatchNormState, ShapeError

DEFAULT_BLOCKS = ((32, 5, 3), (24, 3, 2), (16, 3, 2), (8, 3, 2))


@dataclass(frozen=True)
class ModelSpec:
    conv_blocks: tuple[tuple[int, int, int], ...] = DEFAULT_BLOCKS
    fc1_units: int = 20
    dropout_before_fc2: bool = True
    dropout_p: float = 0.5
    n_classes: int = 2
    input_length: int = 672
    bn_affine: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks))
        outs = [b[0] for b in self.conv_blocks]
        if any(a <= b for a, b in zip(outs, outs[1:])):
            raise ValueError(f"conv block widths must strictly decrease, got {outs}")
        if self.n_classes != 2:
            raise ValueError("only the binary task is supported")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")

    def with_length(self, n: int) -> "ModelSpec":
        d = asdict(self)
        d["input_length"] = int(n)
        return ModelSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        return cls(**d)


VARIANTS = {
    "M1": dict(fc1_units=20, dropout_before_fc2=False),
    "M2": dict(fc1_units=20, dropout_before_fc2=True),
    "M3": dict(fc1_units=40, dropout_before_fc2=False),
    "M4": dict(fc1_units=40, dropout_before_fc2=True),
}


def variant_spec(name: str, input_length: int = 672) -> ModelSpec:
    try:
        kw = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
    return ModelSpec(input_length=input_length, **kw)


def infer_shapes(spec: ModelSpec) -> list[tuple[int, int]]:
    """(channels, length) after each conv block; raises naming the block that cannot fit."""
    chain = []
    n = spec.input_length
    for i, (c_out, r, s) in enumerate(spec.conv_blocks, 1):
        if n < r:
            raise ShapeError(f"conv{i}: input length {n} shorter than receptive field {r}")
        n = nn.conv_output_length(n, r, s)
        chain.append((c_out, n))
    return chain


def flatten_dim(spec: ModelSpec) -> int:
    c, n = infer_shapes(spec)[-1]
    return c * n


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    c_in = 1
    for i, (c_out, r, _) in enumerate(spec.conv_blocks, 1):
        shapes[f"conv{i}.w"] = (c_out, r, c_in)
        shapes[f"conv{i}.b"] = (c_out,)
        if spec.bn_affine:
            shapes[f"bn{i}.gamma"] = (c_out,)
            shapes[f"bn{i}.beta"] = (c_out,)
        c_in = c_out
    d = flatten_dim(spec)
    shapes["fc1.W"] = (d, spec.fc1_units)
    shapes["fc1.b"] = (spec.fc1_units,)
    shapes["fc2.W"] = (spec.fc1_units, spec.n_classes)
    shapes["fc2.b"] = (spec.n_classes,)
    return shapes


def count_params(spec: ModelSpec) -> int:
    """Learnable parameters from the closed form (conv: out*r*in + out, FC: in*out + out)."""
    total = 0
    c_in = 1
    for c_out, r, _ in spec.conv_blocks:
        total += c_out * r * c_in + c_out
        if spec.bn_affine:
            total += 2 * c_out
        c_in = c_out
    d = flatten_dim(spec)
    total += d * spec.fc1_units + spec.fc1_units
    total += spec.fc1_units * spec.n_classes + spec.n_classes
    return total


@dataclass
class ModelWeights:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    bn: list[BatchNormState]
    variant: str = "custom"
    channel: int = -1
    dtype: np.dtype = field(default_factory=lambda: np.dtype(np.float32))

    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def copy(self) -> "ModelWeights":
        bn = [BatchNormState(s.running_mean.copy(), s.running_var.copy(), s.momentum, s.eps,
                             None if s.gamma is None else s.gamma, None if s.beta is None else s.beta)
              for s in self.bn]
        params = {k: v.copy() for k, v in self.params.items()}
        m = ModelWeights(self.spec, params, bn, self.variant, self.channel, self.dtype)
        _bind_affine(m)
        return m

    def astype(self, dtype) -> "ModelWeights":
        m = self.copy()
        m.dtype = np.dtype(dtype)
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        for s in m.bn:
            s.running_mean = s.running_mean.astype(dtype)
            s.running_var = s.running_var.astype(dtype)
        _bind_affine(m)
        return m


def _bind_affine(model: ModelWeights) -> None:
    # BN affine arrays live in params so the optimiser sees them; the state just references them
    for i, st in enumerate(model.bn, 1):
        if f"bn{i}.gamma" in model.params:
            st.gamma = model.params[f"bn{i}.gamma"]
            st.beta = model.params[f"bn{i}.beta"]
        else:
            st.gamma = st.beta = None


def build_model(spec: ModelSpec, rng: np.random.Generator, variant: str = "custom",
                channel: int = -1, dtype=np.float32) -> ModelWeights:
    """Scaled-normal init (std = sqrt(2 / fan_in)), zero biases, BN stats at (0, 1)."""
    shapes = param_shapes(spec)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".w") or name.endswith(".W"):
            fan_in = int(np.prod(shape[1:])) if name.endswith(".w") else shape[0]
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype)
        else:
            params[name] = np.zeros(shape, dtype)
    bn = [BatchNormState.fresh(c, dtype) for c, _, _ in spec.conv_blocks]
    m = ModelWeights(spec, params, bn, variant, channel, np.dtype(dtype))
    _bind_affine(m)
    return m


def forward(model: ModelWeights, windows: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None):
    """Run a batch of windows ``(B, N)`` (or a single ``(N,)``) through the network.

    Returns ``(logits, probs, cache)``; ``cache`` is ``None`` in eval mode.
    """
    spec = model.spec
    x = np.asarray(windows, dtype=model.dtype)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] != spec.input_length:
        raise ShapeError(f"window length {x.shape[-1]} != model input length {spec.input_length}")
    p = model.params
    a = x[:, :, None]
    caches = []
    for i, (_, _, s) in enumerate(spec.conv_blocks, 1):
        c, conv_cache = nn.conv1d_forward(a, p[f"conv{i}.w"], p[f"conv{i}.b"], s)
        h, bn_cache = nn.batchnorm_forward(c, model.bn[i - 1], train)
        a = nn.relu(h)
        caches.append((conv_cache, bn_cache, h))
    a4 = a.reshape(a.shape[0], -1)
    z1 = nn.fc_forward(a4, p["fc1.W"], p["fc1.b"])
    a5 = nn.relu(z1)
    if spec.dropout_before_fc2:
        a5d, mask = nn.dropout(a5, spec.dropout_p, train, rng)
    else:
        a5d, mask = a5, None
    logits = nn.fc_forward(a5d, p["fc2.W"], p["fc2.b"])
    probs = nn.softmax(logits)
    cache = None
    if train:
        cache = dict(conv=caches, a4=a4, a4_shape=a.shape, z1=z1, a5d=a5d, mask=mask)
    return logits, probs, cache


def backward(model: ModelWeights, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every entry of ``model.params`` given ``dL/dlogits``."""
    if cache is None:
        raise ValueError("backward needs a train-mode forward cache")
    p = model.params
    g = {}
    da5d, g["fc2.W"], g["fc2.b"] = nn.fc_backward(cache["a5d"], p["fc2.W"], dlogits)
    da5 = da5d * cache["mask"] if cache["mask"] is not None else da5d
    dz1 = nn.relu_backward(cache["z1"], da5)
    da4, g["fc1.W"], g["fc1.b"] = nn.fc_backward(cache["a4"], p["fc1.W"], dz1)
    da = da4.reshape(cache["a4_shape"])
    for i in range(len(model.spec.conv_blocks), 0, -1):
        conv_cache, bn_cache, h = cache["conv"][i - 1]
        dh = nn.relu_backward(h, da)
        dc, dgamma, dbeta = nn.batchnorm_backward(dh, bn_cache)
        if dgamma is not None:
            g[f"bn{i}.gamma"], g[f"bn{i}.beta"] = dgamma, dbeta
        da, g[f"conv{i}.w"], g[f"conv{i}.b"] = nn.conv1d_backward(dc, conv_cache, need_dx=i > 1)
    return g


def predict(model: ModelWeights, windows: np.ndarray, batch_size: int = 512):
    """Eval-mode labels and probabilities; exact ties go to class 0."""
    windows = np.asarray(windows)
    if windows.ndim == 1:
        windows = windows[None]
    probs = [forward(model, windows[i:i + batch_size])[1] for i in range(0, len(windows), batch_size)]
    probs = np.concatenate(probs) if probs else np.zeros((0, model.spec.n_classes), model.dtype)
    return probs.argmax(axis=1), probs


# --------------------------------------------------------------------------
# weight files
# --------------------------------------------------------------------------
#
# layout (all integers little-endian):
#   8 bytes   magic  b"LP1DCNN\0"
#   u16       format version
#   u32       header length H
#   H bytes   UTF-8 JSON header: spec, variant, channel, dtype ("<f4"/"<f8"),
#             arrays: [[name, shape, byte_offset, nbytes], ...], crc32 of payload
#   payload   arrays back to back, C order, in header order

MAGIC = b"LP1DCNN\0"
FORMAT_VERSION = 1


class WeightFileError(Exception):
    """Base class for weight-file problems."""


class WeightFormatError(WeightFileError):
    """Bad magic, unreadable header, truncated or corrupted payload."""


class WeightVersionError(WeightFileError):
    pass


class WeightShapeError(WeightFileError):
    """File contents do not fit the expected architecture."""


def _state_arrays(model: ModelWeights) -> dict[str, np.ndarray]:
    arrays = dict(model.params)
    for i, st in enumerate(model.bn, 1):
        arrays[f"bn{i}.running_mean"] = st.running_mean
        arrays[f"bn{i}.running_var"] = st.running_var
    return arrays


def save_weights(model: ModelWeights, path) -> None:
    dt = np.dtype(model.dtype).newbyteorder("<")
    arrays = _state_arrays(model)
    table, chunks, off = [], [], 0
    for name, arr in arrays.items():
        buf = np.ascontiguousarray(arr, dtype=dt).tobytes()
        table.append([name, list(arr.shape), off, len(buf)])
        chunks.append(buf)
        off += len(buf)
    payload = b"".join(chunks)
    header = dict(
        spec=model.spec.to_dict(), variant=model.variant, channel=int(model.channel),
        dtype=dt.str, bn_momentum=model.bn[0].momentum, bn_eps=model.bn[0].eps,
        arrays=table, crc32=zlib.crc32(payload),
    )
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", FORMAT_VERSION, len(hbytes)))
        f.write(hbytes)
        f.write(payload)


def load_weights(path, expected_spec: ModelSpec | None = None) -> ModelWeights:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 6 or raw[:len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"{path}: not a weight file (bad magic or too short)")
    version, hlen = struct.unpack_from("<HI", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise WeightVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 6
    if len(raw) < start + hlen:
        raise WeightFormatError(f"{path}: header truncated")
    try:
        header = json.loads(raw[start:start + hlen])
        spec = ModelSpec.from_dict(header["spec"])
        dt = np.dtype(header["dtype"])
    except (ValueError, KeyError, TypeError) as e:
        raise WeightFormatError(f"{path}: corrupt header ({e})") from None
    payload = raw[start + hlen:]
    expected_size = sum(entry[3] for entry in header["arrays"])
    if len(payload) != expected_size:
        raise WeightFormatError(f"{path}: payload is {len(payload)} bytes, header says {expected_size}")
    if zlib.crc32(payload) != header["crc32"]:
        raise WeightFormatError(f"{path}: payload checksum mismatch")
    if expected_spec is not None and expected_spec != spec:
        raise WeightShapeError(f"{path}: file holds {spec}, expected {expected_spec}")

    arrays = {}
    for name, shape, off, nbytes in header["arrays"]:
        arrays[name] = np.frombuffer(payload, dtype=dt, count=nbytes // dt.itemsize,
                                     offset=off).reshape(shape).astype(dt.newbyteorder("="))
    shapes = param_shapes(spec)
    for name, shape in shapes.items():
        if name not in arrays or tuple(arrays[name].shape) != shape:
            got = arrays[name].shape if name in arrays else None
            raise WeightShapeError(f"{path}: {name} has shape {got}, spec needs {shape}")
    params = {k: arrays[k] for k in shapes}
    bn = []
    for i, (c, _, _) in enumerate(spec.conv_blocks, 1):
        rm, rv = arrays.get(f"bn{i}.running_mean"), arrays.get(f"bn{i}.running_var")
        if rm is None or rv is None or rm.shape != (c,) or rv.shape != (c,):
            raise WeightShapeError(f"{path}: batch-norm statistics for block {i} missing or misshapen")
        bn.append(BatchNormState(rm, rv, header["bn_momentum"], header["bn_eps"]))
    m = ModelWeights(spec, params, bn, header["variant"], header["channel"], np.dtype(dt.newbyteorder("=")))
    _bind_affine(m)
    return m
