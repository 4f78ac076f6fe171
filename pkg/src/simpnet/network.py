"""Sequential model container, parameter ledger, and checkpoint I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, FormatError, ShapeError
from .layers import EVAL, TRAIN, Layer
from .rng import SplitRng

CHECKPOINT_MAGIC = b"SNPK"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


@dataclass(frozen=True)
class LedgerRow:
    name: str
    param_count: int
    mac_count: int
    out_shape: tuple


@dataclass
class ParamLedger:
    rows: list[LedgerRow] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.param_count for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.mac_count for r in self.rows)

    def render(self) -> str:
        lines = [f"{'layer':<14} {'params':>10} {'macs':>12}  out_shape"]
        for r in self.rows:
            lines.append(f"{r.name:<14} {r.param_count:>10} {r.mac_count:>12}  {r.out_shape}")
        lines.append(f"{'total':<14} {self.total_params:>10} {self.total_macs:>12}")
        return "\n".join(lines)


class Model:
    """Ordered layer stack with a named parameter/gradient registry.

    Gradients accumulate across backward calls; the trainer zeroes them.
    A model is single-owner while training; eval-mode forward is a pure
    function of (input, parameters).
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], name: str = "model"):
        self.layers = layers
        self.input_shape = tuple(input_shape)  # (c, h, w)
        self.name = name
        self.mode = TRAIN
        names = [n for l in layers for n, _, _ in l.param_entries()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names in model")

    def init_params(self, rng: SplitRng, dtype=np.float32):
        shape = (1,) + self.input_shape
        for i, layer in enumerate(self.layers):
            layer.init_params(shape, rng.split(i), dtype)
            shape = layer.out_shape(shape)
        return self

    def train(self):
        self.mode = TRAIN
        return self

    def eval(self):
        self.mode = EVAL
        return self

    def forward(self, x: np.ndarray, rng: SplitRng | None = None) -> np.ndarray:
        """Apply layers in order; caches live inside each layer.

        In train mode each stochastic layer draws from rng.split(i) with
        i the layer index, so streams are stable under reordering.
        """
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, self.mode, rng.split(i) if rng is not None else None)
            except ShapeError as e:
                raise ShapeError(f"at layer {layer.name!r}: {e}") from e
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Fill every registered gradient; returns grad wrt the input."""
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def params(self):
        """(name, value, grad) triples in layer order."""
        return [entry for layer in self.layers for entry in layer.param_entries()]

    def state_tensors(self):
        """Params plus persistent buffers (BN running stats), layer order."""
        return [entry for layer in self.layers for entry in layer.state_entries()]

    def zero_grads(self):
        for _, _, g in self.params():
            g[...] = 0

    def symbolic_shapes(self, batch: int = 1):
        """Per-layer output shapes computed without running data."""
        shape = (batch,) + self.input_shape
        shapes = []
        for layer in self.layers:
            shape = layer.out_shape(shape)
            shapes.append(shape)
        return shapes

    def out_shape(self, batch: int = 1):
        return self.symbolic_shapes(batch)[-1]


def count_params(model: Model) -> ParamLedger:
    """Closed-form per-layer parameter counts (independent of input size)."""
    ledger = ParamLedger()
    shape = (1,) + model.input_shape
    for layer in model.layers:
        out = layer.out_shape(shape)
        ledger.rows.append(LedgerRow(layer.name, layer.param_count(shape), 0, out))
        shape = out
    return ledger


def count_macs(model: Model, input_shape=None) -> ParamLedger:
    """Multiply-accumulate counts for one sample; pooling and pointwise
    layers count 0 by convention."""
    shape = (1,) + tuple(input_shape if input_shape is not None else model.input_shape)
    ledger = ParamLedger()
    for layer in model.layers:
        out = layer.out_shape(shape)
        ledger.rows.append(LedgerRow(layer.name, layer.param_count(shape), layer.mac_count(shape), out))
        shape = out
    return ledger


def save_checkpoint(model: Model, path):
    """Binary dump of every state tensor; see format note below.

    magic "SNPK", version byte 0x01, then per tensor: u16 name length,
    UTF-8 name, u8 dtype code (0=f32, 1=f64), u8 ndim, u32 per dim,
    raw little-endian data. All integers little-endian.
    """
    entries = model.state_tensors()
    for name, value in entries:
        if not np.all(np.isfinite(value)):
            raise ValueError(f"refusing to checkpoint non-finite tensor {name!r}")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<B", CHECKPOINT_VERSION))
        for name, value in entries:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", _DTYPE_CODES[value.dtype], value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<")).tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Parse a checkpoint into name -> tensor, validating the framing."""

    def need(f, n, what):
        buf = f.read(n)
        if len(buf) != n:
            raise FormatError(f"truncated checkpoint: expected {n} bytes for {what}")
        return buf

    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic (expected SNPK)")
        (version,) = struct.unpack("<B", need(f, 1, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        while True:
            head = f.read(2)
            if not head:
                break
            if len(head) != 2:
                raise FormatError("truncated checkpoint: name length")
            (name_len,) = struct.unpack("<H", head)
            name = need(f, name_len, "name").decode("utf-8")
            code, ndim = struct.unpack("<BB", need(f, 2, "dtype/ndim"))
            if code not in _CODE_DTYPES:
                raise FormatError(f"unknown dtype code {code} for {name!r}")
            dims = struct.unpack(f"<{ndim}I", need(f, 4 * ndim, "dims"))
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            data = need(f, nbytes, f"data of {name!r}")
            arr = np.frombuffer(data, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)
            if name in tensors:
                raise FormatError(f"duplicate tensor {name!r} in checkpoint")
            tensors[name] = arr
    return tensors


def load_checkpoint(model: Model, path):
    """Copy checkpoint tensors into the model, strict on names and shapes."""
    tensors = read_checkpoint(path)
    state = dict(model.state_tensors())
    for name in tensors:
        if name not in state:
            raise CompatibilityError(f"checkpoint tensor {name!r} not in model")
    for name, value in state.items():
        if name not in tensors:
            raise CompatibilityError(f"model tensor {name!r} missing from checkpoint")
        src = tensors[name]
        if src.shape != value.shape:
            raise CompatibilityError(f"shape mismatch for {name!r}: checkpoint {src.shape} vs model {value.shape}")
        if src.dtype != value.dtype:
            raise CompatibilityError(f"dtype mismatch for {name!r}: checkpoint {src.dtype} vs model {value.dtype}")
        value[...] = src
    return model
