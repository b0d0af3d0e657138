"""Fixed-latency CP-ResNet style phoneme classifier (inference only).

Feature maps are laid out as ``(time, freq, channels)``. Every layer is evaluated
one output time step at a time, and batch inference simply pushes a whole
feature matrix through the same streaming pipeline, so streamed and batch
outputs are identical bit for bit.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, MissingTensor, ShapeError, TruncatedTensor
from .features import FeatureMatrix
from .posteriogram import N_CLASSES, PhonemeVocab, Posteriogram

LAYER_KINDS = ("conv_bn_relu", "maxpool", "mean_freq_pool", "log_softmax")
DEFAULT_BN_EPS = 1e-5
QUOTED_RF_FRAMES = 57  # often quoted for this layer table; the kernel/stride recursion gives 59


@dataclass(frozen=True)
class LayerSpec:
    """One row of the layer table; ``kernel``/``stride``/``padding`` are ``(time, freq)``.

    ``residual`` groups the repeated layers into identity-skip blocks of two
    layers (or of one layer when ``repeat`` is odd).
    """

    kind: str
    filters: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    repeat: int = 1
    residual: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError("kernel and stride must be >= 1")
        if min(self.padding) < 0:
            raise ValueError("padding must be >= 0")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")

    @property
    def block_size(self) -> int:
        return 2 if self.repeat % 2 == 0 else 1


def _table1_layers() -> tuple[LayerSpec, ...]:
    conv = "conv_bn_relu"
    return (
        LayerSpec(conv, 64, (5, 5), (2, 2), (1, 1)),
        LayerSpec(conv, 64, (3, 3), (1, 1), (1, 1)),
        LayerSpec(conv, 64, (1, 1), (1, 1), (1, 1)),
        LayerSpec("maxpool", 0, (2, 2), (2, 2), (0, 0)),
        LayerSpec(conv, 64, (3, 3), (1, 1), (1, 1), repeat=6, residual=True),
        # "3x1" spans 3 frequency bins and 1 frame
        LayerSpec(conv, 128, (1, 3), (1, 1), (0, 1)),
        LayerSpec(conv, 128, (1, 3), (1, 1), (0, 1), residual=True),
        LayerSpec(conv, 128, (1, 1), (1, 1), (0, 0), repeat=2, residual=True),
        LayerSpec(conv, N_CLASSES, (1, 1), (1, 1), (0, 0)),
        LayerSpec("mean_freq_pool"),
        LayerSpec("log_softmax"),
    )


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...] = field(default_factory=_table1_layers)
    input_dim: int = 80
    n_classes: int = N_CLASSES
    temporal_downsample: int = 4
    input_period_ms: float = 10.0
    latency_frames: int = 28

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        plan = build_plan(self)
        stride = 1
        for layer in self.layers:
            stride *= layer.stride[0] ** layer.repeat
        if stride != self.temporal_downsample:
            raise ShapeError(f"time strides multiply to {stride}, spec declares {self.temporal_downsample}")
        if plan.out_channels != self.n_classes:
            raise ShapeError(f"final channel count {plan.out_channels} != n_classes {self.n_classes}")

    @classmethod
    def table1(cls, latency_frames: int = 28) -> "NetworkSpec":
        return cls(latency_frames=latency_frames)

    @property
    def output_period_ms(self) -> float:
        return self.input_period_ms * self.temporal_downsample

    @property
    def anchor_offset(self) -> int:
        """Input frame of output row 0; row ``m`` sits at ``downsample * m + anchor_offset``.

        Chosen so that each row needs exactly ``latency_frames`` frames of future context.
        """
        return input_context(self)[1] - self.latency_frames

    def row_position(self, row: int) -> int:
        return self.temporal_downsample * row + self.anchor_offset

    def output_length(self, n_frames: int) -> int:
        t = n_frames
        for layer in self.layers:
            if layer.kind in ("conv_bn_relu", "maxpool"):
                k, s, p = layer.kernel[0], layer.stride[0], layer.padding[0]
                for _ in range(layer.repeat):
                    t = (t + 2 * p - k) // s + 1 if t + 2 * p >= k else 0
        return t


# --- receptive field --------------------------------------------------------

def _time_ops(spec: NetworkSpec):
    for layer in spec.layers:
        if layer.kind in ("conv_bn_relu", "maxpool"):
            for _ in range(layer.repeat):
                yield layer.kernel[0], layer.stride[0], layer.padding[0]


def receptive_field(spec: NetworkSpec) -> tuple[int, int]:
    """Temporal receptive field and total stride, in input frames.

    Applies ``rf += (k - 1) * jump; jump *= s`` over the layers in order.
    """
    rf, jump = 1, 1
    for k, s, _ in _time_ops(spec):
        rf += (k - 1) * jump
        jump *= s
    return rf, jump


def input_context(spec: NetworkSpec) -> tuple[int, int]:
    """Input frame range ``(lo, hi)`` that output row 0 depends on, padding included.

    Row ``m`` depends on frames ``downsample * m + lo .. downsample * m + hi``.
    """
    lo = hi = 0
    for k, s, p in reversed(list(_time_ops(spec))):
        lo, hi = lo * s - p, hi * s - p + k - 1
    return lo, hi


# --- static plan -------------------------------------------------------------

@dataclass(frozen=True)
class ConvLayer:
    name: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    padding: tuple[int, int]
    in_freq: int
    out_freq: int

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.out_channels
        return {
            f"{self.name}.weight": (c, self.in_channels, *self.kernel),
            f"{self.name}.bias": (c,),
            f"{self.name}.bn.gamma": (c,),
            f"{self.name}.bn.beta": (c,),
            f"{self.name}.bn.running_mean": (c,),
            f"{self.name}.bn.running_var": (c,),
        }


@dataclass(frozen=True)
class PoolLayer:
    kernel: tuple[int, int]
    stride: tuple[int, int]
    padding: tuple[int, int]
    channels: int
    in_freq: int
    out_freq: int


@dataclass
class Plan:
    steps: list = field(default_factory=list)  # ("conv"|"pool"|"block"|"freq_mean"|"log_softmax", payload)
    out_channels: int = 1
    out_freq: int = 0

    def conv_layers(self) -> list[ConvLayer]:
        convs = []
        for kind, payload in self.steps:
            if kind == "conv":
                convs.append(payload)
            elif kind == "block":
                convs.extend(payload)
        return convs


def _out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1 if n + 2 * p >= k else 0


def build_plan(spec: NetworkSpec) -> Plan:
    """Resolve channel and frequency sizes and group residual blocks."""
    plan = Plan(out_channels=1, out_freq=spec.input_dim)
    channels, freq = 1, spec.input_dim
    n_conv = 0
    collapsed = False
    for li, layer in enumerate(spec.layers):
        if layer.kind == "conv_bn_relu":
            if collapsed:
                raise ShapeError(f"layer {li}: convolution after the frequency axis was pooled away")
            convs = []
            for _ in range(layer.repeat):
                out_f = _out_size(freq, layer.kernel[1], layer.stride[1], layer.padding[1])
                if out_f < 1:
                    raise ShapeError(f"layer {li}: frequency axis of size {freq} vanishes")
                convs.append(ConvLayer(f"conv{n_conv}", channels, layer.filters, layer.kernel,
                                       layer.stride, layer.padding, freq, out_f))
                n_conv += 1
                channels, freq = layer.filters, out_f
            if layer.residual:
                size = layer.block_size
                for b in range(0, len(convs), size):
                    block = convs[b:b + size]
                    first, last = block[0], block[-1]
                    for conv in block:
                        k, s, p = conv.kernel[0], conv.stride[0], conv.padding[0]
                        if s != 1 or k != 2 * p + 1:
                            raise ShapeError(f"{conv.name}: residual layers must preserve the time axis")
                    if (first.in_channels, first.in_freq) != (last.out_channels, last.out_freq):
                        raise ShapeError(
                            f"residual block {first.name}..{last.name}: input (channels={first.in_channels}, "
                            f"freq={first.in_freq}) != output (channels={last.out_channels}, freq={last.out_freq})")
                    plan.steps.append(("block", block))
            else:
                plan.steps.extend(("conv", c) for c in convs)
        elif layer.kind == "maxpool":
            for _ in range(layer.repeat):
                out_f = _out_size(freq, layer.kernel[1], layer.stride[1], layer.padding[1])
                if out_f < 1:
                    raise ShapeError(f"layer {li}: frequency axis of size {freq} vanishes")
                plan.steps.append(("pool", PoolLayer(layer.kernel, layer.stride, layer.padding,
                                                     channels, freq, out_f)))
                freq = out_f
        elif layer.kind == "mean_freq_pool":
            plan.steps.append(("freq_mean", None))
            collapsed = True
        else:
            plan.steps.append(("log_softmax", None))
    if not collapsed:
        raise ShapeError("network never pools the frequency axis")
    plan.out_channels, plan.out_freq = channels, freq
    return plan


# --- weights -------------------------------------------------------------------

class WeightStore:
    """Named float32 tensors."""

    def __init__(self, tensors: dict[str, np.ndarray] | None = None):
        self.tensors: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value) -> None:
        self.tensors[name] = np.asarray(value, dtype=np.float32)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore) or self.tensors.keys() != other.tensors.keys():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.tensors[k], other.tensors[k]) for k in self.tensors)
        )

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.tensors.items()})


def validate_weights(store: WeightStore, spec: NetworkSpec) -> None:
    """Check that every conv layer has all its tensors with the right shapes."""
    for conv in build_plan(spec).conv_layers():
        for name, shape in conv.tensor_shapes().items():
            if name not in store:
                raise MissingTensor(f"weight store has no tensor {name!r}")
            if store[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {store[name].shape}")
        var = store[f"{conv.name}.bn.running_var"]
        if np.any(var < 0) or not np.all(np.isfinite(var)):
            raise ValueError(f"{conv.name}.bn.running_var must be finite and >= 0")
        eps_name = f"{conv.name}.bn.eps"
        if eps_name in store and store[eps_name].size != 1:
            raise ShapeError(f"{eps_name}: expected a single value, got shape {store[eps_name].shape}")


def random_weights(spec: NetworkSpec | None = None, seed: int | None = 0) -> WeightStore:
    """He-initialised weights with plausible batch-norm statistics, for tests and demos."""
    spec = spec or NetworkSpec()
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for conv in build_plan(spec).conv_layers():
        c = conv.out_channels
        fan_in = conv.in_channels * conv.kernel[0] * conv.kernel[1]
        store[f"{conv.name}.weight"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                                   (c, conv.in_channels, *conv.kernel))
        store[f"{conv.name}.bias"] = rng.normal(0.0, 0.05, c)
        store[f"{conv.name}.bn.gamma"] = rng.uniform(0.8, 1.2, c)
        store[f"{conv.name}.bn.beta"] = rng.normal(0.0, 0.1, c)
        store[f"{conv.name}.bn.running_mean"] = rng.normal(0.0, 0.1, c)
        store[f"{conv.name}.bn.running_var"] = rng.uniform(0.5, 1.5, c)
        store[f"{conv.name}.bn.eps"] = np.array([DEFAULT_BN_EPS])
    return store


WEIGHT_MAGIC = b"CPRW1"


def save_weights(store: WeightStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(store)))
        for name in store:
            tensor = np.ascontiguousarray(store[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.tobytes())


def load_weights(path, spec: NetworkSpec | None = None) -> WeightStore:
    """Read a CPRW1 file; if ``spec`` is given the store is validated against it."""
    raw = Path(path).read_bytes()
    if raw[: len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise BadMagic(f"{path}: not a CPRW1 weight file")
    pos = len(WEIGHT_MAGIC)
    if len(raw) < pos + 4:
        raise TruncatedTensor("<header>", "missing tensor count")
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    store = WeightStore()
    for i in range(count):
        label = f"#{i}"

        def need(n: int, what: str):
            if pos + n > len(raw):
                raise TruncatedTensor(label, f"missing {what}")

        need(2, "name length")
        (n_name,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        need(n_name, "name")
        label = raw[pos:pos + n_name].decode("utf-8")
        pos += n_name
        need(1, "rank")
        rank = raw[pos]
        pos += 1
        need(4 * rank, "dimensions")
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        need(4 * size, "payload")
        store[label] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
    if spec is not None:
        validate_weights(store, spec)
    return store


# --- streaming evaluation ---------------------------------------------------------

class _Windowed:
    """Slides a ``k``-column window with stride ``s`` and padding ``p`` along time."""

    def __init__(self, k: int, s: int, p: int, col_shape: tuple[int, int], pad_value: float):
        self.k, self.s, self.p = k, s, p
        self.pad = np.full(col_shape, pad_value)
        self.buf: dict[int, np.ndarray] = {}
        self.n_in = 0
        self.n_out = 0

    def push(self, col: np.ndarray) -> list[np.ndarray]:
        self.buf[self.n_in] = col
        self.n_in += 1
        out = []
        while self.n_out * self.s - self.p + self.k - 1 <= self.n_in - 1:
            out.append(self._emit())
        return out

    def flush(self) -> list[np.ndarray]:
        total = _out_size(self.n_in, self.k, self.s, self.p)
        return [self._emit() for _ in range(self.n_out, total)]

    def _emit(self) -> np.ndarray:
        first = self.n_out * self.s - self.p
        cols = [self.buf.get(j, self.pad) for j in range(first, first + self.k)]
        self.n_out += 1
        for j in range(first, self.n_out * self.s - self.p):
            self.buf.pop(j, None)
        return self.compute(cols)

    def compute(self, cols: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError


def _freq_gather(n_freq: int, k: int, s: int, p: int) -> np.ndarray:
    """Indices into the freq-padded axis, shape ``(F_out, k)``."""
    n_out = _out_size(n_freq, k, s, p)
    return np.arange(n_out)[:, None] * s + np.arange(k)[None, :]


class _ConvStage(_Windowed):
    def __init__(self, conv: ConvLayer, store: WeightStore, relu: bool = True):
        kt, kf = conv.kernel
        super().__init__(kt, conv.stride[0], conv.padding[0], (conv.in_freq, conv.in_channels), 0.0)
        w = store[f"{conv.name}.weight"].astype(np.float64)
        self.kernel = np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, conv.out_channels))
        self.bias = store[f"{conv.name}.bias"].astype(np.float64)
        eps_name = f"{conv.name}.bn.eps"
        eps = float(store[eps_name].reshape(-1)[0]) if eps_name in store else DEFAULT_BN_EPS
        var = store[f"{conv.name}.bn.running_var"].astype(np.float64)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.gamma = store[f"{conv.name}.bn.gamma"].astype(np.float64)
        self.beta = store[f"{conv.name}.bn.beta"].astype(np.float64)
        self.mean = store[f"{conv.name}.bn.running_mean"].astype(np.float64)
        self.pf = conv.padding[1]
        self.gather = _freq_gather(conv.in_freq, kf, conv.stride[1], self.pf)
        self.scratch = np.zeros((kt, conv.in_freq + 2 * self.pf, conv.in_channels))
        self.relu = relu

    def compute(self, cols: list[np.ndarray]) -> np.ndarray:
        f = self.scratch.shape[1] - 2 * self.pf
        for j, col in enumerate(cols):
            self.scratch[j, self.pf:self.pf + f] = col
        # (kt, F_out, kf, C_in) -> (F_out, kt * kf * C_in), matching the kernel layout
        patches = self.scratch[:, self.gather].transpose(1, 0, 2, 3).reshape(len(self.gather), -1)
        z = patches @ self.kernel + self.bias
        z = (z - self.mean) * self.inv_std * self.gamma + self.beta
        return np.maximum(z, 0.0) if self.relu else z


class _PoolStage(_Windowed):
    def __init__(self, pool: PoolLayer):
        super().__init__(pool.kernel[0], pool.stride[0], pool.padding[0], (pool.in_freq, pool.channels), -np.inf)
        self.pf = pool.padding[1]
        self.gather = _freq_gather(pool.in_freq, pool.kernel[1], pool.stride[1], self.pf)
        self.scratch = np.full((pool.kernel[0], pool.in_freq + 2 * self.pf, pool.channels), -np.inf)

    def compute(self, cols: list[np.ndarray]) -> np.ndarray:
        f = self.scratch.shape[1] - 2 * self.pf
        for j, col in enumerate(cols):
            self.scratch[j, self.pf:self.pf + f] = col
        return self.scratch[:, self.gather].max(axis=(0, 2))


class _Chain:
    def __init__(self, stages):
        self.stages = list(stages)

    def push(self, col: np.ndarray) -> list[np.ndarray]:
        cols = [col]
        for stage in self.stages:
            cols = [out for c in cols for out in stage.push(c)]
        return cols

    def flush(self) -> list[np.ndarray]:
        cols: list[np.ndarray] = []
        for stage in self.stages:
            cols = [out for c in cols for out in stage.push(c)] + stage.flush()
        return cols


class _ResidualStage:
    """``relu(inner(x) + x)``; the inner chain keeps time indices aligned."""

    def __init__(self, convs: list[ConvLayer], store: WeightStore):
        stages = [_ConvStage(c, store, relu=(i < len(convs) - 1)) for i, c in enumerate(convs)]
        self.inner = _Chain(stages)
        self.inputs: deque[np.ndarray] = deque()

    def _combine(self, outs: list[np.ndarray]) -> list[np.ndarray]:
        return [np.maximum(z + self.inputs.popleft(), 0.0) for z in outs]

    def push(self, col: np.ndarray) -> list[np.ndarray]:
        self.inputs.append(col)
        return self._combine(self.inner.push(col))

    def flush(self) -> list[np.ndarray]:
        return self._combine(self.inner.flush())


class _MapStage:
    def __init__(self, fn):
        self.fn = fn

    def push(self, col):
        return [self.fn(col)]

    def flush(self):
        return []


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _build_chain(spec: NetworkSpec, store: WeightStore) -> _Chain:
    stages = []
    for kind, payload in build_plan(spec).steps:
        if kind == "conv":
            stages.append(_ConvStage(payload, store))
        elif kind == "block":
            stages.append(_ResidualStage(payload, store))
        elif kind == "pool":
            stages.append(_PoolStage(payload))
        elif kind == "freq_mean":
            stages.append(_MapStage(lambda col: col.mean(axis=0)))
        else:
            stages.append(_MapStage(log_softmax))
    return _Chain(stages)


@dataclass(frozen=True)
class PosteriogramRow:
    index: int
    position: int  # input frame the row is anchored to
    log_probs: np.ndarray
    padded: bool = False


class StreamingInference:
    """Single-owner streaming state: feed feature frames in order, get rows back.

    Row ``m`` is anchored at input frame ``t = spec.row_position(m)`` and is
    returned by the :meth:`push` call that delivers frame ``t + latency_frames``.
    """

    def __init__(self, weights: WeightStore, spec: NetworkSpec | None = None):
        self.spec = spec or NetworkSpec()
        validate_weights(weights, self.spec)
        self._chain = _build_chain(self.spec, weights)
        self.frames_consumed = 0
        self.rows_emitted = 0
        self._pending: deque[np.ndarray] = deque()
        self.finished = False

    @property
    def latency_frames(self) -> int:
        return self.spec.latency_frames

    def push(self, frame) -> PosteriogramRow | None:
        if self.finished:
            raise RuntimeError("stream already flushed")
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.spec.input_dim,):
            raise ShapeError(f"input frame: expected shape ({self.spec.input_dim},), got {frame.shape}")
        self._pending.extend(self._chain.push(frame[:, None]))
        self.frames_consumed += 1
        if not self._pending:
            return None
        position = self.spec.row_position(self.rows_emitted)
        if position + self.latency_frames > self.frames_consumed - 1:
            return None
        return self._row(self._pending.popleft(), padded=False)

    def flush(self) -> list[PosteriogramRow]:
        """End of stream: emit the remaining rows using zero-padded future context."""
        self.finished = True
        rows = [self._row(c, padded=False) for c in self._drain_ready()]
        self._pending.extend(self._chain.flush())
        rows += [self._row(c, padded=True) for c in list(self._pending)]
        self._pending.clear()
        return rows

    def _drain_ready(self) -> list[np.ndarray]:
        ready = []
        while self._pending and (self.spec.row_position(self.rows_emitted + len(ready))
                                 + self.latency_frames <= self.frames_consumed - 1):
            ready.append(self._pending.popleft())
        return ready

    def _row(self, log_probs: np.ndarray, padded: bool) -> PosteriogramRow:
        row = PosteriogramRow(self.rows_emitted, self.spec.row_position(self.rows_emitted), log_probs, padded)
        self.rows_emitted += 1
        return row


def infer(features: FeatureMatrix | np.ndarray, weights: WeightStore, spec: NetworkSpec | None = None,
          vocab: PhonemeVocab | None = None) -> Posteriogram:
    """Run the network over a whole feature matrix (via the streaming pipeline)."""
    spec = spec or NetworkSpec()
    data = features.data if isinstance(features, FeatureMatrix) else np.asarray(features)
    if data.ndim != 2 or data.shape[1] != spec.input_dim:
        raise ShapeError(f"input features: expected (T, {spec.input_dim}), got {data.shape}")
    stream = StreamingInference(weights, spec)
    rows = [r for r in (stream.push(f) for f in data) if r is not None]
    tail = stream.flush()
    rows += tail
    n_padded = sum(r.padded for r in rows)
    out = np.array([r.log_probs for r in rows]).reshape(len(rows), spec.n_classes)
    return Posteriogram(out, spec.output_period_ms, vocab or PhonemeVocab.default(), n_padded=n_padded)
