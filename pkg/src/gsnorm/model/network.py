"""Two-branch CNN/LSTM classifier with optional growing-days input.

Recurrent branch: conv1d (same padding, ReLU) -> stacked LSTM layers where
layer j >= 2 reads the concatenated outputs of layers 1..j-1; each LSTM is
followed by batch normalization and dropout. Convolutional branch: two 3x3
same-padded conv layers (ReLU, batch norm) -> 2x2 max pool. Flattened branch
outputs, plus delta/365 when enabled, feed a ReLU dense layer and a 3-way
softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import BinaryIO

import numpy as np

from gsnorm._binio import FormatError, Reader, Writer
from gsnorm.cube import atomic_write
from gsnorm.features import DELTA_SCALE, SampleBatch
from gsnorm.model import layers as L
from gsnorm.rng import stream

N_CLASSES = 3
CNN_BRANCH, LSTM_BRANCH = 1, 2
WEIGHTS_MAGIC = b"GSNW"

MODEL_KINDS = {
    "cnnlstm-delta": (CNN_BRANCH | LSTM_BRANCH, True),
    "cnnlstm": (CNN_BRANCH | LSTM_BRANCH, False),
    "cnn": (CNN_BRANCH, False),
    "lstm": (LSTM_BRANCH, False),
}


@dataclass(frozen=True)
class Architecture:
    branches: int = CNN_BRANCH | LSTM_BRANCH
    delta: bool = True
    M: int = 10
    D: int = 3
    k: int = 5
    conv1d_filters: int = 8
    lstm_units: int = 16
    lstm_layers: int = 4
    conv_filters: int = 64
    dense_units: int = 64

    def __post_init__(self):
        if self.branches not in (1, 2, 3):
            raise ValueError(f"branch mask must be 1 (cnn), 2 (lstm) or 3 (both), got {self.branches}")
        if min(self.M, self.D, self.k, self.conv1d_filters, self.lstm_units, self.lstm_layers, self.conv_filters, self.dense_units) < 1:
            raise ValueError("architecture sizes must be positive")
        if self.D == 1 and self.branches != CNN_BRANCH:
            raise ValueError("single-date (early-season) inputs support the CNN branch only")
        # widths of an absent branch carry no tensors; pin them so equality ignores them
        defaults = {f.name: f.default for f in fields(self)}
        unused = () if self.lstm else ("conv1d_filters", "lstm_units", "lstm_layers")
        unused += () if self.cnn else ("conv_filters",)
        for name in unused:
            object.__setattr__(self, name, defaults[name])

    @classmethod
    def for_kind(cls, kind: str, D: int = 3, **widths) -> "Architecture":
        try:
            branches, delta = MODEL_KINDS[kind]
        except KeyError:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}") from None
        return cls(branches=branches, delta=delta, D=D, **widths)

    @property
    def cnn(self) -> bool:
        return bool(self.branches & CNN_BRANCH)

    @property
    def lstm(self) -> bool:
        return bool(self.branches & LSTM_BRANCH)

    @property
    def kind(self) -> str:
        for name, (b, d) in MODEL_KINDS.items():
            if b == self.branches and d == self.delta:
                return name
        return f"branches={self.branches},delta={self.delta}"

    @property
    def season(self) -> str:
        return {1: "early", 2: "mid", 3: "late"}.get(self.D, f"D={self.D}")

    def cnn_flat(self) -> int:
        return (self.k // 2) * (self.k // 2) * self.conv_filters if self.cnn else 0

    def lstm_flat(self) -> int:
        return self.D * self.lstm_units if self.lstm else 0

    def fusion_inputs(self) -> int:
        return self.cnn_flat() + self.lstm_flat() + int(self.delta)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Every tensor name and shape, in serialization order."""
        s: dict[str, tuple[int, ...]] = {"input.mean": (self.M,), "input.std": (self.M,)}
        if self.lstm:
            H = self.lstm_units
            s["rec.conv.kernel"] = (self.conv1d_filters, self.M, 3)
            s["rec.conv.bias"] = (self.conv1d_filters,)
            for j in range(1, self.lstm_layers + 1):
                fan = self.conv1d_filters if j == 1 else H * (j - 1)
                s[f"rec.lstm{j}.kernel"] = (fan, 4 * H)
                s[f"rec.lstm{j}.recurrent"] = (H, 4 * H)
                s[f"rec.lstm{j}.bias"] = (4 * H,)
                for stat in ("gamma", "beta", "mean", "var"):
                    s[f"rec.bn{j}.{stat}"] = (H,)
        if self.cnn:
            F = self.conv_filters
            s["cnn.conv1.kernel"] = (3, 3, self.M * self.D, F)
            s["cnn.conv1.bias"] = (F,)
            for stat in ("gamma", "beta", "mean", "var"):
                s[f"cnn.bn1.{stat}"] = (F,)
            s["cnn.conv2.kernel"] = (3, 3, F, F)
            s["cnn.conv2.bias"] = (F,)
            for stat in ("gamma", "beta", "mean", "var"):
                s[f"cnn.bn2.{stat}"] = (F,)
        s["fuse.dense.kernel"] = (self.fusion_inputs(), self.dense_units)
        s["fuse.dense.bias"] = (self.dense_units,)
        s["out.dense.kernel"] = (self.dense_units, N_CLASSES)
        s["out.dense.bias"] = (N_CLASSES,)
        return s


def is_trainable(name: str) -> bool:
    return not (name.startswith("input.") or name.endswith(".mean") or name.endswith(".var"))


@dataclass(eq=False)
class ModelParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.arch.shapes()
        if list(self.tensors) != list(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            if missing or extra:
                raise ValueError(f"parameter names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
            self.tensors = {k: self.tensors[k] for k in expected}
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    @property
    def dtype(self):
        return self.tensors["out.dense.kernel"].dtype

    def trainable(self) -> list[str]:
        return [k for k in self.tensors if is_trainable(k)]

    def count(self, trainable_only: bool = False) -> int:
        return sum(v.size for k, v in self.tensors.items() if not trainable_only or is_trainable(k))

    def copy(self, dtype=None) -> "ModelParams":
        return ModelParams(self.arch, {k: v.astype(dtype or v.dtype, copy=True) for k, v in self.tensors.items()})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.arch == other.arch and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith("rec.conv.kernel"):
        return shape[1] * shape[2]
    if ".conv" in name:
        return shape[0] * shape[1] * shape[2]
    return shape[0]


def init_params(arch: Architecture, seed: int, dtype=np.float32) -> ModelParams:
    """Uniform(+-sqrt(3 / fan_in)) weights, zero biases, LSTM forget-gate bias 1.

    Batch-norm scales start at 1 with running variance 1; input standardization
    is the identity until fitted on training data.
    """
    rng = stream(seed, "init")
    tensors = {}
    for name, shape in arch.shapes().items():
        kind = name.rsplit(".", 1)[1]
        if kind in ("kernel", "recurrent"):
            limit = np.sqrt(3.0 / _fan_in(name, shape))
            t = rng.uniform(-limit, limit, size=shape)
        elif kind in ("gamma", "var", "std"):
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        if name.startswith("rec.lstm") and kind == "bias":
            H = shape[0] // 4
            t[H : 2 * H] = 1.0
        tensors[name] = t.astype(dtype)
    return ModelParams(arch, tensors)


def _inputs(params: ModelParams, batch: SampleBatch):
    arch, P, dt = params.arch, params.tensors, params.dtype
    N = len(batch)
    if batch.x_lstm.shape[1:] != (arch.M, arch.D):
        raise ValueError(f"x_lstm shape {batch.x_lstm.shape[1:]} does not match model (M={arch.M}, D={arch.D})")
    if batch.x_cnn.shape[1:] != (arch.k, arch.k, arch.M * arch.D):
        raise ValueError(f"x_cnn shape {batch.x_cnn.shape[1:]} does not match model")
    mean, std = P["input.mean"], P["input.std"]
    x_lstm = ((batch.x_lstm.astype(dt) - mean[None, :, None]) / std[None, :, None])
    x_cnn = (batch.x_cnn.astype(dt) - np.tile(mean, arch.D)) / np.tile(std, arch.D)
    delta = None
    if arch.delta:
        delta = batch.delta.astype(dt).reshape(N, 1) / dt.type(DELTA_SCALE)
        if not np.isfinite(delta).all():
            raise ValueError("model expects delta but samples carry none")
    if not (np.isfinite(x_lstm).all() and np.isfinite(x_cnn).all()):
        raise ValueError("NaN in model inputs")
    return x_lstm, x_cnn, delta


def forward(
    params: ModelParams,
    batch: SampleBatch,
    training: bool = False,
    rng: np.random.Generator | None = None,
    masks: dict | None = None,
    dropout: float = 0.3,
):
    """Return ``(probs, cache)``.

    In training mode batch-norm uses batch statistics (reported in
    ``cache["bn_stats"]``) and dropout masks come from ``masks`` when given,
    otherwise from ``rng``. The masks used are stored in ``cache["masks"]``.
    """
    arch, P = params.arch, params.tensors
    x_lstm, x_cnn, delta = _inputs(params, batch)
    N = len(batch)
    cache: dict = {"training": training, "bn_stats": {}, "masks": {}}
    feats = []
    if training and dropout > 0 and masks is None and rng is None:
        raise ValueError("training forward pass needs a dropout noise source")

    if arch.cnn:
        h = x_cnn
        for j in (1, 2):
            h, cache[f"conv{j}"] = L.conv2d_forward(h, P[f"cnn.conv{j}.kernel"], P[f"cnn.conv{j}.bias"])
            h, cache[f"conv{j}.relu"] = L.relu_forward(h)
            bn = f"cnn.bn{j}"
            h, cache[bn], cache["bn_stats"][bn] = L.batchnorm_forward(
                h, P[bn + ".gamma"], P[bn + ".beta"], P[bn + ".mean"], P[bn + ".var"], training
            )
        h, cache["pool"] = L.maxpool_forward(h)
        cache["pool.shape"] = h.shape
        feats.append(h.reshape(N, -1))

    if arch.lstm:
        h, cache["rec.conv"] = L.conv1d_forward(x_lstm.transpose(0, 2, 1), P["rec.conv.kernel"], P["rec.conv.bias"])
        h, cache["rec.conv.relu"] = L.relu_forward(h)
        outs = []
        for j in range(1, arch.lstm_layers + 1):
            inp = h if j == 1 else np.concatenate(outs, axis=-1)
            hs, cache[f"lstm{j}"] = L.lstm_forward(inp, P[f"rec.lstm{j}.kernel"], P[f"rec.lstm{j}.recurrent"], P[f"rec.lstm{j}.bias"])
            bn = f"rec.bn{j}"
            hs, cache[bn], cache["bn_stats"][bn] = L.batchnorm_forward(
                hs, P[bn + ".gamma"], P[bn + ".beta"], P[bn + ".mean"], P[bn + ".var"], training
            )
            if training and dropout > 0:
                mask = masks[bn] if masks is not None else L.dropout_mask(rng, hs.shape, dropout, hs.dtype)
                cache["masks"][bn] = mask
                hs = hs * mask
            outs.append(hs)
        feats.append(outs[-1].reshape(N, -1))

    if arch.delta:
        feats.append(delta)
    z = np.concatenate(feats, axis=1)
    a, cache["fuse"] = L.dense_forward(z, P["fuse.dense.kernel"], P["fuse.dense.bias"])
    a, cache["fuse.relu"] = L.relu_forward(a)
    logits, cache["out"] = L.dense_forward(a, P["out.dense.kernel"], P["out.dense.bias"])
    cache["logits"] = logits
    return L.softmax(logits), cache


def backward(params: ModelParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every trainable tensor given d(loss)/d(logits)."""
    arch, P = params.arch, params.tensors
    g: dict[str, np.ndarray] = {}
    da, g["out.dense.kernel"], g["out.dense.bias"] = L.dense_backward(dlogits, cache["out"], P["out.dense.kernel"])
    da = L.relu_backward(da, cache["fuse.relu"])
    dz, g["fuse.dense.kernel"], g["fuse.dense.bias"] = L.dense_backward(da, cache["fuse"], P["fuse.dense.kernel"])

    pos = 0
    if arch.cnn:
        n = arch.cnn_flat()
        dh = dz[:, pos : pos + n].reshape(cache["pool.shape"])
        pos += n
        dh = L.maxpool_backward(dh, cache["pool"])
        for j in (2, 1):
            bn = f"cnn.bn{j}"
            dh, g[bn + ".gamma"], g[bn + ".beta"] = L.batchnorm_backward(dh, cache[bn])
            dh = L.relu_backward(dh, cache[f"conv{j}.relu"])
            dh, g[f"cnn.conv{j}.kernel"], g[f"cnn.conv{j}.bias"] = L.conv2d_backward(dh, cache[f"conv{j}"])

    if arch.lstm:
        n = arch.lstm_flat()
        H = arch.lstm_units
        N = dz.shape[0]
        douts = [np.zeros((N, arch.D, H), dtype=dz.dtype) for _ in range(arch.lstm_layers)]
        douts[-1] += dz[:, pos : pos + n].reshape(N, arch.D, H)
        pos += n
        dconv = None
        for j in range(arch.lstm_layers, 0, -1):
            bn = f"rec.bn{j}"
            d = douts[j - 1]
            if bn in cache["masks"]:
                d = d * cache["masks"][bn]
            d, g[bn + ".gamma"], g[bn + ".beta"] = L.batchnorm_backward(d, cache[bn])
            dinp, g[f"rec.lstm{j}.kernel"], g[f"rec.lstm{j}.recurrent"], g[f"rec.lstm{j}.bias"] = L.lstm_backward(
                d, cache[f"lstm{j}"]
            )
            if j == 1:
                dconv = dinp
            else:
                for i in range(j - 1):
                    douts[i] += dinp[:, :, i * H : (i + 1) * H]
        dconv = L.relu_backward(dconv, cache["rec.conv.relu"])
        _, g["rec.conv.kernel"], g["rec.conv.bias"] = L.conv1d_backward(dconv, cache["rec.conv"])

    return {k: g[k] for k in params.tensors if k in g}


def loss_and_gradients(
    params: ModelParams,
    batch: SampleBatch,
    training: bool = True,
    rng: np.random.Generator | None = None,
    masks: dict | None = None,
    dropout: float = 0.3,
):
    """Mean cross-entropy and its gradient for each trainable tensor.

    Returns ``(loss, grads, cache)``; ``cache`` carries the dropout masks and
    batch statistics of this pass.
    """
    probs, cache = forward(params, batch, training=training, rng=rng, masks=masks, dropout=dropout)
    labels = batch.labels.astype(np.int64)
    if labels.max(initial=0) >= N_CLASSES:
        raise ValueError("sample labels must be 0, 1 or 2")
    loss = L.cross_entropy(cache["logits"], labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1
    dlogits /= len(labels)
    return loss, backward(params, cache, dlogits), cache


def predict_proba(params: ModelParams, batch: SampleBatch, batch_size: int = 1024) -> np.ndarray:
    """Inference-mode class probabilities in fixed-size chunks."""
    out = np.empty((len(batch), N_CLASSES), dtype=params.dtype)
    for s in range(0, len(batch), batch_size):
        out[s : s + batch_size], _ = forward(params, batch.subset(slice(s, s + batch_size)), training=False)
    return out


# --- GSNW weights file --------------------------------------------------------


def write_weights(params: ModelParams, sink: BinaryIO) -> int:
    a = params.arch
    w = Writer(sink)
    w.raw(WEIGHTS_MAGIC)
    w.pack("HBBBBBB", 1, a.D, a.branches, int(a.delta), a.M, a.D, a.k)
    w.pack("I", len(params.tensors))
    for name, t in params.tensors.items():
        w.string(name)
        w.pack("B", t.ndim)
        w.pack(f"{t.ndim}I", *t.shape)
        w.array(t, "f4")
    return w.count


def read_weights(source: BinaryIO) -> ModelParams:
    r = Reader(source)
    r.header(WEIGHTS_MAGIC)
    season, branches, delta, M, D, k = r.unpack("BBBBBB", "architecture descriptor")
    if season != D:
        raise FormatError(f"season mode {season} inconsistent with D={D}")
    n = r.one("I", "record count")
    tensors = {}
    for _ in range(n):
        name = r.string("tensor name")
        rank = r.one("B", "tensor rank")
        dims = r.unpack(f"{rank}I", "tensor dims")
        tensors[name] = r.array(int(np.prod(dims)), "f4", f"tensor {name}").reshape(dims)
    r.expect_eof("weights")
    widths = {}
    if branches & LSTM_BRANCH:
        widths["conv1d_filters"] = tensors["rec.conv.kernel"].shape[0]
        widths["lstm_units"] = tensors["rec.lstm1.recurrent"].shape[0]
        widths["lstm_layers"] = sum(1 for t in tensors if t.startswith("rec.lstm") and t.endswith(".kernel"))
    if branches & CNN_BRANCH:
        widths["conv_filters"] = tensors["cnn.conv1.kernel"].shape[3]
    widths["dense_units"] = tensors["fuse.dense.kernel"].shape[1]
    arch = Architecture(branches=branches, delta=bool(delta), M=M, D=D, k=k, **widths)
    try:
        return ModelParams(arch, tensors)
    except ValueError as exc:
        raise FormatError(f"weights inconsistent with architecture: {exc}") from None


def save_weights(params: ModelParams, path) -> int:
    return atomic_write(path, write_weights, params)


def load_weights(path) -> ModelParams:
    with open(path, "rb") as fh:
        return read_weights(fh)
