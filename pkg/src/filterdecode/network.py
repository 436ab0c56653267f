"""Layer specifications, network assembly, forward pass and model files."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import tensor as T
from .errors import (
    BadMagicError,
    LayerKindError,
    ManifestMismatchError,
    ShapeError,
    TruncatedBlobError,
)

CONV, MAXPOOL, RELU, SOFTMAX = "conv", "maxpool", "relu", "softmax"
LAYER_KINDS = (CONV, MAXPOOL, RELU, SOFTMAX)

MODEL_MAGIC = b"CDN1"


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    bank: T.FilterBank | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if (self.kind == CONV) != (self.bank is not None):
            raise ValueError("conv layers carry exactly one filter bank, other kinds none")

    @classmethod
    def conv(cls, weights, biases=None) -> "LayerSpec":
        return cls(CONV, T.FilterBank(weights, biases))


def conv(weights, biases=None) -> LayerSpec:
    return LayerSpec.conv(weights, biases)


def maxpool() -> LayerSpec:
    return LayerSpec(MAXPOOL)


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def softmax() -> LayerSpec:
    return LayerSpec(SOFTMAX)


def _layer_output_shape(spec: LayerSpec, shape: tuple[int, int, int], ordinal: int):
    H, W, C = shape
    if spec.kind == CONV:
        K, h, w, c = spec.bank.weights.shape
        if c != C:
            raise ShapeError(f"layer {ordinal}: filters have {c} channels but input has {C}")
        if h > H or w > W:
            raise ShapeError(f"layer {ordinal}: {h}x{w} filter does not fit {H}x{W} input")
        return (H - h + 1, W - w + 1, K)
    if spec.kind == MAXPOOL:
        if H % 2 or W % 2:
            raise ShapeError(f"layer {ordinal}: max pooling needs even dims, got {H}x{W}")
        return (H // 2, W // 2, C)
    if spec.kind == SOFTMAX and (H, W) != (1, 1):
        raise ShapeError(f"layer {ordinal}: softmax needs 1x1 spatial extent, got {H}x{W}")
    return shape


@dataclass(frozen=True, eq=False)
class Network:
    """An ordered stack of layers applied to inputs of ``input_shape``.

    Layers are addressed by 1-based ordinal, as in ``net.layer(1)``.
    """

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes(self)

    def __len__(self) -> int:
        return len(self.layers)

    def layer(self, ordinal: int) -> LayerSpec:
        if not 1 <= ordinal <= len(self.layers):
            raise IndexError(f"layer ordinal {ordinal} out of range 1..{len(self.layers)}")
        return self.layers[ordinal - 1]

    def conv_ordinals(self) -> list[int]:
        return [i for i, spec in enumerate(self.layers, 1) if spec.kind == CONV]

    def require_conv(self, ordinal: int) -> T.FilterBank:
        spec = self.layer(ordinal)
        if spec.kind != CONV:
            raise LayerKindError(f"layer {ordinal} is not a conv layer (it is {spec.kind})")
        return spec.bank

    def replace_bank(self, ordinal: int, bank: T.FilterBank) -> "Network":
        self.require_conv(ordinal)
        layers = list(self.layers)
        layers[ordinal - 1] = LayerSpec(CONV, bank)
        return Network(self.input_shape, layers)


def shapes(net: Network) -> list[tuple[int, int, int]]:
    """Input shape followed by each layer's output shape."""
    out = [net.input_shape]
    for ordinal, spec in enumerate(net.layers, 1):
        out.append(_layer_output_shape(spec, out[-1], ordinal))
    return out


def lenet_architecture(rng: np.random.Generator | None = None, init_std: float = 0.01) -> Network:
    """The MNIST LeNet: conv-pool-conv-pool-conv-relu-conv-softmax on 28x28x1.

    Weights are zero unless ``rng`` is given, in which case they are drawn from
    N(0, init_std^2). Biases always start at zero.
    """
    dims = [(20, 5, 5, 1), (50, 5, 5, 20), (500, 4, 4, 50), (10, 1, 1, 500)]

    def make(d):
        w = np.zeros(d) if rng is None else init_std * rng.standard_normal(d)
        return conv(w, np.zeros(d[0]))

    c1, c3, c5, c7 = (make(d) for d in dims)
    return Network((28, 28, 1), (c1, maxpool(), c3, maxpool(), c5, relu(), c7, softmax()))


def apply_layer(spec: LayerSpec, x: np.ndarray) -> np.ndarray:
    if spec.kind == CONV:
        return T.correlate_valid(x, spec.bank, stride=1, use_bias=True)
    if spec.kind == MAXPOOL:
        return T.max_pool(x)
    if spec.kind == RELU:
        return T.relu(x)
    return T.softmax(x)


def forward(net: Network, image, capture: Iterable[int] | None = None) -> dict[int, np.ndarray]:
    """Run ``image`` through ``net`` and return the requested layer outputs.

    ``capture`` lists 1-based layer ordinals; None captures every layer.
    """
    x = T.as_tensor3(image)
    if x.shape != net.input_shape:
        raise ShapeError(f"image shape {x.shape} does not match network input {net.input_shape}")
    wanted = set(range(1, len(net) + 1)) if capture is None else set(capture)
    bad = [o for o in wanted if not 1 <= o <= len(net)]
    if bad:
        raise IndexError(f"cannot capture layers {sorted(bad)}; network has {len(net)}")
    last = max(wanted, default=0)
    trace = {}
    for ordinal, spec in enumerate(net.layers[:last], 1):
        x = apply_layer(spec, x)
        if ordinal in wanted:
            trace[ordinal] = x
    return trace


def forward_batch(net: Network, images, layer: int, chunk: int = 250, top_bias: bool = True) -> np.ndarray:
    """Layer-``layer`` outputs for an (N, H, W, C) batch, computed in chunks.

    With ``top_bias=False`` a conv layer at ``layer`` itself is evaluated
    without its bias (layers below keep theirs).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != net.input_shape:
        raise ShapeError(f"batch shape {images.shape} does not match network input {net.input_shape}")
    net.layer(layer)
    out = []
    for start in range(0, len(images), chunk):
        x = images[start:start + chunk]
        for ordinal, spec in enumerate(net.layers[:layer], 1):
            if spec.kind == CONV:
                x = T.correlate_batch(x, spec.bank, use_bias=top_bias or ordinal < layer)
            elif spec.kind == MAXPOOL:
                n, H, W, C = x.shape
                x = x.reshape(n, H // 2, 2, W // 2, 2, C).max(axis=(2, 4))
            elif spec.kind == RELU:
                x = np.maximum(x, 0.0)
            else:
                e = np.exp(x - x.max(axis=-1, keepdims=True))
                x = e / e.sum(axis=-1, keepdims=True)
        out.append(x)
    return np.concatenate(out) if out else np.zeros((0,) + shapes(net)[layer])


# -- model container ------------------------------------------------------
#
# "CDN1\n", then an ASCII manifest terminated by "end\n":
#   input H W C
#   layers N
#   conv K h w C | maxpool | relu | softmax      (one line per layer)
# then, for each conv layer in order, K*h*w*C little-endian float32 weights
# (filter-major, row-major h, w, C inside a filter) followed by K biases.


def _manifest(net: Network) -> str:
    lines = ["input %d %d %d" % net.input_shape, f"layers {len(net)}"]
    for spec in net.layers:
        if spec.kind == CONV:
            lines.append("conv %d %d %d %d" % spec.bank.weights.shape)
        else:
            lines.append(spec.kind)
    lines.append("end")
    return "\n".join(lines) + "\n"


def dump_model(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC + b"\n")
    buf.write(_manifest(net).encode("ascii"))
    for spec in net.layers:
        if spec.kind == CONV:
            buf.write(spec.bank.weights.astype("<f4").tobytes())
            buf.write(spec.bank.biases.astype("<f4").tobytes())
    return buf.getvalue()


def save_model(net: Network, path) -> None:
    data = dump_model(net)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _parse_ints(words: list[str], n: int, line: str) -> list[int]:
    if len(words) != n:
        raise ManifestMismatchError(f"malformed manifest line {line!r}")
    try:
        vals = [int(w) for w in words]
    except ValueError:
        raise ManifestMismatchError(f"malformed manifest line {line!r}") from None
    if any(v < 1 for v in vals):
        raise ManifestMismatchError(f"non-positive dimension in {line!r}")
    return vals


def parse_model(data: bytes) -> Network:
    if not data.startswith(MODEL_MAGIC + b"\n"):
        raise BadMagicError(f"bad magic: expected {MODEL_MAGIC!r}, got {data[:4]!r}")
    end = data.find(b"\nend\n")
    if end < 0:
        raise ManifestMismatchError("manifest has no 'end' line")
    try:
        lines = data[len(MODEL_MAGIC) + 1:end].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise ManifestMismatchError("manifest is not ASCII text") from None
    blob = memoryview(data)[end + len(b"\nend\n"):]

    if len(lines) < 2 or not lines[0].startswith("input ") or not lines[1].startswith("layers "):
        raise ManifestMismatchError("manifest must start with 'input' and 'layers' lines")
    input_shape = tuple(_parse_ints(lines[0].split()[1:], 3, lines[0]))
    words = lines[1].split()
    if len(words) != 2 or not words[1].isdigit():
        raise ManifestMismatchError(f"malformed manifest line {lines[1]!r}")
    n_layers = int(words[1])
    layer_lines = lines[2:]
    if len(layer_lines) != n_layers:
        raise ManifestMismatchError(f"manifest declares {n_layers} layers but lists {len(layer_lines)}")

    layers = []
    offset = 0
    for ordinal, line in enumerate(layer_lines, 1):
        words = line.split()
        if not words:
            raise ManifestMismatchError(f"empty manifest line for layer {ordinal}")
        if words[0] != CONV:
            if words[0] not in LAYER_KINDS or len(words) != 1:
                raise ManifestMismatchError(f"unknown layer line {line!r}")
            layers.append(LayerSpec(words[0]))
            continue
        dims = _parse_ints(words[1:], 4, line)
        n_w = int(np.prod(dims))
        need = 4 * (n_w + dims[0])
        if offset + need > len(blob):
            raise TruncatedBlobError(
                f"truncated blob: layer {ordinal} needs {need} bytes at offset {offset}, "
                f"only {len(blob) - offset} remain"
            )
        w = np.frombuffer(blob, dtype="<f4", count=n_w, offset=offset).reshape(dims)
        b = np.frombuffer(blob, dtype="<f4", count=dims[0], offset=offset + 4 * n_w)
        offset += need
        layers.append(conv(w.astype(np.float64), b.astype(np.float64)))
    if offset != len(blob):
        raise ManifestMismatchError(f"{len(blob) - offset} bytes of weight data beyond the manifest")
    try:
        return Network(input_shape, layers)
    except ShapeError as exc:
        raise ManifestMismatchError(f"manifest describes an invalid network: {exc}") from exc


def load_model(path) -> Network:
    with open(path, "rb") as fh:
        return parse_model(fh.read())
