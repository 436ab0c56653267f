"""Filter decoding: project a conv filter from any layer back into image space.

Starting from filter k of conv layer L, walk down the network. A conv layer
replaces every pixel of the current map by its own filters (scaled by the
pixel value, overlapping copies added), a max-pool layer is undone by plain
2x interpolation, and ReLU passes the map through. The result is a plane with
the network's input channels; correlating an image with it at the cumulative
pooling stride estimates the layer-L response to that filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import network as N
from .errors import BadMagicError, ManifestMismatchError, TruncatedBlobError
from .tensor import INTERP_METHODS, FilterBank, substitute_bank, upsample_stack

DECODED_MAGIC = b"CDF1"


@dataclass(frozen=True, eq=False)
class DecodedFilter:
    layer: int
    index: int
    plane: np.ndarray  # (H, W, C) with C the network's input channels
    interp: str
    cumulative_stride: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.plane.shape


def cumulative_stride(net: N.Network, layer: int) -> int:
    """Product of the pooling strides in the layers strictly below ``layer``."""
    net.layer(layer)
    pools = sum(1 for spec in net.layers[:layer - 1] if spec.kind == N.MAXPOOL)
    return 2 ** pools


def decoded_shape(net: N.Network, layer: int) -> tuple[int, int, int]:
    """Spatial size a decoded filter of ``layer`` will have, without decoding it."""
    _, h, w, _ = net.require_conv(layer).weights.shape
    for spec in reversed(net.layers[:layer - 1]):
        if spec.kind == N.CONV:
            _, fh, fw, _ = spec.bank.weights.shape
            h, w = h + fh - 1, w + fw - 1
        elif spec.kind == N.MAXPOOL:
            h, w = 2 * h, 2 * w
    return (h, w, net.input_shape[2])


def _decode_stack(net: N.Network, layer: int, indices: np.ndarray, interp: str) -> np.ndarray:
    """Decode several filters of one layer at once; returns (len(indices), H, W, C)."""
    if interp not in INTERP_METHODS:
        raise ValueError(f"unknown interpolation method {interp!r}")
    bank = net.require_conv(layer)
    if len(indices) and (indices.min() < 0 or indices.max() >= len(bank)):
        raise IndexError(f"filter index out of range 0..{len(bank) - 1} for layer {layer}")
    d = bank.weights[indices].copy()
    for spec in reversed(net.layers[:layer - 1]):
        if spec.kind == N.CONV:
            d = substitute_bank(d, spec.bank.weights)
        elif spec.kind == N.MAXPOOL:
            d = upsample_stack(d, interp)
        elif spec.kind != N.RELU:
            raise ValueError(f"cannot decode through a {spec.kind} layer")
    return d


def decode_filter(net: N.Network, layer: int, k: int, interp: str = "bicubic") -> DecodedFilter:
    plane = _decode_stack(net, layer, np.array([k]), interp)[0]
    return DecodedFilter(layer, k, plane, interp, cumulative_stride(net, layer))


def decode_all(net: N.Network, layer: int, interp: str = "bicubic") -> list[DecodedFilter]:
    n = len(net.require_conv(layer))
    stride = cumulative_stride(net, layer)
    planes = _decode_stack(net, layer, np.arange(n), interp)
    return [DecodedFilter(layer, k, planes[k], interp, stride) for k in range(n)]


def as_bank(decoded: Sequence[DecodedFilter]) -> FilterBank:
    """Stack decoded filters into a bias-free bank for image-space correlation."""
    return FilterBank(np.stack([d.plane for d in decoded]), np.zeros(len(decoded)))


def threshold_view(decoded, tau: float = 0.5) -> np.ndarray:
    """Ternary map: +1 above tau*max|v|, -1 below -tau*max|v|, 0 elsewhere."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    plane = decoded.plane if isinstance(decoded, DecodedFilter) else np.asarray(decoded, dtype=np.float64)
    cut = tau * np.abs(plane).max()
    out = np.zeros_like(plane)
    out[plane > cut] = 1.0
    out[plane < -cut] = -1.0
    return out


# -- decoded filter blob --------------------------------------------------
#
# "CDF1\n", an ASCII manifest, "end\n", then H*W*C little-endian float32
# samples in row-major (H, W, C) order.


def dump_decoded(d: DecodedFilter) -> bytes:
    h, w, c = d.plane.shape
    manifest = (f"layer {d.layer}\nindex {d.index}\ndims {h} {w} {c}\n"
                f"interp {d.interp}\nstride {d.cumulative_stride}\nend\n")
    return DECODED_MAGIC + b"\n" + manifest.encode("ascii") + d.plane.astype("<f4").tobytes()


def parse_decoded(data: bytes) -> DecodedFilter:
    if not data.startswith(DECODED_MAGIC + b"\n"):
        raise BadMagicError(f"bad magic: expected {DECODED_MAGIC!r}, got {data[:4]!r}")
    end = data.find(b"\nend\n")
    if end < 0:
        raise ManifestMismatchError("manifest has no 'end' line")
    fields = {}
    for line in data[len(DECODED_MAGIC) + 1:end].decode("ascii", errors="replace").split("\n"):
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        layer = int(fields["layer"])
        index = int(fields["index"])
        dims = tuple(int(v) for v in fields["dims"].split())
        interp = fields["interp"]
        stride = int(fields["stride"])
    except (KeyError, ValueError):
        raise ManifestMismatchError(f"incomplete decoded-filter manifest: {sorted(fields)}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise ManifestMismatchError(f"bad dims {dims}")
    blob = data[end + len(b"\nend\n"):]
    need = 4 * int(np.prod(dims))
    if len(blob) < need:
        raise TruncatedBlobError(f"truncated blob: need {need} bytes, have {len(blob)}")
    if len(blob) > need:
        raise ManifestMismatchError(f"{len(blob) - need} bytes beyond the declared dims")
    plane = np.frombuffer(blob, dtype="<f4").reshape(dims).astype(np.float64)
    return DecodedFilter(layer, index, plane, interp, stride)


def save_decoded(d: DecodedFilter, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_decoded(d))


def load_decoded(path) -> DecodedFilter:
    with open(path, "rb") as fh:
        return parse_decoded(fh.read())
