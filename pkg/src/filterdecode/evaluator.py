"""How well does correlating with decoded filters reproduce the network?

Three measurements:

* ``reconstruction_error`` - mean squared difference between the network's
  layer response and the image correlated with that layer's decoded bank,
  each stack range-normalized per image.
* ``activation_matrix`` - the top layer's decoded filters used as one-shot
  classifiers: max activation per (filter, true class).
* ``compare_responses`` - the two response stacks side by side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import decoder as D
from . import network as N
from .errors import ConsistencyError, ShapeError
from .tensor import correlate_batch, correlate_valid, normalize_range


def _decoded_bank(net, layer, interp, decoded=None):
    if decoded is None:
        decoded = D.decode_all(net, layer, interp)
    return D.as_bank(decoded), D.cumulative_stride(net, layer)


def _check_dims(net, layer, got):
    want = N.shapes(net)[layer]
    if tuple(got) != tuple(want):
        raise ConsistencyError(f"reconstructed response {tuple(got)} does not match layer {layer} output {want}")


def reconstruct_response(net: N.Network, image, layer: int, interp: str = "bicubic",
                         decoded: Sequence[D.DecodedFilter] | None = None) -> np.ndarray:
    """The image correlated with every decoded filter of ``layer`` at its cumulative stride."""
    bank, stride = _decoded_bank(net, layer, interp, decoded)
    out = correlate_valid(image, bank, stride=stride, use_bias=False)
    _check_dims(net, layer, out.shape)
    return out


def reconstruct_batch(net: N.Network, images, layer: int, interp: str = "bicubic",
                      decoded: Sequence[D.DecodedFilter] | None = None, chunk: int = 250) -> np.ndarray:
    bank, stride = _decoded_bank(net, layer, interp, decoded)
    images = np.asarray(images, dtype=np.float64)
    parts = [correlate_batch(images[s:s + chunk], bank, stride=stride, use_bias=False)
             for s in range(0, len(images), chunk)]
    out = np.concatenate(parts)
    _check_dims(net, layer, out.shape[1:])
    return out


def network_response(net: N.Network, images, layer: int) -> np.ndarray:
    """What the filters of conv layer ``layer`` compute on a batch, before their bias.

    Decoded filters carry no bias, so the comparison target is the layer's
    correlation output; biases of the layers below stay in.
    """
    net.require_conv(layer)
    return N.forward_batch(net, images, layer, top_bias=False)


def _normalize_each(stacks: np.ndarray) -> np.ndarray:
    """Range-normalize each (H, W, C) stack of a batch jointly over its samples."""
    flat = stacks.reshape(len(stacks), -1)
    lo = flat.min(axis=1, keepdims=True)
    span = flat.max(axis=1, keepdims=True) - lo
    out = np.divide(flat - lo, span, out=np.zeros_like(flat), where=span > 0)
    return out.reshape(stacks.shape)


def per_image_errors(net: N.Network, images, layer: int, interp: str = "bicubic",
                     decoded: Sequence[D.DecodedFilter] | None = None) -> np.ndarray:
    """Squared error between normalized forward and reconstructed stacks, one value per image."""
    net.require_conv(layer)
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("cannot compute reconstruction error on an empty sample")
    fwd = _normalize_each(network_response(net, images, layer))
    rec = _normalize_each(reconstruct_batch(net, images, layer, interp, decoded))
    return ((fwd - rec) ** 2).reshape(len(images), -1).mean(axis=1)


@dataclass(frozen=True)
class ErrorEntry:
    layer: int
    interp: str
    mean: float
    std: float
    count: int

    def row(self):
        return [f"L{self.layer}", self.interp, self.mean, self.std, self.count]


ERROR_HEADER = ["layer", "interp", "mean", "std", "count"]


def reconstruction_error(net: N.Network, images, layer: int, interp: str = "bicubic",
                         sample_count: int | None = None) -> ErrorEntry:
    """Mean and (population) std of per-image errors over the first ``sample_count`` images.

    ``images`` may be an (N, H, W, C) array or anything with an ``images`` attribute.
    """
    images = np.asarray(getattr(images, "images", images))
    if sample_count is not None:
        if sample_count < 1:
            raise ValueError("sample_count must be positive")
        images = images[:sample_count]
    errs = per_image_errors(net, images, layer, interp)
    return ErrorEntry(layer, interp, float(errs.mean()), float(errs.std()), len(errs))


def error_report(net: N.Network, images, layers: Iterable[int],
                 methods: Iterable[str] = ("bicubic", "nearest", "bilinear")) -> list[ErrorEntry]:
    layers = list(layers)
    methods = list(methods)
    return [reconstruction_error(net, images, L, m) for L in layers for m in methods]


def sample_indices(total: int, count: int, seed: int) -> np.ndarray:
    """``count`` distinct indices from ``range(total)`` in ascending order, chosen by ``seed``."""
    if count < 1:
        raise ValueError("sample count must be positive")
    if count >= total:
        return np.arange(total)
    return np.sort(np.random.default_rng(seed).choice(total, size=count, replace=False))


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    """``values[k, c]``: max over images of class c of the activation of decoded filter k.

    ``argmax[k, c]`` is the index of that image. Classes absent from the input
    leave NaN in ``values`` and -1 in ``argmax``.
    """

    values: np.ndarray
    argmax: np.ndarray

    def row_winners(self) -> np.ndarray:
        """Column holding each row's maximum (NaN cells ignored)."""
        return np.nanargmax(np.where(np.isnan(self.values), -np.inf, self.values), axis=1)

    def diagonal_hits(self) -> int:
        return int(np.sum(self.row_winners() == np.arange(len(self.values))))

    def row_argmax_images(self) -> np.ndarray:
        """Index of the image holding each row's overall maximum."""
        return self.argmax[np.arange(len(self.values)), self.row_winners()]


def image_activations(net: N.Network, images, layer: int | None = None,
                      interp: str = "bicubic") -> np.ndarray:
    """Scalar activation of every decoded top-layer filter for each image, (N, K)."""
    layer = net.conv_ordinals()[-1] if layer is None else layer
    resp = reconstruct_batch(net, images, layer, interp)
    if resp.shape[1:3] != (1, 1):
        raise ShapeError(f"layer {layer} responses are {resp.shape[1:3]}, not scalars")
    return resp[:, 0, 0, :]


def activation_matrix(net: N.Network, images, labels, interp: str = "bicubic",
                      layer: int | None = None, n_classes: int = 10) -> ActivationMatrix:
    acts = image_activations(net, images, layer, interp)
    labels = np.asarray(labels)
    n_filters = acts.shape[1]
    values = np.full((n_filters, n_classes), np.nan)
    argmax = np.full((n_filters, n_classes), -1, dtype=np.int64)
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            continue
        best = acts[members].argmax(axis=0)
        values[:, c] = acts[members[best], np.arange(n_filters)]
        argmax[:, c] = members[best]
    return ActivationMatrix(values, argmax)


def compare_responses(net: N.Network, image, layers: Iterable[int],
                      interp: str = "bicubic") -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per layer: (network response before bias, decoded-filter response), both range-normalized."""
    layers = list(layers)
    for L in layers:
        net.require_conv(L)
    image = np.asarray(image, dtype=np.float64)[None]
    return {L: (normalize_range(network_response(net, image, L)[0]),
                normalize_range(reconstruct_batch(net, image, L, interp)[0]))
            for L in layers}
