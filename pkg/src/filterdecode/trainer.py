"""Minibatch SGD with momentum for the conv/pool/relu/softmax networks.

The batched kernels here mirror the single-image kernels in ``tensor`` and add
the backward passes needed for training. Loss is softmax cross-entropy summed
over the minibatch, so the learning rate acts per sample. An L2 penalty of
``weight_decay`` per sample (filters only, not biases) keeps the weights from
growing once the training loss is small.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import network as N
from .errors import DivergedError, ShapeError
from .tensor import FilterBank

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 100
    epochs: int = 20
    init_std: float = 0.01
    seed: int = 42
    weight_decay: float = 0.0005

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float | None = None


@dataclass
class TrainResult:
    net: N.Network
    history: list[EpochRecord] = field(default_factory=list)


# -- batched kernels ------------------------------------------------------


def _im2col(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """(N, H, W, C) -> (N, Ho, Wo, h*w*C) with (a, b, c) row-major tap order."""
    win = sliding_window_view(x, (h, w), axis=(1, 2))  # (N, Ho, Wo, C, h, w)
    n, ho, wo, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, ho, wo, h * w * c)


def conv_forward(x: np.ndarray, weights: np.ndarray, biases: np.ndarray):
    K, h, w, C = weights.shape
    cols = _im2col(x, h, w)
    y = cols @ weights.reshape(K, -1).T + biases
    return y, cols


def conv_backward(dy: np.ndarray, cols: np.ndarray, x_shape, weights: np.ndarray, need_dx: bool = True):
    K, h, w, C = weights.shape
    dw = (dy.reshape(-1, K).T @ cols.reshape(-1, h * w * C)).reshape(weights.shape)
    db = dy.sum(axis=(0, 1, 2))
    if not need_dx:
        return None, dw, db
    dcols = (dy @ weights.reshape(K, -1)).reshape(dy.shape[:3] + (h, w, C))
    dx = np.zeros(x_shape)
    ho, wo = dy.shape[1:3]
    for a in range(h):
        for b in range(w):
            dx[:, a:a + ho, b:b + wo, :] += dcols[:, :, :, a, b, :]
    return dx, dw, db


def pool_forward(x: np.ndarray):
    n, H, W, C = x.shape
    win = x.reshape(n, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(n, H // 2, W // 2, C, 4)
    # argmax returns the first maximum in row-major window order
    idx = win.argmax(axis=-1)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx


def pool_backward(dy: np.ndarray, idx: np.ndarray, x_shape):
    n, H, W, C = x_shape
    dwin = np.zeros(dy.shape + (4,))
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return dwin.reshape(n, H // 2, W // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_trainable(net: N.Network) -> None:
    if not net.layers or net.layers[-1].kind != N.SOFTMAX:
        raise ValueError("training needs a network that ends in a softmax layer")
    if N.shapes(net)[-1][:2] != (1, 1):
        raise ShapeError("network output must have 1x1 spatial extent")


def _forward_cached(net: N.Network, params, x: np.ndarray):
    """Forward a batch up to (not including) the final softmax; keep backward caches."""
    caches = []
    pi = 0
    for spec in net.layers[:-1]:
        if spec.kind == N.CONV:
            w, b = params[pi]
            pi += 1
            y, cols = conv_forward(x, w, b)
            caches.append((x.shape, cols, w))
        elif spec.kind == N.MAXPOOL:
            y, idx = pool_forward(x)
            caches.append((x.shape, idx))
        else:
            y = np.maximum(x, 0.0)
            caches.append(x > 0)
        x = y
    return x.reshape(x.shape[0], -1), caches


def _backward(net: N.Network, caches, dlogits: np.ndarray, out_shape):
    grads = []
    d = dlogits.reshape(out_shape)
    for depth, (spec, cache) in enumerate(zip(reversed(net.layers[:-1]), reversed(caches))):
        if spec.kind == N.CONV:
            x_shape, cols, w = cache
            is_first = depth == len(caches) - 1
            d, dw, db = conv_backward(d, cols, x_shape, w, need_dx=not is_first)
            grads.append((dw, db))
        elif spec.kind == N.MAXPOOL:
            x_shape, idx = cache
            d = pool_backward(d, idx, x_shape)
        else:
            d = d * cache
    grads.reverse()
    return grads


def _params(net: N.Network):
    return [(s.bank.weights, s.bank.biases) for s in net.layers if s.kind == N.CONV]


def _with_params(net: N.Network, params) -> N.Network:
    it = iter(params)
    layers = []
    for spec in net.layers:
        if spec.kind == N.CONV:
            w, b = next(it)
            layers.append(N.LayerSpec(N.CONV, FilterBank(w, b)))
        else:
            layers.append(spec)
    return N.Network(net.input_shape, layers)


def loss_and_grads(net: N.Network, images: np.ndarray, labels: np.ndarray, params=None):
    """Summed cross-entropy over a batch and its gradient for every conv layer.

    ``images`` is (N, H, W, C). Returns (loss, grads, probabilities).
    """
    if params is None:
        params = _params(net)
    logits, caches = _forward_cached(net, params, images)
    p = softmax_rows(logits)
    n = len(labels)
    loss = -np.log(np.maximum(p[np.arange(n), labels], 1e-300)).sum()
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    out_shape = (n,) + N.shapes(net)[-2]
    return loss, _backward(net, caches, dlogits, out_shape), p


def predict_proba(net: N.Network, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    params = _params(net)
    out = []
    for start in range(0, len(images), batch_size):
        logits, _ = _forward_cached(net, params, images[start:start + batch_size])
        out.append(softmax_rows(logits))
    return np.concatenate(out) if out else np.zeros((0, N.shapes(net)[-1][2]))


def evaluate_accuracy(net: N.Network, data) -> float:
    """Fraction of samples whose most probable class (ties to the lowest id) is the label."""
    images = np.stack(data.images) if isinstance(data.images, list) else data.images
    if len(images) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    pred = predict_proba(net, images).argmax(axis=1)
    return float(np.mean(pred == np.asarray(data.labels)))


def train(net: N.Network, data, cfg: TrainConfig, test_data=None, log_path=None) -> TrainResult:
    """Train every conv layer of ``net`` on ``data``.

    Weights are kept in float32 between steps; gradients and the momentum
    buffer are float64. Shuffling is driven by ``cfg.seed`` only.
    """
    _check_trainable(net)
    images = np.asarray(data.images, dtype=np.float64)
    labels = np.asarray(data.labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = [(w.astype(np.float32).astype(np.float64), b.astype(np.float32).astype(np.float64))
              for w, b in _params(net)]
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    history = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(images))
        total_loss = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, p = loss_and_grads(net, images[idx], labels[idx], params)
            if not np.isfinite(loss):
                raise DivergedError(epoch)
            total_loss += loss
            correct += int((p.argmax(axis=1) == labels[idx]).sum())
            decay = cfg.weight_decay * len(idx)
            for i, ((w, b), (gw, gb), (vw, vb)) in enumerate(zip(params, grads, velocity)):
                vw *= cfg.momentum
                vw -= cfg.learning_rate * (gw + decay * w)
                vb *= cfg.momentum
                vb -= cfg.learning_rate * gb
                params[i] = ((w + vw).astype(np.float32).astype(np.float64),
                             (b + vb).astype(np.float32).astype(np.float64))
        if not all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in params):
            raise DivergedError(epoch)
        record = EpochRecord(epoch, total_loss / len(images), correct / len(images))
        if test_data is not None:
            record.test_accuracy = evaluate_accuracy(_with_params(net, params), test_data)
        history.append(record)
        log.info("epoch %d: loss %.5f train acc %.4f test acc %s", epoch, record.loss,
                 record.train_accuracy, record.test_accuracy)
        if log_path is not None:
            write_history(history, log_path)

    return TrainResult(_with_params(net, params), history)


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["epoch", "loss", "train_accuracy", "test_accuracy"])
        for r in history:
            test = "" if r.test_accuracy is None else f"{r.test_accuracy:.6g}"
            out.writerow([r.epoch, f"{r.loss:.6g}", f"{r.train_accuracy:.6g}", test])


def gradient_check(net: N.Network, image, label: int, step: float = 1e-4) -> float:
    """Largest relative error between backprop and central finite differences.

    Every weight and bias of every conv layer is perturbed. Relative error is
    ``|g - fd| / max(|g| + |fd|, 1e-8)``.
    """
    _check_trainable(net)
    x = np.asarray(image, dtype=np.float64)[None]
    y = np.array([label])
    params = [(w.copy(), b.copy()) for w, b in _params(net)]
    _, grads, _ = loss_and_grads(net, x, y, params)
    worst = 0.0
    for (w, b), (gw, gb) in zip(params, grads):
        for arr, g in ((w, gw), (b, gb)):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                plus = loss_and_grads(net, x, y, params)[0]
                flat[i] = orig - step
                minus = loss_and_grads(net, x, y, params)[0]
                flat[i] = orig
                fd = (plus - minus) / (2 * step)
                err = abs(gflat[i] - fd) / max(abs(gflat[i]) + abs(fd), 1e-8)
                worst = max(worst, err)
    return worst
