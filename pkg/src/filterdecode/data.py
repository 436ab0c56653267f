"""MNIST IDX ingestion, input normalization, and PGM/CSV exports."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, ShapeError, TruncatedBlobError
from .tensor import as_tensor3, normalize_range

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedBlobError(f"{path}: IDX header truncated ({len(data)} bytes)")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise BadMagicError(f"{path}: wrong magic {got:#010x}, expected {magic:#010x}")
    if len(data) < 4 + 4 * ndim:
        raise TruncatedBlobError(f"{path}: IDX header truncated ({len(data)} bytes)")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    payload = data[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise TruncatedBlobError(f"{path}: payload has {len(payload)} bytes, header promises {need}")
    return np.frombuffer(payload, dtype=np.uint8, count=need).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    """Raw (count, rows, cols) uint8 images from an IDX3 file."""
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def load_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def dump_idx(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("IDX export supports unsigned byte data only")
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(arr.ndim)
    if magic is None:
        raise ShapeError(f"IDX export expects 1-D labels or 3-D images, got {arr.ndim}-D")
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def write_idx(array, path) -> None:
    Path(path).write_bytes(dump_idx(array))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Normalized images (N, H, W, 1), integer labels, and the training mean."""

    images: np.ndarray
    labels: np.ndarray
    mean_image: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and not np.all((self.labels >= 0) & (self.labels <= 9)):
            raise ValueError("labels must lie in 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.mean_image)


def normalize_dataset(raw_images, labels, mean_image=None) -> LabeledDataset:
    """Scale raw bytes to [0, 1] and subtract the mean image.

    Pass the training split's ``mean_image`` when normalizing the test split.
    """
    raw = np.asarray(raw_images)
    if raw.ndim == 3:
        raw = raw[..., None]
    x = raw.astype(np.float64) / 255.0
    if mean_image is None:
        mean_image = x.mean(axis=0)
    mean_image = np.asarray(mean_image, dtype=np.float64)
    return LabeledDataset(x - mean_image, np.asarray(labels, dtype=np.int64), mean_image)


def denormalize(images, mean_image) -> np.ndarray:
    """Recover raw 0..255 pixel values (unquantized) from normalized images."""
    return (np.asarray(images) + mean_image) * 255.0


def load_mnist_split(mnist_dir, split: str, mean_image=None) -> LabeledDataset:
    image_file, label_file = MNIST_FILES[split]
    images = load_idx_images(Path(mnist_dir) / image_file)
    labels = load_idx_labels(Path(mnist_dir) / label_file)
    if len(images) != len(labels):
        raise CountMismatchError(f"{split}: {len(images)} images but {len(labels)} labels")
    return normalize_dataset(images, labels, mean_image)


def load_mnist(mnist_dir) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and test splits, both normalized with the training mean."""
    train = load_mnist_split(mnist_dir, "train")
    return train, load_mnist_split(mnist_dir, "test", train.mean_image)


def quantize(plane) -> np.ndarray:
    return np.floor(255.0 * normalize_range(plane) + 0.5).astype(np.uint8)


def export_pgm(plane, path) -> None:
    """Write a single-channel plane as a binary 8-bit PGM, range-normalized."""
    plane = as_tensor3(plane)
    if plane.shape[2] != 1:
        raise ShapeError(f"PGM export needs a single-channel plane, got {plane.shape}")
    pixels = quantize(plane[:, :, 0])
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise BadMagicError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def tile_planes(planes, ncols: int | None = None, pad: int = 1) -> np.ndarray:
    """Lay single-channel planes out on a grid, each range-normalized on its own.

    Returns an (H, W, 1) canvas with values in [0, 1]; padding is black.
    """
    planes = [as_tensor3(p)[:, :, 0] for p in planes]
    if not planes:
        raise ValueError("nothing to tile")
    ncols = ncols or int(np.ceil(np.sqrt(len(planes))))
    nrows = -(-len(planes) // ncols)
    th = max(p.shape[0] for p in planes)
    tw = max(p.shape[1] for p in planes)
    canvas = np.zeros((nrows * (th + pad) + pad, ncols * (tw + pad) + pad))
    for i, p in enumerate(planes):
        r, c = divmod(i, ncols)
        y = pad + r * (th + pad)
        x = pad + c * (tw + pad)
        canvas[y:y + p.shape[0], x:x + p.shape[1]] = normalize_range(p)
    return canvas[:, :, None]


def export_gallery(planes, path, ncols: int | None = None) -> None:
    export_pgm(tile_planes(planes, ncols), path)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def export_csv(header, rows, path) -> None:
    """Comma-separated file with a header row; floats get 6 significant digits."""
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def export_matrix_csv(matrix, path, row_labels=None, col_labels=None, corner: str = "") -> None:
    m = np.asarray(matrix)
    row_labels = list(range(m.shape[0])) if row_labels is None else row_labels
    col_labels = list(range(m.shape[1])) if col_labels is None else col_labels
    export_csv([corner] + [str(c) for c in col_labels],
               ([r] + list(m[i]) for i, r in enumerate(row_labels)), path)
