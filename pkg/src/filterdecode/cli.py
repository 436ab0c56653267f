"""Command-line entry point: ``filterdecode <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 validation failure,
5 round-trip failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as io
from . import decoder as D
from . import evaluator as E
from . import network as N
from . import synthetic as S
from . import trainer as Tr
from .errors import FilterDecodeError, FormatError
from .tensor import INTERP_METHODS

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_ROUNDTRIP = 0, 2, 3, 4, 5

TABLE_METHODS = ("bicubic", "nearest", "bilinear")

log = logging.getLogger("filterdecode")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> list[str]:
    if text == "all":
        return list(TABLE_METHODS)
    methods = [t.strip() for t in text.split(",") if t.strip()]
    bad = [m for m in methods if m not in INTERP_METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown interpolation {bad or text!r}; choose from {INTERP_METHODS} or 'all'")
    return methods


def _single_method(text: str) -> str:
    if text not in INTERP_METHODS:
        raise argparse.ArgumentTypeError(f"unknown interpolation {text!r}; choose from {INTERP_METHODS}")
    return text


def _require_mnist(mnist_dir: Path, splits=("train", "test")) -> None:
    for split in splits:
        for name in io.MNIST_FILES[split]:
            if not (mnist_dir / name).is_file():
                raise FileNotFoundError(f"MNIST file not found: {mnist_dir / name}")


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require_conv_layers(net: N.Network, layers) -> None:
    for L in layers:
        try:
            net.require_conv(L)
        except IndexError as exc:
            raise UsageError(str(exc)) from None


# -- subcommands ----------------------------------------------------------


def cmd_train(args) -> int:
    mnist_dir = Path(args.mnist_dir)
    _require_mnist(mnist_dir)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")

    cfg = Tr.TrainConfig(args.lr, args.momentum, args.batch, args.epochs, args.init_std, args.seed,
                         args.weight_decay)
    train_set, test_set = io.load_mnist(mnist_dir)
    net = N.lenet_architecture(np.random.default_rng(cfg.seed), cfg.init_std)
    result = Tr.train(net, train_set, cfg, test_data=test_set, log_path=log_path)
    N.save_model(result.net, out)
    acc = Tr.evaluate_accuracy(result.net, test_set)
    print(f"test accuracy: {acc:.4f}")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    model = Path(args.model)
    _require_file(model)
    net = N.load_model(model)
    _require_conv_layers(net, [args.layer])
    out = _out_dir(Path(args.out))

    if args.all:
        decoded = D.decode_all(net, args.layer, args.interp)
    else:
        if not 0 <= args.filter < len(net.require_conv(args.layer)):
            raise UsageError(f"filter {args.filter} out of range for layer {args.layer}")
        decoded = [D.decode_filter(net, args.layer, args.filter, args.interp)]

    for d in decoded:
        stem = out / f"L{d.layer}_f{d.index:03d}_{d.interp}"
        D.save_decoded(d, stem.with_suffix(".cdf"))
        for c in range(d.plane.shape[2]):
            suffix = "" if d.plane.shape[2] == 1 else f"_c{c}"
            io.export_pgm(d.plane[:, :, [c]], f"{stem}{suffix}.pgm")
            io.export_pgm(D.threshold_view(d.plane[:, :, [c]], args.tau), f"{stem}{suffix}_thr.pgm")
    if len(decoded) > 1:
        io.export_gallery([d.plane[:, :, [0]] for d in decoded], out / f"L{args.layer}_{args.interp}_gallery.pgm")
        io.export_gallery([D.threshold_view(d.plane[:, :, [0]], args.tau) for d in decoded],
                          out / f"L{args.layer}_{args.interp}_gallery_thr.pgm")
    h, w, _ = decoded[0].shape
    print(f"decoded {len(decoded)} filter(s) of layer {args.layer} at {h}x{w} into {out}")
    return EXIT_OK


def _load_eval_inputs(args):
    model = Path(args.model)
    mnist_dir = Path(args.mnist_dir)
    _require_file(model)
    _require_mnist(mnist_dir)
    net = N.load_model(model)
    _, test_set = io.load_mnist(mnist_dir)
    return net, test_set


def cmd_evaluate(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be positive")
    net, test_set = _load_eval_inputs(args)
    _require_conv_layers(net, args.layers)
    idx = E.sample_indices(len(test_set), args.samples, args.seed)
    images = test_set.images[idx]
    entries = E.error_report(net, images, args.layers, args.interp)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.export_csv(E.ERROR_HEADER, (e.row() for e in entries), out)

    print(f"reconstruction error over {len(images)} test images (mean +- std)")
    print("       " + "".join(f"{m:>22s}" for m in args.interp))
    for L in args.layers:
        cells = [e for e in entries if e.layer == L]
        print(f"L{L:<5d} " + "".join(f"{e.mean:>12.4g} +- {e.std:<7.2g}" for e in cells))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_confusion(args) -> int:
    net, test_set = _load_eval_inputs(args)
    out = _out_dir(Path(args.out))
    top = net.conv_ordinals()[-1]
    mat = E.activation_matrix(net, test_set.images, test_set.labels, args.interp, layer=top)
    io.export_matrix_csv(mat.values, out / "activation_matrix.csv", corner="filter\\class")
    io.export_matrix_csv(mat.argmax, out / "activation_argmax.csv", corner="filter\\class")

    winners = mat.row_argmax_images()
    io.export_gallery([test_set.images[i] for i in winners], out / "row_max_images.pgm", ncols=len(winners))
    decoded = D.decode_all(net, top, args.interp)
    io.export_gallery([d.plane for d in decoded], out / "decoded_filters.pgm", ncols=len(decoded))
    io.export_gallery([D.threshold_view(d, args.tau) for d in decoded], out / "decoded_filters_thr.pgm",
                      ncols=len(decoded))
    print(f"diagonal dominance: {mat.diagonal_hits()} of {len(mat.values)} rows")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    out = _out_dir(Path(args.out))
    net = S.build_synthetic_net()
    rows = []
    all_passed = True
    for method in args.interp:
        for r in S.round_trip(net, method):
            rows.append([method, r.index, r.name, S.CHARACTER_NAMES[r.winner], r.peak, r.runner_up,
                         "pass" if r.passed else "fail"])
            all_passed &= r.passed
        n_pass = sum(1 for row in rows if row[0] == method and row[-1] == "pass")
        print(f"{method}: {n_pass}/{len(S.CHARACTER_NAMES)} top filters pass")
    io.export_csv(["interp", "filter", "character", "winner", "peak", "runner_up", "result"], rows,
                  out / "roundtrip.csv")

    k = S.CHARACTER_NAMES.index(args.character)
    d = D.decode_filter(net, net.conv_ordinals()[-1], k, args.interp[0])
    image = S.embed_centered(io.normalize_range(d.plane), net.input_shape[0])
    io.export_pgm(image, out / f"input_{args.character}.pgm")
    for layer, planes in S.activation_atlas(net, image).items():
        io.export_gallery(planes, out / f"atlas_{args.character}_L{layer}.pgm")
    print(f"outputs written to {out}")
    return EXIT_OK if all_passed else EXIT_ROUNDTRIP


def cmd_compare(args) -> int:
    net, test_set = _load_eval_inputs(args)
    if not 0 <= args.image_index < len(test_set):
        raise UsageError(f"--image-index must lie in 0..{len(test_set) - 1}")
    _require_conv_layers(net, args.layers)
    out = _out_dir(Path(args.out))
    image = test_set.images[args.image_index]
    pairs = E.compare_responses(net, image, args.layers, args.interp)
    io.export_pgm(image, out / f"image_{args.image_index}.pgm")
    for L, (fwd, rec) in pairs.items():
        n = fwd.shape[2]
        planes = [fwd[:, :, [c]] for c in range(n)] + [rec[:, :, [c]] for c in range(n)]
        io.export_gallery(planes, out / f"compare_L{L}.pgm", ncols=n)
        err = float(np.mean((fwd - rec) ** 2))
        print(f"layer {L}: {fwd.shape[0]}x{fwd.shape[1]}x{n}, squared error {err:.4g}")
    print(f"label {int(test_set.labels[args.image_index])}; outputs written to {out}")
    return EXIT_OK


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options that have none."""

    def _get_help_string(self, action):
        if action.default is None or action.required:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filterdecode", description=__doc__.splitlines()[0],
                                formatter_class=_DefaultsFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = _DefaultsFormatter

    t = sub.add_parser("train", help="train LeNet on MNIST", formatter_class=fmt)
    t.add_argument("--mnist-dir", required=True, help="directory holding the four MNIST IDX files")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--log", help="training-log CSV (default: next to the model)")
    t.add_argument("--epochs", type=int, default=20, help="passes over the training set")
    t.add_argument("--batch", type=int, default=100, help="minibatch size")
    t.add_argument("--lr", type=float, default=0.001, help="learning rate per sample")
    t.add_argument("--momentum", type=float, default=0.9, help="momentum coefficient")
    t.add_argument("--init-std", type=float, default=0.01, help="std of the Gaussian weight init")
    t.add_argument("--seed", type=int, default=42, help="seed for init and shuffling")
    t.add_argument("--weight-decay", type=float, default=0.0005, help="L2 penalty per sample")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="decode conv filters into image space", formatter_class=fmt)
    d.add_argument("--model", required=True, help="model file")
    d.add_argument("--layer", type=int, required=True, help="conv layer ordinal (1-based)")
    which = d.add_mutually_exclusive_group(required=True)
    which.add_argument("--filter", type=int, help="decode this filter index only")
    which.add_argument("--all", action="store_true", help="decode every filter of the layer")
    d.add_argument("--interp", type=_single_method, default="bicubic", help="unpooling interpolation")
    d.add_argument("--tau", type=float, default=0.5, help="threshold-view cut, fraction of max |value|")
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("evaluate", help="reconstruction error table", formatter_class=fmt)
    e.add_argument("--model", required=True, help="model file")
    e.add_argument("--mnist-dir", required=True, help="directory holding the MNIST IDX files")
    e.add_argument("--layers", type=_int_list, default="3,5,7", help="comma-separated conv layers")
    e.add_argument("--interp", type=_methods, default="all", help="comma-separated methods or 'all'")
    e.add_argument("--samples", type=int, default=1000, help="test images to average over")
    e.add_argument("--seed", type=int, default=0, help="seed for choosing the test images")
    e.add_argument("--out", default="reconstruction_error.csv", help="CSV report path")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("confusion", help="max-activation matrix of top-layer decoded filters",
                       formatter_class=fmt)
    c.add_argument("--model", required=True, help="model file")
    c.add_argument("--mnist-dir", required=True, help="directory holding the MNIST IDX files")
    c.add_argument("--interp", type=_single_method, default="bicubic", help="unpooling interpolation")
    c.add_argument("--tau", type=float, default=0.5, help="threshold-view cut, fraction of max |value|")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_confusion)

    r = sub.add_parser("roundtrip", help="round-trip test on the hand-built net", formatter_class=fmt)
    r.add_argument("--interp", type=_methods, default="all", help="comma-separated methods or 'all'")
    r.add_argument("--character", choices=S.CHARACTER_NAMES, default="C",
                   help="character whose activation atlas is exported")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_roundtrip)

    m = sub.add_parser("compare", help="network vs decoded-filter responses for one image",
                       formatter_class=fmt)
    m.add_argument("--model", required=True, help="model file")
    m.add_argument("--mnist-dir", required=True, help="directory holding the MNIST IDX files")
    m.add_argument("--image-index", type=int, default=0, help="index into the test split")
    m.add_argument("--layers", type=_int_list, default="1,3,5", help="comma-separated conv layers")
    m.add_argument("--interp", type=_single_method, default="bicubic", help="unpooling interpolation")
    m.add_argument("--out", required=True, help="output directory")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"filterdecode: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, FormatError) as exc:
        print(f"filterdecode: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FilterDecodeError, ValueError) as exc:
        print(f"filterdecode: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
