"""``roadlstm`` command line: analyze, train, eval, infer, grad-check, gen-data.

Every option can also come from a ``--config`` file of ``key = value`` lines
(keys are the long option names, with ``-`` or ``_``).  An explicit flag
beats the file, the file beats the built-in default.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis, pipeline, plots
from .network import (BuildError, FormatError, Network, build_roadnet, build_toy, load_weights,
                      parse_arch, save_weights)
from .tensor import Shape3, ShapeError, make_rng
from .train import TrainConfig, TrainingError, grad_check_layers, train, write_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class Command:
    """Collects option defaults so flags, config file and defaults can be merged."""

    def __init__(self, sub, name, help, func):
        self.p = sub.add_parser(name, help=help, description=help)
        self.p.set_defaults(_cmd=self)
        self.func = func
        self.defaults = {}
        self.types = {}
        self.p.add_argument("--config", default=None, metavar="FILE",
                            help="key = value file supplying option values")

    def opt(self, flag, default=None, type=str, help="", **kw):
        dest = flag.lstrip("-").replace("-", "_")
        self.defaults[dest] = default
        self.types[dest] = type
        if default is not None and default is not False:
            help = f"{help} (default: {default})"
        if type is bool:
            self.p.add_argument(flag, dest=dest, action="store_const", const=True, default=None,
                                help=help, **kw)
        else:
            self.p.add_argument(flag, dest=dest, type=type, default=None, help=help, **kw)

    def resolve(self, ns):
        file_vals = {}
        if ns.config:
            file_vals = read_config(ns.config, self.types)
        out = {}
        for dest, default in self.defaults.items():
            v = getattr(ns, dest)
            if v is None:
                v = file_vals.get(dest, default)
            out[dest] = v
        return argparse.Namespace(**out)


def read_config(path, types) -> dict:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    vals = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in types:
            raise UsageError(f"{path}:{n}: unknown key {k!r}")
        conv = _bool if types[k] is bool else types[k]
        try:
            vals[k] = conv(v)
        except (ValueError, TypeError) as e:
            raise UsageError(f"{path}:{n}: bad value for {k}: {e}") from None
    return vals


def _scales(text):
    try:
        return tuple(float(s) for s in str(text).split(","))
    except ValueError:
        raise UsageError(f"bad scale list {text!r}, expected e.g. 0.5,1.0") from None


def _pair(text):
    try:
        a, b = str(text).lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"bad size {text!r}, expected AxB") from None


def _shape(text):
    try:
        return Shape3.parse(text)
    except ShapeError as e:
        raise UsageError(str(e)) from None


# --------------------------------------------------------------------------
# analyze

def cmd_analyze(a, out):
    if a.arch_file:
        try:
            spec = parse_arch(Path(a.arch_file).read_text())
        except OSError as e:
            raise DataError(f"cannot read {a.arch_file}: {e}") from None
        except BuildError as e:
            raise DataError(f"{a.arch_file}: {e}") from None
    elif a.arch in ("roadnet", "roadnet-cnn"):
        shape = _shape(a.input_shape) if a.input_shape else Shape3(600, 160, 5)
        spec = build_roadnet(shape, lstm=a.arch == "roadnet")
    else:
        raise UsageError(f"unknown --arch {a.arch!r}; use roadnet, roadnet-cnn or --arch-file")
    shape = _shape(a.input_shape) if a.input_shape else None
    try:
        report = analysis.analyze(spec, shape)
    except BuildError as e:
        raise DataError(str(e)) from None
    if a.csv:
        out.write(analysis.report_csv(report, all_layers=a.all_layers))
    else:
        w1 = a.compare_width or 600
        cmp = analysis.compare_conv_lstm(Shape3(w1, 160, 64), (3, 3), 64)
        out.write(analysis.format_report(report, cmp, all_layers=a.all_layers))
        for k in (5, 7):
            c = analysis.compare_conv_lstm(Shape3(w1, 160, 64), (k, k), 64)
            out.write(f"  {k}x{k} kernel: FLOP ratio {c.ratio_text()}, LSTM saves {c.savings_fraction}\n")
    if a.plot:
        plots.plot_costs(report, a.plot)
    return EXIT_OK


# --------------------------------------------------------------------------
# data helpers

def _load(data, require_masks=True):
    try:
        return pipeline.load_dataset(data, require_masks=require_masks)
    except FileNotFoundError as e:
        raise DataError(str(e)) from None


def _window_samples(frames, window, augment, scales, stride):
    samples = []
    for fr in frames:
        if augment:
            samples.extend(pipeline.sliding_window_augment(fr, scales, window, stride).samples)
        else:
            rgb = pipeline.resize_bilinear(fr.rgb.data, window)
            mask = pipeline.resize_nearest(fr.mask_array(), window)
            samples.append(pipeline.make_sample(rgb, mask))
    return samples


# --------------------------------------------------------------------------
# train

def cmd_train(a, out):
    frames = _load(a.data)
    if not 0 <= a.val_fraction < 1:
        raise UsageError("--val-fraction must lie in [0, 1)")
    order = make_rng(a.seed).permutation(len(frames))
    n_val = int(round(a.val_fraction * len(frames)))
    val_frames = [frames[i] for i in order[:n_val]]
    train_frames = [frames[i] for i in order[n_val:]]
    if not train_frames:
        raise DataError("no training frames left after the validation split")
    window = _pair(a.window)
    scales = _scales(a.scales)
    stride = _pair(a.stride)
    tr = _window_samples(train_frames, window, a.augment, scales, stride)
    va = _window_samples(val_frames, window, a.augment, scales, stride)
    if not tr:
        raise DataError("augmentation produced no training windows")
    out.write(f"{len(train_frames)} training frames -> {len(tr)} samples; "
              f"{len(val_frames)} validation frames -> {len(va)} samples\n")
    net = Network.build(build_roadnet(Shape3(window[0], window[1], 5)), seed=a.seed)
    cfg = TrainConfig(batch_size=a.batch, epochs=a.epochs, lr=a.lr, noise_sd=a.noise_sd, seed=a.seed)

    def progress(rec):
        val = "" if rec.val_mae is None else f"  val MAE {rec.val_mae:.5f}"
        out.write(f"epoch {rec.epoch:4d}  train MAE {rec.train_mae:.5f}{val}  {rec.wall_seconds:8.1f}s\n")
        out.flush()
        return a.target_mae is not None and rec.train_mae < a.target_mae

    try:
        history = train(net, tr, cfg, va, on_epoch=progress)
    except TrainingError as e:
        raise NumericError(str(e)) from None
    save_weights(net, a.out)
    if a.log:
        write_log(history, a.log, timing=not a.no_timing)
    if a.plot:
        plots.plot_history(history, a.plot)
    last = history[-1]
    out.write(f"stopped after {last.epoch} epochs, train MAE {last.train_mae:.5f}, "
              f"{last.wall_seconds:.1f}s; wrote {a.out}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval / infer

def predict_mask(net: Network, rgb: np.ndarray) -> np.ndarray:
    """Full-frame road mask via the near/far pyramid."""
    s = net.spec.input_shape
    window = (s.width, s.height)
    pair = pipeline.pyramid_preprocess(pipeline.frame_from_arrays(rgb), window)
    near = pipeline.boundary_to_mask(net.forward(pair.near), window)
    far = pipeline.boundary_to_mask(net.forward(pair.far), window)
    return pipeline.pyramid_merge(near, far, pair.geometry)


def _net(path) -> Network:
    try:
        return load_weights(path)
    except OSError as e:
        raise DataError(f"cannot read weights {path}: {e}") from None
    except FormatError as e:
        raise DataError(f"{path}: {e}") from None


def cmd_eval(a, out):
    if not a.oracle and not a.weights:
        raise UsageError("--weights is required unless --oracle is given")
    frames = _load(a.data)
    net = None if a.oracle else _net(a.weights)
    total = None
    per_frame = []
    for fr in frames:
        gt = fr.mask_array()
        try:
            pred = gt if a.oracle else predict_mask(net, fr.rgb.data)
        except (pipeline.GeometryError, ShapeError) as e:
            raise DataError(f"{fr.name}: {e}") from None
        m = pipeline.compute_metrics(pred, gt)
        per_frame.append((fr.name, m))
        total = m if total is None else total + m
    out.write(f"{len(frames)} frames, pixel counts summed over all frames\n")
    out.write(f"TP {total.tp}  FP {total.fp}  TN {total.tn}  FN {total.fn}\n")
    for name, v in total.rows():
        out.write(f"{name:<28}{100 * v:8.2f}%\n")
    if total.degenerate:
        out.write(f"zero denominators (reported as 0): {', '.join(total.degenerate)}\n")
    if a.per_frame:
        with open(a.per_frame, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["frame", "tp", "fp", "tn", "fn", "pre", "rec", "f1", "accuracy", "fdr",
                        "fpr_std", "fnr"])
            for name, m in per_frame:
                w.writerow([name, m.tp, m.fp, m.tn, m.fn] +
                           [f"{v:.6f}" for v in (m.pre, m.rec, m.f1, m.accuracy, m.fdr, m.fpr_std, m.fnr)])
    if a.plot:
        plots.plot_metrics(total, a.plot)
    return EXIT_OK


def cmd_infer(a, out):
    net = _net(a.weights)
    try:
        rgb = pipeline.read_rgb(a.image)
    except OSError as e:
        raise DataError(f"cannot read image {a.image}: {e}") from None
    try:
        mask = predict_mask(net, rgb)
    except (pipeline.GeometryError, ShapeError) as e:
        raise DataError(str(e)) from None
    pipeline.write_mask(a.out, mask)
    if a.overlay:
        tinted = rgb.copy()
        tinted[mask] = 0.5 * tinted[mask] + 0.5 * np.array([0.0, 1.0, 0.0])
        pipeline.write_rgb(a.overlay, tinted)
    out.write(f"road pixels {int(mask.sum())} of {mask.size}; wrote {a.out}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# grad-check / gen-data

def cmd_grad_check(a, out):
    rng = make_rng(a.seed)
    spec = build_toy()
    net = Network.build(spec, seed=a.seed)
    s = spec.input_shape
    x = rng.normal(size=s.as_hwd())
    target = rng.uniform(0.0, 1.0, size=net.output_width)
    report = grad_check_layers(net, x, target, eps=a.eps, corrupt=a.corrupt_layer)
    worst = max(report.values())
    for name, err in report.items():
        out.write(f"{name:<22}{err:.3e}\n")
    ok = worst < a.tolerance
    out.write(f"max relative error {worst:.3e} (tolerance {a.tolerance:g}): {'PASS' if ok else 'FAIL'}\n")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_gen_data(a, out):
    from .synth import gen_dataset
    frames = gen_dataset(a.n, _pair(a.size), a.seed)
    pipeline.save_dataset(frames, a.out)
    out.write(f"wrote {len(frames)} frames to {a.out}\n")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="roadlstm", description="Road-boundary CNN + row-LSTM toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = Command(sub, "analyze", "parameter / FLOP report and conv-vs-LSTM comparison", cmd_analyze)
    c.opt("--arch", "roadnet", help="built-in architecture: roadnet or roadnet-cnn")
    c.opt("--arch-file", help="architecture text file (overrides --arch)")
    c.opt("--input-shape", help="WxHxC input shape, e.g. 600x160x5")
    c.opt("--csv", False, bool, help="machine-readable CSV instead of the table")
    c.opt("--all-layers", False, bool, help="also list activation layers")
    c.opt("--compare-width", 600, int, help="map width w1 for the comparison block")
    c.opt("--plot", help="write a per-layer cost figure to this file")

    c = Command(sub, "train", "train the road network", cmd_train)
    c.opt("--data", help="dataset directory (images/*.png + masks/*.png)")
    c.opt("--epochs", 80, int, help="training epochs")
    c.opt("--batch", 100, int, help="minibatch size")
    c.opt("--lr", 1e-5, float, help="Adam learning rate")
    c.opt("--noise-sd", 0.0002, float, help="input noise standard deviation (0.02%%)")
    c.opt("--seed", 0, int, help="seed for init, shuffling, noise and the split")
    c.opt("--val-fraction", 0.2, float, help="fraction of frames held out for validation")
    c.opt("--augment", True, _bool, help="sliding-window augmentation (true/false)")
    c.opt("--scales", "0.5,1.0", help="augmentation scales")
    c.opt("--stride", "60x20", help="sliding-window stride")
    c.opt("--window", "600x160", help="network input window")
    c.opt("--out", "weights.bin", help="weight file to write")
    c.opt("--log", "train_log.csv", help="CSV training log")
    c.opt("--target-mae", type=float, help="stop once an epoch's train MAE falls below this")
    c.opt("--no-timing", False, bool, help="leave wall_seconds empty so logs are byte-reproducible")
    c.opt("--plot", help="write a training-curve figure to this file")

    c = Command(sub, "eval", "pyramid pipeline metrics over a dataset", cmd_eval)
    c.opt("--data", help="dataset directory")
    c.opt("--weights", help="weight file")
    c.opt("--oracle", False, bool, help="score ground truth against itself (no network)")
    c.opt("--per-frame", help="write per-frame metrics CSV here")
    c.opt("--plot", help="write a metrics figure to this file")

    c = Command(sub, "infer", "segment one image", cmd_infer)
    c.opt("--image", help="input image")
    c.opt("--weights", help="weight file")
    c.opt("--out", "mask.png", help="output mask (0/255 PNG)")
    c.opt("--overlay", help="also write the image with road tinted green")

    c = Command(sub, "grad-check", "finite-difference check of every layer kind", cmd_grad_check)
    c.opt("--seed", 0, int, help="seed")
    c.opt("--eps", 1e-5, float, help="central-difference step")
    c.opt("--tolerance", 1e-4, float, help="max relative error allowed")
    c.opt("--corrupt-layer", help=argparse.SUPPRESS)

    c = Command(sub, "gen-data", "write a synthetic road dataset", cmd_gen_data)
    c.opt("--out", help="output directory")
    c.opt("--n", 8, int, help="number of frames")
    c.opt("--size", "600x160", help="frame size WxH")
    c.opt("--seed", 0, int, help="seed")
    return p


_REQUIRED = {"train": ("data",), "eval": ("data",), "infer": ("image", "weights"),
             "gen-data": ("out",)}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    ns = parser.parse_args(argv)
    cmd = ns._cmd
    try:
        a = cmd.resolve(ns)
        missing = [k for k in _REQUIRED.get(ns.command, ()) if getattr(a, k) in (None, "")]
        if missing:
            raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
        return cmd.func(a, out)
    except UsageError as e:
        print(f"roadlstm {ns.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError) as e:
        print(f"roadlstm {ns.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"roadlstm {ns.command}: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
