"""Parameter / FLOP accounting and the convolution vs. row-LSTM cost comparison.

FLOPs count one multiply-accumulate as 2.  Per layer:

* conv:      w2 * h2 * d1 * wk * hk * dk * 2   (padded positions included)
* row LSTM:  w1 * h1 * 8 * d1 * dl             (reported figure)
             w1 * h1 * 2 * 4 * (d1 + dl) * dl  (both gate products, "exact")
* upsample and activations: one FLOP per output element, kept in ``aux_flops``
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

from .network import NetworkSpec, infer_shapes
from .tensor import Shape3

REPORTED_PARAMS = 348_801
REPORTED_FLOPS_PER_TENSOR = 3.45e9
REPORTED_FLOPS_PER_FRAME = 6.9e9


@dataclass
class LayerCost:
    name: str
    kind: str
    kernel: str
    stride: str
    out_shape: Shape3
    params: int = 0
    flops: int = 0          # by the per-kind formula above
    flops_exact: int = 0    # differs from ``flops`` only for row LSTMs
    aux_flops: int = 0
    sensing_width: float = 0.0


@dataclass
class CostReport:
    input_shape: Shape3
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(c.params for c in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(c.flops for c in self.layers)

    @property
    def total_flops_exact(self) -> int:
        return sum(c.flops_exact for c in self.layers)

    @property
    def total_aux_flops(self) -> int:
        return sum(c.aux_flops for c in self.layers)

    def table_layers(self) -> list[LayerCost]:
        """Layers that carry weights or resample, activations folded away."""
        return [c for c in self.layers if c.kind != "activation"]


def _layer_params(ls, in_shape: Shape3) -> int:
    if ls.kind == "conv":
        c = ls.conv
        return c.kernel_w * c.kernel_h * c.in_channels * c.out_channels + c.out_channels
    if ls.kind == "dist_lstm":
        d1, dl = in_shape.channels, ls.hidden_dim
        return 4 * (d1 * dl + dl * dl + dl)
    if ls.kind == "upsample":
        return ls.factor + 1
    return 0


def analyze(spec: NetworkSpec, input_shape: Shape3 | None = None) -> CostReport:
    """Full per-layer cost report (params, FLOPs, shapes, sensing widths)."""
    if input_shape is not None and input_shape != spec.input_shape:
        spec = NetworkSpec(input_shape, spec.layers)
    shapes = infer_shapes(spec)
    report = CostReport(spec.input_shape)
    for ls, s_in, s_out in zip(spec.layers, shapes, shapes[1:]):
        cost = LayerCost(ls.name, ls.kind, ls.kernel_text(), ls.stride_text(), s_out,
                         params=_layer_params(ls, s_in))
        if ls.kind == "conv":
            c = ls.conv
            cost.flops = (s_out.width * s_out.height * c.in_channels * c.kernel_w * c.kernel_h
                          * c.out_channels * 2)
            cost.flops_exact = cost.flops
            cost.sensing_width = c.kernel_w
        elif ls.kind == "dist_lstm":
            d1, dl = s_in.channels, ls.hidden_dim
            cells = s_in.width * s_in.height
            cost.flops = cells * 8 * d1 * dl
            cost.flops_exact = cells * 2 * 4 * (d1 + dl) * dl
            cost.sensing_width = (s_in.width + 1) / 2
        else:
            cost.aux_flops = s_out.size
        report.layers.append(cost)
    return report


def count_params(spec: NetworkSpec) -> CostReport:
    return analyze(spec)


def count_flops(spec: NetworkSpec, input_shape: Shape3 | None = None) -> CostReport:
    return analyze(spec, input_shape)


# --------------------------------------------------------------------------
# convolution vs. distributed LSTM at equal output size

class ConfigError(ValueError):
    pass


@dataclass
class ComparisonReport:
    map_shape: Shape3
    kernel: tuple[int, int]
    d_out: int
    conv_flops: int
    lstm_flops: int
    flops_ratio: Fraction         # conv : lstm
    savings_fraction: Fraction    # 1 - lstm / conv
    conv_sensing_cells: int       # per output cell, per input channel
    lstm_avg_sensing_cells: Fraction  # exact mean of i over i = 1..w1
    lstm_sensing_approx: Fraction     # w1 / 2, the rounded form
    sensing_ratio: tuple[int, Fraction]

    def ratio_text(self) -> str:
        r = self.flops_ratio * 4
        return f"{_num(r)}:4"

    def sensing_text(self) -> str:
        a, b = self.sensing_ratio
        return f"{a} : {_num(b)}"


def _num(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else f"{float(f):g}"


def compare_conv_lstm(map_shape: Shape3, kernel: tuple[int, int], d_out: int,
                      lstm_hidden: int | None = None) -> ComparisonReport:
    """Cost of a stride-1 same-padded conv vs. a row LSTM producing the same map."""
    wk, hk = kernel
    if lstm_hidden is not None and lstm_hidden != d_out:
        raise ConfigError(f"output depths differ: conv {d_out} vs LSTM {lstm_hidden}")
    w1, h1, d1 = map_shape.width, map_shape.height, map_shape.channels
    conv_flops = w1 * h1 * d1 * wk * hk * d_out * 2
    lstm_flops = w1 * h1 * 8 * d1 * d_out
    ratio = Fraction(conv_flops, lstm_flops)
    return ComparisonReport(
        map_shape, (wk, hk), d_out, conv_flops, lstm_flops, ratio,
        1 - Fraction(lstm_flops, conv_flops),
        wk * hk, Fraction(w1 + 1, 2), Fraction(w1, 2), (wk * hk, Fraction(w1, 2)))


# --------------------------------------------------------------------------
# receptive fields

@dataclass
class ReceptiveField:
    width: int | None   # None once a row LSTM has made it the full row prefix
    height: int
    full_row_prefix: bool = False


def receptive_field(spec: NetworkSpec, layer_index: int) -> ReceptiveField:
    """Input-pixel extent seen by one output cell of ``spec.layers[layer_index]``."""
    rf_w = rf_h = 1
    jump_w = jump_h = Fraction(1)
    prefix = False
    for ls in spec.layers[:layer_index + 1]:
        if ls.kind == "conv":
            c = ls.conv
            rf_w += (c.kernel_w - 1) * jump_w
            rf_h += (c.kernel_h - 1) * jump_h
            jump_w *= c.stride[0]
            jump_h *= c.stride[1]
        elif ls.kind == "dist_lstm":
            prefix = True
        elif ls.kind == "upsample":
            # each output reads exactly one input cell
            jump_w /= ls.factor
    return ReceptiveField(None if prefix else int(rf_w), int(rf_h), prefix)


# --------------------------------------------------------------------------
# text output

def _fmt_int(n):
    return f"{n:,}"


def format_report(report: CostReport, comparison: ComparisonReport | None = None,
                  frames_tensors: int = 2, all_layers: bool = False) -> str:
    rows = report.layers if all_layers else report.table_layers()
    out = io.StringIO()
    hdr = f"{'Layer':<16}{'Kind':<12}{'Kernel':<10}{'Stride':<8}{'Output':<14}{'Params':>12}{'FLOPs':>18}{'Aux FLOPs':>12}"
    out.write(hdr + "\n" + "-" * len(hdr) + "\n")
    out.write(f"{'Input':<16}{'-':<12}{'-':<10}{'-':<8}{str(report.input_shape):<14}\n")
    for c in rows:
        out.write(f"{c.name:<16}{c.kind:<12}{c.kernel:<10}{c.stride:<8}{str(c.out_shape):<14}"
                  f"{_fmt_int(c.params):>12}{_fmt_int(c.flops):>18}{_fmt_int(c.aux_flops):>12}\n")
    out.write("-" * len(hdr) + "\n")
    tp, tf = report.total_params, report.total_flops
    out.write(f"{'Total':<60}{_fmt_int(tp):>12}{_fmt_int(tf):>18}{_fmt_int(report.total_aux_flops):>12}\n\n")

    dp = tp - REPORTED_PARAMS
    out.write(f"parameters   computed {tp:,}   reported {REPORTED_PARAMS:,}   "
              f"delta {dp:+,} ({100 * dp / REPORTED_PARAMS:+.3f}%)\n")
    df = tf - REPORTED_FLOPS_PER_TENSOR
    out.write(f"FLOPs/tensor computed {tf / 1e9:.4f}B   reported {REPORTED_FLOPS_PER_TENSOR / 1e9:.2f}B   "
              f"delta {100 * df / REPORTED_FLOPS_PER_TENSOR:+.2f}%\n")
    ff = frames_tensors * tf
    dff = ff - REPORTED_FLOPS_PER_FRAME
    out.write(f"FLOPs/frame  computed {ff / 1e9:.4f}B   reported {REPORTED_FLOPS_PER_FRAME / 1e9:.1f}B   "
              f"delta {100 * dff / REPORTED_FLOPS_PER_FRAME:+.2f}%  ({frames_tensors} tensors per frame)\n")
    lstm_rows = [c for c in report.layers if c.kind == "dist_lstm"]
    if lstm_rows:
        out.write(f"LSTM FLOPs   formula {sum(c.flops for c in lstm_rows):,}   "
                  f"exact (both gate products) {sum(c.flops_exact for c in lstm_rows):,}\n")
        out.write(f"FLOPs/tensor with exact LSTM count {report.total_flops_exact / 1e9:.4f}B; "
                  f"with aux {(tf + report.total_aux_flops) / 1e9:.4f}B\n")
    if comparison is not None:
        out.write("\n" + format_comparison(comparison))
    return out.getvalue()


def format_comparison(c: ComparisonReport) -> str:
    wk, hk = c.kernel
    w1 = c.map_shape.width
    lines = [
        f"conv {wk}x{hk}x{c.d_out} vs row LSTM({c.d_out}) on {c.map_shape}, equal output size",
        f"  FLOPs conv {c.conv_flops:,}   LSTM {c.lstm_flops:,}",
        f"  FLOP ratio conv:LSTM = {c.ratio_text()}  (= wk*hk : 4)",
        f"  LSTM saves {c.savings_fraction} = {100 * float(c.savings_fraction):.2f}% of the conv FLOPs",
        f"  sensing cells per output conv:LSTM = {c.sensing_text()}  (= {wk * hk} : w1/2, w1 = {w1}; "
        f"exact LSTM mean (w1+1)/2 = {float(c.lstm_avg_sensing_cells):g})",
        "  conv sees several rows per output, the row LSTM only its own row",
        "  only conv can shrink the map (stride > 1); the row LSTM keeps w1 x h1",
    ]
    return "\n".join(lines) + "\n"


def report_csv(report: CostReport, all_layers: bool = False) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["name", "kind", "kernel", "stride", "out_w", "out_h", "out_d", "params",
                "flops", "flops_exact", "aux_flops", "sensing_width"])
    for c in (report.layers if all_layers else report.table_layers()):
        s = c.out_shape
        w.writerow([c.name, c.kind, c.kernel, c.stride, s.width, s.height, s.channels, c.params,
                    c.flops, c.flops_exact, c.aux_flops, f"{c.sensing_width:g}"])
    w.writerow(["TOTAL", "", "", "", "", "", "", report.total_params, report.total_flops,
                report.total_flops_exact, report.total_aux_flops, ""])
    return out.getvalue()
