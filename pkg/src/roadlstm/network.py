"""Chain networks: declarative specs, the road-boundary architecture, weight files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import (ACTIVATIONS, Activation, ConvLayer, ConvSpec, DistLstmLayer,
                     MacCounter, UpsampleLayer)
from .tensor import Shape3, ShapeError, Tensor3, make_rng


class BuildError(ValueError):
    """A network spec whose layer shapes do not chain."""


class FormatError(ValueError):
    """A malformed weight file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


KINDS = ("conv", "dist_lstm", "activation", "upsample")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    conv: ConvSpec | None = None
    hidden_dim: int | None = None
    activation: str | None = None
    factor: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BuildError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        need = {"conv": self.conv, "dist_lstm": self.hidden_dim,
                "activation": self.activation, "upsample": self.factor}[self.kind]
        if need is None:
            raise BuildError(f"layer {self.name!r}: missing parameters for kind {self.kind}")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise BuildError(f"layer {self.name!r}: unknown activation {self.activation!r}")

    def make(self, in_shape: Shape3):
        if self.kind == "conv":
            return ConvLayer(self.conv)
        if self.kind == "dist_lstm":
            return DistLstmLayer(in_shape.channels, self.hidden_dim)
        if self.kind == "activation":
            return Activation(self.activation)
        return UpsampleLayer(self.factor)

    def kernel_text(self) -> str:
        if self.kind == "conv":
            c = self.conv
            return f"{c.kernel_w}x{c.kernel_h}x{c.out_channels}"
        if self.kind == "dist_lstm":
            return str(self.hidden_dim)
        if self.kind == "upsample":
            return f"{self.factor}x1x1"
        return "-"

    def stride_text(self) -> str:
        if self.kind == "conv":
            return f"{self.conv.stride[0]}x{self.conv.stride[1]}"
        if self.kind == "upsample":
            return f"1/{self.factor}"
        return "-"


@dataclass
class NetworkSpec:
    input_shape: Shape3
    layers: list[LayerSpec] = field(default_factory=list)


def conv(name, kw, kh, cin, cout, stride=(1, 1), padding="same"):
    return LayerSpec("conv", name, conv=ConvSpec(kw, kh, cin, cout, stride, padding))


def build_roadnet(input_shape: Shape3 = Shape3(600, 160, 5), lstm: bool = True) -> NetworkSpec:
    """Road boundary network: strided conv encoder, row-LSTM feature stage, column-collapsing decoder.

    ``lstm=False`` swaps each distributed LSTM for a 3x3x64 convolution (the
    pure-CNN ablation).
    """
    d = input_shape.channels
    L = []

    def add_conv(name, kw, kh, cin, cout, stride=(1, 1), padding="same", act="relu"):
        L.append(conv(name, kw, kh, cin, cout, stride, padding))
        L.append(LayerSpec("activation", f"{name}_{act}", activation=act))

    # encoder: three groups of two, first of each group halves both axes
    add_conv("Conv1", 3, 3, d, 64, (2, 2))
    add_conv("Conv2", 3, 3, 64, 64)
    add_conv("Conv3", 3, 3, 64, 64, (2, 2))
    add_conv("Conv4", 3, 3, 64, 64)
    add_conv("Conv5", 3, 3, 64, 64, (2, 2))
    add_conv("Conv6", 3, 3, 64, 64)
    # feature processor
    for k, name in ((7, "DLSTM1"), (8, "DLSTM2")):
        add_conv(f"Conv{k}", 3, 3, 64, 64)
        if lstm:
            L.append(LayerSpec("dist_lstm", name, hidden_dim=64))
        else:
            add_conv(f"{name}_conv", 3, 3, 64, 64)
    # decoder: collapse height 20 -> 4 -> 1, then widen x8
    add_conv("Conv9", 1, 5, 64, 64, (1, 5), "valid")
    add_conv("Conv10", 1, 4, 64, 1, (1, 4), "valid", act="sigmoid")
    L.append(LayerSpec("upsample", "Upsample", factor=8))
    return NetworkSpec(input_shape, L)


def build_toy(input_shape: Shape3 = Shape3(16, 8, 2)) -> NetworkSpec:
    """A small chain with one layer of every kind, for finite-difference checks."""
    d = input_shape.channels
    h2 = -(-input_shape.height // 2)
    return NetworkSpec(input_shape, [
        conv("conv_a", 3, 3, d, 3, (2, 2)),
        LayerSpec("activation", "conv_a_relu", activation="relu"),
        LayerSpec("dist_lstm", "lstm_a", hidden_dim=3),
        conv("conv_b", 1, 3, 3, 2, (1, 1)),
        LayerSpec("activation", "conv_b_linear", activation="linear"),
        conv("conv_c", 1, h2, 2, 1, (1, h2), "valid"),
        LayerSpec("activation", "conv_c_sigmoid", activation="sigmoid"),
        LayerSpec("upsample", "up", factor=2),
    ])


def infer_shapes(spec: NetworkSpec) -> list[Shape3]:
    """Input shape followed by each layer's output shape."""
    shapes = [spec.input_shape]
    for ls in spec.layers:
        try:
            shapes.append(ls.make(shapes[-1]).output_shape(shapes[-1]))
        except ShapeError as e:
            raise BuildError(f"layer {ls.name!r} ({ls.kind}): {e}") from None
    return shapes


def dump_spec(spec: NetworkSpec) -> str:
    """One line per layer: name, kind, kernel, stride, output shape."""
    shapes = infer_shapes(spec)
    lines = [f"{'name':<16}{'kind':<12}{'kernel':<10}{'stride':<8}{'output':<14}",
             f"{'Input':<16}{'-':<12}{'-':<10}{'-':<8}{str(spec.input_shape):<14}"]
    for ls, out in zip(spec.layers, shapes[1:]):
        lines.append(f"{ls.name:<16}{ls.kind:<12}{ls.kernel_text():<10}{ls.stride_text():<8}{str(out):<14}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# architecture text files
#
#   input 600x160x5
#   conv Conv1 kernel=3x3 out=64 stride=2x2 padding=same
#   activation Conv1_relu fn=relu
#   dist_lstm DLSTM1 hidden=64
#   upsample Upsample factor=8

def _pair(text, what, lineno):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise BuildError(f"line {lineno}: bad {what} {text!r}, expected AxB") from None


def parse_arch(text: str) -> NetworkSpec:
    input_shape = None
    layers = []
    channels = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "input":
            if len(rest) != 1:
                raise BuildError(f"line {lineno}: expected 'input WxHxC'")
            try:
                input_shape = Shape3.parse(rest[0])
            except ShapeError as e:
                raise BuildError(f"line {lineno}: {e}") from None
            channels = input_shape.channels
            continue
        if input_shape is None:
            raise BuildError(f"line {lineno}: 'input' must come first")
        if head not in KINDS or not rest:
            raise BuildError(f"line {lineno}: expected '<kind> <name> key=value...', got {line!r}")
        name, opts = rest[0], {}
        for tok in rest[1:]:
            if "=" not in tok:
                raise BuildError(f"line {lineno}: expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            opts[k] = v
        try:
            if head == "conv":
                kw, kh = _pair(opts.pop("kernel"), "kernel", lineno)
                out = int(opts.pop("out"))
                sw, sh = _pair(opts.pop("stride", "1x1"), "stride", lineno)
                pad = opts.pop("padding", "same")
                ls = conv(name, kw, kh, channels, out, (sw, sh), pad)
                channels = out
            elif head == "dist_lstm":
                ls = LayerSpec("dist_lstm", name, hidden_dim=int(opts.pop("hidden")))
                channels = ls.hidden_dim
            elif head == "activation":
                ls = LayerSpec("activation", name, activation=opts.pop("fn"))
            else:
                ls = LayerSpec("upsample", name, factor=int(opts.pop("factor", "8")))
        except KeyError as e:
            raise BuildError(f"line {lineno}: missing option {e.args[0]!r}") from None
        except (ValueError, ShapeError) as e:
            raise BuildError(f"line {lineno}: {e}") from None
        if opts:
            raise BuildError(f"line {lineno}: unknown option(s) {sorted(opts)}")
        layers.append(ls)
    if input_shape is None:
        raise BuildError("architecture has no 'input' line")
    return NetworkSpec(input_shape, layers)


def format_arch(spec: NetworkSpec) -> str:
    lines = [f"input {spec.input_shape}"]
    for ls in spec.layers:
        if ls.kind == "conv":
            c = ls.conv
            lines.append(f"conv {ls.name} kernel={c.kernel_w}x{c.kernel_h} out={c.out_channels} "
                         f"stride={c.stride[0]}x{c.stride[1]} padding={c.padding}")
        elif ls.kind == "dist_lstm":
            lines.append(f"dist_lstm {ls.name} hidden={ls.hidden_dim}")
        elif ls.kind == "activation":
            lines.append(f"activation {ls.name} fn={ls.activation}")
        else:
            lines.append(f"upsample {ls.name} factor={ls.factor}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# instantiated networks

class Network:
    def __init__(self, spec: NetworkSpec, layers=None):
        self.spec = spec
        self.shapes = infer_shapes(spec)
        out = self.shapes[-1]
        if out.height != 1 or out.channels != 1:
            raise BuildError(f"network must end in a w x 1 x 1 map, got {out}")
        if layers is None:
            layers = [ls.make(s) for ls, s in zip(spec.layers, self.shapes)]
        self.layers = layers

    @classmethod
    def build(cls, spec: NetworkSpec, seed: int = 0) -> "Network":
        net = cls(spec)
        rng = make_rng(seed)
        for layer in net.layers:
            layer.init(rng)
        return net

    @property
    def output_width(self) -> int:
        return self.shapes[-1].width

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def param_names(self) -> list[str]:
        names = []
        for ls, layer in zip(self.spec.layers, self.layers):
            tags = {"conv": ["weights", "bias"], "dist_lstm": ["W", "U", "b"],
                    "upsample": ["kernel", "bias"]}.get(ls.kind, [])
            names.extend(f"{ls.name}.{t}" for t in tags[:len(layer.params())])
        return names

    def set_params(self, values) -> None:
        for dst, src in zip(self.params(), values):
            dst[...] = src

    def copy(self) -> "Network":
        net = Network(self.spec)
        net.set_params(self.params())
        return net

    def forward(self, x, train: bool = False, counter: MacCounter | None = None):
        """Boundary vector of length ``output_width``; with ``train=True`` also the caches."""
        a = x.data if isinstance(x, Tensor3) else np.asarray(x, dtype=np.float64)
        if a.shape != self.spec.input_shape.as_hwd():
            got = f"{a.shape[1]}x{a.shape[0]}x{a.shape[2]}" if a.ndim == 3 else str(a.shape)
            raise ShapeError(f"network expects {self.spec.input_shape}, got {got}")
        caches = []
        for layer in self.layers:
            a, cache = layer.forward(a, counter=counter)
            if train:
                caches.append(cache)
        out = a.reshape(-1)
        return (out, caches) if train else out

    def backward(self, caches, grad_out) -> list[np.ndarray]:
        """Parameter gradients, aligned with ``params()``."""
        if not caches or len(caches) != len(self.layers):
            raise RuntimeError("backward needs the caches from forward(..., train=True)")
        g = np.asarray(grad_out, dtype=np.float64).reshape(self.shapes[-1].as_hwd())
        per_layer = []
        for i in range(len(self.layers) - 1, -1, -1):
            g, grads = self.layers[i].backward(caches[i], g, need_input_grad=i > 0)
            per_layer.append(grads)
        return [gr for grads in reversed(per_layer) for gr in grads]

    def param_count(self) -> int:
        return sum(p.size for p in self.params())


def forward(net: Network, x, train: bool = False):
    return net.forward(x, train=train)


def backward(net: Network, caches, grad_out):
    return net.backward(caches, grad_out)


# --------------------------------------------------------------------------
# weight files
#
# header: b"RLSTMSEG", u32 version, u32 layer count, u32 x3 input shape (w, h, d)
# per layer: u32 name length, UTF-8 name, u8 kind tag, u32 config length n,
#            n x u32 config dims, then each parameter array (weights first,
#            bias last) as little-endian f64 in C order.
# config dims: conv (kw, kh, cin, cout, sw, sh, padding 0=same/1=valid);
#              dist_lstm (d_in, d_hidden); activation (fn code); upsample (factor)

MAGIC = b"RLSTMSEG"
FORMAT_VERSION = 1
_KIND_TAG = {"conv": 1, "dist_lstm": 2, "activation": 3, "upsample": 4}
_TAG_KIND = {v: k for k, v in _KIND_TAG.items()}


def _config_dims(ls: LayerSpec, layer) -> list[int]:
    if ls.kind == "conv":
        c = ls.conv
        return [c.kernel_w, c.kernel_h, c.in_channels, c.out_channels, c.stride[0], c.stride[1],
                0 if c.padding == "same" else 1]
    if ls.kind == "dist_lstm":
        return [layer.input_dim, layer.hidden_dim]
    if ls.kind == "activation":
        return [ACTIVATIONS.index(ls.activation)]
    return [ls.factor]


def weights_to_bytes(net: Network) -> bytes:
    s = net.spec.input_shape
    parts = [MAGIC, struct.pack("<5I", FORMAT_VERSION, len(net.layers), s.width, s.height, s.channels)]
    for ls, layer in zip(net.spec.layers, net.layers):
        name = ls.name.encode("utf-8")
        dims = _config_dims(ls, layer)
        parts.append(struct.pack("<I", len(name)) + name)
        parts.append(struct.pack("<BI", _KIND_TAG[ls.kind], len(dims)))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
        for p in layer.params():
            parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def save_weights(net: Network, path) -> None:
    Path(path).write_bytes(weights_to_bytes(net))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def weights_from_bytes(buf: bytes) -> Network:
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad magic, not a weight file", 0)
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", r.pos - 4)
    count, w, h, d = r.unpack("<4I", "header")
    try:
        input_shape = Shape3(w, h, d)
    except ShapeError as e:
        raise FormatError(str(e), r.pos - 12) from None
    specs, arrays = [], []
    for _ in range(count):
        start = r.pos
        (n,) = r.unpack("<I", "name length")
        try:
            name = r.take(n, "layer name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("layer name is not UTF-8", start + 4) from None
        tag, ndims = r.unpack("<BI", "kind tag")
        if tag not in _TAG_KIND:
            raise FormatError(f"unknown kind tag {tag}", r.pos - 5)
        kind = _TAG_KIND[tag]
        dims = r.unpack(f"<{ndims}I", "config dims")
        try:
            if kind == "conv":
                kw, kh, cin, cout, sw, sh, pad = dims
                ls = conv(name, kw, kh, cin, cout, (sw, sh), "valid" if pad else "same")
                shapes = [(kh, kw, cin, cout), (cout,)]
            elif kind == "dist_lstm":
                d1, dl = dims
                ls = LayerSpec("dist_lstm", name, hidden_dim=dl)
                shapes = [(4 * dl, d1), (4 * dl, dl), (4 * dl,)]
            elif kind == "activation":
                (code,) = dims
                ls = LayerSpec("activation", name, activation=ACTIVATIONS[code])
                shapes = []
            else:
                (factor,) = dims
                ls = LayerSpec("upsample", name, factor=factor)
                shapes = [(factor,), (1,)]
        except (ValueError, IndexError, ShapeError, BuildError) as e:
            raise FormatError(f"bad config for layer {name!r}: {e}", start) from None
        specs.append(ls)
        layer_arrays = []
        for shp in shapes:
            nbytes = 8 * int(np.prod(shp))
            layer_arrays.append(np.frombuffer(r.take(nbytes, f"{name} parameters"), dtype="<f8")
                                .astype(np.float64).reshape(shp))
        arrays.append(layer_arrays)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last layer", r.pos)
    try:
        net = Network(NetworkSpec(input_shape, specs))
    except BuildError as e:
        raise FormatError(f"layers do not chain: {e}", len(MAGIC)) from None
    for layer, layer_arrays in zip(net.layers, arrays):
        for dst, src in zip(layer.params(), layer_arrays):
            if dst.shape != src.shape:
                raise FormatError(f"parameter shape mismatch in {type(layer).__name__}", len(MAGIC))
            dst[...] = src
    return net


def load_weights(path) -> Network:
    return weights_from_bytes(Path(path).read_bytes())
