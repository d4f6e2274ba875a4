import numpy as np
import pytest

from oracles import conv_loop, lstm_rows_scalar, upsample_loop
from roadlstm.analysis import count_params
from roadlstm.network import (BuildError, FormatError, LayerSpec, Network, NetworkSpec, build_roadnet,
                              build_toy, conv, dump_spec, format_arch, infer_shapes, load_weights,
                              parse_arch, save_weights, weights_from_bytes, weights_to_bytes)
from roadlstm.tensor import Shape3, ShapeError, Tensor3, make_rng


def test_roadnet_shape_chain():
    spec = build_roadnet()
    shapes = {ls.name: s for ls, s in zip(spec.layers, infer_shapes(spec)[1:])}
    assert shapes["Conv1"] == Shape3(300, 80, 64)
    assert shapes["Conv3"] == Shape3(150, 40, 64)
    assert shapes["Conv5"] == Shape3(75, 20, 64)
    for name in ("Conv6", "Conv7", "DLSTM1", "Conv8", "DLSTM2"):
        assert shapes[name] == Shape3(75, 20, 64)
    assert shapes["Conv9"] == Shape3(75, 4, 64)
    assert shapes["Conv10"] == Shape3(75, 1, 1)
    assert shapes["Upsample"] == Shape3(600, 1, 1)


def test_encoder_halves_three_times():
    spec = build_roadnet()
    convs = [s for ls, s in zip(spec.layers, infer_shapes(spec)[1:]) if ls.kind == "conv"]
    sizes = [(600, 160)] + [(s.width, s.height) for s in convs[:6]]
    distinct = sorted(set(sizes), reverse=True)
    assert distinct == [(600, 160), (300, 80), (150, 40), (75, 20)]


def test_empty_layer_list():
    assert infer_shapes(NetworkSpec(Shape3(4, 4, 1))) == [Shape3(4, 4, 1)]


def test_chain_break_names_layer():
    spec = NetworkSpec(Shape3(8, 8, 5), [conv("first", 3, 3, 5, 64), conv("second", 3, 3, 64, 64),
                                         conv("bad", 3, 3, 5, 64)])
    with pytest.raises(BuildError, match="bad"):
        infer_shapes(spec)


def test_network_must_end_in_row():
    with pytest.raises(BuildError):
        Network(NetworkSpec(Shape3(4, 4, 1), [conv("c", 1, 1, 1, 2)]))


def zeroed(net):
    for layer in net.layers:
        if layer.kind in ("conv", "dist_lstm"):
            for p in layer.params():
                p[...] = 0.0
    return net


def test_zero_network_outputs_half():
    net = zeroed(Network.build(build_roadnet(), seed=1))
    x = make_rng(0).uniform(size=(160, 600, 5))
    out = net.forward(Tensor3(x))
    assert out.shape == (600,)
    assert np.all(out == 0.5)


def test_roadnet_forward_length_and_range():
    net = Network.build(build_roadnet(), seed=2)
    out = net.forward(make_rng(1).uniform(size=(160, 600, 5)))
    assert out.shape == (600,)
    assert np.all((out >= 0) & (out <= 1))


def test_forward_rejects_wrong_shape():
    net = Network.build(build_toy(), seed=0)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((8, 15, 2)))


def test_tiny_network_equals_oracle_composition():
    spec = build_toy(Shape3(16, 8, 2))
    net = Network.build(spec, seed=3)
    rng = make_rng(4)
    for layer in net.layers:
        for p in layer.params():
            p[...] = rng.normal(scale=0.5, size=p.shape)
    x = rng.normal(size=(8, 16, 2))
    a = x
    for ls, layer in zip(spec.layers, net.layers):
        if ls.kind == "conv":
            a = conv_loop(a, layer.weights, layer.bias, ls.conv.stride, ls.conv.padding)
        elif ls.kind == "dist_lstm":
            a = lstm_rows_scalar(a, layer.W, layer.U, layer.b)
        elif ls.kind == "activation":
            a = {"relu": lambda v: np.maximum(v, 0), "linear": lambda v: v,
                 "sigmoid": lambda v: 1 / (1 + np.exp(-v))}[ls.activation](a)
        else:
            a = upsample_loop(a.ravel(), layer.kernel, layer.bias[0]).reshape(1, -1, 1)
    np.testing.assert_allclose(net.forward(x), a.ravel(), rtol=0, atol=1e-12)


def test_backward_zero_grad_and_determinism():
    net = Network.build(build_toy(), seed=5)
    x = make_rng(6).normal(size=(8, 16, 2))
    out, caches = net.forward(x, train=True)
    assert all(not g.any() for g in net.backward(caches, np.zeros_like(out)))
    g1 = net.backward(caches, np.ones_like(out))
    _, caches2 = net.forward(x, train=True)
    g2 = net.backward(caches2, np.ones_like(out))
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))
    assert [g.shape for g in g1] == [p.shape for p in net.params()]


def test_backward_without_caches():
    net = Network.build(build_toy(), seed=0)
    with pytest.raises(RuntimeError):
        net.backward([], np.zeros(16))


def test_forward_is_stateless():
    net = Network.build(build_toy(), seed=7)
    rng = make_rng(8)
    xs = [rng.normal(size=(8, 16, 2)) for _ in range(3)]
    a = [net.forward(x) for x in xs]
    b = [net.forward(x) for x in reversed(xs)][::-1]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


# --- weight files ---------------------------------------------------------------

def test_save_load_save_is_byte_identical(tmp_path):
    net = Network.build(build_roadnet(), seed=9)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_weights(net, p1)
    loaded = load_weights(p1)
    save_weights(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), loaded.params()))
    assert dump_spec(loaded.spec) == dump_spec(net.spec)


def test_file_float_count_equals_param_count():
    net = Network.build(build_roadnet(), seed=0)
    assert net.param_count() == count_params(net.spec).total_params
    buf = weights_to_bytes(net)
    # header + per-layer records; subtract everything except the raw floats
    meta = 8 + 4 * 5
    for ls in net.spec.layers:
        ndims = {"conv": 7, "dist_lstm": 2, "activation": 1, "upsample": 1}[ls.kind]
        meta += 4 + len(ls.name.encode()) + 1 + 4 + 4 * ndims
    assert (len(buf) - meta) // 8 == count_params(net.spec).total_params
    assert (len(buf) - meta) % 8 == 0


def test_header_layout():
    buf = weights_to_bytes(Network.build(build_toy(), seed=0))
    assert buf[:8] == b"RLSTMSEG"
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:16], "little") == len(build_toy().layers)


@pytest.mark.parametrize("cut", [3, 10, 30, 100, -1])
def test_truncated_file(cut):
    buf = weights_to_bytes(Network.build(build_toy(), seed=0))
    with pytest.raises(FormatError) as e:
        weights_from_bytes(buf[:cut])
    assert e.value.offset <= len(buf[:cut])


def test_bad_magic_and_version():
    buf = bytearray(weights_to_bytes(Network.build(build_toy(), seed=0)))
    bad = bytes(b"XXXXXXXX" + buf[8:])
    with pytest.raises(FormatError, match="magic"):
        weights_from_bytes(bad)
    buf[8] = 9
    with pytest.raises(FormatError, match="version") as e:
        weights_from_bytes(bytes(buf))
    assert e.value.offset == 8


def test_trailing_bytes_rejected():
    buf = weights_to_bytes(Network.build(build_toy(), seed=0))
    with pytest.raises(FormatError, match="trailing"):
        weights_from_bytes(buf + b"\0")


# --- architecture files ---------------------------------------------------------

def test_arch_round_trip():
    spec = build_roadnet()
    again = parse_arch(format_arch(spec))
    assert again.input_shape == spec.input_shape
    assert again.layers == spec.layers


def test_arch_parse_error_has_line_number():
    text = "input 600x160x5\nconv c1 kernel=3x3 out=64\nconv c2 kernel=3 out=64\n"
    with pytest.raises(BuildError, match="line 3"):
        parse_arch(text)
    with pytest.raises(BuildError, match="line 2"):
        parse_arch("input 8x8x1\nwidget w1\n")
    with pytest.raises(BuildError, match="unknown option"):
        parse_arch("input 8x8x1\nconv c kernel=1x1 out=1 colour=red\n")


def test_pure_cnn_variant_builds():
    spec = build_roadnet(lstm=False)
    assert not any(ls.kind == "dist_lstm" for ls in spec.layers)
    assert infer_shapes(spec)[-1] == Shape3(600, 1, 1)


def test_layerspec_validation():
    with pytest.raises(BuildError):
        LayerSpec("pool", "p")
    with pytest.raises(BuildError):
        LayerSpec("activation", "a", activation="gelu")
