import io

import numpy as np
import pytest

from roadlstm.cli import main
from roadlstm.network import load_weights
from roadlstm.pipeline import boundary_from_mask, boundary_to_mask, read_mask
from roadlstm.train import read_log


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_analyze_table():
    code, text = run("analyze", "--arch", "roadnet")
    assert code == 0
    for name in ("Conv1", "DLSTM1", "Conv10", "Upsample", "Total"):
        assert name in text
    assert "348,298" in text and "reported 348,801" in text
    assert "9:4" in text and "9 : 300" in text


def test_analyze_csv_and_plot(tmp_path):
    png = tmp_path / "costs.png"
    code, text = run("analyze", "--arch", "roadnet", "--input-shape", "600x160x5", "--csv",
                     "--plot", str(png))
    assert code == 0
    lines = text.strip().splitlines()
    assert lines[0].startswith("name,")
    assert len(lines) == 1 + 13 + 1   # header, ten convs, two LSTMs, upsample, total
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_analyze_arch_file(tmp_path):
    f = tmp_path / "net.txt"
    f.write_text("input 8x8x1\nconv a kernel=3x3 out=2 stride=1x1 padding=same\n"
                 "conv b kernel=1x8 out=1 stride=1x1 padding=valid\n")
    code, text = run("analyze", "--arch-file", str(f), "--csv")
    assert code == 0
    assert "a," in text and "b," in text
    f.write_text("input 8x8x1\nconv a kernel=3 out=2\n")
    assert run("analyze", "--arch-file", str(f))[0] == 2


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["analyze", "--no-such-flag"])
    assert e.value.code == 1
    assert run("analyze", "--arch", "resnet")[0] == 1
    assert run("train")[0] == 1
    assert run("eval", "--data", str(tmp_path))[0] == 1


def test_help_shows_training_defaults(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--help"])
    assert e.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    for s in ("default: 100", "default: 1e-05", "default: 80", "default: 0.0002", "0.02%"):
        assert s in text


def test_grad_check_exit_codes():
    code, text = run("grad-check")
    assert code == 0 and "PASS" in text
    code, text = run("grad-check", "--corrupt-layer", "lstm_a.U")
    assert code == 3 and "FAIL" in text


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    code, _ = run("gen-data", "--out", str(root), "--n", "3", "--size", "64x160", "--seed", "1")
    assert code == 0
    return root


def test_gen_data_layout(dataset):
    assert sorted(p.name for p in (dataset / "images").iterdir()) == \
        ["scene_0000.png", "scene_0001.png", "scene_0002.png"]
    assert len(list((dataset / "masks").iterdir())) == 3


def test_eval_oracle_is_perfect(dataset, tmp_path):
    csv_path = tmp_path / "frames.csv"
    code, text = run("eval", "--data", str(dataset), "--oracle", "--per-frame", str(csv_path),
                     "--plot", str(tmp_path / "m.png"))
    assert code == 0
    assert "F1" in text and "100.00%" in text
    assert len(csv_path.read_text().splitlines()) == 4


def train_args(dataset, tmp_path, tag, *extra):
    return ["train", "--data", str(dataset), "--window", "64x160", "--augment", "false",
            "--val-fraction", "0", "--epochs", "2", "--batch", "2",
            "--out", str(tmp_path / f"{tag}.bin"), "--log", str(tmp_path / f"{tag}.csv"), *extra]


def test_train_lr_zero_keeps_init(dataset, tmp_path):
    code, text = run(*train_args(dataset, tmp_path, "z", "--lr", "0", "--seed", "4"))
    assert code == 0
    from roadlstm.network import Network, build_roadnet
    from roadlstm.tensor import Shape3
    init = Network.build(build_roadnet(Shape3(64, 160, 5)), seed=4)
    trained = load_weights(tmp_path / "z.bin")
    assert all(np.array_equal(a, b) for a, b in zip(init.params(), trained.params()))
    assert [r.epoch for r in read_log(tmp_path / "z.csv")] == [1, 2]


def test_train_runs_are_byte_identical(dataset, tmp_path):
    for tag in ("a", "b"):
        assert run(*train_args(dataset, tmp_path, tag, "--lr", "1e-3", "--no-timing"))[0] == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_config_precedence(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# training run\nepochs = 1\nbatch = 3\nno-timing = true\n")
    code, _ = run(*train_args(dataset, tmp_path, "c", "--config", str(cfg)))
    assert code == 0
    # --epochs 2 on the command line beats the file's 1
    assert len(read_log(tmp_path / "c.csv")) == 2
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert all(r.endswith(",") for r in rows[1:])   # no-timing came from the file

    cfg.write_text("epochs = 1\n")
    args = [a for a in train_args(dataset, tmp_path, "d", "--config", str(cfg))]
    i = args.index("--epochs")
    del args[i:i + 2]
    assert run(*args)[0] == 0
    assert len(read_log(tmp_path / "d.csv")) == 1


def test_config_rejects_unknown_key(dataset, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochz = 3\n")
    assert run(*train_args(dataset, tmp_path, "e", "--config", str(cfg)))[0] == 1
    cfg.write_text("epochs = many\n")
    assert run(*train_args(dataset, tmp_path, "e", "--config", str(cfg)))[0] == 1


def test_infer_writes_bottom_connected_mask(dataset, tmp_path):
    assert run(*train_args(dataset, tmp_path, "w", "--epochs", "1"))[0] == 0
    mask_path = tmp_path / "mask.png"
    code, text = run("infer", "--image", str(dataset / "images" / "scene_0000.png"),
                     "--weights", str(tmp_path / "w.bin"), "--out", str(mask_path),
                     "--overlay", str(tmp_path / "over.png"))
    assert code == 0
    m = read_mask(mask_path)
    assert m.shape == (160, 64)
    # at equal frame and window size near and far coincide, so columns are single bottom runs
    assert np.array_equal(boundary_to_mask(boundary_from_mask(m), (64, 160)), m)
    assert (tmp_path / "over.png").exists()


def test_data_errors(tmp_path):
    assert run("eval", "--data", str(tmp_path), "--oracle")[0] == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nonsense")
    (tmp_path / "img.png").write_bytes(b"")
    assert run("infer", "--image", str(tmp_path / "img.png"), "--weights", str(bad))[0] == 2


def test_train_stops_at_target_mae(dataset, tmp_path):
    code, text = run(*train_args(dataset, tmp_path, "t", "--epochs", "5", "--target-mae", "10"))
    assert code == 0
    assert len(read_log(tmp_path / "t.csv")) == 1
    assert "stopped after 1 epochs" in text
