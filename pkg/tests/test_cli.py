import json
import subprocess
import sys

import numpy as np
import pytest

from lbcnn.cli import dispatch
from lbcnn.lbp import LbpConfig, lbp_encode_classic
from lbcnn.pgm import read_pgm, write_pgm

SINGLE_LBC = "input c=16 h=8 w=8\nlbc m=16 q=16 k=3 sparsity=0.5 act=relu\n"
TINY = "input c=1 h=8 w=8\nconv q=4 k=3\nres{ lbc m=8 q=4 k=3 sparsity=0.5 act=relu }\navgpool out=2\nfc out=10\n"


def test_count_params_ratio_9(tmp_path, capsys):
    (tmp_path / "net.txt").write_text(SINGLE_LBC)
    assert dispatch(["count-params", "--spec", str(tmp_path / "net.txt"), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "learnable,fixed,ratio_vs_cnn"
    assert out[1].split(",")[2] == "9"
    assert (tmp_path / "o" / "params.csv").read_text().splitlines() == out
    assert json.loads((tmp_path / "o" / "run.json").read_text())["command"] == "count-params"


def test_no_subcommand_is_usage_error(capsys):
    assert dispatch([]) == 1
    assert "usage: lbcnn" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["count-params"], ["theorem1-mc", "--threads", "0"],
                                  ["nonsense"]])
def test_usage_errors(argv, capsys):
    assert dispatch(argv) == 1
    assert "usage: lbcnn" in capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert dispatch(["count-params", "--spec", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 2
    assert dispatch(["theorem1-mc", "--t", "1.5", "--trials", "10", "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.lbcm").write_bytes(b"nope")
    assert dispatch(["decorr", "--model", str(tmp_path / "bad.lbcm"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_console_script_exit_status():
    r = subprocess.run([sys.executable, "-m", "lbcnn.cli"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr


def _train(out, spec, seed=7):
    return dispatch(["train", "--dataset", "synthetic", "--epochs", "1", "--threads", "1", "--seed", str(seed),
                     "--spec", str(spec), "--n-train", "40", "--n-test", "20", "--out", str(out)])


def test_train_deterministic_and_model_roundtrip(tmp_path, capsys):
    spec = tmp_path / "net.txt"
    spec.write_text(TINY)
    assert _train(tmp_path / "a", spec) == 0
    assert _train(tmp_path / "b", spec) == 0
    a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b and a.startswith(b"epoch,train_loss,train_acc,test_acc,seconds\n")
    assert (tmp_path / "a" / "model.lbcm").read_bytes() == (tmp_path / "b" / "model.lbcm").read_bytes()
    assert _train(tmp_path / "c", spec, seed=8) == 0
    assert (tmp_path / "c" / "metrics.csv").read_bytes() != a
    # a rerun overwrites rather than appends
    assert _train(tmp_path / "a", spec) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == a
    capsys.readouterr()

    assert dispatch(["eval", "--model", str(tmp_path / "a" / "model.lbcm"), "--dataset", "synthetic", "--seed", "7",
                     "--n-train", "40", "--n-test", "20", "--out", str(tmp_path / "e")]) == 0
    acc = float((tmp_path / "e" / "eval.csv").read_text().splitlines()[1].split(",")[1])
    assert acc == float(a.decode().splitlines()[1].split(",")[3])

    assert dispatch(["decorr", "--model", str(tmp_path / "a" / "model.lbcm"), "--out", str(tmp_path / "d")]) == 0
    rows = (tmp_path / "d" / "decorr.csv").read_text().splitlines()
    assert rows[0] == "layer,metric" and len(rows) == 3
    assert all(0.0 <= float(r.split(",")[1]) <= 1.0 for r in rows[1:])


@pytest.mark.parametrize("size", [3, 5])
def test_lbp_encode(tmp_path, rng, size):
    img = rng.integers(0, 256, size=(12, 9)).astype(np.uint8)
    write_pgm(tmp_path / "in.pgm", img)
    assert dispatch(["lbp-encode", "--input", str(tmp_path / "in.pgm"), "--size", str(size),
                     "--out", str(tmp_path / "code.pgm")]) == 0
    want = lbp_encode_classic(img.astype(np.float64)[None, None], LbpConfig(neighborhood=size))[0, 0]
    got = read_pgm(tmp_path / "code.pgm")
    if size == 3:
        np.testing.assert_array_equal(got, want)
    else:
        np.testing.assert_array_equal(got, np.clip(want, 0, 255))


def test_analysis_commands(tmp_path, capsys):
    assert dispatch(["theorem1-mc", "--m", "8", "--trials", "200", "--out", str(tmp_path / "t")]) == 0
    line = (tmp_path / "t" / "theorem1.csv").read_text().splitlines()[1].split(",")
    assert line[:4] == ["27", "8", "0.5", "200"] and 0.0 <= float(line[4]) <= 1.0
    assert dispatch(["approx-nmse", "--sparsity-grid", "0.5", "--m-grid", "8,16", "--images", "2",
                     "--out", str(tmp_path / "n")]) == 0
    assert len((tmp_path / "n" / "nmse.csv").read_text().splitlines()) == 3
    assert dispatch(["bench-conv", "--n", "1", "--p", "2", "--m", "2", "--size", "8", "--kernels", "3",
                     "--sparsity-grid", "0.5", "--repeats", "1", "--out", str(tmp_path / "b")]) == 0
    rows = [r.split(",") for r in (tmp_path / "b" / "bench.csv").read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == ["dense3x3", "sparse3x3"]
    assert int(rows[0][2]) > 0 and int(rows[1][2]) == 0
    (tmp_path / "g.txt").write_text(TINY)
    assert dispatch(["grad-check", "--spec", str(tmp_path / "g.txt"), "--coords", "8",
                     "--out", str(tmp_path / "g")]) == 0
    err = float((tmp_path / "g" / "gradcheck.csv").read_text().splitlines()[1].split(",")[0])
    assert err < 1e-5
    capsys.readouterr()
