import math

import numpy as np
import pytest

from lbcnn.data import Dataset, synthetic_gaussian
from lbcnn.errors import DataError, FormatError, ParameterError, TrainingError
from lbcnn.network import Network, desk_spec, parse_spec
from lbcnn.train import (RunMetrics, TrainConfig, cross_entropy, evaluate, grad_check, load_model, save_model,
                         train)

SMALL = """
input c=2 h=8 w=8
conv q=4 k=3
res{ lbc m=6 q=4 k=3 sparsity=0.5 act=relu }
res{ lbc m=6 q=4 k=3 sparsity=0.5 act=relu }
avgpool out=4
fc out=5
"""


def small_data(n=24, seed=0):
    ds = synthetic_gaussian(n, 2, 8, 8, seed=seed, n_classes=5)
    return ds.take(np.arange(n // 2)), ds.take(np.arange(n // 2, n))


def test_cross_entropy_uniform():
    loss, grad = cross_entropy(np.zeros((3, 10)), np.array([0, 4, 9]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_cross_entropy_stable():
    loss, grad = cross_entropy(np.array([[1e3, 0.0, -1e3]]), np.array([2]))
    assert loss == pytest.approx(2e3) and np.all(np.isfinite(grad))
    loss, _ = cross_entropy(np.array([[1e3, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_fd(rng):
    logits = rng.standard_normal((4, 5))
    labels = np.array([0, 3, 4, 1])
    _, grad = cross_entropy(logits, labels)
    eps = 1e-6
    for idx in np.ndindex(logits.shape):
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += eps
        lm[idx] -= eps
        num = (cross_entropy(lp, labels)[0] - cross_entropy(lm, labels)[0]) / (2 * eps)
        assert abs(num - grad[idx]) / max(abs(num), abs(grad[idx])) < 1e-6


def test_cross_entropy_label_range():
    with pytest.raises(DataError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(lr=-1)
    with pytest.raises(ParameterError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(lr=1.0, epochs=20)
    assert cfg.decay_points() == {10: pytest.approx(0.1), 15: pytest.approx(0.1)}
    assert cfg.lr_at(9) == 1.0 and cfg.lr_at(10) == pytest.approx(0.1) and cfg.lr_at(19) == pytest.approx(0.01)


def test_zero_lr_leaves_params_unchanged():
    spec = parse_spec(SMALL)
    net = Network(spec)
    net.init_params(np.random.default_rng(TrainConfig().seed))
    before = {k: v.copy() for k, v in net.params().items()}
    trained, _ = train(spec, small_data(), TrainConfig(lr=0.0, epochs=2, batch_size=5, momentum=0.9), net=net)
    for k, v in trained.params().items():
        np.testing.assert_array_equal(v, before[k])


def test_single_sample_loss_decreases():
    spec = parse_spec(SMALL)
    ds = Dataset(synthetic_gaussian(1, 2, 8, 8, seed=3).images, np.array([0]), n_classes=5)
    _, m = train(spec, (ds, None), TrainConfig(lr=1e-2, epochs=6, batch_size=1, schedule={}))
    losses = [r.train_loss for r in m.epochs]  # one step per epoch; loss before each step
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_is_deterministic():
    spec = parse_spec(SMALL)
    cfg = TrainConfig(lr=0.05, epochs=2, batch_size=4, seed=3, momentum=0.9)
    _, a = train(spec, small_data(), cfg)
    _, b = train(spec, small_data(), cfg)
    assert a == b
    assert a.to_csv() == b.to_csv()


def test_shared_and_unshared_with_identical_banks_match():
    base = SMALL.replace("act=relu }", "act=relu seed=11 }")
    cfg = TrainConfig(lr=0.05, epochs=2, batch_size=4, seed=1)
    _, a = train(parse_spec(base), small_data(), cfg)
    _, b = train(parse_spec("share_bank seed=11\n" + base), small_data(), cfg)
    assert a == b


def test_nan_loss_aborts_with_epoch():
    tr, _ = small_data()
    images = tr.images.copy()
    images[3, 0, 0, 0] = np.nan
    bad = Dataset(images, tr.labels, n_classes=5)
    with pytest.raises(TrainingError) as info:
        train(parse_spec(SMALL), (bad, None), TrainConfig(epochs=3, batch_size=4))
    assert info.value.epoch == 1


def test_metrics_csv_and_order():
    _, m = train(parse_spec(SMALL), small_data(), TrainConfig(lr=0.05, epochs=2, batch_size=6))
    lines = m.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc,seconds"
    assert lines[1].startswith("1,") and lines[1].endswith(",")
    assert all(0 <= r.train_acc <= 1 and 0 <= r.test_acc <= 1 for r in m.epochs)
    assert m.ops.multiplications > 0
    with pytest.raises(ValueError):
        RunMetrics().append(m.epochs[1]) or RunMetrics(epochs=[m.epochs[1]]).append(m.epochs[0])


def test_grad_check_linear_net(rng):
    spec = parse_spec("input c=2 h=5 w=5\nconv q=3 k=3\nfc out=4\n")
    net = Network(spec)
    net.init_params(rng)
    x = rng.standard_normal((3, 2, 5, 5))
    labels = np.array([0, 1, 3])
    # squared error: the loss is quadratic in each coordinate, so central differences are exact up to rounding
    res = grad_check(spec, net.params(), x, labels, eps=1e-4, n_coords=60, loss="mse")
    assert res.checked == 60 and res.excluded == 0
    assert res.max_rel_err < 1e-8
    # cross-entropy is not quadratic; the eps^2 truncation term is visible but small
    res = grad_check(spec, net.params(), x, labels, eps=1e-4, n_coords=60)
    assert res.max_rel_err < 1e-6


def test_squared_error_gradient(rng):
    from lbcnn.train import squared_error

    logits = rng.standard_normal((3, 4))
    labels = np.array([0, 2, 3])
    loss, grad = squared_error(logits, labels)
    target = np.eye(4)[labels]
    assert loss == pytest.approx(0.5 * np.sum((logits - target) ** 2) / 3)
    np.testing.assert_allclose(grad, (logits - target) / 3)


def test_grad_check_sigmoid_lbc_net(rng):
    spec = parse_spec(SMALL.replace("relu", "sigmoid"))
    net = Network(spec)
    net.init_params(rng)
    x = rng.standard_normal((2, 2, 8, 8))
    res = grad_check(spec, net.params(), x, np.array([1, 4]), eps=1e-5, n_coords=80)
    assert res.checked == 80
    assert res.max_rel_err < 1e-5


def test_grad_check_excludes_planted_kink():
    spec = parse_spec("input c=1 h=1 w=1\nconv q=2 k=1 act=relu\nfc out=2\n")
    params = {"b0.w": np.array([0.0, 0.7]).reshape(2, 1, 1, 1), "b1.w": np.array([[0.3, -0.2], [0.5, 0.1]])}
    res = grad_check(spec, params, np.ones((1, 1, 1, 1)), np.array([1]), eps=1e-5, n_coords=50)
    assert res.excluded == 1
    assert res.checked == 5
    assert res.max_rel_err < 1e-8


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ParameterError):
        grad_check(parse_spec(SMALL), Network(parse_spec(SMALL)).params(), np.zeros((1, 2, 8, 8)), np.array([0]), eps=0)


def test_model_round_trip(tmp_path):
    spec = parse_spec(SMALL)
    net, _ = train(spec, small_data(), TrainConfig(lr=0.05, epochs=1, batch_size=6, seed=4))
    path = tmp_path / "m.lbcm"
    save_model(net, path)
    back = load_model(path)
    assert back.params().keys() == net.params().keys()
    for k, v in net.params().items():
        assert back.params()[k].tobytes() == v.tobytes()
    assert back.banks == net.banks
    x = small_data()[1].images
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
    assert evaluate(back, small_data()[1]) == evaluate(net, small_data()[1])


def test_shared_model_is_smaller_by_bank_headers(tmp_path):
    unshared, shared = Network(desk_spec("lbc")), Network(desk_spec("lbc", share_bank=True))
    save_model(unshared, tmp_path / "u.lbcm")
    save_model(shared, tmp_path / "s.lbcm")
    diff = (tmp_path / "u.lbcm").stat().st_size - (tmp_path / "s.lbcm").stat().st_size
    assert diff == 3 * 38
    back = load_model(tmp_path / "s.lbcm")
    assert back.spec.share_bank and len(back.banks) == 1 and back.bank_index == [0, 0, 0, 0]


def test_model_file_errors(tmp_path):
    net = Network(parse_spec(SMALL))
    path = tmp_path / "m.lbcm"
    save_model(net, path)
    raw = path.read_bytes()
    for n in (3, 10, len(raw) // 2, len(raw) - 1):
        (tmp_path / "t.lbcm").write_bytes(raw[:n])
        with pytest.raises(FormatError):
            load_model(tmp_path / "t.lbcm")
    (tmp_path / "b.lbcm").write_bytes(b"XBCM" + raw[4:])
    with pytest.raises(FormatError):
        load_model(tmp_path / "b.lbcm")
    (tmp_path / "v.lbcm").write_bytes(raw[:4] + b"\x07\x00" + raw[6:])
    with pytest.raises(FormatError, match="version"):
        load_model(tmp_path / "v.lbcm")
    flipped = bytearray(raw)
    flipped[-20] ^= 1
    (tmp_path / "f.lbcm").write_bytes(bytes(flipped))
    with pytest.raises(FormatError):
        load_model(tmp_path / "f.lbcm")
