"""Mini-batch SGD training, evaluation, finite-difference gradient checks and model files."""

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .anchors import bank_from_header, bank_header_bytes
from .errors import DataError, FormatError, ParameterError, ShapeError, TrainingError
from .network import Network, parse_spec


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 10
    seed: int = 0
    momentum: float = 0.0  # 0 -> plain SGD
    schedule: dict | None = None  # epoch -> multiplicative factor applied at its start

    def __post_init__(self):
        if not self.lr >= 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")

    def decay_points(self):
        if self.schedule is not None:
            return dict(self.schedule)
        pts = {}
        for frac in (0.5, 0.75):
            e = int(frac * self.epochs)
            if 0 < e < self.epochs:
                pts[e] = pts.get(e, 1.0) * 0.1
        return pts

    def lr_at(self, epoch):
        lr = self.lr
        for e, factor in sorted(self.decay_points().items()):
            if epoch >= e:
                lr *= factor
        return lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class RunMetrics:
    epochs: list = field(default_factory=list)
    ops: object = field(default=None, compare=False)  # OpCounter snapshot

    def append(self, rec):
        if self.epochs and rec.epoch != self.epochs[-1].epoch + 1:
            raise ValueError("epochs must be recorded in order")
        self.epochs.append(rec)

    @property
    def final_test_acc(self):
        return self.epochs[-1].test_acc if self.epochs else float("nan")

    def to_csv(self, timing=False):
        lines = ["epoch,train_loss,train_acc,test_acc,seconds"]
        for r in self.epochs:
            secs = f"{r.seconds:.3f}" if timing else ""
            lines.append(f"{r.epoch},{r.train_loss:.10g},{r.train_acc:.10g},{r.test_acc:.10g},{secs}")
        return "\n".join(lines) + "\n"


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, K = logits.shape
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"labels must lie in [0, {K})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def squared_error(logits, labels):
    """Half the mean squared distance between logits and one-hot targets, with its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    n, K = logits.shape
    labels = np.asarray(labels)
    if n and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"labels must lie in [0, {K})")
    diff = logits.copy()
    diff[np.arange(n), labels] -= 1.0
    return 0.5 * float(np.sum(diff * diff)) / n, diff / n


LOSSES = {"ce": cross_entropy, "mse": squared_error}


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def evaluate(net, ds, batch_size=100):
    """Classification accuracy of ``net`` on ``ds``."""
    if len(ds) == 0:
        return float("nan")
    correct = 0
    for sl in _batches(len(ds), batch_size):
        logits = net.forward(ds.images[sl])
        correct += int(np.sum(np.argmax(logits, axis=1) == ds.labels[sl]))
    net.clear()
    return correct / len(ds)


def train(spec, data, cfg, net=None, log=None):
    """Train the learnable tensors of ``spec`` with mini-batch SGD.

    ``data`` is ``(train_ds, test_ds)``; ``test_ds`` may be None. Returns
    ``(net, metrics)``; ``net.params()`` holds the trained tensors. Anchor
    banks are fingerprinted before training and re-checked after every epoch.
    """
    train_ds, test_ds = data
    if tuple(train_ds.images.shape[1:]) != tuple(spec.input_shape):
        raise DataError(f"data shape {train_ds.images.shape[1:]} does not match spec input {spec.input_shape}")
    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if net is None:
        net = Network(spec, seed=cfg.seed)
        net.init_params(np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    prints = [b.fingerprint() for b in net.banks]
    params = net.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    metrics = RunMetrics()
    n = len(train_ds)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch - 1)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for sl in _batches(n, cfg.batch_size):
            idx = order[sl]
            logits = net.forward(train_ds.images[idx])
            loss, grad = cross_entropy(logits, train_ds.labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} in epoch {epoch}", epoch)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == train_ds.labels[idx]))
            net.backward(grad)
            grads = net.grads()
            for k, p in params.items():
                g = grads[k]
                if cfg.momentum:
                    vel = velocity[k]
                    vel *= cfg.momentum
                    vel -= lr * g
                    p += vel
                else:
                    p -= lr * g
        net.clear()
        if [b.fingerprint() for b in net.banks] != prints:
            raise TrainingError(f"anchor bank modified during epoch {epoch}", epoch)
        test_acc = evaluate(net, test_ds) if test_ds is not None else float("nan")
        rec = EpochRecord(epoch, loss_sum / n, correct / n, test_acc, time.perf_counter() - t0)
        metrics.append(rec)
        if log is not None:
            log(rec)
    metrics.ops = net.counter.snapshot()
    return net, metrics


# --- gradient checking -------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    excluded: int
    worst: str = ""

    def __float__(self):
        return float(self.max_rel_err)


def _crosses_kink(base, moved, band):
    """True when a ReLU pre-activation near zero changes side between two evaluations."""
    for z0, z1 in zip(base, moved):
        near = (np.abs(z0) < band) | (np.abs(z1) < band)
        if not near.any():
            continue
        s0, s1 = np.sign(z0[near]), np.sign(z1[near])
        if np.any(s0 != s1):
            return True
    return False


def grad_check(spec, params, x, labels, eps=1e-5, n_coords=64, seed=0, net_seed=0, floor=1e-6, loss="ce"):
    """Compare analytic gradients with central differences on random coordinates.

    ``loss`` is ``"ce"`` (softmax cross-entropy) or ``"mse"`` (squared error
    to one-hot targets, which makes a network without activations quadratic
    in every single coordinate).

    The relative error of a coordinate is |a - n| / max(|a|, |n|, floor).
    A coordinate is excluded when some ReLU pre-activation within ``10 * eps``
    of zero changes sign between the unperturbed and a perturbed evaluation,
    since the finite difference then straddles a kink.
    """
    if eps <= 0:
        raise ParameterError("eps must be > 0")
    if loss not in LOSSES:
        raise ParameterError(f"loss must be one of {sorted(LOSSES)}")
    loss_fn = LOSSES[loss]
    net = Network(spec, seed=net_seed)
    net.set_params(params)
    live = net.params()
    _, grad = loss_fn(net.forward(x), labels)
    base_pre = [z.copy() for z in net.preactivations()]
    net.backward(grad)
    analytic = {k: g.copy() for k, g in net.grads().items()}

    names = list(live)
    sizes = np.array([live[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum(sizes)
    band = 10 * eps
    worst, worst_at, checked, excluded = 0.0, "", 0, 0
    for flat in np.sort(picks):
        t = int(np.searchsorted(bounds, flat, side="right"))
        name = names[t]
        local = int(flat - (bounds[t] - sizes[t]))
        arr = live[name].reshape(-1)
        orig = arr[local]
        arr[local] = orig + eps
        lp, _ = loss_fn(net.forward(x), labels)
        kink = _crosses_kink(base_pre, net.preactivations(), band)
        arr[local] = orig - eps
        lm, _ = loss_fn(net.forward(x), labels)
        kink = kink or _crosses_kink(base_pre, net.preactivations(), band)
        arr[local] = orig
        if kink:
            excluded += 1
            continue
        num = (lp - lm) / (2 * eps)
        a = analytic[name].reshape(-1)[local]
        rel = abs(a - num) / max(abs(a), abs(num), floor)
        checked += 1
        if rel > worst:
            worst, worst_at = rel, f"{name}[{local}]"
    net.clear()
    return GradCheckResult(worst, checked, excluded, worst_at)


# --- model files -----------------------------------------------------------------

MODEL_MAGIC = b"LBCM"
MODEL_VERSION = 1


def save_model(net, path):
    """Write the spec, bank headers and learnable tensors of ``net``.

    Layout (little-endian): magic ``LBCM``, u16 version, u32 spec length and
    UTF-8 spec text; u32 bank count and one bank header per distinct bank;
    u32 LBC layer count and a u32 bank index per layer; u32 tensor count and,
    per tensor, u16 name length, name, u8 ndim, u32 dims, f64 data; finally
    a u32 CRC-32 of everything before it.

    Banks are identified only by their headers (which carry the seeds), so the
    spec text is stored without the ``share_bank`` line; sharing is implied by
    the bank index table. A shared-bank model is therefore smaller than the
    unshared one by exactly one header per extra LBC block.
    """
    import copy

    plain = copy.copy(net.spec)
    plain.share_bank, plain.shared_seed = False, None
    text = plain.to_text().encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(text)), text,
             struct.pack("<I", len(net.banks))]
    parts += [bank_header_bytes(b) for b in net.banks]
    parts.append(struct.pack("<I", len(net.bank_index)))
    parts += [struct.pack("<I", i) for i in net.bank_index]
    params = net.params()
    parts.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob + struct.pack("<I", zlib.crc32(blob)))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("model file truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_model(path):
    """Read a model file; return the rebuilt :class:`Network` with its tensors loaded."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    r = _Reader(body)
    r.take(4)
    version, text_len = r.unpack("<HI")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if zlib.crc32(body) != crc:
        raise FormatError("model file truncated or corrupt (checksum mismatch)")
    spec = parse_spec(r.take(text_len).decode("utf-8"))
    (n_banks,) = r.unpack("<I")
    banks = []
    for _ in range(n_banks):
        bank, r.pos = bank_from_header(r.buf, r.pos)
        banks.append(bank)
    (n_lbc,) = r.unpack("<I")
    index = [r.unpack("<I")[0] for _ in range(n_lbc)]
    (n_tensors,) = r.unpack("<I")
    params = {}
    for _ in range(n_tensors):
        (klen,) = r.unpack("<H")
        name = r.take(klen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(body):
        raise FormatError("trailing bytes in model file")
    if any(i >= len(banks) for i in index):
        raise FormatError("bank index out of range")
    spec.share_bank = len(index) > 1 and len(banks) == 1
    try:
        net = Network(spec, banks=[banks[i] for i in index])
        net.set_params(params)
    except (ShapeError, ParameterError) as exc:
        raise FormatError(f"model contents do not match its spec: {exc}") from exc
    return net
