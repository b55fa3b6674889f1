"""Command-line entry point: ``lbcnn <subcommand> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
Every subcommand writes its artifacts under ``--out`` (overwriting) together
with a ``run.json`` echo of its resolved flags.
"""

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .errors import LbcError

SYNOPSIS = "usage: lbcnn {train,eval,lbp-encode,count-params,approx-nmse,decorr,bench-conv,grad-check,theorem1-mc} [flags]"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p, out=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    if out:
        p.add_argument("--out", default="out", help="output directory")


def build_parser():
    ap = _Parser(prog="lbcnn", description="Local binary convolution networks: training and analysis tools.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a network and write metrics.csv and model.lbcm")
    _common(p)
    p.add_argument("--spec", help="network spec file (default: 4-block LBC desk net)")
    p.add_argument("--dataset", choices=["mnist", "synthetic"], default="mnist")
    p.add_argument("--data-dir")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--timing", action="store_true", help="fill the seconds column of metrics.csv")

    p = sub.add_parser("eval", help="accuracy of a saved model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", choices=["mnist", "synthetic"], default="mnist")
    p.add_argument("--data-dir")
    p.add_argument("--n-train", type=int, help="size of the training slice to hold out (as in train)")
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("lbp-encode", help="LBP-encode a P5 PGM image")
    _common(p, out=False)
    p.add_argument("--input", required=True)
    p.add_argument("--size", type=int, choices=[3, 5], default=3)
    p.add_argument("--out", required=True, help="output PGM path")

    p = sub.add_parser("count-params", help="learnable/fixed parameter counts of a spec")
    _common(p)
    p.add_argument("--spec", required=True)

    p = sub.add_parser("approx-nmse", help="NMSE of LBC approximations to random dense filters")
    _common(p)
    p.add_argument("--sparsity-grid", type=_floats, default=[round(0.1 * i, 1) for i in range(1, 11)])
    p.add_argument("--m-grid", type=_ints, default=[64, 128, 512])
    p.add_argument("--images", type=int, default=100)

    p = sub.add_parser("decorr", help="filter de-correlation of each layer of a saved model")
    _common(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("bench-conv", help="dense vs sparse-binary forward convolution")
    _common(p)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--kernels", type=_ints, default=[3, 5])
    p.add_argument("--sparsity-grid", type=_floats, default=[0.1, 0.5, 0.9])
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("grad-check", help="finite-difference check of a spec's gradients")
    _common(p)
    p.add_argument("--spec", required=True)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=64)
    p.add_argument("--batch", type=int, default=2)

    p = sub.add_parser("theorem1-mc", help="Monte Carlo of max_i (Bx)_i >= sqrt(1-t)||x||")
    _common(p)
    p.add_argument("--N", type=int, default=27)
    p.add_argument("--m", type=int, default=512)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=10000)
    return ap


# --- helpers -------------------------------------------------------------------

def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path, text):
    Path(path).write_text(text)


def _echo(out, args):
    cfg = {k: v for k, v in sorted(vars(args).items())}
    _write(out / "run.json", json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _read_spec(path):
    from .network import parse_spec

    return parse_spec(Path(path).read_text())


def _dataset(args, spec, n_train, n_test):
    from .data import load_mnist_split, synthetic_gaussian, train_test_split

    if args.dataset == "mnist":
        return load_mnist_split(n_train, n_test, seed=args.seed, data_dir=args.data_dir)
    c, h, w = spec.input_shape
    ds = synthetic_gaussian(n_train + n_test, c, h, w, seed=args.seed)
    return train_test_split(ds, n_train, n_test, seed=args.seed)


# --- subcommands -------------------------------------------------------------------

def cmd_train(args):
    from .network import desk_spec
    from .train import TrainConfig, save_model, train

    spec = _read_spec(args.spec) if args.spec else desk_spec("lbc")
    small = args.dataset == "synthetic"
    n_train = args.n_train or (200 if small else 2000)
    n_test = args.n_test or (100 if small else 1000)
    tr, te = _dataset(args, spec, n_train, n_test)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                      momentum=args.momentum)
    out = _out_dir(args)
    _echo(out, args)
    net, metrics = train(spec, (tr, te), cfg,
                         log=lambda r: print(f"epoch {r.epoch}: loss {r.train_loss:.4f} "
                                             f"train {r.train_acc:.4f} test {r.test_acc:.4f}", file=sys.stderr))
    _write(out / "metrics.csv", metrics.to_csv(timing=args.timing))
    save_model(net, out / "model.lbcm")
    print(f"test_acc={metrics.final_test_acc:.4f}")
    return 0


def cmd_eval(args):
    from .train import evaluate, load_model

    net = load_model(args.model)
    small = args.dataset == "synthetic"
    n_train = args.n_train or (200 if small else 2000)
    n_test = args.n_test or (100 if small else 1000)
    _, te = _dataset(args, net.spec, n_train, n_test)
    acc = evaluate(net, te)
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "eval.csv", f"n,accuracy\n{len(te)},{acc:.10g}\n")
    print(f"accuracy={acc:.4f}")
    return 0


def cmd_lbp_encode(args):
    from .lbp import LbpConfig, lbp_encode_conv
    from .pgm import read_pgm, write_pgm

    img = read_pgm(args.input).astype(np.float64)
    code = lbp_encode_conv(img[None, None], LbpConfig(neighborhood=args.size))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_pgm(args.out, code[0, 0])
    return 0


def cmd_count_params(args):
    from .network import count_params

    pc = count_params(_read_spec(args.spec))
    text = f"learnable,fixed,ratio_vs_cnn\n{pc.learnable},{pc.fixed},{pc.ratio_vs_cnn:.6g}\n"
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "params.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_approx_nmse(args):
    from .analysis import ApproxExperimentConfig, nmse_csv, nmse_curve

    cfg = ApproxExperimentConfig(sparsity_grid=args.sparsity_grid, m_grid=args.m_grid,
                                 n_images=args.images, seed=args.seed)
    text = nmse_csv(nmse_curve(cfg))
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "nmse.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_decorr(args):
    from .analysis import filter_decorrelation
    from .train import load_model

    net = load_model(args.model)
    rows = ["layer,metric"]
    for layer in net.lbc_layers():
        rows.append(f"{layer.name}.bank,{filter_decorrelation(layer.bank):.10g}")
    for layer in net.conv_layers():
        rows.append(f"{layer.name}.w,{filter_decorrelation(layer.params['w']):.10g}")
    text = "\n".join(rows) + "\n"
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "decorr.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_bench_conv(args):
    from .anchors import densify, generate_bank
    from .conv import OpCounter, conv2d_dense, conv2d_sparse_binary

    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.n, args.p, args.size, args.size))
    rows = ["kernel,sparsity,mults,adds,wall_ns"]
    for k in args.kernels:
        for s in args.sparsity_grid:
            bank = generate_bank(args.m, args.p, k, k, s, args.seed)
            dense_w = densify(bank)
            for name, fn in (("dense", lambda c: conv2d_dense(x, dense_w, counter=c)),
                             ("sparse", lambda c: conv2d_sparse_binary(x, bank, counter=c))):
                fn(None)  # warm-up (kernel compilation, caches)
                best = None
                for _ in range(max(1, args.repeats)):
                    counter = OpCounter()
                    t0 = time.perf_counter_ns()
                    fn(counter)
                    dt = time.perf_counter_ns() - t0
                    best = dt if best is None else min(best, dt)
                rows.append(f"{name}{k}x{k},{s:g},{counter.multiplications},{counter.additions},{best}")
    text = "\n".join(rows) + "\n"
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "bench.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_grad_check(args):
    from .data import synthetic_gaussian
    from .network import Network
    from .train import grad_check

    spec = _read_spec(args.spec)
    net = Network(spec, seed=args.seed)
    net.init_params(np.random.default_rng(args.seed))
    c, h, w = spec.input_shape
    n_out = int(np.prod(net.output_shape))
    ds = synthetic_gaussian(args.batch, c, h, w, seed=args.seed, n_classes=n_out)
    res = grad_check(spec, net.params(), ds.images, ds.labels, eps=args.eps, n_coords=args.coords,
                     seed=args.seed, net_seed=args.seed)
    text = f"max_rel_err,checked,excluded\n{res.max_rel_err:.6g},{res.checked},{res.excluded}\n"
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "gradcheck.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_theorem1_mc(args):
    from .analysis import theorem1_montecarlo

    prob = theorem1_montecarlo(args.N, args.m, args.t, args.trials, seed=args.seed)
    text = f"N,m,t,trials,prob\n{args.N},{args.m},{args.t:g},{args.trials},{prob:.10g}\n"
    out = _out_dir(args)
    _echo(out, args)
    _write(out / "theorem1.csv", text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "lbp-encode": cmd_lbp_encode,
    "count-params": cmd_count_params,
    "approx-nmse": cmd_approx_nmse,
    "decorr": cmd_decorr,
    "bench-conv": cmd_bench_conv,
    "grad-check": cmd_grad_check,
    "theorem1-mc": cmd_theorem1_mc,
}


def _limit_threads(n):
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)
    import numba

    with warnings.catch_warnings():
        # numba probes for an old TBB install and warns before falling back
        warnings.filterwarnings("ignore", message=".*TBB")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def dispatch(argv=None):
    """Run one subcommand and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no subcommand given")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"{exc}\n{SYNOPSIS}", file=sys.stderr)
        return 1
    try:
        _limit_threads(args.threads)
        return COMMANDS[args.command](args)
    except (LbcError, OSError, ValueError) as exc:
        print(f"lbcnn {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
