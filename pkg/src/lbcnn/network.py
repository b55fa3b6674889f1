"""Network descriptions, assembly and parameter accounting.

Text format, one block per line (``#`` starts a comment)::

    input c=1 h=32 w=32
    share_bank seed=7                       # optional: one bank for every LBC block
    conv q=32 k=3                           # dense conv, no activation
    res{
    lbc m=32 q=32 k=3 sparsity=0.5 act=relu
    }
    res{ conv m=32 q=32 k=3 act=relu post=1 }
    relu | sigmoid
    avgpool out=6                           # or avgpool k=<window>
    fc out=10

``lbc`` also accepts ``p`` (input channels, for accounting of grouped
layers), ``seed`` (bank seed) and ``cnn_out`` (output channels of the dense
convolution the block replaces, default ``q``). ``conv`` accepts ``p``,
``m`` (channels before the 1x1 when ``post=1``), ``act`` and ``post``.
"""

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anchors import generate_bank, nnz_for
from .conv import OpCounter
from .errors import ParameterError, ShapeError
from .layers import ACTIVATIONS, Activation, AvgPool, ConvLayer, Fc, LbcLayer, Residual, pool_kernel
from .tensor import as_tensor


class LintWarning(UserWarning):
    pass


@dataclass
class Block:
    kind: str
    args: dict = field(default_factory=dict)
    body: list = field(default_factory=list)

    def to_text(self):
        if self.kind == "res":
            if len(self.body) == 1:
                return "res{ " + self.body[0].to_text() + " }"
            return "\n".join(["res{"] + [b.to_text() for b in self.body] + ["}"])
        parts = [self.kind] + [f"{k}={_fmt(v)}" for k, v in self.args.items()]
        return " ".join(parts)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class NetworkSpec:
    input_shape: tuple
    blocks: list
    share_bank: bool = False
    shared_seed: int | None = None

    def to_text(self):
        c, h, w = self.input_shape
        lines = [f"input c={c} h={h} w={w}"]
        if self.share_bank:
            lines.append("share_bank" + (f" seed={self.shared_seed}" if self.shared_seed is not None else ""))
        lines.extend(b.to_text() for b in self.blocks)
        return "\n".join(lines) + "\n"

    def lbc_blocks(self):
        return [b for b in _walk(self.blocks) if b.kind == "lbc"]


_INT_KEYS = {"c", "h", "w", "m", "q", "k", "p", "seed", "out", "cnn_out", "post"}
_ALLOWED = {
    "lbc": {"m", "q", "k", "sparsity", "act", "p", "seed", "cnn_out"},
    "conv": {"q", "k", "m", "act", "post", "p"},
    "avgpool": {"out", "k"},
    "fc": {"out"},
    "relu": set(),
    "sigmoid": set(),
}
_REQUIRED = {"lbc": {"m", "q", "k", "sparsity"}, "conv": {"q", "k"}, "fc": {"out"}}


def _parse_args(kind, tokens, lineno):
    args = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParameterError(f"line {lineno}: expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        if kind in _ALLOWED and key not in _ALLOWED[kind]:
            raise ParameterError(f"line {lineno}: unknown option {key!r} for {kind}")
        if key in _INT_KEYS:
            try:
                args[key] = int(val)
            except ValueError:
                raise ParameterError(f"line {lineno}: {key} must be an integer") from None
        elif key == "sparsity":
            args[key] = float(val)
        else:
            args[key] = val
    missing = _REQUIRED.get(kind, set()) - set(args)
    if missing:
        raise ParameterError(f"line {lineno}: {kind} is missing {sorted(missing)}")
    if "act" in args and args["act"] not in ACTIVATIONS:
        raise ParameterError(f"line {lineno}: unknown activation {args['act']!r}")
    if kind == "avgpool" and len(args) != 1:
        raise ParameterError(f"line {lineno}: avgpool takes exactly one of out= or k=")
    return args


def parse_spec(text):
    """Parse the text format into a :class:`NetworkSpec`."""
    input_shape = None
    share, shared_seed = False, None
    stack = [[]]
    # split inline "res{ ... }" into separate tokens so nesting is uniform
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        for piece in re.split(r"(res\{|\})", line):
            piece = piece.strip()
            if piece:
                lines.append((lineno, piece))
    for lineno, line in lines:
        if line == "res{":
            stack.append([])
            continue
        if line == "}":
            if len(stack) == 1:
                raise ParameterError(f"line {lineno}: unmatched '}}'")
            body = stack.pop()
            if not body:
                raise ParameterError(f"line {lineno}: empty residual block")
            stack[-1].append(Block("res", body=body))
            continue
        kind, *tokens = line.split()
        if kind == "input":
            a = _parse_args(kind, tokens, lineno)
            try:
                input_shape = (a["c"], a["h"], a["w"])
            except KeyError:
                raise ParameterError(f"line {lineno}: input needs c, h and w") from None
        elif kind == "share_bank":
            share = True
            shared_seed = _parse_args(kind, tokens, lineno).get("seed")
        elif kind in _ALLOWED:
            stack[-1].append(Block(kind, _parse_args(kind, tokens, lineno)))
        else:
            raise ParameterError(f"line {lineno}: unknown block {kind!r}")
    if len(stack) != 1:
        raise ParameterError("unterminated res{ block")
    if input_shape is None:
        raise ParameterError("spec needs an 'input c=.. h=.. w=..' line")
    if min(input_shape) < 1:
        raise ParameterError("input extents must be >= 1")
    spec = NetworkSpec(input_shape, stack[0], share, shared_seed)
    lint(spec)
    return spec


def _walk(blocks):
    for b in blocks:
        yield b
        if b.kind == "res":
            yield from _walk(b.body)


def _flatten_sequence(blocks):
    """Blocks in execution order, with residual bodies inlined."""
    out = []
    for b in blocks:
        if b.kind == "res":
            out.extend(_flatten_sequence(b.body))
        else:
            out.append(b)
    return out


def lint(spec):
    """Warn about a ReLU feeding straight into an LBC block; return the messages."""
    msgs = []
    seq = _flatten_sequence(spec.blocks)
    for prev, cur in zip(seq, seq[1:]):
        prev_relu = prev.kind == "relu" or (prev.kind == "conv" and prev.args.get("act") == "relu"
                                             and not prev.args.get("post"))
        if prev_relu and cur.kind == "lbc":
            msgs.append(f"ReLU output feeds LBC block '{cur.to_text()}' directly; "
                        "sparse inputs and sparse weights lose information")
    for msg in msgs:
        warnings.warn(msg, LintWarning, stacklevel=3)
    return msgs


def bank_seeds(spec, seed=0):
    """Bank seed of every LBC block in order of appearance."""
    blocks = spec.lbc_blocks()
    if spec.share_bank:
        s = spec.shared_seed if spec.shared_seed is not None else seed
        return [s] * len(blocks)
    return [b.args.get("seed", seed + 1 + i) for i, b in enumerate(blocks)]


class Network:
    """Executable network built from a :class:`NetworkSpec`."""

    def __init__(self, spec, seed=0, banks=None):
        """``banks``, if given, supplies the bank of every LBC block in order
        instead of generating them from seeds (used when loading models)."""
        self.spec = spec
        self.counter = OpCounter()
        self.banks = []
        self.bank_index = []
        self._seeds = iter(bank_seeds(spec, seed))
        self._given = None if banks is None else iter(banks)
        self._shared = None
        self.layers = []
        self.names = []
        shape = tuple(spec.input_shape)
        for i, block in enumerate(spec.blocks):
            layer, shape = self._build(block, shape, f"b{i}", i)
            self.layers.append(layer)
        self.output_shape = shape
        for layer in self._all_layers():
            layer.counter = self.counter

    def _bank(self, m, p, k, sparsity, index):
        seed = next(self._seeds)
        if self._given is not None:
            b = next(self._given, None)
            if b is None:
                raise ShapeError(f"block {index}: no bank supplied")
            if b.shape != (m, p, k, k) or b.sparsity != sparsity:
                raise ShapeError(f"block {index}: supplied bank is {b.shape} @ {b.sparsity}, "
                                 f"block needs {(m, p, k, k)} @ {sparsity}")
            for j, known in enumerate(self.banks):
                if known is b:
                    self.bank_index.append(j)
                    return b
            self.banks.append(b)
            self.bank_index.append(len(self.banks) - 1)
            return b
        if self.spec.share_bank:
            if self._shared is None:
                self._shared = generate_bank(m, p, k, k, sparsity, seed)
                self.banks.append(self._shared)
            b = self._shared
            if b.shape != (m, p, k, k) or b.sparsity != sparsity:
                raise ShapeError(f"block {index}: shared bank is {b.shape} @ {b.sparsity}, "
                                 f"block needs {(m, p, k, k)} @ {sparsity}")
            self.bank_index.append(0)
            return b
        b = generate_bank(m, p, k, k, sparsity, seed)
        self.banks.append(b)
        self.bank_index.append(len(self.banks) - 1)
        return b

    def _build(self, block, shape, name, index):
        c, h, w = shape
        a = block.args
        if block.kind == "res":
            layers, inner = [], shape
            for j, sub in enumerate(block.body):
                layer, inner = self._build(sub, inner, f"{name}.{j}", index)
                layers.append(layer)
            if inner != shape:
                raise ShapeError(f"block {index}: residual body maps {shape} to {inner}")
            return Residual(layers), shape
        if "p" in a and a["p"] != c:
            raise ShapeError(f"block {index}: declares p={a['p']} but receives {c} channels")
        if block.kind == "lbc":
            bank = self._bank(a["m"], c, a["k"], a["sparsity"], index)
            layer = LbcLayer(bank, a["q"], a.get("act", "relu"))
            out = (a["q"], h, w)
        elif block.kind == "conv":
            layer = ConvLayer(c, a["q"], a["k"], act=a.get("act", "none"), post=bool(a.get("post", 0)),
                              m=a.get("m"))
            out = (a["q"], h, w)
        elif block.kind in ("relu", "sigmoid"):
            layer, out = Activation(block.kind), shape
        elif block.kind == "avgpool":
            if "k" in a:
                k = a["k"]
                if k > min(h, w):
                    raise ShapeError(f"block {index}: pool window {k} larger than {h}x{w}")
            else:
                try:
                    k = pool_kernel(min(h, w), a["out"])
                    if h != w:
                        pool_kernel(max(h, w), a["out"])
                except ShapeError as exc:
                    raise ShapeError(f"block {index}: {exc}") from None
            layer = AvgPool(k)
            out = (c, (h - k) // k + 1, (w - k) // k + 1)
        elif block.kind == "fc":
            layer = Fc(c * h * w, a["out"])
            out = (a["out"], 1, 1)
        else:
            raise ParameterError(f"block {index}: unknown kind {block.kind}")
        layer.name = name
        self.names.append(name)
        return layer, out

    def _all_layers(self, layers=None):
        for layer in self.layers if layers is None else layers:
            yield layer
            if isinstance(layer, Residual):
                yield from self._all_layers(layer.layers)

    def lbc_layers(self):
        return [l for l in self._all_layers() if isinstance(l, LbcLayer)]

    def conv_layers(self):
        return [l for l in self._all_layers() if isinstance(l, ConvLayer)]

    def params(self):
        """Ordered ``name -> array`` map of learnable tensors (live views)."""
        out = {}
        for layer in self._all_layers():
            for k, v in layer.params.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for layer in self._all_layers():
            for k in layer.params:
                out[f"{layer.name}.{k}"] = layer.grads.get(k)
        return out

    def set_params(self, params):
        own = self.params()
        if set(own) != set(params):
            raise ShapeError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
        for k, v in params.items():
            if own[k].shape != np.shape(v):
                raise ShapeError(f"{k}: expected {own[k].shape}, got {np.shape(v)}")
            own[k][...] = v

    def init_params(self, rng):
        for layer in self._all_layers():
            layer.init_params(rng)

    def forward(self, x):
        x = as_tensor(x, ndim=4)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(f"block 0: input {x.shape[1:]} does not match spec input {self.spec.input_shape}")
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as exc:
                raise ShapeError(f"block {i}: {exc}") from None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_logits):
        g = grad_logits.reshape((grad_logits.shape[0],) + tuple(self.output_shape))
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g, need_input_grad=i > 0)
        return g

    def preactivations(self):
        return [z for layer in self.layers for z in layer.preactivations()]

    def clear(self):
        for layer in self.layers:
            layer.clear()


def network_forward(spec, params, x, seed=0):
    """Build ``spec``, load ``params`` and return logits for ``x``."""
    net = Network(spec, seed)
    net.set_params(params)
    return net.forward(x)


@dataclass
class ParamCount:
    learnable: int
    fixed: int
    cnn_equivalent: int
    lbc_learnable: int

    @property
    def ratio_vs_cnn(self):
        if self.lbc_learnable == 0:
            return 1.0
        return self.cnn_equivalent / self.lbc_learnable


def count_params(spec):
    """Learnable and fixed parameter counts from the spec alone.

    ``ratio_vs_cnn`` compares, over LBC blocks only, the weights of the dense
    convolutions they replace (p*h*w*cnn_out each) with their learnable 1x1
    weights (m*q each). Explicit ``p`` values are honoured even when they do
    not chain, so grouped reference architectures can be described.
    """
    learnable = fixed = cnn_eq = lbc_learn = 0
    shared_seen = False
    shape = tuple(spec.input_shape)

    def visit(blocks, shape):
        nonlocal learnable, fixed, cnn_eq, lbc_learn, shared_seen
        for b in blocks:
            c, h, w = shape
            a = b.args
            if b.kind == "res":
                visit(b.body, shape)
                continue
            p = a.get("p", c)
            if b.kind == "lbc":
                k, m, q = a["k"], a["m"], a["q"]
                n = m * q
                learnable += n
                lbc_learn += n
                cnn_eq += p * k * k * a.get("cnn_out", q)
                if not (spec.share_bank and shared_seen):
                    fixed += m * nnz_for(a["sparsity"], p * k * k)
                shared_seen = True
                shape = (q, h, w)
            elif b.kind == "conv":
                k, q = a["k"], a["q"]
                if a.get("post"):
                    m = a.get("m", q)
                    learnable += p * k * k * m + m * q
                else:
                    learnable += p * k * k * q
                shape = (q, h, w)
            elif b.kind == "avgpool":
                k = a["k"] if "k" in a else max(1, min(h, w) // a["out"])
                shape = (c, (h - k) // k + 1, (w - k) // k + 1)
            elif b.kind == "fc":
                learnable += c * h * w * a["out"]
                shape = (a["out"], 1, 1)
        return shape

    visit(spec.blocks, shape)
    return ParamCount(learnable, fixed, cnn_eq, lbc_learn)


ALEXNET_CONV = [
    # (in channels per group, kernel, filters)
    (3, 11, 96),
    (48, 5, 256),
    (256, 3, 384),
    (192, 3, 384),
    (192, 3, 256),
]


def alexnet_specs(q=256, sparsity=0.5):
    """Accounting-only specs for the five AlexNet conv layers and their LBC replacement."""
    cnn = [Block("conv", {"p": p, "q": f, "k": k}) for p, k, f in ALEXNET_CONV]
    lbc = [Block("lbc", {"p": p, "m": f, "q": q, "k": k, "sparsity": sparsity, "cnn_out": f})
           for p, k, f in ALEXNET_CONV]
    shape = (3, 224, 224)
    return NetworkSpec(shape, cnn), NetworkSpec(shape, lbc)


def desk_spec(kind="lbc", blocks=4, width=32, sparsity=0.5, share_bank=False, input_shape=(1, 32, 32),
              classes=10):
    """Small residual net for desk-scale runs.

    A dense 3x3 stem lifts the input to ``width`` channels, followed by
    ``blocks`` residual LBC blocks (``kind="lbc"``) or matched dense blocks
    (conv, relu, 1x1; ``kind="cnn"``), a 6x6 average pool and a linear head.
    """
    c, h, w = input_shape
    lines = [f"input c={c} h={h} w={w}"]
    if share_bank and kind == "lbc":
        lines.append("share_bank")
    lines.append(f"conv q={width} k=3")
    if kind == "lbc":
        body = f"lbc m={width} q={width} k=3 sparsity={sparsity} act=relu"
    elif kind == "cnn":
        body = f"conv m={width} q={width} k=3 act=relu post=1"
    else:
        raise ParameterError(f"kind must be 'lbc' or 'cnn', got {kind!r}")
    lines += [f"res{{ {body} }}"] * blocks
    lines += ["avgpool out=6", f"fc out={classes}"]
    return parse_spec("\n".join(lines) + "\n")
