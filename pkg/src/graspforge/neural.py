"""Minimal reverse-mode automatic differentiation for point-set networks.

Tensors wrap float64 numpy arrays and record the operation graph as they
are combined; ``backward`` replays that tape to accumulate exact gradients
on every parameter and input.  The op set is deliberately small: shared
pointwise linear maps (the point-set analogue of a kernel-size-1
convolution), fully-connected layers, relu, softmax, pooling reductions,
and the few structural ops (gather, concatenation, pairwise combination)
that set-selection networks are built from.

Everything is float64 and seeded: two runs with the same seed produce
bit-identical parameters, losses and gradients.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

LAYER_KINDS = ("pointwise-linear", "fully-connected", "relu", "softmax",
               "max-pool", "min-pool", "mean-pool", "set-norm")
_LINEAR_KINDS = ("pointwise-linear", "fully-connected")
_POOL_KINDS = ("max-pool", "min-pool", "mean-pool")

SET_NORM_EPS = 1e-5

ADAM_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"GFNN"
CHECKPOINT_VERSION = 1


class Tensor:
    """A float64 array plus the tape linkage needed for backprop.

    ``grad`` accumulates across backward passes; call ``zero_grad`` on the
    owning network (or clear it manually) between optimization steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise InputError(f"item() needs a scalar, shape {self.shape}")
        return float(self.data.reshape(()))

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Result tensor wired into the tape iff any parent wants gradients."""
    out = Tensor(data)
    tracked = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad or p._parents for p in tracked):
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward_fn
    return out


def backward(output, upstream=None):
    """Accumulate gradients of ``output`` onto every tensor in its tape.

    ``upstream`` defaults to ones (the usual seed for a scalar loss).
    Raises if ``output`` carries no recorded tape.
    """
    if not isinstance(output, Tensor):
        raise InputError("backward needs a Tensor")
    if not output._parents:
        raise InputError("tensor has no recorded tape to differentiate")
    if upstream is None:
        upstream = np.ones_like(output.data)
    else:
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != output.data.shape:
            raise InputError(
                f"upstream shape {upstream.shape} != output {output.data.shape}")

    order = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(output): upstream.copy()}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.add_grad(g)
            continue
        for parent, pg in node._backward(g):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] += pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# operations

def linear(x, weight, bias):
    """x @ weight + bias over the last axis; batch axes pass through."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    fi, fo = weight.data.shape
    if x.data.shape[-1] != fi:
        raise InputError(
            f"linear expects last dimension {fi}, got {x.data.shape[-1]}")
    y = x.data @ weight.data + bias.data

    def back(g):
        xr = x.data.reshape(-1, fi)
        gr = g.reshape(-1, fo)
        return ((x, (g @ weight.data.T).reshape(x.data.shape)),
                (weight, xr.T @ gr),
                (bias, gr.sum(axis=0)))

    return _make(y, (x, weight, bias), back)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0.0

    def back(g):
        return ((x, g * mask),)

    return _make(np.where(mask, x.data, 0.0), (x,), back)


def _softmax_data(data, axis):
    if axis is None:
        flat = data.reshape(-1)
        s = np.exp(flat - flat.max())
        return (s / s.sum()).reshape(data.shape)
    s = np.exp(data - data.max(axis=axis, keepdims=True))
    return s / s.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1):
    """Softmax over one axis, or over every element when axis is None."""
    x = _as_tensor(x)
    s = _softmax_data(x.data, axis)

    def back(g):
        if axis is None:
            dot = float((g * s).sum())
            return ((x, s * (g - dot)),)
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((x, s * (g - dot)),)

    return _make(s, (x,), back)


def log_softmax(x, axis=None):
    """Numerically stable log softmax (default: over every element)."""
    x = _as_tensor(x)
    if axis is None:
        flat = x.data.reshape(-1)
        m = flat.max()
        ls = (flat - m) - np.log(np.exp(flat - m).sum())
        out = ls.reshape(x.data.shape)
    else:
        m = x.data.max(axis=axis, keepdims=True)
        out = (x.data - m) - np.log(
            np.exp(x.data - m).sum(axis=axis, keepdims=True))
    s = np.exp(out)

    def back(g):
        if axis is None:
            return ((x, g - s * float(g.sum())),)
        return ((x, g - s * g.sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back)


def _reduce_extreme(x, axis, take_max):
    x = _as_tensor(x)
    picker = np.argmax if take_max else np.argmin
    idx = picker(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis),
                           axis=axis).squeeze(axis)

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return ((x, gx),)

    return _make(y, (x,), back)


def reduce_max(x, axis=0):
    """Max over one axis; ties route the gradient to the first maximum."""
    return _reduce_extreme(x, axis, True)


def reduce_min(x, axis=0):
    """Min over one axis; ties route the gradient to the first minimum."""
    return _reduce_extreme(x, axis, False)


def reduce_mean(x, axis=0):
    x = _as_tensor(x)
    n = x.data.shape[axis]

    def back(g):
        return ((x, np.repeat(np.expand_dims(g / n, axis), n, axis=axis)),)

    return _make(x.data.mean(axis=axis), (x,), back)


def reduce_sum(x):
    """Sum of every element, as a scalar tensor."""
    x = _as_tensor(x)

    def back(g):
        return ((x, np.full_like(x.data, float(g))),)

    return _make(np.asarray(x.data.sum()), (x,), back)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise InputError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")

    def back(g):
        return ((a, g), (b, g))

    return _make(a.data + b.data, (a, b), back)


def scale(x, factor):
    x = _as_tensor(x)
    factor = float(factor)

    def back(g):
        return ((x, g * factor),)

    return _make(x.data * factor, (x,), back)


def mul_elem(x, const):
    """Elementwise product with a constant (non-differentiated) array."""
    x = _as_tensor(x)
    c = np.asarray(const, dtype=np.float64)
    if c.shape != x.data.shape:
        raise InputError(f"mul_elem shapes differ: {x.data.shape} vs {c.shape}")

    def back(g):
        return ((x, g * c),)

    return _make(x.data * c, (x,), back)


def reshape(x, shape):
    x = _as_tensor(x)
    y = x.data.reshape(shape)

    def back(g):
        return ((x, g.reshape(x.data.shape)),)

    return _make(y, (x,), back)


def concat(parts, axis=-1):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise InputError("concat needs at least one tensor")
    sizes = [p.data.shape[axis] for p in parts]
    y = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def back(g):
        pieces = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            pieces.append((p, g[tuple(sl)]))
        return tuple(pieces)

    return _make(y, tuple(parts), back)


def gather_rows(x, indices):
    """Rows of ``x`` along axis 0; repeated indices sum their gradients."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise InputError("gather_rows needs a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise InputError("gather_rows index out of range")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return _make(x.data[idx], (x,), back)


def pairwise_concat(a, b):
    """(m, ca) x (n, cb) -> (m, n, ca+cb): every row of a joined with every
    row of b.  The building block behind pairwise score maps."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InputError("pairwise_concat needs two rank-2 tensors")
    m, ca = a.data.shape
    n, cb = b.data.shape
    y = np.empty((m, n, ca + cb))
    y[:, :, :ca] = a.data[:, None, :]
    y[:, :, ca:] = b.data[None, :, :]

    def back(g):
        return ((a, g[:, :, :ca].sum(axis=1)), (b, g[:, :, ca:].sum(axis=0)))

    return _make(y, (a, b), back)


def group_max(x, groups):
    """Per-group channelwise max over rows of ``x``.

    ``groups`` is a sequence of non-empty index arrays into axis 0; the
    result has one row per group.  Gradients flow to the first maximal row
    of each group and channel.
    """
    x = _as_tensor(x)
    rows = []
    arg = []
    for gi, members in enumerate(groups):
        idx = np.asarray(members, dtype=np.int64)
        if idx.size == 0:
            raise InputError(f"group {gi} is empty")
        sub = x.data[idx]
        a = sub.argmax(axis=0)
        rows.append(sub[a, np.arange(sub.shape[1])])
        arg.append(idx[a])
    y = np.stack(rows, axis=0)
    arg = np.stack(arg, axis=0)

    def back(g):
        gx = np.zeros_like(x.data)
        cols = np.arange(x.data.shape[1])
        for gi in range(arg.shape[0]):
            np.add.at(gx, (arg[gi], cols), g[gi])
        return ((x, gx),)

    return _make(y, (x,), back)


def set_norm(x, eps=SET_NORM_EPS):
    """Standardize each channel over all set axes (every axis but the last).

    ``y = (x - mean) / sqrt(var + eps)`` with per-channel statistics taken
    across the whole set, so the result is invariant to the set ordering and
    keeps activations at unit scale regardless of the input's physical units.
    A constant channel maps to zeros.
    """
    x = _as_tensor(x)
    data = x.data
    if data.ndim < 2:
        raise InputError("set_norm needs at least a (set, channel) array")
    axes = tuple(range(data.ndim - 1))
    mu = data.mean(axis=axes, keepdims=True)
    d = data - mu
    var = (d * d).mean(axis=axes, keepdims=True)
    s = np.sqrt(var + eps)
    y = d / s

    def back(g):
        gbar = g.mean(axis=axes, keepdims=True)
        proj = (g * d).mean(axis=axes, keepdims=True)
        gx = (g - gbar - d * (proj / (var + eps))) / s
        return ((x, gx),)

    return _make(y, (x,), back)


# ---------------------------------------------------------------------------
# layers and sequential networks

@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential point-set network.

    ``pointwise-linear`` is a kernel-size-1 shared linear map over the set
    axis (larger kernels are meaningless on unordered points);
    ``fully-connected`` is the same map applied to a plain vector.  Pools
    and softmax act along ``axis``.
    """

    kind: str
    fan_in: int
    fan_out: int
    axis: int = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InputError(f"unknown layer kind {self.kind!r}")
        if not (isinstance(self.fan_in, int) and self.fan_in > 0):
            raise InputError(f"fan_in must be a positive int, got {self.fan_in}")
        if not (isinstance(self.fan_out, int) and self.fan_out > 0):
            raise InputError(
                f"fan_out must be a positive int, got {self.fan_out}")
        if self.kind not in _LINEAR_KINDS and self.fan_in != self.fan_out:
            raise InputError(
                f"{self.kind} layers cannot change width "
                f"({self.fan_in} -> {self.fan_out})")
        if self.kind in _POOL_KINDS and self.axis is None:
            raise InputError(f"{self.kind} needs a pooling axis")


class Network:
    """A LayerSpec chain with seeded fan-in-scaled uniform parameters."""

    def __init__(self, layers, seed):
        layers = tuple(layers)
        if not layers:
            raise InputError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise InputError(
                    f"layer widths disagree: {prev.kind}({prev.fan_out}) "
                    f"feeds {nxt.kind}({nxt.fan_in})")
        self.layers = layers
        self.params = {}
        rng = np.random.default_rng(seed)
        for i, spec in enumerate(layers):
            if spec.kind in _LINEAR_KINDS:
                bound = 1.0 / np.sqrt(spec.fan_in)
                w = rng.uniform(-bound, bound, size=(spec.fan_in, spec.fan_out))
                self.params[f"layer{i}.weight"] = Tensor(w, requires_grad=True)
                self.params[f"layer{i}.bias"] = Tensor(
                    np.zeros(spec.fan_out), requires_grad=True)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state):
        for name, p in self.params.items():
            if name not in state:
                raise InputError(f"checkpoint missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise InputError(
                    f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = np.ascontiguousarray(arr)


def forward(net, x):
    """Run the layer chain, recording the tape for ``backward``."""
    if not isinstance(net, Network):
        raise InputError("forward needs a Network")
    out = _as_tensor(x)
    for i, spec in enumerate(net.layers):
        where = f"layer {i} ({spec.kind})"
        if spec.kind in _LINEAR_KINDS:
            if out.data.shape[-1] != spec.fan_in:
                raise InputError(
                    f"{where}: expected fan-in {spec.fan_in}, "
                    f"got {out.data.shape[-1]}")
            out = linear(out, net.params[f"layer{i}.weight"],
                         net.params[f"layer{i}.bias"])
        elif spec.kind == "relu":
            out = relu(out)
        elif spec.kind == "set-norm":
            if out.data.ndim < 2:
                raise InputError(f"{where}: needs a (set, channel) array")
            out = set_norm(out)
        elif spec.kind == "softmax":
            out = softmax(out, axis=spec.axis if spec.axis is not None else -1)
        else:
            if not 0 <= spec.axis < out.data.ndim:
                raise InputError(
                    f"{where}: axis {spec.axis} invalid for rank "
                    f"{out.data.ndim}")
            if spec.kind == "max-pool":
                out = reduce_max(out, axis=spec.axis)
            elif spec.kind == "min-pool":
                out = reduce_min(out, axis=spec.axis)
            else:
                out = reduce_mean(out, axis=spec.axis)
    return out


# ---------------------------------------------------------------------------
# losses

def listnet_loss(scores, labels):
    """-sum_j y_j * log softmax(scores)_j over one score list.

    Labels are raw binary relevance marks; with several positives no
    normalization by the positive count is applied (the alternative —
    dividing by sum(y) — changes only the loss scale).  All-zero labels
    give loss 0 with zero gradient.
    """
    scores = _as_tensor(scores)
    y = np.asarray(labels, dtype=np.float64)
    if scores.data.ndim != 1 or scores.data.shape[0] < 1:
        raise InputError("scores must be a non-empty 1-D tensor")
    if y.shape != scores.data.shape:
        raise InputError(f"labels shape {y.shape} != scores {scores.data.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise InputError("labels must be binary")
    return scale(reduce_sum(mul_elem(log_softmax(scores), y)), -1.0)


def normal_alignment_loss(predicted, truth, eps=1e-12):
    """Negative sum of dot products between normalized predictions and
    unit truth normals.

    Returns ``(loss, skipped)`` where ``skipped`` counts zero-length
    predicted rows, which contribute nothing to the loss or gradient.
    """
    predicted = _as_tensor(predicted)
    t = np.asarray(truth, dtype=np.float64)
    if predicted.data.ndim != 2 or predicted.data.shape[1] != 3:
        raise InputError("predicted normals must be (L, 3)")
    if t.shape != predicted.data.shape:
        raise InputError(f"truth shape {t.shape} != {predicted.data.shape}")
    if (np.abs(np.linalg.norm(t, axis=1) - 1.0) > 1e-6).any():
        raise InputError("truth normals must be unit length")

    norms = np.linalg.norm(predicted.data, axis=1)
    valid = norms > eps
    skipped = int((~valid).sum())
    safe = np.where(valid, norms, 1.0)
    unit = predicted.data / safe[:, None]
    dots = np.where(valid, (unit * t).sum(axis=1), 0.0)
    loss = -dots.sum()

    def back(g):
        # d/dx of -(x/|x|).t = -(t - n(n.t)) / |x| for valid rows
        gx = -(t - unit * dots[:, None]) / safe[:, None]
        gx[~valid] = 0.0
        return ((predicted, gx * float(g)),)

    return _make(np.asarray(loss), (predicted,), back), skipped


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """Adam moments and hyperparameters for a named parameter set."""

    def __init__(self, params, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS):
        if not params:
            raise InputError("AdamState needs at least one parameter")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}


def adam_step(state, gradients):
    """One bias-corrected Adam update; mutates the tracked parameters.

    A non-finite gradient rejects the whole step (state untouched) so a
    single bad batch cannot poison the moments.
    """
    if set(gradients) != set(state.params):
        missing = set(state.params) ^ set(gradients)
        raise InputError(f"gradient names disagree with parameters: {missing}")
    grads = {}
    for name, g in gradients.items():
        arr = np.asarray(g, dtype=np.float64)
        if arr.shape != state.params[name].data.shape:
            raise InputError(f"gradient {name}: shape {arr.shape} != "
                             f"{state.params[name].data.shape}")
        if not np.isfinite(arr).all():
            raise InputError(f"non-finite gradient for {name}: step rejected")
        grads[name] = arr
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p = state.params[name]
        p.data = p.data - state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return state.params


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params, meta=None):
    """Write named float64 arrays (plus a JSON metadata blob) to ``path``.

    Layout, all little-endian: magic "GFNN", u32 version, u32 metadata
    length + UTF-8 JSON, u32 entry count, then per entry u32 name length,
    name, u32 rank, u64 dims, raw float64 payload.
    """
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
           struct.pack("<I", len(blob)), blob,
           struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name]
        data = np.asarray(
            arr.data if isinstance(arr, Tensor) else arr, dtype=np.float64)
        enc = name.encode()
        out.append(struct.pack("<I", len(enc)))
        out.append(enc)
        out.append(struct.pack("<I", data.ndim))
        out.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        out.append(data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    """Read a checkpoint back as ``(params dict, metadata dict)``."""
    raw = Path(path).read_bytes()

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"checkpoint truncated reading {what}")
        piece = raw[pos:pos + n]
        pos += n
        return piece

    pos = 0
    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a GFNN checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    try:
        meta = json.loads(take(meta_len, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad checkpoint metadata: {exc}") from exc
    (count,) = struct.unpack("<I", take(4, "entry count"))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode()
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "shape"))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = take(8 * n, f"payload of {name}")
        params[name] = np.frombuffer(
            payload, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(raw):
        raise FormatError("trailing bytes after checkpoint entries")
    return params, meta
