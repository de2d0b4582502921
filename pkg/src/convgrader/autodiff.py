"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array. Primitives execute eagerly and, when a Tape
is active, record a backward closure keyed by tensor ids. backward() walks
the tape once in reverse and accumulates gradients per tensor id, so shared
subexpressions sum their contributions. Tapes are thread-local: each thread
pushes its own with ``with Tape() as tape:`` and concurrent forward passes
on different threads never interleave records.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_ids = itertools.count()
_tls = threading.local()

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle post-op finite checks. Off by default; tests flip it on."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    __slots__ = ("data", "id")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape})"


class TapeNode:
    __slots__ = ("op", "input_ids", "output_id", "backward")

    def __init__(self, op, input_ids, output_id, backward):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward = backward


class Tape:
    """Ordered record of ops; single-threaded, one active per thread."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def record(self, op: str, input_ids: tuple, output_id: int,
               backward: Callable[[np.ndarray], Sequence[np.ndarray]]) -> None:
        self.nodes.append(TapeNode(op, input_ids, output_id, backward))

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tls.stack.pop()
        return False


def active_tape() -> Tape | None:
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


def _data(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _emit(op: str, out_data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], Sequence[np.ndarray]]) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise NumericError(f"{op}: non-finite output")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and parents:
        tape.record(op, tuple(p.id for p in parents), out.id, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op: str, a, b, fwd, grad_a, grad_b) -> Tensor:
    ad, bd = _data(a), _data(b)
    try:
        out = fwd(ad, bd)
    except ValueError as exc:
        raise ShapeError(op, (ad.shape, bd.shape), str(exc)) from None
    parents = []
    slots = []
    if isinstance(a, Tensor):
        parents.append(a)
        slots.append(("a", ad.shape))
    if isinstance(b, Tensor):
        parents.append(b)
        slots.append(("b", bd.shape))

    def bw(g):
        outs = []
        for which, shape in slots:
            raw = grad_a(g, ad, bd) if which == "a" else grad_b(g, ad, bd)
            outs.append(_unbroadcast(raw, shape))
        return outs

    return _emit(op, out, parents, bw)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, np.divide,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a) -> Tensor:
    ad = _data(a)
    parents = [a] if isinstance(a, Tensor) else []
    return _emit("neg", -ad, parents, lambda g: [-g])


def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError("matmul", (ad.shape, bd.shape))
    out = ad @ bd
    parents = []
    slots = []
    if isinstance(a, Tensor):
        parents.append(a)
        slots.append("a")
    if isinstance(b, Tensor):
        parents.append(b)
        slots.append("b")

    def bw(g):
        outs = []
        for which in slots:
            outs.append(g @ bd.T if which == "a" else ad.T @ g)
        return outs

    return _emit("matmul", out, parents, bw)


def _unary(op: str, a, fwd, grad) -> Tensor:
    ad = _data(a)
    out = fwd(ad)
    parents = [a] if isinstance(a, Tensor) else []
    return _emit(op, out, parents, lambda g: [grad(g, ad, out)])


def relu(a) -> Tensor:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, y: g * (x > 0.0))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    return _unary("leaky_relu", a,
                  lambda x: np.where(x > 0.0, x, slope * x),
                  lambda g, x, y: g * np.where(x > 0.0, 1.0, slope))


def tanh(a) -> Tensor:
    return _unary("tanh", a, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def sigmoid(a) -> Tensor:
    return _unary("sigmoid", a, lambda x: 1.0 / (1.0 + np.exp(-x)),
                  lambda g, x, y: g * y * (1.0 - y))


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, y: g * y)


def softmax(a, axis: int = -1) -> Tensor:
    ad = _data(a)
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    parents = [a] if isinstance(a, Tensor) else []

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return [(g - inner) * out]

    return _emit("softmax", out, parents, bw)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)
    parents = [a] if isinstance(a, Tensor) else []

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, ad.shape).copy()]

    return _emit("sum", np.asarray(out), parents, bw)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    out = ad.mean(axis=axis, keepdims=keepdims)
    count = ad.size if axis is None else ad.shape[axis]
    parents = [a] if isinstance(a, Tensor) else []

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g / count, ad.shape).copy()]

    return _emit("mean", np.asarray(out), parents, bw)


def reduce_max(a, axis: int = 0) -> Tensor:
    ad = _data(a)
    idx = np.argmax(ad, axis=axis)
    out = np.take_along_axis(ad, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    parents = [a] if isinstance(a, Tensor) else []

    def bw(g):
        gx = np.zeros_like(ad)
        np.put_along_axis(gx, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return [gx]

    return _emit("max", out, parents, bw)


def slice_axis(a, start: int, stop: int, axis: int = 0) -> Tensor:
    ad = _data(a)
    n = ad.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError("slice", (ad.shape,), f"range [{start}, {stop}) on axis {axis}")
    sl = [slice(None)] * ad.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    parents = [a] if isinstance(a, Tensor) else []

    def bw(g):
        gx = np.zeros_like(ad)
        gx[sl] = g
        return [gx]

    return _emit("slice", ad[sl], parents, bw)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ContractError("concat of zero parts")
    datas = [_data(p) for p in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", tuple(d.shape for d in datas), str(exc)) from None
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    tracked = [(i, p) for i, p in enumerate(parts) if isinstance(p, Tensor)]
    parents = [p for _, p in tracked]

    def bw(g):
        outs = []
        for i, _ in tracked:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return outs

    return _emit("concat", out, parents, bw)


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    out = ad.reshape(shape)
    parents = [a] if isinstance(a, Tensor) else []
    return _emit("reshape", out, parents, lambda g: [g.reshape(ad.shape)])


def pad_rows(a, offset: int, total_rows: int) -> Tensor:
    """Place the rows of ``a`` into a zero matrix of ``total_rows`` rows."""
    ad = _data(a)
    if ad.ndim != 2:
        raise ShapeError("pad_rows", (ad.shape,), "expects a matrix")
    n = ad.shape[0]
    if offset < 0 or offset + n > total_rows:
        raise ShapeError("pad_rows", (ad.shape,), f"offset {offset}, total {total_rows}")
    out = np.zeros((total_rows, ad.shape[1]))
    out[offset:offset + n] = ad
    parents = [a] if isinstance(a, Tensor) else []
    return _emit("pad_rows", out, parents, lambda g: [g[offset:offset + n]])


def flip_rows(a) -> Tensor:
    ad = _data(a)
    parents = [a] if isinstance(a, Tensor) else []
    return _emit("flip_rows", ad[::-1].copy(), parents, lambda g: [g[::-1].copy()])


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table`` at integer ``ids``; backward scatter-adds."""
    td = _data(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("embedding_lookup", (td.shape, idx.shape), "ids must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= td.shape[0]):
        raise ContractError(
            f"embedding_lookup: id out of range for table with {td.shape[0]} rows")
    out = td[idx]
    parents = [table] if isinstance(table, Tensor) else []

    def bw(g):
        gt = np.zeros_like(td)
        np.add.at(gt, idx, g)
        return [gt]

    return _emit("embedding_lookup", out, parents, bw)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given per-row ids."""
    ad = _data(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if ad.shape[0] != seg.shape[0]:
        raise ShapeError("segment_sum", (ad.shape, seg.shape))
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ContractError("segment_sum: segment id out of range")
    out = np.zeros((num_segments,) + ad.shape[1:])
    np.add.at(out, seg, ad)
    parents = [a] if isinstance(a, Tensor) else []
    return _emit("segment_sum", out, parents, lambda g: [g[seg]])


def lstm_pass(precomp, u) -> Tensor:
    """Run an LSTM over rows of precomputed input projections.

    ``precomp`` is (T, 4H): per-step input contribution x_t @ Wx + b,
    gate order (input, forget, cell, output). ``u`` is the (H, 4H)
    recurrent weight. Initial hidden and cell states are zero. Returns
    the (T, H) hidden-state sequence. Recorded as one fused tape node
    with a hand-derived backward pass.
    """
    pd, ud = _data(precomp), _data(u)
    if pd.ndim != 2 or ud.ndim != 2 or pd.shape[1] != 4 * ud.shape[0] \
            or ud.shape[1] != pd.shape[1]:
        raise ShapeError("lstm_pass", (pd.shape, ud.shape))
    T = pd.shape[0]
    H = ud.shape[0]
    i_s = np.empty((T, H)); f_s = np.empty((T, H))
    g_s = np.empty((T, H)); o_s = np.empty((T, H))
    c_s = np.empty((T, H)); tc_s = np.empty((T, H))
    hprev = np.empty((T, H))
    hs = np.empty((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        hprev[t] = h
        z = pd[t] + h @ ud
        i = 1.0 / (1.0 + np.exp(-z[:H]))
        f = 1.0 / (1.0 + np.exp(-z[H:2 * H]))
        g = np.tanh(z[2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-z[3 * H:]))
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        i_s[t] = i; f_s[t] = f; g_s[t] = g; o_s[t] = o
        c_s[t] = c; tc_s[t] = tc; hs[t] = h

    parents = []
    slots = []
    if isinstance(precomp, Tensor):
        parents.append(precomp); slots.append("p")
    if isinstance(u, Tensor):
        parents.append(u); slots.append("u")

    def bw(grad):
        dP = np.empty_like(pd)
        dh = np.zeros(H)
        dc = np.zeros(H)
        uT = ud.T
        for t in range(T - 1, -1, -1):
            i = i_s[t]; f = f_s[t]; g = g_s[t]; o = o_s[t]; tc = tc_s[t]
            dh_t = grad[t] + dh
            dct = dc + dh_t * o * (1.0 - tc * tc)
            cprev = c_s[t - 1] if t > 0 else 0.0
            dz = dP[t]
            dz[:H] = dct * g * i * (1.0 - i)
            dz[H:2 * H] = dct * cprev * f * (1.0 - f)
            dz[2 * H:3 * H] = dct * i * (1.0 - g * g)
            dz[3 * H:] = dh_t * tc * o * (1.0 - o)
            dh = dz @ uT
            dc = dct * f
        # dU only needs the finished per-step dz rows, so it batches
        # into one product instead of T rank-1 updates.
        dU = hprev.T @ dP
        outs = []
        for which in slots:
            outs.append(dP if which == "p" else dU)
        return outs

    return _emit("lstm_pass", hs, parents, bw)


def bilstm(x, wx_f, u_f, b_f, wx_b=None, u_b=None, b_b=None):
    """Forward and reversed LSTM passes over the rows of ``x``.

    When only one weight set is given it is shared across both directions.
    Returns (forward_states, backward_states), each (T, H) and aligned to
    the original row order.
    """
    if wx_b is None:
        wx_b, u_b, b_b = wx_f, u_f, b_f
    fwd = lstm_pass(add(matmul(x, wx_f), b_f), u_f)
    rev = lstm_pass(add(matmul(flip_rows(x), wx_b), b_b), u_b)
    return fwd, flip_rows(rev)


def conv1d(x, kernels):
    """Same-length 1-D convolutions over the rows of ``x``.

    ``kernels`` is a list of (width, weight, bias) with weight shaped
    (width * E, F): row block o holds the tap applied at offset o. Rows
    are zero-padded so each output has T rows. Returns one (T, F) tensor
    per kernel.
    """
    xd = _data(x)
    if xd.ndim != 2:
        raise ShapeError("conv1d", (xd.shape,), "expects a matrix")
    T, E = xd.shape
    outs = []
    for width, w, b in kernels:
        wd = _data(w)
        if wd.shape[0] != width * E:
            raise ShapeError("conv1d", (xd.shape, wd.shape),
                             f"weight rows must be width*E for width {width}")
        left = (width - 1) // 2
        padded = pad_rows(x, left, T + width - 1)
        taps = [slice_axis(padded, o, o + T) for o in range(width)]
        stacked = taps[0] if width == 1 else concat(taps, axis=1)
        outs.append(add(matmul(stacked, w), b))
    return outs


def backward(tape: Tape, loss: Tensor, store=None) -> dict:
    """Accumulate d(loss)/d(tensor) for every tensor on the tape.

    ``loss`` must be size 1. Returns the gradient map keyed by tensor id;
    when ``store`` (a ParamStore) is given, adds each parameter's gradient
    into ``store.grads`` (zeros stay in place for unreached parameters).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output_id)
        if g is None:
            continue
        for tid, gin in zip(node.input_ids, node.backward(g)):
            have = grads.get(tid)
            if have is None:
                # Copy aliases of the upstream gradient (or views into it) so
                # in-place accumulation never corrupts a sibling's buffer.
                grads[tid] = gin.copy() if (gin is g or gin.base is not None) else gin
            else:
                have += gin
    if store is not None:
        for name, p in store.params.items():
            g = grads.get(p.id)
            if g is not None:
                store.grads[name] += g
    return grads


class GradCheckReport:
    def __init__(self, tol: float):
        self.tol = tol
        self.per_param: dict[str, float] = {}
        self.failures: list[tuple[str, int, float, float, float]] = []
        self.nonfinite = False

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.nonfinite and self.max_rel_error <= self.tol

    def __repr__(self):
        status = "ok" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel={self.max_rel_error:.3e})"


def grad_check(closure, store, tol: float = 1e-4, h: float = 1e-5,
               samples_per_param: int | None = None, rng_seed: int = 0) -> GradCheckReport:
    """Compare tape gradients against central differences.

    ``closure()`` must rebuild the forward pass from ``store``'s current
    parameter values and return the scalar loss tensor. It runs once under
    a fresh tape for the analytic gradients and twice per probed coordinate
    with no tape. ``samples_per_param`` caps probed coordinates per
    parameter (all when None). Relative error uses
    |a - n| / max(|a|, |n|, 1e-6).
    """
    with Tape() as tape:
        loss = closure()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    store.zero_grads()
    backward(tape, loss, store)
    analytic = {k: v.copy() for k, v in store.grads.items()}

    rng = np.random.default_rng(rng_seed)
    report = GradCheckReport(tol)
    for name, p in store.params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if samples_per_param is not None and n > samples_per_param:
            idxs = rng.choice(n, size=samples_per_param, replace=False)
        else:
            idxs = np.arange(n)
        worst = 0.0
        aflat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = closure().item()
            flat[i] = orig - h
            lm = closure().item()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                report.nonfinite = True
                continue
            numeric = (lp - lm) / (2.0 * h)
            a = aflat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            if rel > worst:
                worst = rel
            if rel > tol:
                report.failures.append((name, int(i), float(a), float(numeric), float(rel)))
        report.per_param[name] = worst
    return report
