"""Dense tensor ops and a small reverse-mode gradient tape.

Every op accepts either plain ``numpy`` arrays or :class:`Var` handles.  With
plain arrays the op just computes; when any input is a ``Var`` the result is
recorded on that variable's :class:`Tape` so gradients can be replayed later.
Both paths call the same numpy kernels, so a forward pass gives bit-identical
values whether or not it is being taped.

Images are float64 arrays.  The solver uses ``(H, W, C)`` images and ``(H, W)``
masks; the unfolded network batches everything as ``(N, C, H, W)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError

EPS_DIV = 1e-6
DTYPE = np.float64


# --------------------------------------------------------------------------
# tape


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (Var, np.ndarray)):
            raise TypeError("divide tensors with safe_div()")
        return scale(self, 1.0 / other)

    def __getitem__(self, idx):
        return _getitem(self, idx)


class _Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records ops in execution order; :meth:`backward` replays them in reverse.

    A tape belongs to one training step on one thread.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, Var] = {}

    def _push(self, op, value, inputs=(), backward=None):
        var = Var(self, len(self.nodes), value)
        self.nodes.append(_Node(op, inputs, backward))
        return var

    def param(self, name, value):
        if name in self.params:
            raise InvalidArgumentError(f"parameter {name!r} registered twice")
        var = self._push("param", np.array(value, dtype=DTYPE))
        self.params[name] = var
        return var

    def constant(self, value):
        return self._push("const", np.asarray(value, dtype=DTYPE))

    def backward(self, loss):
        """Gradients of scalar ``loss`` for every registered parameter."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise InvalidArgumentError("loss must be a Var recorded on this tape")
        if loss.value.size != 1:
            raise InvalidArgumentError(f"loss must be scalar, got shape {loss.value.shape}")
        grads = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for j, gj in zip(node.inputs, node.backward(g)):
                if j is None or gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        out = {}
        for name, var in self.params.items():
            g = grads[var.index]
            out[name] = np.zeros_like(var.value) if g is None else g
        return out


def _unwrap(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _apply(op, fwd, args, bwd):
    """Run ``fwd`` on raw values; record ``bwd`` if any argument is a Var.

    ``bwd(g, vals, out)`` returns one gradient per argument (None allowed).
    """
    vals = [_unwrap(a) for a in args]
    out = fwd(*vals)
    tape = _tape_of(args)
    if tape is None:
        return out
    inputs = []
    for a in args:
        if isinstance(a, Var):
            if a.tape is not tape:
                raise InvalidArgumentError("mixing Vars from different tapes")
            inputs.append(a.index)
        else:
            inputs.append(None)
    var = tape._push(op, out, tuple(inputs), lambda g: bwd(g, vals, out))
    return var


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape(x):
    return np.shape(_unwrap(x))


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    return _apply(
        "add", np.add, (a, b),
        lambda g, v, o: (_unbroadcast(g, np.shape(v[0])), _unbroadcast(g, np.shape(v[1]))),
    )


def sub(a, b):
    return _apply(
        "sub", np.subtract, (a, b),
        lambda g, v, o: (_unbroadcast(g, np.shape(v[0])), _unbroadcast(-g, np.shape(v[1]))),
    )


def mul(a, b):
    return _apply(
        "mul", np.multiply, (a, b),
        lambda g, v, o: (_unbroadcast(g * v[1], np.shape(v[0])), _unbroadcast(g * v[0], np.shape(v[1]))),
    )


def _guarded(b, eps):
    b = np.asarray(b, dtype=DTYPE)
    return np.where(b < 0, -1.0, 1.0) * np.maximum(np.abs(b), eps)


def safe_div(a, b, eps=EPS_DIV):
    """``a / b`` with the denominator magnitude floored at ``eps``."""

    def bwd(g, v, o):
        den = _guarded(v[1], eps)
        ga = _unbroadcast(g / den, np.shape(v[0]))
        live = np.abs(v[1]) >= eps
        gb = _unbroadcast(np.where(live, -g * v[0] / (den * den), 0.0), np.shape(v[1]))
        return ga, gb

    return _apply("safe_div", lambda x, y: x / _guarded(y, eps), (a, b), bwd)


def scale(a, s):
    s = float(s)
    return _apply("scale", lambda x: x * s, (a,), lambda g, v, o: (g * s,))


def square(a):
    return _apply("square", np.square, (a,), lambda g, v, o: (2.0 * v[0] * g,))


def sqrt(a):
    return _apply("sqrt", np.sqrt, (a,), lambda g, v, o: (g / (2.0 * o),))


def log(a):
    return _apply("log", np.log, (a,), lambda g, v, o: (g / v[0],))


def sigmoid(a):
    return _apply("sigmoid", expit, (a,), lambda g, v, o: (g * o * (1.0 - o),))


def tanh(a):
    return _apply("tanh", np.tanh, (a,), lambda g, v, o: (g * (1.0 - o * o),))


def softplus(a):
    return _apply(
        "softplus", lambda x: np.logaddexp(0.0, x), (a,), lambda g, v, o: (g * expit(v[0]),)
    )


def clamp(a, lo, hi):
    def bwd(g, v, o):
        return (np.where((v[0] >= lo) & (v[0] <= hi), g, 0.0),)

    return _apply("clamp", lambda x: np.clip(x, lo, hi), (a,), bwd)


def clamp01(a):
    return clamp(a, 0.0, 1.0)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "safe_div": safe_div,
    "scale": scale,
    "clamp01": lambda a, b=None: clamp01(a),
    "square": lambda a, b=None: square(a),
}


def elementwise(op, a, b=None):
    """Strict-shape front end: ``b`` must match ``a`` exactly or be a scalar."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise InvalidArgumentError(f"unknown elementwise op {op!r}") from None
    if op in ("clamp01", "square"):
        return fn(a)
    if b is None:
        raise InvalidArgumentError(f"{op} needs a second operand")
    if op == "scale":
        if np.ndim(_unwrap(b)) != 0:
            raise InvalidArgumentError("scale takes a scalar factor")
        return scale(a, float(_unwrap(b)))
    if np.ndim(_unwrap(b)) != 0 and _shape(a) != _shape(b):
        raise InvalidArgumentError(f"shape mismatch: {_shape(a)} vs {_shape(b)}")
    return fn(a, b)


# --------------------------------------------------------------------------
# reductions and reshaping


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    def bwd(g, v, o):
        x = v[0]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, np.shape(x)).copy(),)

    return _apply("sum", lambda x: np.sum(x, axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a, axis=None, keepdims=False):
    shape = _shape(a)
    if axis is None:
        n = int(np.prod(shape))
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([shape[ax] for ax in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(parts, axis=1):
    def bwd(g, v, o):
        bounds = np.cumsum([np.shape(x)[axis] for x in v])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return _apply("concat", lambda *xs: np.concatenate(xs, axis=axis), tuple(parts), bwd)


def _getitem(a, idx):
    def bwd(g, v, o):
        full = np.zeros_like(v[0])
        full[idx] = g
        return (full,)

    return _apply("getitem", lambda x: x[idx], (a,), bwd)


def avgpool2(a):
    """2x2 mean pooling over the last two axes (even sizes only)."""
    h, w = _shape(a)[-2:]
    if h % 2 or w % 2:
        raise InvalidArgumentError(f"avgpool2 needs even spatial dims, got {h}x{w}")

    def fwd(x):
        s = x.shape
        return x.reshape(s[:-2] + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))

    def bwd(g, v, o):
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25,)

    return _apply("avgpool2", fwd, (a,), bwd)


def upsample2(a):
    """Nearest-neighbour 2x upsampling over the last two axes."""

    def fwd(x):
        return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)

    def bwd(g, v, o):
        s = g.shape
        return (g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).sum(axis=(-3, -1)),)

    return _apply("upsample2", fwd, (a,), bwd)


# --------------------------------------------------------------------------
# convolution


@lru_cache(maxsize=256)
def _reflect_matrix(n, pad):
    """One-hot (n + 2*pad, n) matrix P with P @ x == reflect-padded x."""
    if pad >= n and n > 1:
        raise InvalidArgumentError(f"reflect padding {pad} too large for size {n}")
    idx = np.pad(np.arange(n), pad, mode="reflect" if n > 1 else "edge")
    p = np.zeros((n + 2 * pad, n))
    p[np.arange(n + 2 * pad), idx] = 1.0
    p.setflags(write=False)
    return p


def reflect_pad(x, ph, pw):
    """Reflect-pad the last two axes (numpy "reflect": edge sample not repeated)."""
    h, w = x.shape[-2:]
    return np.pad(
        x,
        [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)],
        mode="reflect" if min(h, w) > 1 else "edge",
    ) if (ph or pw) else x


def _reflect_pad_adjoint(gp, h, w, ph, pw):
    return _reflect_matrix(h, ph).T @ gp @ _reflect_matrix(w, pw)


def _as_conv_operands(x, k):
    x = np.asarray(x, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    if k.ndim == 2:
        k4 = k[None, None]
    elif k.ndim == 4:
        k4 = k
    else:
        raise InvalidArgumentError(f"kernel must be 2-D or 4-D, got {k.ndim}-D")
    kh, kw = k4.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgumentError(f"kernel sides must be odd, got {kh}x{kw}")
    if x.ndim == 2:
        x4 = x[None, None]
    elif x.ndim == 3:
        x4 = x[None]
    elif x.ndim == 4:
        x4 = x
    else:
        raise InvalidArgumentError(f"input must be 2-D, 3-D or 4-D, got {x.ndim}-D")
    if x4.shape[1] != k4.shape[1]:
        raise InvalidArgumentError(
            f"kernel expects {k4.shape[1]} input channels, input has {x4.shape[1]}"
        )
    return x4, k4


def _conv_forward(x4, k4):
    n, cin, h, w = x4.shape
    cout, _, kh, kw = k4.shape
    xp = reflect_pad(x4, kh // 2, kw // 2)
    out = np.zeros((n, cout, h, w))
    # tap-by-tap accumulation in (ci, i, j) order: matches a per-pixel nested loop bit for bit
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                out += k4[None, :, ci, i, j, None, None] * xp[:, ci, None, i:i + h, j:j + w]
    return out


def conv2d(x, kernel):
    """Same-size cross-correlation with reflect padding.

    ``x`` is ``(H, W)``, ``(C, H, W)`` or ``(N, C, H, W)``; ``kernel`` is
    ``(kh, kw)`` (single channel) or ``(C_out, C_in, kh, kw)``.  Kernel sides
    must be odd.  The output keeps the input's rank.
    """
    xv, kv = _unwrap(x), _unwrap(kernel)
    x4, k4 = _as_conv_operands(xv, kv)
    xshape, kshape = np.shape(xv), np.shape(kv)
    cout = k4.shape[0]

    def shape_out(o4):
        if len(xshape) == 4:
            return o4
        if len(xshape) == 3:
            return o4[0]
        if cout != 1:
            raise InvalidArgumentError("2-D input needs a single-output kernel")
        return o4[0, 0]

    def fwd(xr, kr):
        return shape_out(_conv_forward(*_as_conv_operands(xr, kr)))

    def bwd(g, v, o):
        xa, ka = _as_conv_operands(v[0], v[1])
        g4 = np.asarray(g).reshape((xa.shape[0], ka.shape[0]) + xa.shape[-2:])
        n, cin, h, w = xa.shape
        _, _, kh, kw = ka.shape
        ph, pw = kh // 2, kw // 2
        xp = reflect_pad(xa, ph, pw)
        # patches[n, c, y, x, i, j] = xp[n, c, y + i, x + j]
        patches = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        gk = np.tensordot(g4, patches, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(ka, g4, axes=([0], [1]))  # (cin, kh, kw, n, h, w)
        gxp = np.zeros((n, cin, h + 2 * ph, w + 2 * pw))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + h, j:j + w] += cols[:, i, j].transpose(1, 0, 2, 3)
        gx = _reflect_pad_adjoint(gxp, h, w, ph, pw)
        return gx.reshape(xshape), gk.reshape(kshape)

    return _apply("conv2d", fwd, (x, kernel), bwd)


def conv2d_reference(x, kernel):
    """Per-pixel nested-loop convolution; slow, used as a test oracle."""
    x4, k4 = _as_conv_operands(x, kernel)
    n, cin, h, w = x4.shape
    cout, _, kh, kw = k4.shape
    xp = reflect_pad(x4, kh // 2, kw // 2)
    out = np.zeros((n, cout, h, w))
    for b in range(n):
        for co in range(cout):
            for y in range(h):
                for xx in range(w):
                    s = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                s += k4[co, ci, i, j] * xp[b, ci, y + i, xx + j]
                    out[b, co, y, xx] = s
    if np.ndim(x) == 4:
        return out
    if np.ndim(x) == 3:
        return out[0]
    return out[0, 0]


def value(x):
    """Raw numpy value of a Var or array."""
    return _unwrap(x)
