"""Reverse-mode automatic differentiation on numpy arrays.

Operations build an implicit tape: every result is a :class:`Var` holding its
value, its parent nodes and a vector-Jacobian callback. :func:`backward` walks
the recorded graph once in reverse topological order and returns gradients for
every labeled leaf.

Values are float64 or complex128 ndarrays. For a real-valued loss the
gradient stored for a complex node is dL/dRe + 1j * dL/dIm, which makes the
FFT adjoints the appropriately scaled inverse transforms and lets spectral
weights be checked coordinate-wise against finite differences on their real
and imaginary parts. Contributions flowing from a complex result into a
real-valued node keep only their real part.
"""

from __future__ import annotations

import numpy as np

from . import tensor_ops


class GradientError(RuntimeError):
    """Raised when backward propagation produces a non-finite gradient."""


class Var:
    """A node of the recorded computation graph.

    ``label`` marks a leaf whose gradient :func:`backward` should report;
    ``op`` only names the operation for error messages.
    """

    __slots__ = ("value", "label", "op", "_parents", "_vjp")

    # Keep numpy's ufuncs from swallowing Vars into object arrays; a mixed
    # ndarray-Var expression then falls back to the reflected operator here.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, op=None, *, label=None):
        self.value = np.asarray(value, dtype=np.complex128 if np.iscomplexobj(value) else np.float64)
        self.label = label
        self.op = op
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.label or self.op or 'leaf'}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a real scalar loss for every labeled node it depends on.

    Each recorded node is visited exactly once, in reverse topological order.
    Raises :class:`GradientError` on the first non-finite gradient, naming the
    offending node.
    """
    lv = loss.value
    if np.iscomplexobj(lv) or lv.size != 1:
        raise ValueError(f"backward needs a real scalar loss, got shape {lv.shape}")
    if not np.isfinite(lv):
        raise GradientError("loss is non-finite")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(lv)}
    out: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient at node '{node.label or node.op or 'leaf'}'")
        if node.label is not None:
            prev = out.get(node.label)
            out[node.label] = g if prev is None else prev + g
        if node._vjp is None:
            continue
        for parent, contrib in zip(node._parents, node._vjp(g)):
            if contrib is None:
                continue
            if np.isrealobj(parent.value) and np.iscomplexobj(contrib):
                contrib = contrib.real
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
        "add",
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
        "sub",
    )


def neg(a) -> Var:
    a = as_var(a)
    return Var(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * np.conj(b.value), a.value.shape),
            _unbroadcast(g * np.conj(a.value), b.value.shape),
        ),
        "mul",
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * np.conj(1.0 / b.value), a.value.shape),
            _unbroadcast(g * np.conj(-a.value / b.value**2), b.value.shape),
        ),
        "div",
    )


def pow_const(a, p: float) -> Var:
    a = as_var(a)
    if np.iscomplexobj(a.value):
        raise TypeError("pow_const is defined for real operands")
    return Var(a.value**p, (a,), lambda g: (g * p * a.value ** (p - 1),), "pow")


def _real_elementwise(name, fn, dfn):
    def op(a) -> Var:
        a = as_var(a)
        if np.iscomplexobj(a.value):
            raise TypeError(f"{name} is defined for real operands")
        y = fn(a.value)
        return Var(y, (a,), lambda g: (g * dfn(a.value, y),), name)

    return op


exp = _real_elementwise("exp", np.exp, lambda x, y: y)
log = _real_elementwise("log", np.log, lambda x, y: 1.0 / x)
sqrt = _real_elementwise("sqrt", np.sqrt, lambda x, y: 0.5 / y)
sin = _real_elementwise("sin", np.sin, lambda x, y: np.cos(x))
cos = _real_elementwise("cos", np.cos, lambda x, y: -np.sin(x))
tanh = _real_elementwise("tanh", np.tanh, lambda x, y: 1.0 - y * y)
sigmoid = _real_elementwise(
    "sigmoid",
    lambda x: 1.0 / (1.0 + np.exp(-x)),
    lambda x, y: y * (1.0 - y),
)

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def _gelu_fwd(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def _gelu_grad(x, _y):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


gelu = _real_elementwise("gelu", _gelu_fwd, _gelu_grad)


# ---------------------------------------------------------------------------
# reductions and shape ops

def sum_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    count = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy() / count,)

    return Var(a.value.mean(axis=axis, keepdims=keepdims), (a,), vjp, "mean")


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),), "reshape")


def transpose(a, axes) -> Var:
    a = as_var(a)
    inv = np.argsort(axes)
    return Var(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(parts, axis: int) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp, "concat")


# ---------------------------------------------------------------------------
# complex structure

def real(a) -> Var:
    a = as_var(a)
    return Var(a.value.real.copy(), (a,), lambda g: (g,), "real")


def conj(a) -> Var:
    a = as_var(a)
    return Var(np.conj(a.value), (a,), lambda g: (np.conj(g),), "conj")


def freq_flip(a) -> Var:
    a = as_var(a)
    return Var(tensor_ops.freq_flip(a.value), (a,), lambda g: (tensor_ops.freq_flip(g),), "freq_flip")


def fft2(a) -> Var:
    a = as_var(a)
    n = a.value.shape[-3] * a.value.shape[-2]
    return Var(tensor_ops.fft2(a.value), (a,), lambda g: (n * tensor_ops.ifft2(g),), "fft2")


def ifft2(a) -> Var:
    a = as_var(a)
    n = a.value.shape[-3] * a.value.shape[-2]
    return Var(tensor_ops.ifft2(a.value), (a,), lambda g: (tensor_ops.fft2(g) / n,), "ifft2")


# ---------------------------------------------------------------------------
# contractions

def einsum2(spec: str, a, b) -> Var:
    """Two-operand einsum with a generic adjoint.

    Every index of one operand must appear in the output or the other operand
    (no reductions internal to a single operand), which is what makes the
    swapped-spec VJP below exact.
    """
    a, b = as_var(a), as_var(b)
    lhs, out_spec = spec.replace(" ", "").split("->")
    spec_a, spec_b = lhs.split(",")
    for s, other in ((spec_a, spec_b), (spec_b, spec_a)):
        if len(set(s)) != len(s):
            raise ValueError(f"einsum2: repeated index within one operand in {spec!r}")
        if not set(s) <= set(out_spec) | set(other):
            raise ValueError(f"einsum2: index reduced within a single operand in {spec!r}")

    def vjp(g):
        return (
            np.einsum(f"{out_spec},{spec_b}->{spec_a}", g, np.conj(b.value)),
            np.einsum(f"{out_spec},{spec_a}->{spec_b}", g, np.conj(a.value)),
        )

    return Var(np.einsum(spec, a.value, b.value), (a, b), vjp, "einsum")


def conv2d(x, kernel, bias=None) -> Var:
    """Same-padded cross-correlation, differentiable in input, kernel and bias."""
    x, kernel = as_var(x), as_var(kernel)
    bias = as_var(bias) if bias is not None else None
    kh, kw = kernel.value.shape[:2]
    h, w = x.value.shape[1], x.value.shape[2]
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.value, ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0)))
    out = np.zeros(x.value.shape[:3] + (kernel.value.shape[3],))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("bhwc,cd->bhwd", xp[:, i : i + h, j : j + w], kernel.value[i, j])
    if bias is not None:
        out += bias.value

    def vjp(g):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kernel.value)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + h, j : j + w] += np.einsum("bhwd,cd->bhwc", g, kernel.value[i, j])
                dk[i, j] = np.einsum("bhwc,bhwd->cd", xp[:, i : i + h, j : j + w], g)
        dx = dxp[:, pt : pt + h, pl : pl + w]
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(0, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Var(out, parents, vjp, "conv2d")


def gather2d(p, rows: np.ndarray, cols: np.ndarray) -> Var:
    """p[rows][:, cols] on the two leading axes; adjoint scatter-adds duplicates."""
    p = as_var(p)
    idx = (np.asarray(rows)[:, None], np.asarray(cols)[None, :])

    def vjp(g):
        dp = np.zeros_like(p.value)
        np.add.at(dp, idx, g)
        return (dp,)

    return Var(p.value[idx], (p,), vjp, "gather2d")


# ---------------------------------------------------------------------------
# finite differences (the numerical cross-check route)

def fd_gradient(fn, arrays: dict[str, np.ndarray], name: str, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function in one named array.

    Complex arrays are perturbed separately in their real and imaginary parts
    and the result packed as dRe + 1j*dIm, matching the tape convention.
    """
    base = {k: np.array(v) for k, v in arrays.items()}
    target = base[name]
    grad = np.zeros_like(target)
    parts = (1.0, 1.0j) if np.iscomplexobj(target) else (1.0,)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        for unit in parts:
            keep = flat[i]
            flat[i] = keep + h * unit
            up = float(value_of(fn(base)))
            flat[i] = keep - h * unit
            dn = float(value_of(fn(base)))
            flat[i] = keep
            gflat[i] += unit * (up - dn) / (2.0 * h)
    return grad


def check_gradients(fn, arrays: dict[str, np.ndarray], rtol: float = 1e-4,
                    atol: float = 1e-6, h: float = 1e-5) -> dict[str, float]:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` maps a dict of array-likes (Vars for the analytic pass, plain
    ndarrays for the numerical pass) to a scalar. Returns the worst
    elementwise discrepancy scale per name:
    |a - f| / (atol + rtol * max(|a|, |f|)); values <= 1 pass.
    """
    loss = fn({k: Var(v, label=k) for k, v in arrays.items()})
    analytic = backward(loss)
    report = {}
    for name in arrays:
        a = analytic.get(name, np.zeros_like(arrays[name]))
        f = fd_gradient(fn, arrays, name, h)
        num = np.abs(a - f)
        den = atol + rtol * np.maximum(np.abs(a), np.abs(f))
        report[name] = float((num / den).max()) if num.size else 0.0
    return report
