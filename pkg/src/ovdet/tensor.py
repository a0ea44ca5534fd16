"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Row-major contiguous storage, no views or strides: every op copies, which
keeps backward rules simple and runs are bit-reproducible given a seed
(all reductions use numpy's sequential accumulation order).

Any op that produces a NaN/Inf raises :class:`NonFiniteError` naming the op
instead of propagating silently; silent non-finite values would invalidate
the finite-difference gradient checks that anchor this codebase.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "no_grad",
    "backward",
    "finite_diff_check",
    "finite_diff_errors",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's precondition."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf from finite inputs."""


class TapeError(RuntimeError):
    """Recording or backward was attempted in an invalid tape state."""


class Tape:
    """Execution-ordered record of differentiable ops.

    Creation order is topological order: an op's inputs always exist before
    its output is recorded. ``backward`` walks the record once, in reverse.
    Use as a context manager; one tape per model step, single-threaded.
    """

    _active: "Tape | None" = None

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        self._prev = Tape._active
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = self._prev

    def record(self, t: "Tensor") -> None:
        t._pos = len(self.nodes)
        self.nodes.append(t)


class no_grad:
    """Context manager disabling recording; results carry requires_grad=False."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


_GRAD_ENABLED = True


class Tensor:
    """n-d float64 array plus the bookkeeping needed for reverse mode.

    ``grad`` is allocated lazily: it stays None until a backward pass
    deposits into it, and only leaf tensors (no parents) retain gradients
    across calls. Repeated backward calls accumulate into leaf grads.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_bwd", "_pos")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None
        self._pos = -1

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, p):
        return pow_(self, p)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        tape = Tape._active
        if tape is None:
            raise TapeError(f"op {op!r} needs gradients but no tape is active")
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
        tape.record(out)
    return out


def _binary(op: str, a, b) -> tuple[Tensor, Tensor]:
    a, b = _wrap(a), _wrap(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
    return a, b


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary("add", a, b)

    def bwd(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    return _make("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _binary("sub", a, b)

    def bwd(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(-g, b.shape))

    return _make("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _binary("mul", a, b)

    def bwd(g, acc):
        acc(a, _unbroadcast(g * b.data, a.shape))
        acc(b, _unbroadcast(g * a.data, b.shape))

    return _make("mul", a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _binary("div", a, b)

    def bwd(g, acc):
        acc(a, _unbroadcast(g / b.data, a.shape))
        acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    with np.errstate(all="ignore"):  # NaN policy raises on the result instead
        out = a.data / b.data
    return _make("div", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g, acc: acc(a, -g))


def pow_(a: Tensor, p: float) -> Tensor:
    p = float(p)
    with np.errstate(all="ignore"):
        out_data = a.data**p

    def bwd(g, acc):
        acc(a, g * p * a.data ** (p - 1.0))

    return _make("pow", out_data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make("exp", e, (a,), lambda g, acc: acc(a, g * e))


def log(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return _make("log", out, (a,), lambda g, acc: acc(a, g / a.data))


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        s = np.sqrt(a.data)
    return _make("sqrt", s, (a,), lambda g, acc: acc(a, g * 0.5 / s))


def abs_(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    return _make("abs", np.abs(a.data), (a,), lambda g, acc: acc(a, g * np.sign(a.data)))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make("tanh", t, (a,), lambda g, acc: acc(a, g * (1.0 - t * t)))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    return _make("sigmoid", s, (a,), lambda g, acc: acc(a, g * s * (1.0 - s)))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g, acc: acc(a, g * mask))


def sin(a: Tensor) -> Tensor:
    return _make("sin", np.sin(a.data), (a,), lambda g, acc: acc(a, g * np.cos(a.data)))


def cos(a: Tensor) -> Tensor:
    return _make("cos", np.cos(a.data), (a,), lambda g, acc: acc(a, -g * np.sin(a.data)))


def maximum(a, b) -> Tensor:
    a, b = _binary("maximum", a, b)
    take_a = a.data >= b.data  # ties go to the first operand

    def bwd(g, acc):
        acc(a, _unbroadcast(g * take_a, a.shape))
        acc(b, _unbroadcast(g * ~take_a, b.shape))

    return _make("maximum", np.maximum(a.data, b.data), (a, b), bwd)


def minimum(a, b) -> Tensor:
    a, b = _binary("minimum", a, b)
    take_a = a.data <= b.data

    def bwd(g, acc):
        acc(a, _unbroadcast(g * take_a, a.shape))
        acc(b, _unbroadcast(g * ~take_a, b.shape))

    return _make("minimum", np.minimum(a.data, b.data), (a, b), bwd)


def bce_logits(x: Tensor, target: np.ndarray) -> Tensor:
    """Per-element binary cross-entropy on logits, numerically stable.

    ``target`` is a constant array of the same (broadcastable) shape.
    Backward: sigmoid(x) - target.
    """
    t = np.asarray(target, dtype=np.float64)
    val = np.maximum(x.data, 0.0) - x.data * t + np.log1p(np.exp(-np.abs(x.data)))

    def bwd(g, acc):
        acc(x, g * (_sigmoid_np(x.data) - t))

    return _make("bce_logits", val, (x,), bwd)


# -- linear algebra and reductions -------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product with broadcasting over leading dims.

    Backward: dA = dC @ B^T, dB = A^T @ dC (broadcast dims summed out).
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents disagree for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None

    def bwd(g, acc):
        acc(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        acc(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make("matmul", np.matmul(a.data, b.data), (a, b), bwd)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            acc(a, np.broadcast_to(gg, a.shape).copy())

    return _make("sum", out, (a,), bwd)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def bwd(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g / n, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            acc(a, np.broadcast_to(gg / n, a.shape).copy())

    return _make("mean", out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax (max-subtraction); rows sum to 1 along ``axis``."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g, acc):
        dot = (g * y).sum(axis=axis, keepdims=True)
        acc(a, y * (g - dot))

    return _make("softmax", y, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def bwd(g, acc):
        acc(a, g.reshape(a.shape))

    return _make("reshape", out, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def bwd(g, acc):
        acc(a, np.transpose(g, inv))

    return _make("transpose", np.transpose(a.data, axes), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            acc(t, piece)

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select rows along ``axis`` by integer indices; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def bwd(g, acc):
        buf = np.zeros(a.shape)
        sl = [slice(None)] * a.ndim
        sl[axis] = idx
        np.add.at(buf, tuple(sl), g)
        acc(a, buf)

    return _make("take", out, (a,), bwd)


def pool(a: Tensor, mode: str, mask: np.ndarray | None = None) -> Tensor:
    """Pool over the length axis of ``[.., L, D]`` down to ``[.., D]``.

    ``mask`` (bool, shape ``[.., L]``) restricts pooling to valid positions.
    Max pooling routes the gradient to the lowest-index maximizer, matching
    the top-k tie-break policy.
    """
    if a.ndim < 2 or a.shape[-2] == 0:
        raise ShapeError(f"pool: need [.., L>=1, D], got {a.shape}")
    L = a.shape[-2]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:-1]:
            raise ShapeError(f"pool: mask shape {mask.shape} does not match {a.shape[:-1]}")
        if not mask.any(axis=-1).all():
            raise ShapeError("pool: some rows have no valid positions")
    if mode == "mean":
        if mask is None:
            out = a.data.mean(axis=-2)

            def bwd(g, acc):
                acc(a, np.repeat(np.expand_dims(g / L, -2), L, axis=-2))

        else:
            m = mask[..., None].astype(np.float64)
            counts = m.sum(axis=-2)
            out = (a.data * m).sum(axis=-2) / counts

            def bwd(g, acc):
                acc(a, np.expand_dims(g / counts, -2) * m)

    elif mode == "max":
        masked = a.data if mask is None else np.where(mask[..., None], a.data, -np.inf)
        arg = masked.argmax(axis=-2)  # first (lowest-index) maximizer wins ties
        out = np.take_along_axis(masked, np.expand_dims(arg, -2), axis=-2).squeeze(-2)

        def bwd(g, acc):
            buf = np.zeros(a.shape)
            np.put_along_axis(buf, np.expand_dims(arg, -2), np.expand_dims(g, -2), axis=-2)
            acc(a, buf)

    else:
        raise ValueError(f"pool: unknown mode {mode!r}")
    return _make(f"pool_{mode}", out, (a,), bwd)


def topk_gather(scores, values: Tensor, k: int):
    """Select the top-k positions of ``scores`` per batch row and gather ``values``.

    scores: ``[B, P]`` (Tensor or ndarray; never receives gradient),
    values: ``[B, P, *]``. Returns ``(indices [B, k], gathered [B, k, *])``
    with indices in descending score order, ties broken by lowest index.
    Gradients flow through the gathered values only.
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"topk_gather: scores must be [B, P], got {s.shape}")
    B, P = s.shape
    if not 1 <= k <= P:
        raise ShapeError(f"topk_gather: k={k} out of range for P={P}")
    if values.shape[:2] != (B, P):
        raise ShapeError(f"topk_gather: values {values.shape} do not match scores {s.shape}")
    # stable argsort on negated scores: descending with lowest-index tie-break
    idx = np.argsort(-s, axis=1, kind="stable")[:, :k]
    rows = np.arange(B)[:, None]
    out = values.data[rows, idx]

    def bwd(g, acc):
        buf = np.zeros(values.shape)
        np.add.at(buf, (rows, idx), g)
        acc(values, buf)

    return idx, _make("topk_gather", out, (values,), bwd)


def layernorm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.shape != (a.shape[-1],) or bias.shape != (a.shape[-1],):
        raise ShapeError(f"layernorm: gain/bias must be ({a.shape[-1]},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g, acc):
        lead = tuple(range(g.ndim - 1))
        acc(gain, (g * xhat).sum(axis=lead))
        acc(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        acc(a, (dxhat - m1 - xhat * m2) * inv)

    return _make("layernorm", out, (a, gain, bias), bwd)


# -- backward pass -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be scalar. Leaf grads accumulate across calls until
    cleared; intermediate grads live only for the duration of the walk.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("backward: loss does not require grad (nothing recorded)")
    tape = Tape._active
    if tape is None or loss._pos < 0 or tape.nodes[loss._pos] is not loss:
        raise TapeError("backward: loss was not recorded on the active tape")

    interim: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        if t._bwd is None:  # leaf: persistent accumulator
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g
        else:
            key = id(t)
            if key in interim:
                interim[key] += g
            else:
                interim[key] = g.astype(np.float64, copy=True)

    for node in reversed(tape.nodes[: loss._pos + 1]):
        g = interim.pop(id(node), None)
        if g is None:
            continue
        node._bwd(g, acc)


# -- finite-difference oracle -------------------------------------------------


def finite_diff_errors(f, x: np.ndarray, eps: float = 1e-5, coords=None, structure=None):
    """Per-coordinate relative error between autodiff and central differences.

    ``f`` maps a Tensor to a scalar Tensor. Coordinates where ``structure``
    (a callable returning a hashable discrete signature, e.g. an argmax
    pattern) differs between x+eps and x-eps are non-checkable and reported
    as NaN: the op is only sub-differentiable there.
    Relative error is |ad - fd| / max(1e-8, |ad| + |fd|).
    """
    x = np.asarray(x, dtype=np.float64)
    with Tape():
        xt = Tensor(x, requires_grad=True)
        out = f(xt)
        backward(out)
        ad = np.zeros_like(x) if xt.grad is None else xt.grad.copy()

    def eval_at(arr: np.ndarray) -> float:
        with no_grad():
            return f(Tensor(arr)).item()

    flat = x.reshape(-1)
    ad_flat = ad.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    errs = np.full(flat.size, np.nan)
    for i in coords:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        xp = xp.reshape(x.shape)
        xm = xm.reshape(x.shape)
        if structure is not None and structure(xp) != structure(xm):
            continue  # non-checkable: discrete structure changes across the stencil
        fd = (eval_at(xp) - eval_at(xm)) / (2.0 * eps)
        errs[i] = abs(ad_flat[i] - fd) / max(1e-8, abs(ad_flat[i]) + abs(fd))
    return errs


def finite_diff_check(f, x: np.ndarray, eps: float = 1e-5, coords=None, structure=None) -> float:
    """Max relative error of autodiff vs central differences over checkable coords."""
    errs = finite_diff_errors(f, x, eps=eps, coords=coords, structure=structure)
    checkable = errs[~np.isnan(errs)]
    return float(checkable.max()) if checkable.size else 0.0
