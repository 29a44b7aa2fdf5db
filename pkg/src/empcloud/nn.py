"""Minimal dense-network substrate: float64 tensors with reverse-mode
gradients, dense/gated layers, sigmoid/swish activations, and Adam.

The networks used here are small static graphs of matrix products and
elementwise gates, so a closure-based tape is all that is needed. Everything
runs in double precision and single-threaded evaluation is bitwise
deterministic, which the training/checkpoint layer relies on.
"""

import numpy as np

CHECK_FINITE = True


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus the closure that routes its gradient backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- graph construction --------------------------------------------------
    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _result(data, parents, backward):
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite intermediate in network graph")
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, grad):
        if self.requires_grad:
            self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = Tensor._lift(other)
        try:
            data = self.data + other.data
        except ValueError as exc:
            raise ValueError(f"shape mismatch in add: {self.shape} vs {other.shape}") from exc

        def backward(grad):
            self._accum(_unbroadcast(grad, self.data.shape))
            other._accum(_unbroadcast(grad, other.data.shape))

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._lift(other)
        try:
            data = self.data * other.data
        except ValueError as exc:
            raise ValueError(f"shape mismatch in mul: {self.shape} vs {other.shape}") from exc

        def backward(grad):
            self._accum(_unbroadcast(grad * other.data, self.data.shape))
            other._accum(_unbroadcast(grad * self.data, other.data.shape))

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def matmul(self, other):
        other = Tensor._lift(other)
        if self.data.shape[-1] != other.data.shape[0]:
            raise ValueError(f"shape mismatch in matmul: {self.shape} @ {other.shape}")
        data = self.data @ other.data

        def backward(grad):
            self._accum(grad @ other.data.T)
            other._accum(self.data.T @ grad)

        return Tensor._result(data, (self, other), backward)

    __matmul__ = matmul

    def transpose(self):
        def backward(grad):
            self._accum(grad.T)

        return Tensor._result(self.data.T, (self,), backward)

    @property
    def T(self):
        return self.transpose()

    # -- reductions and reshaping ----------------------------------------------
    def sum(self):
        def backward(grad):
            self._accum(np.broadcast_to(grad, self.data.shape).copy() if np.ndim(grad) else np.full(self.data.shape, grad))

        return Tensor._result(np.sum(self.data), (self,), backward)

    def mean(self):
        n = self.data.size
        return self.sum() * (1.0 / n)

    def slice_cols(self, lo, hi):
        def backward(grad):
            full = np.zeros_like(self.data)
            full[:, lo:hi] = grad
            self._accum(full)

        return Tensor._result(self.data[:, lo:hi], (self,), backward)

    def repeat_rows(self, n):
        """Tile a (1, d) tensor to (n, d); gradient sums over the copies."""
        if self.data.ndim != 2 or self.data.shape[0] != 1:
            raise ValueError("repeat_rows expects a (1, d) tensor")

        def backward(grad):
            self._accum(grad.sum(axis=0, keepdims=True))

        return Tensor._result(np.repeat(self.data, n, axis=0), (self,), backward)

    # -- backprop ---------------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() only from a scalar loss")
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)


def concat(tensors, axis=1):
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * grad.ndim
            sl[axis] = slice(lo, hi)
            t._accum(grad[tuple(sl)])

    return Tensor._result(data, tuple(tensors), backward)


def sigmoid(t: Tensor) -> Tensor:
    t = Tensor._lift(t)
    x = t.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(grad):
        t._accum(grad * s * (1.0 - s))

    return Tensor._result(s, (t,), backward)


def swish(t: Tensor) -> Tensor:
    """x * sigmoid(x); the gradient composes from the primitive ops."""
    return t * sigmoid(t)


def sigmoid_np(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def swish_np(x):
    return x * sigmoid_np(x)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
class Dense:
    """Affine layer with weight (out, in) and bias (out,)."""

    def __init__(self, in_dim, out_dim, rng, name="dense", weight_scale=None, zero_init=False):
        scale = weight_scale if weight_scale is not None else 1.0 / np.sqrt(in_dim)
        w = np.zeros((out_dim, in_dim)) if zero_init else rng.normal(0.0, scale, size=(out_dim, in_dim))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight.T + self.bias

    def apply_np(self, x):
        return x @ self.weight.data.T + self.bias.data

    def params(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class MLP:
    """Stack of dense layers with swish between them (none after the last)."""

    def __init__(self, widths, rng, name="mlp"):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.layers = [
            Dense(widths[i], widths[i + 1], rng, name=f"{name}.l{i}") for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = swish(layer(x))
        return self.layers[-1](x)

    def apply_np(self, x):
        for layer in self.layers[:-1]:
            x = swish_np(layer.apply_np(x))
        return self.layers[-1].apply_np(x)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class ConcatSquash:
    """Dense layer gated and shifted by affine maps of a context vector:
    out = (W1 x + b1) * sigmoid(W2 c + b2) + W3 c (no bias on the shift)."""

    def __init__(self, in_dim, out_dim, ctx_dim, rng, name="cs"):
        self.main = Dense(in_dim, out_dim, rng, name=f"{name}.main")
        self.gate = Dense(ctx_dim, out_dim, rng, name=f"{name}.gate")
        self.shift = Dense(ctx_dim, out_dim, rng, name=f"{name}.shift")
        self.shift.bias.requires_grad = False  # stays zero: the shift is W3 c with no bias
        self.name = name

    def __call__(self, x: Tensor, c: Tensor) -> Tensor:
        return self.main(x) * sigmoid(self.gate(c)) + c @ self.shift.weight.T

    def apply_np(self, x, c):
        return self.main.apply_np(x) * sigmoid_np(self.gate.apply_np(c)) + c @ self.shift.weight.data.T

    def params(self):
        return (
            self.main.params()
            + self.gate.params()
            + [(f"{self.name}.shift.weight", self.shift.weight)]
        )


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------
class Adam:
    """Standard Adam with bias correction; zero gradients leave parameters fixed."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient in Adam step")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self):
        """Moment arrays keyed for checkpointing, plus the step counter."""
        out = {}
        for i in range(len(self.params)):
            out[f"adam.m.{i}"] = self.m[i]
            out[f"adam.v.{i}"] = self.v[i]
        return out, self.step_count

    def load_state(self, arrays, step_count):
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"adam.m.{i}"], dtype=np.float64)
            self.v[i] = np.array(arrays[f"adam.v.{i}"], dtype=np.float64)
        self.step_count = int(step_count)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------
def gradcheck(loss_fn, params, eps=1e-6, rtol=1e-4, max_entries=None, rng=None):
    """Compare reverse-mode gradients with central finite differences.

    ``loss_fn()`` must rebuild the graph and return a scalar Tensor.
    Returns the worst relative error across checked entries.
    """
    loss = loss_fn()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        idxs = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        for k in idxs:
            orig = flat[k]
            flat[k] = orig + eps
            up = float(loss_fn().data)
            flat[k] = orig - eps
            down = float(loss_fn().data)
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            ana = g.reshape(-1)[k]
            denom = max(1.0, abs(numeric), abs(ana))
            worst = max(worst, abs(numeric - ana) / denom)
    if worst > rtol:
        raise AssertionError(f"gradcheck failed: worst relative error {worst:.3e} > {rtol}")
    return worst
