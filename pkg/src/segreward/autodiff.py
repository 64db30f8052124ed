"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and records enough of the computation
graph to backpropagate a scalar loss. Ops cover what the reward model and
its losses need: broadcasting arithmetic, batched matmul, reductions,
shape moves, gather, and a few pointwise nonlinearities. Everything is
float64 so central finite differences stay meaningful for grad checks.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward passes only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing broadcast dimensions."""
    if grad.shape == shape:
        return grad
    # sum away leading axes numpy added during broadcasting
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # then sum axes that were stretched from size 1
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # ------------------------------------------------------------------
    # construction helpers

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # graph plumbing

    def _accumulate(self, g: np.ndarray, fresh: bool = False) -> None:
        """Add `g` into .grad; `fresh` marks g as a newly allocated array this
        tensor may take ownership of (it must not alias any other grad)."""
        if self.grad is None:
            if fresh and g.shape == self.data.shape:
                self.grad = g
                return
            self.grad = np.array(g, dtype=self.data.dtype)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar tensor, filling .grad on leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        out = _make(self.data + other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    g = _unbroadcast(out.grad, self.data.shape)
                    self._accumulate(g, fresh=g is not out.grad)
                if other.requires_grad:
                    g = _unbroadcast(out.grad, other.data.shape)
                    other._accumulate(g, fresh=g is not out.grad)
            out._backward = _bw
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        out = _make(self.data * other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape),
                                     fresh=True)
                if other.requires_grad:
                    other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape),
                                      fresh=True)
            out._backward = _bw
        return out

    def __sub__(self, other):
        other = as_tensor(other)
        out = _make(self.data - other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    g = _unbroadcast(out.grad, self.data.shape)
                    self._accumulate(g, fresh=g is not out.grad)
                if other.requires_grad:
                    other._accumulate(_unbroadcast(-out.grad, other.data.shape), fresh=True)
            out._backward = _bw
        return out

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _make(self.data / other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad / other.data, self.data.shape),
                                     fresh=True)
                if other.requires_grad:
                    g = -out.grad * self.data / (other.data * other.data)
                    other._accumulate(_unbroadcast(g, other.data.shape), fresh=True)
            out._backward = _bw
        return out

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(-out.grad, fresh=True)
            out._backward = _bw
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _make(self.data ** exponent, (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1), fresh=True)
            out._backward = _bw
        return out

    def __radd__(self, other):
        return as_tensor(other) + self

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __rmul__(self, other):
        return as_tensor(other) * self

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        out = _make(np.matmul(self.data, other.data), (self, other))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if self.requires_grad:
                    ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
                    self._accumulate(_unbroadcast(ga, self.data.shape), fresh=True)
                if other.requires_grad:
                    if other.data.ndim == 2 and self.data.ndim > 2:
                        # (..., n, k) @ (k, m): fold the batch dims into one GEMM
                        # instead of reducing a broadcast (..., k, m) temporary
                        k = self.data.shape[-1]
                        gb = self.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                        other._accumulate(gb, fresh=True)
                    else:
                        gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
                        other._accumulate(_unbroadcast(gb, other.data.shape), fresh=True)
            out._backward = _bw
        return out

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis=None, keepdims: bool = False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    axes = axis if isinstance(axis, tuple) else (axis,)
                    for ax in sorted(a % self.data.ndim for a in axes):
                        g = np.expand_dims(g, ax)
                self._accumulate(np.broadcast_to(g, self.data.shape).copy(), fresh=True)
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # ------------------------------------------------------------------
    # shape moves

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(out.grad.reshape(self.data.shape))
            out._backward = _bw
        return out

    def swapaxes(self, a: int, b: int):
        out = _make(np.swapaxes(self.data, a, b), (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(np.swapaxes(out.grad, a, b))
            out._backward = _bw
        return out

    def transpose(self):
        if self.data.ndim != 2:
            raise ValueError("transpose() expects a 2-D tensor")
        return self.swapaxes(0, 1)

    def __getitem__(self, idx):
        out = _make(self.data[idx], (self,))
        if out.requires_grad:
            def _bw():
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self._accumulate(g, fresh=True)
            out._backward = _bw
        return out

    # ------------------------------------------------------------------
    # pointwise nonlinearities

    def tanh(self):
        y = np.tanh(self.data)
        out = _make(y, (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(out.grad * (1.0 - y * y), fresh=True)
            out._backward = _bw
        return out

    def exp(self):
        y = np.exp(self.data)
        out = _make(y, (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(out.grad * y, fresh=True)
            out._backward = _bw
        return out

    def log(self):
        out = _make(np.log(self.data), (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(out.grad / self.data, fresh=True)
            out._backward = _bw
        return out

    def sqrt(self):
        y = np.sqrt(self.data)
        out = _make(y, (self,))
        if out.requires_grad:
            def _bw():
                self._accumulate(out.grad * 0.5 / y, fresh=True)
            out._backward = _bw
        return out

    def relu(self):
        out = _make(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            mask = (self.data > 0.0).astype(np.float64)
            def _bw():
                self._accumulate(out.grad * mask, fresh=True)
            out._backward = _bw
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient is passed only where no clamping happened."""
        out = _make(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            mask = ((self.data > lo) & (self.data < hi)).astype(np.float64)
            def _bw():
                self._accumulate(out.grad * mask, fresh=True)
            out._backward = _bw
        return out


def _make(data: np.ndarray, parents: tuple) -> Tensor:
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def _bw():
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(start, stop)
                    t._accumulate(out.grad[tuple(sl)])
        out._backward = _bw
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax along `axis`.

    The max shift is treated as a constant, which leaves the exact gradient
    unchanged because logsumexp is invariant to it.
    """
    shift = np.max(x.data, axis=axis, keepdims=True)
    z = x - Tensor(shift)
    lse = z.exp().sum(axis=axis, keepdims=True).log()
    return z - lse


# ---------------------------------------------------------------------------
# fused ops: single graph nodes with hand-derived backwards, used on the
# training hot path where per-node dispatch overhead dominates


def linear(x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    """x @ w (+ b) as one node; w is 2-D, b broadcasts over the last axis.

    Batch axes of x are folded into one 2-D GEMM rather than looped over.
    """
    if w.data.ndim != 2:
        raise ValueError("linear() expects a 2-D weight")
    xd = x.data
    k_in, k_out = w.data.shape
    lead = xd.shape[:-1]
    out_data = np.matmul(xd.reshape(-1, k_in), w.data)
    if b is not None:
        out_data += b.data
    out = _make(out_data.reshape(lead + (k_out,)), (x, w) if b is None else (x, w, b))
    if out.requires_grad:
        def _bw():
            g2 = out.grad.reshape(-1, k_out)
            if x.requires_grad:
                x._accumulate(np.matmul(g2, w.data.T).reshape(xd.shape), fresh=True)
            if w.requires_grad:
                w._accumulate(xd.reshape(-1, k_in).T @ g2, fresh=True)
            if b is not None and b.requires_grad:
                b._accumulate(g2.sum(axis=0), fresh=True)
        out._backward = _bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learnable gain and bias."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xhat = xd - mu
    var = np.mean(xhat * xhat, axis=-1, keepdims=True)
    var += eps
    inv = 1.0 / np.sqrt(var)
    xhat *= inv
    out_data = xhat * gain.data
    out_data += bias.data
    out = _make(out_data, (x, gain, bias))
    if out.requires_grad:
        def _bw():
            g = out.grad
            n = xd.shape[-1]
            flat = (-1, n)
            if gain.requires_grad:
                gain._accumulate((g * xhat).reshape(flat).sum(axis=0), fresh=True)
            if bias.requires_grad:
                bias._accumulate(g.reshape(flat).sum(axis=0), fresh=True)
            if x.requires_grad:
                gx = g * gain.data
                dot1 = gx.sum(axis=-1, keepdims=True)
                dot2 = np.einsum("...i,...i->...", gx, xhat)[..., None]
                tmp = xhat * dot2
                tmp += dot1
                tmp /= n
                gx -= tmp
                gx *= inv
                x._accumulate(gx, fresh=True)
        out._backward = _bw
    return out


def causal_attention(q: Tensor, k: Tensor, v: Tensor, scale: float,
                     mask: np.ndarray) -> Tensor:
    """softmax(q k^T * scale + mask) @ v over the trailing two axes.

    `mask` is additive (large negative values silence positions); entries it
    pushes below the float exponent range get weight exactly zero, so masked
    positions contribute nothing, bitwise.
    """
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale + mask
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    out = _make(np.matmul(attn, v.data), (q, k, v))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if v.requires_grad:
                v._accumulate(np.matmul(np.swapaxes(attn, -1, -2), g), fresh=True)
            da = np.matmul(g, np.swapaxes(v.data, -1, -2))
            ds = attn * (da - (da * attn).sum(axis=-1, keepdims=True))
            ds *= scale
            if q.requires_grad:
                q._accumulate(np.matmul(ds, k.data), fresh=True)
            if k.requires_grad:
                k._accumulate(np.matmul(np.swapaxes(ds, -1, -2), q.data), fresh=True)
        out._backward = _bw
    return out
