"""Similarity and correlation kernels plus the finite-difference gradient checker.

The kernels are duck-typed: handed plain arrays they return floats, handed
autodiff Tensors they return Tensors and participate in backprop. Both code
paths share the same formulas, so the float path is also what the gradient
checker differentiates against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import DegenerateInputError, DegenerateVarianceError, EvaluationError
from .rng import RngStream

__all__ = [
    "cosine_similarity",
    "pearson_correlation",
    "pearson_distance",
    "grad_check",
    "GradCheckReport",
    "RngStream",
    "PEARSON_CLAMP",
]

# Pearson rho is clamped this far inside [-1, 1] before the square root so the
# distance gradient stays bounded as correlations saturate.
PEARSON_CLAMP = 1e-12


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError(f"{name} contains non-finite entries")


def cosine_similarity(u, v):
    """<u, v> / (|u| |v|); raises on zero-norm inputs rather than returning 0."""
    if _is_tensor(u) or _is_tensor(v):
        ut, vt = as_tensor(u), as_tensor(v)
        nu = float(np.linalg.norm(ut.data))
        nv = float(np.linalg.norm(vt.data))
        if nu == 0.0 or nv == 0.0:
            raise DegenerateInputError("cosine_similarity of a zero-norm vector")
        dot = (ut * vt).sum()
        return dot / ((ut * ut).sum().sqrt() * (vt * vt).sum().sqrt())
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1 or u.size < 1:
        raise DegenerateInputError("cosine_similarity expects equal-length 1-D vectors")
    _check_finite("u", u)
    _check_finite("v", v)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine_similarity of a zero-norm vector")
    return float(np.dot(u, v) / (nu * nv))


def _constant(arr: np.ndarray) -> bool:
    return bool(np.all(arr == arr.flat[0]))


def pearson_correlation(xs, ys):
    """Sample Pearson correlation of two equal-length vectors (n >= 3)."""
    if _is_tensor(xs) or _is_tensor(ys):
        xt, yt = as_tensor(xs), as_tensor(ys)
        if xt.size < 3 or yt.size != xt.size:
            raise DegenerateVarianceError("xs", "pearson needs >= 3 paired samples")
        if _constant(xt.data):
            raise DegenerateVarianceError("xs")
        if _constant(yt.data):
            raise DegenerateVarianceError("ys")
        xc = xt - xt.mean()
        yc = yt - yt.mean()
        xx = (xc * xc).sum()
        yy = (yc * yc).sum()
        # squaring subnormal spreads underflows to zero; keep the roots apart
        # and refuse to divide by an underflowed denominator
        if float(xx.data) == 0.0:
            raise DegenerateVarianceError("xs", "sample variance underflowed to zero")
        if float(yy.data) == 0.0:
            raise DegenerateVarianceError("ys", "sample variance underflowed to zero")
        num = (xc * yc).sum()
        return num / (xx.sqrt() * yy.sqrt())
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 3:
        raise DegenerateVarianceError("xs", "pearson needs >= 3 paired samples")
    _check_finite("xs", xs)
    _check_finite("ys", ys)
    if _constant(xs):
        raise DegenerateVarianceError("xs")
    if _constant(ys):
        raise DegenerateVarianceError("ys")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    xx = np.dot(xc, xc)
    yy = np.dot(yc, yc)
    if xx == 0.0:
        raise DegenerateVarianceError("xs", "sample variance underflowed to zero")
    if yy == 0.0:
        raise DegenerateVarianceError("ys", "sample variance underflowed to zero")
    return float(np.dot(xc, yc) / (np.sqrt(xx) * np.sqrt(yy)))


def pearson_distance(xs, ys):
    """sqrt((1 - rho) / 2), with rho clamped slightly inside [-1, 1].

    The clamp (PEARSON_CLAMP inside each endpoint) keeps the derivative of the
    square root finite when rewards become perfectly (anti)correlated, at the
    cost of a worst-case offset of about 7.1e-7 from the exact endpoint values.
    """
    rho = pearson_correlation(xs, ys)
    if isinstance(rho, Tensor):
        rho = rho.clip(-1.0 + PEARSON_CLAMP, 1.0 - PEARSON_CLAMP)
        return ((1.0 - rho) / 2.0).sqrt()
    rho = min(max(rho, -1.0 + PEARSON_CLAMP), 1.0 - PEARSON_CLAMP)
    return float(np.sqrt((1.0 - rho) / 2.0))


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_coord: int
    num_coords: int
    step: float

    def __str__(self):
        return (
            f"grad_check: max relative error {self.max_rel_error:.3e} "
            f"at coordinate {self.worst_coord} ({self.num_coords} checked, step {self.step:g})"
        )


def grad_check(scalar_function, params, step: float = 1e-5, coords=None, value_fn=None) -> GradCheckReport:
    """Compare supplied gradients against central finite differences.

    `scalar_function(params) -> (value, grad)` evaluates the function and its
    gradient at a flat parameter vector. Optionally `coords` restricts the
    check to a subset of coordinates and `value_fn` provides a cheaper
    gradient-free evaluation for the perturbed points.

    The relative error per coordinate is |g - g_fd| / max(1, |g|, |g_fd|).
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    params = np.asarray(params, dtype=float)
    value, grad = scalar_function(params)
    value = float(value)
    if not np.isfinite(value):
        raise EvaluationError(f"function value is not finite: {value!r}")
    grad = np.asarray(grad, dtype=float).reshape(-1)
    if grad.size != params.size:
        raise ValueError("gradient size does not match parameter count")
    if not np.all(np.isfinite(grad)):
        raise EvaluationError("gradient contains non-finite entries")
    if value_fn is None:
        value_fn = lambda p: scalar_function(p)[0]
    if coords is None:
        coords = range(params.size)

    worst = -1.0
    worst_i = -1
    n = 0
    for i in coords:
        plus = params.copy()
        minus = params.copy()
        plus.reshape(-1)[i] += step
        minus.reshape(-1)[i] -= step
        f_plus = float(value_fn(plus))
        f_minus = float(value_fn(minus))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"perturbed evaluation non-finite at coordinate {i}")
        fd = (f_plus - f_minus) / (2.0 * step)
        rel = abs(grad[i] - fd) / max(1.0, abs(grad[i]), abs(fd))
        n += 1
        if rel > worst:
            worst = rel
            worst_i = int(i)
    if n == 0:
        raise ValueError("no coordinates were checked")
    return GradCheckReport(max_rel_error=float(worst), worst_coord=worst_i, num_coords=n, step=step)
