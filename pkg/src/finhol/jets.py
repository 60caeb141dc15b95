"""Truncated multivariate Taylor expansions (jets) in ``(x1, x2, y1, y2)``.

A :class:`Jet` stores the Taylor coefficients ``d^a f(base) / a!`` for every
multi-index ``a`` with ``|a| <= order``, in graded order (by total degree,
then lexicographically descending).  Graded order makes truncation a prefix
slice and lets quotient and square root run as a single recurrence pass.

Coefficients may carry trailing batch axes: ``coeffs.shape == (ncoef,) +
batch``.  All arithmetic is elementwise over the batch, so one jet can hold
the expansions at many base points at once.
"""
from __future__ import annotations

import itertools
import math
import os
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

NVARS = 4
VARIABLES = ("x1", "x2", "y1", "y2")
DEFAULT_MAX_ORDER = 12
SQRT_EPS = 1e-12

try:
    if os.environ.get("FINHOL_PURE_PYTHON"):
        raise ImportError
    from . import _kernels as _kernel

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on the build
    from . import _kernels_py as _kernel

    BACKEND = "python"


class JetError(ValueError):
    """Base class for jet failures."""


class JetOrderError(JetError):
    pass


class JetDomainError(JetError):
    pass


def use_backend(name: str) -> str:
    """Switch the convolution kernels to ``"compiled"`` or ``"python"``.

    Returns the previously active backend name.
    """
    global _kernel, BACKEND
    previous = BACKEND
    if name == "compiled":
        from . import _kernels as mod
    elif name == "python":
        from . import _kernels_py as mod
    else:
        raise ValueError(f"unknown backend {name!r}")
    _kernel, BACKEND = mod, name
    return previous


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True


def max_order() -> int:
    """Jet-order cap, overridable through ``FINHOL_MAX_JET_ORDER``."""
    raw = os.environ.get("FINHOL_MAX_JET_ORDER")
    return int(raw) if raw else DEFAULT_MAX_ORDER


def ncoef(order: int) -> int:
    return math.comb(order + NVARS, NVARS)


def degree_offsets() -> list[int]:
    """``[0, ncoef(0), ncoef(1), ...]`` up to the largest order built so far."""
    return [0] + [ncoef(d) for d in range(_largest_built[0] + 1)]


_largest_built = [0]


class _Tables:
    __slots__ = ("order", "alphas", "index", "ti", "tj", "tk", "offsets", "deriv", "factorial")

    def __init__(self, order: int):
        self.order = order
        alphas = []
        for d in range(order + 1):
            block = [a for a in itertools.product(range(d, -1, -1), repeat=NVARS) if sum(a) == d]
            alphas.extend(block)
        self.alphas = np.array(alphas, dtype=np.int64).reshape(-1, NVARS)
        self.index = {a: n for n, a in enumerate(alphas)}
        n = len(alphas)

        # Encode multi-indices so that sums can be looked up by array indexing.
        radix = order + 1
        weights = radix ** np.arange(NVARS)[::-1]
        codes = self.alphas @ weights
        lookup = np.full(radix**NVARS, -1, dtype=np.int64)
        lookup[codes] = np.arange(n)
        deg = self.alphas.sum(axis=1)
        ii, jj = np.nonzero(deg[:, None] + deg[None, :] <= order)
        summed = self.alphas[ii] + self.alphas[jj]
        kk = lookup[summed @ weights]
        perm = np.lexsort((ii, kk))
        self.ti = np.ascontiguousarray(ii[perm], dtype=np.intc)
        self.tj = np.ascontiguousarray(jj[perm], dtype=np.intc)
        self.tk = np.ascontiguousarray(kk[perm], dtype=np.intc)
        self.offsets = np.ascontiguousarray(
            np.searchsorted(self.tk, np.arange(n + 1)), dtype=np.intc
        )

        # deriv[v] = (source index of a + e_v, factor a_v + 1) for |a| <= order - 1
        self.deriv = []
        nlow = ncoef(order - 1) if order > 0 else 0
        for v in range(NVARS):
            shifted = self.alphas[:nlow].copy()
            shifted[:, v] += 1
            self.deriv.append((lookup[shifted @ weights], (self.alphas[:nlow, v] + 1).astype(float)))
        self.factorial = np.array(
            [math.prod(math.factorial(int(c)) for c in a) for a in self.alphas], dtype=float
        )


@lru_cache(maxsize=None)
def tables(order: int) -> _Tables:
    _largest_built[0] = max(_largest_built[0], order)
    return _Tables(order)


def _as2d(c: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(c.reshape(c.shape[0], -1), dtype=float)


class Jet:
    """Truncated Taylor expansion of a scalar function of ``(x1, x2, y1, y2)``."""

    __slots__ = ("coeffs", "order", "base")
    __array_priority__ = 100

    def __init__(self, coeffs, order: int, base=None):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != ncoef(order):
            raise JetError(f"order {order} jet needs {ncoef(order)} coefficients, got {coeffs.shape[0]}")
        self.coeffs = coeffs
        self.order = order
        self.base = base

    # -- construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, value, order: int, base=None) -> "Jet":
        value = np.asarray(value, dtype=float)
        coeffs = np.zeros((ncoef(order),) + value.shape)
        coeffs[0] = value
        return cls(coeffs, order, base)

    def _like(self, coeffs, order=None) -> "Jet":
        return Jet(coeffs, self.order if order is None else order, self.base)

    # -- inspection -----------------------------------------------------------
    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[1:]

    @property
    def value(self):
        v = self.coeffs[0]
        return float(v) if v.ndim == 0 else v

    def coefficient(self, alpha: Sequence[int]):
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != NVARS or min(alpha) < 0 or sum(alpha) > self.order:
            raise JetError(f"multi-index {alpha} out of range for order {self.order}")
        return self.coeffs[tables(self.order).index[alpha]]

    def partial(self, alpha: Sequence[int]):
        """``d^alpha f(base)``, i.e. ``alpha! * coeffs[alpha]``."""
        c = self.coefficient(alpha)
        scale = math.prod(math.factorial(int(a)) for a in alpha)
        out = scale * c
        return float(out) if np.ndim(out) == 0 else out

    def derivatives(self) -> np.ndarray:
        """All partial derivatives in graded order (same layout as ``coeffs``)."""
        f = tables(self.order).factorial
        return self.coeffs * f.reshape((-1,) + (1,) * len(self.batch_shape))

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        if order == self.order:
            return self
        return self._like(self.coeffs[: ncoef(order)], order)

    def d(self, var: int) -> "Jet":
        """Partial derivative in variable ``var`` (0..3); order drops by one."""
        if self.order == 0:
            raise JetOrderError("cannot differentiate an order-0 jet")
        src, fac = tables(self.order).deriv[var]
        fac = fac.reshape((-1,) + (1,) * len(self.batch_shape))
        return self._like(self.coeffs[src] * fac, self.order - 1)

    # -- arithmetic -----------------------------------------------------------
    def _align(self, other: "Jet"):
        if other.order == self.order:
            return self, other
        m = min(self.order, other.order)
        return self.truncate(m), other.truncate(m)

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return a._like(a.coeffs + b.coeffs)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.batch_shape, other.shape)
        c = np.array(np.broadcast_to(self.coeffs, self.coeffs.shape[:1] + shape))
        c[0] += other
        return self._like(c)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return _mul(a, b)
        return self._like(self.coeffs * np.asarray(other, dtype=float))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return _div(a, b)
        return self._like(self.coeffs / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return _div(Jet.constant(np.broadcast_to(other, self.batch_shape), self.order, self.base), self)

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise JetError("jets support integer powers only; use sqrt for 1/2")
        n = int(n)
        if n < 0:
            return 1.0 / (self ** (-n))
        result = None
        base = self
        while n:
            if n & 1:
                result = base if result is None else result * base
            n >>= 1
            if n:
                base = base * base
        return result if result is not None else Jet.constant(np.ones(self.batch_shape), self.order, self.base)

    def sqrt(self, eps: float = SQRT_EPS) -> "Jet":
        v = self.coeffs[0]
        if np.any(~(v > eps)):
            worst = float(np.min(v))
            raise JetDomainError(f"square root of jet with value {worst:.3g} <= {eps:g}")
        c2 = _as2d(self.coeffs)
        out = np.empty_like(c2)
        t = tables(self.order)
        _kernel.sqrt(c2, out, t.ti, t.tj, t.offsets, c2.shape[0])
        return self._like(out.reshape(self.coeffs.shape))

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, value={self.coeffs[0]!r}, batch={self.batch_shape})"


def _batch_shape(a: Jet, b: Jet) -> tuple:
    return np.broadcast_shapes(a.batch_shape, b.batch_shape)


def _broadcast(j: Jet, shape: tuple) -> np.ndarray:
    if j.batch_shape == shape:
        return _as2d(j.coeffs)
    return _as2d(np.broadcast_to(j.coeffs, (j.coeffs.shape[0],) + shape))


def _mul(a: Jet, b: Jet) -> Jet:
    shape = _batch_shape(a, b)
    a2, b2 = _broadcast(a, shape), _broadcast(b, shape)
    out = np.empty_like(a2)
    t = tables(a.order)
    _kernel.mul(a2, b2, out, t.ti, t.tj, t.tk, len(t.tk))
    return Jet(out.reshape((a2.shape[0],) + shape), a.order, a.base)


def _div(a: Jet, b: Jet) -> Jet:
    if np.any(b.coeffs[0] == 0.0):
        raise JetDomainError("division by a jet with zero value")
    shape = _batch_shape(a, b)
    a2, b2 = _broadcast(a, shape), _broadcast(b, shape)
    out = np.empty_like(a2)
    t = tables(a.order)
    _kernel.div(a2, b2, out, t.ti, t.tj, t.offsets, a2.shape[0])
    return Jet(out.reshape((a2.shape[0],) + shape), a.order, a.base)


def check_order(order: int) -> None:
    cap = max_order()
    if order < 0 or order > cap:
        raise JetOrderError(f"jet order {order} outside [0, {cap}] (FINHOL_MAX_JET_ORDER)")


def variables(base, order: int) -> tuple[Jet, Jet, Jet, Jet]:
    """Coordinate jets ``x1, x2, y1, y2`` at ``base`` (shape ``(4,) + batch``)."""
    check_order(order)
    base = np.asarray(base, dtype=float)
    if base.shape[0] != NVARS:
        raise JetError("base must have 4 leading components (x1, x2, y1, y2)")
    out = []
    for v in range(NVARS):
        j = Jet.constant(base[v], order, base)
        if order >= 1:
            unit = [0] * NVARS
            unit[v] = 1
            j.coeffs[tables(order).index[tuple(unit)]] = 1.0
        out.append(j)
    return tuple(out)


def lift(f: Callable, base, order: int) -> Jet:
    """Jet of ``f(x1, x2, y1, y2)`` at ``base`` up to ``order``.

    ``f`` is evaluated on coordinate jets, so it must only use jet-aware
    operations (arithmetic, integer powers, :func:`sqrt`).
    """
    xs = variables(base, order)
    out = f(*xs)
    if not isinstance(out, Jet):
        base = np.asarray(base, dtype=float)
        out = Jet.constant(np.broadcast_to(out, base.shape[1:]), order, base)
    return out


def partial(jet: Jet, alpha: Sequence[int]):
    return jet.partial(alpha)


def sqrt(v):
    """Square root for jets, floats and arrays alike."""
    if isinstance(v, Jet):
        return v.sqrt()
    return np.sqrt(v)


def finite_difference(f: Callable, base, alpha: Sequence[int], h: float = 1e-5) -> float:
    """Central finite-difference estimate of ``d^alpha f(base)``.

    Cross-check oracle only; ``f`` takes four floats.
    """
    base = np.asarray(base, dtype=float)
    steps = []
    for v, a in enumerate(alpha):
        steps.extend([v] * int(a))
    if not steps:
        return float(f(*base))
    total = 0.0
    for signs in itertools.product((1, -1), repeat=len(steps)):
        p = base.copy()
        for v, s in zip(steps, signs):
            p[v] += s * h
        total += math.prod(signs) * float(f(*p))
    return total / (2 * h) ** len(steps)
