"""Vertical vector fields on the indicatrix bundle and the holonomy algebra they generate.

Fields are immutable expression DAGs built from curvature fields, horizontal
Berwald derivatives, vertical brackets, scalings and sums.  A DAG is
evaluated as a pair of jets ``(xi^1, xi^2)`` over a batch of points
``(x, y)``; each horizontal derivative or bracket consumes one jet order, so
a field of depth ``d`` needs an F^2 jet of order ``d + 4``.

At a fixed base point a tangent field is summarized by its coefficient in
the angle chart ``y(t) = (cos t, sin t) / F(x, cos t, sin t)``, which is
what rank and Fourier analysis operate on.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import jets
from .geometry import JetFrame
from .jets import Jet
from .mdsl import MetricModel
from .transport import indicatrix_points

DEFAULT_GRID = 256
DEFAULT_MAX_DEPTH = 6
DEFAULT_MAX_FIELDS = 64
RANK_TOL = 1e-8
# angle-chart coefficients are O(1) for curvature-scale fields; below this a row is roundoff
ZERO_FIELD_RMS = 1e-13


class DepthError(ValueError):
    pass


def _vec(v) -> tuple:
    v = tuple(float(c) for c in np.asarray(v, dtype=float).ravel())
    if len(v) != 2:
        raise ValueError("expected a 2-vector")
    return v


def _direction(k) -> tuple:
    """Coordinate index 1 or 2 (as in ``nabla_1``), or an explicit 2-vector."""
    if isinstance(k, (int, np.integer)):
        if k not in (1, 2):
            raise ValueError("direction index must be 1 or 2")
        return (1.0, 0.0) if k == 1 else (0.0, 1.0)
    return _vec(k)


# ---------------------------------------------------------------------------
# Field DAG

class IndicatrixField:
    """Base class of field DAG nodes."""

    depth: int = 0

    def __add__(self, other: "IndicatrixField") -> "IndicatrixField":
        return Sum((self, other))

    def __sub__(self, other: "IndicatrixField") -> "IndicatrixField":
        return Sum((self, Scale(-1.0, other)))

    def __neg__(self) -> "IndicatrixField":
        return Scale(-1.0, self)

    def __mul__(self, c: float) -> "IndicatrixField":
        return Scale(float(c), self)

    __rmul__ = __mul__

    @property
    def label(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Curv(IndicatrixField):
    X: tuple
    Y: tuple

    @property
    def depth(self) -> int:
        return 0

    @property
    def label(self) -> str:
        if self.X == (1.0, 0.0) and self.Y == (0.0, 1.0):
            return "xi"
        return f"r({_fmt(self.X)},{_fmt(self.Y)})"


@dataclass(frozen=True)
class Nabla(IndicatrixField):
    Z: tuple
    child: IndicatrixField

    @property
    def depth(self) -> int:
        return self.child.depth + 1

    @property
    def label(self) -> str:
        name = {(1.0, 0.0): "1", (0.0, 1.0): "2"}.get(self.Z, _fmt(self.Z))
        return f"D{name}({self.child.label})"


@dataclass(frozen=True)
class Bracket(IndicatrixField):
    left: IndicatrixField
    right: IndicatrixField

    @property
    def depth(self) -> int:
        return max(self.left.depth, self.right.depth) + 1

    @property
    def label(self) -> str:
        return f"[{self.left.label},{self.right.label}]"


@dataclass(frozen=True)
class Scale(IndicatrixField):
    c: float
    child: IndicatrixField

    @property
    def depth(self) -> int:
        return self.child.depth

    @property
    def label(self) -> str:
        return f"{self.c:g}*{self.child.label}"


@dataclass(frozen=True)
class Sum(IndicatrixField):
    children: tuple

    @property
    def depth(self) -> int:
        return max((c.depth for c in self.children), default=0)

    @property
    def label(self) -> str:
        return "(" + " + ".join(c.label for c in self.children) + ")" if self.children else "0"


ZERO = Sum(())


def _fmt(v: tuple) -> str:
    return "(" + ",".join(f"{c:g}" for c in v) + ")"


def _limit(max_depth: int | None) -> int:
    return jets.max_order() - 4 if max_depth is None else max_depth


def curvature_field(X, Y) -> Curv:
    """``r(X, Y) = R^i_jk X^j Y^k`` for constant coefficient vectors ``X, Y``."""
    return Curv(_vec(X), _vec(Y))


def horizontal_derivative(fld: IndicatrixField, k, max_depth: int | None = None) -> Nabla:
    """Horizontal Berwald derivative of ``fld`` along ``k`` (1, 2 or a constant vector)."""
    if fld.depth + 1 > _limit(max_depth):
        raise DepthError(f"depth {fld.depth + 1} exceeds the maximum {_limit(max_depth)}")
    return Nabla(_direction(k), fld)


def bracket(f: IndicatrixField, g: IndicatrixField, max_depth: int | None = None) -> Bracket:
    """Vertical bracket ``[f, g]^i = f^k dg^i/dy^k - g^k df^i/dy^k``."""
    depth = max(f.depth, g.depth) + 1
    if depth > _limit(max_depth):
        raise DepthError(f"depth {depth} exceeds the maximum {_limit(max_depth)}")
    return Bracket(f, g)


# ---------------------------------------------------------------------------
# Evaluation

class FieldContext:
    """Evaluates field DAGs at a batch of points ``(x, y)``.

    Parameters
    ----------
    model : MetricModel
    x : array_like, shape (2,) or (2, ...)
        Base point(s); broadcast against ``y``.
    y : array_like, shape (2, ...)
        Nonzero tangent vectors.
    max_depth : int
        Deepest field that will be evaluated; fixes the F^2 jet order.
    """

    def __init__(self, model: MetricModel, x, y, max_depth: int = DEFAULT_MAX_DEPTH):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.shape != y.shape:
            x = np.broadcast_to(x.reshape((2,) + (1,) * (y.ndim - 1)), y.shape)
        model.check_domain(x)
        self.model = model
        self.x, self.y = x, y
        self.max_depth = max_depth
        self.frame = JetFrame(model, x, y, max_depth + 4)
        self._cache: dict = {}

    @property
    def top(self) -> int:
        return self.max_depth

    def jets(self, fld: IndicatrixField) -> list:
        """``[xi^1, xi^2]`` as jets of order ``max_depth - fld.depth``."""
        if fld.depth > self.max_depth:
            raise DepthError(f"field depth {fld.depth} exceeds context depth {self.max_depth}")
        hit = self._cache.get(fld)
        if hit is None:
            hit = self._eval(fld, self.max_depth - fld.depth)
            self._cache[fld] = hit
        return hit

    def _child(self, fld: IndicatrixField, order: int) -> list:
        return [c.truncate(order) for c in self.jets(fld)]

    def _eval(self, fld: IndicatrixField, order: int) -> list:
        fr = self.frame
        if isinstance(fld, Curv):
            return [c.truncate(order) for c in fr.curvature_vector(fld.X, fld.Y)]
        if isinstance(fld, Nabla):
            xi = self._child(fld.child, order + 1)
            N, B = fr.conn, fr.berw
            out = []
            for i in range(2):
                acc = None
                for k, zk in enumerate(fld.Z):
                    if zk == 0.0:
                        continue
                    term = xi[i].d(k)
                    for m in range(2):
                        term = term - N[m][k] * xi[i].d(2 + m) + B[i][k][m] * xi[m]
                    term = zk * term
                    acc = term if acc is None else acc + term
                out.append(acc.truncate(order) if acc is not None else self._zero(order))
            return out
        if isinstance(fld, Bracket):
            f = self._child(fld.left, order + 1)
            g = self._child(fld.right, order + 1)
            return [
                (f[0] * g[i].d(2) + f[1] * g[i].d(3) - g[0] * f[i].d(2) - g[1] * f[i].d(3)).truncate(order)
                for i in range(2)
            ]
        if isinstance(fld, Scale):
            return [fld.c * c for c in self._child(fld.child, order)]
        if isinstance(fld, Sum):
            if not fld.children:
                return [self._zero(order), self._zero(order)]
            parts = [self._child(c, order) for c in fld.children]
            return [sum((p[i] for p in parts[1:]), parts[0][i]) for i in range(2)]
        raise TypeError(f"unknown field node {type(fld).__name__}")

    def _zero(self, order: int) -> Jet:
        return Jet.constant(np.zeros(self.y.shape[1:]), order, self.frame.F.base)

    def vector(self, fld: IndicatrixField) -> np.ndarray:
        """Field values ``xi^i(x, y)``, shape ``(2,) + batch``."""
        return np.array([np.asarray(c.coeffs[0]) for c in self.jets(fld)])

    def chart(self, fld: IndicatrixField) -> np.ndarray:
        """Angle-chart coefficient ``(y^1 xi^2 - y^2 xi^1) / |y|^2``."""
        xi = self.vector(fld)
        y = self.y
        return (y[0] * xi[1] - y[1] * xi[0]) / (y[0] ** 2 + y[1] ** 2)

    def tangency(self, fld: IndicatrixField) -> np.ndarray:
        """``dF(xi) = dF/dy^i xi^i``; zero for fields tangent to the indicatrices."""
        xi = self.vector(fld)
        F = self.frame.F
        return np.asarray(F.d(2).coeffs[0]) * xi[0] + np.asarray(F.d(3).coeffs[0]) * xi[1]

    def tangency_residual(self, fld: IndicatrixField) -> float:
        """``max |dF(xi)|`` relative to ``max |xi|`` over the batch (0 for the zero field)."""
        scale = float(np.max(np.abs(self.vector(fld))))
        return 0.0 if scale == 0.0 else float(np.max(np.abs(self.tangency(fld)))) / scale


class AngleGrid(FieldContext):
    """A :class:`FieldContext` on ``N`` equispaced indicatrix angles at one base point."""

    def __init__(self, model: MetricModel, x, N: int = DEFAULT_GRID, max_depth: int = DEFAULT_MAX_DEPTH):
        x = np.asarray(x, dtype=float)
        self.t = 2 * np.pi * np.arange(N) / N
        self.basepoint = x
        super().__init__(model, x, indicatrix_points(model, x, self.t), max_depth)


def evaluate(fld: IndicatrixField, model: MetricModel, x, y) -> np.ndarray:
    """Values of ``fld`` at ``(x, y)``; shape ``(2,) + batch``."""
    return FieldContext(model, x, y, fld.depth).vector(fld)


def chart_samples(fld: IndicatrixField, model: MetricModel, x, N: int = 64) -> np.ndarray:
    """Angle-chart coefficient of ``fld`` at base point ``x`` on ``N`` angles."""
    return AngleGrid(model, x, N, fld.depth).chart(fld)


# ---------------------------------------------------------------------------
# Circle-chart utilities

def angle_derivative(f: np.ndarray) -> np.ndarray:
    """Spectral derivative of equispaced periodic samples along the last axis."""
    f = np.asarray(f, dtype=float)
    N = f.shape[-1]
    c = np.fft.rfft(f, axis=-1)
    k = np.arange(c.shape[-1], dtype=float)
    if N % 2 == 0:
        k[-1] = 0.0
    return np.fft.irfft(1j * k * c, n=N, axis=-1)


def chart_bracket(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Bracket of ``f d/dt`` and ``g d/dt`` on the circle: ``f g' - g f'``."""
    return f * angle_derivative(g) - g * angle_derivative(f)


@dataclass
class FourierTable:
    a: np.ndarray  # a[n]: coefficient of cos(n t); a[0] is the mean
    b: np.ndarray  # b[n]: coefficient of sin(n t); b[0] = 0
    tail_energy: float

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.a, self.b)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "tail_energy": self.tail_energy}


def fourier_table(samples: np.ndarray, n_max: int) -> FourierTable:
    """Real Fourier coefficients of equispaced periodic samples up to mode ``n_max``."""
    samples = np.asarray(samples, dtype=float)
    N = samples.shape[-1]
    if N < 4 * n_max:
        raise ValueError(f"grid of {N} points is too coarse for modes up to {n_max}")
    c = np.fft.rfft(samples) / N
    a = 2 * c.real
    b = -2 * c.imag
    a[0] = c[0].real
    b[0] = 0.0
    if N % 2 == 0:
        a[-1] = c[-1].real
        b[-1] = 0.0
    tail = float(np.sum(a[n_max + 1:] ** 2 + b[n_max + 1:] ** 2))
    return FourierTable(a[: n_max + 1], b[: n_max + 1], tail)


def fourier_coefficients(fld: IndicatrixField, model: MetricModel, x, n_max: int = 8,
                         grid_n: int = 64) -> FourierTable:
    return fourier_table(chart_samples(fld, model, x, grid_n), n_max)


def numerical_rank(rows: np.ndarray, tol: float = RANK_TOL) -> tuple[int, np.ndarray]:
    """Rank of row-normalized ``rows``; singular values below ``tol * s_max`` count as zero.

    Rows are normalized so that fields of very different size weigh equally,
    which would also promote roundoff-level rows of fields that vanish
    identically.  A row therefore counts as zero when its norm is below
    ``tol`` times the largest row norm or its RMS value is below
    ``ZERO_FIELD_RMS``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] == 0:
        return 0, np.zeros(0)
    norms = np.linalg.norm(rows, axis=1)
    keep = (norms > tol * norms.max()) & (norms > ZERO_FIELD_RMS * math.sqrt(rows.shape[1]))
    if not np.any(keep):
        return 0, np.zeros(rows.shape[0])
    s = np.linalg.svd(rows[keep] / norms[keep, None], compute_uv=False)
    return int(np.sum(s > tol * s[0])), s


# ---------------------------------------------------------------------------
# Algebra generation

@dataclass
class RankEvent:
    label: str
    depth: int
    kept: bool
    rank: int

    def to_dict(self) -> dict:
        return {"label": self.label, "depth": self.depth, "kept": self.kept, "rank": self.rank}


@dataclass
class AlgebraSpan:
    basepoint: np.ndarray
    fields: list
    t: np.ndarray
    samples: np.ndarray  # (M, N) angle-chart coefficients
    singular_values: np.ndarray
    rank: int
    rank_refined: int  # rank of the same fields on the 2N grid
    history: list
    fourier: list
    tangency: float
    stop_reason: str
    rank_tol: float = RANK_TOL

    @property
    def labels(self) -> list:
        return [f.label for f in self.fields]

    @property
    def stable(self) -> bool:
        return self.rank == self.rank_refined

    def mode_presence(self, threshold: float = 1e-3) -> np.ndarray:
        """Largest magnitude of each Fourier mode over all basis fields."""
        if not self.fourier:
            return np.zeros(0)
        mags = np.array([ft.magnitudes() for ft in self.fourier])
        return mags.max(axis=0)

    def to_dict(self) -> dict:
        return {
            "basepoint": self.basepoint.tolist(),
            "labels": self.labels,
            "depths": [f.depth for f in self.fields],
            "grid_n": int(self.t.size),
            "rank": self.rank,
            "rank_refined": self.rank_refined,
            "rank_tol": self.rank_tol,
            "singular_values": self.singular_values.tolist(),
            "rank_history": [e.to_dict() for e in self.history],
            "fourier": [ft.to_dict() for ft in self.fourier],
            "max_tangency_residual": self.tangency,
            "stop_reason": self.stop_reason,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        """One row per field: label, depth, then the chart samples on the grid."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["field", "depth"] + [f"t={t:.17g}" for t in self.t])
            for fld, row in zip(self.fields, self.samples):
                w.writerow([fld.label, fld.depth] + [repr(float(v)) for v in row])


def _seed_fields(generators) -> list:
    if generators is None:
        return [curvature_field((1, 0), (0, 1))]
    out = []
    for g in generators:
        if isinstance(g, IndicatrixField):
            out.append(g)
        else:
            X, Y = g
            out.append(curvature_field(X, Y))
    return out


def generate_algebra(model: MetricModel, x, generators: Iterable | None = None,
                     max_depth: int = DEFAULT_MAX_DEPTH, max_fields: int = DEFAULT_MAX_FIELDS,
                     grid_n: int = DEFAULT_GRID, rank_tol: float = RANK_TOL,
                     n_max: int | None = None) -> AlgebraSpan:
    """Breadth-first generation of the infinitesimal holonomy algebra at ``x``.

    Depth 0 holds the generators (by default the curvature field of the
    coordinate directions).  Each later depth first tries ``nabla_1`` and
    ``nabla_2`` of the fields kept at the previous depth, then brackets of
    kept pairs whose deeper member sits at the previous depth.  A candidate
    is kept only if it raises the numerical rank of the angle-chart samples.

    Fields are evaluated on a ``2 * grid_n`` grid; rank decisions use the
    even-indexed ``grid_n`` points and the final rank is re-checked on the
    full grid.
    """
    seeds = _seed_fields(generators)
    max_depth = max(max_depth, max(s.depth for s in seeds))
    jets.check_order(max_depth + 4)
    grid = AngleGrid(model, x, 2 * grid_n, max_depth)

    kept: list = []
    rows: list = []
    history: list = []
    rank = 0
    stop = "max_depth"

    def consider(fld: IndicatrixField) -> bool:
        nonlocal rank
        row = grid.chart(fld)
        coarse = row[::2]
        r, _ = numerical_rank(np.array(rows + [coarse]), rank_tol) if np.any(coarse) else (rank, None)
        keep = r > rank
        if keep:
            kept.append(fld)
            rows.append(coarse)
            rank = r
        history.append(RankEvent(fld.label, fld.depth, keep, rank))
        return keep

    levels: list = [[]]
    for s in seeds:
        if len(kept) >= max_fields:
            break
        if consider(s):
            levels[0].append(s)
    for depth in range(1, max_depth + 1):
        if len(kept) >= max_fields:
            stop = "max_fields"
            break
        if rank >= grid_n:
            stop = "saturated"
            break
        level: list = []
        prev = levels[depth - 1] if depth - 1 < len(levels) else []
        candidates = [Nabla(z, f) for f in prev for z in ((1.0, 0.0), (0.0, 1.0))]
        for i, f in enumerate(kept):
            for g in kept[i + 1:]:
                if max(f.depth, g.depth) == depth - 1:
                    candidates.append(Bracket(f, g))
        for c in candidates:
            if len(kept) >= max_fields:
                break
            if c.depth > max_depth:  # only possible for seeds deeper than 0
                continue
            if consider(c):
                level.append(c)
        levels.append(level)
        if not level and not prev:
            stop = "closed"
            break

    full = np.array([grid.chart(f) for f in kept]) if kept else np.zeros((0, 2 * grid_n))
    samples = full[:, ::2]
    rank, sv = numerical_rank(samples, rank_tol)
    rank_refined, _ = numerical_rank(full, rank_tol)
    if n_max is None:
        n_max = min(max_depth + 2, grid_n // 4)
    fourier = [fourier_table(row, n_max) for row in samples]
    tang = max((grid.tangency_residual(f) for f in kept), default=0.0)
    return AlgebraSpan(np.asarray(x, dtype=float), kept, grid.t[::2], samples, sv, rank, rank_refined,
                       history, fourier, tang, stop, rank_tol)


@dataclass
class DimensionReport:
    verdict: str
    rank: int
    witness_angles: list
    infinite_dimensional: bool
    mode_count: int

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "rank": self.rank,
            "infinite_dimensional_indicator": self.infinite_dimensional,
            "witness_angles": self.witness_angles,
            "fourier_mode_count": self.mode_count,
        }


def dimension_report(span: AlgebraSpan, threshold: float = 1e-3) -> DimensionReport:
    """Apply the four-field criterion to a generated span.

    A rank of at least 4 together with an angle at which the first four
    basis fields are all nonzero rules out a finite-dimensional holonomy
    group (a Lie transformation group of the circle has dimension at most 3).
    """
    modes = span.mode_presence()
    mode_count = int(np.sum(modes > threshold))
    if span.rank < 4:
        return DimensionReport(f"inconclusive: rank {span.rank} < 4", span.rank, [], False, mode_count)
    # rank decisions used the basis order, so the first four rows are independent
    four = np.abs(span.samples[:4])
    scale = four.max(axis=1, keepdims=True)
    nonzero = np.all(four > 1e-6 * scale, axis=0)
    witness = span.t[nonzero].tolist()
    if not witness:
        return DimensionReport(f"inconclusive: rank {span.rank} but no common non-vanishing angle",
                               span.rank, [], False, mode_count)
    return DimensionReport(f"not a finite-dimensional Lie group: rank {span.rank} >= 4 with "
                           f"{len(witness)} witness angles", span.rank, witness, True, mode_count)


# ---------------------------------------------------------------------------
# Circle-mode fields built from curvature derivatives

def witt_fields(k_max: int, xi: IndicatrixField | None = None) -> dict:
    """Fields equal to ``cos(k t) d/dt`` and ``sin(k t) d/dt`` at the origin of the Funk disk.

    Returns ``{("c", k): field, ("s", k): field}`` for ``k = 1 .. k_max``,
    built from the curvature field by horizontal derivatives (``k <= 2``) and
    for higher modes from the circle identities

    * ``[cos t, cos kt] - [sin t, sin kt] = -(k-1) sin(k+1)t``
    * ``[cos t, sin kt] + [sin t, cos kt] = (k-1) cos(k+1)t``

    (fields ``f d/dt`` written by their coefficients, ``k >= 2``).  Only the identification with
    circle modes is specific to the Funk metric at ``x = 0``; the DAGs are
    valid fields for any model.
    """
    xi = curvature_field((1, 0), (0, 1)) if xi is None else xi
    d1 = Nabla((1.0, 0.0), xi)
    d2 = Nabla((0.0, 1.0), xi)
    out = {("c", 1): Scale(-8 / 3, d1), ("s", 1): Scale(-8 / 3, d2)}
    if k_max >= 2:
        out[("c", 2)] = Scale(-4 / 3, Sum((Nabla((1.0, 0.0), d1), Scale(-1.0, Nabla((0.0, 1.0), d2)))))
        out[("s", 2)] = Scale(-8 / 3, Nabla((0.0, 1.0), d1))
    c1, s1 = out[("c", 1)], out[("s", 1)]
    for k in range(2, k_max):
        ck, sk = out[("c", k)], out[("s", k)]
        out[("s", k + 1)] = Scale(-1.0 / (k - 1), Sum((Bracket(c1, ck), Scale(-1.0, Bracket(s1, sk)))))
        out[("c", k + 1)] = Scale(1.0 / (k - 1), Sum((Bracket(c1, sk), Bracket(s1, ck))))
    return out


__all__ = [
    "AlgebraSpan",
    "AngleGrid",
    "Bracket",
    "Curv",
    "DepthError",
    "DimensionReport",
    "FieldContext",
    "FourierTable",
    "IndicatrixField",
    "Nabla",
    "RankEvent",
    "Scale",
    "Sum",
    "ZERO",
    "angle_derivative",
    "bracket",
    "chart_bracket",
    "chart_samples",
    "curvature_field",
    "dimension_report",
    "evaluate",
    "fourier_coefficients",
    "fourier_table",
    "generate_algebra",
    "horizontal_derivative",
    "numerical_rank",
    "witt_fields",
]
