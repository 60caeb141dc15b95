"""Nonlinear parallel transport along curves and sampled holonomy maps.

A vector field ``X(t)`` along ``c(t)`` is parallel when
``dX^i/dt + G^i_j(c(t), X(t)) dc^j/dt = 0``.  The system is integrated with
an embedded Dormand-Prince 5(4) pair; many initial vectors (and, through
:func:`transport_many`, many paths) are advanced together as one batch.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import connection
from .mdsl import MetricDomainError, MetricModel


class TransportError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Paths

@dataclass(frozen=True)
class LineSegment:
    p0: np.ndarray
    p1: np.ndarray

    def point(self, t: float) -> np.ndarray:
        return self.p0 + t * (self.p1 - self.p0)

    def velocity(self, t: float) -> np.ndarray:
        return self.p1 - self.p0

    def reversed(self) -> "LineSegment":
        return LineSegment(self.p1, self.p0)


@dataclass(frozen=True)
class ArcSegment:
    """Circular arc ``center + radius (cos th, sin th)``, ``th`` from ``theta0`` to ``theta1``."""

    center: np.ndarray
    radius: float
    theta0: float
    theta1: float

    def point(self, t: float) -> np.ndarray:
        th = self.theta0 + t * (self.theta1 - self.theta0)
        return self.center + self.radius * np.array([np.cos(th), np.sin(th)])

    def velocity(self, t: float) -> np.ndarray:
        th = self.theta0 + t * (self.theta1 - self.theta0)
        w = self.theta1 - self.theta0
        return self.radius * w * np.array([-np.sin(th), np.cos(th)])

    def reversed(self) -> "ArcSegment":
        return ArcSegment(self.center, self.radius, self.theta1, self.theta0)


@dataclass(frozen=True)
class ParametricSegment:
    """``point(t)`` and its derivative on ``[0, 1]``."""

    point_fn: Callable
    velocity_fn: Callable

    def point(self, t: float) -> np.ndarray:
        return np.asarray(self.point_fn(t), dtype=float)

    def velocity(self, t: float) -> np.ndarray:
        return np.asarray(self.velocity_fn(t), dtype=float)

    def reversed(self) -> "ParametricSegment":
        p, v = self.point_fn, self.velocity_fn
        return ParametricSegment(lambda t: p(1 - t), lambda t: -np.asarray(v(1 - t)))


@dataclass(frozen=True)
class CurvePath:
    """Piecewise C^1 curve made of smooth segments, each parametrized on ``[0, 1]``."""

    segments: tuple
    description: dict = field(default_factory=dict, compare=False)

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].point(0.0)

    @property
    def end(self) -> np.ndarray:
        return self.segments[-1].point(1.0)

    @property
    def closed(self) -> bool:
        return bool(np.allclose(self.start, self.end, rtol=0, atol=1e-12))

    def reversed(self) -> "CurvePath":
        return CurvePath(tuple(s.reversed() for s in reversed(self.segments)), {"reverse_of": self.description})

    def then(self, other: "CurvePath") -> "CurvePath":
        """This path followed by ``other``."""
        if not np.allclose(self.end, other.start, rtol=0, atol=1e-12):
            raise ValueError("paths do not connect")
        return CurvePath(self.segments + other.segments, {"concat": [self.description, other.description]})

    def sample_points(self, per_segment: int = 17) -> np.ndarray:
        ts = np.linspace(0.0, 1.0, per_segment)
        return np.concatenate([np.stack([s.point(t) for t in ts], axis=-1) for s in self.segments], axis=-1)

    @classmethod
    def polyline(cls, vertices, closed: bool = False) -> "CurvePath":
        v = [np.asarray(p, dtype=float) for p in vertices]
        if closed and not np.allclose(v[0], v[-1]):
            v.append(v[0])
        if len(v) < 2:
            raise ValueError("a polyline needs at least two vertices")
        segs = tuple(LineSegment(a, b) for a, b in zip(v[:-1], v[1:]))
        kind = "polygon" if closed else "polyline"
        return cls(segs, {"type": kind, "vertices": [p.tolist() for p in v]})

    @classmethod
    def parallelogram(cls, x, X, Y, s: float, t: float) -> "CurvePath":
        """Loop ``x -> x + sX -> x + sX + tY -> x + tY -> x``."""
        x, X, Y = (np.asarray(v, dtype=float) for v in (x, X, Y))
        verts = [x, x + s * X, x + s * X + t * Y, x + t * Y, x]
        segs = tuple(LineSegment(a, b) for a, b in zip(verts[:-1], verts[1:]))
        return cls(segs, {"type": "parallelogram", "x": x.tolist(), "X": X.tolist(), "Y": Y.tolist(),
                          "s": float(s), "t": float(t)})

    @classmethod
    def from_descriptor(cls, desc) -> "CurvePath":
        """Build a path from the JSON loop/path descriptor (dict or JSON text)."""
        if isinstance(desc, str):
            desc = json.loads(desc)
        kind = desc.get("type")
        if kind in ("polygon", "polyline"):
            return cls.polyline(desc["vertices"], closed=(kind == "polygon"))
        if kind == "parallelogram":
            return cls.parallelogram(desc["x"], desc["X"], desc["Y"], desc["s"], desc["t"])
        raise ValueError(f"unknown path type {kind!r}")


# ---------------------------------------------------------------------------
# Integrator

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = _A[6] + (0.0,)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass
class IntegrationInfo:
    steps: int = 0
    rejected: int = 0
    max_error: float = 0.0  # largest accepted local error, in units of tol


def dormand_prince(rhs: Callable, y0: np.ndarray, tol: float, t0: float = 0.0, t1: float = 1.0,
                   h0: float | None = None, max_steps: int = 100_000,
                   after_step: Callable | None = None, info: IntegrationInfo | None = None) -> np.ndarray:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` with local error control.

    The error test is ``|err| <= tol * (1 + |y|)`` componentwise over the
    whole batch.  ``after_step(t, y)`` may return a modified state (used for
    the optional indicatrix projection).
    """
    info = info if info is not None else IntegrationInfo()
    span = t1 - t0
    if span == 0.0:
        return np.array(y0, dtype=float)
    y = np.array(y0, dtype=float)
    t = t0
    h = h0 if h0 is not None else span * min(1.0, 0.5 * tol ** 0.2)
    k1 = rhs(t, y)
    for _ in range(max_steps):
        if (t - t1) * np.sign(span) >= 0:
            return y
        h = min(h, t1 - t) if span > 0 else max(h, t1 - t)
        if abs(h) < 1e-14 * abs(span):
            raise TransportError(f"step size underflow at t={t:.6g}")
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
            ks.append(rhs(t + _C[s] * h, ys))
        y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        ratio = float(np.max(np.abs(err) / scale))
        if ratio <= 1.0:
            t = t + h
            y = y_new
            k1 = ks[6]
            info.steps += 1
            info.max_error = max(info.max_error, ratio)
            if after_step is not None:
                projected = after_step(t, y)
                if projected is not None:
                    y = projected
                    k1 = rhs(t, y)
        else:
            info.rejected += 1
        factor = 5.0 if ratio == 0.0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
        h = h * factor
    raise TransportError(f"exceeded {max_steps} steps")


# ---------------------------------------------------------------------------
# Transport

@dataclass
class TransportResult:
    y: np.ndarray
    F_start: np.ndarray
    F_end: np.ndarray
    info: IntegrationInfo
    tol: float
    projected: bool

    @property
    def drift(self) -> float:
        """Max relative change of ``F`` between the start and end of the path."""
        return float(np.max(np.abs(self.F_end - self.F_start) / self.F_start))


def _check_path(model: MetricModel, segments) -> None:
    for seg in segments:
        pts = np.stack([np.asarray(seg.point(t), dtype=float) for t in np.linspace(0, 1, 17)], axis=-1)
        model.check_domain(pts)


def _transport_segments(model: MetricModel, segments, y0: np.ndarray, tol: float,
                        project: bool, info: IntegrationInfo) -> np.ndarray:
    y = np.array(y0, dtype=float)
    norm0 = np.hypot(y[0], y[1])

    for seg in segments:
        def rhs(t, Y, seg=seg):
            c = np.asarray(seg.point(t), dtype=float)
            v = np.asarray(seg.velocity(t), dtype=float)
            if not np.any(v):
                return np.zeros_like(Y)
            N = connection(model, _bcast(c, Y), Y)
            return -np.einsum("ij...,j...->i...", N, _bcast(v, Y))

        after = None
        if project:
            # F(c(t), X(t)) is conserved, so rescale back to its value at the segment start
            target = model.F(_bcast(np.asarray(seg.point(0.0), dtype=float), y), y)

            def after(t, Y, seg=seg, target=target):
                c = np.asarray(seg.point(t), dtype=float)
                return Y * (target / model.F(_bcast(c, Y), Y))

        y = dormand_prince(rhs, y, tol, after_step=after, info=info)
        if np.any(np.hypot(y[0], y[1]) < 1e-12 * norm0):
            raise TransportError("transported vector collapsed to zero")
    return y


def _bcast(c: np.ndarray, like: np.ndarray) -> np.ndarray:
    return np.broadcast_to(c.reshape(c.shape + (1,) * (like.ndim - c.ndim)), like.shape)


def transport_with_info(model: MetricModel, path: CurvePath, y0, tol: float = 1e-10,
                        project: bool = False) -> TransportResult:
    """Parallel transport of ``y0`` (shape ``(2,)`` or ``(2, B)``) along ``path``."""
    y0 = np.asarray(y0, dtype=float)
    if np.any(np.hypot(y0[0], y0[1]) == 0.0):
        raise TransportError("initial vector must be nonzero")
    _check_path(model, path.segments)
    info = IntegrationInfo()
    y = _transport_segments(model, path.segments, y0, tol, project, info)
    F0 = model.F(_bcast(np.asarray(path.start), y0), y0)
    F1 = model.F(_bcast(np.asarray(path.end), y), y)
    return TransportResult(y, np.asarray(F0), np.asarray(F1), info, tol, project)


def parallel_transport(model: MetricModel, path: CurvePath, y0, tol: float = 1e-10,
                       project: bool = False) -> np.ndarray:
    return transport_with_info(model, path, y0, tol, project).y


def transport_many(model: MetricModel, paths: Sequence[CurvePath], y0s, tol: float = 1e-10,
                   project: bool = False) -> TransportResult:
    """Transport ``y0s[:, b]`` along ``paths[b]``, all integrated as one batch.

    Every path must consist of the same number of line segments.
    """
    y0s = np.asarray(y0s, dtype=float)
    nseg = {len(p.segments) for p in paths}
    if len(nseg) != 1 or not all(isinstance(s, LineSegment) for p in paths for s in p.segments):
        raise ValueError("transport_many needs polylines with equal segment counts")
    for p in paths:
        _check_path(model, p.segments)
    segments = [
        LineSegment(np.stack([p.segments[k].p0 for p in paths], axis=1),
                    np.stack([p.segments[k].p1 for p in paths], axis=1))
        for k in range(nseg.pop())
    ]
    info = IntegrationInfo()
    y = _transport_segments(model, segments, y0s, tol, project, info)
    starts = np.stack([p.start for p in paths], axis=1)
    ends = np.stack([p.end for p in paths], axis=1)
    return TransportResult(y, model.F(starts, y0s), model.F(ends, y), info, tol, project)


# ---------------------------------------------------------------------------
# Holonomy

def indicatrix_points(model: MetricModel, x, t) -> np.ndarray:
    """``y(t) = (cos t, sin t) / F(x, cos t, sin t)``, shape ``(2,) + t.shape``."""
    t = np.asarray(t, dtype=float)
    u = np.stack([np.cos(t), np.sin(t)])
    return u / model.F(_bcast(np.asarray(x, dtype=float), u), u)


def angle_shift(y_in: np.ndarray, y_out: np.ndarray) -> np.ndarray:
    """Signed angle from ``y_in`` to ``y_out`` in ``(-pi, pi]``."""
    cross = y_in[0] * y_out[1] - y_in[1] * y_out[0]
    dot = y_in[0] * y_out[0] + y_in[1] * y_out[1]
    return np.arctan2(cross, dot)


@dataclass
class HolonomyElement:
    basepoint: np.ndarray
    t_in: np.ndarray
    t_out: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray
    loop: dict
    tol: float
    drift: float
    projected: bool = False

    @property
    def shift(self) -> np.ndarray:
        return self.t_out - self.t_in

    def is_monotone(self) -> bool:
        """Whether the sampled circle map is orientation preserving."""
        ext = np.r_[self.t_out, self.t_out[0] + 2 * np.pi]
        return bool(np.all(np.diff(ext) > 0))

    def to_dict(self) -> dict:
        return {
            "basepoint": np.asarray(self.basepoint).tolist(),
            "loop": self.loop,
            "tol": self.tol,
            "F_drift": self.drift,
            "projected": self.projected,
            "monotone": self.is_monotone(),
            "max_abs_shift": float(np.max(np.abs(self.shift))),
            "t_in": self.t_in.tolist(),
            "t_out": self.t_out.tolist(),
        }


def loop_holonomy(model: MetricModel, loop: CurvePath, N: int = 64, tol: float = 1e-10,
                  project: bool = False) -> HolonomyElement:
    """Holonomy map of the indicatrix at the loop's base point, sampled at ``N`` angles."""
    if N < 8:
        raise ValueError("N must be at least 8")
    if not loop.closed:
        raise ValueError("loop_holonomy needs a closed loop")
    x = np.asarray(loop.start, dtype=float)
    model.check_domain(x)
    t_in = 2 * np.pi * np.arange(N) / N
    y_in = indicatrix_points(model, x, t_in)
    res = transport_with_info(model, loop, y_in, tol, project)
    t_out = t_in + angle_shift(y_in, res.y)
    drift = float(np.max(np.abs(model.F(_bcast(x, res.y), res.y) - 1.0)))
    return HolonomyElement(x, t_in, t_out, y_in, res.y, loop.description, tol, drift, project)


@dataclass
class AngleFieldSample:
    """Angle-chart coefficient ``f(t)`` of a field ``f(t) d/dt`` on a grid."""

    t: np.ndarray
    values: np.ndarray
    label: str = ""


def parallelogram_commutator(model: MetricModel, x, X, Y, s: float, t: float, N: int = 64,
                             tol: float = 1e-13) -> AngleFieldSample:
    """Second mixed difference of parallelogram holonomy, divided by ``s t``.

    ``(tau(s,t) - tau(s,0) - tau(0,t) + Id) / (s t)`` in the angle chart of
    the indicatrix at ``x``; tends to the curvature field ``R(X, Y)`` as
    ``s, t -> 0``.
    """
    x = np.asarray(x, dtype=float)
    t_in = 2 * np.pi * np.arange(N) / N

    def shift(a, b):
        loop = CurvePath.parallelogram(x, X, Y, a, b)
        return loop_holonomy(model, loop, N, tol).shift

    mixed = shift(s, t) - shift(s, 0.0) - shift(0.0, t)
    return AngleFieldSample(t_in, mixed / (s * t), f"parallelogram(s={s:g}, t={t:g})")


def octant_triangle() -> CurvePath:
    """Geodesic octant triangle of the unit sphere in the stereographic chart.

    North pole -> (1,0,0) along a meridian, a quarter of the equator to
    (0,1,0), and back along a meridian; counterclockwise in the chart.
    """
    o, e1, e2 = np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    segs = (LineSegment(o, e1), ArcSegment(o, 1.0, 0.0, math.pi / 2), LineSegment(e2, o))
    return CurvePath(segs, {"type": "octant_triangle"})


__all__ = [
    "AngleFieldSample",
    "ArcSegment",
    "CurvePath",
    "HolonomyElement",
    "LineSegment",
    "MetricDomainError",
    "ParametricSegment",
    "TransportError",
    "angle_shift",
    "dormand_prince",
    "indicatrix_points",
    "loop_holonomy",
    "octant_triangle",
    "parallel_transport",
    "parallelogram_commutator",
    "transport_many",
    "transport_with_info",
]
