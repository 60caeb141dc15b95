"""Connection and curvature tensors of a Finsler surface, computed from jets of F^2.

Index conventions: ``x^k`` is jet variable ``k`` and ``y^k`` is jet variable
``2 + k`` (``k = 0, 1``).  Tensor arrays are indexed ``[i, j, k, ...]`` with
the contravariant index first, matching ``G^i_jk``, ``R^i_jk``, ``B^i_jkl``.

The spray is evaluated as ``G^i = 1/4 g^il ([F^2]_{x^k y^l} y^k - [F^2]_{x^l})``,
which is the geodesic-coefficient formula rewritten with the Euler relations
for ``g``; it needs one derivative of F^2 less than the form with
``dg/dx``.  :func:`spray_from_metric_derivatives` keeps the latter as an
independent cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import jets
from .jets import Jet
from .mdsl import MetricDomainError, MetricModel

COND_LIMIT = 1e8
# F^2 jet order needed for the Berwald and mean Berwald tensors.
FRAME_ORDER = 5


class GeometryError(ValueError):
    pass


class SingularMetricError(GeometryError):
    pass


def _check_y(y) -> None:
    y = np.asarray(y, dtype=float)
    if np.any(np.hypot(y[0], y[1]) == 0.0):
        raise GeometryError("y must be a nonzero tangent vector")


class JetFrame:
    """Jets of all connection/curvature quantities at a batch of points.

    ``order`` is the order of the F^2 jet; a quantity needing ``m``
    derivatives of F^2 is available at order ``order - m``.  Everything is
    computed lazily.
    """

    def __init__(self, model: MetricModel, x, y, order: int):
        _check_y(y)
        jets.check_order(order)
        self.model = model
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.order = order
        self.F = model.F_jet(self.x, self.y, order)
        base = self.F.base
        self.coords = jets.variables(base, order)

    @cached_property
    def F2(self) -> Jet:
        return self.F * self.F

    @cached_property
    def dF2_dy(self) -> list:
        return [self.F2.d(2 + i) for i in range(2)]

    @cached_property
    def lowered_y(self) -> list:
        """``y_i = g_ij y^j = 1/2 dF^2/dy^i`` (order - 1)."""
        return [0.5 * d for d in self.dF2_dy]

    @cached_property
    def g(self) -> list:
        d = self.dF2_dy
        g01 = 0.5 * d[0].d(3)
        return [[0.5 * d[0].d(2), g01], [g01, 0.5 * d[1].d(3)]]

    @cached_property
    def det_g(self) -> Jet:
        g = self.g
        return g[0][0] * g[1][1] - g[0][1] * g[0][1]

    @cached_property
    def ginv(self) -> list:
        g, det = self.g, self.det_g
        inv_det = 1.0 / det
        off = -g[0][1] * inv_det
        return [[g[1][1] * inv_det, off], [off, g[0][0] * inv_det]]

    @cached_property
    def spray(self) -> list:
        """``G^i`` (order - 2)."""
        yv = self.coords[2:]
        d = self.dF2_dy
        rhs = []
        for l in range(2):
            mixed = d[l].d(0) * yv[0] + d[l].d(1) * yv[1]
            rhs.append(mixed - self.F2.d(l))
        gi = self.ginv
        return [0.25 * (gi[i][0] * rhs[0] + gi[i][1] * rhs[1]) for i in range(2)]

    @cached_property
    def conn(self) -> list:
        """``G^i_j = dG^i/dy^j`` (order - 3)."""
        return [[s.d(2 + j) for j in range(2)] for s in self.spray]

    @cached_property
    def berw(self) -> list:
        """``G^i_jk`` (order - 4)."""
        return [[[c.d(2 + k) for k in range(2)] for c in row] for row in self.conn]

    @cached_property
    def riemann(self) -> list:
        """``R^i_jk`` (order - 4)."""
        return [[[self.riemann_component(i, j, k) for k in range(2)] for j in range(2)] for i in range(2)]

    def riemann_component(self, i: int, j: int, k: int) -> Jet:
        N, B = self.conn, self.berw
        out = N[i][j].d(k) - N[i][k].d(j)
        for m in range(2):
            out = out + N[m][j] * B[i][k][m] - N[m][k] * B[i][j][m]
        return out

    def curvature_vector(self, X, Y) -> list:
        """``R^i_jk X^j Y^k`` for constant coefficient vectors (order - 4)."""
        out = []
        for i in range(2):
            acc = None
            for j in range(2):
                for k in range(2):
                    c = float(X[j]) * float(Y[k])
                    if c == 0.0 or j == k:
                        continue
                    term = c * self.riemann_component(i, j, k)
                    acc = term if acc is None else acc + term
            out.append(acc if acc is not None else Jet.constant(np.zeros(self.F.batch_shape), self.order - 4))
        return out

    @cached_property
    def berwald(self) -> list:
        """``B^i_jkl`` (order - 5)."""
        return [[[[b.d(2 + l) for l in range(2)] for b in row] for row in plane] for plane in self.berw]

    @cached_property
    def mean_berwald(self) -> list:
        B = self.berwald
        return [[B[0][j][k][0] + B[1][j][k][1] for k in range(2)] for j in range(2)]

    @cached_property
    def projective_factor(self) -> Jet:
        """``P = <G, y> / |y|^2``; equals the projective factor when ``G^i = P y^i``."""
        yv = self.coords[2:]
        G = self.spray
        return (G[0] * yv[0] + G[1] * yv[1]) / (yv[0] * yv[0] + yv[1] * yv[1])

    def horizontal(self, phi: Jet, l: int) -> Jet:
        """``delta_l phi = d phi/dx^l - G^m_l d phi/dy^m`` (order drops by one)."""
        N = self.conn
        return phi.d(l) - N[0][l] * phi.d(2) - N[1][l] * phi.d(3)


def values(obj):
    """Order-0 values of a nested list of jets as an array."""
    if isinstance(obj, Jet):
        return np.asarray(obj.coeffs[0])
    return np.array([values(o) for o in obj])


@dataclass
class GeometryFrame:
    x: np.ndarray
    y: np.ndarray
    F: float
    g: np.ndarray
    ginv: np.ndarray
    spray: np.ndarray
    conn: np.ndarray
    berw_conn: np.ndarray
    riemann: np.ndarray
    berwald: np.ndarray
    mean_berwald: np.ndarray

    def to_dict(self) -> dict:
        return {k: (np.asarray(v).tolist()) for k, v in vars(self).items()}


def frame(model: MetricModel, x, y) -> GeometryFrame:
    """All pointwise tensors at ``(x, y)`` (batch axes allowed)."""
    jf = JetFrame(model, x, y, FRAME_ORDER)
    g = values(jf.g)
    cond = np.linalg.cond(np.moveaxis(g.reshape(2, 2, -1), -1, 0))
    if np.any(~(cond < COND_LIMIT)):
        raise SingularMetricError(f"fundamental tensor is singular or ill-conditioned (cond {np.max(cond):.3g})")
    return GeometryFrame(
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float),
        F=values(jf.F),
        g=g,
        ginv=values(jf.ginv),
        spray=values(jf.spray),
        conn=values(jf.conn),
        berw_conn=values(jf.berw),
        riemann=values(jf.riemann),
        berwald=values(jf.berwald),
        mean_berwald=values(jf.mean_berwald),
    )


def lowered_y(fr: GeometryFrame) -> np.ndarray:
    return np.einsum("jm...,m...->j...", fr.g, fr.y)


def constant_curvature_tensor(fr: GeometryFrame) -> np.ndarray:
    """``delta^i_k y_j - delta^i_j y_k`` with ``y_j = g_jm y^m``."""
    yl = lowered_y(fr)
    eye = np.eye(2).reshape((2, 2) + (1,) * (yl.ndim - 1))
    return np.einsum("ik...,j...->ijk...", eye, yl) - np.einsum("ij...,k...->ijk...", eye, yl)


def flag_curvature_fit(fr: GeometryFrame) -> tuple[float, float]:
    """Least-squares ``lambda`` with ``R^i_jk ~ lambda (delta^i_k y_j - delta^i_j y_k)``.

    Returns ``(lambda, residual)``, the residual being
    ``|R - lambda Q| / |Q|`` over the eight components.
    """
    Q = constant_curvature_tensor(fr)
    R = fr.riemann
    qq = np.sum(Q * Q, axis=(0, 1, 2))
    if np.any(qq == 0.0):
        raise GeometryError("degenerate comparison tensor (y = 0)")
    lam = np.sum(R * Q, axis=(0, 1, 2)) / qq
    res = np.sqrt(np.sum((R - lam * Q) ** 2, axis=(0, 1, 2)) / qq)
    if np.ndim(lam) == 0:
        return float(lam), float(res)
    return lam, res


def mean_berwald(fr: GeometryFrame) -> np.ndarray:
    return fr.mean_berwald


def connection(model: MetricModel, x, y) -> np.ndarray:
    """Nonlinear connection ``G^i_j`` only (cheapest path, used by transport)."""
    jf = JetFrame(model, x, y, 3)
    return values(jf.conn)


def spray_from_metric_derivatives(model: MetricModel, x, y) -> np.ndarray:
    """``G^i = 1/4 g^il (2 dg_jl/dx^k - dg_jk/dx^l) y^j y^k`` evaluated literally."""
    jf = JetFrame(model, x, y, 3)
    yv = np.asarray(y, dtype=float)
    g = jf.g
    dg = [[[g[j][l].d(k).coeffs[0] for k in range(2)] for l in range(2)] for j in range(2)]
    dg = np.array(dg)  # dg[j, l, k] = d g_jl / d x^k
    ginv = values(jf.ginv)
    bracket = 2 * np.einsum("jlk...,j...,k...->l...", dg, yv, yv) - np.einsum("jkl...,j...,k...->l...", dg, yv, yv)
    return 0.25 * np.einsum("il...,l...->i...", ginv, bracket)


def covariant_derivative_scalar_and_Q(model: MetricModel, x, y, direction) -> dict:
    """Residuals of two horizontal-covariant-derivative identities at ``(x, y)``.

    ``nabla_Q``: max ``|nabla_w Q^i_jk|`` for ``Q^i_jk = delta^i_j y_k -
    delta^i_k y_j``, which should vanish.  ``landsberg``: max
    ``|nabla_w g_jk + 2 L_jkw|`` with ``L_jkl = -1/2 y_m B^m_jkl``.
    """
    jf = JetFrame(model, x, y, FRAME_ORDER)
    w = np.asarray(direction, dtype=float)
    yl = [v.truncate(1) for v in jf.lowered_y]
    zero = 0.0 * yl[0]
    eye = np.eye(2)
    Q = [[[eye[i, j] * yl[k] - eye[i, k] * yl[j] if (i in (j, k)) else zero for k in range(2)]
          for j in range(2)] for i in range(2)]
    G = values(jf.berw)  # G[i, j, k] = G^i_jk
    Qv = values(Q)
    nabla_Q = np.zeros((2, 2, 2, 2))  # [l, i, j, k]
    for l in range(2):
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    v = values(jf.horizontal(Q[i][j][k], l))
                    v = v + sum(G[i, l, m] * Qv[m, j, k] - G[m, l, j] * Qv[i, m, k] - G[m, l, k] * Qv[i, j, m]
                                for m in range(2))
                    nabla_Q[l, i, j, k] = v
    nq = np.einsum("l,lijk->ijk", w, nabla_Q)

    g = [[c.truncate(1) for c in row] for row in jf.g]
    gv = values(g)
    nabla_g = np.zeros((2, 2, 2))  # [l, j, k]
    for l in range(2):
        for j in range(2):
            for k in range(2):
                v = values(jf.horizontal(g[j][k], l))
                v = v - sum(G[m, l, j] * gv[m, k] + G[m, l, k] * gv[j, m] for m in range(2))
                nabla_g[l, j, k] = v
    B = values(jf.berwald)
    ylv = values(jf.lowered_y)
    L = -0.5 * np.einsum("m,mjkl->jkl", ylv, B)
    ng = np.einsum("l,ljk->jk", w, nabla_g)
    lw = np.einsum("jkl,l->jk", L, w)
    return {
        "nabla_Q": float(np.max(np.abs(nq))),
        "nabla_g": float(np.max(np.abs(ng))),
        "landsberg": float(np.max(np.abs(ng + 2 * lw))),
    }


__all__ = [
    "GeometryError",
    "GeometryFrame",
    "JetFrame",
    "MetricDomainError",
    "SingularMetricError",
    "connection",
    "covariant_derivative_scalar_and_Q",
    "flag_curvature_fit",
    "frame",
    "mean_berwald",
    "spray_from_metric_derivatives",
]
