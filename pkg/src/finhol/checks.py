"""Residual functions for the structural invariants of jets, tensors, fields and holonomy.

Each function returns nonnegative residuals (0 when the invariant holds
exactly); thresholds are applied by the callers (the verification suite
and the tests).
"""
from __future__ import annotations

import numpy as np

from . import jets
from .geometry import JetFrame, frame, values
from .holalg import Bracket, FieldContext, IndicatrixField
from .mdsl import MetricModel
from .transport import CurvePath, HolonomyElement, parallel_transport


def _rel(a, b, floor: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(b))))


def jet_fd_residual(model: MetricModel, x, y, max_order: int = 3, h: float = 1e-5) -> float:
    """Largest relative gap between jet partials of F^2 and difference quotients.

    First derivatives are compared with central differences of F^2 values.
    A partial of order ``k >= 2`` is compared with one central difference
    of the order ``k - 1`` jet evaluated at the shifted base points, which
    keeps the roundoff at ``eps / h`` instead of ``eps / h^k``.  Quotients at
    ``h`` and ``h / 2`` are Richardson-combined so the truncation error is
    ``O(h^4)`` even near the domain boundary.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    base = np.concatenate([x, y])
    ref = model.F2_jet(x, y, max_order).derivatives()
    tab = jets.tables(max_order)
    lo_order = max_order - 1
    lo = jets.tables(lo_order)

    def quotient(v: int, step: float) -> np.ndarray:
        shift = np.zeros_like(base)
        shift[v] = step
        plus = model.F2_jet((base + shift)[:2], (base + shift)[2:], lo_order).derivatives()
        minus = model.F2_jet((base - shift)[:2], (base - shift)[2:], lo_order).derivatives()
        return (plus - minus) / (2 * step)

    worst = 0.0
    for v in range(4):
        q = (4 * quotient(v, h / 2) - quotient(v, h)) / 3
        for n, alpha in enumerate(tab.alphas):
            if sum(alpha) == 0 or next(i for i, a in enumerate(alpha) if a) != v:
                continue
            lower = list(alpha)
            lower[v] -= 1
            worst = max(worst, _rel(q[lo.index[tuple(lower)]], ref[n]))
    return worst


def homogeneity_residuals(model: MetricModel, x, y, lams=(0.5, 3.0)) -> dict:
    """Relative deviation from the homogeneity degrees of g, G^i, G^i_j and G^i_jk in y."""
    y = np.asarray(y, dtype=float)
    base = frame(model, x, y)
    out = {"g": 0.0, "spray": 0.0, "conn": 0.0, "berw_conn": 0.0}
    for lam in lams:
        fr = frame(model, x, lam * y)
        out["g"] = max(out["g"], _rel(fr.g, base.g))
        out["spray"] = max(out["spray"], _rel(fr.spray, lam ** 2 * base.spray))
        out["conn"] = max(out["conn"], _rel(fr.conn, lam * base.conn))
        out["berw_conn"] = max(out["berw_conn"], _rel(fr.berw_conn, base.berw_conn))
    return out


def tensor_symmetry_residuals(model: MetricModel, x, y) -> dict:
    """Symmetries of g, R, G^i_jk, B and the trace identity for E."""
    fr = frame(model, x, y)
    B = fr.berwald
    eye = np.eye(2).reshape((2, 2) + (1,) * (fr.g.ndim - 2))
    return {
        "g_symmetric": float(np.max(np.abs(fr.g - np.swapaxes(fr.g, 0, 1)))),
        "ginv_g": float(np.max(np.abs(np.einsum("ij...,jk...->ik...", fr.ginv, fr.g) - eye))),
        "R_antisymmetric": float(np.max(np.abs(fr.riemann + np.swapaxes(fr.riemann, 1, 2)))),
        "berw_conn_symmetric": float(np.max(np.abs(fr.berw_conn - np.swapaxes(fr.berw_conn, 1, 2)))),
        "B_symmetric": float(max(
            np.max(np.abs(B - np.swapaxes(B, 1, 2))),
            np.max(np.abs(B - np.swapaxes(B, 2, 3))),
        )),
        "E_trace": float(np.max(np.abs(fr.mean_berwald - np.einsum("ljkl...->jk...", B)))),
    }


def projective_residuals(model: MetricModel, x, y) -> dict:
    """``G^i_j = P_j y^i + P delta^i_j`` and ``G^m_km = 3 P_k`` for projectively flat models."""
    jf = JetFrame(model, x, y, 5)
    P = jf.projective_factor
    Pv = values(P)
    dP = np.array([values(P.d(2 + k)) for k in range(2)])
    yv = np.asarray(y, dtype=float)
    eye = np.eye(2).reshape((2, 2) + (1,) * (yv.ndim - 1))
    conn = values(jf.conn)
    expect = np.einsum("j...,i...->ij...", dP, yv) + Pv * eye
    berw = values(jf.berw)
    trace = berw[0, :, 0] + berw[1, :, 1]
    return {
        "spray_form": _rel(values(jf.spray), Pv * yv),
        "conn_form": _rel(conn, expect),
        "trace_form": _rel(trace, 3 * dP),
    }


def bracket_axiom_residuals(ctx: FieldContext, f: IndicatrixField, g: IndicatrixField,
                            h: IndicatrixField) -> dict:
    """Antisymmetry and Jacobi identity of the vertical bracket, relative to field size."""
    fg, gf = ctx.vector(Bracket(f, g)), ctx.vector(Bracket(g, f))
    jac = (ctx.vector(Bracket(f, Bracket(g, h))) + ctx.vector(Bracket(g, Bracket(h, f)))
           + ctx.vector(Bracket(h, Bracket(f, g))))
    scale = max(1.0, float(np.max(np.abs(fg))))
    jscale = max(1.0, *(float(np.max(np.abs(ctx.vector(b)))) for b in
                        (Bracket(f, Bracket(g, h)), Bracket(g, Bracket(h, f)), Bracket(h, Bracket(f, g)))))
    return {
        "antisymmetry": float(np.max(np.abs(fg + gf))) / scale,
        "self_bracket": float(np.max(np.abs(ctx.vector(Bracket(f, f))))) / scale,
        "jacobi": float(np.max(np.abs(jac))) / jscale,
    }


def monotonicity_margin(h: HolonomyElement) -> float:
    """Smallest gap between consecutive output angles (positive iff monotone)."""
    ext = np.r_[h.t_out, h.t_out[0] + 2 * np.pi]
    return float(np.min(np.diff(ext)))


def composition_residual(model: MetricModel, first: CurvePath, second: CurvePath, y0,
                         tol: float = 1e-10) -> float:
    """Transport along ``first`` then ``second`` vs. transporting the two legs separately."""
    whole = parallel_transport(model, first.then(second), y0, tol)
    legs = parallel_transport(model, second, parallel_transport(model, first, y0, tol), tol)
    return float(np.max(np.abs(whole - legs) / np.hypot(*np.asarray(legs))))


__all__ = [
    "bracket_axiom_residuals",
    "composition_residual",
    "homogeneity_residuals",
    "jet_fd_residual",
    "monotonicity_margin",
    "projective_residuals",
    "tensor_symmetry_residuals",
]
