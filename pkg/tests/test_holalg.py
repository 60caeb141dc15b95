import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finhol import checks, jets
from finhol.geometry import frame
from finhol.holalg import (
    ZERO, AngleGrid, Bracket, Curv, DepthError, FieldContext, Nabla, Scale, Sum, angle_derivative, bracket,
    chart_bracket, chart_samples, curvature_field, dimension_report, evaluate, fourier_coefficients,
    fourier_table, generate_algebra, horizontal_derivative, numerical_rank, witt_fields,
)
from finhol.mdsl import builtin_metric
from finhol.verify import funk_derivative_fields, randers_four_fields, witt_identity_residuals

from conftest import BUILTIN_CASES, unit_vectors

FUNK = builtin_metric("funk")
E1, E2 = (1.0, 0.0), (0.0, 1.0)
XI = curvature_field(E1, E2)


@pytest.fixture(scope="module")
def funk_grid():
    return AngleGrid(FUNK, (0.0, 0.0), 64, 6)


def test_funk_curvature_field_vector_form():
    y = unit_vectors(np.random.default_rng(0), 10)
    np.testing.assert_allclose(evaluate(XI, FUNK, (0.0, 0.0), y), 0.25 * np.array([y[1], -y[0]]), atol=1e-14)


@pytest.mark.parametrize("name", list(funk_derivative_fields()))
def test_funk_derivative_closed_forms(funk_grid, name):
    fld, exact = funk_derivative_fields()[name]
    assert np.max(np.abs(funk_grid.chart(fld) - exact(funk_grid.t))) < 1e-7


def test_curvature_field_matches_riemann_tensor(rng):
    for name, params in BUILTIN_CASES:
        m = builtin_metric(name, params)
        x = m.domain.sample(rng, 1)[0]
        y = unit_vectors(rng, 5)
        X, Y = rng.normal(size=(2, 2))
        R = frame(m, np.broadcast_to(x[:, None], y.shape), y).riemann
        np.testing.assert_allclose(evaluate(Curv(tuple(X), tuple(Y)), m, x, y),
                                   np.einsum("ijk...,j,k->i...", R, X, Y), atol=1e-12)


def test_curvature_field_antisymmetry_and_diagonal(rng):
    x, y = (0.2, 0.1), unit_vectors(rng, 8)
    ctx = FieldContext(FUNK, x, y, 1)
    X, Y = (0.3, -1.0), (0.7, 0.4)
    np.testing.assert_allclose(ctx.vector(curvature_field(X, Y)), -ctx.vector(curvature_field(Y, X)), atol=1e-15)
    assert np.max(np.abs(ctx.vector(curvature_field(X, X)))) < 1e-15


def test_euclidean_fields_vanish():
    grid = AngleGrid(builtin_metric("euclidean"), (0.3, 0.0), 16, 2)
    for f in (XI, Nabla(E1, XI), Bracket(XI, Nabla(E2, XI)), ZERO, Nabla(E1, ZERO)):
        assert np.all(grid.chart(f) == 0)


@pytest.mark.parametrize("name,params", [("funk", {}), ("klein", {}), ("projective_randers", {"a": (0.5, 0.0)}),
                                         ("projective_randers", {"a": (0.2, -0.4)})])
def test_derivative_of_curvature_field_closed_form(name, params, rng):
    # projectively flat, constant X, Y, Z: nabla_Z xi = G^m_km Z^k xi = 3 dP/dy^k Z^k xi
    m = builtin_metric(name, params)
    x = m.domain.sample(rng, 1)[0]
    y = unit_vectors(rng, 16)
    Z = tuple(rng.normal(size=2))
    ctx = FieldContext(m, x, y, 1)
    fr = frame(m, np.broadcast_to(x[:, None], y.shape), y)
    trace = np.einsum("mkm...,k->...", fr.berw_conn, np.asarray(Z))
    np.testing.assert_allclose(ctx.vector(Nabla(Z, XI)), trace * ctx.vector(XI), atol=1e-8)
    from finhol.geometry import JetFrame
    P = JetFrame(m, np.broadcast_to(x[:, None], y.shape), y, 3).projective_factor
    dP = np.array([P.d(2).coeffs[0], P.d(3).coeffs[0]])
    np.testing.assert_allclose(trace, 3 * np.einsum("k...,k->...", dP, np.asarray(Z)), atol=1e-8)


def test_fourier_examples():
    ft = fourier_coefficients(XI, FUNK, (0.0, 0.0), n_max=8, grid_n=64)
    assert ft.a[0] == pytest.approx(-0.25, abs=1e-14)
    assert np.max(np.abs(ft.magnitudes()[1:])) < 1e-10
    ft = fourier_coefficients(Nabla(E1, Nabla(E1, XI)), FUNK, (0.0, 0.0), n_max=8, grid_n=64)
    assert ft.a[0] == pytest.approx(-9 / 16, abs=1e-10)
    assert ft.a[2] == pytest.approx(-3 / 8, abs=1e-10)
    mags = ft.magnitudes()
    assert np.max(np.abs(np.delete(mags, [0, 2]))) < 1e-10
    assert np.max(fourier_coefficients(ZERO, FUNK, (0.0, 0.0)).magnitudes()) < 1e-12


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_fourier_table_against_quadrature(c):
    t = 2 * np.pi * np.arange(64) / 64
    f = c[0] + sum(c[2 * n - 1] * np.cos(n * t) + c[2 * n] * np.sin(n * t) for n in range(1, 5))
    ft = fourier_table(f, 6)
    fine = np.linspace(0, 2 * np.pi, 4001)
    ff = c[0] + sum(c[2 * n - 1] * np.cos(n * fine) + c[2 * n] * np.sin(n * fine) for n in range(1, 5))
    for n in range(1, 5):
        assert ft.a[n] == pytest.approx(np.trapezoid(ff * np.cos(n * fine), fine) / np.pi, abs=1e-9)
        assert ft.b[n] == pytest.approx(np.trapezoid(ff * np.sin(n * fine), fine) / np.pi, abs=1e-9)
    assert ft.a[0] == pytest.approx(c[0], abs=1e-12)
    assert ft.tail_energy < 1e-20


def test_fourier_grid_too_coarse():
    with pytest.raises(ValueError):
        fourier_table(np.zeros(16), 5)


def test_chart_bracket_circle_identities():
    t = 2 * np.pi * np.arange(128) / 128
    c = lambda k: np.cos(k * t)
    s = lambda k: np.sin(k * t)
    np.testing.assert_allclose(angle_derivative(s(3)), 3 * c(3), atol=1e-12)
    for k in range(1, 6):
        np.testing.assert_allclose(chart_bracket(c(1), c(k)) - chart_bracket(s(1), s(k)), -(k - 1) * s(k + 1),
                                   atol=1e-11)
        np.testing.assert_allclose(chart_bracket(c(1), s(k)) + chart_bracket(s(1), c(k)), (k - 1) * c(k + 1),
                                   atol=1e-11)
    # the sign in the other form fails already at k = 1, where the left side vanishes identically
    assert np.max(np.abs(chart_bracket(c(1), s(1)) + chart_bracket(s(1), c(1)))) < 1e-12


def test_field_bracket_matches_chart_bracket(funk_grid):
    f, g = Nabla(E1, XI), Nabla(E2, Nabla(E1, XI))
    np.testing.assert_allclose(funk_grid.chart(Bracket(f, g)), chart_bracket(funk_grid.chart(f), funk_grid.chart(g)),
                               atol=1e-10)


def test_witt_fields_and_identities(funk_grid):
    W = witt_fields(5)
    for (kind, k), fld in W.items():
        exact = np.cos(k * funk_grid.t) if kind == "c" else np.sin(k * funk_grid.t)
        assert np.max(np.abs(funk_grid.chart(fld) - exact)) < 1e-9, (kind, k)
    r = witt_identity_residuals(funk_grid)
    assert r["first"] < 1e-9 and r["second"] < 1e-9 and r["modes"] < 1e-9
    assert r["stated_second"] > 1.0


def test_bracket_axioms(funk_grid, rng):
    fields = [XI, Nabla(E1, XI), Nabla(E2, XI), Nabla(E1, Nabla(E2, XI))]
    for _ in range(4):
        f, g, h = (fields[i] for i in rng.choice(4, 3, replace=False))
        for k, v in checks.bracket_axiom_residuals(funk_grid, f, g, h).items():
            assert v < 1e-7, k
    assert np.max(np.abs(funk_grid.chart(Bracket(XI, XI)))) < 1e-15


def test_bracket_axioms_off_origin(rng):
    m = builtin_metric("projective_randers", {"a": (0.5, 0.0)})
    ctx = AngleGrid(m, (0.2, -0.1), 32, 4)
    f, g, h = Nabla(E1, XI), Nabla(E2, XI), Nabla(E2, Nabla(E1, XI))
    for k, v in checks.bracket_axiom_residuals(ctx, f, g, h).items():
        assert v < 1e-7, k


@pytest.mark.parametrize("name,params", BUILTIN_CASES)
def test_curvature_fields_commute(name, params, rng):
    m = builtin_metric(name, params)
    x = m.domain.sample(rng, 1, margin=0.6)[0]
    ctx = AngleGrid(m, x, 32, 1)
    a, b = Curv((1.0, 0.3), (0.2, 1.0)), Curv((0.5, -1.0), (1.0, 1.0))
    scale = max(1.0, np.max(np.abs(ctx.vector(a))) * np.max(np.abs(ctx.vector(b))))
    assert np.max(np.abs(ctx.vector(Bracket(a, b)))) / scale < 1e-10


def test_algebraic_node_operations(funk_grid):
    f, g = Nabla(E1, XI), Nabla(E2, XI)
    np.testing.assert_allclose(funk_grid.chart(f + g), funk_grid.chart(f) + funk_grid.chart(g), atol=1e-15)
    np.testing.assert_allclose(funk_grid.chart(f - 2.0 * g), funk_grid.chart(f) - 2 * funk_grid.chart(g), atol=1e-15)
    np.testing.assert_allclose(funk_grid.chart(-f), -funk_grid.chart(f), atol=0)
    np.testing.assert_allclose(funk_grid.chart(Nabla((2.0, -1.0), XI)),
                               2 * funk_grid.chart(f) - funk_grid.chart(g), atol=1e-14)
    assert Nabla(E1, XI) == horizontal_derivative(XI, 1)
    assert (Scale(2.0, f)).depth == 1 and Sum((f, Nabla(E1, g))).depth == 2
    assert Bracket(f, g).depth == 2


def test_depth_limits(monkeypatch):
    monkeypatch.setenv("FINHOL_MAX_JET_ORDER", "6")
    f = horizontal_derivative(XI, 1)
    f = horizontal_derivative(f, 2)
    with pytest.raises(DepthError):
        horizontal_derivative(f, 1)
    with pytest.raises(DepthError):
        bracket(f, XI, max_depth=2)
    with pytest.raises(ValueError):
        horizontal_derivative(XI, 3)
    ctx = FieldContext(FUNK, (0.0, 0.0), [[1.0], [0.0]], 1)
    with pytest.raises(DepthError):
        ctx.vector(f)


@pytest.mark.parametrize("name,params", BUILTIN_CASES)
def test_tangency_of_generated_fields(name, params):
    m = builtin_metric(name, params)
    x = (0.1, -0.2)
    span = generate_algebra(m, x, max_depth=3, grid_n=64)
    ctx = AngleGrid(m, x, 64, 3)
    for fld in span.fields:
        assert ctx.tangency_residual(fld) < 1e-8
    assert span.tangency < 1e-8


def test_numerical_rank_properties(rng):
    rows = rng.normal(size=(3, 40))
    r, s = numerical_rank(rows)
    assert r == 3 and len(s) == 3
    dup = np.vstack([rows, 2 * rows[0] - rows[2]])
    assert numerical_rank(dup)[0] == 3
    assert numerical_rank(np.zeros((2, 10)))[0] == 0
    assert numerical_rank(np.zeros((0, 10)))[0] == 0
    wide = rng.normal(size=(12, 5))
    assert numerical_rank(wide)[0] == 5


def test_adding_a_spanned_field_keeps_rank():
    fields = randers_four_fields()
    m = builtin_metric("projective_randers", {"a": (0.5, 0.0)})
    span = generate_algebra(m, (0.0, 0.0), generators=fields, max_depth=2, grid_n=64)
    extra = generate_algebra(m, (0.0, 0.0), generators=fields + [fields[1] + 3.0 * fields[3]], max_depth=2,
                             grid_n=64)
    assert extra.rank == span.rank
    assert len(extra.fields) == len(span.fields)


def test_randers_four_fields_are_independent():
    grid = AngleGrid(builtin_metric("projective_randers", {"a": (0.5, 0.0)}), (0.0, 0.0), 256, 2)
    r, s = numerical_rank(np.array([grid.chart(f) for f in randers_four_fields()]))
    assert r == 4 and s[3] / s[0] > 1e-4


def test_euclidean_algebra_is_trivial():
    span = generate_algebra(builtin_metric("euclidean"), (0.0, 0.0), max_depth=3, grid_n=32)
    assert span.rank == 0 and span.fields == []
    assert dimension_report(span).verdict.startswith("inconclusive")


@pytest.mark.parametrize("name", ["shen_disk", "shen_sphere"])
@pytest.mark.parametrize("eps", [0.1, 0.3])
def test_shen_algebra_is_the_curvature_algebra(name, eps):
    m = builtin_metric(name, {"eps": eps})
    span = generate_algebra(m, (0.2, 0.1), max_depth=3, grid_n=64)
    assert span.rank == 1 and span.stable
    assert not dimension_report(span).infinite_dimensional


def test_funk_generation_shows_witt_modes():
    span = generate_algebra(FUNK, (0.0, 0.0), max_depth=6, grid_n=128, n_max=8)
    assert span.rank >= 11 and span.stable
    assert np.all(span.mode_presence()[:6] > 1e-3)
    rep = dimension_report(span)
    assert rep.infinite_dimensional and rep.mode_count >= 6
    events = [e for e in span.history if e.kept]
    assert [e.rank for e in events] == list(range(1, span.rank + 1))
    assert all(d <= 6 for d in span.to_dict()["depths"])


def test_max_fields_stop_reason():
    span = generate_algebra(FUNK, (0.0, 0.0), max_depth=6, max_fields=5, grid_n=64)
    assert span.rank == 5 and span.stop_reason == "max_fields"


def test_randers_dimension_report():
    m = builtin_metric("projective_randers", {"a": (0.5, 0.0)})
    span = generate_algebra(m, (0.0, 0.0), max_depth=3, grid_n=64)
    rep = dimension_report(span)
    assert rep.rank >= 4 and rep.infinite_dimensional and rep.witness_angles
    assert rep.to_dict()["infinite_dimensional_indicator"] is True


def test_exports(tmp_path):
    span = generate_algebra(FUNK, (0.0, 0.0), max_depth=2, grid_n=32)
    span.write_json(tmp_path / "span.json")
    span.write_csv(tmp_path / "span.csv")
    d = json.loads((tmp_path / "span.json").read_text())
    assert d["rank"] == span.rank and len(d["fourier"]) == len(span.fields)
    assert d["labels"] == span.labels
    with open(tmp_path / "span.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["field", "depth"] and len(rows) == span.rank + 1
    assert len(rows[1]) == 2 + span.t.size
    np.testing.assert_array_equal(np.array(rows[1][2:], dtype=float), span.samples[0])


def test_backend_independent_rank():
    prev = jets.BACKEND
    try:
        ranks = []
        for b in ("python", "compiled") if jets.compiled_available() else ("python",):
            jets.use_backend(b)
            ranks.append(generate_algebra(FUNK, (0.0, 0.0), max_depth=3, grid_n=32).rank)
    finally:
        jets.use_backend(prev)
    assert len(set(ranks)) == 1


def test_roundoff_rows_do_not_raise_rank(rng):
    rows = rng.normal(size=(2, 50))
    noisy = np.vstack([rows, 1e-30 * rng.normal(size=50)])
    assert numerical_rank(noisy)[0] == 2
    assert numerical_rank(1e-20 * rng.normal(size=(1, 50)))[0] == 0


@pytest.mark.parametrize("name", ["shen_disk", "shen_sphere"])
def test_shen_algebra_at_symmetric_point(name):
    # the derivatives of xi vanish identically at the origin; roundoff must not count
    span = generate_algebra(builtin_metric(name, {"eps": 0.3}), (0.0, 0.0), max_depth=3, grid_n=64)
    assert span.rank == 1 and span.tangency < 1e-12
