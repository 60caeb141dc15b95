import json
import math

import numpy as np
import pytest

from finhol import checks
from finhol.geometry import frame
from finhol.holalg import chart_samples, curvature_field
from finhol.mdsl import MetricDomainError, builtin_metric
from finhol.transport import (
    ArcSegment, CurvePath, LineSegment, ParametricSegment, TransportError, angle_shift, dormand_prince,
    indicatrix_points, loop_holonomy, octant_triangle, parallel_transport, parallelogram_commutator,
    transport_many, transport_with_info,
)

from conftest import BUILTIN_CASES, unit_vectors

TOL = 1e-10


def _random_polyline(m, rng, n=4, margin=0.8):
    return CurvePath.polyline(m.domain.sample(rng, n, margin=margin))


def test_dormand_prince_exponential():
    y = dormand_prince(lambda t, y: -y, np.array([1.0, 2.0]), 1e-12)
    np.testing.assert_allclose(y, np.exp(-1) * np.array([1.0, 2.0]), rtol=1e-10)


def test_dormand_prince_rotation():
    rot = lambda t, y: np.array([-y[1], y[0]]) * 2 * np.pi
    np.testing.assert_allclose(dormand_prince(rot, np.array([1.0, 0.0]), 1e-12), [1.0, 0.0], atol=1e-9)


def test_euclidean_transport_is_identity(rng):
    m = builtin_metric("euclidean")
    path = CurvePath.polyline(rng.normal(size=(5, 2)))
    assert np.all(parallel_transport(m, path, [1.0, 2.0]) == [1.0, 2.0])
    loop = CurvePath.polyline(rng.normal(size=(4, 2)), closed=True)
    h = loop_holonomy(m, loop, N=16)
    assert np.max(np.abs(h.shift)) < 1e-13 and h.drift < 1e-13


@pytest.mark.parametrize("name,params", BUILTIN_CASES)
def test_finsler_function_is_preserved(name, params, rng):
    m = builtin_metric(name, params)
    paths = [_random_polyline(m, rng) for _ in range(10)]
    res = transport_many(m, paths, unit_vectors(rng, 10) * rng.uniform(0.5, 2, 10), TOL)
    assert res.drift < 100 * TOL


def test_batched_transport_matches_individual(rng):
    m = builtin_metric("funk")
    paths = [_random_polyline(m, rng, 3) for _ in range(4)]
    y0 = unit_vectors(rng, 4)
    batch = transport_many(m, paths, y0, 1e-12).y
    for b, p in enumerate(paths):
        np.testing.assert_allclose(batch[:, b], parallel_transport(m, p, y0[:, b], 1e-12), rtol=1e-9)


def test_transport_many_rejects_mismatched_paths(rng):
    m = builtin_metric("funk")
    with pytest.raises(ValueError):
        transport_many(m, [_random_polyline(m, rng, 3), _random_polyline(m, rng, 4)], unit_vectors(rng, 2))


def test_octant_triangle_rotates_by_right_angle():
    h = loop_holonomy(builtin_metric("sphere"), octant_triangle(), N=16, tol=TOL)
    assert np.max(np.abs(h.shift - np.pi / 2)) < 1e-4
    assert h.is_monotone()


def test_small_square_on_funk_deviates_by_curvature_order():
    m = builtin_metric("funk")
    x, side = np.array([0.1, 0.2]), 1e-3
    loop = CurvePath.polyline([x, x + [side, 0], x + [side, side], x + [0, side]], closed=True)
    y0 = np.array([0.6, 0.8])
    y = parallel_transport(m, loop, y0, 1e-13)
    dev = np.max(np.abs(y - y0))
    assert 1e-8 < dev < 1e-5
    # matches a high-accuracy reference
    np.testing.assert_allclose(parallel_transport(m, loop, y0, 1e-10), y, atol=1e-9)


@pytest.mark.parametrize("name,params", [("funk", {}), ("shen_disk", {"eps": 0.3}), ("sphere", {})])
def test_loop_followed_by_reverse_is_identity(name, params, rng):
    m = builtin_metric(name, params)
    loop = CurvePath.polyline(m.domain.sample(rng, 3, margin=0.6), closed=True)
    h = loop_holonomy(m, loop.then(loop.reversed()), N=16, tol=TOL)
    assert np.max(np.abs(h.shift)) < 10 * TOL * 2 * np.pi


def test_loop_composition(rng):
    m = builtin_metric("funk")
    base = np.array([0.1, -0.2])
    a = CurvePath.polyline([base, *m.domain.sample(rng, 2, margin=0.5)], closed=True)
    b = CurvePath.polyline([base, *m.domain.sample(rng, 2, margin=0.5)], closed=True)
    ha = loop_holonomy(m, a, N=16, tol=1e-12)
    hab = loop_holonomy(m, a.then(b), N=16, tol=1e-12)
    hb_after = transport_with_info(m, b, ha.y_out, 1e-12).y
    assert np.max(np.abs(hab.y_out - hb_after)) < 10 * 1e-12 * 100
    assert checks.composition_residual(m, a, b, [0.3, 0.4], 1e-12) < 1e-9


@pytest.mark.parametrize("name", ["klein", "sphere"])
def test_riemannian_transport_is_linear(name, rng):
    m = builtin_metric(name)
    path = _random_polyline(m, rng, 4, margin=0.5)
    u, v = rng.normal(size=(2, 2))
    a, b = 0.7, -1.3
    T = lambda y: parallel_transport(m, path, y, 1e-12)
    np.testing.assert_allclose(T(a * u + b * v), a * T(u) + b * T(v), atol=1e-8)


def test_finsler_transport_is_not_linear(rng):
    m = builtin_metric("funk")
    path = CurvePath.polyline([[0.0, 0.0], [0.5, 0.1], [0.2, 0.6]])
    u, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    T = lambda y: parallel_transport(m, path, y, 1e-12)
    assert np.max(np.abs(T(u + v) - T(u) - T(v))) > 1e-4


def test_transport_is_homogeneous(rng):
    m = builtin_metric("funk")
    path = _random_polyline(m, rng)
    y = np.array([0.3, -0.5])
    np.testing.assert_allclose(parallel_transport(m, path, 2.5 * y, 1e-12), 2.5 * parallel_transport(m, path, y, 1e-12),
                               rtol=1e-9)


def test_arc_and_parametric_segments_agree():
    m = builtin_metric("klein")
    arc = CurvePath((ArcSegment(np.zeros(2), 0.5, 0.0, 1.0),))
    param = CurvePath((ParametricSegment(lambda t: 0.5 * np.array([np.cos(t), np.sin(t)]),
                                         lambda t: 0.5 * np.array([-np.sin(t), np.cos(t)])),))
    y = [1.0, 0.2]
    np.testing.assert_allclose(parallel_transport(m, arc, y, 1e-12), parallel_transport(m, param, y, 1e-12), atol=1e-10)


def test_path_reversal_inverts_transport(rng):
    m = builtin_metric("shen_disk", {"eps": 0.3})
    p = CurvePath((LineSegment(np.array([0.1, 0.0]), np.array([0.3, 0.4])), ArcSegment(np.zeros(2), 0.5, 0.93, 2.0)))
    y0 = np.array([0.4, -0.1])
    back = parallel_transport(m, p.reversed(), parallel_transport(m, p, y0, 1e-12), 1e-12)
    np.testing.assert_allclose(back, y0, atol=1e-10)


def test_projection_is_recorded_and_preserves_F(rng):
    m = builtin_metric("funk")
    path = _random_polyline(m, rng)
    res = transport_with_info(m, path, [0.2, 0.9], 1e-6, project=True)
    assert res.projected and res.drift < 1e-12
    plain = transport_with_info(m, path, [0.2, 0.9], 1e-10)
    assert not plain.projected
    np.testing.assert_allclose(res.y, plain.y, atol=1e-5)
    h = loop_holonomy(m, CurvePath.polyline(m.domain.sample(rng, 3, 0.5), closed=True), N=8, project=True)
    assert h.to_dict()["projected"] is True


def test_errors(rng):
    m = builtin_metric("funk")
    path = CurvePath.polyline([[0.0, 0.0], [0.5, 0.0]])
    with pytest.raises(TransportError):
        parallel_transport(m, path, [0.0, 0.0])
    with pytest.raises(MetricDomainError):
        parallel_transport(m, CurvePath.polyline([[0.0, 0.0], [1.5, 0.0]]), [1.0, 0.0])
    loop = CurvePath.polyline([[0.0, 0.0], [0.2, 0.0], [0.0, 0.2]], closed=True)
    with pytest.raises(ValueError):
        loop_holonomy(m, loop, N=4)
    with pytest.raises(ValueError):
        loop_holonomy(m, path, N=16)
    with pytest.raises(ValueError):
        path.then(CurvePath.polyline([[0.9, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        CurvePath.polyline([[0.0, 0.0]])


def test_descriptor_round_trip():
    for desc in ({"type": "polygon", "vertices": [[0, 0], [0.2, 0], [0.1, 0.3]]},
                 {"type": "polyline", "vertices": [[0, 0], [0.2, 0.1]]},
                 {"type": "parallelogram", "x": [0.1, 0], "X": [1, 0], "Y": [0, 1], "s": 0.05, "t": 0.02}):
        p = CurvePath.from_descriptor(json.dumps(desc))
        q = CurvePath.from_descriptor(p.description)
        assert p.description == q.description
        np.testing.assert_allclose(p.sample_points(), q.sample_points())
    assert CurvePath.from_descriptor({"type": "polygon", "vertices": [[0, 0], [1, 0], [0, 1]]}).closed
    with pytest.raises(ValueError):
        CurvePath.from_descriptor({"type": "spiral"})


def test_indicatrix_points_have_unit_F():
    m = builtin_metric("projective_randers", {"a": (0.5, 0.0)})
    t = np.linspace(0, 2 * np.pi, 33)
    x = np.array([0.2, -0.3])
    y = indicatrix_points(m, x, t)
    np.testing.assert_allclose(m.F(np.broadcast_to(x[:, None], y.shape), y), 1.0, rtol=1e-14)
    np.testing.assert_allclose(y / np.hypot(*y), [np.cos(t), np.sin(t)], atol=1e-14)


def test_angle_shift_sign():
    assert angle_shift(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(np.pi / 2)
    assert angle_shift(np.array([1.0, 0.0]), np.array([1.0, -1.0])) == pytest.approx(-np.pi / 4)


@pytest.mark.parametrize("name,params", [("funk", {}), ("shen_disk", {"eps": 0.3}), ("projective_randers", {"a": (0.5, 0.0)})])
def test_holonomy_maps_are_monotone(name, params, rng):
    m = builtin_metric(name, params)
    for _ in range(3):
        loop = CurvePath.polyline(m.domain.sample(rng, 4, margin=0.8), closed=True)
        h = loop_holonomy(m, loop, N=32)
        assert h.is_monotone() and checks.monotonicity_margin(h) > 0
        assert h.drift < 100 * TOL
        d = h.to_dict()
        assert d["monotone"] and d["loop"]["type"] == "polygon"


def test_euclidean_commutator_is_zero():
    f = parallelogram_commutator(builtin_metric("euclidean"), [0.0, 0.0], [1, 0], [0, 1], 1e-2, 1e-2, N=16)
    assert np.max(np.abs(f.values)) == 0


def test_funk_commutator_converges_to_curvature_field():
    m = builtin_metric("funk")
    errs = [np.max(np.abs(parallelogram_commutator(m, [0, 0], [1, 0], [0, 1], h, h, N=32).values + 0.25))
            for h in (2e-3, 1e-3)]
    assert errs[1] < 1e-2
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_klein_commutator_matches_constant_curvature_field(rng):
    m = builtin_metric("klein")
    x = m.domain.sample(rng, 1, margin=0.6)[0]
    X, Y = np.array([1.0, 0.0]), np.array([0.3, 1.0])
    comm = parallelogram_commutator(m, x, X, Y, 1e-3, 1e-3, N=32)
    field = chart_samples(curvature_field(X, Y), m, x, 32)
    # oracle: R(X, Y)y = lambda (Y g(y, X) - X g(y, Y)) with lambda = -1
    y = indicatrix_points(m, x, comm.t)
    g = frame(m, np.broadcast_to(x[:, None], y.shape), y).g
    gX = np.einsum("ij...,i...,j->...", g, y, X)
    gY = np.einsum("ij...,i...,j->...", g, y, Y)
    xi = -(Y[:, None] * gX - X[:, None] * gY)
    oracle = (y[0] * xi[1] - y[1] * xi[0]) / (y[0] ** 2 + y[1] ** 2)
    np.testing.assert_allclose(field, oracle, atol=1e-10)
    assert np.max(np.abs(comm.values - oracle)) / np.max(np.abs(oracle)) < 5e-2
