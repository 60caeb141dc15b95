import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finhol import jets
from finhol.holalg import chart_samples, curvature_field, Nabla
from finhol.mdsl import builtin_metric

pytestmark = pytest.mark.skipif(not jets.compiled_available(), reason="compiled kernels not built")


def _jets(seed, order, batch):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        c = rng.normal(size=(jets.ncoef(order), batch))
        c[0] = 1.0 + np.abs(c[0])
        out.append(jets.Jet(c, order))
    return out


@pytest.fixture
def restore_backend():
    prev = jets.BACKEND
    yield
    jets.use_backend(prev)


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 9), st.integers(1, 9))
def test_kernels_agree(seed, order, batch):
    a, b = _jets(seed, order, batch)
    results = {}
    prev = jets.BACKEND
    try:
        for name in ("python", "compiled"):
            jets.use_backend(name)
            results[name] = [(a * b).coeffs, (a / b).coeffs, a.sqrt().coeffs]
    finally:
        jets.use_backend(prev)
    for p, c in zip(results["python"], results["compiled"]):
        np.testing.assert_allclose(p, c, rtol=1e-12, atol=1e-12)


def test_field_evaluation_agrees(restore_backend):
    funk = builtin_metric("funk")
    f = Nabla((1.0, 0.0), Nabla((0.0, 1.0), curvature_field((1, 0), (0, 1))))
    out = {}
    for name in ("python", "compiled"):
        jets.use_backend(name)
        out[name] = chart_samples(f, funk, (0.1, -0.2), 32)
    np.testing.assert_allclose(out["python"], out["compiled"], rtol=1e-12, atol=1e-14)


def test_unknown_backend():
    with pytest.raises(ValueError):
        jets.use_backend("fortran")


def test_environment_forces_python_fallback():
    env = dict(os.environ, FINHOL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import finhol; print(finhol.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
