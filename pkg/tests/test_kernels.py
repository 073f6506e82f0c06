import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from phcm import kernels

try:
    CY = kernels.backend_module("cython")
except ImportError:  # extension not built
    CY = None
PY = kernels.backend_module("python")

needs_cython = pytest.mark.skipif(CY is None, reason="compiled kernels not built")


def test_backend_names():
    assert kernels.BACKEND in ("cython", "python")
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")


@pytest.mark.parametrize("periodic", [True, False])
def test_python_diff_matches_stencil(periodic, rng):
    f = rng.normal(size=(2, 9, 3))
    out = PY.diff_axis(f, 0.25, periodic)
    if periodic:
        ref = (np.roll(f, -1, 1) - np.roll(f, 1, 1)) / 0.5
    else:
        ref = np.gradient(f, 0.25, axis=1, edge_order=2)
    np.testing.assert_allclose(out, ref, atol=1e-13)


@needs_cython
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(3, 12), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)),
       st.booleans(), st.floats(1e-3, 10.0))
def test_backends_agree_on_diff(f, periodic, h):
    a = np.asarray(CY.diff_axis(np.ascontiguousarray(f), h, periodic))
    b = PY.diff_axis(f, h, periodic)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-12 * max(1.0, np.abs(f).max()) / h)


@needs_cython
@given(arrays(np.float64, st.integers(0, 200), elements=st.floats(-1e6, 1e6)))
def test_backends_agree_on_weighted_sum(v):
    w = np.linspace(0.5, 1.5, v.size)
    a = CY.weighted_sum(np.ascontiguousarray(v), np.ascontiguousarray(w))
    b = PY.weighted_sum(v, w)
    assert a == pytest.approx(b, rel=1e-14, abs=1e-9)


def test_weighted_sum_compensated():
    v = np.array([1e16, 1.0, -1e16, 1.0])
    assert kernels.weighted_sum(v, 1.0) == 2.0


def test_diff_axis_any_axis(rng):
    f = rng.normal(size=(4, 5, 6))
    for ax in range(3):
        out = kernels.diff_axis(f, ax, 0.1, True)
        ref = (np.roll(f, -1, ax) - np.roll(f, 1, ax)) / 0.2
        np.testing.assert_allclose(out, ref, atol=1e-12)


def test_pure_python_switch():
    code = "from phcm import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, PHCM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
