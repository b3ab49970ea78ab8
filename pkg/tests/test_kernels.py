"""The numba kernels and the numpy fallback must agree."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwformation.accel import numba_kernels as nk
from gwformation.accel import numpy_kernels as npk

pytestmark = pytest.mark.skipif(nk is None, reason="numba unavailable")


def _cloud(n, d, seed):
    return np.random.default_rng(seed).normal(size=(n, d))


@given(st.integers(1, 7), st.integers(1, 3), st.integers(0, 10_000))
def test_pairwise_and_loss_tensor(n, d, seed):
    X, Y = _cloud(n, d, seed), _cloud(n, d, seed + 1)
    Dx, Dy = nk.pairwise_sq_dists(X), npk.pairwise_sq_dists(X)
    np.testing.assert_allclose(Dx, Dy, rtol=1e-12, atol=1e-12)
    Cy = npk.pairwise_sq_dists(Y)
    np.testing.assert_allclose(nk.loss_tensor(Dy, Cy), npk.loss_tensor(Dy, Cy), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("squared", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_lifted_value_grad(squared, seed):
    rng = np.random.default_rng(seed)
    n = 5
    X = rng.normal(size=(n, 2))
    C = npk.pairwise_sq_dists(rng.normal(size=(n, 2)))
    p = rng.dirichlet(np.ones(n * n))
    W = np.outer(p, p) + 0.01 * np.eye(n * n)
    v1, g1 = nk.lifted_value_grad(X, C, W, squared)
    v2, g2 = npk.lifted_value_grad(X, C, W, squared)
    assert v1 == pytest.approx(v2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-12)


def test_dykstra_and_scans():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    r = c = np.full(4, 0.25)
    P1 = nk.dykstra_project(M, r, c, 5000, 1e-13)[0]
    P2 = npk.dykstra_project(M, r, c, 5000, 1e-13)[0]
    np.testing.assert_allclose(P1, P2, atol=1e-12)
    G = npk.loss_tensor(npk.pairwise_sq_dists(_cloud(2, 2, 1)), npk.pairwise_sq_dists(_cloud(2, 2, 2)))
    a1, v1 = nk.grid_scan_two(G, 1001)
    a2, v2 = npk.grid_scan_two(G, 1001)
    assert a1 == a2 and v1 == pytest.approx(v2, rel=1e-12)


def test_two_opt_same_answer():
    rng = np.random.default_rng(4)
    G = npk.loss_tensor(npk.pairwise_sq_dists(_cloud(6, 2, 5)), npk.pairwise_sq_dists(_cloud(6, 2, 6)))
    perm = rng.permutation(6).astype(np.int64)
    p1, v1 = nk.two_opt(G, perm, 50)
    p2, v2 = npk.two_opt(G, perm, 50)
    np.testing.assert_array_equal(p1, p2)
    assert v1 == pytest.approx(v2, rel=1e-12)
    assert nk.perm_value(G, p1) == pytest.approx(npk.perm_value(G, p1), rel=1e-12)


def test_env_flag_selects_numpy(monkeypatch):
    import subprocess
    import sys

    code = "from gwformation.accel import BACKEND; print(BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={**__import__("os").environ, "GWFORMATION_DISABLE_NUMBA": "1"})
    assert out.stdout.strip() == "numpy"
