import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gwformation.conic_backend import (
    Cone,
    ConicProgram,
    dump_program,
    kkt_residuals,
    load_program,
    smat,
    solve_conic,
    svec,
    svec_index,
)
from gwformation.errors import InputError

BACKENDS = ["clarabel", "scs"]


def _sym(n, seed):
    M = np.random.default_rng(seed).normal(size=(n, n))
    return M + M.T


def test_svec_round_trip_and_inner_product():
    X, Y = _sym(4, 0), _sym(4, 1)
    np.testing.assert_allclose(smat(svec(X)), X)
    assert svec(X) @ svec(Y) == pytest.approx(np.trace(X @ Y))
    v = svec(X)
    assert v[svec_index(2, 1, 4)] == pytest.approx(np.sqrt(2) * X[2, 1])
    assert v[svec_index(1, 2, 4)] == v[svec_index(2, 1, 4)]


@given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
def test_svec_is_isometric(M):
    S = M + M.T
    assert np.linalg.norm(svec(S)) == pytest.approx(np.linalg.norm(S), abs=1e-9)


def test_program_validation():
    with pytest.raises(InputError):
        ConicProgram([1.0], sp.csc_matrix([[1.0]]), [1.0, 2.0], [Cone("zero", 2)])
    with pytest.raises(InputError):
        ConicProgram([1.0], sp.csc_matrix([[1.0]]), [1.0], [Cone("zero", 2)])
    with pytest.raises(InputError):
        Cone("soc", 3)


def _lp():
    # min x  s.t.  x >= 1  written as  -x + s = -1, s >= 0
    return ConicProgram([1.0], sp.csc_matrix([[-1.0]]), [-1.0], [Cone("nonneg", 1)])


def _min_eig_sdp(C):
    # min <C, X>  s.t.  trace X = 1, X psd
    k = C.shape[0]
    n = k * (k + 1) // 2
    tr = np.zeros(n)
    for i in range(k):
        tr[svec_index(i, i, k)] = 1.0
    A = sp.vstack([sp.csc_matrix(tr), -sp.identity(n)]).tocsc()
    b = np.concatenate([[1.0], np.zeros(n)])
    return ConicProgram(svec(C), A, b, [Cone("zero", 1), Cone("psd", k)])


@pytest.mark.parametrize("backend", BACKENDS)
def test_lp(backend):
    sol = solve_conic(_lp(), tol=1e-8, backend=backend)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_sdp_off_diagonal_packing(backend):
    C = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]])
    prog = _min_eig_sdp(C)
    sol = solve_conic(prog, tol=1e-9, backend=backend)
    assert sol.objective == pytest.approx(2 - np.sqrt(2), abs=1e-6)
    X = smat(sol.x)
    v = np.linalg.eigh(C)[1][:, 0]
    np.testing.assert_allclose(X, np.outer(v, v), atol=1e-4)
    rep = kkt_residuals(prog, sol)
    assert rep.max() < 1e-5


def test_backends_agree_on_sdp():
    C = _sym(4, 3)
    a = solve_conic(_min_eig_sdp(C), tol=1e-9, backend="clarabel")
    b = solve_conic(_min_eig_sdp(C), tol=1e-9, backend="scs")
    assert a.objective == pytest.approx(b.objective, abs=1e-5)
    assert a.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-6)


def test_infeasible_status():
    # x = 1 and x = 2
    prog = ConicProgram([0.0], sp.csc_matrix([[1.0], [1.0]]), [1.0, 2.0], [Cone("zero", 2)])
    assert solve_conic(prog, backend="clarabel").status == "infeasible"


def test_quadratic_objective():
    # min 0.5 * 2 x^2 - 2 x  ->  x = 1
    prog = ConicProgram([-2.0], sp.csc_matrix((0, 1)), np.zeros(0), [], P=sp.csc_matrix([[2.0]]))
    sol = solve_conic(prog, tol=1e-10)
    assert sol.x[0] == pytest.approx(1.0, abs=1e-8)


def test_dump_load_round_trip(tmp_path):
    prog = _min_eig_sdp(_sym(3, 5))
    text = dump_program(prog)
    back = load_program(text)
    assert np.array_equal(back.c, prog.c)
    assert np.array_equal(back.b, prog.b)
    assert (back.A != prog.A).nnz == 0
    assert back.cones == prog.cones
    path = tmp_path / "p.txt"
    dump_program(prog, str(path))
    assert load_program(str(path)).cones == prog.cones


def test_unknown_backend():
    with pytest.raises(InputError):
        solve_conic(_lp(), backend="mosek")
