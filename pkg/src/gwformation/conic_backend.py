"""Standard-form conic programs and the solvers behind them.

Standard form::

    minimize    0.5 * x' P x + c' x
    subject to  A x + s = b,   s in K = K_1 x K_2 x ...

with cones taken in the listed order.  Supported kinds are ``zero``
(``s = 0``), ``nonneg`` (``s >= 0``) and ``psd`` (``s = svec(S)``, ``S``
positive semidefinite).

Symmetric packing
-----------------
``svec`` stores the lower triangle of a symmetric ``k x k`` matrix column by
column, ``S_00, S_10, ..., S_(k-1)0, S_11, S_21, ...``, with every
off-diagonal entry multiplied by ``sqrt(2)``.  With that scaling
``svec(X) @ svec(Y) == trace(X @ Y)``.  A PSD cone of order ``k`` occupies
``k * (k + 1) // 2`` rows.  Backends with a different packing (Clarabel uses
the upper triangle) are fed a row permutation of the same data.

Backends: ``"clarabel"`` (primal-dual interior point, default) and ``"scs"``
(operator splitting on the homogeneous self-dual embedding).  Clarabel runs
single-threaded and is deterministic for fixed input; SCS is deterministic for
fixed input and settings.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import InputError, NumericWarning

CONE_KINDS = ("zero", "nonneg", "psd")
STATUSES = ("optimal", "infeasible", "unbounded", "max_iter", "numerical")
SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int  # order k for psd cones, row count otherwise

    def __post_init__(self):
        if self.kind not in CONE_KINDS:
            raise InputError(f"unknown cone kind {self.kind!r}")
        if int(self.dim) < 0 or (self.kind == "psd" and int(self.dim) < 1):
            raise InputError(f"bad cone dimension {self.dim} for {self.kind}")
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def size(self) -> int:
        """Number of constraint rows the cone occupies."""
        return self.dim * (self.dim + 1) // 2 if self.kind == "psd" else self.dim


@dataclass(frozen=True)
class ConicProgram:
    """A conic program in the standard form documented at module level."""

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple
    P: sp.csc_matrix | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        A = sp.csc_matrix(self.A, dtype=float)
        cones = tuple(k if isinstance(k, Cone) else Cone(*k) for k in self.cones)
        if A.shape != (b.size, c.size):
            raise InputError(f"A has shape {A.shape}, expected {(b.size, c.size)}")
        if sum(k.size for k in cones) != b.size:
            raise InputError("cone sizes do not add up to the number of constraint rows")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
            raise InputError("program data must be finite")
        P = self.P
        if P is not None:
            P = sp.csc_matrix(P, dtype=float)
            if P.shape != (c.size, c.size):
                raise InputError(f"P has shape {P.shape}, expected {(c.size, c.size)}")
            if abs(P - P.T).max() > 1e-12 * max(1.0, abs(P).max()):
                raise InputError("P must be symmetric")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "cones", cones)
        object.__setattr__(self, "P", P)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def cone_slices(self):
        out, start = [], 0
        for k in self.cones:
            out.append((k, slice(start, start + k.size)))
            start += k.size
        return out


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    status: str
    residuals: dict  # primal_feas, dual_feas, gap as reported by the backend
    iterations: int = 0
    backend: str = ""
    dual_objective: float = float("nan")
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# symmetric packing


@lru_cache(maxsize=64)
def _tril_indices(k):
    rows, cols = [], []
    for j in range(k):
        rows.extend(range(j, k))
        cols.extend([j] * (k - j))
    r = np.array(rows, dtype=np.int64)
    c = np.array(cols, dtype=np.int64)
    r.setflags(write=False)
    c.setflags(write=False)
    return r, c


def svec_index(i: int, j: int, k: int) -> int:
    """Position of entry ``(i, j)`` of a ``k x k`` symmetric matrix in ``svec``."""
    if i < j:
        i, j = j, i
    return j * k - j * (j - 1) // 2 + (i - j)


def svec(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    k = S.shape[0]
    r, c = _tril_indices(k)
    v = S[r, c].copy()
    v[r != c] *= SQRT2
    return v


def smat(v: np.ndarray, k: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if k is None:
        k = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    r, c = _tril_indices(k)
    if v.size != r.size:
        raise InputError(f"vector of length {v.size} is not a packed {k}x{k} matrix")
    vals = np.where(r == c, v, v / SQRT2)
    S = np.zeros((k, k))
    S[r, c] = vals
    S[c, r] = vals
    return S


@lru_cache(maxsize=64)
def _tril_to_triu_perm(k):
    # position in upper-triangle column-major order -> svec position
    perm = []
    for j in range(k):
        for i in range(j + 1):
            perm.append(svec_index(j, i, k))
    p = np.array(perm, dtype=np.int64)
    p.setflags(write=False)
    return p


# ---------------------------------------------------------------------------
# solving


def solve_conic(prog: ConicProgram, tol: float = 1e-8, backend: str = "clarabel", max_iter: int | None = None) -> ConicSolution:
    """Solve a standard-form conic program.

    Parameters
    ----------
    prog : ConicProgram
    tol : float
        Feasibility and relative-gap tolerance handed to the backend.
    backend : {"clarabel", "scs"}
    max_iter : int, optional
        Iteration cap; hitting it yields status ``"max_iter"`` with the last
        iterate.

    Returns
    -------
    ConicSolution
    """
    if not isinstance(prog, ConicProgram):
        raise InputError("solve_conic expects a ConicProgram")
    if not tol > 0:
        raise InputError("tol must be positive")
    if backend == "clarabel":
        sol = _solve_clarabel(prog, tol, max_iter)
    elif backend == "scs":
        sol = _solve_scs(prog, tol, max_iter)
    else:
        raise InputError(f"unknown backend {backend!r}")
    if sol.status == "optimal" and max(sol.residuals.values()) > tol:
        sol.status = "numerical"
    if sol.status in ("numerical", "max_iter"):
        warnings.warn(
            f"{backend} stopped with status {sol.status}; residuals {sol.residuals}",
            NumericWarning,
            stacklevel=2,
        )
    return sol


def _psd_row_perm(prog):
    """Row permutation mapping our lower-triangle packing to upper-triangle packing."""
    perm = np.arange(prog.n_rows)
    for cone, sl in prog.cone_slices():
        if cone.kind == "psd":
            perm[sl] = sl.start + _tril_to_triu_perm(cone.dim)
    return perm


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "PrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostSolved": "numerical",
    "AlmostPrimalInfeasible": "infeasible",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "max_iter",
    "MaxTime": "max_iter",
    "NumericalError": "numerical",
    "InsufficientProgress": "numerical",
}


def _solve_clarabel(prog, tol, max_iter):
    import clarabel

    perm = _psd_row_perm(prog)
    A = prog.A[perm, :].tocsc()
    b = prog.b[perm]
    P = prog.P if prog.P is not None else sp.csc_matrix((prog.n_vars, prog.n_vars))
    P = sp.triu(P, format="csc")
    cones = []
    for k in prog.cones:
        if k.kind == "zero":
            cones.append(clarabel.ZeroConeT(k.dim))
        elif k.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(k.dim))
        else:
            cones.append(clarabel.PSDTriangleConeT(k.dim))
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_ktratio = min(1e-6, tol)
    s.max_threads = 1
    s.presolve_enable = False
    if any(k.kind == "psd" and k.dim > 8 for k in prog.cones):
        s.direct_solve_method = "faer"
        s.chordal_decomposition_enable = False
    if max_iter is not None:
        s.max_iter = int(max_iter)
    solver = clarabel.DefaultSolver(P, prog.c, A, b, cones, s)
    out = solver.solve()
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    y = np.asarray(out.z, dtype=float)[inv]
    sl = np.asarray(out.s, dtype=float)[inv]
    x = np.asarray(out.x, dtype=float)
    status = _CLARABEL_STATUS.get(str(out.status), "numerical")
    res = {"primal_feas": float(out.r_prim), "dual_feas": float(out.r_dual), "gap": _rel_gap(out.obj_val, out.obj_val_dual)}
    return ConicSolution(
        x=x, y=y, s=sl, objective=float(out.obj_val), status=status, residuals=res,
        iterations=int(out.iterations), backend="clarabel", dual_objective=float(out.obj_val_dual),
        info={"raw_status": str(out.status), "solve_time": float(out.solve_time)},
    )


def _rel_gap(p, d):
    p, d = float(p), float(d)
    if not (np.isfinite(p) and np.isfinite(d)):
        return float("inf")
    return abs(p - d) / (1.0 + min(abs(p), abs(d)))


def _solve_scs(prog, tol, max_iter):
    import scs

    z = l = 0
    psd = []
    # SCS needs cones grouped zero, nonneg, psd; reorder rows if necessary
    rows_by_kind = {"zero": [], "nonneg": [], "psd": []}
    for cone, sl in prog.cone_slices():
        rows_by_kind[cone.kind].append(np.arange(sl.start, sl.stop))
        if cone.kind == "zero":
            z += cone.dim
        elif cone.kind == "nonneg":
            l += cone.dim
        else:
            psd.append(cone.dim)
    perm = np.concatenate([np.concatenate(rows_by_kind[k]) if rows_by_kind[k] else np.zeros(0, dtype=np.int64)
                           for k in ("zero", "nonneg", "psd")]).astype(np.int64)
    data = {"A": prog.A[perm, :].tocsc(), "b": prog.b[perm], "c": prog.c}
    if prog.P is not None:
        data["P"] = sp.triu(prog.P, format="csc")
    cone = {"z": z, "l": l, "s": psd}
    kw = dict(eps_abs=tol, eps_rel=tol, verbose=False, max_iters=int(max_iter) if max_iter else 100000)
    solver = scs.SCS(data, cone, **kw)
    out = solver.solve()
    info = out["info"]
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    x = np.asarray(out["x"], dtype=float)
    y = np.asarray(out["y"], dtype=float)[inv]
    s = np.asarray(out["s"], dtype=float)[inv]
    st = str(info["status"]).lower()
    if st == "solved":
        status = "optimal"
    elif st.startswith("infeasible"):
        status = "infeasible"
    elif st.startswith("unbounded"):
        status = "unbounded"
    elif "inaccurate" in st:
        status = "numerical"
    else:
        status = "max_iter" if info["iter"] >= kw["max_iters"] else "numerical"
    res = {"primal_feas": float(info["res_pri"]), "dual_feas": float(info["res_dual"]),
           "gap": _rel_gap(info["pobj"], info["dobj"])}
    # SCS reports absolute residuals; normalize like Clarabel does
    res["primal_feas"] /= 1.0 + max(np.max(np.abs(prog.b), initial=0.0), 0.0)
    res["dual_feas"] /= 1.0 + np.max(np.abs(prog.c), initial=0.0)
    return ConicSolution(
        x=x, y=y, s=s, objective=float(info["pobj"]), status=status, residuals=res,
        iterations=int(info["iter"]), backend="scs", dual_objective=float(info["dobj"]),
        info={"raw_status": info["status"]},
    )


# ---------------------------------------------------------------------------
# independent audit


@dataclass(frozen=True)
class ResidualReport:
    """KKT residuals recomputed from program data.

    All quantities are nonnegative.  ``primal_feas`` and ``dual_feas`` are
    normalized by ``1 + ||b||_inf`` and ``1 + ||c||_inf``; ``gap`` is the
    primal-dual objective difference over ``1 + min(|pobj|, |dobj|)``.
    Absolute values are kept alongside.
    """

    primal_feas: float
    dual_feas: float
    gap: float
    complementarity: float
    primal_abs: float
    dual_abs: float
    gap_abs: float
    per_cone: tuple

    def max(self) -> float:
        return max(self.primal_feas, self.dual_feas, self.gap)


def _cone_violation(kind, v, dim):
    if v.size == 0:
        return 0.0
    if kind == "zero":
        return float(np.max(np.abs(v)))
    if kind == "nonneg":
        return float(max(0.0, -np.min(v)))
    lam = np.linalg.eigvalsh(smat(v, dim))
    return float(max(0.0, -lam[0]))


def kkt_residuals(prog: ConicProgram, sol) -> ResidualReport:
    """Recompute primal, dual and gap residuals of a candidate solution.

    The slack is recomputed as ``s = b - A x``; dual cone membership is
    checked on ``y`` (zero-cone duals are free, the other cones are
    self-dual).  Accepts a :class:`ConicSolution` or an ``(x, y)`` pair.
    """
    if isinstance(sol, ConicSolution):
        x, y = sol.x, sol.y
    else:
        x, y = sol
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float) if y is not None else np.zeros(prog.n_rows)
    if x.size != prog.n_vars or y.size != prog.n_rows:
        raise InputError("solution dimensions do not match the program")
    s = prog.b - prog.A @ x
    per = []
    p_abs = 0.0
    d_cone = 0.0
    for cone, sl in prog.cone_slices():
        pv = _cone_violation(cone.kind, s[sl], cone.dim)
        dv = 0.0 if cone.kind == "zero" else _cone_violation(cone.kind, y[sl], cone.dim)
        per.append((cone.kind, cone.dim, pv, dv))
        p_abs = max(p_abs, pv)
        d_cone = max(d_cone, dv)
    Px = prog.P @ x if prog.P is not None else np.zeros_like(x)
    r_dual = Px + prog.c + prog.A.T @ y
    d_abs = max(float(np.max(np.abs(r_dual), initial=0.0)), d_cone)
    xPx = float(x @ Px)
    pobj = 0.5 * xPx + float(prog.c @ x)
    dobj = -0.5 * xPx - float(prog.b @ y)
    gap_abs = abs(pobj - dobj)
    comp = abs(float(s @ y))
    bn = 1.0 + float(np.max(np.abs(prog.b), initial=0.0))
    cn = 1.0 + float(np.max(np.abs(prog.c), initial=0.0))
    return ResidualReport(
        primal_feas=p_abs / bn,
        dual_feas=d_abs / cn,
        gap=gap_abs / (1.0 + min(abs(pobj), abs(dobj))),
        complementarity=comp,
        primal_abs=p_abs,
        dual_abs=d_abs,
        gap_abs=gap_abs,
        per_cone=tuple(per),
    )


# ---------------------------------------------------------------------------
# debug dump


def dump_program(prog: ConicProgram, path_or_file=None) -> str:
    """Write a program in plain-text sparse triplet form.

    Layout::

        gwformation-conic 1
        dims <n_vars> <n_rows>
        cones <kind>:<dim> ...
        c <nnz>            followed by "<index> <value>" lines
        b <nnz>            followed by "<index> <value>" lines
        A <nnz>            followed by "<row> <col> <value>" lines
        P <nnz>            followed by "<row> <col> <value>" lines (upper triangle)

    Indices are 0-based, values use 17 significant digits.
    """
    buf = io.StringIO()
    w = buf.write
    w("gwformation-conic 1\n")
    w(f"dims {prog.n_vars} {prog.n_rows}\n")
    w("cones " + " ".join(f"{k.kind}:{k.dim}" for k in prog.cones) + "\n")
    for name, v in (("c", prog.c), ("b", prog.b)):
        nz = np.flatnonzero(v)
        w(f"{name} {nz.size}\n")
        for i in nz:
            w(f"{i} {v[i]:.17g}\n")
    for name, M in (("A", prog.A), ("P", sp.triu(prog.P) if prog.P is not None else None)):
        if M is None:
            w(f"{name} 0\n")
            continue
        C = sp.coo_matrix(M)
        C.eliminate_zeros()
        order = np.lexsort((C.col, C.row))
        w(f"{name} {C.nnz}\n")
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            w(f"{r} {c} {v:.17g}\n")
    text = buf.getvalue()
    if path_or_file is not None:
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w") as fh:
                fh.write(text)
    return text


def load_program(path_or_text) -> ConicProgram:
    """Inverse of :func:`dump_program`."""
    if "\n" in str(path_or_text):
        text = str(path_or_text)
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    lines = iter(text.splitlines())
    if not next(lines).startswith("gwformation-conic"):
        raise InputError("not a gwformation conic dump")
    _, n, m = next(lines).split()
    n, m = int(n), int(m)
    cones = []
    for tok in next(lines).split()[1:]:
        kind, dim = tok.split(":")
        cones.append(Cone(kind, int(dim)))
    vecs = {}
    for name, size in (("c", n), ("b", m)):
        tag, cnt = next(lines).split()
        assert tag == name
        v = np.zeros(size)
        for _ in range(int(cnt)):
            i, val = next(lines).split()
            v[int(i)] = float(val)
        vecs[name] = v
    mats = {}
    for name, shape in (("A", (m, n)), ("P", (n, n))):
        tag, cnt = next(lines).split()
        assert tag == name
        rows, cols, vals = [], [], []
        for _ in range(int(cnt)):
            r, c, val = next(lines).split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(val))
        mats[name] = sp.csc_matrix((vals, (rows, cols)), shape=shape) if int(cnt) else None
    P = mats["P"]
    if P is not None:
        P = (P + sp.triu(P, k=1).T).tocsc()
    A = mats["A"] if mats["A"] is not None else sp.csc_matrix((m, n))
    return ConicProgram(vecs["c"], A, vecs["b"], tuple(cones), P)
