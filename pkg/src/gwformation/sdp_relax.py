"""Semidefinite relaxation of the GW problem and its optimality certificate.

The decision variable is the moment matrix

    Z = [[Qhat,     vec(P)],
         [vec(P)',  1     ]]        (order N**2 + 1)

placed directly in one PSD cone, so symmetry of ``Qhat`` is structural.
Equalities: the corner entry is one, ``P`` has uniform marginals, and the
linking identities ``Qhat vec(e_i 1') = vec(P) / N`` and
``Qhat vec(1 e_j') = vec(P) / N`` hold for every ``i`` and ``j``.  Redundant
equality rows are removed once per ``N`` with a pivoted QR factorization.
Every off-diagonal entry of ``Z`` is constrained nonnegative (``Qhat`` and
``P`` entrywise), unless ``nonneg_lift=False`` drops the ``Qhat`` part.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from .accel import kernels
from .conic_backend import SQRT2, Cone, ConicProgram, _tril_indices, smat, solve_conic, svec_index
from .errors import CertificateUndefinedError, InputError, InternalSolverError, NumericError
from .gw_problem import Coupling, GwValue, as_coupling, gw_objective, local_gw, project_to_couplings
from .mmspace import LossTensor, vec

RATIO_TOL = 1e-3
RANK_TOL = 1e-5
DEFAULT_TOL = 1e-5


@dataclass(frozen=True)
class LiftedPair:
    """A coupling together with its lifted second-moment matrix."""

    P: Coupling
    Qhat: np.ndarray

    def __post_init__(self):
        P = as_coupling(self.P)
        Q = np.array(self.Qhat, dtype=float)
        n2 = P.N * P.N
        if Q.shape != (n2, n2):
            raise InputError(f"Qhat must be {n2}x{n2}, got {Q.shape}")
        Q.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Qhat", Q)

    @property
    def N(self) -> int:
        return self.P.N

    def moment_matrix(self) -> np.ndarray:
        p = self.P.vec()
        n2 = p.size
        Z = np.empty((n2 + 1, n2 + 1))
        Z[:n2, :n2] = self.Qhat
        Z[:n2, n2] = p
        Z[n2, :n2] = p
        Z[n2, n2] = 1.0
        return Z

    @classmethod
    def rank_one(cls, P) -> "LiftedPair":
        P = as_coupling(P)
        p = P.vec()
        return cls(P, np.outer(p, p))

    def is_rank_one_lift(self) -> bool:
        p = self.P.vec()
        return bool(np.array_equal(self.Qhat, np.outer(p, p)))


def lift_report(pair: LiftedPair) -> dict:
    """Violations of the structural properties a feasible lift must satisfy."""
    N = pair.N
    Q = pair.Qhat
    p = pair.P.vec()
    link = 0.0
    for i in range(N):
        row = np.zeros((N, N))
        row[i, :] = 1.0
        link = max(link, float(np.max(np.abs(Q @ vec(row) - p / N))))
        col = np.zeros((N, N))
        col[:, i] = 1.0
        link = max(link, float(np.max(np.abs(Q @ vec(col) - p / N))))
    return {
        "min_eigenvalue": float(np.linalg.eigvalsh(pair.moment_matrix())[0]),
        "min_qhat_entry": float(Q.min()),
        "linking_violation": link,
        "row_sum_violation": float(np.max(np.abs(Q.sum(axis=1) - p))),
        "trace": float(np.trace(Q)),
        "marginal_violation": max(
            float(np.max(np.abs(pair.P.entries.sum(axis=1) - 1.0 / N))),
            float(np.max(np.abs(pair.P.entries.sum(axis=0) - 1.0 / N))),
        ),
        "min_p_entry": float(p.min()),
    }


@dataclass(frozen=True)
class Certificate:
    """Global-optimality evidence for a relaxation solve.

    ``ratio`` is the objective of the extracted coupling over the
    relaxation bound (``coupling_value / sdp_bound``) and ``rank_gap`` the
    ratio of the two leading eigenvalues of the returned moment matrix.
    ``raw_rank_gap`` is the same quantity for the solver's own point, which
    can differ when polishing replaced it.
    """

    ratio: float
    rank_gap: float
    is_global: bool
    is_rank_one: bool
    sdp_bound: float = float("nan")
    coupling_value: float = float("nan")
    raw_rank_gap: float = float("nan")
    polished: bool = False
    ratio_tol: float = RATIO_TOL
    rank_tol: float = RANK_TOL



SOLVER_TOL_FACTOR = 1e-3  # conic solver tolerance relative to the certificate tolerance


def zero_tolerance(G, tol: float) -> float:
    """Level below which a GW objective counts as zero for a solve at ``tol``.

    The relaxation is solved with ``G`` scaled to unit maximum entry, so
    its objective is accurate to about ``tol * max|G|`` in the original
    units; this returns ``10 * tol * max|G|``.
    """
    Gm = np.asarray(G.entries if isinstance(G, LossTensor) else G, dtype=float)
    return 10.0 * tol * float(np.max(np.abs(Gm), initial=0.0))


def certified_ratio(coupling_value: float, bound: float, zero_tol: float) -> float:
    """Objective of an extracted coupling over a relaxation lower bound.

    Taken as 1 when both vanish within ``zero_tol`` (the relaxation is exact
    at a zero optimum), and ``inf`` when only the bound vanishes, where the
    quotient is undefined.
    """
    if abs(coupling_value) <= zero_tol and abs(bound) <= zero_tol:
        return 1.0
    if bound <= zero_tol:
        return float("inf")
    return float(coupling_value / bound)


# ---------------------------------------------------------------------------
# program construction


@lru_cache(maxsize=8)
def _equality_block(N: int):
    """Independent equality rows (sparse) and right-hand side for order N."""
    n = N * N + 1
    last = n - 1
    rows, cols, vals, rhs = [], [], [], []

    def coef(i, j):
        return svec_index(i, j, n), (1.0 if i == j else 1.0 / SQRT2)

    def add(terms, b):
        r = len(rhs)
        acc = {}
        for i, j, v in terms:
            k, s = coef(i, j)
            acc[k] = acc.get(k, 0.0) + v * s
        for k, v in acc.items():
            rows.append(r)
            cols.append(k)
            vals.append(v)
        rhs.append(b)

    def vid(i, j):
        return i + j * N

    add([(last, last, 1.0)], 1.0)
    for i in range(N):
        add([(vid(i, j), last, 1.0) for j in range(N)], 1.0 / N)
    for j in range(N):
        add([(vid(i, j), last, 1.0) for i in range(N)], 1.0 / N)
    for a in range(N * N):
        for i in range(N):
            add([(a, vid(i, j), 1.0) for j in range(N)] + [(a, last, -1.0 / N)], 0.0)
        for j in range(N):
            add([(a, vid(i, j), 1.0) for i in range(N)] + [(a, last, -1.0 / N)], 0.0)
    nv = n * (n + 1) // 2
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), nv))
    b = np.array(rhs)
    # drop linearly dependent rows; the kept set is fixed for a given N
    _, R, piv = sla.qr(A.toarray().T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > 1e-10 * d[0]))
    keep = np.sort(piv[:rank])
    return A[keep].tocsc(), b[keep]


@lru_cache(maxsize=8)
def _structure(N: int, nonneg_lift: bool):
    n = N * N + 1
    nv = n * (n + 1) // 2
    Aeq, beq = _equality_block(N)
    r, c = _tril_indices(n)
    off = r != c
    if not nonneg_lift:
        off = off & (r == n - 1)  # only the vec(P) column
    nn = np.flatnonzero(off)
    Ann = -sp.identity(nv, format="csr")[nn]
    A = sp.vstack([Aeq, Ann, -sp.identity(nv, format="csc")]).tocsc()
    b = np.concatenate([beq, np.zeros(nn.size), np.zeros(nv)])
    cones = (Cone("zero", Aeq.shape[0]), Cone("nonneg", nn.size), Cone("psd", n))
    return A, b, cones


def _check_tensor(G):
    Gm = np.asarray(G.entries if isinstance(G, LossTensor) else G, dtype=float)
    if Gm.ndim != 2 or Gm.shape[0] != Gm.shape[1]:
        raise InputError("loss tensor must be square")
    N = int(round(np.sqrt(Gm.shape[0])))
    if N * N != Gm.shape[0]:
        raise InputError(f"loss tensor order {Gm.shape[0]} is not a square number")
    scale = max(1.0, float(np.max(np.abs(Gm)))) if Gm.size else 1.0
    if np.max(np.abs(Gm - Gm.T), initial=0.0) > 1e-12 * scale:
        raise InputError("loss tensor is not swap-symmetric")
    return Gm, N


def build_gw_sdp(G, nonneg_lift: bool = True) -> ConicProgram:
    """Conic program for the relaxation of ``min_P vec(P)' G vec(P)``.

    The variable is ``svec(Z)`` of the moment matrix (see module docstring);
    :func:`unpack_lift` maps a solution back to ``(P, Qhat)``.
    """
    Gm, N = _check_tensor(G)
    A, b, cones = _structure(N, bool(nonneg_lift))
    n = N * N + 1
    Z = np.zeros((n, n))
    Z[: n - 1, : n - 1] = Gm
    r, c = _tril_indices(n)
    cvec = Z[r, c] * np.where(r == c, 1.0, SQRT2)
    return ConicProgram(cvec, A, b, cones)


def unpack_lift(x: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``svec(Z)`` into ``(P, Qhat)``."""
    Z = smat(x, N * N + 1)
    p = Z[:-1, -1]
    return p.reshape((N, N), order="F"), Z[:-1, :-1]


# ---------------------------------------------------------------------------
# certificate


def certify(pair: LiftedPair, G, ratio_tol: float = RATIO_TOL, rank_tol: float = RANK_TOL) -> Certificate:
    """Approximation ratio and rank gap of a feasible lifted pair.

    ``ratio = vec(P)' G vec(P) / <Qhat, G>``, taken as 1 when both are below
    1e-12.  ``rank_gap`` is ``lambda_2 / lambda_1`` of the moment matrix.
    """
    Gm, _ = _check_tensor(G)
    num = gw_objective(pair.P, Gm)
    den = float(np.sum(Gm * pair.Qhat))
    if abs(num) < 1e-12 and abs(den) < 1e-12:
        ratio = 1.0
    elif den < 1e-12:
        if num >= 1e-9 or den <= 0.0:
            raise CertificateUndefinedError(
                f"relaxation objective {den:.3e} vanishes while the coupling objective is {num:.3e}"
            )
        ratio = num / den
    else:
        ratio = num / den
    lam = np.linalg.eigvalsh(pair.moment_matrix())[::-1]
    gap = max(float(lam[1]), 0.0) / float(lam[0]) if lam.size > 1 else 0.0
    return Certificate(
        ratio=float(ratio),
        rank_gap=gap,
        is_global=bool(abs(ratio - 1.0) <= ratio_tol),
        is_rank_one=bool(gap <= rank_tol),
        sdp_bound=den,
        coupling_value=num,
        raw_rank_gap=gap,
        ratio_tol=ratio_tol,
        rank_tol=rank_tol,
    )


# ---------------------------------------------------------------------------
# rounding


def extract_assignment(P) -> tuple[np.ndarray, float]:
    """Scaled permutation nearest in assignment weight to a coupling.

    Returns the permutation ``sigma`` (``sigma[i]`` is the column matched to
    row ``i``) maximizing ``sum_i P[i, sigma[i]]``, and the Frobenius residual
    ``||P - Perm(sigma) / N||``.  Among maximizers the lexicographically
    smallest ``sigma`` is returned.
    """
    E = as_coupling(P).entries
    N = E.shape[0]
    rr, cc = linear_sum_assignment(E, maximize=True)
    best = E[rr, cc].sum()
    tol = 1e-12 * max(1.0, abs(best))
    fixed = -np.ones(N, dtype=np.int64)
    free_cols = set(range(N))
    for i in range(N):
        for j in sorted(free_cols):
            rows = [k for k in range(i + 1, N)]
            cols = sorted(free_cols - {j})
            rest = 0.0
            if rows:
                sub = E[np.ix_(rows, cols)]
                a, b = linear_sum_assignment(sub, maximize=True)
                rest = sub[a, b].sum()
            prefix = sum(E[k, fixed[k]] for k in range(i))
            if prefix + E[i, j] + rest >= best - tol:
                fixed[i] = j
                free_cols.discard(j)
                break
    perm = fixed
    Pm = np.zeros((N, N))
    Pm[np.arange(N), perm] = 1.0 / N
    return perm, float(np.linalg.norm(E - Pm))


def _perm_coupling(perm):
    N = perm.size
    P = np.zeros((N, N))
    P[np.arange(N), perm] = 1.0 / N
    return P


def _candidate_perms(P, Q, n_samples, seed):
    N = P.shape[0]
    out = []
    _, cols = linear_sum_assignment(P, maximize=True)
    out.append(cols)
    # conditional marginals given one fixed assignment, read off rows of Qhat
    for j in range(N):
        w = P[0, j]
        if w > 1e-6 / N:
            cond = Q[j * N, :].reshape((N, N), order="F") / w
            _, cols = linear_sum_assignment(cond, maximize=True)
            out.append(cols)
    # Gaussian samples with the lift's first two moments
    p = vec(P)
    cov = Q - np.outer(p, p)
    lam, U = np.linalg.eigh(0.5 * (cov + cov.T))
    L = U * np.sqrt(np.clip(lam, 0.0, None))
    rng = np.random.Generator(np.random.Philox(key=seed))
    for _ in range(n_samples):
        s = p + L @ rng.standard_normal(p.size)
        _, cols = linear_sum_assignment(s.reshape((N, N), order="F"), maximize=True)
        out.append(cols)
    uniq = {tuple(int(v) for v in c): None for c in out}
    return [np.array(c, dtype=np.int64) for c in uniq]


def round_lift(G, P, Qhat, n_samples: int = 16, seed: int = 0) -> GwValue:
    """Best coupling found by rounding a relaxation solution.

    Candidates are permutations from assignment rounding of ``P``, of the
    conditional marginals stored in the rows of ``Qhat``, and of Gaussian
    samples with mean ``vec(P)`` and covariance ``Qhat - vec(P) vec(P)'``.
    Each is improved by pairwise swaps; the winner and the projected ``P``
    itself are then refined by projected gradient descent.
    """
    Gm = np.ascontiguousarray(np.asarray(G.entries if isinstance(G, LossTensor) else G, dtype=float))
    N = P.shape[0]
    best_val, best_perm = np.inf, None
    for perm in _candidate_perms(P, Qhat, n_samples, seed):
        perm, val = kernels.two_opt(Gm, perm, 50)
        if val < best_val:
            best_val, best_perm = val, perm
    cand = [local_gw(Gm, _perm_coupling(best_perm), step=1.0, iters=200)]
    try:
        cand.append(local_gw(Gm, project_to_couplings(P), step=1.0, iters=200))
    except Exception:  # projection failure only removes one candidate
        pass
    best = min(cand, key=lambda g: g.value)
    if best_val <= best.value:
        P_best = Coupling(_perm_coupling(best_perm))
        return GwValue(float(gw_objective(P_best, Gm)), P_best, "local")
    return best


# ---------------------------------------------------------------------------
# solve


def solve_gw_sdp(
    G,
    tol: float = DEFAULT_TOL,
    backend: str = "clarabel",
    ratio_tol: float = RATIO_TOL,
    rank_tol: float = RANK_TOL,
    nonneg_lift: bool = True,
    polish: bool = True,
) -> tuple[LiftedPair, GwValue, Certificate]:
    """Solve the relaxation, extract a coupling and certify it.

    After the conic solve the relaxation solution is rounded to a coupling
    (:func:`round_lift`).  If that coupling's GW objective is within
    ``10 * tol * (1 + |bound|)`` of the relaxation objective, its rank-one
    lift is itself an optimal relaxation solution up to solver accuracy and
    is returned in place of the raw solver point (``polish``).  Otherwise
    the raw pair is returned.  Either way the certificate ratio compares
    the extracted coupling with the bound.  The conic program is solved
    with ``G`` scaled to unit maximum entry and at tolerance
    ``SOLVER_TOL_FACTOR * tol``.  The bound is the smaller of the primal and
    dual objectives, raised to 0 when ``G`` and the lift are entrywise
    nonnegative, since 0 then bounds every feasible point.

    Returns
    -------
    pair : LiftedPair
    value : GwValue
        ``value.value`` is ``<G, Qhat>`` of the returned pair and
        ``value.coupling`` the extracted coupling.
    certificate : Certificate
    """
    Gm, N = _check_tensor(G)
    # unit-scale objective; large raw entries stall the interior-point solver
    scale = float(np.max(np.abs(Gm), initial=0.0)) or 1.0
    prog = build_gw_sdp(Gm / scale, nonneg_lift)
    # both objectives of an iterate at residual r can miss the optimum by
    # about r, so solve well below tol to keep the bound accurate to tol
    sol = solve_conic(prog, tol=SOLVER_TOL_FACTOR * tol, backend=backend)
    if sol.status == "unbounded" and not nonneg_lift:
        # without entrywise Qhat >= 0 a PSD direction in the kernel of the
        # marginal map can carry negative <G, .>, so the bound may be -inf
        raise NumericError("relaxation without lift nonnegativity is unbounded for this tensor",
                           {"status": sol.status})
    if sol.status in ("infeasible", "unbounded"):
        raise InternalSolverError(f"relaxation reported {sol.status}; it is feasible and bounded by construction")
    P_raw, Q_raw = unpack_lift(sol.x, N)
    bound = float(np.sum(Gm * Q_raw))
    if np.isfinite(sol.dual_objective):
        bound = min(bound, scale * sol.dual_objective)  # a primal iterate can overshoot the optimum
    if nonneg_lift and Gm.min() >= 0.0:
        bound = max(bound, 0.0)  # <G, Qhat> >= 0 on the whole feasible set
    raw_pair = LiftedPair(Coupling(P_raw), Q_raw)
    lam = np.linalg.eigvalsh(raw_pair.moment_matrix())[::-1]
    raw_gap = max(float(lam[1]), 0.0) / float(lam[0])
    rounded = round_lift(Gm, P_raw, Q_raw)
    U = rounded.value
    ratio = certified_ratio(U, bound, zero_tolerance(Gm, tol))
    if polish and U - bound <= 10.0 * tol * (1.0 + abs(bound)):
        pair = LiftedPair.rank_one(rounded.coupling)
        value = float(np.sum(Gm * pair.Qhat))
        lam = np.linalg.eigvalsh(pair.moment_matrix())[::-1]
        gap = max(float(lam[1]), 0.0) / float(lam[0])
        polished = True
    else:
        pair = raw_pair
        value = bound
        gap = raw_gap
        polished = False
    cert = Certificate(
        ratio=ratio,
        rank_gap=gap,
        is_global=bool(abs(ratio - 1.0) <= ratio_tol),
        is_rank_one=bool(gap <= rank_tol),
        sdp_bound=bound,
        coupling_value=U,
        raw_rank_gap=raw_gap,
        polished=polished,
        ratio_tol=ratio_tol,
        rank_tol=rank_tol,
    )
    return pair, GwValue(value, rounded.coupling, "sdp"), cert
