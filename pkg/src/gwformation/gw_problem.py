"""The nonconvex GW problem over uniform couplings, plus small exact oracles."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .accel import kernels
from .errors import CapabilityError, InputError, NumericError
from .mmspace import LossTensor, vec

TOL_FEAS = 1e-8
GW_METHODS = ("sdp", "oracle_grid", "oracle_permutation", "local")


@dataclass(frozen=True)
class Coupling:
    """Transport plan with prescribed marginals (uniform by default).

    Construction does not enforce feasibility; see :func:`validate_coupling`.
    """

    entries: np.ndarray
    row_marginal: np.ndarray | None = None
    col_marginal: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.entries, dtype=float)
        if P.ndim != 2:
            raise InputError(f"coupling must be a matrix, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise InputError("coupling has non-finite entries")
        n, m = P.shape
        r = np.full(n, 1.0 / n) if self.row_marginal is None else np.array(self.row_marginal, dtype=float)
        c = np.full(m, 1.0 / m) if self.col_marginal is None else np.array(self.col_marginal, dtype=float)
        if r.shape != (n,) or c.shape != (m,):
            raise InputError("marginal lengths do not match the coupling shape")
        for a in (P, r, c):
            a.setflags(write=False)
        object.__setattr__(self, "entries", P)
        object.__setattr__(self, "row_marginal", r)
        object.__setattr__(self, "col_marginal", c)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def N(self) -> int:
        return self.entries.shape[0]

    def vec(self) -> np.ndarray:
        return vec(self.entries)


def as_coupling(P) -> Coupling:
    return P if isinstance(P, Coupling) else Coupling(P)


@dataclass(frozen=True)
class GwValue:
    """Objective value with the coupling that attains it.

    For ``method="sdp"`` the value is the relaxation objective
    ``<G, Qhat>`` of the returned lift and ``coupling`` is the extracted
    coupling; both coincide with ``gw_objective(coupling, G)`` whenever the
    lift is rank one.
    """

    value: float
    coupling: Coupling
    method: str
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.method not in GW_METHODS:
            raise InputError(f"unknown GW method {self.method!r}")


def _tensor(G) -> np.ndarray:
    return G.entries if isinstance(G, LossTensor) else np.asarray(G, dtype=float)


def gw_objective(P, G) -> float:
    """``vec(P)' G vec(P)`` with the column-major ``vec``."""
    P = as_coupling(P)
    Gm = _tensor(G)
    p = P.vec()
    if Gm.shape != (p.size, p.size):
        raise InputError(f"loss tensor of shape {Gm.shape} does not match a {P.shape} coupling")
    return float(p @ Gm @ p)


@dataclass(frozen=True)
class CouplingReport:
    max_marginal_violation: float
    min_entry: float
    total_mass: float
    passed: bool
    tol: float = TOL_FEAS


def validate_coupling(P, tol: float = TOL_FEAS) -> CouplingReport:
    """Check nonnegativity, marginals and total mass of a coupling."""
    P = as_coupling(P)
    E = P.entries
    viol = max(
        float(np.max(np.abs(E.sum(axis=1) - P.row_marginal))),
        float(np.max(np.abs(E.sum(axis=0) - P.col_marginal))),
    )
    mn = float(E.min())
    mass = float(E.sum())
    target = float(P.row_marginal.sum())
    ok = viol <= tol and mn >= -tol and abs(mass - target) <= tol
    return CouplingReport(viol, mn, mass, ok, tol)


def project_to_couplings(M, max_sweeps: int = 10_000, tol: float = 1e-13, row_marginal=None, col_marginal=None) -> Coupling:
    """Euclidean projection onto the coupling polytope.

    Dykstra's alternating projections between the affine marginal
    constraints and the nonnegative orthant.  The correction terms make the
    limit the nearest coupling in Frobenius norm, not just some coupling.

    Raises
    ------
    NumericError
        If the iterates have not settled after ``max_sweeps`` sweeps.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise InputError("projection input must be a finite matrix")
    n, m = M.shape
    r = np.full(n, 1.0 / n) if row_marginal is None else np.asarray(row_marginal, dtype=float)
    c = np.full(m, 1.0 / m) if col_marginal is None else np.asarray(col_marginal, dtype=float)
    P, sweeps, change = kernels.dykstra_project(np.ascontiguousarray(M), r, c, int(max_sweeps), float(tol))
    out = Coupling(P, r, c)
    rep = validate_coupling(out)
    if not rep.passed:
        raise NumericError(
            f"coupling projection did not converge in {sweeps} sweeps (last change {change:.3e})",
            {"sweeps": sweeps, "change": change, "marginal_violation": rep.max_marginal_violation},
        )
    return out


def oracle_gw(G, N: int, mode: str = "permutation", resolution: int = 100_001) -> GwValue:
    """Exhaustive small-instance oracles for the GW problem.

    ``mode="permutation"`` enumerates all ``N!`` scaled permutation couplings
    (``N <= 4``) and returns the best, an upper bound on the GW value.
    ``mode="grid"`` scans the whole ``N = 2`` coupling segment
    ``[[a, 1/2 - a], [1/2 - a, a]]`` at ``resolution`` points.
    """
    Gm = np.ascontiguousarray(_tensor(G))
    if Gm.shape != (N * N, N * N):
        raise InputError(f"loss tensor of shape {Gm.shape} does not match N={N}")
    if mode == "permutation":
        if N > 4:
            raise CapabilityError(f"permutation oracle is limited to N <= 4, got {N}")
        best, best_perm = np.inf, None
        for perm in itertools.permutations(range(N)):
            perm = np.array(perm, dtype=np.int64)
            val = kernels.perm_value(Gm, perm)
            if val < best:
                best, best_perm = val, perm
        P = np.zeros((N, N))
        P[np.arange(N), best_perm] = 1.0 / N
        return GwValue(float(best), Coupling(P), "oracle_permutation")
    if mode == "grid":
        if N != 2:
            raise CapabilityError(f"grid oracle needs N = 2, got {N}")
        if resolution < 2:
            raise InputError("grid resolution must be at least 2")
        a, val = kernels.grid_scan_two(Gm, int(resolution))
        P = np.array([[a, 0.5 - a], [0.5 - a, a]])
        return GwValue(float(val), Coupling(P), "oracle_grid")
    raise InputError(f"unknown oracle mode {mode!r}")


def gw_gradient(P, G) -> np.ndarray:
    """Gradient of ``vec(P)' G vec(P)`` reshaped as a matrix (G symmetric)."""
    P = as_coupling(P)
    g = 2.0 * (_tensor(G) @ P.vec())
    return g.reshape(P.shape, order="F")


def local_gw(G, P0, step: float = 1.0, iters: int = 500, tol: float = 1e-12) -> GwValue:
    """Projected-gradient descent from a feasible coupling.

    Each iteration tries ``P - t * grad`` projected back onto the couplings,
    starting from ``t = step`` and halving until the objective does not
    increase.  The recorded objective sequence is non-increasing; iteration
    stops when no trial step moves the iterate by more than ``tol``.
    """
    P = as_coupling(P0)
    if not validate_coupling(P).passed:
        raise InputError("local_gw needs a feasible starting coupling")
    Gm = _tensor(G)
    cur = gw_objective(P, Gm)
    hist = [cur]
    X = P.entries.copy()
    for _ in range(int(iters)):
        grad = gw_gradient(X, Gm)
        if not np.any(grad):
            break
        t = float(step)
        moved = False
        while t > 1e-14:
            Y = project_to_couplings(X - t * grad).entries
            if np.max(np.abs(Y - X)) <= tol:
                break
            val = gw_objective(Y, Gm)
            if val <= cur:
                X, cur, moved = Y, val, True
                break
            t *= 0.5
        if not moved:
            break
        hist.append(cur)
        if hist[-2] - cur <= tol * max(1.0, abs(cur)):
            break
    return GwValue(float(cur), Coupling(X), "local", tuple(hist))
