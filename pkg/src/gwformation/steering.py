"""Constrained minimum-energy steering of independent agents.

Every agent follows ``x_{t+1} = A x_t + B u_t`` from its start ``x0`` to its
destination ``xd`` in ``T`` steps, minimizing ``sum_t u_t' R u_t`` subject
to axis-aligned boxes on intermediate states and on controls.  States are a
linear function of the stacked controls ``u = [u_0; ...; u_{T-1}]``, so each
agent is a small strictly convex QP in ``u``.  Agents are decoupled and
solved one at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic_backend import Cone, ConicProgram, solve_conic
from .errors import InfeasibleError, InputError, NumericError, RankDeficiencyError
from .mmspace import PointCloud, as_cloud

ACTIVE_SLACK = 1e-6


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise InputError(f"B must have {A.shape[0]} rows, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InputError("system matrices have non-finite entries")
        for a in (A, B):
            a.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def transition(self, t: int) -> np.ndarray:
        return np.linalg.matrix_power(self.A, int(t))

    def reach_map(self, T: int) -> np.ndarray:
        """``Phi = [A^(T-1) B, ..., A B, B]`` so that ``x_T = A^T x0 + Phi u``."""
        return np.hstack([self.transition(T - 1 - s) @ self.B for s in range(T)]) if T > 0 else np.zeros((self.d, 0))

    def state_maps(self, T: int):
        """``(F, M)`` with ``x_t = F[t] @ x0 + M[t] @ u`` for ``t = 0..T``."""
        d, m = self.d, self.m
        F = np.empty((T + 1, d, d))
        M = np.zeros((T + 1, d, T * m))
        F[0] = np.eye(d)
        for t in range(T):
            F[t + 1] = self.A @ F[t]
            M[t + 1] = self.A @ M[t]
            M[t + 1][:, t * m : (t + 1) * m] = self.B
        return F, M

    def simulate(self, x0, u) -> np.ndarray:
        """Rollout of a ``(T, m)`` control sequence; returns ``(T+1, d)`` states."""
        u = np.asarray(u, dtype=float).reshape(-1, self.m)
        x = np.empty((u.shape[0] + 1, self.d))
        x[0] = x0
        for t in range(u.shape[0]):
            x[t + 1] = self.A @ x[t] + self.B @ u[t]
        return x


@dataclass(frozen=True)
class Box:
    """Axis-aligned box centred at the origin, ``|x_k| <= half_widths[k]``."""

    half_widths: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.half_widths, dtype=float))
        if h.ndim != 1 or not np.all(np.isfinite(h)) or np.any(h <= 0):
            raise InputError("box half-widths must be finite and strictly positive")
        h.setflags(write=False)
        object.__setattr__(self, "half_widths", h)

    @classmethod
    def cube(cls, radius: float, dim: int) -> "Box":
        return cls(np.full(dim, float(radius)))

    @property
    def dim(self) -> int:
        return self.half_widths.size

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(np.asarray(x)) <= self.half_widths + tol))

    def violation(self, x) -> float:
        return float(np.max(np.abs(np.asarray(x)) - self.half_widths, initial=-np.inf))

    def clamp(self, x) -> np.ndarray:
        return np.clip(x, -self.half_widths, self.half_widths)


def _as_box(b, dim) -> Box:
    if isinstance(b, Box):
        box = b
    elif np.ndim(b) == 0:
        box = Box.cube(float(b), dim)
    else:
        box = Box(b)
    if box.dim != dim:
        raise InputError(f"box of dimension {box.dim} does not match {dim}")
    return box


@dataclass(frozen=True)
class SteeringInstance:
    system: LinearSystem
    horizon: int
    R: np.ndarray
    eps: float
    state_box: Box
    control_box: Box
    terminal_box: Box
    x0: PointCloud
    xd: PointCloud

    def __post_init__(self):
        sys_ = self.system
        if int(self.horizon) < 1:
            raise InputError("horizon must be a positive integer")
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (sys_.m, sys_.m):
            raise InputError(f"R must be {sys_.m}x{sys_.m}, got {R.shape}")
        if not np.allclose(R, R.T, rtol=0, atol=1e-12 * max(1.0, np.abs(R).max())):
            raise InputError("R must be symmetric")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise InputError("R must be positive definite")
        if not float(self.eps) > 0:
            raise InputError("eps must be positive")
        x0, xd = as_cloud(self.x0), as_cloud(self.xd)
        if x0.points.shape != xd.points.shape:
            raise InputError(f"x0 and xd shapes differ: {x0.points.shape} vs {xd.points.shape}")
        if x0.d != sys_.d:
            raise InputError(f"clouds are {x0.d}-dimensional, the system has state dimension {sys_.d}")
        R.setflags(write=False)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "state_box", _as_box(self.state_box, sys_.d))
        object.__setattr__(self, "control_box", _as_box(self.control_box, sys_.m))
        object.__setattr__(self, "terminal_box", _as_box(self.terminal_box, sys_.d))
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xd", xd)

    @property
    def N(self) -> int:
        return self.x0.N

    def with_destination(self, xd) -> "SteeringInstance":
        return SteeringInstance(
            self.system, self.horizon, self.R, self.eps, self.state_box,
            self.control_box, self.terminal_box, self.x0, xd,
        )


@dataclass(frozen=True)
class AgentSolution:
    controls: np.ndarray  # (T, m)
    cost: float
    min_slack: float  # smallest inequality slack (inf without inequalities)
    method: str  # "closed_form", "conic" or "polished"


@dataclass(frozen=True)
class Trajectory:
    """Per-agent states ``(N, T+1, d)`` and controls ``(N, T, m)``."""

    states: np.ndarray
    controls: np.ndarray
    control_cost: float
    weighted_cost: float
    agent_costs: np.ndarray = field(default=None)
    min_slacks: np.ndarray = field(default=None)
    methods: tuple = ()

    @property
    def active(self) -> np.ndarray:
        return self.min_slacks <= ACTIVE_SLACK


# ---------------------------------------------------------------------------
# closed form


def _gramian(system: LinearSystem, T: int, R):
    Phi = system.reach_map(T)
    Rinv = np.linalg.inv(np.atleast_2d(R))
    Rbig = np.kron(np.eye(T), Rinv)
    W = Phi @ Rbig @ Phi.T
    s = np.linalg.svd(W, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise RankDeficiencyError(f"finite-horizon Gramian is singular (condition {s[0] / max(s[-1], 1e-300):.3e})")
    return Phi, Rbig, W


def min_energy_oracle(system: LinearSystem, T: int, R, x0, xd) -> tuple[np.ndarray, float]:
    """Unconstrained minimum-energy controls from the finite-horizon Gramian.

    ``u* = R^-1 Phi' W^-1 (xd - A^T x0)`` with ``W = Phi R^-1 Phi'``; the
    cost is ``(xd - A^T x0)' W^-1 (xd - A^T x0)``.

    Returns
    -------
    controls : ndarray of shape (T, m)
    cost : float

    Raises
    ------
    RankDeficiencyError
        If ``W`` is singular.
    """
    T = int(T)
    Phi, Rbig, W = _gramian(system, T, R)
    delta = np.asarray(xd, dtype=float) - system.transition(T) @ np.asarray(x0, dtype=float)
    w = np.linalg.solve(W, delta)
    u = Rbig @ Phi.T @ w
    return u.reshape(T, system.m), float(delta @ w)


def min_energy_gradient(system: LinearSystem, T: int, R, x0, xd) -> np.ndarray:
    """Gradient ``2 W^-1 (xd - A^T x0)`` of the unconstrained cost in ``xd``."""
    _, _, W = _gramian(system, int(T), R)
    delta = np.asarray(xd, dtype=float) - system.transition(int(T)) @ np.asarray(x0, dtype=float)
    return 2.0 * np.linalg.solve(W, delta)


# ---------------------------------------------------------------------------
# per-agent QP


def _agent_rows(system, T, x0, state_box, control_box):
    """Inequalities ``Gi u <= hi`` for intermediate states and controls."""
    F, M = system.state_maps(T)
    rows, rhs = [], []
    h = state_box.half_widths
    for t in range(1, T):
        a = F[t] @ x0
        rows += [M[t], -M[t]]
        rhs += [h - a, h + a]
    n = T * system.m
    hu = np.tile(control_box.half_widths, T)
    rows += [np.eye(n), -np.eye(n)]
    rhs += [hu, hu]
    return np.vstack(rows), np.concatenate(rhs)


def _agent_cost(u, R):
    u = u.reshape(-1, R.shape[0])
    return float(np.einsum("ti,ij,tj->", u, R, u))


def _polish(Rbig, Phi, delta, Gi, hi, u0, scale):
    """Re-solve on the active set of ``u0`` for machine-precision optimality."""
    slack = hi - Gi @ u0
    act = np.flatnonzero(slack <= 1e-7 * scale)
    E = np.vstack([Phi, Gi[act]])
    e = np.concatenate([delta, hi[act]])
    n = Rbig.shape[0]
    K = np.block([[2.0 * Rbig, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
    rhs = np.concatenate([np.zeros(n), e])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    u, mu = sol[:n], sol[n:]
    tol = 1e-10 * scale
    ok = (
        np.all(hi - Gi @ u >= -tol)
        and np.max(np.abs(Phi @ u - delta), initial=0.0) <= tol
        and np.all(mu[Phi.shape[0] :] >= -1e-8 * max(1.0, np.abs(mu).max()))
        and np.max(np.abs(K @ sol - rhs)) <= tol
    )
    return u if ok else None


def solve_agent(
    system: LinearSystem,
    T: int,
    R,
    x0,
    xd,
    state_box: Box,
    control_box: Box,
    tol: float = 1e-9,
    backend: str = "clarabel",
    method: str = "auto",
    agent: int | None = None,
) -> AgentSolution:
    """Minimum-energy controls for one agent under the boxes.

    ``method="auto"`` returns the Gramian closed form when it satisfies
    every box with slack above zero (it is then the constrained optimum as
    well) and falls back to the conic QP otherwise; ``method="conic"``
    always solves the QP.  The QP solution is refined on its active set
    when the refined point verifies feasibility and multiplier signs.

    Raises
    ------
    InfeasibleError
        If the endpoints lie outside the state box or the QP is infeasible.
    """
    T = int(T)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    xd = np.asarray(xd, dtype=float)
    if not state_box.contains(x0, 1e-12):
        raise InfeasibleError(f"agent {agent}: start {x0} lies outside the state box", agent)
    if not state_box.contains(xd, 1e-12):
        raise InfeasibleError(f"agent {agent}: destination {xd} lies outside the state box", agent)
    Gi, hi = _agent_rows(system, T, x0, state_box, control_box)
    scale = max(1.0, float(np.max(np.abs(hi))))
    if method == "auto":
        try:
            u, _ = min_energy_oracle(system, T, R, x0, xd)
            slack = float(np.min(hi - Gi @ u.ravel()))
            if slack > 0:
                return AgentSolution(u, _agent_cost(u, R), slack, "closed_form")
        except RankDeficiencyError:
            pass
    elif method != "conic":
        raise InputError(f"unknown steering method {method!r}")
    Phi = system.reach_map(T)
    delta = xd - system.transition(T) @ x0
    Rbig = np.kron(np.eye(T), R)
    n = Rbig.shape[0]
    prog = ConicProgram(
        np.zeros(n),
        sp.vstack([sp.csc_matrix(Phi), sp.csc_matrix(Gi)]).tocsc(),
        np.concatenate([delta, hi]),
        (Cone("zero", Phi.shape[0]), Cone("nonneg", Gi.shape[0])),
        P=sp.csc_matrix(2.0 * Rbig),
    )
    sol = solve_conic(prog, tol=tol, backend=backend)
    if sol.status == "infeasible":
        raise InfeasibleError(f"agent {agent}: destination {xd} is not reachable in {T} steps under the boxes", agent)
    if sol.status not in ("optimal", "numerical", "max_iter"):
        raise NumericError(f"agent {agent}: steering QP ended with status {sol.status}", sol.residuals)
    u = sol.x
    how = "conic"
    pol = _polish(Rbig, Phi, delta, Gi, hi, u, scale)
    if pol is not None:
        u, how = pol, "polished"
    elif sol.status != "optimal":
        raise NumericError(f"agent {agent}: steering QP did not reach tolerance ({sol.status})", sol.residuals)
    slack = float(np.min(hi - Gi @ u))
    return AgentSolution(u.reshape(T, system.m), _agent_cost(u, R), slack, how)


def solve_steering(inst: SteeringInstance, tol: float = 1e-9, backend: str = "clarabel", method: str = "auto") -> Trajectory:
    """Steer every agent of ``inst`` from ``x0`` to ``xd``.

    The endpoint ``x_T = xd`` is an equality of each QP; membership of
    ``xd`` in the terminal box is the caller's responsibility.

    Raises
    ------
    InfeasibleError
        With ``.agent`` set to the first agent that cannot be steered.
    """
    sys_, T = inst.system, inst.horizon
    sols = [
        solve_agent(sys_, T, inst.R, inst.x0.points[i], inst.xd.points[i], inst.state_box,
                    inst.control_box, tol=tol, backend=backend, method=method, agent=i)
        for i in range(inst.N)
    ]
    controls = np.stack([s.controls for s in sols])
    states = np.stack([sys_.simulate(inst.x0.points[i], controls[i]) for i in range(inst.N)])
    costs = np.array([s.cost for s in sols])
    rho = float(costs.sum())
    return Trajectory(
        states=states,
        controls=controls,
        control_cost=rho,
        weighted_cost=inst.eps * rho,
        agent_costs=costs,
        min_slacks=np.array([s.min_slack for s in sols]),
        methods=tuple(s.method for s in sols),
    )


def trajectory_report(traj: Trajectory, inst: SteeringInstance) -> dict:
    """Worst-case residuals of the trajectory invariants."""
    A, B = inst.system.A, inst.system.B
    X, U = traj.states, traj.controls
    dyn = X[:, 1:] - (np.einsum("ij,ntj->nti", A, X[:, :-1]) + np.einsum("ij,ntj->nti", B, U))
    return {
        "dynamics": float(np.max(np.abs(dyn), initial=0.0)),
        "start": float(np.max(np.abs(X[:, 0] - inst.x0.points))),
        "endpoint": float(np.max(np.abs(X[:, -1] - inst.xd.points))),
        "state_box": inst.state_box.violation(X),
        "control_box": inst.control_box.violation(U),
        "terminal_box": inst.terminal_box.violation(X[:, -1]),
    }
