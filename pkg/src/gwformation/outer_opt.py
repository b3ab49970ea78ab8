"""Destination design: minimize ``J(xd) = eps * rho(x0, xd) + GW(xd, ref)``.

``rho`` is the total minimum-energy steering cost and the GW term is the
relaxation value between the cost matrix of ``xd`` and a fixed reference
cost matrix (a target cloud's, or a group graph metric).

Scheme
------
Block-coordinate descent.  At ``xd_k`` the relaxation is solved, giving a
lift ``Qhat_k``.  The relaxation's feasible set does not depend on ``xd``,
so

    F_k(x) = eps * rho(x) + <G(x), Qhat_k>

satisfies ``F_k >= J`` everywhere and ``F_k(xd_k) = J(xd_k)``.  Projected
gradient steps with backtracking on ``F_k`` then decrease ``J``; a fresh
relaxation solve at the new point is accepted only if it does not exceed
the carried-over lift, which keeps the recorded ``J`` non-increasing even
when the solver's answer is off by its tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .accel import kernels
from .errors import CapabilityError, GWFormationError, InfeasibleError, InputError
from .gw_problem import Coupling, as_coupling, gw_objective
from .mmspace import MetricMatrix, PointCloud, as_cloud, build_loss_tensor, pairwise_cost
from .sdp_relax import Certificate, LiftedPair, certified_ratio, certify, solve_gw_sdp, zero_tolerance
from .steering import (
    ACTIVE_SLACK,
    Box,
    SteeringInstance,
    Trajectory,
    min_energy_gradient,
    solve_agent,
    solve_steering,
)

COST_KINDS = ("squared_euclidean", "euclidean")


@dataclass(frozen=True)
class OuterConfig:
    """Settings of :func:`minimize_J`.

    ``inner_steps`` bounds the projected-gradient steps taken on each
    fixed-lift majorizer before the relaxation is solved again.
    """

    max_outer_iters: int = 20
    sdp_tol: float = 1e-5
    qp_tol: float = 1e-9
    step_rule: str = "backtracking"
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 40
    inner_steps: int = 200
    dJ_tol: float = 1e-6
    seed: int = 0
    backend: str = "clarabel"

    def __post_init__(self):
        if self.step_rule != "backtracking":
            raise InputError(f"unknown step rule {self.step_rule!r}")
        if not 0.0 < self.shrink < 1.0:
            raise InputError("shrink factor must lie in (0, 1)")
        for name in ("sdp_tol", "qp_tol", "initial_step", "sufficient_decrease", "dJ_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.max_outer_iters < 1 or self.inner_steps < 1 or self.max_backtracks < 1:
            raise InputError("iteration limits must be positive")


@dataclass(frozen=True)
class OuterContext:
    """Everything ``J`` depends on besides ``xd``.

    ``steering`` carries the system, horizon, weights, boxes, start cloud
    and ``eps``; its destination field is ignored.  ``C_ref`` is the
    reference cost matrix; ``cost_kind`` is how pairwise costs of ``xd`` are
    measured.
    """

    steering: SteeringInstance
    C_ref: np.ndarray
    cost_kind: str = "squared_euclidean"
    ratio_tol: float = 1e-3
    rank_tol: float = 1e-5
    nonneg_lift: bool = True

    def __post_init__(self):
        C = np.asarray(self.C_ref.entries if isinstance(self.C_ref, MetricMatrix) else self.C_ref, dtype=float)
        if C.shape != (self.steering.N, self.steering.N):
            raise InputError(f"reference cost matrix must be {self.steering.N}x{self.steering.N}, got {C.shape}")
        if self.cost_kind not in COST_KINDS:
            raise CapabilityError(f"unsupported cost kind {self.cost_kind!r}")
        C.setflags(write=False)
        object.__setattr__(self, "C_ref", C)

    @classmethod
    def for_target(cls, steering: SteeringInstance, x_target, cost_kind="squared_euclidean", **kw):
        return cls(steering, pairwise_cost(as_cloud(x_target), cost_kind).entries, cost_kind, **kw)

    @property
    def feasible_box(self) -> Box:
        """Destinations must lie in the terminal box and in the state box."""
        return Box(np.minimum(self.steering.terminal_box.half_widths, self.steering.state_box.half_widths))

    @property
    def eps(self) -> float:
        return self.steering.eps

    def loss_tensor(self, xd):
        return build_loss_tensor(pairwise_cost(as_cloud(xd), self.cost_kind), self.C_ref)

    def free_drift(self) -> np.ndarray:
        """Zero-control endpoints ``A^T x0`` projected onto the feasible box."""
        s = self.steering
        drift = s.x0.points @ s.system.transition(s.horizon).T
        return self.feasible_box.clamp(drift)


@dataclass(frozen=True)
class Evaluation:
    J: float
    rho: float
    gw_value: float
    certificate: Certificate
    pair: LiftedPair
    trajectory: Trajectory
    xd: np.ndarray
    projected: bool = False
    coupling: Coupling | None = None


@dataclass
class OuterHistory:
    """Per-outer-iteration records ``(xd, J, rho, gw_value, certificate)``."""

    iterates: list = field(default_factory=list)
    status: str = "max_iters"
    inner_steps: list = field(default_factory=list)

    @property
    def J(self) -> np.ndarray:
        return np.array([it[1] for it in self.iterates])

    def is_monotone(self, slack: float = 1e-9) -> bool:
        J = self.J
        return bool(np.all(np.diff(J) <= slack))


# ---------------------------------------------------------------------------
# objective pieces


def _check_cost(cost_kind):
    if cost_kind not in COST_KINDS:
        raise CapabilityError(f"fixed-coupling gradient supports {COST_KINDS}, not {cost_kind!r}")


def lifted_value_grad(xd, C_ref, W, cost_kind="squared_euclidean"):
    """Value and gradient of ``<G(xd), W>`` for a fixed lift ``W``."""
    _check_cost(cost_kind)
    X = np.ascontiguousarray(as_cloud(xd).points)
    C = np.ascontiguousarray(np.asarray(C_ref, dtype=float))
    W = np.ascontiguousarray(np.asarray(W, dtype=float))
    return kernels.lifted_value_grad(X, C, W, cost_kind == "squared_euclidean")


def fixed_coupling_gradient(xd, P, x_target, cost_kind: str = "squared_euclidean", loss_kind: str = "quadratic") -> np.ndarray:
    """Gradient in ``xd`` of ``vec(P)' G(xd, target) vec(P)`` at fixed ``P``.

    ``x_target`` is a point cloud, or a reference cost matrix given as a
    :class:`MetricMatrix`.  For the squared cost ``S = |x_i - x_i'|^2``

        grad_i = sum_i' 2 (H[i, i'] + H[i', i]) (x_i - x_i')
        H[i, i'] = sum_{j, j'} (S[i, i'] - C[j, j']) P[i, j] P[i', j']

    and for the plain distance the factor ``2`` becomes ``1 / S[i, i']``
    (zero for coincident points, where the term is not differentiable).

    Raises
    ------
    CapabilityError
        For losses other than the quadratic one or unsupported cost kinds.
    """
    if loss_kind != "quadratic":
        raise CapabilityError(f"only the quadratic loss has an analytic gradient, not {loss_kind!r}")
    _check_cost(cost_kind)
    if isinstance(x_target, MetricMatrix):
        C = x_target.entries
    else:
        C = pairwise_cost(as_cloud(x_target), cost_kind).entries
    p = as_coupling(P).vec()
    return lifted_value_grad(xd, C, np.outer(p, p), cost_kind)[1]


def steering_cost(ctx: OuterContext, xd, cfg: OuterConfig | None = None) -> Trajectory:
    cfg = cfg or OuterConfig()
    return solve_steering(ctx.steering.with_destination(xd), tol=cfg.qp_tol, backend=cfg.backend)


def steering_gradient(ctx: OuterContext, xd, traj: Trajectory, cfg: OuterConfig | None = None, h: float = 1e-5) -> np.ndarray:
    """Gradient of ``rho`` in ``xd``.

    Agents with every inequality slack above ``1e-6`` use the Gramian form
    ``2 W^-1 (xd - A^T x0)``; the rest use central differences of their own
    steering cost (one-sided at the state-box boundary).
    """
    cfg = cfg or OuterConfig()
    s = ctx.steering
    X = np.asarray(xd, dtype=float)
    grad = np.zeros_like(X)
    hw = s.state_box.half_widths
    for i in range(s.N):
        if traj.min_slacks[i] > ACTIVE_SLACK:
            grad[i] = min_energy_gradient(s.system, s.horizon, s.R, s.x0.points[i], X[i])
            continue

        def cost(z):
            return solve_agent(s.system, s.horizon, s.R, s.x0.points[i], z, s.state_box, s.control_box,
                               tol=cfg.qp_tol, backend=cfg.backend, agent=i).cost

        base = traj.agent_costs[i]
        for k in range(X.shape[1]):
            step = h * max(1.0, abs(X[i, k]))
            up, dn = X[i].copy(), X[i].copy()
            up[k] += step
            dn[k] -= step
            can_up, can_dn = up[k] <= hw[k], dn[k] >= -hw[k]
            if can_up and can_dn:
                grad[i, k] = (cost(up) - cost(dn)) / (2 * step)
            elif can_up:
                grad[i, k] = (cost(up) - base) / step
            else:
                grad[i, k] = (base - cost(dn)) / step
    return grad


def evaluate_J(xd, ctx: OuterContext, cfg: OuterConfig | None = None) -> Evaluation:
    """``J``, ``rho`` and the certified GW value at one destination.

    A destination outside the feasible box is clamped onto it first and the
    result is flagged ``projected``.

    Raises
    ------
    InfeasibleError
        If some agent cannot reach its destination; ``.agent`` names it.
    """
    cfg = cfg or OuterConfig()
    X = as_cloud(xd).points
    Xc = ctx.feasible_box.clamp(X)
    projected = not np.array_equal(Xc, X)
    traj = steering_cost(ctx, Xc, cfg)
    G = ctx.loss_tensor(Xc)
    pair, gw, cert = solve_gw_sdp(G, tol=cfg.sdp_tol, backend=cfg.backend, ratio_tol=ctx.ratio_tol,
                                  rank_tol=ctx.rank_tol, nonneg_lift=ctx.nonneg_lift)
    return Evaluation(ctx.eps * traj.control_cost + gw.value, traj.control_cost, gw.value, cert, pair, traj, Xc,
                      projected, gw.coupling)


# ---------------------------------------------------------------------------
# descent


def _majorizer(ctx, cfg, W, X):
    """``(F, rho, gw, traj)`` of the fixed-lift majorizer; ``inf`` if unreachable."""
    try:
        traj = steering_cost(ctx, X, cfg)
    except InfeasibleError:
        return np.inf, np.inf, np.inf, None
    gw, _ = lifted_value_grad(X, ctx.C_ref, W, ctx.cost_kind)
    return ctx.eps * traj.control_cost + gw, traj.control_cost, gw, traj


def _inner_descent(ctx, cfg, W, X, F, traj):
    """Projected backtracking gradient descent on one majorizer.

    Returns ``(X, F, steps, stalled)``; ``stalled`` is true when the first
    step already failed a full backtrack without the iterate being stationary.
    """
    box = ctx.feasible_box
    t_prev = None
    s_prev = g_prev = None
    steps = 0
    stalled = False
    for _ in range(cfg.inner_steps):
        g = ctx.eps * steering_gradient(ctx, X, traj, cfg) + lifted_value_grad(X, ctx.C_ref, W, ctx.cost_kind)[1]
        # gradient mapping at unit step tells stationarity on the box
        if np.max(np.abs(box.clamp(X - g) - X)) <= 1e-12 * max(1.0, np.abs(X).max()):
            break
        t = cfg.initial_step if t_prev is None else t_prev
        if s_prev is not None:
            yv = (g - g_prev).ravel()
            sy = float(s_prev.ravel() @ yv)
            if sy > 0:
                t = float(s_prev.ravel() @ s_prev.ravel()) / sy  # Barzilai-Borwein
        accepted = False
        for _ in range(cfg.max_backtracks):
            Xn = box.clamp(X - t * g)
            d = Xn - X
            Fn, _, _, tn = _majorizer(ctx, cfg, W, Xn)
            if Fn <= F - cfg.sufficient_decrease / t * float(np.sum(d * d)):
                accepted = True
                break
            t *= cfg.shrink
        if not accepted:
            stalled = steps == 0
            break
        s_prev, g_prev = d, g
        t_prev = t
        dec = F - Fn
        X, F, traj = Xn, Fn, tn
        steps += 1
        if dec < 0.1 * cfg.dJ_tol:
            break
    return X, F, steps, stalled


def _carry(ctx, cfg, old, new, F, carried):
    """Evaluation at ``new.xd`` that keeps the previous lift.

    The certificate still measures against the fresh relaxation bound, and
    the extracted coupling is the better of the old and the new one.
    """
    G = ctx.loss_tensor(new.xd)
    own = certify(old.pair, G, ctx.ratio_tol, ctx.rank_tol)
    P = min((old.coupling, new.coupling), key=lambda c: gw_objective(c, G))
    U = gw_objective(P, G)
    ratio = certified_ratio(U, new.certificate.sdp_bound, zero_tolerance(G, cfg.sdp_tol))
    cert = replace(
        new.certificate,
        ratio=ratio,
        rank_gap=own.rank_gap,
        is_global=bool(abs(ratio - 1.0) <= ctx.ratio_tol),
        is_rank_one=own.is_rank_one,
        coupling_value=U,
        polished=old.certificate.polished,
    )
    return Evaluation(F, new.rho, carried, cert, old.pair, new.trajectory, new.xd, new.projected, P)


def minimize_J(x0, x_target, cfg: OuterConfig | None = None, ctx: OuterContext | None = None, xd_init=None):
    """Block-coordinate descent on ``J`` over the feasible destination box.

    Parameters
    ----------
    x0 : PointCloud or array_like
        Start cloud; must match ``ctx.steering.x0`` when ``ctx`` is given.
    x_target : PointCloud, array_like or None
        Target cloud.  Ignored when ``ctx`` is given (its reference cost
        matrix is used).
    cfg : OuterConfig
    ctx : OuterContext
    xd_init : array_like, optional
        Starting destination, default the projected free-drift endpoints.

    Returns
    -------
    xd : ndarray
        Best destination found.
    history : OuterHistory
    best : Evaluation
        Full evaluation at ``xd``.
    """
    cfg = cfg or OuterConfig()
    if ctx is None:
        raise InputError("minimize_J needs a scenario context")
    if x0 is not None and not np.array_equal(as_cloud(x0).points, ctx.steering.x0.points):
        raise InputError("x0 does not match the context's start cloud")
    X = ctx.free_drift() if xd_init is None else ctx.feasible_box.clamp(np.asarray(xd_init, dtype=float))
    ev = evaluate_J(X, ctx, cfg)
    hist = OuterHistory()
    hist.iterates.append((ev.xd, ev.J, ev.rho, ev.gw_value, ev.certificate))
    best = ev
    for _ in range(cfg.max_outer_iters):
        W = ev.pair.Qhat
        F0 = ev.J
        Xn, Fn, steps, stalled = _inner_descent(ctx, cfg, W, ev.xd, F0, ev.trajectory)
        hist.inner_steps.append(steps)
        if steps == 0:
            hist.status = "max_iters" if stalled else "converged"
            break
        try:
            new = evaluate_J(Xn, ctx, cfg)
        except GWFormationError:
            hist.status = "max_iters"
            break
        carried = Fn - ctx.eps * new.rho
        if carried < new.gw_value:
            # the previous lift is feasible at Xn and scores better
            new = _carry(ctx, cfg, ev, new, Fn, carried)
        hist.iterates.append((new.xd, new.J, new.rho, new.gw_value, new.certificate))
        dJ = ev.J - new.J
        ev = new
        if new.J <= best.J:
            best = new
        if abs(dJ) < cfg.dJ_tol:
            hist.status = "converged"
            break
    return best.xd, hist, best
