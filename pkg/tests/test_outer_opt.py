import numpy as np
import pytest

from gwformation.errors import CapabilityError
from gwformation.gw_problem import gw_objective, project_to_couplings
from gwformation.mmspace import MetricMatrix, build_loss_tensor, pairwise_cost
from gwformation.outer_opt import (
    OuterConfig,
    OuterContext,
    evaluate_J,
    fixed_coupling_gradient,
    minimize_J,
)
from gwformation.steering import Box, SteeringInstance, min_energy_oracle

from conftest import rigid_copy


def _ctx(system, N=3, eps=0.5, seed=0, cost="squared_euclidean", target=None):
    rng = np.random.default_rng(seed)
    x0 = np.column_stack([rng.uniform(-15, -12, N), rng.uniform(-2, 2, N)])
    if target is None:
        th = 2 * np.pi * np.arange(N) / N
        target = 3.0 * np.column_stack([np.cos(th), np.sin(th)])
    inst = SteeringInstance(system, 10, np.eye(2), eps, Box.cube(20.0, 2), Box.cube(20.0, 2),
                            Box.cube(20.0, 2), x0, np.zeros((N, 2)))
    return OuterContext.for_target(inst, target, cost), x0, target


def _fixed_value(X, P, target, cost):
    G = build_loss_tensor(pairwise_cost(X, cost), pairwise_cost(target, cost))
    return gw_objective(P, G)


def test_two_point_hand_gradient():
    # S = |x2 - x1|^2 = 5, target cost 3, P = I/2: F = (S - 3)^2 / 4
    X = np.array([[0.0, 0.0], [1.0, 2.0]])
    target = np.array([[0.0, 0.0], [np.sqrt(3.0), 0.0]])
    g = fixed_coupling_gradient(X, np.eye(2) / 2, target)
    np.testing.assert_allclose(g, [[-2.0, -4.0], [2.0, 4.0]], atol=1e-12)
    assert _fixed_value(X, np.eye(2) / 2, target, "squared_euclidean") == pytest.approx(1.0)


@pytest.mark.parametrize("cost", ["squared_euclidean", "euclidean"])
def test_gradient_matches_central_differences(cost):
    rng = np.random.default_rng(42)
    worst = 0.0
    probes = 0
    for _ in range(60):
        N = int(rng.integers(2, 6))
        X = rng.normal(size=(N, 2)) * 2
        Y = rng.normal(size=(N, 2)) * 2
        P = project_to_couplings(rng.random((N, N))).entries
        g = fixed_coupling_gradient(X, P, Y, cost)
        h = 1e-6
        fd = np.zeros_like(X)
        for i in range(N):
            for k in range(2):
                E = np.zeros_like(X)
                E[i, k] = h
                fd[i, k] = (_fixed_value(X + E, P, Y, cost) - _fixed_value(X - E, P, Y, cost)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
        probes += 1
    assert probes >= 50
    assert worst <= 1e-5


def test_metric_matrix_target():
    X = np.random.default_rng(0).normal(size=(3, 2))
    Y = np.random.default_rng(1).normal(size=(3, 2))
    P = np.full((3, 3), 1 / 9)
    a = fixed_coupling_gradient(X, P, Y)
    b = fixed_coupling_gradient(X, P, MetricMatrix(pairwise_cost(Y).entries, "squared_euclidean"))
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_unsupported_losses_raise():
    X = np.zeros((2, 2))
    with pytest.raises(CapabilityError):
        fixed_coupling_gradient(X, np.eye(2) / 2, X, loss_kind="kl")
    with pytest.raises(CapabilityError):
        fixed_coupling_gradient(X, np.eye(2) / 2, X, cost_kind="graph")


def test_coincident_points_have_finite_gradient():
    X = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 2.0]])
    Y = np.random.default_rng(3).normal(size=(3, 2))
    g = fixed_coupling_gradient(X, np.full((3, 3), 1 / 9), Y, "euclidean")
    assert np.all(np.isfinite(g))


def test_J_is_sum_of_parts(lin_system):
    ctx, x0, target = _ctx(lin_system)
    xd = np.random.default_rng(5).uniform(-3, 3, size=(3, 2))
    ev = evaluate_J(xd, ctx)
    rho = sum(min_energy_oracle(lin_system, 10, np.eye(2), a, b)[1] for a, b in zip(x0, xd))
    assert ev.rho == pytest.approx(rho, rel=1e-8)
    assert ev.J == pytest.approx(0.5 * ev.rho + ev.gw_value, rel=1e-12)
    assert not ev.projected


def test_out_of_box_destination_is_projected(lin_system):
    ctx, _, _ = _ctx(lin_system)
    ev = evaluate_J(np.array([[30.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), ctx)
    assert ev.projected and ev.xd[0, 0] == 20.0


@pytest.mark.parametrize("cost", ["squared_euclidean", "euclidean"])
def test_J_is_invariant_to_target_isometry(lin_system, cost):
    rng = np.random.default_rng(8)
    ctx, _, target = _ctx(lin_system, cost=cost)
    ctx2, _, _ = _ctx(lin_system, cost=cost, target=rigid_copy(target, rng))
    xd = rng.uniform(-3, 3, size=(3, 2))
    assert evaluate_J(xd, ctx).J == pytest.approx(evaluate_J(xd, ctx2).J, abs=1e-6)


@pytest.mark.parametrize("cost", ["squared_euclidean", "euclidean"])
@pytest.mark.parametrize("seed", range(2))
def test_descent_is_monotone(lin_system, cost, seed):
    ctx, x0, target = _ctx(lin_system, N=4, seed=seed, cost=cost)
    xd, hist, best = minimize_J(x0, target, OuterConfig(max_outer_iters=6), ctx)
    assert hist.is_monotone(1e-9)
    assert best.J <= hist.J[0] + 1e-12
    assert best.J == pytest.approx(hist.J.min())
    assert ctx.feasible_box.contains(xd)


def test_start_at_zero_cost_optimum(lin_system):
    # the free drift already has the target shape, so J = 0 there
    ctx, x0, _ = _ctx(lin_system)
    drift = ctx.free_drift()
    ctx, x0, _ = _ctx(lin_system, target=drift)
    xd, hist, best = minimize_J(x0, None, OuterConfig(), ctx)
    assert hist.J[0] <= 1e-8
    assert best.J <= 1e-8
    assert hist.status == "converged"
    np.testing.assert_allclose(xd, drift, atol=1e-8)


def test_large_eps_stays_near_free_drift(lin_system):
    ctx, x0, target = _ctx(lin_system, eps=1e4)
    xd, hist, best = minimize_J(x0, target, OuterConfig(max_outer_iters=5), ctx)
    assert np.max(np.abs(xd - ctx.free_drift())) <= 1e-2


def test_context_rejects_wrong_reference(lin_system):
    ctx, _, _ = _ctx(lin_system)
    from gwformation.errors import InputError
    with pytest.raises(InputError):
        OuterContext(ctx.steering, np.zeros((2, 2)))
