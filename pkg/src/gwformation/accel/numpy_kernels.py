"""Vectorized numpy implementations of the hot kernels.

Index convention shared with :mod:`numba_kernels`: a coupling ``P`` of shape
``(n, m)`` is flattened column-major, so entry ``P[i, j]`` sits at position
``i + j * n``.  Loss tensors are laid out on that flattening.
"""
import numpy as np


def pairwise_sq_dists(X):
    diff = X[:, None, :] - X[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(D, 0.0)
    return D


def loss_tensor(Cx, Cy):
    n, m = Cx.shape[0], Cy.shape[0]
    # G4[j, i, j', i'] so the C-order reshape matches i + j * n
    G4 = 0.5 * (Cx[None, :, None, :] - Cy[:, None, :, None]) ** 2
    return G4.reshape(n * m, n * m)


def lifted_value_grad(X, C, W, squared):
    """Value and gradient of sum_{a,b} W[a,b] * 0.5 * (S[i,i'] - C[j,j'])**2 in X."""
    n = X.shape[0]
    m = C.shape[0]
    diff = X[:, None, :] - X[None, :, :]
    S2 = np.einsum("ijk,ijk->ij", diff, diff)
    S = S2 if squared else np.sqrt(S2)
    W4 = W.reshape(m, n, m, n)
    mass = np.einsum("jikl->il", W4)
    CW = np.einsum("jk,jikl->il", C, W4)
    C2W = np.einsum("jk,jikl->il", C * C, W4)
    value = 0.5 * np.sum(S * S * mass) - np.sum(S * CW) + 0.5 * np.sum(C2W)
    H = S * mass - CW
    Hs = H + H.T
    if squared:
        coef = 2.0 * Hs
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(S > 0.0, Hs / np.where(S > 0.0, S, 1.0), 0.0)
    grad = np.einsum("ik,ikd->id", coef, diff)
    return value, grad


def dykstra_project(M, r, c, max_sweeps, tol):
    """Euclidean projection of ``M`` onto {P >= 0, P 1 = r, P^T 1 = c}.

    Returns ``(P, sweeps, change)`` where ``change`` is the last sweep's
    max-abs update.  Stops once both the update and the marginal residual
    are at most ``tol``.
    """
    n, m = M.shape
    X = M.astype(np.float64).copy()
    p = np.zeros_like(X)
    q = np.zeros_like(X)
    change = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        Y = _affine_project(X + p, r, c)
        p = X + p - Y
        Xn = np.maximum(Y + q, 0.0)
        q = Y + q - Xn
        change = np.max(np.abs(Xn - X))
        X = Xn
        # a small step alone is not enough: Dykstra can stall before the marginals hold
        if change <= tol and max(np.max(np.abs(X.sum(axis=1) - r)), np.max(np.abs(X.sum(axis=0) - c))) <= tol:
            break
    return X, sweeps, change


def _affine_project(X, r, c):
    n, m = X.shape
    R = r - X.sum(axis=1)
    Cc = c - X.sum(axis=0)
    delta = R.sum()
    # split the total-mass correction evenly between row and column shifts
    u = (R - 0.5 * delta / n) / m
    v = (Cc - 0.5 * delta / m) / n
    return X + u[:, None] + v[None, :]


def grid_scan_two(G, resolution):
    """Scan P(a) = [[a, 1/2 - a], [1/2 - a, a]] for a in [0, 1/2]."""
    a = np.linspace(0.0, 0.5, resolution)
    b = 0.5 - a
    # vec(P(a)) = [a, b, b, a]
    V = np.stack([a, b, b, a], axis=1)
    vals = np.einsum("ka,ab,kb->k", V, G, V)
    k = int(np.argmin(vals))
    return a[k], vals[k]


def perm_value(G, perm):
    n = perm.shape[0]
    idx = np.arange(n) + perm * n
    return G[np.ix_(idx, idx)].sum() / (n * n)


def two_opt(G, perm, max_passes):
    """First-improvement pairwise-swap search on scaled permutation couplings."""
    n = perm.shape[0]
    perm = perm.copy()
    cur = perm_value(G, perm)
    for _ in range(max_passes):
        improved = False
        for i in range(n - 1):
            for k in range(i + 1, n):
                perm[i], perm[k] = perm[k], perm[i]
                val = perm_value(G, perm)
                if val < cur - 1e-14 * max(1.0, abs(cur)):
                    cur = val
                    improved = True
                else:
                    perm[i], perm[k] = perm[k], perm[i]
        if not improved:
            break
    return perm, cur
