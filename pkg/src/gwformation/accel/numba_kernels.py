"""Loop kernels compiled with numba; same contracts as :mod:`numpy_kernels`."""
import numpy as np
from numba import njit


@njit(cache=True)
def pairwise_sq_dists(X):
    n, d = X.shape
    D = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1, n):
            s = 0.0
            for t in range(d):
                e = X[i, t] - X[k, t]
                s += e * e
            D[i, k] = s
            D[k, i] = s
    return D


@njit(cache=True)
def loss_tensor(Cx, Cy):
    n = Cx.shape[0]
    m = Cy.shape[0]
    G = np.empty((n * m, n * m))
    for j in range(m):
        for i in range(n):
            a = i + j * n
            for jp in range(m):
                cy = Cy[j, jp]
                for ip in range(n):
                    e = Cx[i, ip] - cy
                    G[a, ip + jp * n] = 0.5 * e * e
    return G


@njit(cache=True)
def lifted_value_grad(X, C, W, squared):
    n, d = X.shape
    m = C.shape[0]
    S = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1, n):
            s = 0.0
            for t in range(d):
                e = X[i, t] - X[k, t]
                s += e * e
            if not squared:
                s = np.sqrt(s)
            S[i, k] = s
            S[k, i] = s
    H = np.zeros((n, n))
    value = 0.0
    for j in range(m):
        for i in range(n):
            a = i + j * n
            for jp in range(m):
                c = C[j, jp]
                for ip in range(n):
                    w = W[a, ip + jp * n]
                    if w != 0.0:
                        e = S[i, ip] - c
                        H[i, ip] += e * w
                        value += 0.5 * e * e * w
    grad = np.zeros((n, d))
    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            h = H[i, k] + H[k, i]
            if squared:
                coef = 2.0 * h
            elif S[i, k] > 0.0:
                coef = h / S[i, k]
            else:
                coef = 0.0
            for t in range(d):
                grad[i, t] += coef * (X[i, t] - X[k, t])
    return value, grad


@njit(cache=True)
def _affine_project(X, r, c):
    n, m = X.shape
    R = r.copy()
    Cc = c.copy()
    for i in range(n):
        for j in range(m):
            R[i] -= X[i, j]
            Cc[j] -= X[i, j]
    delta = 0.0
    for i in range(n):
        delta += R[i]
    Y = np.empty_like(X)
    for i in range(n):
        u = (R[i] - 0.5 * delta / n) / m
        for j in range(m):
            v = (Cc[j] - 0.5 * delta / m) / n
            Y[i, j] = X[i, j] + u + v
    return Y


@njit(cache=True)
def dykstra_project(M, r, c, max_sweeps, tol):
    n, m = M.shape
    # stops when both the update and the marginal residual are at most tol
    X = M.astype(np.float64).copy()
    p = np.zeros((n, m))
    q = np.zeros((n, m))
    change = np.inf
    sweeps = 0
    for it in range(1, max_sweeps + 1):
        sweeps = it
        Y = _affine_project(X + p, r, c)
        change = 0.0
        for i in range(n):
            for j in range(m):
                p[i, j] = X[i, j] + p[i, j] - Y[i, j]
                z = Y[i, j] + q[i, j]
                xn = z if z > 0.0 else 0.0
                q[i, j] = z - xn
                dlt = abs(xn - X[i, j])
                if dlt > change:
                    change = dlt
                X[i, j] = xn
        if change <= tol and _marginal_residual(X, r, c) <= tol:
            break
    return X, sweeps, change


@njit(cache=True)
def _marginal_residual(X, r, c):
    n, m = X.shape
    worst = 0.0
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += X[i, j]
        worst = max(worst, abs(s - r[i]))
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += X[i, j]
        worst = max(worst, abs(s - c[j]))
    return worst


@njit(cache=True)
def grid_scan_two(G, resolution):
    best_a = 0.0
    best = np.inf
    v = np.empty(4)
    for k in range(resolution):
        a = 0.5 * k / (resolution - 1)
        b = 0.5 - a
        v[0] = a
        v[1] = b
        v[2] = b
        v[3] = a
        s = 0.0
        for p in range(4):
            for q in range(4):
                s += v[p] * G[p, q] * v[q]
        if s < best:
            best = s
            best_a = a
    return best_a, best


@njit(cache=True)
def perm_value(G, perm):
    n = perm.shape[0]
    s = 0.0
    for i in range(n):
        a = i + perm[i] * n
        for k in range(n):
            s += G[a, k + perm[k] * n]
    return s / (n * n)


@njit(cache=True)
def two_opt(G, perm, max_passes):
    n = perm.shape[0]
    perm = perm.copy()
    cur = perm_value(G, perm)
    for _ in range(max_passes):
        improved = False
        for i in range(n - 1):
            for k in range(i + 1, n):
                t = perm[i]
                perm[i] = perm[k]
                perm[k] = t
                val = perm_value(G, perm)
                if val < cur - 1e-14 * max(1.0, abs(cur)):
                    cur = val
                    improved = True
                else:
                    t = perm[i]
                    perm[i] = perm[k]
                    perm[k] = t
        if not improved:
            break
    return perm, cur
