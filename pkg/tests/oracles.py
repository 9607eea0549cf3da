"""Slow reference computations used only by the test-suite.

Nothing here imports from the package's numerical paths; each function is a
direct transcription of a definition.
"""

import itertools

import numpy as np
from scipy.optimize import minimize


def naive_nll(beta, times, status, X):
    n = len(times)
    total = 0.0
    for i in range(n):
        if status[i] != 1:
            continue
        risk = [j for j in range(n) if times[j] >= times[i]]
        etas = np.array([X[j] @ beta for j in risk])
        m = etas.max()
        total += X[i] @ beta - (m + np.log(np.sum(np.exp(etas - m))))
    return -total / n


def naive_grad(beta, times, status, X):
    n, p = X.shape
    g = np.zeros(p)
    for i in range(n):
        if status[i] != 1:
            continue
        risk = [j for j in range(n) if times[j] >= times[i]]
        etas = np.array([X[j] @ beta for j in risk])
        w = np.exp(etas - etas.max())
        w /= w.sum()
        g += X[i] - w @ X[risk]
    return -g / n


def naive_hess(beta, times, status, X):
    n, p = X.shape
    H = np.zeros((p, p))
    for i in range(n):
        if status[i] != 1:
            continue
        risk = [j for j in range(n) if times[j] >= times[i]]
        etas = np.array([X[j] @ beta for j in risk])
        w = np.exp(etas - etas.max())
        w /= w.sum()
        xr = X[risk]
        mean = w @ xr
        H += (xr.T * w) @ xr - np.outer(mean, mean)
    return H / n


def central_diff_grad(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_diff_jac(F, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * h))
    return np.column_stack(cols)


def naive_c_index(scores, times, status):
    conc = 0.0
    pairs = 0
    n = len(times)
    for i, j in itertools.permutations(range(n), 2):
        if status[i] == 1 and times[i] < times[j]:
            pairs += 1
            if scores[i] > scores[j]:
                conc += 1.0
            elif scores[i] == scores[j]:
                conc += 0.5
    return conc / pairs


def naive_rpe(beta_hat, beta0, X):
    d = np.asarray(beta_hat) - np.asarray(beta0)
    m, p = X.shape
    total = 0.0
    for a in range(p):
        for b in range(p):
            total += d[a] * d[b] * sum(X[i, a] * X[i, b] for i in range(m))
    return total / m


def brute_force_graph_norm(beta, neighborhoods, tau, restarts=20, seed=0):
    """Minimise sum_k tau_k ||V_k|| over decompositions, derivative-free.

    The free coordinates are every (k, j in N_k) entry except one designated
    owner per feature, whose value is fixed by the sum constraint.  Feature j
    is always owned by group j (self-inclusion).  Each restart runs
    Nelder-Mead; the smooth surrogate sqrt(||v||^2 + eps^2) is annealed to 0.
    """
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    free = [(k, j) for k in range(p) for j in sorted(neighborhoods[k]) if j != k]

    def build(z):
        V = np.zeros((p, p))
        for (k, j), val in zip(free, z):
            V[k, j] = val
        for j in range(p):
            V[j, j] = beta[j] - V[:, j].sum() + V[j, j]
        return V

    def cost(z, eps=0.0):
        V = build(z)
        return sum(tau[k] * np.sqrt(V[k] @ V[k] + eps * eps) for k in range(p))

    if not free:
        return cost(np.zeros(0))
    rng = np.random.default_rng(seed)
    best = np.inf
    scale = max(1.0, np.abs(beta).max())
    for _ in range(restarts):
        z = rng.normal(scale=scale, size=len(free))
        for eps in (1e-1, 1e-3, 1e-6, 0.0):
            res = minimize(
                cost, z, args=(eps,), method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000},
            )
            z = res.x
        best = min(best, cost(z))
    return best
