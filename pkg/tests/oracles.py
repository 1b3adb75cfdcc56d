"""Independent reference computations used only by the test-suite."""
from itertools import combinations

import numpy as np


def brute_force_qp(H, p, A, b, tol=1e-9):
    """Exact QP minimum by enumerating candidate active sets.

    Every subset of at most ``n`` rows is tried as an equality system; the
    subset whose KKT solution is primal feasible with nonnegative multipliers
    gives the (unique) minimizer. Subsets are visited by increasing size and
    solved in batches so moderately sized instances stay tractable.
    Returns ``(x, objective)`` or ``None`` when nothing is feasible.
    """
    n = p.size
    m = b.size
    best = None
    for k in range(0, min(n, m) + 1):
        combos = list(combinations(range(m), k))
        subsets = np.array(combos, dtype=int).reshape(len(combos), k)
        if len(combos) > 200_000:
            raise RuntimeError(f"enumeration too large at active-set size {k}")
        kkt = np.zeros((subsets.shape[0], n + k, n + k))
        rhs = np.zeros((subsets.shape[0], n + k))
        kkt[:, :n, :n] = H
        rhs[:, :n] = -p
        if k:
            Aw = A[subsets]                      # (S, k, n)
            kkt[:, :n, n:] = np.transpose(Aw, (0, 2, 1))
            kkt[:, n:, :n] = Aw
            rhs[:, n:] = b[subsets]
        ok = np.linalg.cond(kkt) < 1e12
        if not ok.any():
            continue
        sol = np.linalg.solve(kkt[ok], rhs[ok][..., None])[..., 0]
        xs, mus = sol[:, :n], sol[:, n:]
        # Hx + p + A_w' mu = 0 must hold with mu >= 0
        feasible = np.all(xs @ A.T <= b + tol, axis=1) if m else np.ones(len(xs), bool)
        dual = np.all(mus >= -1e-9, axis=1) if k else np.ones(len(xs), bool)
        hit = np.flatnonzero(feasible & dual)
        if hit.size:
            x = xs[hit[0]]
            obj = 0.5 * x @ H @ x + p @ x
            best = (x, obj)
            break
    return best


def random_qp(rng, n, m, max_active=3):
    """Strictly convex QP with a planted optimum.

    A minimizer ``x_star`` and an active set of at most ``max_active`` rows
    with strictly positive multipliers are chosen first; the linear term is
    then fixed by stationarity and the remaining rows are made strictly
    inactive. Returns ``(H, p, A, b, x_star)``.
    """
    F = rng.normal(size=(n, n))
    H = F @ F.T + 0.5 * np.eye(n)
    A = rng.normal(size=(m, n))
    x_star = rng.normal(size=n)
    k = int(rng.integers(0, min(max_active, n, m) + 1))
    active = rng.choice(m, size=k, replace=False)
    b = A @ x_star + rng.uniform(0.05, 1.0, size=m)
    b[active] = A[active] @ x_star
    mu = rng.uniform(0.1, 2.0, size=k)
    p = -H @ x_star - A[active].T @ mu
    return H, p, A, b, x_star
