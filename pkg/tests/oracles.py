"""Independent reference computations used by the tests.

These deliberately avoid the package's code paths: dense matrix products,
plain loops, arbitrary precision where it matters.
"""

import math

import mpmath
import numpy as np

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES = []


def circulant_ring_eigs(n, w):
    return sorted((1 - 2 * w + 2 * w * math.cos(2 * math.pi * k / n) for k in range(n)), reverse=True)


def rho_from_eigs(eigs):
    eigs = sorted(eigs, reverse=True)
    return max(abs(eigs[1]), abs(eigs[-1]))


def theoretical_coefficient_mp(t, *, T, H, lambda0, rho, v, r, delta, L_R, deg, dps=50):
    """Payment coefficient evaluated with mpmath at ``dps`` digits."""
    mpmath.mp.dps = dps
    t, T = mpmath.mpf(t), mpmath.mpf(T)
    H, lambda0, rho, v, r, delta, L_R = map(mpmath.mpf, (H, lambda0, rho, v, r, delta, L_R))
    pref = mpmath.e ** (20 * H ** 2 * lambda0 ** 2 / ((1 - rho) * (2 * v - 1)))
    d = pref * ((t + 1) ** (1 - 2 * v) - (T + 1) ** (1 - 2 * v))
    lam = lambda0 * (t + 1) ** (-v)
    kap = (t + 1) ** (-r)
    return 4 * L_R * mpmath.sqrt(6 * d) / (deg * lam * kap * delta)


def dense_dsgd(W, theta0, grad, lam, T):
    """Gradient-tracking-free decentralized GD with dense products: theta_{t+1} = W theta_t - lam(t) grad(theta_t)."""
    theta = np.array(theta0, dtype=float)
    out = [theta.copy()]
    for t in range(T + 1):
        theta = W @ theta - lam(t) * grad(theta)
        out.append(theta.copy())
    return np.stack(out)


def full_gradient_descent(grad, x0, step, iters):
    x = np.array(x0, dtype=float)
    for _ in range(iters):
        x = x - step * grad(x)
    return x


def metropolis(n, edges):
    deg = [0] * n
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    W = np.zeros((n, n))
    for i, j in edges:
        W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    for i in range(n):
        W[i, i] = 1.0 - W[i].sum()
    return W


def gaussian_norm_mean(n):
    """E||xi|| for a standard Gaussian vector in R^n."""
    return math.sqrt(2) * math.gamma((n + 1) / 2) / math.gamma(n / 2)


def laplace_norm_mean_mc(n, samples, seed):
    rng = np.random.default_rng(seed)
    x = rng.laplace(0, 1 / math.sqrt(2), (samples, n))
    return float(np.linalg.norm(x, axis=1).mean())
