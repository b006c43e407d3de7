"""Analytic objectives with gradient oracles and known optima.

Each instance describes ``F(theta) = (1/N) sum_i f_i(theta)`` for ``N`` agents.
Gradient kernels take a stacked parameter array of shape ``(..., N, dim)``
and, for stochastic instances, a matching noise array drawn from the
agent's gradient stream.  Matrix-vector products are written as explicit
column loops so that a batch of runs and a single run produce the same floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as rng_mod


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class GradientSample:
    value: np.ndarray
    is_stochastic: bool


def _colmatvec(mat: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``mat @ d`` over the last axis, by columns.

    ``mat`` is ``(n, n)`` (shared) or ``(N, n, n)`` (one per agent, aligned with
    the agent axis of ``d``).
    """
    out = d[..., 0:1] * mat[..., :, 0]
    for k in range(1, mat.shape[-1]):
        out += d[..., k:k + 1] * mat[..., :, k]
    return out


def _quad(mat: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.einsum("...p,...pq,...q->...", d, mat, d)


def _check_spd(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if not np.allclose(mat, np.swapaxes(mat, -1, -2), rtol=0, atol=1e-12):
        raise ProblemError(f"{name} must be symmetric")
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    if np.min(np.linalg.eigvalsh(mat)) <= 0:
        raise ProblemError(f"{name} must be positive definite")
    return mat


class ProblemInstance:
    """Common interface; see the concrete kinds below."""

    kind: str = ""
    n_agents: int
    dim: int
    stochastic: bool
    H: float
    mu_sc: float
    L_f: float

    # Per-step noise draws per agent and their law.
    noise_width: int = 0
    noise_law: str = "normal"

    def gradients(self, theta: np.ndarray, noise: Optional[np.ndarray] = None) -> np.ndarray:
        raise NotImplementedError

    def local_objective(self, agent: int, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def local_objectives(self, theta: np.ndarray) -> np.ndarray:
        """``f_i(theta_i)`` for stacked ``theta`` of shape ``(..., N, dim)``."""
        return np.stack([self.local_objective(i, theta[..., i, :]) for i in range(self.n_agents)], axis=-1)

    def global_objective(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return sum(self.local_objective(i, theta) for i in range(self.n_agents)) / self.n_agents

    def global_optimum(self) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "n_agents": self.n_agents, "stochastic": self.stochastic}

    # single-agent entry points -------------------------------------------------

    def _agent_slice(self, agent: int):
        raise NotImplementedError

    def exact_gradient(self, agent: int, theta) -> np.ndarray:
        theta = _finite(theta, self.dim)
        return self._kernel(self._agent_slice(agent), theta[None, :], None)[0]

    def stochastic_gradient(self, agent: int, theta, rng) -> GradientSample:
        """One gradient sample for ``agent``.

        ``rng`` is a :class:`numpy.random.Generator` or a
        :class:`~strategic_dsgd.rng.NoiseStream` of width ``noise_width``.
        Exact instances ignore it.
        """
        theta = _finite(theta, self.dim)
        if not self.stochastic:
            return GradientSample(self.exact_gradient(agent, theta), False)
        if isinstance(rng, rng_mod.NoiseStream):
            noise = rng.take()
        else:
            noise = rng_mod.NoiseStream(rng, self.noise_width, self.noise_law, block=1).take()
        value = self._kernel(self._agent_slice(agent), theta[None, :], noise[None, :])[0]
        return GradientSample(value, True)

    def _kernel(self, params, theta, noise):
        raise NotImplementedError

    def gradient_check(self, theta: np.ndarray) -> np.ndarray:
        """``grad F`` at a single point, as the average of exact local gradients."""
        theta = _finite(theta, self.dim)
        stacked = np.broadcast_to(theta, (self.n_agents, self.dim)).copy()
        return self._kernel(self._agent_slice(slice(None)), stacked, None).mean(axis=0)

    # deviation analysis ----------------------------------------------------------

    def deviated_optimum(self, deviator: int, a: float) -> np.ndarray:
        raise ProblemError(f"no closed-form deviated optimum for kind {self.kind!r}")

    def deviation_cost_delta(self, deviator: int, a: float) -> tuple[float, float]:
        raise ProblemError(f"no closed-form deviation cost for kind {self.kind!r}")


def _finite(theta, dim) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ProblemError(f"expected a parameter of shape ({dim},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ProblemError("parameter is not finite")
    return theta


def _check_scale(a: float) -> float:
    a = float(a)
    if not a >= 1.0:
        raise ProblemError(f"scaling factor must be >= 1, got {a}")
    return a


class _TargetAveraging(ProblemInstance):
    """Shared algebra of the least-squares and mean-estimation kinds.

    Both have ``f_i(theta) = (theta - t_i)^T S (theta - t_i) + floor`` with one
    metric ``S`` for every agent, so deviations have closed forms.
    """

    targets: np.ndarray
    metric: np.ndarray
    floor: float = 0.0

    def local_objective(self, agent, theta):
        d = np.asarray(theta, dtype=float) - self.targets[agent]
        return _quad(self.metric, d) + self.floor

    def global_optimum(self):
        return self.targets.mean(axis=0)

    def _check_agent(self, deviator):
        if not 0 <= deviator < self.n_agents:
            raise ProblemError(f"agent {deviator} out of range")

    def deviated_optimum(self, deviator, a):
        a = _check_scale(a)
        self._check_agent(deviator)
        n = self.n_agents
        zbar = self.global_optimum()
        return ((a - 1.0) / (a + n - 1.0)) * self.targets[deviator] + (n / (a + n - 1.0)) * zbar

    def deviation_cost_delta(self, deviator, a):
        """``(f_i(theta*) - f_i(theta'*), F(theta'*) - F(theta*))`` in closed form."""
        a = _check_scale(a)
        self._check_agent(deviator)
        n = self.n_agents
        d = self.targets[deviator] - self.global_optimum()
        spread = float(_quad(self.metric, d))
        gain = (1.0 - (n / (a + n - 1.0)) ** 2) * spread
        loss = ((a - 1.0) / (a + n - 1.0)) ** 2 * spread
        return gain, loss


@dataclass(eq=False)
class LeastSquares(_TargetAveraging):
    """Linear regression ``f_i = E[(u^T theta - v_i)^2]`` with ``v_i = u^T z_i + xi``.

    Features are Gaussian ``N(0, Sigma)`` in stochastic mode; ``batch`` samples
    per gradient.  With ``stochastic=False`` the gradient is the expectation
    ``2 Sigma (theta - z_i)``.
    """

    targets: np.ndarray
    covariance: np.ndarray
    label_noise_var: float = 0.0
    stochastic: bool = False
    batch: int = 1
    kind: str = field(default="least_squares", init=False)

    def __post_init__(self):
        self.targets = np.array(self.targets, dtype=float, ndmin=2)
        self.n_agents, self.dim = self.targets.shape
        self.covariance = _check_spd(np.atleast_2d(self.covariance), "covariance")
        if self.covariance.shape != (self.dim, self.dim):
            raise ProblemError("covariance shape does not match dimension")
        if self.label_noise_var < 0:
            raise ProblemError("label noise variance must be nonnegative")
        if self.batch < 1:
            raise ProblemError("batch size must be positive")
        self.metric = self.covariance
        self.floor = float(self.label_noise_var)
        self._chol = np.linalg.cholesky(self.covariance)
        eig = np.linalg.eigvalsh(self.covariance)
        self.H = 2.0 * float(eig[-1])
        self.mu_sc = 2.0 * float(eig[0])
        self.L_f = float("inf")
        self.noise_width = self.batch * (self.dim + 1) if self.stochastic else 0

    def _agent_slice(self, agent):
        return self.targets[agent] if isinstance(agent, slice) else self.targets[agent:agent + 1]

    def _kernel(self, targets, theta, noise):
        d = theta - targets
        if noise is None:
            return 2.0 * _colmatvec(self.covariance, d)
        n, b = self.dim, self.batch
        sd = np.sqrt(self.label_noise_var)
        out = np.zeros_like(d)
        for s in range(b):
            e = noise[..., s * n:(s + 1) * n]
            u = _colmatvec(self._chol, e)
            resid = (u * d).sum(axis=-1, keepdims=True) - sd * noise[..., b * n + s:b * n + s + 1]
            out += u * resid
        return out * (2.0 / b)

    def gradients(self, theta, noise=None):
        return self._kernel(self.targets, theta, noise if self.stochastic else None)

    def describe(self):
        out = super().describe()
        out.update(feature_law="gaussian(0, covariance)", label_noise="gaussian", batch=self.batch)
        return out


@dataclass(eq=False)
class MeanEstimation(_TargetAveraging):
    """``f_i(theta) = ||theta - mu_i||^2`` with samples ``zeta ~ N(mu_i, sigma^2/n I)``.

    The stochastic gradient is ``2 (theta - zeta)``.
    """

    targets: np.ndarray
    sigma2: float = 1.0
    stochastic: bool = True
    kind: str = field(default="mean_estimation", init=False)

    def __post_init__(self):
        self.targets = np.array(self.targets, dtype=float, ndmin=2)
        self.n_agents, self.dim = self.targets.shape
        if self.sigma2 < 0:
            raise ProblemError("sampling variance must be nonnegative")
        self.metric = np.eye(self.dim)
        self.floor = 0.0
        self._scale = float(np.sqrt(self.sigma2 / self.dim))
        self.H = 2.0
        self.mu_sc = 2.0
        self.L_f = float("inf")
        self.noise_width = self.dim if self.stochastic else 0

    @property
    def means(self) -> np.ndarray:
        return self.targets

    def local_objective(self, agent, theta):
        d = np.asarray(theta, dtype=float) - self.targets[agent]
        return (d * d).sum(axis=-1)

    def _agent_slice(self, agent):
        return self.targets[agent] if isinstance(agent, slice) else self.targets[agent:agent + 1]

    def _kernel(self, means, theta, noise):
        if noise is None:
            return 2.0 * (theta - means)
        zeta = means + self._scale * noise
        return 2.0 * (theta - zeta)

    def gradients(self, theta, noise=None):
        return self._kernel(self.targets, theta, noise if self.stochastic else None)


@dataclass(eq=False)
class Quadratic(ProblemInstance):
    """``f_i(theta) = (theta - c_i)^T A_i (theta - c_i)``, gradient ``2 A_i (theta - c_i)``.

    Stochastic mode adds i.i.d. Gaussian noise of standard deviation
    ``noise_std`` to every gradient coordinate.
    """

    hessians: np.ndarray
    centers: np.ndarray
    noise_std: float = 0.0
    stochastic: bool = False
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        self.centers = np.array(self.centers, dtype=float, ndmin=2)
        self.n_agents, self.dim = self.centers.shape
        hess = np.asarray(self.hessians, dtype=float)
        if hess.shape != (self.n_agents, self.dim, self.dim):
            raise ProblemError("need one dim x dim matrix per agent")
        self.hessians = np.stack([_check_spd(h, f"A_{i}") for i, h in enumerate(hess)])
        if self.noise_std < 0:
            raise ProblemError("noise_std must be nonnegative")
        eig = np.linalg.eigvalsh(self.hessians)
        self.H = 2.0 * float(eig.max())
        self.mu_sc = 2.0 * float(eig.min())
        self.L_f = float("inf")
        self.noise_width = self.dim if self.stochastic else 0

    def _agent_slice(self, agent):
        if isinstance(agent, slice):
            return self.hessians, self.centers
        return self.hessians[agent:agent + 1], self.centers[agent:agent + 1]

    def _kernel(self, params, theta, noise):
        hess, centers = params
        g = 2.0 * _colmatvec(hess, theta - centers)
        if noise is not None:
            g += self.noise_std * noise
        return g

    def gradients(self, theta, noise=None):
        return self._kernel((self.hessians, self.centers), theta, noise if self.stochastic else None)

    def local_objective(self, agent, theta):
        d = np.asarray(theta, dtype=float) - self.centers[agent]
        return _quad(self.hessians[agent], d)

    def global_optimum(self):
        lhs = self.hessians.sum(axis=0)
        rhs = np.einsum("ipq,iq->p", self.hessians, self.centers)
        return np.linalg.solve(lhs, rhs)

    def deviated_optimum(self, deviator, a):
        a = _check_scale(a)
        w = np.ones(self.n_agents)
        w[deviator] = a
        lhs = np.einsum("i,ipq->pq", w, self.hessians)
        rhs = np.einsum("i,ipq,iq->p", w, self.hessians, self.centers)
        return np.linalg.solve(lhs, rhs)

    def deviation_cost_delta(self, deviator, a):
        star = self.global_optimum()
        dev = self.deviated_optimum(deviator, a)
        gain = float(self.local_objective(deviator, star) - self.local_objective(deviator, dev))
        loss = float(self.global_objective(dev) - self.global_objective(star))
        return gain, loss


def huber(r: np.ndarray, kappa: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= kappa, 0.5 * r * r, kappa * (a - 0.5 * kappa))


@dataclass(eq=False)
class HuberRegression(ProblemInstance):
    """Robust regression ``f_i = mean_k huber(x_ik^T theta - y_ik)``.

    Convex with bounded gradients and no strong convexity (the Huber tails are
    linear), so it exercises the general convex regime.  Stochastic mode
    samples ``batch`` rows uniformly with replacement.
    """

    features: np.ndarray
    labels: np.ndarray
    kappa: float = 0.5
    stochastic: bool = True
    batch: int = 1
    kind: str = field(default="huber", init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 3 or self.labels.shape != self.features.shape[:2]:
            raise ProblemError("features must be (N, m, dim) and labels (N, m)")
        self.n_agents, self.rows, self.dim = self.features.shape
        if not self.kappa > 0:
            raise ProblemError("kappa must be positive")
        sq = (self.features ** 2).sum(axis=-1)
        self.H = float(sq.max())
        self.mu_sc = 0.0
        self.L_f = float(self.kappa * np.sqrt(sq.max()))
        self.noise_width = self.batch if self.stochastic else 0
        self.noise_law = "uniform"
        self._opt = None

    def _agent_slice(self, agent):
        if isinstance(agent, slice):
            return self.features, self.labels
        return self.features[agent:agent + 1], self.labels[agent:agent + 1]

    def _kernel(self, params, theta, noise):
        x, y = params
        if noise is None:
            resid = (x * theta[..., None, :]).sum(axis=-1) - y
            psi = np.clip(resid, -self.kappa, self.kappa)
            return (psi[..., None] * x).sum(axis=-2) / self.rows
        k = np.minimum((noise * self.rows).astype(np.intp), self.rows - 1)
        agents = np.arange(x.shape[0])[:, None]
        xs = x[agents, k]
        ys = y[agents, k]
        resid = (xs * theta[..., None, :]).sum(axis=-1) - ys
        psi = np.clip(resid, -self.kappa, self.kappa)
        return (psi[..., None] * xs).sum(axis=-2) / self.batch

    def gradients(self, theta, noise=None):
        return self._kernel((self.features, self.labels), theta, noise if self.stochastic else None)

    def local_objective(self, agent, theta):
        theta = np.asarray(theta, dtype=float)
        resid = theta @ self.features[agent].T - self.labels[agent]
        return huber(resid, self.kappa).mean(axis=-1)

    def global_optimum(self):
        """Minimiser of ``F`` by damped Newton on the piecewise-quadratic loss."""
        if self._opt is not None:
            return self._opt.copy()
        x = self.features.reshape(-1, self.dim)
        y = self.labels.reshape(-1)
        m = len(y)
        theta = np.linalg.lstsq(x, y, rcond=None)[0]

        def obj(t):
            return huber(x @ t - y, self.kappa).mean()

        for _ in range(200):
            r = x @ theta - y
            grad = x.T @ np.clip(r, -self.kappa, self.kappa) / m
            if np.linalg.norm(grad) < 1e-14:
                break
            inner = np.abs(r) <= self.kappa
            hess = x[inner].T @ x[inner] / m + 1e-12 * np.eye(self.dim)
            step = np.linalg.solve(hess, grad)
            f0, s = obj(theta), 1.0
            while obj(theta - s * step) > f0 and s > 1e-12:
                s *= 0.5
            theta = theta - s * step
        self._opt = theta
        return theta.copy()

    def describe(self):
        out = super().describe()
        out.update(kappa=self.kappa, rows=self.rows, batch=self.batch)
        return out


# generators ---------------------------------------------------------------------


def _spd(gen, dim, lo, hi):
    q, _ = np.linalg.qr(gen.standard_normal((dim, dim)))
    eig = gen.uniform(lo, hi, dim)
    mat = (q * eig) @ q.T
    return 0.5 * (mat + mat.T)


def make_least_squares(n_agents, dim, seed, *, eig_range=(0.5, 1.5), target_loc=0.0,
                       target_scale=1.0, label_noise_var=0.0, stochastic=False, batch=1) -> LeastSquares:
    gen = rng_mod.generator(seed, 0, "problem")
    cov = _spd(gen, dim, *eig_range)
    targets = target_loc + target_scale * gen.standard_normal((n_agents, dim))
    return LeastSquares(targets, cov, label_noise_var=label_noise_var, stochastic=stochastic, batch=batch)


def make_mean_estimation(n_agents, dim, seed, *, sigma2=1.0, mean_scale=1.0, stochastic=True) -> MeanEstimation:
    gen = rng_mod.generator(seed, 0, "problem")
    return MeanEstimation(mean_scale * gen.standard_normal((n_agents, dim)), sigma2=sigma2, stochastic=stochastic)


def make_quadratic(n_agents, dim, seed, *, eig_range=(1.0, 2.0), center_scale=1.0,
                   noise_std=0.0, stochastic=False) -> Quadratic:
    gen = rng_mod.generator(seed, 0, "problem")
    hess = np.stack([_spd(gen, dim, *eig_range) for _ in range(n_agents)])
    centers = center_scale * gen.standard_normal((n_agents, dim))
    return Quadratic(hess, centers, noise_std=noise_std, stochastic=stochastic)


def make_huber(n_agents, dim, seed, *, rows=20, kappa=0.5, noise_scale=1.0,
               stochastic=True, batch=1) -> HuberRegression:
    gen = rng_mod.generator(seed, 0, "problem")
    x = gen.standard_normal((n_agents, rows, dim))
    truth = gen.standard_normal(dim) + 0.5 * gen.standard_normal((n_agents, dim))
    y = np.einsum("imp,ip->im", x, truth) + noise_scale * gen.laplace(0.0, 1.0, (n_agents, rows))
    return HuberRegression(x, y, kappa=kappa, stochastic=stochastic, batch=batch)
