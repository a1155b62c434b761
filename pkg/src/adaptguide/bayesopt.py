"""Online learning of the Beta shape (alpha, beta) with a Matern-5/2 GP and EI."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtr
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ContractError, DomainError

DEFAULT_BOX = ((0.5, 10.0), (0.5, 10.0))
DEFAULT_NORMALIZERS = (1.5, 7.0, 10.0)
INITIAL_THETA = (2.0, 2.0)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def composite_loss(metrics, weights=None, normalizers=DEFAULT_NORMALIZERS):
    """Weighted sum of metrics, each divided by its normaliser."""
    m = np.asarray(metrics, dtype=float)
    nu = np.asarray(normalizers, dtype=float)
    w = np.ones_like(m) if weights is None else np.asarray(weights, dtype=float)
    if not (m.shape == nu.shape == w.shape):
        raise ContractError("metrics, weights and normalizers must have equal length")
    if np.any(nu <= 0):
        raise DomainError("normalizers must be positive")
    return float(np.sum(w * m / nu))


def matern52(r, length_scale):
    s = math.sqrt(5.0) * np.asarray(r, dtype=float) / length_scale
    return (1.0 + s + s**2 / 3.0) * np.exp(-s)


def _pairwise(a, b):
    return np.sqrt(np.maximum(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1), 0.0))


class MaternGP(RegressorMixin, BaseEstimator):
    """Gaussian-process regressor with an isotropic Matern-5/2 kernel.

    Parameters
    ----------
    length_scale : float
        Kernel length scale, in parameter units.
    noise : float
        Observation noise variance added to the kernel diagonal. With
        ``fit(..., counts=c)`` a point averaging ``c`` evaluations gets
        ``noise / c``.
    amplitude : float
        Prior variance of the latent function, ``k(0) * amplitude``.

    The prior mean is the (count-weighted) mean of the training targets.
    """

    def __init__(self, length_scale=2.0, noise=0.09, amplitude=1.0):
        self.length_scale = length_scale
        self.noise = noise
        self.amplitude = amplitude

    def _kernel(self, a, b):
        return self.amplitude * matern52(_pairwise(a, b), self.length_scale)

    def fit(self, X, y, counts=None):
        X, y = check_X_y(X, y, y_numeric=True)
        counts = np.ones(len(y)) if counts is None else np.asarray(counts, dtype=float)
        if counts.shape != y.shape or np.any(counts <= 0):
            raise ContractError("counts must be positive, one per observation")
        self.X_train_ = X
        self.y_train_ = y
        self.y_mean_ = float(np.average(y, weights=counts))
        K = self._kernel(X, X)
        K[np.diag_indices_from(K)] += self.noise / counts
        for jitter in JITTER_LADDER:
            try:
                L = cholesky(K + jitter * np.eye(len(y)), lower=True)
            except np.linalg.LinAlgError:
                continue
            self.jitter_ = jitter
            break
        else:
            raise np.linalg.LinAlgError("kernel matrix is not positive definite")
        self.L_ = L
        self.alpha_ = cho_solve((L, True), y - self.y_mean_)
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "L_")
        return self._posterior(check_array(X), return_std)

    def _posterior(self, X, return_std):
        Ks = self._kernel(X, self.X_train_)
        mean = self.y_mean_ + Ks @ self.alpha_
        if not return_std:
            return mean
        v = solve_triangular(self.L_, Ks.T, lower=True)
        var = self.amplitude - np.sum(v**2, axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def log_marginal_likelihood(self):
        check_is_fitted(self, "L_")
        r = self.y_train_ - self.y_mean_
        return float(
            -0.5 * r @ self.alpha_
            - np.sum(np.log(np.diag(self.L_)))
            - 0.5 * len(r) * math.log(2.0 * math.pi)
        )


# a fitted MaternGP is the GP state passed around by the optimiser
GPState = MaternGP


def gp_fit(observations, length_scale=2.0, noise=0.09, amplitude=1.0):
    """Fit a GP on ``[(theta, loss), ...]`` or ``[(theta, loss, count), ...]``."""
    if len(observations) == 0:
        raise ContractError("gp_fit needs at least one observation")
    X = np.array([o[0] for o in observations], dtype=float)
    y = np.array([o[1] for o in observations], dtype=float)
    counts = np.array([o[2] if len(o) > 2 else 1 for o in observations], dtype=float)
    return MaternGP(length_scale, noise, amplitude).fit(X, y, counts)


def ei_closed_form(mu, sigma, f_best, xi=0.01):
    """Expected reduction below ``f_best - xi`` for ``Y ~ N(mu, sigma^2)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = f_best - xi - mu
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = imp * ndtr(z) + sigma * np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)
    ei = np.where(sigma > 0, ei, np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(gp, theta, xi=0.01, f_best=None):
    """EI of a fitted GP at one point or an ``(M, 2)`` batch (minimisation)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if f_best is None:
        f_best = float(np.min(gp.y_train_))
    mu, sd = gp._posterior(theta, True)
    ei = ei_closed_form(mu, sd, f_best, xi)
    return ei if ei.size > 1 else float(ei[0])


def _grid(box, n):
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return g.reshape(-1, len(box))


def propose_next(gp, box=DEFAULT_BOX, rng=None, xi=0.01, f_best=None, n_grid=32, n_starts=8):
    """Maximise EI over the box; returns ``(theta, ei)``.

    With no fitted GP the initial point is returned. When EI vanishes on the
    whole scan grid a uniform random point is returned instead.
    """
    box = tuple(tuple(map(float, b)) for b in box)
    if gp is None:
        return np.array(INITIAL_THETA, dtype=float), 0.0
    if f_best is None:
        f_best = float(np.min(gp.y_train_))
    grid = _grid(box, n_grid)
    ei = np.atleast_1d(expected_improvement(gp, grid, xi, f_best))
    if not np.max(ei) > 0.0:
        rng = rng if rng is not None else np.random.default_rng()
        lo, hi = np.array(box).T
        return lo + (hi - lo) * rng.uniform(size=len(box)), 0.0

    best_theta, best_ei = grid[np.argmax(ei)], float(np.max(ei))
    starts = grid[np.argsort(-ei, kind="stable")[:n_starts]]
    neg = lambda x: -float(expected_improvement(gp, x, xi, f_best))  # noqa: E731
    for x0 in starts:
        res = minimize(neg, x0, method="L-BFGS-B", bounds=box)
        if -res.fun > best_ei:
            best_theta, best_ei = np.clip(res.x, *np.array(box).T), -float(res.fun)
    return np.asarray(best_theta, dtype=float), best_ei


@dataclass(frozen=True)
class Cluster:
    theta: tuple
    loss: float
    count: float


def aggregate_neighborhood(observations, radius=0.5, scale=1.0):
    """Greedy clustering of nearby parameter settings.

    Coordinates are divided by ``scale`` before measuring distances. In input
    order, each unassigned point seeds a cluster that absorbs every unassigned
    point within ``radius`` of it; a cluster reports the count-weighted mean
    theta and loss and its total count.
    """
    if not radius > 0:
        raise DomainError("radius must be positive")
    if not observations:
        return []
    X = np.array([o[0] for o in observations], dtype=float)
    y = np.array([o[1] for o in observations], dtype=float)
    c = np.array([o[2] if len(o) > 2 else 1 for o in observations], dtype=float)
    Z = X / np.asarray(scale, dtype=float)
    free = np.ones(len(y), dtype=bool)
    out = []
    for i in range(len(y)):
        if not free[i]:
            continue
        members = free & (np.linalg.norm(Z - Z[i], axis=1) <= radius)
        free &= ~members
        w = c[members]
        out.append(
            Cluster(
                tuple(np.average(X[members], axis=0, weights=w)),
                float(np.average(y[members], weights=w)),
                float(w.sum()),
            )
        )
    return out


def reevaluation_due(iteration, gp, configs, top_fraction=0.1, period=50, xi=0.01):
    """Configurations to re-run at this iteration, best EI first.

    Non-empty only on positive multiples of ``period``; returns the top
    ``top_fraction`` of the distinct ``configs`` ranked by EI, ties kept in
    insertion order.
    """
    if iteration <= 0 or iteration % period or gp is None:
        return []
    distinct = []
    for th in configs:
        th = tuple(float(v) for v in th)
        if th not in distinct:
            distinct.append(th)
    if not distinct:
        return []
    k = max(1, int(round(top_fraction * len(distinct))))
    ei = np.atleast_1d(expected_improvement(gp, np.array(distinct), xi))
    order = np.argsort(-ei, kind="stable")
    return [distinct[i] for i in order[:k]]


class BetaShapeOptimizer(BaseEstimator):
    """Ask/tell Bayesian optimiser over the Beta shape box.

    Every decision is a pure function of the observation history (plus the
    RNG handed to :meth:`ask`), so an optimiser rebuilt from a saved history
    continues exactly where the original left off.
    """

    def __init__(self, box=DEFAULT_BOX, length_scale=2.0, noise_std=0.3, xi=0.01,
                 aggregate_radius=0.5, refit_every=10, reeval_period=50,
                 reeval_fraction=0.1, initial=INITIAL_THETA, n_grid=32, n_starts=8):
        self.box = box
        self.length_scale = length_scale
        self.noise_std = noise_std
        self.xi = xi
        self.aggregate_radius = aggregate_radius
        self.refit_every = refit_every
        self.reeval_period = reeval_period
        self.reeval_fraction = reeval_fraction
        self.initial = initial
        self.n_grid = n_grid
        self.n_starts = n_starts
        self.history = []
        self._hyper_cache = {}
        self._reeval_cache = {}

    # -- history ---------------------------------------------------------
    def tell(self, theta, loss):
        self.history.append((tuple(float(v) for v in theta), float(loss)))
        return self

    @property
    def n_observed(self):
        return len(self.history)

    # -- surrogate -------------------------------------------------------
    def _hyperparameters(self, n):
        """(length_scale, noise variance) for a history prefix of length n."""
        k = (n // self.refit_every) * self.refit_every
        if k < self.refit_every:
            return self.length_scale, self.noise_std**2
        if k not in self._hyper_cache:
            self._hyper_cache[k] = self._select_hyper(self.history[:k])
        return self._hyper_cache[k]

    def _select_hyper(self, obs):
        """Grid search of the log marginal likelihood over (length, noise)."""
        best, best_ll = (self.length_scale, self.noise_std**2), -np.inf
        clusters = self._aggregate(obs)
        for ls in self.length_scale * np.geomspace(0.25, 4.0, 9):
            for nstd in self.noise_std * np.geomspace(1 / 30, 3.0, 12):
                try:
                    gp = self._fit_clusters(clusters, ls, nstd**2)
                except np.linalg.LinAlgError:
                    continue
                ll = gp.log_marginal_likelihood()
                if ll > best_ll + 1e-12:
                    best, best_ll = (float(ls), float(nstd**2)), ll
        return best

    def _aggregate(self, obs):
        # distances are measured in units of the configured (not fitted) length
        # scale so the clustering does not feed back into hyperparameter choice
        if self.aggregate_radius is None or self.aggregate_radius <= 0:
            return [Cluster(th, y, 1.0) for th, y in obs]
        return aggregate_neighborhood(obs, self.aggregate_radius, scale=self.length_scale)

    @staticmethod
    def _fit_clusters(clusters, length_scale, noise):
        X = np.array([c.theta for c in clusters])
        y = np.array([c.loss for c in clusters])
        w = np.array([c.count for c in clusters])
        return MaternGP(length_scale, noise).fit(X, y, w)

    def surrogate(self, n=None):
        """GP fitted on the first ``n`` observations (default: all)."""
        n = self.n_observed if n is None else n
        if n == 0:
            return None
        ls, noise = self._hyperparameters(n)
        return self._fit_clusters(self._aggregate(self.history[:n]), ls, noise)

    # -- proposals -------------------------------------------------------
    def _reevaluations(self, m):
        if m not in self._reeval_cache:
            gp = self.surrogate(m)
            configs = [th for th, _ in self.history[:m]]
            self._reeval_cache[m] = reevaluation_due(
                m, gp, configs, self.reeval_fraction, self.reeval_period, self.xi
            )
        return self._reeval_cache[m]

    def ask(self, rng=None):
        """Next ``(theta, ei, kind)`` with kind in {"initial", "reeval", "ei"}."""
        n = self.n_observed
        if n == 0:
            return np.array(self.initial, dtype=float), 0.0, "initial"
        m = (n // self.reeval_period) * self.reeval_period
        if m > 0:
            queue = self._reevaluations(m)
            if n - m < len(queue):
                theta = np.array(queue[n - m])
                gp = self.surrogate(n)
                return theta, float(expected_improvement(gp, theta, self.xi)), "reeval"
        gp = self.surrogate(n)
        theta, ei = propose_next(gp, self.box, rng, self.xi, n_grid=self.n_grid,
                                 n_starts=self.n_starts)
        return theta, ei, "ei"

    def best(self):
        """Observed setting with the lowest surrogate mean."""
        gp = self.surrogate()
        if gp is None:
            return None
        thetas = np.array([th for th, _ in self.history])
        return tuple(thetas[int(np.argmin(gp.predict(thetas)))])


def branin_objective(theta, box=DEFAULT_BOX):
    """Branin function rescaled onto the shape box, divided by 100.

    Three global minima of value 0.397887/100; range roughly [0.004, 3.1].
    """
    theta = np.asarray(theta, dtype=float)
    (lo1, hi1), (lo2, hi2) = box
    x1 = -5.0 + 15.0 * (theta[..., 0] - lo1) / (hi1 - lo1)
    x2 = 15.0 * (theta[..., 1] - lo2) / (hi2 - lo2)
    a, b, c = 1.0, 5.1 / (4 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * math.pi)
    f = a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s
    return f / 100.0


BRANIN_MINIMUM = 0.39788735772973816 / 100.0
