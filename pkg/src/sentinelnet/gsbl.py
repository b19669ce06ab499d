"""
Group sparse Bayesian learning of a row-sparse sentinel network.

Everything here runs in projective coordinates. With ``Phi = kron(X, I_N)``
and ``Sigma_0 = kron(diag(gamma), I_N)`` every large matrix in the
vectorised model is diagonal-block with block size ``N`` (the number of
targets), so the ``N^2 x N^2`` posterior covariance collapses to a ``p x p``
matrix and the posterior mean to a ``p x N`` matrix ``M`` whose row-major
flattening is ``mu_s``.

The logistic likelihood uses the Jaakkola-Jordan quadratic bound. Its
curvature ``lambda(xi) = tanh(xi / 2) / (4 xi)`` differs between targets, so
the logistic posterior keeps one ``p x p`` covariance per target.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import log_expit

from .blockmat import ProjectiveMatrix, pm_multiply, pm_trace
from .errors import BadConfig, DimensionMismatch, NumericalFailure

logger = logging.getLogger(__name__)

LINEAR = "linear"
LOGISTIC = "logistic"
GAMMA_FLOOR = 1e-10


@dataclass
class GroupPrior:
    gamma: np.ndarray
    group_sizes: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.group_sizes = np.asarray(self.group_sizes, dtype=int)
        if self.gamma.shape != self.group_sizes.shape:
            raise DimensionMismatch(
                f"{self.gamma.size} gamma values for {self.group_sizes.size} groups")
        if np.any(~np.isfinite(self.gamma)) or np.any(self.gamma <= 0):
            raise BadConfig("gamma must be finite and strictly positive")

    @property
    def expanded(self):
        """Per-column prior variances (each group's gamma repeated over its width)."""
        return np.repeat(self.gamma, self.group_sizes)


@dataclass
class Posterior:
    """Posterior over the network in projective form.

    ``M`` is ``p x N``. ``Sigma`` is a single ``p x p`` matrix shared by all
    targets (linear) or an ``N x p x p`` stack, one block per target (logistic).
    """

    M: np.ndarray
    Sigma: np.ndarray
    kind: str

    def sigma_for(self, j):
        return self.Sigma if self.kind == LINEAR else self.Sigma[j]

    def sigma_diag(self):
        """``p x N`` array of posterior variances of each coefficient."""
        if self.kind == LINEAR:
            return np.repeat(np.diag(self.Sigma)[:, None], self.M.shape[1], axis=1)
        return np.diagonal(self.Sigma, axis1=1, axis2=2).T


@dataclass
class LinearHyper:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise BadConfig(f"noise variance must be positive, got {self.lam}")


@dataclass
class LogisticHyper:
    xi: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if np.any(self.xi < 0) or not np.all(np.isfinite(self.xi)):
            raise BadConfig("variational parameters must be finite and non-negative")


@dataclass
class FitControl:
    max_iters: int = 200
    tol: float = 1e-4
    gamma_floor: float = GAMMA_FLOOR
    # lambda is floored at this fraction of mean(Y**2) so noise-free data stays solvable
    lambda_floor_rel: float = 1e-10
    init: str = "default"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0 or not self.gamma_floor > 0:
            raise BadConfig("max_iters, tol and gamma_floor must be positive")
        if self.init not in ("default", "random"):
            raise BadConfig(f"unknown init mode {self.init!r}")


@dataclass
class FitTrace:
    gamma: list = field(default_factory=list)
    hyper_summary: list = field(default_factory=list)
    log_likelihood: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    seconds: float = 0.0


class FitResult(NamedTuple):
    posterior: Posterior
    prior: GroupPrior
    hyper: object
    trace: FitTrace


# -- numerics ----------------------------------------------------------------

def spd_inverse(P):
    """Inverse of a symmetric positive definite matrix via Cholesky.

    One retry with ``1e-10 * mean(diag)`` added to the diagonal; a second
    failure raises ``NumericalFailure``.
    """
    P = (P + P.T) / 2.0
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.mean(np.diag(P))
        try:
            L = np.linalg.cholesky(P + jitter * np.eye(P.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("posterior precision is not positive definite") from exc
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def _spd_inverse_stack(P):
    P = (P + P.transpose(0, 2, 1)) / 2.0
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return np.stack([spd_inverse(block) for block in P])
    Linv = np.linalg.inv(L)
    return np.matmul(Linv.transpose(0, 2, 1), Linv)


def jj_curvature(xi):
    """``lambda(xi) = tanh(xi / 2) / (4 xi)``, with its limit 1/8 at zero."""
    xi = np.abs(np.asarray(xi, dtype=float))
    out = np.full(xi.shape, 0.125)
    big = xi > 1e-6
    out[big] = np.tanh(xi[big] / 2.0) / (4.0 * xi[big])
    small = ~big
    out[small] -= xi[small] ** 2 / 96.0
    return out


def bernoulli_log_likelihood(z, y):
    """Elementwise ``log sigma(z)^y (1 - sigma(z))^(1 - y)``."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return y * z + log_expit(-z)


def jj_log_bound(z, xi, y):
    """Elementwise log of the Jaakkola-Jordan lower bound on the Bernoulli likelihood.

    ``log h = log sigma(xi) + z*y - (z + xi)/2 - lambda(xi) * (z^2 - xi^2)``;
    it never exceeds ``bernoulli_log_likelihood(z, y)`` and touches it at
    ``xi = |z|``.
    """
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    y = np.asarray(y, dtype=float)
    return (log_expit(xi) + z * y - (z + xi) / 2.0
            - jj_curvature(xi) * (z ** 2 - xi ** 2))


# -- posteriors --------------------------------------------------------------

def _check(lp, prior):
    if prior.group_sizes.sum() != lp.X.shape[1]:
        raise DimensionMismatch(
            f"prior covers {prior.group_sizes.sum()} columns, design has {lp.X.shape[1]}")


def linear_posterior(lp, prior, hyper):
    """Gaussian posterior of the linear system in projective form."""
    _check(lp, prior)
    N = lp.n_targets
    design = ProjectiveMatrix(lp.X, N)
    gram = pm_multiply(design.T, design).entries
    precision = np.diag(1.0 / prior.expanded) + gram / hyper.lam
    Sigma = spd_inverse(precision)
    M = Sigma @ (lp.X.T @ lp.Y) / hyper.lam
    return Posterior(M, Sigma, LINEAR)


def logistic_posterior(lp, prior, hyper):
    """Variational Gaussian posterior of the logistic system, one block per target."""
    _check(lp, prior)
    X, Y = lp.X, lp.Y
    if hyper.xi.shape != Y.shape:
        raise DimensionMismatch(f"xi has shape {hyper.xi.shape}, targets {Y.shape}")
    curv = jj_curvature(hyper.xi)                     # T' x N
    weighted = 2.0 * curv.T[:, :, None] * X[None]     # N x T' x p
    precision = np.matmul(X.T[None], weighted)
    p = X.shape[1]
    precision[:, np.arange(p), np.arange(p)] += 1.0 / prior.expanded
    Sigma = _spd_inverse_stack(precision)
    rhs = X.T @ (Y - 0.5)                             # p x N
    M = np.einsum("jab,bj->aj", Sigma, rhs)
    return Posterior(M, Sigma, LOGISTIC)


def posterior(lp, prior, hyper):
    if isinstance(hyper, LinearHyper):
        return linear_posterior(lp, prior, hyper)
    return logistic_posterior(lp, prior, hyper)


# -- hyperparameter updates ----------------------------------------------------

def update_gamma(post, group_sizes, floor=GAMMA_FLOOR):
    """EM update of the per-group prior variances.

    ``gamma_i = (|mu_i|^2 + tr Sigma_ii) / (N * w_i)`` where ``w_i`` is the
    group's width in ``X`` and ``N`` the number of targets.
    """
    group_sizes = np.asarray(group_sizes, dtype=int)
    N = post.M.shape[1]
    owner = np.repeat(np.arange(group_sizes.size), group_sizes)
    per_column = np.sum(post.M ** 2, axis=1)
    if post.kind == LINEAR:
        per_column = per_column + N * np.diag(post.Sigma)
    else:
        per_column = per_column + np.einsum("jaa->a", post.Sigma)
    totals = np.bincount(owner, weights=per_column, minlength=group_sizes.size)
    return np.maximum(totals / (N * group_sizes), floor)


def update_lambda(lp, post):
    """EM update of the linear noise variance."""
    N = lp.n_targets
    resid = lp.Y - lp.X @ post.M
    design = ProjectiveMatrix(lp.X, N)
    gram = pm_multiply(design.T, design)
    spread = pm_trace(pm_multiply(ProjectiveMatrix(post.Sigma, N), gram))
    return (float(np.sum(resid ** 2)) + spread) / (lp.n_samples * N)


def update_xi(lp, post):
    """Variational parameters ``xi_tj = sqrt(x_t (Sigma_j + m_j m_j^T) x_t^T)``."""
    X = lp.X
    if post.kind == LINEAR:
        quad = np.einsum("ta,ab,tb->t", X, post.Sigma, X)[:, None]
    else:
        quad = np.sum(np.matmul(X[None], post.Sigma) * X[None], axis=2).T
    mean = X @ post.M
    return np.sqrt(np.clip(quad, 0.0, None) + mean ** 2)


def marginal_log_likelihood(lp, prior, hyper):
    """``sum_j log N(y_j; 0, lam I + X Gamma X^T)`` for the linear system.

    Uses the ``T' x T'`` covariance or the ``p x p`` determinant lemma,
    whichever is smaller.
    """
    _check(lp, prior)
    T, p = lp.X.shape
    N = lp.n_targets
    if T == 0 or N == 0:
        return 0.0
    lam = hyper.lam
    g = prior.expanded
    X, Y = lp.X, lp.Y
    try:
        if T <= p:
            C = lam * np.eye(T) + (X * g) @ X.T
            L = np.linalg.cholesky(C)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            W = np.linalg.solve(L, Y)
            quad = float(np.sum(W ** 2))
        else:
            A = np.diag(1.0 / g) + X.T @ X / lam
            L = np.linalg.cholesky(A)
            logdet = T * np.log(lam) + np.sum(np.log(g)) + 2.0 * np.sum(np.log(np.diag(L)))
            W = np.linalg.solve(L, X.T @ Y)
            quad = (float(np.sum(Y ** 2)) - float(np.sum(W ** 2)) / lam) / lam
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("marginal covariance is not positive definite") from exc
    return -0.5 * (N * T * np.log(2.0 * np.pi) + N * logdet + quad)


# -- EM driver ---------------------------------------------------------------

def initial_state(lp, kind, ctrl, gamma=None, lam=None, xi=None):
    """Starting prior and hyperparameters; explicit values override the defaults."""
    n = lp.n_groups
    rng = np.random.default_rng(ctrl.seed) if ctrl.init == "random" else None
    if gamma is None:
        gamma = np.ones(n) if rng is None else rng.uniform(0.5, 1.5, n)
    prior = GroupPrior(np.maximum(gamma, ctrl.gamma_floor), lp.group_sizes)
    if kind == LINEAR:
        if lam is None:
            lam = max(float(np.var(lp.Y)) if lp.Y.size else 1.0, 1e-6)
            if rng is not None:
                lam *= rng.uniform(0.5, 1.5)
        return prior, LinearHyper(lam)
    if kind != LOGISTIC:
        raise BadConfig(f"unknown system kind {kind!r}")
    if xi is None:
        xi = np.ones(lp.Y.shape) if rng is None else rng.uniform(0.5, 1.5, lp.Y.shape)
    return prior, LogisticHyper(xi)


def _lambda_floor(lp, ctrl):
    power = float(np.mean(lp.Y ** 2)) if lp.Y.size else 0.0
    return ctrl.lambda_floor_rel * (power if power > 0 else 1.0)


def fit(lp, kind=LINEAR, init=None, ctrl=None):
    """Alternate posterior computation and EM hyperparameter updates.

    Parameters
    ----------
    lp : LagPair
    kind : {"linear", "logistic"}
    init : tuple (GroupPrior, hyper), optional
        Warm start; defaults come from ``initial_state``.
    ctrl : FitControl, optional

    Stops when ``max|gamma_new - gamma| / max(gamma) < tol`` or after
    ``max_iters``. Non-convergence is not an error: the last iterate comes
    back with ``trace.converged = False``.
    """
    ctrl = ctrl or FitControl()
    if kind == LOGISTIC and lp.Y.size and not np.all((lp.Y == 0) | (lp.Y == 1)):
        raise BadConfig("logistic fits need 0/1 targets")
    prior, hyper = init if init is not None else initial_state(lp, kind, ctrl)
    if kind == LINEAR and not isinstance(hyper, LinearHyper):
        raise BadConfig("linear fit needs a LinearHyper")
    if kind == LOGISTIC and not isinstance(hyper, LogisticHyper):
        raise BadConfig("logistic fit needs a LogisticHyper")
    trace = FitTrace()
    lam_floor = _lambda_floor(lp, ctrl)
    start = time.perf_counter()
    gamma = prior.gamma
    for it in range(1, ctrl.max_iters + 1):
        post = posterior(lp, prior, hyper)
        trace.gamma.append(gamma.copy())
        if kind == LINEAR:
            trace.log_likelihood.append(marginal_log_likelihood(lp, prior, hyper))
            trace.hyper_summary.append(hyper.lam)
        else:
            trace.hyper_summary.append(float(np.mean(hyper.xi)))
        new_gamma = update_gamma(post, prior.group_sizes, ctrl.gamma_floor)
        if kind == LINEAR:
            if lp.n_samples:
                hyper = LinearHyper(max(update_lambda(lp, post), lam_floor))
        else:
            hyper = LogisticHyper(update_xi(lp, post))
        change = np.max(np.abs(new_gamma - gamma)) / np.max(gamma) if gamma.size else 0.0
        gamma = new_gamma
        prior = GroupPrior(gamma, prior.group_sizes)
        trace.n_iter = it
        if change < ctrl.tol:
            trace.converged = True
            break
    post = posterior(lp, prior, hyper)
    trace.gamma.append(gamma.copy())
    if kind == LINEAR:
        trace.log_likelihood.append(marginal_log_likelihood(lp, prior, hyper))
        trace.hyper_summary.append(hyper.lam)
    else:
        trace.hyper_summary.append(float(np.mean(hyper.xi)))
    trace.seconds = time.perf_counter() - start
    if not trace.converged:
        logger.info("EM stopped after %d iterations without meeting tol=%g",
                    trace.n_iter, ctrl.tol)
    return FitResult(post, prior, hyper, trace)
