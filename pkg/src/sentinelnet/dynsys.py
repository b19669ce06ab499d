"""
Dynamics panels, lag pairs, basis embeddings and the synthetic generator.

Conventions
-----------
A dynamics panel ``D`` is ``T x N`` (time by component). The lag pair uses
``X[t] = embed(D[t])`` and ``Y[t] = D[t + 1]``. With ``m`` basis functions
the design ``X`` has ``m * N`` columns laid out component-major, so the
columns of component ``i`` are ``i*m, ..., i*m + m - 1``.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import brentq
from scipy.special import expit

from .errors import BadConfig, EmptyDynamics, NonFiniteEmbedding

CONTINUOUS = "continuous"
DISCRETE = "discrete"
LINEAR = "linear"
LOGISTIC = "logistic"


@dataclass
class DynamicsMatrix:
    values: np.ndarray
    mode: str = CONTINUOUS
    component_ids: Optional[list] = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise EmptyDynamics(f"dynamics must be a T x N matrix, got shape {values.shape}")
        if self.mode not in (CONTINUOUS, DISCRETE):
            raise BadConfig(f"unknown dynamics mode {self.mode!r}")
        if self.mode == DISCRETE:
            if not np.all((values == 0) | (values == 1)):
                raise BadConfig("discrete dynamics must contain only 0/1")
            values = values.astype(np.int8)
        else:
            values = values.astype(float)
        self.values = values
        if self.component_ids is None:
            self.component_ids = [f"c{i}" for i in range(values.shape[1])]
        elif len(self.component_ids) != values.shape[1]:
            raise BadConfig(
                f"{len(self.component_ids)} component ids for {values.shape[1]} columns")
        self.component_ids = [str(c) for c in self.component_ids]

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def N(self):
        return self.values.shape[1]

    def window(self, start, stop):
        return DynamicsMatrix(self.values[start:stop], self.mode, list(self.component_ids))


# -- basis functions ---------------------------------------------------------

BASIS_REGISTRY: dict = {
    "identity": lambda x: x,
    "quadratic": lambda x: x * x + x,
    "sin": np.sin,
}


@dataclass(frozen=True)
class BasisSet:
    """Ordered scalar basis functions, looked up by name in ``BASIS_REGISTRY``."""

    names: tuple = ("identity",)
    funcs: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        names = (self.names,) if isinstance(self.names, str) else tuple(self.names)
        if not names:
            raise BadConfig("a basis set needs at least one function")
        unknown = [n for n in names if n not in BASIS_REGISTRY]
        if unknown:
            raise BadConfig(f"unknown basis function(s) {unknown}; known: {sorted(BASIS_REGISTRY)}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "funcs", tuple(BASIS_REGISTRY[n] for n in names))

    @property
    def size(self):
        return len(self.names)

    @property
    def is_identity(self):
        return self.names == ("identity",)


def as_basis(basis) -> BasisSet:
    if basis is None:
        return BasisSet()
    if isinstance(basis, BasisSet):
        return basis
    return BasisSet(basis)


def embed(values, basis=None):
    """Map a ``T x N`` panel to ``T x (m*N)`` basis features, component-major."""
    basis = as_basis(basis)
    values = np.asarray(values, dtype=float)
    feats = np.stack([np.asarray(f(values), dtype=float) for f in basis.funcs], axis=-1)
    if not np.all(np.isfinite(feats)):
        raise NonFiniteEmbedding(f"basis {basis.names} produced non-finite values")
    return feats.reshape(values.shape[0], -1)


# -- lag pairs ---------------------------------------------------------------

@dataclass
class LagPair:
    X: np.ndarray
    Y: np.ndarray
    group_sizes: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.group_sizes = np.asarray(self.group_sizes, dtype=int)
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise EmptyDynamics(f"misaligned lag pair: X {self.X.shape}, Y {self.Y.shape}")
        if self.group_sizes.sum() != self.X.shape[1]:
            raise BadConfig(
                f"group sizes sum to {self.group_sizes.sum()} but X has {self.X.shape[1]} columns")

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def n_targets(self):
        return self.Y.shape[1]

    @property
    def n_groups(self):
        return len(self.group_sizes)

    def group_columns(self, groups):
        """Column indices of ``X`` belonging to the listed groups."""
        starts = np.concatenate([[0], np.cumsum(self.group_sizes)[:-1]])
        return np.concatenate(
            [np.arange(starts[g], starts[g] + self.group_sizes[g]) for g in groups]
        ).astype(int) if len(groups) else np.zeros(0, dtype=int)

    def select_groups(self, groups):
        groups = list(groups)
        return LagPair(self.X[:, self.group_columns(groups)], self.Y,
                       self.group_sizes[groups])


def make_lag_pair(d, basis=None):
    """One-step lag pair ``(embed(D[:-1]), D[1:])`` with one group per component."""
    if d.T < 2:
        raise EmptyDynamics(f"need at least 2 time points, got {d.T}")
    basis = as_basis(basis)
    X = embed(d.values[:-1], basis)
    Y = d.values[1:].astype(float)
    return LagPair(X, Y, np.full(d.N, basis.size, dtype=int))


def stack_lag_pairs(pairs):
    pairs = list(pairs)
    sizes = pairs[0].group_sizes
    for p in pairs[1:]:
        if not np.array_equal(p.group_sizes, sizes):
            raise BadConfig("cannot stack lag pairs with different group layouts")
    return LagPair(np.vstack([p.X for p in pairs]), np.vstack([p.Y for p in pairs]), sizes)


def contiguous_folds(T, n_folds):
    """Split ``range(T)`` into ``n_folds`` contiguous (start, stop) blocks."""
    if n_folds < 2 or n_folds > T // 2:
        raise BadConfig(f"cannot cut {T} time points into {n_folds} folds of length >= 2")
    edges = np.linspace(0, T, n_folds + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def fold_split(d, start, stop, basis=None):
    """Training lag pair with ``D[start:stop]`` held out.

    Transitions that cross a fold boundary are dropped, so each side of the
    held-out block loses one transition.
    """
    segments = [d.window(0, start), d.window(stop, d.T)]
    pairs = [make_lag_pair(s, basis) for s in segments if s.T >= 2]
    if not pairs:
        raise EmptyDynamics("no training transitions left outside the held-out fold")
    return stack_lag_pairs(pairs), d.window(start, stop)


# -- synthetic data ----------------------------------------------------------

@dataclass
class SyntheticConfig:
    n_components: int
    n_sentinels: int
    kind: str = LINEAR
    T: Optional[int] = None
    t_over_n: Optional[float] = None
    snr_db: Optional[float] = None
    ber: Optional[float] = None
    sigma_big2: float = 10.0
    sigma_small2: float = 0.1
    basis: Optional[Sequence[str]] = None
    noise_model: str = "process"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (LINEAR, LOGISTIC):
            raise BadConfig(f"unknown system kind {self.kind!r}")
        if self.n_components < 1:
            raise BadConfig("n_components must be positive")
        if not 1 <= self.n_sentinels <= self.n_components:
            raise BadConfig(
                f"n_sentinels must lie in [1, {self.n_components}], got {self.n_sentinels}")
        if (self.T is None) == (self.t_over_n is None):
            raise BadConfig("give exactly one of T or t_over_n")
        if self.t_over_n is not None and self.t_over_n <= 0:
            raise BadConfig("t_over_n must be positive")
        if self.n_time < 2:
            raise BadConfig(f"T must be at least 2, got {self.n_time}")
        if self.sigma_big2 <= 0 or self.sigma_small2 < 0:
            raise BadConfig("sigma_big2 must be positive and sigma_small2 non-negative")
        if self.kind == LINEAR:
            if self.ber is not None:
                raise BadConfig("ber applies to logistic systems only")
            if self.snr_db is not None and np.isnan(self.snr_db):
                raise BadConfig("snr_db must not be NaN")
            if self.noise_model not in ("process", "observation"):
                raise BadConfig(f"unknown noise model {self.noise_model!r}")
            if not self.basis_set.is_identity:
                raise BadConfig("the linear generator only supports the identity basis")
        else:
            if self.snr_db is not None:
                raise BadConfig("snr_db applies to linear systems only")
            ber = 0.0 if self.ber is None else self.ber
            if not 0.0 <= ber <= 1.0:
                raise BadConfig(f"ber must lie in [0, 1], got {ber}")

    @property
    def n_time(self):
        if self.T is not None:
            return int(self.T)
        return int(round(self.t_over_n * self.n_components))

    @property
    def basis_set(self):
        if self.basis is not None:
            return as_basis(self.basis)
        return BasisSet(("quadratic",) if self.kind == LOGISTIC else ("identity",))

    @property
    def noise_free(self):
        if self.kind == LOGISTIC:
            return not self.ber
        return self.snr_db is None or np.isposinf(self.snr_db)


@dataclass
class SyntheticTruth:
    gamma_true: np.ndarray
    S_true: np.ndarray
    sentinels: np.ndarray
    kind: str
    scale: float = 1.0

    def to_json(self):
        return {
            "gamma_true": [float(g) for g in self.gamma_true],
            "sentinels": [int(i) for i in self.sentinels],
            "S_true": [[float(v) for v in row] for row in self.S_true],
            "kind": self.kind,
            "scale": float(self.scale),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["gamma_true"], dtype=float),
                   np.asarray(obj["S_true"], dtype=float),
                   np.asarray(obj["sentinels"], dtype=int),
                   obj.get("kind", LINEAR), float(obj.get("scale", 1.0)))


def apply_snr(clean, snr_db, seed=None):
    """Add i.i.d. Gaussian noise with power ``mean(clean**2) / 10**(snr_db/10)``."""
    clean = np.asarray(clean, dtype=float)
    if clean.size == 0:
        raise EmptyDynamics("cannot add noise to an empty panel")
    if snr_db is None or np.isposinf(snr_db):
        return clean.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    power = np.mean(clean ** 2)
    noise_sd = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return clean + noise_sd * rng.standard_normal(clean.shape)


def spectral_radius(S):
    return float(np.max(np.abs(np.linalg.eigvals(S)))) if S.size else 0.0


def stationary_covariance(S):
    """Covariance of ``d_{t+1} = d_t S + v_t`` with unit white innovations."""
    return solve_discrete_lyapunov(S.T, np.eye(S.shape[0]))


def stationary_snr(S):
    """Power ratio of the signal ``d_t S`` to the unit innovations, at stationarity."""
    cov = stationary_covariance(S)
    return float(np.trace(cov)) / S.shape[0] - 1.0


def _scale_for_snr(S, target):
    rho = spectral_radius(S)
    if not np.any(S):
        raise BadConfig("sampled network is identically zero; no SNR is attainable")

    def gap(c):
        return np.log(max(stationary_snr(c * S), 1e-300)) - np.log(target)

    if rho > 0:
        hi = (1.0 - 1e-9) / rho
    else:
        hi = 1.0
        while gap(hi) < 0:
            hi *= 2.0
    if gap(hi) < 0:
        raise BadConfig(f"SNR of {10 * np.log10(target):.1f} dB is not attainable")
    lo = hi * 1e-3
    while gap(lo) > 0:
        lo *= 1e-3
    return brentq(gap, lo, hi, xtol=1e-14, rtol=1e-12)


def _sample_truth(cfg, rng):
    N, m = cfg.n_components, cfg.basis_set.size
    sentinels = np.sort(rng.choice(N, cfg.n_sentinels, replace=False))
    is_sentinel = np.zeros(N, dtype=bool)
    is_sentinel[sentinels] = True
    # gamma is a variance: half-normal keeps the 10 : 0.1 scale split while staying >= 0
    gamma = np.empty(N)
    gamma[is_sentinel] = np.sqrt(cfg.sigma_big2) * np.abs(rng.standard_normal(is_sentinel.sum()))
    gamma[~is_sentinel] = np.sqrt(cfg.sigma_small2) * np.abs(rng.standard_normal((~is_sentinel).sum()))
    row_sd = np.repeat(np.sqrt(gamma), m)
    S = row_sd[:, None] * rng.standard_normal((N * m, N))
    return gamma, S, sentinels


def _simulate_linear(cfg, S, rng):
    T, N = cfg.n_time, cfg.n_components
    D = np.empty((T, N))
    if cfg.noise_free or cfg.noise_model == "observation":
        rho = spectral_radius(S)
        scale = 0.95 / rho if rho > 1.0 else 1.0
        S = scale * S
        D[0] = rng.standard_normal(N)
        for t in range(T - 1):
            D[t + 1] = D[t] @ S
        if not cfg.noise_free:
            D = apply_snr(D, cfg.snr_db, rng)
        return D, S, scale
    scale = _scale_for_snr(S, 10.0 ** (cfg.snr_db / 10.0))
    S = scale * S
    cov = stationary_covariance(S)
    w, V = np.linalg.eigh((cov + cov.T) / 2.0)
    D[0] = V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(N))
    innovations = rng.standard_normal((T - 1, N))
    for t in range(T - 1):
        D[t + 1] = D[t] @ S + innovations[t]
    return D, S, scale


def _simulate_logistic(cfg, S, rng):
    T, N = cfg.n_time, cfg.n_components
    ber = cfg.ber or 0.0
    D = np.zeros((T, N), dtype=np.int8)
    D[0] = rng.random(N) < 0.5
    for t in range(T - 1):
        prob = expit(embed(D[t][None, :], cfg.basis_set)[0] @ S)
        state = rng.random(N) < prob
        flips = rng.random(N) < ber
        D[t + 1] = state ^ flips
    return D


def generate_synthetic(cfg: SyntheticConfig):
    """Sample a planted sentinel network and roll the dynamics forward.

    Linear systems with finite SNR follow a stationary VAR(1) with unit
    innovations; the network is rescaled so the stationary signal power
    ``E|d_t S|^2`` is ``10**(snr_db/10)`` times the innovation power. A
    noise-free linear run is the exact recursion ``D[t+1] = D[t] S``.
    Logistic runs draw Bernoulli states through the sigmoid of the embedded
    previous state and then flip each bit with probability ``ber``.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    truth_rng, dyn_rng = (np.random.default_rng(s) for s in seeds)
    gamma, S, sentinels = _sample_truth(cfg, truth_rng)
    if cfg.kind == LINEAR:
        D, S, scale = _simulate_linear(cfg, S, dyn_rng)
        dyn = DynamicsMatrix(D, CONTINUOUS)
    else:
        scale = 1.0
        dyn = DynamicsMatrix(_simulate_logistic(cfg, S, dyn_rng), DISCRETE)
    truth = SyntheticTruth(gamma * scale ** 2, S, sentinels, cfg.kind, scale)
    return dyn, truth
