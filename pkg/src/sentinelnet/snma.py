"""
Backward elimination of components by their learned prior variance.

Each round fits the group-sparse model to convergence, removes the live
group with the smallest ``gamma`` (lowest index on ties) and warm-starts the
next fit from the pruned state. Targets are never pruned: the survivors
predict every component.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .dynsys import DISCRETE, DynamicsMatrix, LagPair, as_basis, make_lag_pair
from .errors import BadConfig, IndexOutOfRange
from .gsbl import (LINEAR, LOGISTIC, FitControl, GroupPrior, Posterior, fit,
                   initial_state)

logger = logging.getLogger(__name__)


@dataclass
class SnmaConfig:
    k: int
    kind: str = LINEAR
    control: FitControl = field(default_factory=FitControl)
    basis: Optional[object] = None
    seed: int = 0
    # carry lambda across prunes; False re-initialises it every round
    warm_start_noise: bool = True

    def __post_init__(self):
        if int(self.k) < 1:
            raise BadConfig(f"k must be at least 1, got {self.k}")
        if self.kind not in (LINEAR, LOGISTIC):
            raise BadConfig(f"unknown system kind {self.kind!r}")
        self.k = int(self.k)
        self.basis = as_basis(self.basis)


@dataclass
class SnmaState:
    """Live model during elimination; ``live`` holds original component indices."""

    lp: LagPair
    live: np.ndarray
    prior: GroupPrior
    hyper: object
    post: Optional[Posterior] = None


@dataclass
class RoundRecord:
    removed: Optional[int]
    gamma: np.ndarray
    live: np.ndarray
    converged: bool
    n_iter: int
    seconds: float


@dataclass
class SelectionResult:
    sentinels: np.ndarray
    elimination_order: list
    gamma_final: np.ndarray
    posterior_final: Posterior
    hyper_final: object
    trace: list
    kind: str
    group_sizes: np.ndarray
    basis: tuple
    n_components: int

    @property
    def ranking(self):
        """All components, most prunable first, survivors ordered by increasing gamma."""
        order = np.argsort(self.gamma_final, kind="stable")
        return list(self.elimination_order) + [int(self.sentinels[i]) for i in order]

    @property
    def converged(self):
        return all(r.converged for r in self.trace)


def prune_group(state, i, min_groups=1):
    """Drop original component ``i`` from every live quantity.

    ``xi`` is indexed by (time, target) and ``lambda`` is global, so both are
    kept as they are.
    """
    hits = np.flatnonzero(state.live == i)
    if hits.size == 0:
        raise IndexOutOfRange(f"component {i} is not a live group")
    if state.live.size - 1 < min_groups:
        raise IndexOutOfRange(
            f"pruning {i} would leave {state.live.size - 1} groups, fewer than {min_groups}")
    pos = int(hits[0])
    keep = np.delete(np.arange(state.live.size), pos)
    cols = state.lp.group_columns(keep)
    lp = state.lp.select_groups(keep)
    prior = GroupPrior(state.prior.gamma[keep], state.prior.group_sizes[keep])
    post = None
    if state.post is not None:
        if state.post.kind == LINEAR:
            Sigma = state.post.Sigma[np.ix_(cols, cols)]
        else:
            Sigma = state.post.Sigma[:, cols][:, :, cols]
        post = Posterior(state.post.M[cols], Sigma, state.post.kind)
    return SnmaState(lp, state.live[keep], prior, state.hyper, post)


def weakest_group(live, gamma):
    """Original index of the live group with minimum gamma; ties go to the lowest index."""
    live = np.asarray(live)
    gamma = np.asarray(gamma)
    ties = live[gamma == gamma.min()]
    return int(ties.min())


def _lag_pair(data, cfg):
    if isinstance(data, LagPair):
        return data
    if not isinstance(data, DynamicsMatrix):
        raise BadConfig(f"expected DynamicsMatrix or LagPair, got {type(data).__name__}")
    if cfg.kind == LOGISTIC and data.mode != DISCRETE:
        raise BadConfig("logistic selection needs discrete dynamics")
    return make_lag_pair(data, cfg.basis)


def _snapshot(state, trace, order, cfg, n):
    return SelectionResult(
        sentinels=state.live.copy(),
        elimination_order=list(order),
        gamma_final=state.prior.gamma.copy(),
        posterior_final=state.post,
        hyper_final=state.hyper,
        trace=list(trace),
        kind=cfg.kind,
        group_sizes=state.prior.group_sizes.copy(),
        basis=cfg.basis.names,
        n_components=n,
    )


def run_snma(data, cfg: SnmaConfig, keep_at: Optional[Iterable[int]] = None):
    """Select ``cfg.k`` sentinels.

    With ``keep_at`` the elimination runs down to ``min(keep_at)`` (which
    replaces ``cfg.k``) and a ``{k: SelectionResult}`` dict is returned, one
    entry per requested budget; the path is shared because every round only
    depends on the rounds before it.
    """
    lp = _lag_pair(data, cfg)
    n = lp.n_groups
    budgets = sorted({int(k) for k in keep_at}) if keep_at is not None else [cfg.k]
    if budgets[0] < 1 or budgets[-1] > n:
        raise BadConfig(f"budgets {budgets} must lie in [1, {n}]")
    ctrl = dataclasses.replace(cfg.control, seed=cfg.seed)
    prior, hyper = initial_state(lp, cfg.kind, ctrl)
    state = SnmaState(lp, np.arange(n), prior, hyper)
    trace, order, kept = [], [], {}
    removed = None
    while True:
        res = fit(state.lp, cfg.kind, (state.prior, state.hyper), ctrl)
        state = SnmaState(state.lp, state.live, res.prior, res.hyper, res.posterior)
        trace.append(RoundRecord(removed, res.prior.gamma.copy(), state.live.copy(),
                                 res.trace.converged, res.trace.n_iter, res.trace.seconds))
        live = state.live.size
        if live in budgets:
            kept[live] = _snapshot(state, trace, order, cfg, n)
        if live <= budgets[0]:
            break
        removed = weakest_group(state.live, state.prior.gamma)
        logger.debug("round %d: pruning component %d", len(trace), removed)
        order.append(removed)
        state = prune_group(state, removed, budgets[0])
        if not cfg.warm_start_noise and cfg.kind == LINEAR:
            _, fresh = initial_state(state.lp, LINEAR, ctrl)
            state = dataclasses.replace(state, hyper=fresh)
    if keep_at is not None:
        return kept
    return kept[cfg.k]
