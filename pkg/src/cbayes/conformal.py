"""Conformal Bayes engine: add-one-in importance sampling and grid ranks.

For a plug-in outcome ``y`` at test covariate ``x``, every posterior draw is
reweighted by its likelihood at ``(x, y)``; the self-normalised weights turn
the draws from ``p(theta | Z_1:n)`` into draws from the augmented posterior,
and the weighted average of each datum's likelihood is its conformity score.
``pi(y)`` is the fraction of the ``n + 1`` scores that do not exceed the
plug-in point's own score, and the prediction set keeps ``pi(y) > alpha``.

Scores are handled on the log scale.  For each training datum the
likelihood matrix is stored shifted by its per-datum maximum over draws, so
a whole grid of weight vectors reduces against it with one matrix product;
entries that underflow in that product are recomputed with log-sum-exp.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from cbayes.errors import DegenerateWeightsError, InputError
from cbayes.likelihoods import Dataset, Datum

logger = logging.getLogger(__name__)

# below this a shifted predictive sum is recomputed exactly in log space
_UNDERFLOW = 1e-280


# ---------------------------------------------------------------------------
# grid and results


@dataclass(frozen=True, eq=False)
class ConformalGrid:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def regression(cls, lo, hi, n_grid=100):
        if n_grid < 2:
            raise InputError("regression grid needs n_grid >= 2", module="conformal",
                             value=n_grid)
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            raise InputError("grid bounds must be finite with hi > lo", module="conformal",
                             value=(lo, hi))
        return cls("regression", np.linspace(lo, hi, int(n_grid)))

    @classmethod
    def classification(cls):
        return cls("classification", np.array([0.0, 1.0]))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def lo(self):
        return float(self.points[0])

    @property
    def hi(self):
        return float(self.points[-1])

    @property
    def spacing(self):
        if self.kind != "regression":
            return 1.0
        return (self.hi - self.lo) / (self.n - 1)

    def nearest_index(self, y):
        if self.kind == "classification":
            return int(round(float(y)))
        k = int(round((float(y) - self.lo) / self.spacing))
        return min(max(k, 0), self.n - 1)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "n": self.n}


def default_grid(data: Dataset, n_grid=100, pad_scale=1.0) -> ConformalGrid:
    """Equispaced grid on ``[min(y) - 2 s, max(y) + 2 s]`` with ``s = pad_scale``.

    The padding of 2 assumes a unit-sd response; pass the response scale as
    ``pad_scale`` when working on raw units.
    """
    if data.kind == "classification":
        raise InputError("classification data uses the fixed {0, 1} grid",
                         module="conformal", hint="use ConformalGrid.classification()")
    if data.n == 0:
        raise InputError("default grid needs training outcomes", module="conformal")
    if n_grid < 2:
        raise InputError("regression grid needs n_grid >= 2", module="conformal", value=n_grid)
    pad = 2.0 * pad_scale
    return ConformalGrid.regression(float(data.y.min()) - pad, float(data.y.max()) + pad, n_grid)


@dataclass(frozen=True, eq=False)
class RankProfile:
    """``pi(y)`` and the importance-weight ESS at every grid point."""

    test_x: tuple
    grid: ConformalGrid
    pi: np.ndarray
    ess: np.ndarray
    n: int
    T: int
    alpha: Optional[float] = None
    group: Optional[int] = None
    degenerate: Optional[np.ndarray] = None
    ess_scale: Optional[float] = None

    @property
    def scaled_ess(self):
        if self.ess_scale is None:
            return None
        return self.ess * self.ess_scale

    def threshold(self, alpha) -> "PredictionSet":
        return PredictionSet(self.grid, self.pi > alpha, alpha)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    grid: ConformalGrid
    included: np.ndarray
    alpha: float

    @property
    def intervals(self):
        """Maximal runs of included grid points as closed ``[a, b]`` pairs."""
        if self.grid.kind != "regression":
            return []
        inc = np.asarray(self.included, dtype=np.int8)
        edges = np.diff(np.concatenate([[0], inc, [0]]))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1) - 1
        pts = self.grid.points
        return [(float(pts[a]), float(pts[b])) for a, b in zip(starts, stops)]

    @property
    def labels(self):
        return [int(v) for v in self.grid.points[self.included]]

    @property
    def count(self):
        return int(np.count_nonzero(self.included))

    @property
    def measure(self):
        """Grid spacing times included points (label count for classification)."""
        if self.grid.kind == "classification":
            return float(self.count)
        return self.grid.spacing * self.count

    @property
    def is_empty(self):
        return self.count == 0

    def contains(self, y):
        """Membership of the grid point nearest to ``y``."""
        return bool(self.included[self.grid.nearest_index(y)])

    def to_dict(self):
        if self.grid.kind == "classification":
            return {"labels": self.labels}
        return {"intervals": [list(iv) for iv in self.intervals]}


# ---------------------------------------------------------------------------
# core arithmetic


def rank(scores) -> float:
    """Fraction of all scores that are ``<=`` the last one (ties count)."""
    scores = np.asarray(scores)
    if scores.shape[0] < 2:
        raise InputError("rank needs at least one training score", module="conformal")
    return float(np.count_nonzero(scores <= scores[-1])) / scores.shape[0]


def normalized_log_weights(log_w):
    """Self-normalise log weights along the last axis via log-sum-exp."""
    log_w = np.asarray(log_w, dtype=float)
    total = logsumexp(log_w, axis=-1, keepdims=True)
    return log_w - total


def importance_ess(log_w):
    """``1 / sum(w~^2)`` for unnormalised log weights along the last axis."""
    log_w = np.asarray(log_w, dtype=float)
    return np.exp(2.0 * logsumexp(log_w, axis=-1) - logsumexp(2.0 * log_w, axis=-1))


@dataclass(frozen=True, eq=False)
class LikelihoodCache:
    """Per-draw log-likelihoods of the training data and of plug-in points.

    ``train_loglik`` is ``T x n`` and is built once per (draws, dataset);
    ``grid_loglik`` is ``T x n_grid`` for one test covariate.
    """

    train_loglik: np.ndarray
    grid_loglik: Optional[np.ndarray] = None
    _train_max: np.ndarray = field(init=False, repr=False)
    _train_shifted: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ll = np.asarray(self.train_loglik, dtype=float)
        if np.isnan(ll).any():
            raise InputError("training log-likelihood contains NaN", module="conformal")
        top = ll.max(axis=0)
        top = np.where(np.isfinite(top), top, 0.0)
        object.__setattr__(self, "train_loglik", ll)
        object.__setattr__(self, "_train_max", top)
        object.__setattr__(self, "_train_shifted", np.exp(ll - top))

    @property
    def T(self):
        return self.train_loglik.shape[0]

    @property
    def n(self):
        return self.train_loglik.shape[1]

    def with_grid(self, grid_loglik) -> "LikelihoodCache":
        new = object.__new__(LikelihoodCache)
        for name in ("train_loglik", "_train_max", "_train_shifted"):
            object.__setattr__(new, name, getattr(self, name))
        object.__setattr__(new, "grid_loglik", np.asarray(grid_loglik, dtype=float))
        return new

    def log_scores(self, plugin_loglik):
        """Log conformity scores for a batch of plug-in points.

        ``plugin_loglik`` is ``T x G``.  Returns ``(log_scores, ess, dead)``
        where ``log_scores`` is ``G x (n + 1)`` (plug-in point last), and
        ``dead`` flags plug-in values at which every weight is zero.
        """
        lw = np.asarray(plugin_loglik, dtype=float).T
        if np.isnan(lw).any():
            raise InputError("plug-in log-likelihood contains NaN", module="conformal")
        G, T = lw.shape
        top = lw.max(axis=1)
        dead = ~np.isfinite(top)
        top = np.where(dead, 0.0, top)
        shifted_w = np.exp(lw - top[:, None])
        mass = shifted_w.sum(axis=1)
        # dead rows have zero mass; they get uniform weights and are flagged
        mass[dead] = T
        wt = shifted_w / mass[:, None]
        wt[dead] = 1.0 / T
        ess = 1.0 / np.sum(wt * wt, axis=1)
        log_mass = np.log(mass) + top

        shifted = wt @ self._train_shifted
        with np.errstate(divide="ignore"):
            log_train = np.log(shifted) + self._train_max
        for g, i in np.argwhere(shifted < _UNDERFLOW):
            log_train[g, i] = logsumexp(lw[g] - log_mass[g] + self.train_loglik[:, i])

        # plug-in score: sum_t w~_t f_t(y) with f_t(y) = w_t
        plug = np.einsum("gt,gt->g", wt, shifted_w)
        with np.errstate(divide="ignore"):
            log_plug = np.log(plug) + top
        for g in np.flatnonzero(plug < _UNDERFLOW):
            log_plug[g] = logsumexp(2.0 * lw[g]) - log_mass[g]
        return np.column_stack([log_train, log_plug]), ess, dead


def aoi_predictives(cache: LikelihoodCache, grid_index: int):
    """Add-one-in conformity scores at one grid point.

    Returns ``(scores, ess)`` where ``scores[:n]`` are the importance-sampled
    augmented-posterior predictive densities of the training data and
    ``scores[n]`` that of the plug-in point.
    """
    if cache.grid_loglik is None:
        raise InputError("cache has no grid log-likelihoods", module="conformal")
    if not 0 <= grid_index < cache.grid_loglik.shape[1]:
        raise InputError("grid index out of range", module="conformal", value=grid_index)
    log_s, ess, dead = cache.log_scores(cache.grid_loglik[:, grid_index : grid_index + 1])
    if dead[0]:
        raise DegenerateWeightsError("all importance weights are zero", module="conformal",
                                     value=f"grid index {grid_index}")
    return np.exp(log_s[0]), float(ess[0])


def ranks_from_log_scores(log_scores):
    """Row-wise rank of the last column among all columns (``<=``)."""
    return np.count_nonzero(log_scores <= log_scores[:, -1:], axis=1) / log_scores.shape[1]


# ---------------------------------------------------------------------------
# engine


class ConformalBayes:
    """Conformal Bayes predictor for a fixed model, draws and training set.

    The training likelihood matrix is computed once on construction and
    reused for every test covariate.

    Parameters
    ----------
    model : likelihood model
        Any family from :mod:`cbayes.likelihoods`.
    draws : PosteriorDraws
        Posterior draws given ``data``.
    data : Dataset
        Training data the draws were conditioned on.
    on_degenerate : {"error", "min-rank"}
        What to do at plug-in values where every weight vanishes: raise
        :class:`DegenerateWeightsError`, or give the point the minimum rank
        ``1/(n+1)`` and flag it in the profile.
    """

    def __init__(self, model, draws, data: Dataset, on_degenerate="error", *, _loglik=None):
        if on_degenerate not in ("error", "min-rank"):
            raise InputError("on_degenerate must be 'error' or 'min-rank'",
                             module="conformal", value=on_degenerate)
        if data.n < 1:
            raise InputError("conformal prediction needs training data", module="conformal")
        self.model = model
        self.draws = draws
        self.data = data
        self.on_degenerate = on_degenerate
        if _loglik is None:
            params = draws.matrix

            def _loglik(X, y, group=None):
                return model.loglik_matrix(params, X, y, group)

        self._loglik = _loglik
        self.cache = LikelihoodCache(_loglik(data.X, data.y, data.group))
        ess = getattr(draws, "mcmc_ess", None)
        self.ess_scale = min(ess.values()) / draws.T if ess else None

    @property
    def n(self):
        return self.data.n

    @property
    def T(self):
        return self.cache.T

    def plugin_loglik(self, x, ys, group=None):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        ys = np.asarray(ys, dtype=float).reshape(-1)
        X = np.repeat(x, ys.shape[0], axis=0)
        g = None if group is None else np.full(ys.shape[0], int(group))
        return self._loglik(X, ys, g)

    def _ranks(self, plug, ys):
        log_s, ess, dead = self.cache.log_scores(plug)
        pi = ranks_from_log_scores(log_s)
        if dead.any():
            if self.on_degenerate == "error":
                bad = float(np.asarray(ys).reshape(-1)[np.flatnonzero(dead)[0]])
                raise DegenerateWeightsError(
                    "all importance weights are zero at a plug-in outcome",
                    module="conformal", value=bad,
                    hint="narrow the grid, or pass on_degenerate='min-rank'")
            pi = np.where(dead, 1.0 / (self.n + 1), pi)
            ess = np.where(dead, np.nan, ess)
        return pi, ess, dead

    def rank_at(self, x, ys, group=None):
        """``pi(y)`` at arbitrary plug-in outcomes ``ys``."""
        return self.rank_ess_at(x, ys, group)[0]

    def rank_ess_at(self, x, ys, group=None):
        """``(pi, ess)`` at arbitrary plug-in outcomes ``ys``."""
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        pi, ess, _ = self._ranks(self.plugin_loglik(x, ys, group), ys)
        return pi, ess

    def profile(self, x, grid: ConformalGrid, alpha=None, group=None) -> RankProfile:
        pi, ess, dead = self._ranks(self.plugin_loglik(x, grid.points, group), grid.points)
        return RankProfile(
            test_x=tuple(np.asarray(x, dtype=float).reshape(-1).tolist()),
            grid=grid, pi=pi, ess=ess, n=self.n, T=self.T, alpha=alpha, group=group,
            degenerate=dead if dead.any() else None, ess_scale=self.ess_scale,
        )

    def conformal_set(self, x, grid: ConformalGrid, alpha, group=None):
        _check_alpha(alpha)
        prof = self.profile(x, grid, alpha, group)
        return prof, prof.threshold(alpha)

    def exact_rank_coverage(self, test: Datum, grid: ConformalGrid, alpha, profile=None):
        """``(covered_grid, covered_exact)`` for a test point with known outcome.

        ``covered_grid`` is membership of the grid point nearest to the
        outcome; ``covered_exact`` evaluates ``pi`` at the outcome itself.
        """
        _check_alpha(alpha)
        if profile is None:
            profile = self.profile(test.x, grid, alpha, test.group)
        pset = profile.threshold(alpha)
        covered_grid = pset.contains(test.y)
        exact = self.rank_at(test.x, [test.y], test.group)[0]
        return covered_grid, bool(exact > alpha)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)", module="conformal", value=alpha)


def conformal_set(model, draws, data, test_x, grid, alpha, *, engine=None, **kw):
    """Rank profile and prediction set ``{y in grid : pi(y) > alpha}``."""
    engine = engine or ConformalBayes(model, draws, data, **kw)
    return engine.conformal_set(test_x, grid, alpha)


def exact_rank_coverage(model, draws, data, test: Datum, grid, alpha, *, engine=None, **kw):
    engine = engine or ConformalBayes(model, draws, data, **kw)
    return engine.exact_rank_coverage(test, grid, alpha)


def result_record(profile: RankProfile, pset: PredictionSet, method="cb", dump_rank=True,
                  **extra):
    """JSON-ready record for one test point."""
    rec = {
        "method": method,
        "test_x": list(profile.test_x),
        "alpha": pset.alpha,
        "grid": {"lo": profile.grid.lo, "hi": profile.grid.hi, "n": profile.grid.n},
        "set": pset.to_dict(),
        "measure": pset.measure,
        "measure_convention": "grid spacing x included grid points",
    }
    if profile.group is not None:
        rec["group"] = profile.group
    if dump_rank:
        rec["pi"] = profile.pi.tolist()
        rec["ess"] = [None if not math.isfinite(v) else v for v in profile.ess.tolist()]
        if profile.degenerate is not None:
            rec["degenerate"] = profile.degenerate.tolist()
    rec.update(extra)
    return rec
