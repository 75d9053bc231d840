"""Reference constructions: Bayes credible intervals and class sets, split conformal."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, ndtr

from cbayes.conformal import ConformalGrid, RankProfile
from cbayes.errors import InputError
from cbayes.likelihoods import Dataset


@dataclass(frozen=True)
class CredibleInterval:
    lo: float
    hi: float
    alpha: float
    clamped: bool = False

    @property
    def length(self):
        return self.hi - self.lo

    def contains(self, y):
        return self.lo <= y <= self.hi

    def to_dict(self):
        return {"intervals": [[self.lo, self.hi]]}


def predictive_cdf(draws, model, test_x, ys, group=None):
    """Monte Carlo predictive CDF ``(1/T) sum_t F_theta_t(y | x)`` at ``ys``."""
    mean, sd = model.predictive_mean_sd(draws.matrix, test_x, group)
    ys = np.asarray(ys, dtype=float)
    return ndtr((ys[:, None] - mean[None, :]) / sd[None, :]).mean(axis=1)


def bayes_interval(draws, model, test_x, grid: ConformalGrid, alpha, group=None):
    """Central ``1 - alpha`` credible interval read off the grid.

    Each endpoint is the smallest grid value whose predictive CDF reaches
    ``alpha/2`` (lower) or ``1 - alpha/2`` (upper).  When a quantile lies
    beyond the grid the endpoint is clamped to the grid edge with a warning.
    """
    if model.kind != "regression":
        raise InputError("bayes_interval needs a regression family", module="baselines",
                         value=model.family, hint="use bayes_class_set for classification")
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)", module="baselines", value=alpha)
    mean, sd = model.predictive_mean_sd(draws.matrix, test_x, group)
    points = grid.points

    def cdf(k):
        return float(ndtr((points[k] - mean) / sd).mean())

    clamped = False
    ends = []
    for level in (alpha / 2.0, 1.0 - alpha / 2.0):
        # the CDF is monotone on the grid, so bisect instead of a full scan
        lo, hi = 0, grid.n
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf(mid) < level:
                lo = mid + 1
            else:
                hi = mid
        k = lo
        if k >= grid.n or (k == 0 and cdf(0) > level):
            clamped = True
            k = min(k, grid.n - 1)
        ends.append(float(points[k]))
    if clamped:
        warnings.warn("predictive quantile outside the grid; interval clamped to the grid",
                      RuntimeWarning, stacklevel=2)
    return CredibleInterval(ends[0], ends[1], alpha, clamped)


@dataclass(frozen=True)
class ClassPredictionReport:
    """Label set plus confidence/credibility summaries.

    ``confidence`` is the largest ``1 - alpha`` giving a singleton set.
    For conformal sets ``credibility`` is the largest label p-value: the
    set is empty exactly when ``alpha >= credibility``, a singleton when
    ``1 - confidence <= alpha < credibility`` and both labels otherwise.
    Bayes sets are never empty and carry no credibility.
    """

    labels: tuple
    alpha: float
    p1: Optional[float] = None
    confidence: Optional[float] = None
    credibility: Optional[float] = None

    @property
    def size(self):
        return len(self.labels)

    def contains(self, y):
        return int(y) in self.labels

    def to_dict(self):
        return {"labels": list(self.labels)}


def bayes_class_set(draws, model, test_x, alpha) -> ClassPredictionReport:
    """Smallest of ``{0}``, ``{1}``, ``{0, 1}`` holding ``1 - alpha`` predictive mass."""
    if model.family != "logistic":
        raise InputError("bayes_class_set needs the logistic family", module="baselines",
                         value=model.family)
    eta = model.logits(draws.matrix, np.asarray(test_x, dtype=float).reshape(1, -1))[:, 0]
    p = float(np.mean(expit(eta)))
    if 1.0 - p >= 1.0 - alpha:
        labels = (0,)
    elif p >= 1.0 - alpha:
        labels = (1,)
    else:
        labels = (0, 1)
    return ClassPredictionReport(labels, alpha, p1=p, confidence=max(p, 1.0 - p))


def conformal_class_report(profile: RankProfile, alpha, p1=None) -> ClassPredictionReport:
    if profile.grid.kind != "classification":
        raise InputError("conformal class report needs the {0, 1} grid", module="baselines")
    pi = profile.pi
    labels = tuple(int(v) for v in profile.grid.points[pi > alpha])
    return ClassPredictionReport(labels, alpha, p1=p1, confidence=float(1.0 - pi.min()),
                                 credibility=float(pi.max()))


def decompose(sets, truths):
    """Coverage, misclassification among singletons and uninformative rates."""
    sizes = np.array([len(s) for s in sets])
    truths = [int(t) for t in truths]
    if len(sizes) != len(truths):
        raise InputError("one set per truth required", module="baselines")
    hit = np.array([t in s for s, t in zip(sets, truths)], dtype=float)
    n = max(len(truths), 1)
    single = sizes == 1
    out = {
        "n": len(truths),
        "coverage": float(hit.mean()) if len(truths) else None,
        "singleton_rate": float(single.sum() / n),
        "both_rate": float((sizes == 2).sum() / n),
        "empty_rate": float((sizes == 0).sum() / n),
        # undefined without singleton predictions
        "misclassification": float(1.0 - hit[single].mean()) if single.any() else None,
    }
    return out


def uninformative_decomposition(bayes_sets, cb_sets, truths):
    """Decompose Bayes and conformal Bayes class sets side by side."""
    return {"bayes": decompose(bayes_sets, truths), "cb": decompose(cb_sets, truths)}


# ---------------------------------------------------------------------------
# split conformal


@dataclass(frozen=True)
class SplitInterval:
    lo: float
    hi: float
    center: float
    q: float
    alpha: float

    @property
    def unbounded(self):
        return math.isinf(self.q)

    @property
    def length(self):
        return 2.0 * self.q

    def contains(self, y):
        return self.lo <= y <= self.hi

    def to_dict(self):
        return {"intervals": [[self.lo, self.hi]], "unbounded": self.unbounded}


def conformal_quantile(residuals, alpha):
    """The ``ceil((m + 1)(1 - alpha))``-th smallest of ``m`` residuals (inf past ``m``)."""
    r = np.sort(np.asarray(residuals, dtype=float))
    m = r.shape[0]
    # guard against (m + 1)(1 - alpha) landing a rounding error above an integer
    k = math.ceil((m + 1) * (1.0 - alpha) - 1e-9)
    if k > m:
        return math.inf
    return float(r[max(k, 1) - 1])


class SplitConformal:
    """Split conformal regression around a closed-form ridge fit.

    The data are split in half at random; ridge (penalty ``1e-6 * n2``) is
    fitted with an intercept on the first half and absolute residuals on the
    second half calibrate the interval half-width.
    """

    def __init__(self, data: Dataset, alpha, seed=0):
        if data.kind != "regression":
            raise InputError("split conformal needs regression data", module="baselines")
        if data.n < 4:
            raise InputError("split conformal needs n >= 4", module="baselines", value=data.n)
        if not 0.0 < alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)", module="baselines", value=alpha)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        perm = rng.permutation(data.n)
        n1 = data.n // 2
        fit, cal = perm[:n1], perm[n1:]
        X1, y1 = data.X[fit], data.y[fit]
        xbar, ybar = X1.mean(axis=0), y1.mean()
        Xc = X1 - xbar
        penalty = 1e-6 * cal.shape[0]
        self.coef = np.linalg.solve(Xc.T @ Xc + penalty * np.eye(data.d), Xc.T @ (y1 - ybar))
        self.intercept = float(ybar - xbar @ self.coef)
        resid = np.abs(data.y[cal] - self.predict_mean(data.X[cal]))
        self.q = conformal_quantile(resid, alpha)
        self.alpha = alpha

    def predict_mean(self, X):
        return np.asarray(X, dtype=float).reshape(-1, self.coef.shape[0]) @ self.coef + self.intercept

    def interval(self, test_x) -> SplitInterval:
        c = float(self.predict_mean(test_x)[0])
        return SplitInterval(c - self.q, c + self.q, c, self.q, self.alpha)


def split_conformal(data: Dataset, test_x, alpha, seed=0) -> SplitInterval:
    return SplitConformal(data, alpha, seed).interval(test_x)
