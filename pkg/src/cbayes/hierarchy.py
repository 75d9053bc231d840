"""Within-group (Mondrian) conformal Bayes for partially exchangeable data.

Scores for group ``j`` are computed only from group ``j``'s training data
plus the plug-in point, using the hierarchical posterior's marginal draws of
``(theta_j, theta0_j, tau)``: the add-one-in weight depends on nothing else.
Ranks are taken within the ``n_j + 1`` group scores, so each group can have
its own miscoverage level ``alpha_j``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from cbayes.conformal import ConformalBayes, ConformalGrid, _check_alpha
from cbayes.errors import InputError
from cbayes.likelihoods import Dataset, linear_predictor, normal_logpdf


@dataclass(frozen=True, eq=False)
class GroupedView:
    dataset: Dataset
    J: int

    def __post_init__(self):
        g = self.dataset.group
        if g is None:
            raise InputError("grouped conformal prediction needs a group column",
                             module="hierarchy")
        present = set(np.unique(g).tolist())
        missing = sorted(set(range(1, self.J + 1)) - present)
        if missing or (g.size and g.max() > self.J):
            raise InputError("every group 1..J must occur in the training data",
                             module="hierarchy", value={"missing": missing},
                             hint="prediction for unseen groups is not supported")

    @classmethod
    def of(cls, dataset: Dataset, J=None):
        return cls(dataset, J if J is not None else dataset.J)

    @property
    def group_sizes(self):
        counts = np.bincount(self.dataset.group, minlength=self.J + 1)[1:]
        return {j + 1: int(c) for j, c in enumerate(counts)}

    def members(self, j):
        return np.flatnonzero(self.dataset.group == j)


@dataclass(frozen=True)
class GroupAlphaPolicy:
    """Per-group miscoverage levels and their feasibility flags.

    A level is infeasible when ``alpha_j < 1/(n_j + 1)``: every rank then
    exceeds it and the prediction set is the whole grid.
    """

    alphas: dict
    feasible: dict

    @classmethod
    def from_alphas(cls, alphas: dict, grouped: GroupedView):
        sizes = grouped.group_sizes
        for j, a in alphas.items():
            if not 0.0 < a < 1.0:
                raise InputError("alpha_j must lie in (0, 1)", module="hierarchy",
                                 value={j: a})
        feasible = {j: bool(alphas[j] >= 1.0 / (sizes[j] + 1)) for j in alphas}
        return cls(dict(alphas), feasible)

    @classmethod
    def uniform(cls, alpha, grouped: GroupedView):
        return cls.from_alphas({j: float(alpha) for j in grouped.group_sizes}, grouped)

    def __getitem__(self, j):
        return self.alphas[j]


def feasible_alphas(grouped: GroupedView, multiplier=1.1) -> GroupAlphaPolicy:
    """``alpha_j = multiplier / (n_j + 1)``, capped just below 1."""
    if multiplier <= 1:
        raise InputError("multiplier must exceed 1", module="hierarchy", value=multiplier)
    alphas = {j: min(multiplier / (n + 1), 1.0 - 1e-9) for j, n in grouped.group_sizes.items()}
    return GroupAlphaPolicy.from_alphas(alphas, grouped)


def parse_alpha_policy(text, grouped: GroupedView) -> GroupAlphaPolicy:
    """Parse ``uniform:0.2`` or ``min-feasible:1.1``."""
    kind, _, value = text.partition(":")
    try:
        value = float(value)
    except ValueError:
        raise InputError("alpha policy needs a numeric argument", module="hierarchy",
                         value=text, hint="e.g. uniform:0.2 or min-feasible:1.1") from None
    if kind == "uniform":
        return GroupAlphaPolicy.uniform(value, grouped)
    if kind == "min-feasible":
        return feasible_alphas(grouped, value)
    raise InputError("unknown alpha policy", module="hierarchy", value=text,
                     hint="use uniform:<alpha> or min-feasible:<multiplier>")


def _marginal_loglik(model, draws, j):
    theta, theta0, tau = model.group_marginal(draws.matrix, j)
    sd = tau[:, None]

    def loglik(X, y, group=None):
        return normal_logpdf(np.asarray(y, dtype=float), linear_predictor(theta, theta0, X), sd)

    return loglik


class GroupConformalBayes:
    """Per-group conformal Bayes engines sharing one set of hierarchical draws."""

    def __init__(self, model, draws, grouped: GroupedView, on_degenerate="error"):
        if model.family != "hierarchical":
            raise InputError("group conformal prediction needs the hierarchical model",
                             module="hierarchy", value=model.family)
        if grouped.J != model.J:
            raise InputError("model J and data J differ", module="hierarchy",
                             value=(model.J, grouped.J))
        self.model = model
        self.draws = draws
        self.grouped = grouped
        self.on_degenerate = on_degenerate
        self._engines = {}

    def engine(self, j) -> ConformalBayes:
        if j not in self._engines:
            if not 1 <= j <= self.model.J:
                raise InputError(f"unknown group {j}", module="hierarchy",
                                 hint=f"groups are 1..{self.model.J}")
            data = self.grouped.dataset.take(self.grouped.members(j))
            self._engines[j] = ConformalBayes(
                self.model, self.draws, data, self.on_degenerate,
                _loglik=_marginal_loglik(self.model, self.draws, j))
        return self._engines[j]

    def conformal_set(self, x, j, grid: ConformalGrid, alpha_j):
        _check_alpha(alpha_j)
        eng = self.engine(j)
        if alpha_j < 1.0 / (eng.n + 1):
            warnings.warn(f"alpha_{j}={alpha_j:.4g} < 1/(n_j+1)={1 / (eng.n + 1):.4g}; "
                          "the set is the whole grid", RuntimeWarning, stacklevel=2)
        prof = eng.profile(x, grid, alpha_j, group=int(j))
        return prof, prof.threshold(alpha_j)


def group_conformal_set(model, draws, grouped: GroupedView, test_x, j, grid, alpha_j,
                        *, engine=None):
    """Rank profile and set ``{y : pi_j(y) > alpha_j}`` within group ``j``."""
    engine = engine or GroupConformalBayes(model, draws, grouped)
    return engine.conformal_set(test_x, j, grid, alpha_j)
