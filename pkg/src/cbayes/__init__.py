"""Conformal Bayesian prediction sets from posterior draws.

Posterior draws conditioned on the training data are reweighted by the
likelihood of each candidate outcome (add-one-in importance sampling) to
obtain exchangeable conformity scores without refitting.
"""

from cbayes.baselines import bayes_class_set, bayes_interval, split_conformal
from cbayes.conformal import (ConformalBayes, ConformalGrid, PredictionSet, RankProfile,
                              conformal_set, default_grid)
from cbayes.errors import CBayesError, DegenerateWeightsError, InputError, SamplerError
from cbayes.hierarchy import GroupConformalBayes, GroupedView, group_conformal_set
from cbayes.likelihoods import (Dataset, Datum, GaussianLinear, HierarchicalGaussian, Logistic,
                                standardize)
from cbayes.posterior import (PosteriorDraws, ingest_draws, sample_conjugate_oracle,
                              sample_metropolis, write_draws)

__version__ = "0.1.0"

__all__ = [
    "CBayesError", "ConformalBayes", "ConformalGrid", "Dataset", "Datum",
    "DegenerateWeightsError", "GaussianLinear", "GroupConformalBayes", "GroupedView",
    "HierarchicalGaussian", "InputError", "Logistic", "PosteriorDraws", "PredictionSet",
    "RankProfile", "SamplerError", "bayes_class_set", "bayes_interval", "conformal_set",
    "default_grid", "group_conformal_set", "ingest_draws", "sample_conjugate_oracle",
    "sample_metropolis", "split_conformal", "standardize", "write_draws",
]
