"""Closed-form reference computations for the Gaussian known-noise model.

Written directly from the Normal-Normal update, independent of the package
code, so the importance-sampling engine can be checked against it.
"""

import numpy as np
from scipy.stats import norm


def design(X, intercept):
    X = np.asarray(X, dtype=float)
    return np.column_stack([X, np.ones(len(X))]) if intercept else X


def gaussian_posterior(A, y, m0, S0, noise_sd):
    """Posterior mean/cov of the coefficients given design ``A`` and outcomes ``y``."""
    P = np.linalg.inv(S0) + A.T @ A / noise_sd**2
    cov = np.linalg.inv(P)
    mean = cov @ (np.linalg.solve(S0, m0) + A.T @ y / noise_sd**2)
    return mean, cov


def augmented_predictive(X, y, x_new, y_new, m0, S0, noise_sd, intercept=False):
    """Predictive densities of ``(X_i, Y_i)`` and of the plug-in point under
    the posterior given the training data plus ``(x_new, y_new)``.

    Returns ``n + 1`` densities, plug-in point last.
    """
    A = design(np.vstack([X, np.atleast_2d(x_new)]), intercept)
    yy = np.append(y, y_new)
    mean, cov = gaussian_posterior(A, yy, np.asarray(m0, float), np.asarray(S0, float), noise_sd)
    loc = A @ mean
    scale = np.sqrt(np.einsum("ij,jk,ik->i", A, cov, A) + noise_sd**2)
    return norm.pdf(yy, loc, scale)


def brute_force_set(X, y, x_new, grid_points, alpha, m0, S0, noise_sd, intercept=False):
    """Full-conformal set by exact refitting at every grid value."""
    included = []
    pis = []
    for g in grid_points:
        s = augmented_predictive(X, y, x_new, g, m0, S0, noise_sd, intercept)
        pi = np.mean(s <= s[-1])
        pis.append(pi)
        included.append(pi > alpha)
    return np.array(included), np.array(pis)
