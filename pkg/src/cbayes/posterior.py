"""Posterior draws: CSV ingestion, adaptive Metropolis, exact conjugate oracle.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence(seed)``; independent chains use ``SeedSequence(seed).spawn``.
Equal seeds therefore give equal draws on every platform numpy supports.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cbayes._io import atomic_write_text, format_float, header_lines, read_csv_rows
from cbayes.errors import InputError, SamplerError
from cbayes.likelihoods import Dataset, GaussianLinear

logger = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.234


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """``T x p`` matrix of draws whose columns follow ``model.columns``."""

    matrix: np.ndarray
    model: object
    source: str = "external-file"
    acceptance: Optional[float] = None
    mcmc_ess: Optional[dict] = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] != self.model.n_params:
            raise InputError("draw matrix does not match the model layout",
                             module="posterior", value=m.shape,
                             hint="columns: " + ",".join(self.model.columns))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def T(self):
        return self.matrix.shape[0]

    @property
    def columns(self):
        return self.model.columns

    def column(self, name):
        return self.matrix[:, self.model.columns.index(name)]

    def group_marginal(self, j):
        return self.model.group_marginal(self.matrix, j)

    @property
    def min_mcmc_ess(self):
        if not self.mcmc_ess:
            return None
        return min(self.mcmc_ess.values())


def _check_rows(matrix, model, first_line=None):
    bad = ~np.isfinite(matrix)
    if bad.any():
        r = int(np.argwhere(bad)[0][0])
        raise InputError("non-finite draw", module="posterior",
                         value=f"row {r + 1 if first_line is None else first_line[r]}")
    pos = model.positive_mask
    viol = matrix[:, pos] <= 0
    if viol.any():
        r, c = np.argwhere(viol)[0]
        name = [n for n, p in zip(model.columns, pos) if p][c]
        row = r + 1 if first_line is None else first_line[r]
        raise InputError(f"positivity constraint violated for {name}", module="posterior",
                         value=f"row {row}: {matrix[r, pos][c]}",
                         hint="scale parameters (tau, b, s, s0) must be > 0")


def ingest_draws(path, model) -> PosteriorDraws:
    """Read a draws CSV whose header names exactly the model's parameters."""
    header, rows, _ = read_csv_rows(path)
    if header is None or not rows:
        raise InputError("draws file has no rows", module="posterior", value=str(path))
    expected = model.columns
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if missing or extra:
        raise InputError("draws columns do not match the model", module="posterior",
                         value={"missing": missing, "extra": extra},
                         hint="expected header: " + ",".join(expected))
    order = [header.index(c) for c in expected]
    matrix = np.empty((len(rows), len(expected)))
    lines = []
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != len(header):
            raise InputError("wrong number of fields", module="posterior",
                             value=f"line {lineno}")
        try:
            matrix[r] = [float(cells[k]) for k in order]
        except ValueError:
            raise InputError("non-numeric draw", module="posterior",
                             value=f"line {lineno}") from None
        lines.append(lineno)
    _check_rows(matrix, model, lines)
    # rows are taken to be in chain order; the ESS feeds the scaled IS ESS
    ess = {name: autocorr_ess(matrix[:, k]) for k, name in enumerate(expected)}
    return PosteriorDraws(matrix, model, source="external-file", mcmc_ess=ess)


def draws_to_csv(draws: PosteriorDraws, config=None) -> str:
    lines = header_lines(config)
    lines.append(",".join(draws.columns))
    lines.extend(",".join(format_float(v) for v in row) for row in draws.matrix)
    return "\n".join(lines) + "\n"


def write_draws(draws: PosteriorDraws, path, config=None):
    atomic_write_text(path, draws_to_csv(draws, config))


# ---------------------------------------------------------------------------
# diagnostics


def autocorr_ess(x):
    """Effective sample size of one chain from its autocorrelations.

    Sums autocorrelation pairs until the first negative pair (Geyer's
    initial positive sequence).  A constant chain has ESS 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 3:
        return float(n)
    xc = x - x.mean()
    peak = np.max(np.abs(xc))
    if not peak > 0 or not math.isfinite(peak):
        return 1.0
    # ESS is scale free; rescaling keeps the FFT products finite
    xc = xc / peak
    var = np.dot(xc, xc) / n
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / max(tau, 1e-12)))


# ---------------------------------------------------------------------------
# Metropolis


def _log_posterior_fn(model, data: Dataset):
    X, y, g = data.X, data.y, data.group
    model.check_data(X, g)

    def logpost(z):
        params, log_jac = model.constrain(z)
        lp = model.log_prior(params)
        if not math.isfinite(lp):
            return -math.inf
        ll = model.loglik_sum(params, X, y, g)
        if math.isnan(ll):
            return -math.inf
        return lp + ll + log_jac

    return logpost


def _run_chain(model, logpost, T, tune, rng, adapt_every=100):
    z = model.unconstrain(model.initial_point())
    current = logpost(z)
    if not math.isfinite(current):
        raise SamplerError("log posterior is not finite at the initial point",
                           module="posterior", value=current,
                           hint="check the data for extreme values or rescale them")
    p = z.shape[0]
    log_scale = math.log(2.38 / math.sqrt(p))
    chol = np.eye(p) * 0.1
    total = tune + T
    noise = rng.standard_normal((total, p))
    log_u = np.log(rng.random(total))
    history = np.empty((tune, p))
    out = np.empty((T, p))
    accepted = 0
    for it in range(total):
        proposal = z + math.exp(log_scale) * (chol @ noise[it])
        cand = logpost(proposal)
        accept = log_u[it] < cand - current
        if accept:
            z, current = proposal, cand
        if it < tune:
            history[it] = z
            # Robbins-Monro step on the global proposal scale
            rate = 1.0 if accept else 0.0
            log_scale += (rate - TARGET_ACCEPTANCE) / math.sqrt(it + 1.0)
            if it + 1 >= 2 * adapt_every and (it + 1) % adapt_every == 0:
                window = history[(it + 1) // 2 : it + 1]
                cov = np.atleast_2d(np.cov(window, rowvar=False))
                cov += 1e-8 * np.eye(p)
                try:
                    new = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    new = None
                if new is not None and np.all(np.isfinite(new)):
                    chol = new
                    # scale now multiplies a fitted covariance
                    if it + 1 == 2 * adapt_every:
                        log_scale = math.log(2.38 / math.sqrt(p))
        else:
            out[it - tune] = z
            accepted += bool(accept)
    return out, accepted


def sample_metropolis(model, data: Dataset, T=8000, tune=4000, seed=0, chains=1):
    """Adaptive random-walk Metropolis over ``exp(log_prior + sum loglik)``.

    Runs in the model's sampler coordinates (log scales; non-centred groups
    for the hierarchical family) with a Gaussian proposal.  During the first
    ``tune`` iterations the proposal covariance follows the empirical
    covariance of the recent chain and a global scale is steered toward an
    acceptance rate of 0.234; both are frozen afterwards.  With ``chains > 1``
    independent chains (spawned seeds) are concatenated after burn-in.
    """
    if T < 1 or tune < 0 or chains < 1:
        raise InputError("need T >= 1, tune >= 0 and chains >= 1", module="posterior",
                         value=(T, tune, chains))
    logpost = _log_posterior_fn(model, data)
    seeds = np.random.SeedSequence(seed).spawn(chains) if chains > 1 else [
        np.random.SeedSequence(seed)]
    per_chain = [T // chains + (1 if c < T % chains else 0) for c in range(chains)]
    zs, acc = [], 0
    for ss, t_c in zip(seeds, per_chain):
        if t_c == 0:
            continue
        rng = np.random.Generator(np.random.PCG64(ss))
        z_c, a_c = _run_chain(model, logpost, t_c, tune, rng)
        zs.append(z_c)
        acc += a_c
    z = np.concatenate(zs)
    matrix = np.array([model.constrain(row)[0] for row in z])
    ess = {name: autocorr_ess(matrix[:, k]) for k, name in enumerate(model.columns)}
    acceptance = acc / T
    logger.debug("metropolis: acceptance %.3f, min ESS %.1f", acceptance, min(ess.values()))
    return PosteriorDraws(matrix, model, source="metropolis", acceptance=acceptance,
                          mcmc_ess=ess)


# ---------------------------------------------------------------------------
# conjugate oracle


def _design(prior_mean, data: Dataset):
    q = prior_mean.shape[0]
    if q == data.d:
        return data.X, False
    if q == data.d + 1:
        return np.column_stack([data.X, np.ones(data.n)]), True
    raise InputError("prior dimension must be d (no intercept) or d + 1 (intercept last)",
                     module="posterior", value=(q, data.d))


def conjugate_posterior(prior_mean, prior_cov, noise_sd, data: Dataset):
    """Closed-form Gaussian posterior ``(mean, cov, has_intercept)``.

    ``cov = (S0^-1 + A^T A / sigma^2)^-1`` and
    ``mean = cov (S0^-1 m0 + A^T y / sigma^2)`` with design ``A`` equal to
    ``X`` or ``[X, 1]`` when the prior has one extra (intercept) entry.
    """
    m0 = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    S0 = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    if noise_sd <= 0:
        raise InputError("noise sd must be positive", module="posterior", value=noise_sd)
    A, has_intercept = _design(m0, data)
    try:
        P0 = np.linalg.inv(S0)
        np.linalg.cholesky(S0)
    except np.linalg.LinAlgError:
        raise InputError("prior covariance is singular or not positive definite",
                         module="posterior", value=S0.tolist()) from None
    prec = P0 + A.T @ A / noise_sd**2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (P0 @ m0 + A.T @ data.y / noise_sd**2)
    return mean, cov, has_intercept


def sample_conjugate_oracle(prior_mean, prior_cov, noise_sd, data: Dataset, T, seed=0):
    """Exact i.i.d. draws from the Gaussian posterior of a known-noise model.

    The returned draws are bound to ``GaussianLinear(d, prior="normal",
    fixed_tau=noise_sd)`` (with or without intercept), which only supplies
    the likelihood downstream.
    """
    mean, cov, has_intercept = conjugate_posterior(prior_mean, prior_cov, noise_sd, data)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    L = np.linalg.cholesky(cov)
    matrix = mean + rng.standard_normal((T, mean.shape[0])) @ L.T
    model = GaussianLinear(data.d, prior="normal", fixed_tau=float(noise_sd),
                           intercept=has_intercept)
    return PosteriorDraws(matrix, model, source="conjugate-exact")
