"""Model families, pointwise log-likelihoods, log-priors and datasets.

Three families are supported:

* :class:`GaussianLinear`, ``y ~ N(theta^T x + theta0, tau^2)`` with either a
  Laplace prior on the slopes (scale ``b`` with a Gamma(1, 1) hyperprior and
  a flat intercept) or independent Normal priors, and a half-normal prior of
  scale ``c`` on ``tau``.
* :class:`Logistic`, Bernoulli outcome with a logit link and the same
  coefficient priors.
* :class:`HierarchicalGaussian`, varying intercept and varying slope
  regression over ``J`` groups with Normal hyperpriors on the group means and
  Exponential(1) priors on every scale.

Parameters travel as flat float vectors (or ``T x p`` matrices of draws)
whose columns follow ``model.columns``.  Everything downstream only calls
:meth:`loglik_matrix`, :meth:`log_prior` and the sampler transforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from cbayes._io import format_float, read_csv_rows
from cbayes.errors import InputError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LOG_2_OVER_PI = 0.5 * math.log(2.0 / math.pi)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Datum:
    x: tuple
    y: float
    group: Optional[int] = None

    @property
    def d(self):
        return len(self.x)


@dataclass(frozen=True)
class Standardization:
    """Per-column location/scale used to map raw inputs to model units.

    ``y_mean``/``y_scale`` are ``None`` when the outcome was left alone
    (classification data, or the caller asked to keep the response raw).
    Scales use the population standard deviation; constant columns get
    scale 1.
    """

    x_mean: tuple
    x_scale: tuple
    y_mean: Optional[float] = None
    y_scale: Optional[float] = None

    def apply(self, dataset: "Dataset") -> "Dataset":
        X = (dataset.X - np.asarray(self.x_mean)) / np.asarray(self.x_scale)
        y = dataset.y
        if self.y_mean is not None and dataset.kind == "regression":
            y = (y - self.y_mean) / self.y_scale
        return Dataset(X, y, dataset.group, kind=dataset.kind, standardization=self)

    def to_dict(self):
        return {
            "x_mean": list(self.x_mean),
            "x_scale": list(self.x_scale),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered covariates ``X`` (n x d), outcomes ``y`` and optional groups.

    Arrays are copied and frozen on construction.  Group labels are 1-based.
    """

    X: np.ndarray
    y: np.ndarray
    group: Optional[np.ndarray] = None
    kind: str = "regression"
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, 0)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InputError(
                "covariate rows and outcomes disagree",
                module="likelihoods",
                value=(X.shape, y.shape),
                hint="every datum needs the same number of covariates",
            )
        if self.kind not in ("regression", "classification"):
            raise InputError("unknown dataset kind", module="likelihoods", value=self.kind)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains non-finite values", module="likelihoods",
                             hint="missing values are not supported; drop or impute them")
        if self.kind == "classification" and not np.all((y == 0) | (y == 1)):
            raise InputError("classification outcomes must be 0 or 1", module="likelihoods",
                             value=sorted(set(y.tolist()) - {0.0, 1.0})[:5])
        group = self.group
        if group is not None:
            group = np.array(group).reshape(-1)
            if group.shape[0] != y.shape[0]:
                raise InputError("group column length mismatch", module="likelihoods",
                                 value=group.shape[0])
            if group.size and (np.any(group != np.round(group)) or group.min() < 1):
                raise InputError("group labels must be integers >= 1", module="likelihoods",
                                 value=group.min() if group.size else None)
            group = group.astype(np.int64)
            group.setflags(write=False)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "group", group)

    @classmethod
    def from_data(cls, data: Sequence[Datum], kind="regression"):
        data = list(data)
        if not data:
            return cls(np.zeros((0, 0)), np.zeros(0), kind=kind)
        dims = {d.d for d in data}
        if len(dims) != 1:
            raise InputError("covariate dimension differs between data", module="likelihoods",
                             value=sorted(dims))
        has_group = {d.group is not None for d in data}
        if len(has_group) != 1:
            raise InputError("group must be set on every datum or on none",
                             module="likelihoods")
        X = np.array([d.x for d in data], dtype=float).reshape(len(data), dims.pop())
        y = [d.y for d in data]
        group = [d.group for d in data] if has_group.pop() else None
        return cls(X, y, group, kind=kind)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def J(self):
        return 0 if self.group is None or not self.n else int(self.group.max())

    @property
    def data(self):
        g = self.group
        return [
            Datum(tuple(self.X[i].tolist()), float(self.y[i]), None if g is None else int(g[i]))
            for i in range(self.n)
        ]

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        g = None if self.group is None else self.group[index]
        return Dataset(self.X[index], self.y[index], g, kind=self.kind,
                       standardization=self.standardization)

    def with_outcome(self, y) -> "Dataset":
        return Dataset(self.X, y, self.group, kind=self.kind,
                       standardization=self.standardization)


def standardize(raw: Dataset, response=True) -> Dataset:
    """Center and scale every covariate (and a regression response).

    Uses the population standard deviation.  Constant columns are centred
    and keep scale 1.  Classification outcomes are never transformed, and
    ``response=False`` leaves a regression response on its raw scale.
    """
    if raw.n == 0:
        raise InputError("cannot standardize an empty dataset", module="likelihoods")
    mean = raw.X.mean(axis=0)
    scale = raw.X.std(axis=0)
    # float noise makes a constant column's sd ~1e-17 rather than 0
    scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(mean)), scale, 1.0)
    y_mean = y_scale = None
    if response and raw.kind == "regression":
        y_mean = float(raw.y.mean())
        y_scale = float(raw.y.std())
        if y_scale <= 1e-12 * max(1.0, abs(y_mean)):
            y_scale = 1.0
    record = Standardization(tuple(mean.tolist()), tuple(scale.tolist()), y_mean, y_scale)
    return record.apply(raw)


def read_dataset_csv(path, kind="regression") -> Dataset:
    """Read ``x1..xd, y[, group]`` columns; other column orders are fine."""
    header, rows, _ = read_csv_rows(path)
    if header is None:
        raise InputError("dataset file is empty", module="likelihoods", value=str(path))
    xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                   key=lambda h: int(h[1:]))
    expected = [f"x{k}" for k in range(1, len(xcols) + 1)]
    if xcols != expected:
        raise InputError("covariate columns must be x1..xd without gaps",
                         module="likelihoods", value=xcols)
    unknown = set(header) - set(xcols) - {"y", "group"}
    if unknown:
        raise InputError("unexpected dataset columns", module="likelihoods",
                         value=sorted(unknown), hint="allowed: x1..xd, y, group")
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    X = np.empty((n, len(xcols)))
    y = np.full(n, np.nan)
    group = np.empty(n) if "group" in pos else None
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != len(header):
            raise InputError("wrong number of fields", module="likelihoods",
                             value=f"line {lineno}")
        try:
            for k, h in enumerate(xcols):
                X[r, k] = float(cells[pos[h]])
            if "y" in pos:
                y[r] = float(cells[pos["y"]])
            if group is not None:
                group[r] = float(cells[pos["group"]])
        except ValueError:
            raise InputError("missing or non-numeric value", module="likelihoods",
                             value=f"line {lineno}",
                             hint="missing values are rejected; clean the file first") from None
    if "y" not in pos:
        y[:] = 0.0
    return Dataset(X, y, group, kind=kind)


def dataset_to_csv(dataset: Dataset, include_y=True) -> str:
    header = [f"x{k}" for k in range(1, dataset.d + 1)]
    if include_y:
        header.append("y")
    if dataset.group is not None:
        header.append("group")
    lines = [",".join(header)]
    for i in range(dataset.n):
        cells = [format_float(v) for v in dataset.X[i]]
        if include_y:
            cells.append(format_float(dataset.y[i]))
        if dataset.group is not None:
            cells.append(str(int(dataset.group[i])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# densities


def normal_logpdf(y, mean, sd):
    z = (y - mean) / sd
    return -0.5 * z * z - np.log(sd) - HALF_LOG_2PI


def log_sigmoid(eta):
    return -np.logaddexp(0.0, -eta)


def _laplace_logpdf(x, b):
    return -np.log(2.0 * b) - np.abs(x) / b


def _halfnormal_logpdf(x, c):
    return _HALF_LOG_2_OVER_PI - math.log(c) - 0.5 * (x / c) ** 2


def linear_predictor(theta, theta0, X):
    """``theta @ X.T + theta0`` for every draw, as a ``T x n`` matrix.

    Accumulated one covariate at a time so each entry depends only on its
    own datum; permuting rows of ``X`` permutes the columns bit-for-bit.
    """
    T = theta.shape[0]
    out = np.zeros((T, X.shape[0]))
    if theta0 is not None:
        out += theta0[:, None]
    for k in range(X.shape[1]):
        out += theta[:, k : k + 1] * X[:, k]
    return out


# ---------------------------------------------------------------------------
# layouts


@dataclass(frozen=True)
class Slot:
    name: str
    size: int
    positive: bool = False
    labels: tuple = ()

    def columns(self):
        if self.labels:
            return [f"{self.name}.{lab}" for lab in self.labels]
        if self.size == 1:
            return [self.name]
        return [f"{self.name}.{k}" for k in range(1, self.size + 1)]


def _coefficient_slots(d, intercept):
    # a single slope is still written theta.1
    slots = [Slot("theta", d, labels=(1,) if d == 1 else ())] if d else []
    if intercept:
        slots.append(Slot("theta0", 1))
    return slots


class _Model:
    family = ""
    kind = "regression"
    requires_group = False

    def __post_init__(self):
        offsets = {}
        start = 0
        for slot in self.layout:
            offsets[slot.name] = slice(start, start + slot.size)
            start += slot.size
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "n_params", start)
        mask = np.zeros(start, dtype=bool)
        for slot in self.layout:
            mask[offsets[slot.name]] = slot.positive
        object.__setattr__(self, "_positive", mask)

    @property
    def columns(self):
        return [c for slot in self.layout for c in slot.columns()]

    @property
    def positive_mask(self):
        return self._positive.copy()

    def slot(self, params, name):
        """View of one parameter block; works on vectors and draw matrices."""
        return params[..., self._offsets[name]]

    def check_params(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.n_params:
            raise InputError(
                f"{self.family} expects {self.n_params} parameters",
                module="likelihoods",
                value=params.shape[-1],
                hint="columns must follow " + ",".join(self.columns),
            )
        return params

    def check_data(self, X, group=None):
        if X.shape[1] != self.d:
            raise InputError(f"{self.family} model has d={self.d} covariates",
                             module="likelihoods", value=X.shape[1])
        if self.requires_group:
            if group is None:
                raise InputError("hierarchical model needs a group index on every datum",
                                 module="likelihoods", hint="add a 'group' column (1-based)")
            if group.size and (group.min() < 1 or group.max() > self.J):
                raise InputError(f"group index outside 1..{self.J}", module="likelihoods",
                                 value=int(group.max() if group.max() > self.J else group.min()))

    def loglik_sum(self, params, X, y, group=None):
        """Total log-likelihood of one parameter vector (sampler hot path)."""
        return float(np.sum(self.loglik_matrix(params, X, y, group)))

    def initial_point(self):
        """Prior-mean start: 0 for locations, 1 for scales."""
        return np.where(self._positive, 1.0, 0.0)

    # sampler coordinates: log-transform on positive slots
    def unconstrain(self, params):
        params = np.asarray(params, dtype=float)
        return np.where(self._positive, np.log(np.where(self._positive, params, 1.0)), params)

    def constrain(self, z):
        """Map sampler coordinates back; returns ``(params, log_jacobian)``."""
        params = np.where(self._positive, np.exp(z), z)
        return params, float(np.sum(z[self._positive]))

    def predictive_mean_sd(self, params, x, group=None):
        raise InputError(f"{self.family} has no Gaussian predictive", module="likelihoods")


@dataclass(frozen=True)
class GaussianLinear(_Model):
    """Gaussian linear regression.

    ``prior`` is ``"laplace"`` (slopes Laplace(0, b), flat intercept,
    b ~ Gamma(1, 1)) or ``"normal"`` (slopes and intercept N(0, prior_scale^2)).
    ``tau`` has a half-normal prior with scale ``c`` unless ``fixed_tau`` is
    given, in which case the noise sd is known and not a parameter.
    """

    d: int
    prior: str = "laplace"
    c: float = 1.0
    prior_scale: float = 1.0
    fixed_tau: Optional[float] = None
    intercept: bool = True
    layout: tuple = field(init=False, repr=False)

    family = "gaussian"

    def __post_init__(self):
        if self.prior not in ("laplace", "normal"):
            raise InputError("prior must be 'laplace' or 'normal'", module="likelihoods",
                             value=self.prior)
        if self.d < 0 or self.c <= 0 or self.prior_scale <= 0:
            raise InputError("invalid GaussianLinear hyperparameters", module="likelihoods",
                             value=(self.d, self.c, self.prior_scale))
        if self.fixed_tau is not None and self.fixed_tau <= 0:
            raise InputError("fixed_tau must be positive", module="likelihoods",
                             value=self.fixed_tau)
        slots = _coefficient_slots(self.d, self.intercept)
        if self.fixed_tau is None:
            slots.append(Slot("tau", 1, positive=True))
        if self.prior == "laplace":
            slots.append(Slot("b", 1, positive=True))
        object.__setattr__(self, "layout", tuple(slots))
        super().__post_init__()

    def _coefs(self, params):
        theta = self.slot(params, "theta") if self.d else params[..., :0]
        theta0 = self.slot(params, "theta0")[..., 0] if self.intercept else None
        return theta, theta0

    def _tau(self, params):
        if self.fixed_tau is not None:
            return np.full(params.shape[:-1], float(self.fixed_tau))
        return self.slot(params, "tau")[..., 0]

    def loglik_matrix(self, params, X, y, group=None):
        params = np.atleast_2d(self.check_params(params))
        self.check_data(X)
        theta, theta0 = self._coefs(params)
        mean = linear_predictor(theta, theta0, X)
        return normal_logpdf(y, mean, self._tau(params)[:, None])

    def loglik_sum(self, params, X, y, group=None):
        theta, theta0 = self._coefs(params)
        mean = X @ theta
        if theta0 is not None:
            mean = mean + theta0
        return float(np.sum(normal_logpdf(y, mean, float(self._tau(params)))))

    def predictive_mean_sd(self, params, x, group=None):
        params = np.atleast_2d(params)
        theta, theta0 = self._coefs(params)
        mean = linear_predictor(theta, theta0, np.asarray(x, float).reshape(1, -1))[:, 0]
        return mean, self._tau(params)

    def log_prior(self, params):
        params = self.check_params(params)
        if np.any(params[self._positive] <= 0):
            return -math.inf
        lp = 0.0
        theta, theta0 = self._coefs(params)
        if self.prior == "laplace":
            b = self.slot(params, "b")[0]
            lp += float(np.sum(_laplace_logpdf(theta, b))) - b  # Gamma(1, 1) on b
        else:
            lp += float(np.sum(normal_logpdf(theta, 0.0, self.prior_scale)))
            if theta0 is not None:
                lp += float(normal_logpdf(theta0, 0.0, self.prior_scale))
        if self.fixed_tau is None:
            lp += _halfnormal_logpdf(float(self._tau(params)), self.c)
        return lp


@dataclass(frozen=True)
class Logistic(_Model):
    """Logistic regression with the GaussianLinear coefficient priors."""

    d: int
    prior: str = "laplace"
    prior_scale: float = 1.0
    intercept: bool = True
    layout: tuple = field(init=False, repr=False)

    family = "logistic"
    kind = "classification"

    def __post_init__(self):
        if self.prior not in ("laplace", "normal"):
            raise InputError("prior must be 'laplace' or 'normal'", module="likelihoods",
                             value=self.prior)
        slots = _coefficient_slots(self.d, self.intercept)
        if self.prior == "laplace":
            slots.append(Slot("b", 1, positive=True))
        object.__setattr__(self, "layout", tuple(slots))
        super().__post_init__()

    _coefs = GaussianLinear._coefs

    def logits(self, params, X):
        theta, theta0 = self._coefs(np.atleast_2d(params))
        return linear_predictor(theta, theta0, X)

    def loglik_matrix(self, params, X, y, group=None):
        params = np.atleast_2d(self.check_params(params))
        self.check_data(X)
        eta = self.logits(params, X)
        return np.where(np.asarray(y) == 1, log_sigmoid(eta), log_sigmoid(-eta))

    def loglik_sum(self, params, X, y, group=None):
        theta, theta0 = self._coefs(params)
        eta = X @ theta
        if theta0 is not None:
            eta = eta + theta0
        return float(np.sum(np.where(y == 1, log_sigmoid(eta), log_sigmoid(-eta))))

    def log_prior(self, params):
        params = self.check_params(params)
        if np.any(params[self._positive] <= 0):
            return -math.inf
        theta, theta0 = self._coefs(params)
        if self.prior == "laplace":
            b = self.slot(params, "b")[0]
            return float(np.sum(_laplace_logpdf(theta, b))) - b
        lp = float(np.sum(normal_logpdf(theta, 0.0, self.prior_scale)))
        if theta0 is not None:
            lp += float(normal_logpdf(theta0, 0.0, self.prior_scale))
        return lp


@dataclass(frozen=True)
class HierarchicalGaussian(_Model):
    """Varying-intercept, varying-slope Gaussian regression over J groups.

    ``theta_j ~ N(phi, s^2)``, ``theta0_j ~ N(phi0, s0^2)``, ``phi, phi0 ~ N(0, 1)``
    and ``s, s0, tau ~ Exp(1)``.  The sampler works in non-centred
    coordinates (group offsets standardised by ``s``/``s0``) with log scales.
    """

    J: int
    d: int = 1
    layout: tuple = field(init=False, repr=False)

    family = "hierarchical"
    requires_group = True

    def __post_init__(self):
        if self.J < 1 or self.d < 1:
            raise InputError("hierarchical model needs J >= 1 and d >= 1",
                             module="likelihoods", value=(self.J, self.d))
        if self.d == 1:
            theta = Slot("theta", self.J)
            phi = Slot("phi", 1)
        else:
            labels = tuple(f"{j}.{k}" for j in range(1, self.J + 1) for k in range(1, self.d + 1))
            theta = Slot("theta", self.J * self.d, labels=labels)
            phi = Slot("phi", self.d)
        slots = (
            theta,
            Slot("theta0", self.J, labels=tuple(range(1, self.J + 1))),
            phi,
            Slot("phi0", 1),
            Slot("s", 1, positive=True),
            Slot("s0", 1, positive=True),
            Slot("tau", 1, positive=True),
        )
        object.__setattr__(self, "layout", slots)
        super().__post_init__()

    def group_marginal(self, params, j):
        """Views ``(theta_j, theta0_j, tau)`` for group ``j`` (1-based).

        Only these enter group ``j``'s likelihood, so the add-one-in weights
        need nothing else.  Slicing a draw matrix returns views, not copies.
        """
        if not 1 <= j <= self.J:
            raise InputError(f"unknown group {j}", module="likelihoods",
                             hint=f"groups are 1..{self.J}")
        params = np.atleast_2d(params)
        base = self._offsets["theta"].start
        theta = params[:, base + (j - 1) * self.d : base + j * self.d]
        c0 = self._offsets["theta0"].start + j - 1
        theta0 = params[:, c0]
        tau = params[:, self._offsets["tau"].start]
        return theta, theta0, tau

    def loglik_matrix(self, params, X, y, group=None):
        params = np.atleast_2d(self.check_params(params))
        group = None if group is None else np.asarray(group)
        self.check_data(X, group)
        y = np.asarray(y, dtype=float)
        out = np.empty((params.shape[0], X.shape[0]))
        for j in np.unique(group):
            cols = np.flatnonzero(group == j)
            theta, theta0, tau = self.group_marginal(params, int(j))
            mean = linear_predictor(theta, theta0, X[cols])
            out[:, cols] = normal_logpdf(y[cols], mean, tau[:, None])
        return out

    def loglik_sum(self, params, X, y, group=None):
        theta, theta0, _, _, _, _, tau = self._blocks(params)
        idx = np.asarray(group) - 1
        mean = np.einsum("ik,ik->i", X, theta[idx]) + theta0[idx]
        return float(np.sum(normal_logpdf(y, mean, tau)))

    def predictive_mean_sd(self, params, x, group=None):
        if group is None:
            raise InputError("hierarchical predictive needs a group", module="likelihoods")
        theta, theta0, tau = self.group_marginal(params, int(group))
        mean = linear_predictor(theta, theta0, np.asarray(x, float).reshape(1, -1))[:, 0]
        return mean, tau

    def _blocks(self, params):
        theta = self.slot(params, "theta").reshape(params.shape[:-1] + (self.J, self.d))
        return (
            theta,
            self.slot(params, "theta0"),
            self.slot(params, "phi"),
            self.slot(params, "phi0")[..., 0],
            self.slot(params, "s")[..., 0],
            self.slot(params, "s0")[..., 0],
            self.slot(params, "tau")[..., 0],
        )

    def log_prior(self, params):
        params = self.check_params(params)
        if np.any(params[self._positive] <= 0):
            return -math.inf
        J, d = self.J, self.d
        Jd = J * d
        theta = params[:Jd].reshape(J, d)
        theta0 = params[Jd : Jd + J]
        phi = params[Jd + J : Jd + J + d]
        phi0, s, s0, tau = (float(v) for v in params[Jd + J + d :])
        # summed normal log densities written out to avoid per-call overhead
        zt = (theta - phi) / s
        z0 = (theta0 - phi0) / s0
        quad = float(np.dot(zt.ravel(), zt.ravel()) + np.dot(z0, z0) + np.dot(phi, phi))
        lp = -0.5 * (quad + phi0 * phi0) - Jd * math.log(s) - J * math.log(s0)
        lp -= (Jd + J + d + 1) * HALF_LOG_2PI
        return lp - s - s0 - tau

    def unconstrain(self, params):
        params = np.asarray(params, dtype=float)
        theta, theta0, phi, phi0, s, s0, tau = self._blocks(params)
        eta = (theta - phi) / s
        eta0 = (theta0 - phi0) / s0
        return np.concatenate([eta.ravel(), eta0, phi, [phi0, math.log(s), math.log(s0),
                                                       math.log(tau)]])

    def constrain(self, z):
        Jd = self.J * self.d
        eta = z[:Jd].reshape(self.J, self.d)
        eta0 = z[Jd : Jd + self.J]
        phi = z[Jd + self.J : Jd + self.J + self.d]
        phi0, ls, ls0, ltau = z[Jd + self.J + self.d :]
        s, s0 = math.exp(ls), math.exp(ls0)
        theta = phi + s * eta
        theta0 = phi0 + s0 * eta0
        params = np.concatenate([theta.ravel(), theta0, phi, [phi0, s, s0, math.exp(ltau)]])
        log_jac = ls + ls0 + ltau + Jd * ls + self.J * ls0
        return params, log_jac


# ---------------------------------------------------------------------------
# spec-level helpers


def log_likelihood(model, params, datum: Datum) -> float:
    """``log f_params(y | x)`` for a single datum."""
    x = np.asarray(datum.x, dtype=float).reshape(1, -1)
    group = None if datum.group is None else np.array([datum.group])
    params = model.check_params(params)
    if params.ndim != 1:
        raise InputError("log_likelihood takes one parameter vector", module="likelihoods")
    if model.family == "gaussian" and model.fixed_tau is None:
        if model.slot(params, "tau")[0] <= 0:
            raise InputError("tau must be positive", module="likelihoods",
                             value=float(model.slot(params, "tau")[0]))
    if model.family == "hierarchical" and model.slot(params, "tau")[0] <= 0:
        raise InputError("tau must be positive", module="likelihoods",
                         value=float(model.slot(params, "tau")[0]))
    return float(model.loglik_matrix(params, x, np.array([datum.y]), group)[0, 0])


def log_prior(model, params) -> float:
    return model.log_prior(params)


def model_from_dict(spec: dict):
    """Build a model from ``{"family": ..., **hyperparameters}``."""
    spec = dict(spec)
    family = spec.pop("family")
    cls = {"gaussian": GaussianLinear, "logistic": Logistic,
           "hierarchical": HierarchicalGaussian}.get(family)
    if cls is None:
        raise InputError("unknown model family", module="likelihoods", value=family,
                         hint="use gaussian, logistic or hierarchical")
    return cls(**spec)


def model_to_dict(model) -> dict:
    out = {"family": model.family}
    for name in model.__dataclass_fields__:
        if name != "layout":
            out[name] = getattr(model, name)
    return out
