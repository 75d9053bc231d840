"""Simulation scenarios and the repeated train/test coverage harness.

Seeding rule: repeat ``r`` of a run with master seed ``s`` simulates its
data from ``SeedSequence([s, r, 0])``, runs the sampler from
``SeedSequence([s, r, 1])`` and splits for split conformal with
``SeedSequence([s, r, 2])``.  Any repeat can therefore be rerun alone, and
runs that differ only in the model prior see identical data.
"""

from __future__ import annotations

import concurrent.futures
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from cbayes._io import FORMAT_VERSION
from cbayes.baselines import (SplitConformal, bayes_class_set, bayes_interval,
                              conformal_class_report)
from cbayes.conformal import ConformalBayes, ConformalGrid, default_grid
from cbayes.errors import InputError, SamplerError
from cbayes.hierarchy import GroupConformalBayes, GroupedView
from cbayes.likelihoods import Dataset, Datum, GaussianLinear, HierarchicalGaussian, Logistic
from cbayes.posterior import sample_metropolis

logger = logging.getLogger(__name__)

KINDS = ("hier_scenario1", "hier_scenario2", "linear_wellspec", "linear_misspec_tau",
         "logistic_sim")

PAPER_HIER = {
    "theta": (1.33, -0.77, -0.32, -0.99, -1.07),
    "tau": (1.24, 2.30, 0.76, 0.28, 1.11),
}

METHODS = ("bayes", "cb", "split")


@dataclass(frozen=True)
class ScenarioSpec:
    """Data-generating process plus the model fitted to it.

    Hierarchical kinds use ``J`` groups of ``n_j`` train and ``n_j`` test
    points; the others use ``n`` train and ``n_test`` test points in ``d``
    dimensions.  ``fixed_params`` (``theta`` and, for scenario 2, ``tau``)
    replaces per-repeat parameter draws.  ``linear_misspec_tau`` simulates
    exactly like ``linear_wellspec`` but fits a half-normal ``tau`` prior
    of scale ``misspec_factor * noise_sd``.
    """

    kind: str
    J: int = 5
    n_j: int = 10
    n: int = 100
    n_test: int = 1
    d: int = 3
    fixed_params: Optional[dict] = None
    noise_sd: float = 1.0
    misspec_factor: float = 0.1
    logistic_scale: float = 2.0
    n_grid: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError("unknown scenario kind", module="bench", value=self.kind,
                             hint="one of " + ", ".join(KINDS))
        fp = self.fixed_params
        if fp is not None:
            fp = {k: tuple(float(v) for v in vals) for k, vals in dict(fp).items()}
            object.__setattr__(self, "fixed_params", fp)
            if self.hierarchical:
                for key, vals in fp.items():
                    if len(vals) != self.J:
                        raise InputError(f"fixed {key} must have J={self.J} entries",
                                         module="bench", value=len(vals))
            elif "theta" in fp and len(fp["theta"]) != self.d:
                raise InputError(f"fixed theta must have d={self.d} entries", module="bench",
                                 value=len(fp["theta"]))

    @property
    def hierarchical(self):
        return self.kind.startswith("hier")

    @property
    def classification(self):
        return self.kind == "logistic_sim"

    def model(self):
        if self.hierarchical:
            return HierarchicalGaussian(self.J)
        if self.classification:
            return Logistic(self.d)
        c = self.noise_sd
        if self.kind == "linear_misspec_tau":
            c = self.misspec_factor * self.noise_sd
        return GaussianLinear(self.d, c=c)

    def grid(self, train: Dataset) -> ConformalGrid:
        if self.classification:
            return ConformalGrid.classification()
        if self.hierarchical:
            return ConformalGrid.regression(-10.0, 10.0, self.n_grid)
        return default_grid(train, self.n_grid, pad_scale=self.noise_sd)

    def default_tune(self):
        return 8000 if self.hierarchical else 4000


def paper_hier(scenario=2, **kw) -> ScenarioSpec:
    """Preset with the fixed group slopes (and scales) used for the grouped tables."""
    fixed = {"theta": PAPER_HIER["theta"]}
    if scenario == 2:
        fixed["tau"] = PAPER_HIER["tau"]
    kind = "hier_scenario2" if scenario == 2 else "hier_scenario1"
    kw = {"J": 5, "n_j": 10, **kw}
    return ScenarioSpec(kind, fixed_params=fixed, **kw)


def _rng(entropy):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def simulate(spec: ScenarioSpec, seed=None):
    """Draw ``(train, test)`` for one repeat.

    ``seed`` is anything ``numpy.random.SeedSequence`` accepts; it defaults
    to ``spec.seed``.
    """
    rng = _rng(spec.seed if seed is None else seed)
    fp = spec.fixed_params or {}
    if spec.hierarchical:
        J = spec.J
        theta = np.array(fp["theta"]) if "theta" in fp else rng.standard_normal(J)
        if spec.kind == "hier_scenario2":
            tau = np.array(fp["tau"]) if "tau" in fp else rng.exponential(1.0, J)
        else:
            tau = np.ones(J)
        out = []
        for _ in range(2):
            g = np.repeat(np.arange(1, J + 1), spec.n_j)
            x = rng.standard_normal(g.shape[0])
            y = theta[g - 1] * x + tau[g - 1] * rng.standard_normal(g.shape[0])
            out.append(Dataset(x[:, None], y, g))
        return out[0], out[1]
    d = spec.d
    if spec.classification:
        theta = (np.array(fp["theta"]) if "theta" in fp
                 else spec.logistic_scale * rng.standard_normal(d))
    else:
        theta = np.array(fp["theta"]) if "theta" in fp else rng.standard_normal(d)
    total = spec.n + spec.n_test
    X = rng.standard_normal((total, d))
    eta = X @ theta
    if spec.classification:
        y = (rng.random(total) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        kind = "classification"
    else:
        y = eta + spec.noise_sd * rng.standard_normal(total)
        kind = "regression"
    train = Dataset(X[: spec.n], y[: spec.n], kind=kind)
    test = Dataset(X[spec.n :], y[spec.n :], kind=kind)
    return train, test


# ---------------------------------------------------------------------------
# one repeat


def _test_points(test: Dataset):
    return test.data


def _evaluate(spec, method, model, draws, train, test, grid, alpha, split_seed):
    """Per-test-point outcomes for one method: list of dicts."""
    rows = []
    points = _test_points(test)
    if method == "cb":
        if spec.hierarchical:
            eng = GroupConformalBayes(model, draws, GroupedView.of(train, spec.J))
            for p in points:
                prof, pset = eng.conformal_set(p.x, p.group, grid, alpha)
                cov_g, cov_e = eng.engine(p.group).exact_rank_coverage(p, grid, alpha, prof)
                rows.append(dict(group=p.group, grid=cov_g, exact=cov_e, length=pset.measure))
        else:
            eng = ConformalBayes(model, draws, train)
            for p in points:
                prof, pset = eng.conformal_set(p.x, grid, alpha)
                if spec.classification:
                    rep = conformal_class_report(prof, alpha)
                    hit = rep.contains(p.y)
                    rows.append(dict(group=None, grid=hit, exact=hit, length=rep.size,
                                     labels=rep.labels))
                else:
                    cov_g, cov_e = eng.exact_rank_coverage(p, grid, alpha, prof)
                    rows.append(dict(group=None, grid=cov_g, exact=cov_e, length=pset.measure))
    elif method == "bayes":
        for p in points:
            if spec.classification:
                rep = bayes_class_set(draws, model, p.x, alpha)
                hit = rep.contains(p.y)
                rows.append(dict(group=None, grid=hit, exact=hit, length=rep.size,
                                 labels=rep.labels))
            else:
                ci = bayes_interval(draws, model, p.x, grid, alpha, group=p.group)
                hit = ci.contains(p.y)
                rows.append(dict(group=p.group, grid=hit, exact=hit, length=ci.length))
    elif method == "split":
        if spec.hierarchical or spec.classification:
            raise InputError("split conformal applies to ungrouped regression only",
                             module="bench", value=spec.kind)
        sc = SplitConformal(train, alpha, seed=split_seed)
        for p in points:
            iv = sc.interval(p.x)
            hit = iv.contains(p.y)
            rows.append(dict(group=None, grid=hit, exact=hit, length=iv.length))
    else:
        raise InputError("unknown method", module="bench", value=method,
                         hint="methods: " + ", ".join(METHODS))
    return rows


def _summarise_points(rows, exact):
    """Per-group averages for one method in one repeat."""
    keys = ["overall"]
    if any(r["group"] is not None for r in rows):
        keys += sorted({r["group"] for r in rows})
    out = {}
    for key in keys:
        sel = rows if key == "overall" else [r for r in rows if r["group"] == key]
        grid_cov = float(np.mean([r["grid"] for r in sel]))
        exact_cov = float(np.mean([r["exact"] for r in sel]))
        rec = {
            "coverage": exact_cov if exact else grid_cov,
            "coverage_grid": grid_cov,
            "coverage_exact": exact_cov,
            "length": float(np.mean([r["length"] for r in sel])),
        }
        if "labels" in sel[0]:
            sizes = np.array([len(r["labels"]) for r in sel])
            single = sizes == 1
            rec["empty_rate"] = float(np.mean(sizes == 0))
            rec["both_rate"] = float(np.mean(sizes == 2))
            rec["singleton_rate"] = float(np.mean(single))
            rec["misclassification"] = (
                float(1.0 - np.mean([r["grid"] for r, s in zip(sel, single) if s]))
                if single.any() else None)
        out[str(key)] = rec
    return out


def run_repeat(spec, methods, alpha, r, T, tune, seed, exact=False):
    """Simulate, sample and evaluate every method for repeat ``r``."""
    train, test = simulate(spec, [seed, r, 0])
    model = spec.model()
    grid = spec.grid(train)
    t0 = time.perf_counter()
    try:
        draws = sample_metropolis(model, train, T=T, tune=tune, seed=[seed, r, 1])
    except SamplerError as exc:
        logger.error("repeat %d: sampler failed (reproduce with seed=%s, repeat=%d): %s",
                     r, seed, r, exc.describe())
        return {"repeat": r, "failed": True, "error": exc.describe()}
    sampling_time = time.perf_counter() - t0
    results = {}
    for method in methods:
        t0 = time.perf_counter()
        rows = _evaluate(spec, method, model, draws, train, test, grid, alpha, [seed, r, 2])
        elapsed = time.perf_counter() - t0
        summary = _summarise_points(rows, exact)
        summary["overall"]["time"] = elapsed
        results[method] = summary
    return {
        "repeat": r,
        "failed": False,
        "sampling_time": sampling_time,
        "acceptance": draws.acceptance,
        "min_mcmc_ess": draws.min_mcmc_ess,
        "methods": results,
    }


# ---------------------------------------------------------------------------
# report


def _mean_se(values):
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


@dataclass
class CoverageReport:
    """Per-repeat results plus summaries recomputed from them on demand.

    ``se`` is the sample standard deviation of the per-repeat averages over
    ``sqrt(R)``; a coverage cell is flagged when it misses ``1 - alpha`` by
    more than 3 se.
    """

    spec: dict
    methods: list
    alpha: float
    R: int
    T: int
    tune: int
    seed: int
    exact: bool
    repeats: list = field(default_factory=list)
    run_config: Optional[dict] = None

    @property
    def target(self):
        return 1.0 - self.alpha

    @property
    def ok_repeats(self):
        return [r for r in self.repeats if not r["failed"]]

    @property
    def failed_repeats(self):
        return [r["repeat"] for r in self.repeats if r["failed"]]

    def groups(self):
        keys = []
        for rep in self.ok_repeats:
            for m in self.methods:
                for k in rep["methods"][m]:
                    if k not in keys:
                        keys.append(k)
        return sorted(keys, key=lambda k: (k != "overall", int(k) if k.isdigit() else 0))

    def summary(self):
        out = {}
        reps = self.ok_repeats
        metrics = ("coverage", "coverage_grid", "coverage_exact", "length", "time",
                   "empty_rate", "both_rate", "singleton_rate", "misclassification")
        for m in self.methods:
            out[m] = {}
            for g in self.groups():
                cells = [rep["methods"][m].get(g) for rep in reps]
                cells = [c for c in cells if c is not None]
                if not cells:
                    continue
                entry = {}
                for key in metrics:
                    if key in cells[0]:
                        mean, se = _mean_se(c.get(key) for c in cells)
                        entry[key] = {"mean": mean, "se": se}
                cov = entry["coverage"]
                se = cov["se"] if cov["se"] is not None and not math.isnan(cov["se"]) else 0.0
                entry["miss"] = bool(abs(cov["mean"] - self.target) > 3.0 * se)
                out[m][g] = entry
        samp = _mean_se(r["sampling_time"] for r in reps)
        out["_sampling_time"] = {"mean": samp[0], "se": samp[1]}
        return out

    def to_dict(self, include_timing=True):
        reps = self.repeats
        summ = self.summary()
        if not include_timing:
            reps = [_strip_timing(r) for r in reps]
            summ = _strip_timing(summ)
        return {
            "format_version": FORMAT_VERSION,
            "config": {"spec": self.spec, "methods": self.methods, "alpha": self.alpha,
                       "R": self.R, "T": self.T, "tune": self.tune, "seed": self.seed,
                       "coverage_convention": "exact" if self.exact else "grid",
                       "run": self.run_config},
            "target": self.target,
            "failed_repeats": self.failed_repeats,
            "summary": summ,
            "repeats": reps,
        }

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def long_rows(self):
        """``(repeat, method, group, coverage, length, time)`` rows."""
        rows = []
        for rep in self.ok_repeats:
            for m in self.methods:
                overall_time = rep["methods"][m]["overall"].get("time")
                for g, cell in rep["methods"][m].items():
                    rows.append((rep["repeat"], m, g, cell["coverage"], cell["length"],
                                 overall_time if g == "overall" else None))
        return rows

    def to_csv(self):
        buf = io.StringIO()
        buf.write("# " + json.dumps({"format_version": FORMAT_VERSION,
                                     "config": self.to_dict()["config"]}, sort_keys=True)
                  + "\n")
        buf.write("repeat,method,group,coverage,length,time\n")
        for r, m, g, c, length, t in self.long_rows():
            buf.write(f"{r},{m},{g},{c!r},{length!r},{'' if t is None else repr(t)}\n")
        return buf.getvalue()

    def to_table(self):
        """Aligned text table: coverage and length per group, then run-time."""
        summ = self.summary()
        groups = self.groups()
        header = ["", "Group"] + self.methods
        lines = []

        def cell(entry, key, digits, flag=False):
            if entry is None or key not in entry or entry[key]["mean"] is None:
                return "/"
            mean, se = entry[key]["mean"], entry[key]["se"]
            se_txt = "nan" if se is None or math.isnan(se) else f"{se:.{digits}f}"
            txt = f"{mean:.{digits}f} ({se_txt})"
            if flag and entry.get("miss"):
                txt += " *"
            return txt

        def label(g):
            return "Overall" if g == "overall" else g

        ordered = [g for g in groups if g != "overall"] + ["overall"]
        rows_spec = [("Coverage", "coverage", 3, True), ("Length", "length", 2, False)]
        if self.spec.get("kind") == "logistic_sim":
            rows_spec += [("Empty", "empty_rate", 3, False), ("Both", "both_rate", 3, False)]
        for title, key, digits, flag in rows_spec:
            for i, g in enumerate(ordered):
                lines.append([title if i == 0 else "", label(g)] +
                             [cell(summ[m].get(g), key, digits, flag) for m in self.methods])
        lines.append(["Run-time (s)", "Overall"] +
                     [cell(summ[m].get("overall"), "time", 3) for m in self.methods])
        widths = [max(len(str(row[k])) for row in [header] + lines) for k in range(len(header))]
        fmt = lambda row: "  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip()
        out = [fmt(header), "-" * (sum(widths) + 2 * (len(widths) - 1))]
        out += [fmt(row) for row in lines]
        samp = summ["_sampling_time"]
        out.append("")
        out.append(f"target coverage {self.target:.3f}; R={len(self.ok_repeats)}"
                   f" ({len(self.failed_repeats)} failed); '*' = not within 3 se of target")
        if samp["mean"] is not None:
            out.append(f"sampling time per repeat {samp['mean']:.2f}s (excluded above)")
        return "\n".join(out) + "\n"


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items()
                if k not in ("time", "sampling_time", "_sampling_time")}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def run_benchmark(spec: ScenarioSpec, methods=("bayes", "cb"), alpha=0.2, R=50, T=8000,
                  tune=None, seed=0, exact=False, workers=1) -> CoverageReport:
    """Repeat simulate -> sample -> evaluate ``R`` times and collect a report.

    Repeats run in up to ``workers`` processes; results are keyed by repeat
    index, so the report does not depend on scheduling.  Reported coverage
    is membership of the nearest grid point unless ``exact`` is set.
    """
    if R < 2:
        raise InputError("need at least two repeats for standard errors", module="bench",
                         value=R)
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)", module="bench", value=alpha)
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise InputError("unknown method", module="bench", value=m,
                             hint="methods: " + ", ".join(METHODS))
    tune = spec.default_tune() if tune is None else tune
    args = [(spec, methods, alpha, r, T, tune, seed, exact) for r in range(R)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_repeat_args, args))
    else:
        results = [_run_repeat_args(a) for a in args]
    results.sort(key=lambda rep: rep["repeat"])
    report = CoverageReport(_spec_dict(spec), methods, alpha, R, T, tune, seed, exact, results)
    if len(report.ok_repeats) < 2:
        raise SamplerError("fewer than two repeats succeeded", module="bench",
                           value=report.failed_repeats)
    return report


def _run_repeat_args(args):
    return run_repeat(*args)


def _spec_dict(spec):
    d = asdict(spec)
    if d["fixed_params"] is not None:
        d["fixed_params"] = {k: list(v) for k, v in d["fixed_params"].items()}
    return d


SCENARIOS = {
    "paper-hier-1": lambda: paper_hier(1),
    "paper-hier-2": lambda: paper_hier(2),
    "hier-1": lambda: ScenarioSpec("hier_scenario1"),
    "hier-2": lambda: ScenarioSpec("hier_scenario2"),
    "linear-wellspec": lambda: ScenarioSpec("linear_wellspec"),
    "linear-misspec": lambda: ScenarioSpec("linear_misspec_tau"),
    "logistic": lambda: ScenarioSpec("logistic_sim", n=100, n_test=50, d=5),
}


def scenario(name, **overrides) -> ScenarioSpec:
    if name not in SCENARIOS:
        raise InputError("unknown scenario", module="bench", value=name,
                         hint="one of " + ", ".join(SCENARIOS))
    spec = SCENARIOS[name]()
    return replace(spec, **overrides) if overrides else spec
