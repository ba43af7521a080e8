"""Seeded simulation bench for the full selection pipeline.

Each scenario draws censored survival data from a Cox model, runs the
plain lasso baseline on the original covariates and the knockoff
pipeline on the augmented design, and aggregates false-discovery and
power rates across replications.  Every random draw is keyed by
(seed, replication, stream), so reports are identical no matter how the
replications are scheduled.
"""

import itertools
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ._rng import draw_subseed, rep_rng
from .coxnet import SurvivalDataset, cross_validate, standardize_design
from .errors import CalibrationFailed, DataError, NumericalError, ScenarioError, TooManyFailures
from .filter import KNOCKOFF, KNOCKOFF_PLUS, knockoff_threshold, lcd_statistics, score
from .knockoffs import build_sampler, equicorrelated_s, fit_moments, sample_knockoffs

COX_LASSO = "cox_lasso"
METHODS = (COX_LASSO, KNOCKOFF, KNOCKOFF_PLUS)

# stream tags for per-replication generators
_S_COVARIATES = 0
_S_SURVIVAL = 1
_S_CENSORING = 2
_S_KNOCKOFF = 3
_S_CV_BASELINE = 4
_S_CV_KNOCKOFF = 5
_S_CALIBRATION = 6
_CALIBRATION_REP_BASE = 1 << 40

BETA_CASES = {
    "case1": (5.0, 10),
    "case2": (2.0, 10),
    "case3": (2.0, 20),
    "null": (0.0, 0),
}

COV_DISTS = ("gaussian_ar", "scaled_t")
BASELINES = ("constant", "linear")
CENSORINGS = ("independent_exponential", "covariate_dependent")


@dataclass(frozen=True)
class Scenario:
    n: int
    p: int
    beta_case: str = "case2"
    cov_dist: str = "gaussian_ar"
    rho: float = 0.5
    t_dof: float = 3.0
    baseline: str = "constant"
    censoring: str = "independent_exponential"
    target_rate: float = 0.2
    gamma: float = 2.0
    q: float = 0.2
    replications: int = 100
    seed: int = 0
    folds: int = 10

    def __post_init__(self):
        if self.beta_case not in BETA_CASES:
            raise ScenarioError(f"unknown beta_case {self.beta_case!r}")
        if self.cov_dist not in COV_DISTS:
            raise ScenarioError(f"unknown cov_dist {self.cov_dist!r}")
        if self.baseline not in BASELINES:
            raise ScenarioError(f"unknown baseline {self.baseline!r}")
        if self.censoring not in CENSORINGS:
            raise ScenarioError(f"unknown censoring {self.censoring!r}")
        if BETA_CASES[self.beta_case][1] > self.p:
            raise ScenarioError("beta support exceeds p")
        if not 0.0 < self.target_rate < 1.0:
            raise ScenarioError("target_rate must lie in (0, 1)")
        if not 0.0 < self.q < 1.0:
            raise ScenarioError("q must lie in (0, 1)")
        if self.n < 4 or self.p < 1 or self.replications < 1:
            raise ScenarioError("n, p, replications must be positive")


def beta_vector(scenario):
    value, support = BETA_CASES[scenario.beta_case]
    beta = np.zeros(scenario.p)
    beta[:support] = value
    return beta


def true_support(scenario):
    return np.arange(BETA_CASES[scenario.beta_case][1])


def _ar_cholesky(p, rho):
    idx = np.arange(p)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(sigma)


def _draw_covariates(scenario, rng, n):
    chol = _ar_cholesky(scenario.p, scenario.rho)
    u = rng.standard_normal((n, scenario.p)) @ chol.T
    if scenario.cov_dist == "gaussian_ar":
        return u
    nu = scenario.t_dof
    gam = rng.gamma(shape=nu / 2.0, scale=2.0 / nu, size=n)
    return np.sqrt((nu - 2.0) / nu) * u / np.sqrt(gam)[:, None]


def gen_covariates(scenario, rep_index):
    """Covariate rows for one replication, from its own stream."""
    rng = rep_rng(scenario.seed, rep_index, _S_COVARIATES)
    return _draw_covariates(scenario, rng, scenario.n)


def gen_survival(x, beta, baseline, rng):
    """Latent event times by inverting the cumulative hazard.

    constant: hazard 0.5 exp(beta'x), so T is exponential;
    linear:   hazard 2t exp(beta'x), so T = sqrt(E exp(-beta'x)).
    """
    eta = x @ beta
    u = np.maximum(rng.uniform(size=x.shape[0]), 1e-300)
    e = -np.log(u)
    if baseline == "constant":
        return 2.0 * e * np.exp(-eta)
    if baseline == "linear":
        return np.sqrt(e * np.exp(-eta))
    raise ScenarioError(f"unknown baseline {baseline!r}")


def _draw_censoring(x, scenario, param, rng):
    if scenario.censoring == "independent_exponential":
        u = rng.exponential(scale=1.0 / param, size=x.shape[0])
    else:
        gamma_vec = np.zeros(scenario.p)
        gamma_vec[: min(2, scenario.p)] = scenario.gamma
        u = rng.exponential(scale=param * np.exp(x @ gamma_vec))
    return np.maximum(u, 1e-300)


def _censoring_rate(scenario, beta, param, eval_index, n_draws=100_000, chunk=20_000):
    rng = rep_rng(scenario.seed, _CALIBRATION_REP_BASE + eval_index, _S_CALIBRATION)
    censored = 0
    drawn = 0
    while drawn < n_draws:
        k = min(chunk, n_draws - drawn)
        x = _draw_covariates(scenario, rng, k)
        t = gen_survival(x, beta, scenario.baseline, rng)
        u = _draw_censoring(x, scenario, param, rng)
        censored += int(np.count_nonzero(t > u))
        drawn += k
    return censored / n_draws


def calibrate_censoring(scenario, tol=0.01):
    """Rate parameter hitting the scenario's target censoring rate.

    Log-space bisection on a Monte-Carlo estimate with fresh draws per
    evaluation; returns the exponential rate (independent censoring) or
    the mean multiplier c (covariate-dependent censoring).  Bisection
    continues past the rate tolerance, with more draws per evaluation,
    until the bracket itself is tight; this pins the parameter even
    where the rate responds slowly to it.
    """
    beta = beta_vector(scenario)
    counter = itertools.count()
    increasing = scenario.censoring == "independent_exponential"

    def excess(param, n_draws=100_000):
        return _censoring_rate(scenario, beta, param, next(counter), n_draws) - scenario.target_rate

    lo = hi = 1.0
    f0 = excess(1.0)
    if (f0 > 0) == increasing:
        for _ in range(60):
            hi = lo
            lo /= 2.0
            if (excess(lo) > 0) != increasing:
                break
        else:
            raise CalibrationFailed("no bracket below the starting rate")
    else:
        for _ in range(60):
            lo = hi
            hi *= 2.0
            if (excess(hi) > 0) == increasing:
                break
        else:
            raise CalibrationFailed("no bracket above the starting rate")

    for _ in range(120):
        tight = hi / lo <= 1.02
        mid = float(np.sqrt(lo * hi))
        fm = excess(mid, n_draws=400_000 if tight else 100_000)
        if tight and abs(fm) <= tol:
            return mid
        if (fm > 0) == increasing:
            hi = mid
        else:
            lo = mid
    raise CalibrationFailed("bisection did not reach the target rate")


# ---------------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RepResult:
    rep_index: int
    achieved_censoring: float
    runtime: float
    records: dict          # method -> (fdp, tdp, mfdr_summand, n_selected)
    failure: str = None


def _method_metrics(selected, truth, p, q):
    if truth.size == 0:
        n_sel = len(selected)
        fdp = 1.0 if n_sel else 0.0
        return (fdp, np.nan, n_sel / (n_sel + 1.0 / q), n_sel)
    m = score(selected, truth, p, q)
    return (m.fdp, m.tdp, m.mfdr_summand, m.n_selected)


def _run_rep(scenario, rep, cens_param, beta, truth):
    t0 = time.perf_counter()
    x = gen_covariates(scenario, rep)
    t_lat = gen_survival(x, beta, scenario.baseline, rep_rng(scenario.seed, rep, _S_SURVIVAL))
    u = _draw_censoring(x, scenario, cens_param, rep_rng(scenario.seed, rep, _S_CENSORING))
    y = np.minimum(t_lat, u)
    delta = (t_lat <= u).astype(float)
    achieved = 1.0 - float(delta.mean())

    def failed(reason):
        return RepResult(rep, achieved, time.perf_counter() - t0, {}, failure=reason)

    if delta.sum() < 2:
        return failed("fewer than 2 events")
    try:
        xs = standardize_design(x)
        base = SurvivalDataset(y, delta, xs)
        fit_base = cross_validate(
            base, scenario.folds,
            rng_seed=draw_subseed(rep_rng(scenario.seed, rep, _S_CV_BASELINE)),
        )
        if not fit_base.converged[fit_base.chosen_lambda]:
            return failed("baseline fit did not converge")
        sel_lasso = np.flatnonzero(fit_base.chosen_coefs != 0.0)

        moments = fit_moments(x)
        sampler = build_sampler(moments, equicorrelated_s(moments))
        aug = sample_knockoffs(
            sampler, x, draw_subseed(rep_rng(scenario.seed, rep, _S_KNOCKOFF))
        )
        zs = standardize_design(aug.z)
        augset = SurvivalDataset(y, delta, zs)
        fit_aug = cross_validate(
            augset, scenario.folds,
            rng_seed=draw_subseed(rep_rng(scenario.seed, rep, _S_CV_KNOCKOFF)),
        )
        if not fit_aug.converged[fit_aug.chosen_lambda]:
            return failed("augmented fit did not converge")
        stats = lcd_statistics(fit_aug, fit_aug.chosen_lambda, scenario.p)
        sel_ko = knockoff_threshold(stats.w, scenario.q, plus=False).selected
        sel_kp = knockoff_threshold(stats.w, scenario.q, plus=True).selected
    except (DataError, NumericalError) as exc:
        return failed(f"{type(exc).__name__}: {exc}")

    records = {
        COX_LASSO: _method_metrics(sel_lasso, truth, scenario.p, scenario.q),
        KNOCKOFF: _method_metrics(sel_ko, truth, scenario.p, scenario.q),
        KNOCKOFF_PLUS: _method_metrics(sel_kp, truth, scenario.p, scenario.q),
    }
    return RepResult(rep, achieved, time.perf_counter() - t0, records)


@dataclass(frozen=True)
class ScenarioReport:
    scenario: Scenario
    censoring_param: float
    per_rep: tuple                 # included RepResults, ordered by rep_index
    excluded: tuple                # (rep_index, reason) pairs
    empirical_fdr: dict
    empirical_power: dict
    empirical_mfdr: dict
    achieved_censoring: float
    mean_runtime: float

    @property
    def n_included(self):
        return len(self.per_rep)


def run_scenario(scenario, n_jobs=1, censoring_param=None):
    """Run all replications of a scenario and aggregate the rates."""
    beta = beta_vector(scenario)
    truth = true_support(scenario)
    if censoring_param is None:
        censoring_param = calibrate_censoring(scenario)

    reps = range(scenario.replications)
    if n_jobs == 1:
        results = [_run_rep(scenario, r, censoring_param, beta, truth) for r in reps]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_rep)(scenario, r, censoring_param, beta, truth) for r in reps
        )
    results.sort(key=lambda r: r.rep_index)

    included = tuple(r for r in results if r.failure is None)
    excluded = tuple((r.rep_index, r.failure) for r in results if r.failure is not None)
    if len(excluded) > 0.05 * scenario.replications:
        raise TooManyFailures(len(excluded), scenario.replications)

    fdr, power, mfdr = {}, {}, {}
    for method in METHODS:
        if included:
            rows = np.array([r.records[method] for r in included])
            fdr[method] = float(rows[:, 0].mean())
            power[method] = float(rows[:, 1].mean()) if truth.size else float("nan")
            mfdr[method] = float(rows[:, 2].mean())
        else:
            fdr[method] = power[method] = mfdr[method] = float("nan")

    return ScenarioReport(
        scenario=scenario,
        censoring_param=float(censoring_param),
        per_rep=included,
        excluded=excluded,
        empirical_fdr=fdr,
        empirical_power=power,
        empirical_mfdr=mfdr,
        achieved_censoring=(
            float(np.mean([r.achieved_censoring for r in included])) if included else float("nan")
        ),
        mean_runtime=float(np.mean([r.runtime for r in included])) if included else float("nan"),
    )


# ---------------------------------------------------------------------------
# report tables
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = ("distribution", "n", "p", "censoring", "method", "fdr", "power")


@dataclass(frozen=True)
class ReportTable:
    rows: tuple
    csv: str
    text: str


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def aggregate_report(reports):
    """Rows of (distribution, n, p, censoring, method, FDR, power)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    rows = []
    for rep in reports:
        sc = rep.scenario
        for method in METHODS:
            if rep.n_included == 0:
                fdr_v, pow_v = "insufficient", "insufficient"
            else:
                fdr_v = rep.empirical_fdr[method]
                pow_v = rep.empirical_power[method]
            rows.append((sc.cov_dist, sc.n, sc.p, sc.target_rate, method, fdr_v, pow_v))
    csv_lines = [",".join(_TABLE_COLUMNS)]
    csv_lines += [",".join(_fmt(v) for v in row) for row in rows]
    csv_text = "\n".join(csv_lines) + "\n"

    str_rows = [tuple(_fmt(v) for v in row) for row in rows]
    widths = [max(len(col), *(len(r[i]) for r in str_rows)) for i, col in enumerate(_TABLE_COLUMNS)]
    def line(vals):
        return "  ".join(v.ljust(widths[i]) for i, v in enumerate(vals)).rstrip()
    text = "\n".join([line(_TABLE_COLUMNS)] + [line(r) for r in str_rows]) + "\n"
    return ReportTable(rows=tuple(rows), csv=csv_text, text=text)


def parse_report_csv(text):
    """Inverse of ``aggregate_report().csv`` for round-trip checks."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = tuple(lines[0].split(","))
    if header != _TABLE_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for ln in lines[1:]:
        dist, n, p, cens, method, fdr_v, pow_v = ln.split(",")
        rows.append((
            dist, int(n), int(p), float(cens), method,
            fdr_v if fdr_v == "insufficient" else float(fdr_v),
            pow_v if pow_v == "insufficient" else float(pow_v),
        ))
    return rows


# ---------------------------------------------------------------------------
# scenario files and presets
# ---------------------------------------------------------------------------

_INT_FIELDS = {"n", "p", "replications", "seed", "folds"}
_FLOAT_FIELDS = {"rho", "t_dof", "target_rate", "gamma", "q"}
_STR_FIELDS = {"beta_case", "cov_dist", "baseline", "censoring"}
_ALL_FIELDS = _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS


def parse_scenario_text(text):
    """Scenario from flat key=value lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _ALL_FIELDS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_FIELDS:
                values[key] = int(val)
            elif key in _FLOAT_FIELDS:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad value for {key!r}: {val!r}") from None
    for required in ("n", "p"):
        if required not in values:
            raise ScenarioError(f"missing required key {required!r}")
    return Scenario(**values)


def scenario_to_text(scenario):
    lines = []
    for key in sorted(_ALL_FIELDS):
        lines.append(f"{key}={getattr(scenario, key)}")
    return "\n".join(lines) + "\n"


PRESETS = {
    "study1_case2_desk": Scenario(
        n=500, p=50, beta_case="case2", cov_dist="gaussian_ar",
        baseline="constant", censoring="independent_exponential",
        target_rate=0.2, q=0.2, replications=100, seed=20230711, folds=10,
    ),
    "study1_case2_t_desk": Scenario(
        n=500, p=50, beta_case="case2", cov_dist="scaled_t",
        baseline="constant", censoring="independent_exponential",
        target_rate=0.2, q=0.2, replications=100, seed=20230712, folds=10,
    ),
    "study3_case2_desk": Scenario(
        n=500, p=50, beta_case="case2", cov_dist="gaussian_ar",
        baseline="linear", censoring="covariate_dependent",
        target_rate=0.2, q=0.2, replications=50, seed=20230713, folds=10,
    ),
    "global_null_desk": Scenario(
        n=300, p=50, beta_case="null", cov_dist="gaussian_ar",
        baseline="constant", censoring="independent_exponential",
        target_rate=0.2, q=0.2, replications=100, seed=20230714, folds=10,
    ),
    "study1_case2_full": Scenario(
        n=1000, p=100, beta_case="case2", cov_dist="gaussian_ar",
        baseline="constant", censoring="independent_exponential",
        target_rate=0.2, q=0.2, replications=100, seed=20230715, folds=10,
    ),
    "study2_case2_full": Scenario(
        n=400, p=600, beta_case="case2", cov_dist="gaussian_ar",
        baseline="constant", censoring="independent_exponential",
        target_rate=0.2, q=0.2, replications=100, seed=20230716, folds=10,
    ),
    "study3_case2_full": Scenario(
        n=1000, p=100, beta_case="case2", cov_dist="gaussian_ar",
        baseline="linear", censoring="covariate_dependent",
        target_rate=0.2, q=0.2, replications=100, seed=20230717, folds=10,
    ),
}


def load_scenario(name_or_path):
    """Scenario from a preset name or a key=value file path."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    try:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            return parse_scenario_text(fh.read())
    except FileNotFoundError:
        raise ScenarioError(
            f"{name_or_path!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file"
        ) from None
