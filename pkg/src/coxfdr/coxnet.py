"""Cox partial log-likelihood and the L1-penalized path solver.

The likelihood is the mean partial log-likelihood

    l(b) = n^-1 sum_i delta_i { b'z_i - log sum_{Y_j >= Y_i} exp(b'z_j) },

with Breslow's convention for ties: events sharing an observed time
share one risk-set denominator.  All risk-set sums run over a single
descending-time ordering so they reduce to prefix sums.

The penalized problem  min_b { -l(b) + lam * ||b||_1 }  is solved by
iteratively reweighted least squares with cyclic coordinate descent on
the diagonal quadratic surrogate, warm-started along a decreasing
lambda grid, glmnet style.  Step halving keeps the exact penalized
objective non-increasing, and every returned point is certified against
the exact KKT conditions.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._rng import keyed_rng
from .errors import (
    ConstantColumn,
    DimensionMismatch,
    FoldWithoutEvents,
    NoEvents,
    NonFinite,
    NotConverged,
    NumericalError,
)

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap if not (args and callable(args[0])) else args[0]

_FOLD_STREAM_TAG = 0xF01D


# ---------------------------------------------------------------------------
# datasets and risk-set indexing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival sample with an n x m design matrix."""

    y: np.ndarray
    delta: np.ndarray
    design: np.ndarray
    names: tuple = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        delta = np.ascontiguousarray(self.delta, dtype=float)
        design = np.ascontiguousarray(self.design, dtype=float)
        if y.ndim != 1 or delta.shape != y.shape or design.ndim != 2 or design.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"inconsistent shapes: y {y.shape}, delta {delta.shape}, design {design.shape}"
            )
        if np.any(y <= 0.0):
            raise ValueError("observed times must be positive")
        if not np.all((delta == 0.0) | (delta == 1.0)):
            raise ValueError("event indicators must be 0 or 1")
        if not np.any(delta == 1.0):
            raise NoEvents()
        names = self.names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(design.shape[1]))
        else:
            names = tuple(str(nm) for nm in names)
            if len(names) != design.shape[1]:
                raise DimensionMismatch("names must match design columns")
        for a in (y, delta, design):
            a.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def m(self):
        return self.design.shape[1]

    @property
    def n_events(self):
        return int(self.delta.sum())

    @cached_property
    def _work(self):
        return _CoxWork(self.y, self.delta, self.design)

    @cached_property
    def risk_index(self):
        return self._work.risk_index()

    def take(self, rows):
        """New dataset from a row subset (CV folds, resampling)."""
        rows = np.asarray(rows)
        return SurvivalDataset(self.y[rows], self.delta[rows], self.design[rows], self.names)


@dataclass(frozen=True)
class RiskSetIndex:
    """Sorting and tie structure used to stream risk-set sums."""

    order: np.ndarray            # permutation putting y in descending order
    event_positions: np.ndarray  # original indices with delta = 1
    tie_groups: tuple            # per event time, original indices of its events


class _CoxWork:
    """Descending-time view of a dataset plus event/tie bookkeeping."""

    def __init__(self, y, delta, design):
        n = y.shape[0]
        # stable descending sort: ties keep original order for determinism
        order = np.lexsort((np.arange(n), -y))
        self.order = order
        self.n = n
        self.ys = y[order]
        self.ds = delta[order]
        self.zs = np.ascontiguousarray(design[order])
        # run_end[k]: last sorted position sharing ys[k]
        change = np.flatnonzero(self.ys[:-1] > self.ys[1:])
        run_end = np.empty(n, dtype=np.int64)
        bounds = np.concatenate([change, [n - 1]])
        start = 0
        for bnd in bounds:
            run_end[start:bnd + 1] = bnd
            start = bnd + 1
        self.run_end = run_end
        # unique event times, descending; each has a shared risk prefix
        epos = np.flatnonzero(self.ds == 1.0)
        self.epos = epos
        uniq_end, counts = np.unique(run_end[epos], return_counts=True)
        self.event_re = uniq_end          # ascending positions == descending times
        self.event_dt = counts.astype(float)

    def eta(self, b):
        return self.zs @ b

    def risk_index(self):
        groups = []
        ends = self.event_re
        for e in ends:
            in_group = self.epos[self.run_end[self.epos] == e]
            groups.append(np.sort(self.order[in_group]))
        return RiskSetIndex(
            order=self.order,
            event_positions=np.sort(self.order[self.epos]),
            tie_groups=tuple(groups),
        )


def _streaming_logcumsumexp(a):
    """Exact prefix log-sum-exp, rescaled at every new running maximum."""
    n = a.shape[0]
    out = np.empty(n)
    c = np.maximum.accumulate(a)
    new_max = np.empty(n, dtype=bool)
    new_max[0] = True
    np.greater(c[1:], c[:-1], out=new_max[1:])
    starts = np.flatnonzero(new_max)
    carry = 0.0
    c_prev = 0.0
    for si in range(starts.size):
        s = starts[si]
        e = starts[si + 1] if si + 1 < starts.size else n
        c_seg = c[s]
        if si:
            carry *= np.exp(c_prev - c_seg)
        seg = np.exp(a[s:e] - c_seg)
        out[s:e] = c_seg + np.log(carry + np.cumsum(seg))
        carry += float(seg.sum())
        c_prev = c_seg
    return out


def _loglik_exact(work, eta_sorted):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lse = _streaming_logcumsumexp(eta_sorted)
        ll = eta_sorted[work.epos].sum() - float(work.event_dt @ lse[work.event_re])
        ll /= work.n
    if not np.isfinite(ll):
        raise NonFinite("partial log-likelihood")
    return ll


def _loglik_fast(work, eta_sorted):
    """Max-shifted prefix-sum version used inside the solver and CV."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m = eta_sorted.max()
        cum = np.cumsum(np.exp(eta_sorted - m))
        r = cum[work.event_re]
        ll = eta_sorted[work.epos].sum() - float(work.event_dt @ (np.log(r) + m))
        ll /= work.n
    if not np.isfinite(ll):
        raise NonFinite("partial log-likelihood")
    return ll


def _suffix_sum(a):
    return np.cumsum(a[::-1])[::-1]


class _EtaState:
    """Score and risk-sum quantities of l at a fixed linear predictor.

    ``e`` is exp(eta - max eta); ``r`` the scaled risk sums per event
    time; ``cum_hazard`` the per-observation sum of d_t / r_t over event
    times whose risk set contains it; ``g`` the n^-1-scaled score in eta.
    """

    __slots__ = ("e", "r", "cum_hazard", "g")

    def __init__(self, work, eta_sorted):
        n = work.n
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            mx = eta_sorted.max()
            e = np.exp(eta_sorted - mx)
            cum = np.cumsum(e)
            r = cum[work.event_re]
            if not np.all(r > 0.0) or not np.all(np.isfinite(r)):
                raise NonFinite("risk-set sums")
            bucket = np.zeros(n)
            bucket[work.event_re] = work.event_dt / r
            cum_hazard = _suffix_sum(bucket)
            g = (work.ds - e * cum_hazard) / n
        if not np.all(np.isfinite(g)):
            raise NonFinite("score")
        self.e = e
        self.r = r
        self.cum_hazard = cum_hazard
        self.g = g


def _eta_derivs(work, eta_sorted):
    """Per-observation score g and curvature w of l as a function of eta.

    Both carry the n^-1 normalization.  w is the diagonal of the
    negative Hessian in eta.
    """
    n = work.n
    state = _EtaState(work, eta_sorted)
    e, r = state.e, state.r
    term = e * state.cum_hazard
    bucket = np.zeros(n)
    bucket[work.event_re] = work.event_dt / (r * r)
    w = (term - e * e * _suffix_sum(bucket)) / n
    if not np.all(np.isfinite(w)):
        raise NonFinite("working derivatives")
    np.maximum(w, 0.0, out=w)
    return state.g, w


def _active_hessian(work, state, cols):
    """Exact negative-Hessian block of l over the given design columns.

    Uses the event-time structure: the block is a risk-weighted Gram
    minus a rank-per-event-time correction, both computed from prefix
    sums along the descending-time order.
    """
    za = work.zs[:, cols]
    weighted = za * (state.e * state.cum_hazard)[:, None]
    first = za.T @ weighted
    cum = np.cumsum(state.e[:, None] * za, axis=0)
    v = cum[work.event_re]
    v = v * (np.sqrt(work.event_dt) / state.r)[:, None]
    q = (first - v.T @ v) / work.n
    if not np.all(np.isfinite(q)):
        raise NonFinite("hessian block")
    return q


# ---------------------------------------------------------------------------
# public likelihood operations
# ---------------------------------------------------------------------------

def _check_coef(data, b):
    b = np.asarray(b, dtype=float)
    if b.shape != (data.m,):
        raise DimensionMismatch(f"coefficient vector must have length {data.m}")
    if not np.all(np.isfinite(b)):
        raise NonFinite("coefficient vector")
    return b


def partial_loglik(data, b):
    """Mean Breslow partial log-likelihood at coefficient vector b."""
    b = _check_coef(data, b)
    work = data._work
    with np.errstate(over="ignore", invalid="ignore"):
        eta = work.eta(b)
    return _loglik_exact(work, eta)


def gradient(data, b):
    """Exact gradient of ``partial_loglik`` with respect to b."""
    b = _check_coef(data, b)
    work = data._work
    state = _EtaState(work, work.eta(b))
    return work.zs.T @ state.g


def hessian_quadratic(data, b, v):
    """Quadratic form v' H v of the likelihood Hessian, without forming H.

    Always <= 0: the partial log-likelihood is concave.
    """
    b = _check_coef(data, b)
    v = np.asarray(v, dtype=float)
    if v.shape != (data.m,):
        raise DimensionMismatch(f"direction vector must have length {data.m}")
    work = data._work
    eta = work.eta(b)
    u = work.zs @ v
    u = u - u.mean()  # the form is shift-invariant; centering kills cancellation
    mx = eta.max()
    e = np.exp(eta - mx)
    s0 = np.cumsum(e)[work.event_re]
    s1 = np.cumsum(e * u)[work.event_re]
    s2 = np.cumsum(e * u * u)[work.event_re]
    if not np.all(s0 > 0.0):
        raise NonFinite("risk-set sums")
    var = s2 / s0 - (s1 / s0) ** 2
    out = -float(work.event_dt @ var) / work.n
    if not np.isfinite(out):
        raise NonFinite("hessian quadratic form")
    return out


def standardize_design(x):
    """Center and scale columns to unit sample SD (divisor n-1)."""
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    bad = np.flatnonzero(sd <= 0.0)
    if bad.size:
        raise ConstantColumn(int(bad[0]))
    return (x - mean) / sd


# ---------------------------------------------------------------------------
# path solver
# ---------------------------------------------------------------------------

@dataclass
class CoxLassoFit:
    """Coefficient path over a decreasing lambda grid."""

    lambda_grid: np.ndarray
    coefs: np.ndarray                 # G x m, row g solves the problem at grid[g]
    cv_deviance: np.ndarray = None
    chosen_lambda: int = None         # index into the grid
    n_iter: np.ndarray = None         # coordinate-descent cycles per lambda
    converged: np.ndarray = None
    cv_empty_fold_warnings: int = 0

    @property
    def chosen_coefs(self):
        if self.chosen_lambda is None:
            raise ValueError("no lambda has been chosen for this fit")
        return self.coefs[self.chosen_lambda]


def lambda_max(data):
    """Smallest penalty at which the solution is exactly zero."""
    return float(np.max(np.abs(gradient(data, np.zeros(data.m)))))


def default_lambda_grid(data, n_lambda=100):
    """Log-spaced grid from lambda_max down to eps * lambda_max."""
    lmax = lambda_max(data)
    if not lmax > 0.0:
        raise NumericalError("gradient at zero vanishes; no lambda grid exists")
    eps = 1e-3 if data.n > data.m else 1e-2
    return np.geomspace(lmax, eps * lmax, n_lambda)


@njit(cache=True)
def _cd_quadratic(q, grad, beta, lam, inner_kkt, max_cycles):
    """Cyclic coordinate descent for min 0.5 b'Qb + c'b + lam ||b||_1.

    ``grad`` holds Q beta + c and is maintained in place.  Stops once
    the model KKT residual drops below inner_kkt.  Returns (cycles,
    final residual).
    """
    a = beta.shape[0]
    cycles = 0
    resid = 0.0
    for _ in range(max_cycles):
        cycles += 1
        for j in range(a):
            qjj = q[j, j]
            if qjj <= 1e-14:
                continue
            rho = qjj * beta[j] - grad[j]
            if rho > lam:
                newb = (rho - lam) / qjj
            elif rho < -lam:
                newb = (rho + lam) / qjj
            else:
                newb = 0.0
            d = newb - beta[j]
            if d != 0.0:
                for k in range(a):
                    grad[k] += q[k, j] * d
                beta[j] = newb
        resid = 0.0
        for j in range(a):
            if beta[j] > 0.0:
                v = abs(grad[j] + lam)
            elif beta[j] < 0.0:
                v = abs(grad[j] - lam)
            else:
                v = abs(grad[j]) - lam
                if v < 0.0:
                    v = 0.0
            if v > resid:
                resid = v
        if resid <= inner_kkt:
            break
    return cycles, resid


def _kkt_satisfied(minus_grad, b, lam, kkt_tol):
    """KKT residual check for min -l(b) + lam ||b||_1.

    Active coordinates must satisfy minus_grad_j = -lam sign(b_j) to
    within kkt_tol; inactive ones |minus_grad_j| <= lam (1 + 1e-6).
    """
    active = b != 0.0
    if np.any(np.abs(minus_grad[active] + lam * np.sign(b[active])) > kkt_tol):
        return False
    return not np.any(np.abs(minus_grad[~active]) > lam * (1.0 + 1e-6))


def _solve_one_lambda(work, b, lam, tol_obj, kkt_tol, max_cycles, max_outer=100):
    """Proximal-Newton step loop at a single lambda; warm-started in place.

    Each outer iteration expands -l around the current point, assembles
    the exact Hessian block on the working set, minimizes the penalized
    quadratic model by cyclic coordinate descent, and step-halves on the
    exact objective.  Exact KKT satisfaction is the only convergence
    criterion; the objective-change tolerance caps how long
    near-stationary stalls are tolerated before flagging the point.
    """
    inner_kkt = 0.3 * kkt_tol
    eta = work.eta(b)
    obj = -_loglik_fast(work, eta) + lam * np.abs(b).sum()
    cycles_used = 0
    converged = False
    stalls = 0
    working = b != 0.0
    for _ in range(max_outer):
        state = _EtaState(work, eta)
        minus_grad = -(work.zs.T @ state.g)
        if _kkt_satisfied(minus_grad, b, lam, kkt_tol):
            converged = True
            break
        if cycles_used >= max_cycles:
            break
        # working set: current support plus any KKT violators
        working |= b != 0.0
        working |= np.abs(minus_grad) > lam
        cols = np.flatnonzero(working)
        q = _active_hessian(work, state, cols)
        beta = b[cols].copy()
        grad = minus_grad[cols].copy()  # equals Q beta + c at beta = b[cols]
        used, _ = _cd_quadratic(q, grad, beta, lam, inner_kkt,
                                max(1, max_cycles - cycles_used))
        cycles_used += used
        direction = np.zeros_like(b)
        direction[cols] = beta - b[cols]
        # step halving keeps the exact penalized objective non-increasing
        step = 1.0
        while True:
            b_try = b + step * direction
            eta_try = work.eta(b_try)
            obj_try = -_loglik_fast(work, eta_try) + lam * np.abs(b_try).sum()
            if obj_try <= obj + 1e-15 * max(1.0, abs(obj)) or step < 1e-8:
                break
            step *= 0.5
        if obj_try > obj:
            break  # no descent direction left at this curvature
        rel_drop = (obj - obj_try) / max(1.0, abs(obj))
        b[:] = b_try
        eta = eta_try
        obj = obj_try
        stalls = stalls + 1 if rel_drop < tol_obj else 0
        if stalls >= 5:
            break
    if not converged:
        state = _EtaState(work, eta)
        converged = _kkt_satisfied(-(work.zs.T @ state.g), b, lam, kkt_tol)
    return cycles_used, converged


def fit_path(data, grid, *, tol_obj=1e-8, kkt_tol=1e-6, max_cycles=10000, strict=False):
    """Solve the L1-penalized problem along a decreasing lambda grid.

    Coefficients are warm-started between grid points.  Non-convergence
    at a grid point is flagged in ``converged`` (and raised when
    ``strict``); partial results are still returned.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d array")
    if np.any(grid <= 0.0) or np.any(np.diff(grid) >= 0.0):
        raise ValueError("lambda grid must be strictly decreasing and positive")

    work = data._work
    G = grid.size
    coefs = np.zeros((G, data.m))
    n_iter = np.zeros(G, dtype=np.int64)
    converged = np.zeros(G, dtype=bool)
    b = np.zeros(data.m)
    for gidx, lam in enumerate(grid):
        cycles, ok = _solve_one_lambda(work, b, lam, tol_obj, kkt_tol, max_cycles)
        if strict and not ok:
            raise NotConverged(lam)
        coefs[gidx] = b
        n_iter[gidx] = cycles
        converged[gidx] = ok
    return CoxLassoFit(lambda_grid=grid, coefs=coefs, n_iter=n_iter, converged=converged)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def assign_folds(delta, folds, rng_seed):
    """Seeded fold labels, stratified by event status."""
    n = delta.shape[0]
    rng = keyed_rng(rng_seed, _FOLD_STREAM_TAG)
    ids = np.empty(n, dtype=np.int64)
    for group in (np.flatnonzero(delta == 1.0), np.flatnonzero(delta == 0.0)):
        perm = group[rng.permutation(group.size)]
        ids[perm] = np.arange(perm.size) % folds
    return ids


def _loglik_many(work, coefs):
    """Fast mean partial log-likelihood for every row of a G x m matrix."""
    etas = work.zs @ coefs.T
    return np.array([_loglik_fast(work, np.ascontiguousarray(etas[:, g]))
                     for g in range(coefs.shape[0])])


def cross_validate(data, folds, grid=None, rng_seed=0, fold_ids=None, **fit_kwargs):
    """K-fold cross-validated path fit on the full data.

    The criterion is the cross-validated partial-likelihood deviance: for
    fold k with training fit b_k(lam),

        dev(lam) += -2 [ l_all(b_k) - l_train(b_k) ]

    with unnormalized log-likelihoods, so each fold contributes the
    partial-likelihood information carried by its held-out part alone.
    ``chosen_lambda`` is the argmin.  A test fold without events
    contributes zero and bumps ``cv_empty_fold_warnings``.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > data.n:
        raise ValueError("more folds than observations")
    if grid is None:
        grid = default_lambda_grid(data)
    grid = np.asarray(grid, dtype=float)
    if fold_ids is None:
        fold_ids = assign_folds(data.delta, folds, rng_seed)
    else:
        fold_ids = np.asarray(fold_ids, dtype=np.int64)
        if fold_ids.shape != (data.n,):
            raise DimensionMismatch("fold_ids must have one label per row")
    for k in range(folds):
        if not np.any(data.delta[fold_ids != k] == 1.0):
            raise FoldWithoutEvents(k)

    full = fit_path(data, grid, **fit_kwargs)
    work_full = data._work
    deviance = np.zeros(grid.size)
    empty_folds = 0
    for k in range(folds):
        train = data.take(np.flatnonzero(fold_ids != k))
        fit_k = fit_path(train, grid, **fit_kwargs)
        if not np.any(data.delta[fold_ids == k] == 1.0):
            empty_folds += 1
            continue
        ll_all = _loglik_many(work_full, fit_k.coefs) * data.n
        ll_train = _loglik_many(train._work, fit_k.coefs) * train.n
        deviance += -2.0 * (ll_all - ll_train)
    chosen = int(np.argmin(deviance))
    return CoxLassoFit(
        lambda_grid=grid,
        coefs=full.coefs,
        cv_deviance=deviance,
        chosen_lambda=chosen,
        n_iter=full.n_iter,
        converged=full.converged,
        cv_empty_fold_warnings=empty_folds,
    )
