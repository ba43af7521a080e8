"""LCD knockoff statistics, selection thresholds, and truth scoring.

W_j = |b_j| - |b_{j+p}| compares each original coefficient with its
knockoff's in a fitted augmented-design lasso.  The data-dependent
threshold scans the nonzero magnitudes of W and returns the smallest t
whose negative-to-positive count ratio (with a +1 correction for the
"+" variant) stays at or below the target level q.
"""

from dataclasses import dataclass

import numpy as np

from .coxnet import fit_path
from .errors import DimensionMismatch, EmptyTruth, InvalidQ

KNOCKOFF = "knockoff"
KNOCKOFF_PLUS = "knockoff_plus"


@dataclass(frozen=True)
class KnockoffStats:
    w: np.ndarray
    lambda_used: float
    source: str = ""


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of thresholding a W vector at level q.

    ``selected`` holds 0-based covariate indices; an infinite threshold
    selects nothing.  ``ratio_at_threshold`` is the certified count
    ratio at the returned threshold (nan when infinite).
    """

    q: float
    kind: str
    threshold: float
    selected: np.ndarray
    ratio_at_threshold: float


@dataclass(frozen=True)
class TruthMetrics:
    fdp: float
    tdp: float
    n_selected: int
    n_true_positive: int
    mfdr_summand: float


def lcd_statistics(fit, at, p):
    """Lasso coefficient differences from a stored 2p-column fit."""
    coefs = fit.coefs[at]
    if coefs.shape[0] != 2 * p:
        raise DimensionMismatch(f"fit has {coefs.shape[0]} coefficients, expected {2 * p}")
    w = np.abs(coefs[:p]) - np.abs(coefs[p:])
    return KnockoffStats(w=w, lambda_used=float(fit.lambda_grid[at]), source=f"path[{at}]")


def knockoff_threshold(w, q, plus):
    """Selection threshold over the candidate set {|W_j|} minus zero.

    threshold = min { t : (#{W_j <= -t} + plus) / max(#{W_j >= t}, 1) <= q },
    or +inf when no candidate qualifies (empty selection).
    """
    if not 0.0 < q < 1.0:
        raise InvalidQ(q)
    w = np.asarray(w, dtype=float)
    candidates = np.unique(np.abs(w))
    candidates = candidates[candidates > 0.0]
    kind = KNOCKOFF_PLUS if plus else KNOCKOFF
    if candidates.size:
        w_sorted = np.sort(w)
        n = w.shape[0]
        n_pos = n - np.searchsorted(w_sorted, candidates, side="left")
        n_neg = np.searchsorted(w_sorted, -candidates, side="right")
        ratios = (n_neg + (1 if plus else 0)) / np.maximum(n_pos, 1)
        ok = np.flatnonzero(ratios <= q)
        if ok.size:
            t = float(candidates[ok[0]])
            return SelectionResult(
                q=q,
                kind=kind,
                threshold=t,
                selected=np.flatnonzero(w >= t),
                ratio_at_threshold=float(ratios[ok[0]]),
            )
    return SelectionResult(
        q=q,
        kind=kind,
        threshold=np.inf,
        selected=np.array([], dtype=np.int64),
        ratio_at_threshold=np.nan,
    )


def score(selected, truth, p, q):
    """False/true discovery proportions of a selection against the truth."""
    selected = np.asarray(sorted(set(int(j) for j in np.asarray(selected, dtype=np.int64))))
    truth_set = set(int(j) for j in np.asarray(truth, dtype=np.int64))
    if selected.size and (selected.min() < 0 or selected.max() >= p):
        raise ValueError("selected indices out of range")
    if truth_set and (min(truth_set) < 0 or max(truth_set) >= p):
        raise ValueError("truth indices out of range")
    if not truth_set:
        raise EmptyTruth()
    n_sel = selected.size
    n_tp = sum(1 for j in selected if j in truth_set)
    n_fp = n_sel - n_tp
    return TruthMetrics(
        fdp=n_fp / max(n_sel, 1),
        tdp=n_tp / len(truth_set),
        n_selected=n_sel,
        n_true_positive=n_tp,
        mfdr_summand=n_fp / (n_sel + 1.0 / q),
    )


@dataclass(frozen=True)
class FlipSignReport:
    w: np.ndarray
    w_swapped: np.ndarray
    max_other_discrepancy: float
    self_discrepancy: float


def flip_sign_check(data, j, lam, *, n_warm=20, kkt_tol=1e-9, tol_obj=1e-12):
    """Refit with columns j and j+p swapped and compare W vectors.

    Swapping an original covariate with its knockoff must negate W_j and
    leave every other statistic untouched, up to solver tolerance.  Both
    fits run fresh from zero along a short warm-up grid ending at lam.
    """
    if data.m % 2 != 0:
        raise DimensionMismatch("flip-sign check needs an augmented 2p-column design")
    p = data.m // 2
    if not 0 <= j < p:
        raise ValueError(f"feature index {j} out of range for p={p}")

    def w_at(dataset):
        from .coxnet import lambda_max

        lmax = lambda_max(dataset)
        top = max(lmax, lam * (1.0 + 1e-12))
        grid = np.geomspace(top, lam, n_warm)
        grid[-1] = lam
        fit = fit_path(dataset, grid, kkt_tol=kkt_tol, tol_obj=tol_obj)
        coefs = fit.coefs[-1]
        return np.abs(coefs[:p]) - np.abs(coefs[p:])

    w = w_at(data)
    design = data.design.copy()
    design[:, [j, j + p]] = design[:, [j + p, j]]
    swapped = type(data)(data.y, data.delta, design, data.names)
    w_swapped = w_at(swapped)

    others = np.delete(np.arange(p), j)
    return FlipSignReport(
        w=w,
        w_swapped=w_swapped,
        max_other_discrepancy=float(np.max(np.abs(w_swapped[others] - w[others]), initial=0.0)),
        self_discrepancy=float(abs(w_swapped[j] + w[j])),
    )
