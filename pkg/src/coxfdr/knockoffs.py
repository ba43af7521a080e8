"""Second-order Gaussian knockoff construction.

Covariate moments are estimated on the standardized scale, the
equicorrelated s-vector is derived from the smallest eigenvalue of the
correlation matrix, and knockoff copies are sampled from the Gaussian
conditional law implied by the joint covariance

    [[Sigma, Sigma - diag(s)],
     [Sigma - diag(s), Sigma]].

Sampling never sees the response: the only inputs are the fitted
moments, the covariate rows, and a seed.
"""

from dataclasses import dataclass

import numpy as np

from ._rng import row_keyed_normals
from .errors import ConstantColumn, DimensionMismatch, NotPSD, TooFewRows

# Smallest eigenvalue tolerated for the standardized covariance before
# diagonal shrinkage kicks in; keeps the conditional law well defined
# when p is close to (or exceeds) n.
EIGEN_FLOOR = 1e-3

# Eigen-pivots of the conditional covariance below this raise NotPSD;
# anything negative above it is treated as exactly zero (the
# equicorrelated construction sits on the PSD boundary by design).
_PIVOT_FAIL = -1e-8


@dataclass(frozen=True)
class MomentModel:
    """First and second moments of the covariates, standardized scale.

    ``sigma`` is the covariance of the standardized covariates (unit
    diagonal), possibly shrunk toward the identity; ``shrinkage`` is the
    gamma actually applied.
    """

    mean: np.ndarray
    sigma: np.ndarray
    scale: np.ndarray
    shrinkage: float

    @property
    def p(self):
        return self.mean.shape[0]

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class KnockoffSampler:
    """Fitted conditional law of a knockoff row given an observed row.

    ``cond_coef`` = I - Sigma^{-1} diag(s), applied from the right to a
    standardized row; ``cond_chol`` is a lower-triangular L with
    L L^T = 2 diag(s) - diag(s) Sigma^{-1} diag(s).
    """

    moments: MomentModel
    s: np.ndarray
    cond_coef: np.ndarray
    cond_chol: np.ndarray

    @property
    def p(self):
        return self.s.shape[0]

    def implied_joint_covariance(self):
        """Analytic 2p x 2p covariance of (x, knockoff(x))."""
        sigma = self.moments.sigma
        cross = sigma @ self.cond_coef
        bottom = self.cond_coef.T @ sigma @ self.cond_coef + self.cond_chol @ self.cond_chol.T
        return np.block([[sigma, cross], [cross.T, bottom]])


@dataclass(frozen=True)
class AugmentedDesign:
    """n x 2p design [X, X~]; column j + p is the knockoff of column j."""

    z: np.ndarray
    n: int
    p: int

    def __post_init__(self):
        if self.z.shape != (self.n, 2 * self.p):
            raise DimensionMismatch(
                f"augmented design must be {self.n} x {2 * self.p}, got {self.z.shape}"
            )


def _symmetrize(a):
    return 0.5 * (a + a.T)


def fit_moments(x):
    """Estimate standardized-scale moments of the covariate matrix.

    Standardization uses the sample mean and SD (divisor n-1).  If the
    smallest eigenvalue of the standardized covariance falls below
    ``EIGEN_FLOOR``, the matrix is shrunk toward the identity with the
    smallest gamma restoring the floor (found by bisection).
    """
    x = np.ascontiguousarray(x, dtype=float)
    n, p = x.shape
    if n < 3:
        raise TooFewRows(n)
    mean = x.mean(axis=0)
    scale = x.std(axis=0, ddof=1)
    bad = np.flatnonzero(scale <= 0.0)
    if bad.size:
        raise ConstantColumn(int(bad[0]))

    xs = (x - mean) / scale
    sigma = _symmetrize(xs.T @ xs / (n - 1))

    shrinkage = 0.0
    lam_min = float(np.linalg.eigvalsh(sigma)[0])
    if lam_min < EIGEN_FLOOR:
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-6:
            mid = 0.5 * (lo + hi)
            trial = _symmetrize((1.0 - mid) * sigma + mid * np.eye(p))
            if np.linalg.eigvalsh(trial)[0] >= EIGEN_FLOOR:
                hi = mid
            else:
                lo = mid
        shrinkage = hi
        sigma = _symmetrize((1.0 - shrinkage) * sigma + shrinkage * np.eye(p))

    return MomentModel(mean=mean, sigma=sigma, scale=scale, shrinkage=shrinkage)


def equicorrelated_s(moments):
    """Equicorrelated s-vector: every entry is min(2 lambda_min, 1)."""
    lam_min = float(np.linalg.eigvalsh(moments.sigma)[0])
    return np.full(moments.p, min(2.0 * lam_min, 1.0))


def build_sampler(moments, s):
    """Assemble the conditional-law factors for knockoff sampling."""
    s = np.asarray(s, dtype=float)
    if s.shape != (moments.p,):
        raise DimensionMismatch(f"s must have length {moments.p}, got shape {s.shape}")
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("entries of s must lie in [0, 1]")

    sigma = moments.sigma
    # Columns of inv(Sigma) @ diag(s) via one solve; Sigma is SPD after repair.
    sigma_inv_s = np.linalg.solve(sigma, np.diag(s))
    cond_coef = np.eye(moments.p) - sigma_inv_s

    cond_cov = _symmetrize(2.0 * np.diag(s) - np.diag(s) @ sigma_inv_s)
    w, v = np.linalg.eigh(cond_cov)
    if w[0] < _PIVOT_FAIL:
        raise NotPSD(float(w[0]))
    w = np.clip(w, 0.0, None)
    sqrt_cov = (v * np.sqrt(w)) @ v.T
    # Re-triangularize the symmetric square root: QR of B gives B = QR,
    # so R^T R^{TT} = B^T B = B^2 = cond_cov with R^T lower-triangular.
    _, r = np.linalg.qr(sqrt_cov)
    cond_chol = r.T

    return KnockoffSampler(moments=moments, s=s, cond_coef=cond_coef, cond_chol=cond_chol)


def sample_knockoffs(sampler, x, rng_seed):
    """Draw knockoff copies and return the augmented design [X, X~].

    The input is standardized with the sampler's stored moments; both
    halves of the output live on the standardized scale.  Row i draws
    its Gaussian noise from a stream keyed by (rng_seed, i), so the
    output is deterministic in (sampler, x, rng_seed) and independent of
    any row partitioning.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != sampler.p:
        raise DimensionMismatch(
            f"expected {sampler.p} covariate columns, got {x.shape[1] if x.ndim == 2 else x.shape}"
        )
    n = x.shape[0]
    xs = sampler.moments.standardize(x)
    noise = row_keyed_normals(rng_seed, n, sampler.p)
    xk = xs @ sampler.cond_coef + noise @ sampler.cond_chol.T
    return AugmentedDesign(z=np.hstack([xs, xk]), n=n, p=sampler.p)
