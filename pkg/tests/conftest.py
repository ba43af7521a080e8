import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coxfdr.coxnet import SurvivalDataset, standardize_design


def ar_matrix(p, rho=0.5):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def make_survival(seed, n, m, beta=None, censor_scale=2.0, rho=0.0, standardize=True):
    """Synthetic censored dataset from an exponential Cox model."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, m))
    if rho:
        x = x @ np.linalg.cholesky(ar_matrix(m, rho)).T
    if standardize:
        x = standardize_design(x)
    if beta is None:
        beta = np.zeros(m)
    eta = x @ beta
    t_lat = rng.exponential(np.exp(-eta))
    u = rng.exponential(censor_scale, n)
    y = np.minimum(t_lat, u)
    delta = (t_lat <= u).astype(float)
    if delta.sum() == 0:
        delta[int(np.argmin(y))] = 1.0
    return SurvivalDataset(y, delta, x)


@pytest.fixture(scope="session")
def small_dataset():
    return make_survival(11, 40, 4, beta=np.array([1.0, -0.5, 0.0, 0.0]))


GENE_NAMES = [f"GENE{k:02d}" for k in range(1, 71)]
CLINICAL_NAMES = ["Diam", "N", "ER", "Grade", "Age"]


def make_breast_cancer_like(seed=2023, n=144):
    """Synthetic survival data shaped like a 75-covariate clinical study.

    Five clinical covariates (pre-encoded numerically) plus 70 gene
    expressions; censoring around two thirds; the node-count covariate
    N carries the strongest effect by construction.
    """
    rng = np.random.default_rng(seed)
    diam = np.round(rng.gamma(6.0, 4.0, n) + 5.0, 1)
    nodes = rng.poisson(2.5, n) + 1.0
    er = rng.choice([0.0, 1.0], n, p=[0.3, 0.7])
    grade = rng.choice([1.0, 2.0, 3.0], n, p=[0.25, 0.45, 0.3])
    age = np.round(rng.normal(44.0, 6.0, n))
    genes = rng.standard_normal((n, 70))
    # a few co-expressed pairs so the design is not orthogonal
    for a, b in ((0, 1), (5, 6), (10, 12)):
        genes[:, b] = 0.6 * genes[:, a] + 0.8 * genes[:, b]
    x = np.column_stack([diam, nodes, er, grade, age, genes])
    names = CLINICAL_NAMES + GENE_NAMES

    xs = standardize_design(x)
    beta = np.zeros(75)
    beta[names.index("N")] = 2.4
    for gene, effect in (("GENE03", 0.8), ("GENE08", -0.75), ("GENE15", 0.8),
                         ("GENE22", -0.85), ("GENE31", 0.7), ("GENE44", -0.7),
                         ("GENE57", 0.8), ("GENE40", 0.75), ("GENE49", -0.8),
                         ("GENE63", 0.7)):
        beta[names.index(gene)] = effect
    eta = xs @ beta
    t_lat = rng.exponential(np.exp(-eta) * 40.0)
    u = rng.exponential(7.0, n)
    y = np.round(np.minimum(t_lat, u), 2) + 0.01
    delta = (t_lat <= u).astype(float)
    return y, delta, x, names


def write_survival_csv(path, y, delta, x, names):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["time", "event"] + list(names)) + "\n")
        for i in range(len(y)):
            row = [format(y[i], ".10g"), str(int(delta[i]))]
            row += [format(v, ".10g") for v in x[i]]
            fh.write(",".join(row) + "\n")
