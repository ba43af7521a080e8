import numpy as np
import pytest

from coxfdr.coxnet import (
    SurvivalDataset,
    cross_validate,
    default_lambda_grid,
    fit_path,
    gradient,
    hessian_quadratic,
    lambda_max,
    partial_loglik,
    standardize_design,
)
from coxfdr.errors import (
    ConstantColumn,
    DimensionMismatch,
    FoldWithoutEvents,
    NoEvents,
    NonFinite,
    NotConverged,
)

from conftest import make_survival
from oracles import fd_gradient, naive_hessian, naive_partial_loglik, prox_gradient_cox_lasso


class TestSurvivalDataset:
    def test_no_events_rejected(self):
        with pytest.raises(NoEvents):
            SurvivalDataset(np.array([1.0, 2.0]), np.zeros(2), np.zeros((2, 1)))

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError):
            SurvivalDataset(np.array([0.0, 2.0]), np.ones(2), np.zeros((2, 1)))

    def test_bad_event_indicator_rejected(self):
        with pytest.raises(ValueError):
            SurvivalDataset(np.array([1.0, 2.0]), np.array([1.0, 0.5]), np.zeros((2, 1)))

    def test_risk_index_structure(self):
        y = np.array([3.0, 1.0, 3.0, 2.0])
        d = np.array([1.0, 1.0, 1.0, 0.0])
        ds = SurvivalDataset(y, d, np.zeros((4, 1)))
        idx = ds.risk_index
        assert np.all(np.diff(y[idx.order]) <= 0)
        assert set(idx.event_positions.tolist()) == {0, 1, 2}
        # events at time 3 form one tie group, event at time 1 another
        sizes = sorted(len(g) for g in idx.tie_groups)
        assert sizes == [1, 2]


class TestPartialLoglik:
    def test_two_row_closed_form(self):
        ds = SurvivalDataset(np.array([1.0, 2.0]), np.array([1.0, 1.0]), np.zeros((2, 1)))
        assert partial_loglik(ds, np.zeros(1)) == pytest.approx(-np.log(2.0) / 2.0, abs=1e-14)

    def test_zero_coefficient_closed_form_with_ties(self):
        # risk-set sizes at zero: events at t=2 (tied pair) see 3 subjects,
        # the event at t=5 sees 1
        y = np.array([2.0, 2.0, 2.0, 5.0])
        d = np.array([1.0, 1.0, 0.0, 1.0])
        ds = SurvivalDataset(y, d, np.zeros((4, 2)))
        expected = -(np.log(4.0) + np.log(4.0) + np.log(1.0)) / 4.0
        assert partial_loglik(ds, np.zeros(2)) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_naive_double_loop(self, seed):
        ds = make_survival(seed, 20, 3, beta=np.array([0.7, -0.4, 0.2]))
        rng = np.random.default_rng(seed + 100)
        b = rng.standard_normal(3)
        got = partial_loglik(ds, b)
        want = naive_partial_loglik(ds.y, ds.delta, ds.design, b)
        assert got == pytest.approx(want, abs=1e-12)

    def test_breslow_ties_match_naive(self):
        rng = np.random.default_rng(9)
        y = np.round(rng.exponential(1.0, 25), 1) + 0.1
        d = (rng.uniform(size=25) < 0.7).astype(float)
        d[0] = 1.0
        z = rng.standard_normal((25, 3))
        ds = SurvivalDataset(y, d, z)
        b = np.array([0.5, -0.2, 0.8])
        assert partial_loglik(ds, b) == pytest.approx(
            naive_partial_loglik(y, d, z, b), abs=1e-12
        )

    def test_overflow_raises_nonfinite(self):
        ds = make_survival(3, 30, 2)
        with pytest.raises(NonFinite):
            partial_loglik(ds, np.array([1e308, -1e308]))

    def test_dimension_mismatch(self):
        ds = make_survival(3, 30, 2)
        with pytest.raises(DimensionMismatch):
            partial_loglik(ds, np.zeros(3))


class TestGradient:
    @pytest.mark.parametrize("seed", [5, 6, 7])
    def test_matches_central_differences(self, seed):
        ds = make_survival(seed, 30, 4, beta=np.array([1.0, 0.0, -0.5, 0.3]))
        rng = np.random.default_rng(seed)
        b = rng.standard_normal(4) * 0.7
        got = gradient(ds, b)
        want = fd_gradient(lambda v: naive_partial_loglik(ds.y, ds.delta, ds.design, v), b)
        rel = np.abs(got - want) / np.maximum(np.abs(want), 1e-8)
        assert rel.max() < 1e-5

    def test_single_event_risk_set_mean(self):
        z = np.array([[1.0, 2.0], [3.0, -1.0]])
        ds = SurvivalDataset(np.array([1.0, 4.0]), np.array([1.0, 0.0]), z)
        want = (z[0] - z.mean(axis=0)) / 2.0
        assert np.allclose(gradient(ds, np.zeros(2)), want, atol=1e-14)

    def test_identical_rows_give_zero(self):
        z = np.ones((6, 3)) * 2.5
        ds = SurvivalDataset(np.arange(1.0, 7.0), np.ones(6), z)
        assert np.abs(gradient(ds, np.zeros(3))).max() < 1e-14


class TestHessianQuadratic:
    def test_zero_direction(self, small_dataset):
        assert hessian_quadratic(small_dataset, np.zeros(4), np.zeros(4)) == 0.0

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_matches_dense_assembly(self, seed):
        ds = make_survival(seed, 25, 3)
        rng = np.random.default_rng(seed + 50)
        b = rng.standard_normal(3) * 0.5
        v = rng.standard_normal(3)
        dense = naive_hessian(ds.y, ds.delta, ds.design, b)
        assert hessian_quadratic(ds, b, v) == pytest.approx(v @ dense @ v, abs=1e-10)

    def test_concavity_over_random_probes(self):
        rng = np.random.default_rng(77)
        for seed in range(8):
            ds = make_survival(seed, 30, 4)
            for _ in range(5):
                b = rng.standard_normal(4)
                v = rng.standard_normal(4)
                assert hessian_quadratic(ds, b, v) <= 1e-12


def kkt_residuals(ds, fit):
    """Worst active/inactive KKT violations across the whole path."""
    worst_active = 0.0
    worst_inactive = 0.0
    for g, lam in enumerate(fit.lambda_grid):
        b = fit.coefs[g]
        mg = -gradient(ds, b)
        act = b != 0.0
        if act.any():
            worst_active = max(worst_active, np.abs(mg[act] + lam * np.sign(b[act])).max())
        if (~act).any():
            worst_inactive = max(worst_inactive, np.abs(mg[~act]).max() - lam * (1.0 + 1e-6))
    return worst_active, worst_inactive


class TestFitPath:
    def test_zero_solution_at_lambda_max(self, small_dataset):
        lmax = lambda_max(small_dataset)
        fit = fit_path(small_dataset, np.array([2.0 * lmax, lmax]))
        assert np.all(fit.coefs == 0.0)
        assert fit.converged.all()

    def test_matches_proximal_gradient_oracle(self):
        ds = make_survival(21, 50, 3, beta=np.array([1.0, -0.6, 0.0]))
        lmax = lambda_max(ds)
        lam = 0.2 * lmax
        grid = np.geomspace(lmax, lam, 8)
        fit = fit_path(ds, grid)
        ref = prox_gradient_cox_lasso(ds.y, ds.delta, ds.design, lam)
        assert np.abs(fit.coefs[-1] - ref).max() < 1e-4

    def test_objective_not_worse_than_zero(self, small_dataset):
        grid = default_lambda_grid(small_dataset, n_lambda=20)
        fit = fit_path(small_dataset, grid)
        ll0 = partial_loglik(small_dataset, np.zeros(4))
        for g, lam in enumerate(grid):
            b = fit.coefs[g]
            obj = -partial_loglik(small_dataset, b) + lam * np.abs(b).sum()
            assert obj <= -ll0 + 1e-12

    def test_kkt_certified_along_path(self):
        ds = make_survival(33, 80, 8, beta=np.array([1.5, -1.0, 0.5, 0, 0, 0, 0, 0]))
        fit = fit_path(ds, default_lambda_grid(ds, n_lambda=40))
        assert fit.converged.all()
        worst_active, worst_inactive = kkt_residuals(ds, fit)
        assert worst_active <= 1e-6
        assert worst_inactive <= 0.0

    def test_strict_raises_when_budget_exhausted(self, small_dataset):
        grid = default_lambda_grid(small_dataset, n_lambda=5)
        with pytest.raises(NotConverged):
            fit_path(small_dataset, grid, max_cycles=0, strict=True)
        fit = fit_path(small_dataset, grid, max_cycles=0)
        assert not fit.converged[1:].any()

    def test_grid_validation(self, small_dataset):
        with pytest.raises(ValueError):
            fit_path(small_dataset, np.array([0.1, 0.2]))
        with pytest.raises(ValueError):
            fit_path(small_dataset, np.array([0.1, -0.2]))


class TestStandardizeDesign:
    def test_unit_scale(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((40, 3)) * 5.0 + 2.0
        xs = standardize_design(x)
        assert np.abs(xs.mean(axis=0)).max() < 1e-12
        assert np.abs(xs.std(axis=0, ddof=1) - 1.0).max() < 1e-12

    def test_constant_rejected(self):
        x = np.ones((10, 2))
        x[:, 0] = np.arange(10)
        with pytest.raises(ConstantColumn):
            standardize_design(x)


class TestCrossValidate:
    def test_leave_one_out_runs(self):
        ds = make_survival(41, 10, 2, beta=np.array([1.0, 0.0]), censor_scale=50.0)
        fit = cross_validate(ds, folds=10, rng_seed=1)
        assert 0 <= fit.chosen_lambda < fit.lambda_grid.size
        assert np.all(np.isfinite(fit.cv_deviance))

    def test_deterministic_in_seed(self):
        ds = make_survival(42, 60, 5, beta=np.array([1.0, -1.0, 0, 0, 0]))
        a = cross_validate(ds, 5, rng_seed=9)
        b = cross_validate(ds, 5, rng_seed=9)
        assert a.chosen_lambda == b.chosen_lambda
        assert np.array_equal(a.cv_deviance, b.cv_deviance)

    def test_duplicated_rows_choose_same_lambda(self):
        ds = make_survival(43, 40, 3, beta=np.array([1.2, -0.8, 0.0]), censor_scale=20.0)
        grid = default_lambda_grid(ds, n_lambda=50)
        fold_ids = np.arange(ds.n) % 5
        fit = cross_validate(ds, 5, grid=grid, fold_ids=fold_ids)

        rows = np.repeat(np.arange(ds.n), 2)
        dup = SurvivalDataset(ds.y[rows], ds.delta[rows], ds.design[rows])
        fit_dup = cross_validate(dup, 5, grid=grid, fold_ids=fold_ids[rows])
        assert abs(fit.chosen_lambda - fit_dup.chosen_lambda) <= 1

    def test_pure_noise_prefers_heavy_penalty(self):
        hits = 0
        runs = 50
        for seed in range(runs):
            ds = make_survival(1000 + seed, 200, 20, beta=None, censor_scale=3.0)
            fit = cross_validate(ds, 10, rng_seed=seed)
            if fit.chosen_lambda < fit.lambda_grid.size // 4:
                hits += 1
        assert hits >= 0.8 * runs

    def test_fold_without_events_rejected(self):
        y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        d = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        ds = SurvivalDataset(y, d, np.random.default_rng(1).standard_normal((6, 2)))
        with pytest.raises(FoldWithoutEvents):
            cross_validate(ds, 3, fold_ids=np.array([0, 0, 1, 1, 2, 2]))

    def test_empty_test_fold_counted(self):
        y = np.linspace(1.0, 9.0, 9)
        d = np.array([1.0, 1.0, 1.0, 1, 1, 1, 0.0, 0.0, 0.0])
        ds = SurvivalDataset(y, d, np.random.default_rng(2).standard_normal((9, 2)))
        fold_ids = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])  # fold 2 has no events
        fit = cross_validate(ds, 3, fold_ids=fold_ids)
        assert fit.cv_empty_fold_warnings == 1
