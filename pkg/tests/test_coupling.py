import math

import numpy as np
import pytest
from mpmath import mp
from scipy.integrate import solve_ivp

import gharnack as g
from gharnack.coupling import CouplingError, shifted_qv_discrepancy

mp.dps = 30


def schedule_example():
    """K=1, sigma_lower=1, kappa1=0.9, kappa2=1.0, alpha=0.81, T=1."""
    coeffs = g.ModelCoefficients(
        b=g.make_coefficient("affine", (0.0, -1.0)),
        h=g.make_coefficient("constant", (0.0,)),
        sigma=g.make_coefficient("sine", (0.95, 0.05, 1.0)),
        K=1.0, kappa1=0.9, kappa2=1.0)
    band = g.VolatilityBand(1.0, 1.0)
    return coeffs, band


def lambda0_ode_oracle(K, sigma_lower, kappa1, kappa2, alpha, T):
    """Integrate the defining identity backward from lambda(T) = 0."""
    cap = 2.0 * kappa1 ** 2 / kappa2 ** 2
    c_K = K * (2.0 + K + 2.0 / sigma_lower ** 2)

    def rhs(s, mu):  # mu(s) = lambda(T - s)
        return sigma_lower ** 2 * (cap - alpha - c_K * mu[0])

    sol = solve_ivp(rhs, (0.0, T), [0.0], rtol=1e-11, atol=1e-13,
                    dense_output=True)
    return float(sol.y[0, -1])


class TestMakeSchedule:
    def test_vanishes_at_horizon(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        assert schedule.value(1.0) == pytest.approx(0.0, abs=1e-15)

    def test_positive_and_decreasing_before_horizon(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        ts = np.linspace(0.0, 0.999, 500)
        vals = schedule.value(ts)
        assert np.all(vals > 0.0)
        assert np.all(np.diff(vals) < 0.0)
        assert np.all(schedule.derivative(ts) < 0.0)

    def test_lambda0_closed_form_high_precision(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        exact = mp.mpf("0.81") / 5 * (1 - mp.exp(-5))
        assert schedule.lambda0 == pytest.approx(float(exact), rel=1e-14)
        assert schedule.lambda0 == pytest.approx(0.160908, abs=5e-7)

    def test_lambda0_matches_ode_oracle(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        oracle = lambda0_ode_oracle(1.0, 1.0, 0.9, 1.0, 0.81, 1.0)
        assert schedule.lambda0 == pytest.approx(oracle, rel=1e-9)

    def test_identity_residual_random_tuples(self):
        rng = np.random.default_rng(17)
        ts = np.linspace(0.0, 1.0, 1000)
        for _ in range(20):
            K = rng.uniform(0.1, 3.0)
            sl = rng.uniform(0.3, 1.5)
            k1 = rng.uniform(0.3, 1.5)
            k2 = k1 * rng.uniform(1.0, 1.8)
            T = rng.uniform(0.25, 3.0)
            cap = 2.0 * k1 ** 2 / k2 ** 2
            alpha = rng.uniform(0.05, 0.95) * cap
            coeffs = g.ModelCoefficients(
                b=g.make_coefficient("constant", (0.0,)),
                h=g.make_coefficient("constant", (0.0,)),
                sigma=g.make_coefficient("constant", (k1,)),
                K=K, kappa1=k1, kappa2=k2)
            schedule = g.make_schedule(alpha, coeffs,
                                       g.VolatilityBand(sl, sl + 0.1), T)
            residual = schedule.identity_residual(ts * T)
            assert np.max(np.abs(residual)) <= 1e-8

    def test_finite_difference_derivative_agrees(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        step = 1e-6
        ts = np.linspace(0.1, 0.9, 33)
        fd = (schedule.value(ts + step) - schedule.value(ts - step)) / (2 * step)
        assert np.max(np.abs(fd - schedule.derivative(ts))) < 1e-7

    def test_alpha_outside_interval_rejected(self):
        coeffs, band = schedule_example()
        cap = 2.0 * 0.81  # 2 kappa1^2 / kappa2^2
        for alpha in (0.0, -0.5, cap, cap + 0.1):
            with pytest.raises(CouplingError):
                g.make_schedule(alpha, coeffs, band, 1.0)

    def test_zero_lipschitz_rejected_with_hint(self, heat_model, unit_band):
        coeffs = g.ModelCoefficients(
            b=g.make_coefficient("constant", (0.0,)),
            h=g.make_coefficient("constant", (0.0,)),
            sigma=g.make_coefficient("constant", (1.0,)),
            K=0.0, kappa1=1.0, kappa2=1.0)
        with pytest.raises(CouplingError, match="limit_schedule"):
            g.make_schedule(1.0, coeffs, unit_band, 1.0)

    def test_limit_schedule_form_and_identity(self, unit_band):
        coeffs = g.ModelCoefficients(
            b=g.make_coefficient("constant", (0.0,)),
            h=g.make_coefficient("constant", (0.0,)),
            sigma=g.make_coefficient("constant", (1.0,)),
            K=0.0, kappa1=1.0, kappa2=1.0)
        schedule = g.make_schedule(1.0, coeffs, unit_band, 2.0,
                                   limit_schedule=True)
        # lambda(t) = (2 - 1) * 1 * (T - t)
        assert schedule.value(0.0) == pytest.approx(2.0)
        assert schedule.value(2.0) == 0.0
        ts = np.linspace(0.0, 2.0, 1000)
        assert np.max(np.abs(schedule.identity_residual(ts))) <= 1e-12

    def test_limit_schedule_requires_zero_K(self):
        coeffs, band = schedule_example()
        with pytest.raises(CouplingError):
            g.make_schedule(0.81, coeffs, band, 1.0, limit_schedule=True)


class TestMomentExponent:
    def test_example_value_high_precision(self):
        a = g.moment_exponent_a(0.81, 0.9, 1.0)
        exact = (mp.mpf("0.81") ** 2 * mp.mpf("0.9") ** 2) / (
            4 * mp.mpf("0.1") ** 2 + 4 * mp.mpf("0.81") * mp.mpf("0.1") * mp.mpf("0.9"))
        assert a == pytest.approx(float(exact), rel=1e-14)
        assert a == pytest.approx(1.60266, abs=5e-6)

    def test_equal_kappas_rejected_with_pointer(self):
        with pytest.raises(CouplingError, match="log-Harnack|entropy"):
            g.moment_exponent_a(0.5, 1.0, 1.0)


@pytest.fixture(scope="module")
def acc_setup(multiplicative_model, pinched_band):
    schedule = g.make_schedule(0.81, multiplicative_model, pinched_band, 1.0)
    grid = g.TimeGrid(1.0, 512)
    controls = g.sample_controls("constants", pinched_band, grid, 5, seed=3)
    return multiplicative_model, pinched_band, schedule, grid, controls


class TestSimulateCoupled:
    def test_equal_starts_stay_coupled(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        bundle = g.simulate_coupled(coeffs, schedule, 0.4, 0.4, controls[2],
                                    seed=21, clip_epsilon=0.01, n_paths=64)
        assert np.array_equal(bundle.x_path, bundle.y_path)
        assert np.all(bundle.g_path == 0.0)
        assert np.all(bundle.log_m_path == 0.0)
        assert np.all(bundle.m_path == 1.0)

    def test_g_bound_every_step(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        bundle = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[4],
                                    seed=22, clip_epsilon=0.01, n_paths=256)
        lam = schedule.value(grid.nodes)
        for j in range(bundle.clip_index):
            gap = np.abs(bundle.x_path[:, j] - bundle.y_path[:, j])
            bound = gap / (lam[j] * coeffs.kappa1)
            assert np.all(np.abs(bundle.g_path[:, j]) <= bound * (1 + 1e-12))

    def test_gap_median_decreases_with_clip(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        medians = []
        for eps in (0.2, 0.1, 0.05):
            bundle = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[2],
                                        seed=23, clip_epsilon=eps, n_paths=1024)
            j = bundle.clip_index
            medians.append(float(np.median(
                np.abs(bundle.x_path[:, j] - bundle.y_path[:, j]))))
        assert medians[0] > medians[1] > medians[2]

    def test_fine_reference_confirms_trend(self, acc_setup):
        # brute-force refinement: a 4x finer grid reproduces the decrease
        coeffs, band, schedule, grid, controls = acc_setup
        fine_grid = g.TimeGrid(1.0, 2048)
        fine_controls = g.sample_controls("constants", band, fine_grid, 5, seed=3)
        medians = []
        for eps in (0.2, 0.05):
            bundle = g.simulate_coupled(coeffs, schedule, 0.0, 0.5,
                                        fine_controls[2], seed=23,
                                        clip_epsilon=eps, n_paths=512)
            j = bundle.clip_index
            medians.append(float(np.median(
                np.abs(bundle.x_path[:, j] - bundle.y_path[:, j]))))
        assert medians[0] > medians[1]

    def test_clip_epsilon_validated(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        for eps in (0.0, -0.1, 0.3):
            with pytest.raises(CouplingError):
                g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[0],
                                   seed=1, clip_epsilon=eps)

    def test_bit_reproducible(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        b1 = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[1],
                                seed=31, clip_epsilon=0.01, n_paths=32)
        b2 = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[1],
                                seed=31, clip_epsilon=0.01, n_paths=32)
        assert np.array_equal(b1.x_path, b2.x_path)
        assert np.array_equal(b1.log_m_path, b2.log_m_path)

    def test_density_positive_and_martingale_proxy(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        bundle = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[3],
                                    seed=33, clip_epsilon=0.01, n_paths=8192)
        assert np.all(bundle.m_path > 0.0)
        assert np.all(bundle.log_m_path[:, 0] == 0.0)
        quarter = grid.n_steps // 4
        for j in (quarter, 2 * quarter, 3 * quarter, bundle.clip_index):
            m = np.exp(bundle.log_m_path[:, j])
            se = float(np.std(m, ddof=1) / math.sqrt(m.size))
            assert abs(float(np.mean(m)) - 1.0) <= 3.0 * se


class TestShiftedQv:
    def test_zero_shift_exact(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        bundle = g.simulate_coupled(coeffs, schedule, 0.2, 0.2, controls[0],
                                    seed=41, clip_epsilon=0.01, n_paths=64)
        assert shifted_qv_discrepancy(bundle) == 0.0
        assert g.girsanov_shifted_qv_check(bundle)

    def test_bounded_shift_within_tolerance(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        bundle = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[-1],
                                    seed=42, clip_epsilon=0.01, n_paths=512)
        assert g.girsanov_shifted_qv_check(bundle)

    def test_refinement_halves_discrepancy(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        fine_grid = g.TimeGrid(1.0, 1024)
        fine_control = g.sample_controls("constants", band, fine_grid, 5,
                                         seed=3)[-1]
        coarse = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, controls[-1],
                                    seed=43, clip_epsilon=0.01, n_paths=512)
        fine = g.simulate_coupled(coeffs, schedule, 0.0, 0.5, fine_control,
                                  seed=43, clip_epsilon=0.01, n_paths=512)
        ratio = shifted_qv_discrepancy(coarse) / shifted_qv_discrepancy(fine)
        assert 1.5 <= ratio <= 2.7


class TestEntropyBound:
    def test_equal_starts_zero_slack(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        report = g.entropy_bound_check(coeffs, schedule, 0.3, 0.3, controls,
                                       512, seed=51, clip_epsilon=0.01)
        assert report.estimate == 0.0
        assert report.bound == 0.0
        assert report.slack == 0.0
        assert report.passed

    def test_bound_value_high_precision(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        bound = g.entropy_bound_value(schedule, 0.9, 0.0, 0.5)
        lam0 = mp.mpf("0.81") / 5 * (1 - mp.exp(-5))
        exact = mp.mpf("0.25") / (2 * mp.mpf("0.81") * mp.mpf("0.81") * lam0)
        assert bound == pytest.approx(float(exact), rel=1e-13)

    def test_bound_quadratic_in_separation(self):
        coeffs, band = schedule_example()
        schedule = g.make_schedule(0.81, coeffs, band, 1.0)
        b1 = g.entropy_bound_value(schedule, 0.9, 0.0, 0.5)
        b2 = g.entropy_bound_value(schedule, 0.9, 0.0, 1.0)
        assert b2 == pytest.approx(4.0 * b1, rel=1e-14)

    def test_estimate_below_bound(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        report = g.entropy_bound_check(coeffs, schedule, 0.0, 0.5, controls,
                                       2048, seed=52, clip_epsilon=0.01)
        assert report.passed
        assert report.slack >= -3.0 * report.std_error
        assert report.stiff_excluded == 0


class TestMomentBound:
    def test_equal_starts_equality(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        report = g.moment_bound_check(coeffs, schedule, -0.2, -0.2, controls,
                                      512, seed=61, clip_epsilon=0.01)
        assert report.estimate == pytest.approx(1.0, abs=1e-14)
        assert report.bound == pytest.approx(1.0, abs=1e-14)
        assert report.passed

    def test_bound_monotone_in_separation(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        gaps = [0.1 * 2 ** k for k in range(5)]
        bounds = [g.moment_bound_value(schedule, 0.9, 1.0, 0.0, gap)
                  for gap in gaps]
        assert all(a < b for a, b in zip(bounds, bounds[1:]))

    def test_estimate_below_bound(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        report = g.moment_bound_check(coeffs, schedule, 0.0, 0.5, controls,
                                      2048, seed=62, clip_epsilon=0.01)
        assert report.passed

    def test_equal_kappas_rejected(self, ou_model, unit_band):
        coeffs = ou_model
        schedule = g.make_schedule(1.0, coeffs, unit_band, 1.0)
        grid = g.TimeGrid(1.0, 64)
        controls = g.sample_controls("constants", unit_band, grid, 1, seed=0)
        with pytest.raises(CouplingError, match="entropy|log-Harnack"):
            g.moment_bound_check(coeffs, schedule, 0.0, 0.5, controls, 512,
                                 seed=63, clip_epsilon=0.05)


class TestCouplingSuccess:
    def test_equal_starts_all_zero(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        bundles = [
            g.simulate_coupled(coeffs, schedule, 0.1, 0.1, c, seed=71,
                               clip_epsilon=eps, n_paths=128)
            for eps in (0.2, 0.1) for c in controls[:2]
        ]
        report = g.coupling_success_check(bundles)
        assert all(r.weighted_mean == 0.0 for r in report.rows)
        assert all(r.weighted_median == 0.0 for r in report.rows)

    def test_sweep_trend_and_bound(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup

        def bundles():
            for eps in (0.2, 0.1, 0.05, 0.025):
                for c in controls:
                    yield g.simulate_coupled(coeffs, schedule, 0.0, 0.5, c,
                                             seed=72, clip_epsilon=eps,
                                             n_paths=1024)

        report = g.coupling_success_check(bundles())
        assert report.strictly_decreasing
        assert report.bounded
        assert report.passed
        assert report.fitted_C <= report.theory_C

    def test_schedule_vanishes_with_clip(self, acc_setup):
        coeffs, band, schedule, grid, controls = acc_setup
        lams = [float(schedule.value(1.0 - eps))
                for eps in (0.2, 0.1, 0.05, 0.025)]
        assert all(a > b for a, b in zip(lams, lams[1:]))
        assert lams[-1] < 0.02


class TestBundleExport:
    def test_csv_columns(self, acc_setup, tmp_path):
        coeffs, band, schedule, grid, controls = acc_setup
        bundles = [
            g.simulate_coupled(coeffs, schedule, 0.0, 0.5, c, seed=81,
                               clip_epsilon=0.01, n_paths=4)
            for c in controls[:2]
        ]
        path = tmp_path / "paths.csv"
        from gharnack.coupling import export_bundle_csv
        export_bundle_csv(bundles, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "control_id,path_id,clip_time,x,y,abs_gap,m,log_m"
        assert len(lines) == 1 + 2 * 4
        cells = lines[1].split(",")
        assert cells[0] == "0" and cells[1] == "0"
        assert float(cells[6]) == pytest.approx(math.exp(float(cells[7])))
