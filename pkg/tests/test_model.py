import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gharnack as g
from gharnack.model import ModelError, coefficient_lipschitz


class TestGFunction:
    def test_zero(self, wide_band):
        assert g.g_function(0.0, wide_band) == 0.0

    def test_positive_curvature(self, wide_band):
        assert g.g_function(1.0, wide_band) == pytest.approx(0.72, abs=1e-15)

    def test_negative_curvature(self, wide_band):
        assert g.g_function(-1.0, wide_band) == pytest.approx(-0.32, abs=1e-15)

    def test_monotone_bulk(self, wide_band):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 5.0, size=10_000)
        b = a + rng.exponential(1.0, size=10_000)
        assert np.all(g.g_function(a, wide_band) <= g.g_function(b, wide_band))

    def test_subadditive_bulk(self, wide_band):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 5.0, size=10_000)
        b = rng.normal(0.0, 5.0, size=10_000)
        lhs = g.g_function(a + b, wide_band)
        rhs = g.g_function(a, wide_band) + g.g_function(b, wide_band)
        assert np.all(lhs <= rhs + 1e-12)

    @settings(derandomize=True, max_examples=200)
    @given(a=st.floats(-1e6, 1e6), lam=st.floats(0.0, 1e3))
    def test_positively_homogeneous(self, a, lam):
        band = g.VolatilityBand(0.8, 1.2)
        assert g.g_function(lam * a, band) == pytest.approx(
            lam * g.g_function(a, band), rel=1e-12, abs=1e-9)

    @settings(derandomize=True, max_examples=200)
    @given(lo=st.floats(0.1, 2.0), width=st.floats(0.0, 2.0),
           a=st.floats(-100.0, 100.0), b=st.floats(-100.0, 100.0))
    def test_sublinear_any_band(self, lo, width, a, b):
        band = g.VolatilityBand(lo, lo + width)
        lhs = g.g_function(a + b, band)
        rhs = g.g_function(a, band) + g.g_function(b, band)
        assert lhs <= rhs + 1e-9


class TestBandAndGrid:
    def test_band_rejects_zero_lower(self):
        with pytest.raises(ModelError):
            g.VolatilityBand(0.0, 1.0)

    def test_band_rejects_inverted(self):
        with pytest.raises(ModelError):
            g.VolatilityBand(1.2, 0.8)

    def test_grid_nodes(self):
        grid = g.TimeGrid(2.0, 4)
        assert grid.nodes[0] == 0.0
        assert grid.nodes[-1] == 2.0
        assert np.all(np.diff(grid.nodes) > 0)
        assert grid.dt == 0.5

    def test_grid_rejects_bad_horizon(self):
        with pytest.raises(ModelError):
            g.TimeGrid(-1.0, 4)


class TestValidateCoefficients:
    def test_constant_coefficients_pass(self):
        coeffs = g.ModelCoefficients(
            b=g.make_coefficient("constant", (0.0,)),
            h=g.make_coefficient("constant", (0.0,)),
            sigma=g.make_coefficient("constant", (1.0,)),
            K=0.0, kappa1=1.0, kappa2=1.0)
        report = g.validate_coefficients(coeffs, (-5.0, 5.0), g.TimeGrid(1.0, 8))
        assert report.passed
        assert report.worst_lipschitz == 0.0
        assert report.sigma_min == report.sigma_max == 1.0

    def test_sine_sigma_passes_with_true_extrema(self):
        # sup sigma = 1.0, inf sigma = 0.8; dense-grid oracle confirms
        xs = np.linspace(-20, 20, 200_001)
        vals = 0.9 + 0.1 * np.sin(xs)
        assert vals.max() == pytest.approx(1.0, abs=1e-8)
        assert vals.min() == pytest.approx(0.8, abs=1e-8)
        coeffs = g.ModelCoefficients(
            b=g.make_coefficient("constant", (0.0,)),
            h=g.make_coefficient("constant", (0.0,)),
            sigma=g.make_coefficient("sine", (0.9, 0.1, 1.0)),
            K=1.0, kappa1=0.8, kappa2=1.0)
        report = g.validate_coefficients(coeffs, (-20.0, 20.0),
                                         g.TimeGrid(1.0, 8), samples=4096)
        assert report.passed

    def test_sine_sigma_flags_tight_kappa2(self):
        coeffs = g.ModelCoefficients(
            b=g.make_coefficient("constant", (0.0,)),
            h=g.make_coefficient("constant", (0.0,)),
            sigma=g.make_coefficient("sine", (0.9, 0.1, 1.0)),
            K=1.0, kappa1=0.8, kappa2=0.95)
        report = g.validate_coefficients(coeffs, (-20.0, 20.0),
                                         g.TimeGrid(1.0, 8), samples=4096)
        assert not report.passed
        assert any("kappa2" in v for v in report.violations)

    def test_never_passes_sigma_escape(self):
        # random catalog sigmas whose range leaves [kappa1, kappa2] get flagged
        rng = np.random.default_rng(3)
        for _ in range(25):
            offset = rng.uniform(0.5, 1.5)
            amp = rng.uniform(0.05, 0.4)
            sigma = g.make_coefficient("sine", (offset, amp, rng.uniform(0.5, 3.0)))
            k1 = offset - amp / 2.0  # deliberately too tight
            coeffs = g.ModelCoefficients(
                b=g.make_coefficient("constant", (0.0,)),
                h=g.make_coefficient("constant", (0.0,)),
                sigma=sigma, K=5.0, kappa1=k1, kappa2=offset + amp)
            report = g.validate_coefficients(coeffs, (-30.0, 30.0),
                                             g.TimeGrid(1.0, 4), samples=4096)
            assert not report.passed
            assert report.sigma_min < k1 - 1e-9

    def test_rejects_single_sample(self, heat_model):
        with pytest.raises(ModelError):
            g.validate_coefficients(heat_model, (-1.0, 1.0), g.TimeGrid(1.0, 4),
                                    samples=1)

    def test_multiplicative_model_lipschitz(self, multiplicative_model):
        report = g.validate_coefficients(multiplicative_model, (-6.0, 6.0),
                                         g.TimeGrid(1.0, 8), samples=4096)
        assert report.passed
        assert report.worst_lipschitz <= 1.1 + 1e-9


class TestPayoffs:
    def test_catalog_names_build(self):
        from gharnack.model import PAYOFF_NAMES
        for name in PAYOFF_NAMES:
            payoff = g.make_payoff(name)
            xs = np.linspace(-8, 8, 101)
            payoff.check_bounds_on(xs)

    def test_strictly_positive_requires_floor(self):
        with pytest.raises(ModelError):
            g.Payoff(f=lambda x: x, lower_bound=0.0, upper_bound=1.0,
                     strictly_positive=True, name="bad")

    def test_log_transform_requires_positivity(self):
        with pytest.raises(ModelError):
            g.make_payoff("gauss_bump").log()

    def test_shifted_bump_log(self):
        payoff = g.make_payoff("shifted_bump", (0.1,))
        lg = payoff.log()
        assert lg.lower_bound == pytest.approx(math.log(0.1))
        assert lg.f(np.array([0.0]))[0] == pytest.approx(math.log(1.1))

    def test_bounds_check_catches_escape(self):
        payoff = g.Payoff(f=lambda x: x ** 2, lower_bound=0.0, upper_bound=1.0,
                          name="tight")
        with pytest.raises(ModelError):
            payoff.check_bounds_on(np.linspace(-3, 3, 11))


class TestCoefficientCatalog:
    def test_lipschitz_constants(self):
        assert coefficient_lipschitz("constant", (3.0,)) == 0.0
        assert coefficient_lipschitz("affine", (0.0, -2.0)) == 2.0
        assert coefficient_lipschitz("sine", (0.9, 0.1, 1.0)) == pytest.approx(0.1)
        assert coefficient_lipschitz("tanh", (0.95, 0.05, 1.0)) == pytest.approx(0.05)

    def test_catalog_broadcasts(self):
        fn = g.make_coefficient("constant", (2.5,))
        out = fn(0.0, np.zeros(7))
        assert out.shape == (7,)
        assert np.all(out == 2.5)

    def test_unknown_entry_rejected(self):
        with pytest.raises(ModelError):
            g.make_coefficient("cubic", (1.0,))

    def test_empirical_lipschitz_matches_declared(self):
        # catalog Lipschitz constants are sharp on a dense grid
        xs = np.linspace(-10, 10, 20_001)
        for name, params in [("affine", (1.0, -2.0)), ("sine", (0.0, 0.3, 2.0)),
                             ("tanh", (0.5, 0.2, 3.0))]:
            fn = g.make_coefficient(name, params)
            vals = fn(0.0, xs)
            quot = np.max(np.abs(np.diff(vals)) / np.diff(xs))
            assert quot <= coefficient_lipschitz(name, params) + 1e-9
