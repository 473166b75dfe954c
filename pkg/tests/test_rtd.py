import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mfreactor import rtd


def family_curve(n, dt=0.004, t_max=14.0, scale_t=1.0, scale_c=1.0):
    theta = np.arange(dt, t_max, dt)
    e = rtd.tanks_in_series_curve(theta, n)
    return rtd.RtdCurve(theta * scale_t, e * scale_c)


class TestRtdCurve:
    def test_rejects_short(self):
        with pytest.raises(ValueError):
            rtd.RtdCurve(np.arange(5.0), np.ones(5))

    def test_rejects_non_monotone_times(self):
        t = np.array([0, 1, 2, 2, 3, 4, 5, 6], dtype=float)
        with pytest.raises(ValueError):
            rtd.RtdCurve(t, np.ones(8))

    def test_rejects_all_zero(self):
        with pytest.raises(rtd.DegenerateCurveError):
            rtd.RtdCurve(np.arange(8.0), np.zeros(8))

    def test_csv_round_trip(self, tmp_path):
        curve = family_curve(5.0)
        path = curve.to_csv(tmp_path / "curve.csv")
        back = rtd.RtdCurve.from_csv(path)
        assert np.array_equal(back.times, curve.times)
        assert np.array_equal(back.concentrations, curve.concentrations)


class TestToDimensionless:
    def test_exponential_analytic(self):
        # C(t) = exp(-t) has mean residence time 1, so theta == t and
        # E(theta) == exp(-theta).
        t = np.linspace(0.0, 20.0, 4001)
        curve = rtd.RtdCurve(t, np.exp(-t))
        d = rtd.to_dimensionless(curve)
        assert np.trapezoid(d.e_theta, d.theta) == pytest.approx(1.0, abs=1e-6)
        t_bar = np.trapezoid(d.theta * d.e_theta, d.theta)
        assert t_bar == pytest.approx(1.0, abs=1e-3)
        sel = d.theta < 5
        assert np.allclose(d.e_theta[sel], np.exp(-d.theta[sel]), atol=2e-4)

    @given(st.floats(0.01, 100.0), st.floats(0.01, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_scaling_invariance(self, c_scale, t_scale):
        base = rtd.to_dimensionless(family_curve(8.0))
        scaled = rtd.to_dimensionless(family_curve(8.0, scale_t=t_scale,
                                                   scale_c=c_scale))
        assert np.allclose(scaled.theta, base.theta, rtol=1e-9)
        assert np.allclose(scaled.e_theta, base.e_theta, rtol=1e-9)

    def test_unit_mass_and_mean(self):
        for n in (2.0, 10.0, 50.0):
            d = rtd.to_dimensionless(family_curve(n, scale_t=3.0))
            assert np.trapezoid(d.e_theta, d.theta) == pytest.approx(1.0, abs=1e-6)
            mean = np.trapezoid(d.theta * d.e_theta, d.theta)
            assert mean == pytest.approx(1.0, abs=1e-3)


class TestTanksInSeriesCurve:
    def test_requires_n_above_one(self):
        with pytest.raises(ValueError):
            rtd.tanks_in_series_curve(np.array([0.5]), 1.0)

    def test_exponential_limit(self):
        theta = np.linspace(1e-6, 6, 500)
        e = rtd.tanks_in_series_curve(theta, 1.0 + 1e-9)
        assert np.allclose(e, np.exp(-theta), atol=1e-6)
        assert rtd.tanks_in_series_curve(np.array([1e-6]), 1 + 1e-9)[0] == pytest.approx(
            1.0, abs=1e-3)

    def test_mode_location(self):
        # dE/dtheta = 0 at theta = (n-1)/n, symbolically.
        for n in (1.5, 2.0, 10.0, 60.0):
            mode = rtd.tanks_mode(n)
            h = 1e-7
            lo = rtd.tanks_in_series_curve(np.array([mode - h]), n)[0]
            mid = rtd.tanks_in_series_curve(np.array([mode]), n)[0]
            hi = rtd.tanks_in_series_curve(np.array([mode + h]), n)[0]
            assert mid >= lo and mid >= hi
            assert mid == pytest.approx(float(rtd.tanks_peak_height(n)), rel=1e-12)

    def test_unit_integral_by_quadrature(self):
        for n in (2.0, 10.0, 50.0):
            total, _ = quad(lambda th: rtd.tanks_in_series_curve(np.array([th]), n)[0],
                            0.0, 40.0, limit=200)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_log_space_matches_direct_and_stays_finite(self):
        from scipy.special import gamma
        theta = np.linspace(0.01, 5, 300)
        for n in (2.0, 8.0, 20.0):
            direct = n * (n * theta) ** (n - 1) * np.exp(-n * theta) / gamma(n)
            ours = rtd.tanks_in_series_curve(theta, n)
            assert np.allclose(ours, direct, rtol=1e-10)
        big = rtd.tanks_in_series_curve(theta, 500.0)
        assert np.all(np.isfinite(big))
        assert big.max() > 0

    def test_zero_theta_is_zero_density(self):
        assert rtd.tanks_in_series_curve(np.array([0.0]), 3.0)[0] == 0.0


class TestFit:
    def test_round_trip(self):
        for n in (2.0, 5.0, 10.0, 20.0, 50.0):
            d = rtd.to_dimensionless(family_curve(n, scale_t=2.5))
            n_star = rtd.fit_tanks_in_series(d)
            assert n_star == pytest.approx(n, rel=0.01)

    def test_exponential_pins_at_lower_bound(self):
        t = np.arange(0.004, 12, 0.004)
        d = rtd.to_dimensionless(rtd.RtdCurve(t, np.exp(-t)))
        fit = rtd.fit_tanks_in_series_detail(d)
        assert fit.at_lower_bound
        assert fit.n == pytest.approx(rtd.N_LOWER, abs=1e-6)

    def test_invariant_to_concentration_scaling(self):
        d1 = rtd.to_dimensionless(family_curve(12.0, scale_c=1.0))
        d2 = rtd.to_dimensionless(family_curve(12.0, scale_c=250.0))
        assert rtd.fit_tanks_in_series(d1) == pytest.approx(
            rtd.fit_tanks_in_series(d2), rel=1e-9)

    def test_peak_above_range_raises(self):
        # A spike far sharper than the family at n_max.
        t = np.linspace(0.001, 2, 2000)
        c = np.exp(-0.5 * ((t - 1) / 0.001) ** 2)
        d = rtd.to_dimensionless(rtd.RtdCurve(t, c))
        with pytest.raises(rtd.RtdFitError):
            rtd.fit_tanks_in_series(d, n_max=200.0)

    def test_least_squares_agrees_with_peak_on_clean_curves(self):
        for n in (3.0, 10.0, 30.0):
            d = rtd.to_dimensionless(family_curve(n))
            peak = rtd.fit_tanks_in_series(d, method="peak")
            lsq = rtd.fit_tanks_in_series(d, method="least-squares")
            assert abs(peak - lsq) / peak < 0.05

    def test_low_branch_recovery(self):
        # Below the family's peak-height dip the two branches are
        # disambiguated by the observed peak location.
        d = rtd.to_dimensionless(family_curve(1.3))
        assert rtd.fit_tanks_in_series(d) == pytest.approx(1.3, rel=0.02)

    def test_degenerate_peak_raises(self):
        d = rtd.DimensionlessRtd(np.linspace(0, 1, 10), np.full(10, 1e-12))
        with pytest.raises(rtd.DegenerateCurveError):
            rtd.fit_tanks_in_series(d)


class TestPeakHeightShape:
    def test_strictly_increasing_beyond_dip(self):
        # The family peak is monotone increasing past its dip near n = 1.63;
        # this is what makes peak matching well-posed on the upper branch.
        ns = np.linspace(2.0, 100.0, 300)
        peaks = rtd.tanks_peak_height(ns)
        assert np.all(np.diff(peaks) > 0)

    def test_dip_location(self):
        n_dip = rtd._N_DIP
        assert rtd.tanks_peak_height(n_dip) < rtd.tanks_peak_height(n_dip - 0.05)
        assert rtd.tanks_peak_height(n_dip) < rtd.tanks_peak_height(n_dip + 0.05)
