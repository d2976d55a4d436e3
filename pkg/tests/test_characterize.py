import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from quantastream.characterize import (
    dynamic_range,
    response_curve,
    snr_at,
    write_response_csv,
)


class TestSnrAt:
    def test_hand_evaluated_low_point(self):
        # lambda = 0.025, N = 4096: p = 0.02469, sigma_p = 2.424e-3,
        # eps = 2.49e-3, SNR = 20.0 +- 0.2 dB
        pt = snr_at(0.025, 4096)
        assert_allclose(pt.p, 0.02469, atol=5e-6)
        assert_allclose(pt.epsilon, 2.49e-3, rtol=0.01)
        assert abs(pt.snr_db - 20.0) <= 0.2
        assert pt.lam_minus <= pt.lam <= pt.lam_plus

    def test_hand_evaluated_high_point(self):
        pt = snr_at(7.0, 4096)
        assert_allclose(pt.epsilon, 0.73, rtol=0.01)
        assert abs(pt.snr_db - 19.6) <= 0.3

    def test_snr_grows_without_bound_in_n(self):
        snrs = [snr_at(1.0, n).snr_db for n in (4096, 10**8, 10**12)]
        assert snrs[0] < snrs[1] < snrs[2]
        assert snrs[2] > 100.0

    def test_saturated_marker(self):
        pt = snr_at(5.0, 16)   # p + sigma > 1 for small budgets
        assert pt.saturated
        assert pt.snr_db == -math.inf
        assert math.isfinite(pt.lam_plus)

    def test_extreme_flux_handled(self):
        pt = snr_at(100.0, 4096)  # p rounds to 1.0 in float64
        assert pt.saturated

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            snr_at(0.0, 4096)
        with pytest.raises(ValueError):
            snr_at(-1.0, 4096)
        with pytest.raises(ValueError):
            snr_at(1.0, 0)

    @pytest.mark.parametrize("lam,n", [(0.1, 4096), (1.0, 4096), (1.0, 256)])
    def test_epsilon_matches_monte_carlo_spread(self, lam, n):
        # simulate the estimator: binomial draws inverted to flux; the
        # [16th, 84th] percentile half-spread is the 1-sigma error
        pt = snr_at(lam, n)
        rng = np.random.default_rng(123)
        p_hat = rng.binomial(n, pt.p, size=100_000) / n
        lam_hat = -np.log1p(-np.minimum(p_hat, 1.0 - 1e-12))
        q16, q84 = np.percentile(lam_hat, [16, 84])
        half_spread = (q84 - q16) / 2.0
        assert abs(half_spread - pt.epsilon) <= 0.25 * pt.epsilon


class TestDynamicRange:
    def test_n4096_endpoints_match_reported_range(self):
        dr = dynamic_range(4096, 20.0)
        assert 0.021 <= dr.lam_lo <= 0.029
        assert 6.0 <= dr.lam_hi <= 8.0

    def test_n256_high_endpoint(self):
        dr = dynamic_range(256, 20.0)
        assert 2.1 <= dr.lam_hi <= 2.9

    def test_monotone_widening(self):
        d256 = dynamic_range(256, 20.0)
        d4096 = dynamic_range(4096, 20.0)
        assert d4096.lam_lo < d256.lam_lo
        assert d4096.lam_hi > d256.lam_hi
        # N = 16 never reaches 20 dB: its range is empty, trivially nested
        with pytest.raises(ValueError, match="empty"):
            dynamic_range(16, 20.0)

    def test_bisection_tolerance(self):
        dr = dynamic_range(4096, 20.0)
        assert snr_at(dr.lam_lo, 4096).snr_db >= 20.0
        assert snr_at(dr.lam_lo * 0.98, 4096).snr_db < 20.0
        assert snr_at(dr.lam_hi, 4096).snr_db >= 20.0
        assert snr_at(dr.lam_hi * 1.02, 4096).snr_db < 20.0

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            dynamic_range(8, 20.0)
        with pytest.raises(ValueError):
            dynamic_range(4096, 20.0, search_bounds=(1.0, 0.1))


class TestResponseCurve:
    def test_p_half_at_ln2(self):
        pts = response_curve(np.array([math.log(2.0)]), 4096)
        assert_allclose(pts[0].p, 0.5, rtol=1e-12)

    def test_plateau_shape(self):
        grid = np.geomspace(1e-3, 1e2, 200)
        pts = response_curve(grid, 4096)
        snrs = np.array([p.snr_db for p in pts])
        peak = int(np.argmax(snrs))
        assert 0 < peak < len(snrs) - 1
        finite = np.isfinite(snrs)
        assert snrs[finite][-1] < snrs[peak]
        assert snrs[0] < snrs[peak]

    def test_small_budget_curve_below_large_budget(self):
        grid = np.geomspace(1e-3, 1e2, 100)
        s16 = np.array([p.snr_db for p in response_curve(grid, 16)])
        s4096 = np.array([p.snr_db for p in response_curve(grid, 4096)])
        assert np.all(s16 <= s4096 + 1e-9)

    def test_continuity_on_usable_flank(self):
        # < 1 dB between neighbors at grid ratio <= 1.05 on the rising
        # flank and plateau; the saturation flank has unbounded log-slope
        # (lam_plus diverges as p + sigma -> 1), so it is excluded
        for n, top in ((4096, 5.0), (256, 1.0), (16, 1.0)):
            steps = int(np.ceil(np.log(top / 1e-3) / np.log(1.05))) + 1
            grid = np.geomspace(1e-3, top, steps)
            assert grid[1] / grid[0] <= 1.05
            snrs = np.array([p.snr_db for p in response_curve(grid, n)])
            assert np.abs(np.diff(snrs)).max() < 1.0

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            response_curve(np.array([1.0, 0.5]), 16)
        with pytest.raises(ValueError):
            response_curve(np.array([-1.0, 0.5]), 16)

    def test_csv_export(self, tmp_path):
        path = tmp_path / "curve.csv"
        pts = response_curve(np.geomspace(0.01, 1.0, 10), 4096)
        write_response_csv(path, pts)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "lambda,p,lambda_minus,lambda_plus,epsilon,snr_db"
        assert len(rows) == 11
        lam0 = float(rows[1].split(",")[0])
        assert_allclose(lam0, 0.01, rtol=1e-6)
