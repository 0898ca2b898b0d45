import math

import numpy as np
import pytest
from scipy.integrate import quad

from helpers import family_grid, ks_distance
from uvchan import params as pr
from uvchan.rng import substream


HIGH = pr.DensityCondition.HIGH
MED = pr.DensityCondition.MEDIUM
LOW = pr.DensityCondition.LOW
S = pr.ScattererClass.STATIC
TD = pr.ScattererClass.TERRESTRIAL_DYNAMIC
AD = pr.ScattererClass.AERIAL_DYNAMIC


@pytest.fixture(scope="module")
def table():
    return pr.default_table()


# ---------------------------------------------------------------------------
# CDFs
# ---------------------------------------------------------------------------

class TestLogisticCdf:
    def test_half_at_mean(self):
        p = pr.LogisticParams(0.7534, 0.5236)
        assert pr.logistic_cdf(p.mu, p) == pytest.approx(0.5, abs=1e-15)

    def test_stored_static_high_params(self, table):
        p = table.get(S, HIGH, pr.Family.SCATTERER_NUMBER)
        assert (p.mu, p.gamma) == (0.7534, 0.5236)

    def test_quartile_offset(self):
        # Inverting u = 1/(1+exp(-(x-mu)/g)) at u=0.75 gives x = mu + g*ln 3.
        p = pr.LogisticParams(0.2, 1.7)
        assert pr.logistic_cdf(p.mu + p.gamma * math.log(3.0), p) == pytest.approx(0.75, abs=1e-12)

    def test_strictly_increasing(self):
        p = pr.LogisticParams(0.0, 0.3)
        x = np.linspace(-5, 5, 500)
        assert np.all(np.diff(pr.logistic_cdf(x, p)) > 0)


class TestGammaCdf:
    def test_zero_at_origin(self):
        assert pr.gamma_cdf(0.0, pr.GammaParams(0.8223, 1.9232)) == 0.0

    def test_exponential_special_case_vs_quadrature(self):
        # alpha=1 reduces to Exp(rate beta); verify against direct integration
        # of the density as an independent oracle.
        p = pr.GammaParams(1.0, 2.0)
        oracle, err = quad(lambda t: p.beta * math.exp(-p.beta * t), 0.0, 0.5)
        assert err < 1e-12
        assert oracle == pytest.approx(1.0 - math.exp(-1.0), abs=1e-10)
        assert pr.gamma_cdf(0.5, p) == pytest.approx(oracle, abs=1e-10)

    def test_quadrature_oracle_fractional_shape(self):
        p = pr.GammaParams(0.8223, 1.9232)
        density = lambda t: (p.beta ** p.alpha) * t ** (p.alpha - 1) * math.exp(-p.beta * t) / math.gamma(p.alpha)
        for x in (0.05, 0.3, 1.2):
            oracle, _ = quad(density, 0.0, x, points=[0.0])
            assert pr.gamma_cdf(x, p) == pytest.approx(oracle, abs=1e-9)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            pr.gamma_cdf(-0.1, pr.GammaParams(1.0, 1.0))


class TestRayleighCdf:
    def test_median(self):
        p = pr.RayleighParams(0.3541)
        assert pr.rayleigh_cdf(p.sigma * math.sqrt(2 * math.log(2)), p) == pytest.approx(0.5, abs=1e-14)

    def test_stored_td_high(self, table):
        assert table.get(TD, HIGH, pr.Family.DISTANCE).sigma == 0.3541

    def test_saturates(self):
        p = pr.RayleighParams(0.2025)
        assert pr.rayleigh_cdf(10 * p.sigma, p) == pytest.approx(1.0, abs=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            pr.rayleigh_cdf(-1e-9, pr.RayleighParams(1.0))


class TestGaussianCdf:
    def test_half_at_mean(self):
        p = pr.GaussianParams(0.3241, 1.0125)
        assert pr.gaussian_cdf(p.mu, p) == pytest.approx(0.5, abs=1e-15)

    def test_stored_aaod_ad_high(self, table):
        p = table.get(AD, HIGH, pr.Family.AAOD)
        assert (p.mu, p.sigma) == (0.3241, 1.0125)

    def test_one_sigma_vs_quadrature(self):
        p = pr.GaussianParams(-0.3215, 0.5124)
        density = lambda t: math.exp(-((t - p.mu) / p.sigma) ** 2 / 2) / (p.sigma * math.sqrt(2 * math.pi))
        oracle, _ = quad(density, p.mu - 12 * p.sigma, p.mu + p.sigma)
        assert oracle == pytest.approx(0.8413447460685429, abs=1e-9)
        assert pr.gaussian_cdf(p.mu + p.sigma, p) == pytest.approx(oracle, abs=1e-9)


def test_every_row_monotone_on_grid(table):
    for (cls, cond, fam), p in table.rows().items():
        if fam is pr.Family.POWER_DELAY:
            continue
        grid = family_grid(p)
        grid = grid[grid >= 0] if isinstance(p, (pr.GammaParams, pr.RayleighParams)) else grid
        values = pr.cdf(grid, p)
        assert np.all(np.diff(values) >= 0), (cls, cond, fam)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

class TestSampling:
    def test_logistic_ks(self):
        p = pr.LogisticParams(0.7534, 0.5236)
        draws = pr.sample(p, substream(7, "fit/ks-logistic"), 100_000)
        assert ks_distance(draws, lambda x: pr.logistic_cdf(x, p)) < 0.01

    def test_rayleigh_mean_identity(self):
        p = pr.RayleighParams(0.3541)
        draws = pr.sample(p, substream(7, "fit/rayleigh-mean"), 100_000)
        assert np.mean(draws) == pytest.approx(p.sigma * math.sqrt(math.pi / 2), rel=0.01)

    def test_same_substream_same_draws(self):
        p = pr.GammaParams(0.8223, 1.9232)
        a = pr.sample(p, substream(123, "evolve/l0/0"), 64)
        b = pr.sample(p, substream(123, "evolve/l0/0"), 64)
        c = pr.sample(p, substream(123, "evolve/l0/1"), 64)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_absent_combination_raises(self, table):
        with pytest.raises(pr.AbsentParameterError):
            table.get(AD, LOW, pr.Family.SCATTERER_NUMBER)

    def test_nonnegative_sampling(self):
        p = pr.LogisticParams(0.05, 0.4)  # large negative mass
        draws = pr.sample_nonnegative(p, substream(3, "fit/nonneg"), 20_000)
        assert np.all(draws >= 0)

    def test_exponential_mean(self):
        draws = pr.sample_exponential(80e-9, substream(11, "fit/exp"), 100_000)
        assert np.mean(draws) == pytest.approx(80e-9, rel=0.02)

    def test_count_realisation_floor(self):
        p = pr.LogisticParams(-5.0, 0.01)  # essentially always negative
        rng = substream(1, "fit/count")
        assert pr.realize_count(p, 100.0, rng, at_least_one=True) == 1
        assert pr.realize_count(p, 100.0, rng, at_least_one=False) == 0


# ---------------------------------------------------------------------------
# Power-delay fitting
# ---------------------------------------------------------------------------

class TestFitPowerDelay:
    def test_noiseless_recovery(self):
        p = pr.PowerDelayParams(2.6881e6, 31.9204, 19.9350)
        tau = np.linspace(10e-9, 5e-6, 400)
        power = pr.power_delay_law(tau, p)
        fit = pr.fit_power_delay(np.column_stack([tau, power]))
        assert fit.xi == pytest.approx(p.xi, rel=1e-6)
        assert fit.eta == pytest.approx(p.eta, rel=1e-6)

    def test_two_point_line(self):
        # Exact line through two noiseless points via the closed form.
        p = pr.PowerDelayParams(1.2030e6, 31.4610, 0.2222)
        pts = [(100e-9, float(pr.power_delay_law(100e-9, p))),
               (900e-9, float(pr.power_delay_law(900e-9, p)))]
        xi, eta = pr.fit_power_delay_exact(pts)
        assert xi == pytest.approx(p.xi, rel=1e-9)
        assert eta == pytest.approx(p.eta, rel=1e-9)
        fit = pr.fit_power_delay(pts + [((100e-9 + 900e-9) / 2, float(pr.power_delay_law(500e-9, p)))])
        assert fit.xi == pytest.approx(xi, rel=1e-9)

    def test_shadowing_recovery(self):
        p = pr.PowerDelayParams(2.6881e6, 31.9204, 19.9350)
        rng = substream(5, "fit/shadowing")
        tau = rng.uniform(0.0, 5e-6, 10_000)
        z = rng.normal(0.0, p.sigma_e, tau.size)
        power = pr.power_delay_law(tau, p, z_db=z)
        fit = pr.fit_power_delay(np.column_stack([tau, power]))
        assert fit.sigma_e == pytest.approx(p.sigma_e, rel=0.05)

    def test_degenerate_inputs(self):
        with pytest.raises(pr.FitError):
            pr.fit_power_delay([(1e-9, 0.5), (2e-9, 0.4)])
        with pytest.raises(pr.FitError):
            pr.fit_power_delay([(1e-9, 0.5), (1e-9, 0.4), (1e-9, 0.3)])
        with pytest.raises(pr.FitError):
            pr.fit_power_delay([(1e-9, 0.5), (2e-9, -0.4), (3e-9, 0.3)])


# ---------------------------------------------------------------------------
# The table and its file format
# ---------------------------------------------------------------------------

class TestParameterTable:
    def test_cluster_number_ad_high(self, table):
        p = table.get(AD, HIGH, pr.Family.CLUSTER_NUMBER)
        assert (p.mu, p.gamma) == (0.2356, 0.0321)

    def test_power_delay_ad_high(self, table):
        p = table.get(AD, HIGH, pr.Family.POWER_DELAY)
        assert (p.xi, p.eta, p.sigma_e) == (3.9797e6, 29.2900, 12.0014)

    def test_round_trip(self, table, tmp_path):
        path = tmp_path / "table.json"
        pr.save_table(table, path)
        assert pr.load_table(path) == table

    def test_missing_row_named(self, table, tmp_path):
        data = table.to_dict()
        del data["families"]["distance"]["static"]["medium"]
        path = tmp_path / "broken.json"
        path.write_text(__import__("json").dumps(data))
        with pytest.raises(pr.TableFormatError, match=r"\(distance, static, medium\)"):
            pr.load_table(path)

    def test_malformed_number_named(self, table, tmp_path):
        data = table.to_dict()
        data["families"]["aaoa"]["static"]["high"]["mu"] = "zero point four"
        path = tmp_path / "broken.json"
        path.write_text(__import__("json").dumps(data))
        with pytest.raises(pr.TableFormatError, match=r"\(aaoa, static, high\)"):
            pr.load_table(path)

    def test_unknown_condition_rejected(self, table, tmp_path):
        data = table.to_dict()
        data["families"]["distance"]["static"]["extreme"] = data["families"]["distance"]["static"]["high"]
        path = tmp_path / "broken.json"
        path.write_text(__import__("json").dumps(data))
        with pytest.raises(pr.TableFormatError, match="extreme"):
            pr.load_table(path)

    def test_absent_rows_stay_absent(self, table):
        data = table.to_dict()
        assert data["families"]["distance"]["aerial_dynamic"]["low"] is None
        restored = pr.ParameterTable.from_dict(data)
        assert not restored.has(AD, LOW, pr.Family.DISTANCE)

    def test_classes_present(self, table):
        assert table.classes_present(LOW) == [S, TD]
        assert table.classes_present(HIGH) == [S, TD, AD]
