import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from whittaker_ew.drift import a_hat, torus_matrix
from whittaker_ew.harness import sample_covariance
from whittaker_ew.spectral_sim import (FieldPath, ModeState, RngStream, analytic_covariance_infinite,
                                       analytic_covariance_torus, covariance_spectrum,
                                       evaluate_dual, evolve_exact, field_at_sites, growth_factor,
                                       init_modes, mean_field, pair_noise, simulate_path,
                                       weights_dual, zero_modes)
from whittaker_ew.torus import TorusParams, fourier_inverse, site_indices

# (v/m^2) sum_k of the r-integral, each evaluated by scipy quad (epsrel 1e-13)
COV_M4_05_10_X00_Y10 = -0.01085532492833432
VAR_M4_05_X00 = 0.2984418089615692


def site_fields(st_, sites):
    return field_at_sites(st_, sites)


def sample_sites(p, stencil, v, times, sites, n, seed):
    """Field values at the given sites and times for n replicas, shape (n, len(times), len(sites))."""
    st_ = zero_modes(p, n)
    rng = RngStream(seed)
    out = []
    for t in times:
        if t > st_.t:
            st_, rng = evolve_exact(st_, t - st_.t, stencil, v, rng)
        out.append(field_at_sites(st_, sites))
    return np.stack(out, axis=1)


class TestGrowthFactor:
    def test_zero(self):
        assert growth_factor(0.0, 0.7) == 0.7

    @given(st.floats(-50, -1e-8), st.floats(0, 5))
    def test_closed_form(self, R, s):
        assert growth_factor(R, s) == pytest.approx(math.expm1(s * R) / R, rel=1e-12, abs=1e-300)

    def test_continuous_at_zero(self):
        assert growth_factor(-2e-10, 1.0) == pytest.approx(growth_factor(-1e-11, 1.0), rel=1e-9)

    def test_vector(self):
        out = growth_factor(np.array([0.0, -1.0]), 2.0)
        np.testing.assert_allclose(out, [2.0, math.expm1(-2.0) / -1.0])


class TestRng:
    def test_reproducible(self):
        a, _ = RngStream(5, 3).normals((4, 7))
        b, _ = RngStream(5, 3).normals((4, 7))
        assert np.array_equal(a, b)

    def test_distinct_keys_and_steps(self):
        a, nxt = RngStream(5, 3).normals(10)
        b, _ = nxt.normals(10)
        c, _ = RngStream(5, 4).normals(10)
        d, _ = RngStream(6, 3).normals(10)
        assert nxt.counter == 1
        for other in (b, c, d):
            assert not np.array_equal(a, other)

    def test_thread_independent(self):
        streams = [RngStream(11, r) for r in range(8)]
        serial = [s.normals(100)[0] for s in streams]
        with ThreadPoolExecutor(4) as ex:
            parallel = list(ex.map(lambda s: s.normals(100)[0], reversed(streams)))
        for a, b in zip(serial, reversed(parallel)):
            assert np.array_equal(a, b)

    def test_large_seed(self):
        z, _ = RngStream(2 ** 64 - 1).normals(3)
        assert z.shape == (3,)


class TestInitModes:
    def test_zero(self, small_torus):
        assert np.all(init_modes(np.zeros(16), small_torus).amps == 0)

    def test_indicator(self, small_torus):
        st_ = init_modes(lambda x: float(x == (0, 0)), small_torus)
        np.testing.assert_allclose(st_.amps, np.full(16, 0.25), atol=1e-15)
        assert st_.t == 0

    @pytest.mark.parametrize("p", [TorusParams(4, 1), TorusParams(6, 3), TorusParams(5, 2)])
    def test_pairing(self, p, rng):
        st_ = init_modes(rng.standard_normal(p.size), p)
        assert np.max(np.abs(st_.amps[st_.pairing] - np.conj(st_.amps))) < 1e-13
        assert np.max(np.abs(st_.amps[st_.self_paired].imag)) < 1e-13

    def test_replicas(self, small_torus):
        st_ = init_modes(np.ones(16), small_torus, replicas=3)
        assert st_.amps.shape == (3, 16)


class TestPairNoise:
    def test_structure(self, rng):
        p = TorusParams(6, 3)
        var = rng.uniform(0.5, 2, p.size)
        eps = pair_noise(rng.standard_normal((5, p.size)), var, p)
        assert np.array_equal(eps[:, p.partner], np.conj(eps))
        assert np.all(eps[:, p.self_paired].imag == 0)

    def test_variance(self):
        p = TorusParams(4, 1)
        var = np.linspace(0.5, 2, p.size)
        var = (var + var[p.partner]) / 2  # variances v (e^{dtR} - 1)/R are even in k
        z, _ = RngStream(1).normals((100_000, p.size))
        eps = pair_noise(z, var, p)
        emp = np.mean(np.abs(eps) ** 2, axis=0)
        # E|eps|^2 = var for every mode; relative MC error ~ sqrt(2/N) for real, sqrt(1/N) complex
        assert np.all(np.abs(emp / var - 1) < 4 * math.sqrt(2 / 100_000))
        assert abs(np.mean(eps[:, ~p.self_paired] ** 2)) < 0.02  # E eps^2 = 0 off the real modes


class TestEvolve:
    def test_rejects_dt(self, whittaker, small_torus):
        with pytest.raises(ValueError):
            evolve_exact(zero_modes(small_torus), 0.0, *whittaker, RngStream(0))

    def test_deterministic_step(self, whittaker, small_torus, rng):
        st0 = init_modes(rng.standard_normal(16), small_torus)
        st1, nxt = evolve_exact(st0, 0.3, whittaker[0], 0.0, RngStream(0))
        k0 = small_torus.freq_lookup[(0, 0)]
        assert st1.amps[k0] == st0.amps[k0]
        assert nxt.counter == 0
        A = torus_matrix(whittaker[0], small_torus)
        expect = linalg.expm(0.3 * A) @ fourier_inverse(st0.amps, small_torus).real
        np.testing.assert_allclose(field_at_sites(st1, small_torus.sites), expect, atol=1e-12)

    def test_zero_mode_variance(self, whittaker, small_torus):
        n = 100_000
        st_, _ = evolve_exact(zero_modes(small_torus, n), 1.0, whittaker[0], whittaker[1], RngStream(3))
        k0 = small_torus.freq_lookup[(0, 0)]
        x = st_.amps[:, k0].real
        est = sample_covariance(x, x)
        assert abs(est.mean - whittaker[1]) <= 4 * est.stderr
        assert np.all(st_.amps[:, k0].imag == 0)

    def test_mc_variance_at_origin(self, whittaker, small_torus):
        vals = sample_sites(small_torus, *whittaker, [0.5], [(0, 0)], 50_000, 8)
        est = sample_covariance(vals[:, 0, 0], vals[:, 0, 0])
        exact = analytic_covariance_torus((0, 0), 0.5, (0, 0), 0.5, *whittaker, small_torus)
        assert exact == pytest.approx(VAR_M4_05_X00, rel=1e-12)
        assert abs(est.mean - exact) <= 4 * est.stderr

    def test_translation_invariance(self, whittaker, small_torus):
        vals = sample_sites(small_torus, *whittaker, [1.0], [(0, 0), (1, 0), (1, -1), (2, -1)],
                            50_000, 21)
        a = sample_covariance(vals[:, 0, 0], vals[:, 0, 1])
        b = sample_covariance(vals[:, 0, 2], vals[:, 0, 3])
        assert abs(a.mean - b.mean) <= 4 * math.hypot(a.stderr, b.stderr)

    def test_real_fields(self, whittaker):
        p = TorusParams(6, 3)
        st_, _ = evolve_exact(zero_modes(p, 10), 2.0, *whittaker, RngStream(1))
        vals = st_.amps @ (np.exp(1j * (p.k @ p.sites.T)) / p.m)
        assert np.max(np.abs(vals.imag)) < 1e-9

    def test_simulate_path(self, whittaker, small_torus):
        path = simulate_path(zero_modes(small_torus), [0.0, 0.5, 1.0], *whittaker, RngStream(2))
        assert path.times == [0.0, 0.5, 1.0]
        with pytest.raises(ValueError):
            simulate_path(zero_modes(small_torus), [1.0, 0.5], *whittaker, RngStream(2))


class TestFieldPath:
    def test_validation(self, small_torus):
        path = FieldPath()
        path.append(zero_modes(small_torus))
        with pytest.raises(ValueError):
            path.append(zero_modes(small_torus))
        with pytest.raises(ValueError):
            path.append(ModeState(1.0, np.zeros(4, complex), TorusParams(2, 1)))


class TestFieldAtSites:
    def test_zero(self, small_torus):
        assert np.all(field_at_sites(zero_modes(small_torus), small_torus.sites) == 0)

    def test_indicator(self, small_torus):
        mu = np.zeros(16)
        mu[small_torus.site_lookup[(0, 0)]] = 1
        vals = field_at_sites(init_modes(mu, small_torus), small_torus.sites)
        np.testing.assert_allclose(vals, mu, atol=1e-12)

    def test_matches_inverse(self, rng):
        p = TorusParams(6, 1)
        st_ = init_modes(rng.standard_normal(p.size), p)
        sites = p.sites[[0, 7, 20, 35]]
        full = fourier_inverse(st_.amps, p).real
        np.testing.assert_allclose(field_at_sites(st_, sites, budget=50), full[[0, 7, 20, 35]],
                                   atol=1e-12)

    def test_broken_pairing(self, small_torus):
        amps = np.zeros(16, complex)
        amps[1] = 1j
        with pytest.raises(ValueError):
            field_at_sites(ModeState(0.0, amps, small_torus), small_torus.sites)


class TestMeanField:
    def test_t0(self, whittaker, small_torus, rng):
        mu = rng.standard_normal(16)
        np.testing.assert_allclose(mean_field(mu, 0.0, whittaker[0], small_torus, small_torus.sites),
                                   mu, atol=1e-12)

    def test_constant(self, whittaker, small_torus):
        out = mean_field(np.full(16, 3.0), 5.0, whittaker[0], small_torus, small_torus.sites)
        np.testing.assert_allclose(out, 3.0, atol=1e-12)

    def test_matrix_exponential(self, whittaker, small_torus):
        mu = np.zeros(16)
        mu[small_torus.site_lookup[(0, 0)]] = 1
        A = torus_matrix(whittaker[0], small_torus)
        expect = linalg.expm(0.7 * A) @ mu
        got = mean_field(mu, 0.7, whittaker[0], small_torus, small_torus.sites)
        np.testing.assert_allclose(got, expect, atol=1e-13)

    def test_negative_time(self, whittaker, small_torus):
        with pytest.raises(ValueError):
            mean_field(np.zeros(16), -1, whittaker[0], small_torus, small_torus.sites)


class TestAnalyticTorus:
    def test_zero_time(self, whittaker, small_torus):
        assert analytic_covariance_torus((0, 0), 0.0, (1, 0), 1.0, *whittaker, small_torus) == 0

    def test_short_time(self, whittaker, small_torus):
        t = 1e-6
        val = analytic_covariance_torus((0, 0), t, (0, 0), t, *whittaker, small_torus)
        assert abs(val / (whittaker[1] * t) - 1) < 1e-4

    def test_quadrature_oracle(self, whittaker, small_torus):
        val = analytic_covariance_torus((0, 0), 0.5, (1, 0), 1.0, *whittaker, small_torus)
        assert abs(val - COV_M4_05_10_X00_Y10) < 1e-10

    def test_rejects_order(self, whittaker, small_torus):
        with pytest.raises(ValueError):
            analytic_covariance_torus((0, 0), 1.0, (0, 0), 0.5, *whittaker, small_torus)
        with pytest.raises(ValueError):
            analytic_covariance_torus((0, 0), -1.0, (0, 0), 0.5, *whittaker, small_torus)

    def test_matches_spectrum(self, whittaker):
        p = TorusParams(5, 2)
        c = covariance_spectrum(p, *whittaker, 0.4, 0.9)
        x, y = np.array([1, -1]), np.array([0, 2])
        via = (np.exp(1j * (p.k @ x)) * np.exp(-1j * (p.k @ y)) / p.size * c).sum().real
        assert via == pytest.approx(analytic_covariance_torus(x, 0.4, y, 0.9, *whittaker, p), abs=1e-14)

    def test_periodic_in_sites(self, whittaker):
        p = TorusParams(5, 2)
        a = analytic_covariance_torus((0, 0), 0.5, (1, 1), 0.5, *whittaker, p)
        b = analytic_covariance_torus((0, 0), 0.5, (1 - 2, 1 + 5), 0.5, *whittaker, p)
        assert a == pytest.approx(b, abs=1e-13)


class TestAnalyticInfinite:
    def test_zero_time(self, whittaker):
        assert analytic_covariance_infinite((0, 0), 0.0, (0, 0), 1.0, *whittaker) == 0

    def test_torus_limit(self, whittaker):
        inf = analytic_covariance_infinite((0, 0), 0.5, (1, 0), 1.0, *whittaker)
        tor = analytic_covariance_torus((0, 0), 0.5, (1, 0), 1.0, *whittaker, TorusParams(128, 64))
        assert abs(tor - inf) <= 1e-3 * abs(inf)

    def test_stationary(self, whittaker):
        a = analytic_covariance_infinite((0, 0), 0.5, (1, 0), 0.8, *whittaker, quad=32)
        b = analytic_covariance_infinite((3, -2), 0.5, (4, -2), 0.8, *whittaker, quad=32)
        assert abs(a - b) < 1e-12

    def test_rejects_order(self, whittaker):
        with pytest.raises(ValueError):
            analytic_covariance_infinite((0, 0), 1.0, (0, 0), 0.5, *whittaker)


class TestDuals:
    def test_origin_weight(self):
        p = TorusParams(6, 1)
        np.testing.assert_allclose(weights_dual([[0, 0]], [1.0], p), np.full(p.size, 1 / 6), atol=1e-15)

    def test_zero_table(self):
        p = TorusParams(4, 1)
        assert np.all(weights_dual(np.zeros((0, 2)), np.zeros(0), p) == 0)

    def test_inner_product(self, whittaker, rng):
        p = TorusParams(6, 3)
        st_, _ = evolve_exact(zero_modes(p, 4), 1.0, *whittaker, RngStream(9))
        pts = rng.integers(-9, 9, (7, 2))
        w = rng.standard_normal(7)
        direct = field_at_sites(st_, p.sites)[:, site_indices(pts, p)] @ w
        np.testing.assert_allclose(evaluate_dual(st_, weights_dual(pts, w, p)), direct, atol=1e-10)
