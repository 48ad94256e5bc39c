import json
import math
from fractions import Fraction

import numpy as np
import pytest

from kslab.cascade import (B0_CENTER, B0_RADIUS, ResolutionError, ball_indicator, build_profiles,
                           check_resolution, data_from_profile, dominance_margin, make_sequences,
                           minimal_amplitude, needs_inequalities, profile_norm_prediction, sample_times_for,
                           tk, tmprime_K, verify_cascade)
from kslab.constants import cascade_Kd
from kslab.norms import pm_norm
from kslab.simulator import ModelSpec, StepControl, integrate
from kslab.spectral_core import SINE, Grid

L16 = 16 * math.pi


@pytest.fixture(scope="module")
def grid1():
    return Grid(3, (64, 16, 16), L16)


@pytest.fixture(scope="module")
def profiles2():
    return build_profiles(Grid(3, (128, 32, 32), L16), 2)


class TestProfiles:
    def test_ball_volume(self, grid1):
        w0 = build_profiles(grid1, 1)[0]
        assert w0.norm1 == pytest.approx(4 * math.pi / 3 / 64, rel=0.02)
        assert set(np.unique(w0.values)) == {0.0, 1.0}

    def test_ball_geometry(self, grid1):
        w0 = ball_indicator(grid1)
        xi = w0.support_modes() * grid1.dxi
        dist = np.linalg.norm(xi - np.array([B0_CENTER, 0, 0]), axis=1)
        assert np.all(dist <= B0_RADIUS + 1e-12)
        assert w0.support_radii().max() == pytest.approx(1.0)

    def test_first_convolution_norm(self, grid1):
        w1 = build_profiles(grid1, 1)[1]
        assert w1.norm1 == pytest.approx((2 * math.pi) ** 3 * cascade_Kd(3) ** 2, rel=0.05)
        assert profile_norm_prediction(3, 1) == pytest.approx((2 * math.pi) ** 3 / (384 * math.pi ** 2) ** 2)

    def test_supports_are_dyadic(self, profiles2):
        dxi = profiles2[0].dxi
        for k, p in enumerate(profiles2[1:], start=1):
            r = p.support_radii()
            assert r.min() >= 2 ** (k - 1) - 1e-12 and r.max() <= 2 ** k + dxi

    def test_profiles_nonnegative(self, profiles2):
        assert all(np.all(p.values >= 0) for p in profiles2)

    def test_resolution_checks(self):
        with pytest.raises(ResolutionError):
            check_resolution(Grid(3, 32, 8 * math.pi), 0)
        with pytest.raises(ResolutionError):
            check_resolution(Grid(3, 48, L16), 1)
        with pytest.raises(ResolutionError):
            check_resolution(Grid(3, (64, 8, 8), L16), 1)
        with pytest.raises(ResolutionError):
            check_resolution(Grid(3, 64, L16, SINE), 0)
        check_resolution(Grid(3, (256, 64, 64), L16), 3)

    def test_to_field_round_trip(self, grid1):
        w0 = ball_indicator(grid1)
        F = w0.to_field(grid1)
        assert np.sum(F.coeffs.real) == pytest.approx(w0.values.sum())


class TestSequences:
    @pytest.mark.parametrize("system,tau", [("TM", 1.0), ("TM", 3.0), ("TMprime", 2.0), ("TMprime", 8.0)])
    def test_beta_zero_is_amplitude(self, system, tau):
        c = make_sequences(system, tau, 37.5, k_max=3)
        assert 2 ** c.levels[0].log2_beta == pytest.approx(37.5, rel=1e-14)

    def test_t2(self):
        c = make_sequences("TM", 1.0, 10.0, 1.0, 3)
        assert c.levels[2].t_k == 0.9375
        assert [l.t_k for l in c.levels] == [tk(1.0, k) for k in range(4)]

    def test_tk_sequence(self):
        ts = [tk(1.5, k) for k in range(12)]
        assert all(b > a for a, b in zip(ts, ts[1:])) and ts[-1] < 1.5
        for k, t in enumerate(ts):
            assert 1.5 - t == pytest.approx(1.5 * 4.0 ** -k, rel=1e-12)

    def test_beta_one(self):
        c = make_sequences("TM", 2.0, 50.0, 1.0, 1)
        assert c.levels[1].log2_beta == pytest.approx(c.M - 2 + 2 * math.log2(50.0), rel=1e-14)

    @pytest.mark.parametrize("system,tau,tstar", [("TM", 1.0, 1.0), ("TM", 0.5, 1.7), ("TMprime", 2.0, 1.0)])
    def test_recursion_matches_closed_form(self, system, tau, tstar):
        c = make_sequences(system, tau, 123.0, tstar, 20)
        rec = c.log2_beta_recursive(20)
        for k, lv in enumerate(c.levels):
            assert rec[k] == pytest.approx(lv.log2_beta, rel=1e-12, abs=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            make_sequences("TM", 1.0, 10.0, 0.5)
        with pytest.raises(ValueError):
            make_sequences("TM", 1.0, 10.0, 1.0, delta=0.5)
        with pytest.raises(ValueError):
            make_sequences("TMprime", 1.5, 10.0)
        with pytest.raises(ValueError):
            make_sequences("TMprime", 2.0, 10.0, tstar=1.5)
        with pytest.raises(ValueError):
            make_sequences("PP", 2.0, 10.0)
        with pytest.raises(ValueError):
            make_sequences("TM", 1.0, -1.0)

    def test_default_delta(self):
        assert make_sequences("TM", 4.0, 1.0, 2.0).delta == 0.5

    @pytest.mark.parametrize("tstar,tau", [(1.0, 1.0), (1.5, 0.7), (2.0, 8.0)])
    def test_needs_inequalities(self, tstar, tau):
        assert needs_inequalities(Fraction(tstar), Fraction(tau), Fraction(tstar) / Fraction(tau), 30)

    def test_needs_inequalities_detects_small_delta(self):
        assert not needs_inequalities(1, 1, Fraction(1, 2), 30)

    def test_threshold_tracks_size_condition(self):
        tau = 1.0
        ts = np.linspace(1.0, 2.0, 11)
        ratio = [minimal_amplitude("TM", tau, t) * (3 * t - 1 + math.exp(-4 * t)) /
                 (math.exp(t * (1 + 1 / tau)) * tau) for t in ts]
        assert max(ratio) / min(ratio) < 1.05

    def test_predicate(self):
        A = minimal_amplitude("TM", 1.0)
        assert make_sequences("TM", 1.0, A * 1.01).diverges
        assert not make_sequences("TM", 1.0, A * 0.99).diverges
        Ap = minimal_amplitude("TMprime", 2.0)
        assert make_sequences("TMprime", 2.0, Ap * 1.01).diverges

    def test_tmprime_constant(self):
        assert tmprime_K() == pytest.approx(2 ** 8 * math.exp(8) / 9)

    def test_json(self):
        c = make_sequences("TM", 1.0, 50.0, 1.0, 3)
        d = json.loads(c.to_json())
        assert [lv["status"] for lv in d["levels"]] == ["pending"] * 4
        assert d["system"] == "TM" and "predicate_log2" in d


class TestData:
    @pytest.mark.parametrize("recipe", ["gaussian", "indicator"])
    def test_dominance_and_reality(self, grid1, recipe):
        A = 7.0
        u0 = data_from_profile(A, grid1, recipe)
        w0 = ball_indicator(grid1).to_field(grid1)
        assert dominance_margin(u0.coeffs, A * w0.coeffs.real) >= 0
        assert u0.is_hermitian(1e-13)
        vals = np.fft.ifftn(u0.coeffs)
        assert np.abs(vals.imag).max() <= 1e-12 * np.abs(vals.real).max()
        assert pm_norm(u0, 1.0) >= A * pm_norm(w0, 1.0)

    def test_bad_inputs(self, grid1):
        with pytest.raises(ValueError):
            data_from_profile(0.0, grid1)
        with pytest.raises(ValueError):
            data_from_profile(1.0, grid1, "box")

    def test_sample_times_include_levels(self):
        c = make_sequences("TM", 1.0, 5.0, 1.0, 3)
        ts = sample_times_for(c, 1.0, 8)
        for lv in c.levels[1:]:
            assert lv.t_k in ts
        assert ts == sorted(ts) and ts[-1] == 1.0


class TestVerify:
    def test_small_run(self, grid1):
        A = 20.0
        c = make_sequences("TM", 1.0, A, 1.0, 1)
        profs = build_profiles(grid1, 1)
        u0 = data_from_profile(A, grid1)
        rec = integrate(ModelSpec("TM", grid1, 1.0), u0, 1.0, sample_times=sample_times_for(c, 1.0, 8),
                        control=StepControl(rtol=1e-4, dt0=1e-2))
        verify_cascade(rec, c, profs)
        lv0 = c.levels[0]
        assert lv0.status == "PASS" and lv0.margin >= 0 and lv0.samples == len(rec.times) - 1
        assert c.levels[1].status in ("PASS", "FAIL")

    def test_unreached_and_missing(self, grid1):
        c = make_sequences("TM", 1.0, 20.0, 1.0, 1)
        profs = build_profiles(grid1, 1)
        u0 = data_from_profile(20.0, grid1)
        model = ModelSpec("TM", grid1, 1.0)
        short = integrate(model, u0, 0.5, sample_times=[0.25, 0.5])
        verify_cascade(short, c, profs)
        assert [l.status for l in c.levels] == ["PASS", "UNREACHED"]
        gap = integrate(model, u0, 0.8, sample_times=[0.5, 0.8])
        with pytest.raises(KeyError):
            verify_cascade(gap, c, profs)
        with pytest.raises(ValueError):
            verify_cascade(short, make_sequences("TM", 1.0, 20.0, 1.0, 3), profs)
