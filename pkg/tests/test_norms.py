import math
import warnings

import numpy as np
import pytest

from kslab.cascade import ball_indicator
from kslab.norms import (TrajectoryRecord, besov_norm_heat, grad_lp_norm, heat_ladder, lp_norm, pm_norm,
                         triple_norm, ya_distance, ya_norm)
from kslab.spectral_core import Grid, SpectralField, heat_semigroup

from conftest import smooth_real_field


def gaussian(grid, w=1.0):
    x = np.broadcast_arrays(*grid.nodes())
    r2 = sum((xj - grid.L / 2) ** 2 for xj in x)
    return SpectralField.from_physical(grid, np.exp(-r2 / (2 * w * w)))


def record(times, fields, phis=None):
    rec = TrajectoryRecord()
    for i, (t, u) in enumerate(zip(times, fields)):
        rec.append(t, u, None if phis is None else phis[i])
    return rec


def critical_data(grid):
    """Torus version of |x|^-2 in 3-D: coefficients 2 pi^2 / |xi|, mean removed."""
    k = grid.kabs
    return SpectralField(grid, np.where(k > 0, 2 * math.pi ** 2 / np.where(k > 0, k, 1.0), 0.0).astype(complex))


class TestLp:
    def test_zero(self):
        assert lp_norm(SpectralField.zeros(Grid(2, 16, 3.0)), 2.5) == 0.0

    @pytest.mark.parametrize("p", [1, 1.5, 2, 3.7, math.inf])
    def test_constant(self, p):
        g = Grid(3, 8, 2.0)
        F = SpectralField.from_physical(g, np.full(g.shape, -1.5))
        expect = 1.5 * (g.volume ** (0 if math.isinf(p) else 1 / p))
        assert lp_norm(F, p) == pytest.approx(expect, rel=1e-13)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_gaussian_matches_refined_quadrature(self, p):
        L = 12.0
        coarse, fine = gaussian(Grid(3, 32, L)), gaussian(Grid(3, 96, L))
        assert lp_norm(coarse, p) == pytest.approx(lp_norm(fine, p), rel=1e-6)

    def test_gaussian_l2_closed_form(self):
        F = gaussian(Grid(3, 32, 12.0), w=1.0)
        assert lp_norm(F, 2) == pytest.approx(math.pi ** 0.75, rel=1e-9)

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            lp_norm(SpectralField.zeros(Grid(1, 8, 1.0)), 0.5)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("p", [1, 2.5, math.inf])
    def test_homogeneity_and_triangle(self, seed, p):
        r = np.random.default_rng(seed)
        g = Grid(2, 16, 4.0)
        F, G = smooth_real_field(g, r), smooth_real_field(g, r)
        assert lp_norm(F * -3.0, p) == pytest.approx(3 * lp_norm(F, p), rel=1e-10)
        assert lp_norm(F + G, p) <= lp_norm(F, p) + lp_norm(G, p) + 1e-10

    def test_gradient_norm_of_plane_wave(self):
        L = 2 * math.pi
        g = Grid(2, 16, L)
        x, _ = g.nodes()
        F = SpectralField.from_physical(g, np.sin(3 * x) * np.ones(g.shape))
        assert grad_lp_norm(F, math.inf) == pytest.approx(3.0, rel=1e-12)


class TestTrajectoryRecord:
    def test_times_must_increase(self):
        rec = TrajectoryRecord()
        F = SpectralField.zeros(Grid(1, 8, 1.0))
        rec.append(0.5, F)
        with pytest.raises(ValueError):
            rec.append(0.5, F)

    def test_sups_are_monotone(self, rng):
        g = Grid(1, 16, 3.0)
        rec = TrajectoryRecord()
        rec.track("l2", lambda t, u, p: lp_norm(u, 2))
        seen = []
        for i in range(8):
            rec.append(0.1 * (i + 1), smooth_real_field(g, rng))
            seen.append(rec.sups["l2"])
        assert all(b >= a for a, b in zip(seen, seen[1:]))
        assert rec.sups["l2"] == max(rec.traces["l2"])

    def test_trackers_registered_first(self):
        rec = TrajectoryRecord()
        rec.append(1.0, SpectralField.zeros(Grid(1, 8, 1.0)))
        with pytest.raises(RuntimeError):
            rec.track("x", lambda t, u, p: 0.0)

    def test_unkept_samples_are_tracked_but_not_stored(self):
        rec = TrajectoryRecord()
        rec.track("one", lambda t, u, p: 1.0)
        rec.append(1.0, SpectralField.zeros(Grid(1, 8, 1.0)), keep=False)
        assert rec.traces["one"] == [1.0] and list(rec.snapshots()) == []
        with pytest.raises(KeyError):
            rec.at(1.0)

    def test_traces_csv(self, tmp_path):
        rec = TrajectoryRecord()
        rec.track("a", lambda t, u, p: 2 * t)
        for t in (0.25, 0.5):
            rec.append(t, SpectralField.zeros(Grid(1, 8, 1.0)))
        rec.write_traces_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines() == ["t,a", "0.25,0.5", "0.5,1.0"]


class TestTripleNorm:
    def test_single_sample_at_one(self, rng):
        F = smooth_real_field(Grid(3, 16, 6.0), rng)
        assert triple_norm(record([1.0], [F]), 3.0) == pytest.approx(lp_norm(F, 3.0))
        assert triple_norm(record([1.0], [F]), 3.0, 1) == pytest.approx(grad_lp_norm(F, 3.0))

    def test_scale_critical_heat_flow_is_flat(self):
        # e^{t Delta}|x|^-2 is self-similar: t^{1/2} ||.||_3 is constant in t
        F = critical_data(Grid(3, 48, 16 * math.pi))
        ts = np.geomspace(0.25, 2.5, 6)
        vals = [triple_norm(record([t], [heat_semigroup(F, t)]), 3.0) for t in ts]
        assert max(vals) / min(vals) < 1.05

    def test_order_one_of_constant(self):
        g = Grid(3, 8, 2.0)
        F = SpectralField.from_physical(g, np.full(g.shape, 4.0))
        assert triple_norm(record([0.5, 1.0], [F, F]), 2.0, order=1) == 0.0

    def test_zero_time_sample_skipped(self, rng):
        F = smooth_real_field(Grid(1, 16, 3.0), rng)
        assert triple_norm(record([0.0, 1.0], [F * 100.0, F]), 1.0) == pytest.approx(lp_norm(F, 1.0))

    def test_empty(self):
        with pytest.raises(ValueError):
            triple_norm(TrajectoryRecord(), 2.0)
        with pytest.raises(ValueError):
            ya_norm(TrajectoryRecord(), 1.0)

    def test_bad_order(self, rng):
        F = smooth_real_field(Grid(1, 16, 3.0), rng)
        with pytest.raises(ValueError):
            triple_norm(record([1.0], [F]), 2.0, order=2)


class TestPseudomeasure:
    def test_ball_indicator(self):
        g = Grid(3, 32, 16 * math.pi)
        w0 = ball_indicator(g).to_field(g)
        assert pm_norm(w0, 1.0) == pytest.approx(1.0, rel=1e-14)

    def test_zero_and_homogeneity(self, rng):
        g = Grid(3, 16, 6.0)
        assert pm_norm(SpectralField.zeros(g), 1.0) == 0.0
        F = smooth_real_field(g, rng)
        assert pm_norm(F * -2.5, 1.3) == pytest.approx(2.5 * pm_norm(F, 1.3), rel=1e-14)

    def test_dominates_every_mode(self, rng):
        g = Grid(2, 16, 6.0)
        F = smooth_real_field(g, rng)
        a = 0.7
        bound = pm_norm(F, a)
        k = g.kabs
        nz = k > 0
        assert np.all(np.abs(F.coeffs)[nz] <= bound * k[nz] ** (-a) * (1 + 1e-14))

    def test_nonpositive_exponent_warns_and_skips_mean(self):
        g = Grid(1, 8, 2 * math.pi)
        F = SpectralField.from_physical(g, 5.0 + np.cos(g.nodes()[0]))
        with pytest.warns(RuntimeWarning):
            v = pm_norm(F, 0.0)
        assert v == pytest.approx(math.pi, rel=1e-13)

    def test_positive_exponent_does_not_warn(self):
        g = Grid(1, 8, 2 * math.pi)
        F = SpectralField.from_physical(g, 5.0 + np.cos(g.nodes()[0]))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            pm_norm(F, 1.0)


class TestYa:
    def test_critical_exponent_single_sample(self, rng):
        F = smooth_real_field(Grid(3, 16, 6.0), rng)
        assert ya_norm(record([1.0], [F]), 1.0) == pytest.approx(pm_norm(F, 1.0))

    def test_zero(self):
        Z = SpectralField.zeros(Grid(3, 8, 1.0))
        assert ya_norm(record([0.5, 1.0], [Z, Z]), 1.0) == 0.0

    def test_heat_flow_contracts(self):
        g = Grid(3, 32, 16 * math.pi)
        w0 = ball_indicator(g).to_field(g)
        ts = np.geomspace(1e-3, 10, 12)
        assert ya_norm(record(ts, [heat_semigroup(w0, t) for t in ts]), 1.0) <= 1.0

    def test_distance(self, rng):
        g = Grid(3, 8, 3.0)
        F, G = smooth_real_field(g, rng), smooth_real_field(g, rng)
        ts = [0.5, 1.0]
        assert ya_distance(ts, [F, F], [F, F], 1.0) == 0.0
        # the weight t^{1 + (a - d)/2} is 1 at the critical exponent a = d - 2
        assert ya_distance(ts, [F, G], [G, G], 1.0) == pytest.approx(pm_norm(F - G, 1.0))


class TestBesov:
    def test_zero(self):
        assert besov_norm_heat(SpectralField.zeros(Grid(1, 16, 6.0)), 2.0, 1.0) == 0.0

    def test_homogeneity(self, rng):
        F = smooth_real_field(Grid(2, 16, 6.0), rng)
        a = besov_norm_heat(F * 3.0, 2.0, 0.8)
        assert a == pytest.approx(3 * besov_norm_heat(F, 2.0, 0.8), rel=1e-6)

    def test_single_mode_sup(self):
        g = Grid(1, 16, 2 * math.pi)
        F = SpectralField.from_physical(g, 2.0 * np.cos(g.nodes()[0]))
        assert besov_norm_heat(F, math.inf, 1.0) == pytest.approx(2.0 * (2 * math.e) ** -0.5, rel=1e-6)

    def test_rejects_nonpositive_smoothness(self):
        with pytest.raises(ValueError):
            besov_norm_heat(SpectralField.zeros(Grid(1, 8, 1.0)), 2.0, 0.0)

    def test_ladder_span(self):
        g = Grid(3, 16, 8.0)
        lad = heat_ladder(g)
        assert lad[0] == pytest.approx(1e-2 / np.max(g.kabs) ** 2)
        assert lad[-1] >= g.L ** 2 and np.allclose(lad[1:] / lad[:-1], 4.0)

    @pytest.mark.parametrize("r", [1.0, 2.0, 4.0])
    @pytest.mark.parametrize("p", [2.0, math.inf])
    def test_annulus_bernstein(self, r, p, rng):
        g = Grid(2, 64, 8 * math.pi)
        k = g.kabs
        band = (k >= r) & (k <= 2 * r)
        c = rng.normal(size=g.shape) * band
        F = SpectralField.from_physical(g, g.inverse(c.astype(complex)))
        s = 1.0
        ratio = besov_norm_heat(F, p, s) / (r ** -s * lp_norm(F, p))
        assert 0.25 <= ratio <= 4.0
