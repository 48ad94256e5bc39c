import json
import math

import numpy as np
import pytest

from kslab.moments import (DirichletDomain, UnsupportedParameters, blowup_certificate, certificate_bound,
                           certify_against_simulation, jensen_check, jensen_pair, lap_square_moment,
                           moment_trace, simulate_dirichlet_tmprime)
from kslab.norms import TrajectoryRecord
from kslab.spectral_core import SpectralField, laplacian


def sine_integral(F):
    """Exact int over (0, pi)^d of a sine series: int_0^pi sin(jx) dx = (1 - (-1)^j) / j."""
    c = np.asarray(F.coeffs)
    out = c
    for ax in range(c.ndim):
        j = np.arange(1, c.shape[ax] + 1)
        w = (1 - (-1.0) ** j) / j
        out = np.tensordot(out, w, axes=([0], [0]))
    return float(out)


class TestDomain:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_eigenpair(self, d):
        dom = DirichletDomain(d, 16)
        psi = dom.psi
        res = np.asarray(laplacian(psi).coeffs) + dom.lam * np.asarray(psi.coeffs)
        assert np.max(np.abs(res)) <= 1e-12
        assert dom.lam == d

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_normalized_and_positive(self, d):
        dom = DirichletDomain(d, 16)
        assert sine_integral(dom.psi) == pytest.approx(1.0, abs=1e-10)
        assert dom.psi.to_physical().min() > 0

    def test_moment_weight(self):
        dom = DirichletDomain(1, 64)
        (x,) = dom.grid.nodes()
        f = np.sin(x) + 0.3 * np.sin(3 * x)
        F = SpectralField.from_physical(dom.grid, f)
        # int psi f = (1/2) int sin(x) f = (1/2)(pi/2)
        assert dom.moment(F) == pytest.approx(math.pi / 4, rel=1e-12)
        assert dom.moment_of_values(f) == pytest.approx(math.pi / 4, rel=1e-12)

    def test_sine_data(self):
        dom = DirichletDomain(2, 16)
        assert dom.moment(dom.sine_data(4.0)) == pytest.approx(4.0)


class TestSimulation:
    def test_zero(self):
        dom = DirichletDomain(1, 32)
        Z = SpectralField.zeros(dom.grid)
        rec = simulate_dirichlet_tmprime(Z, Z, 2.0, 0.05, sample_dt=0.01)
        assert all(np.max(np.abs(u.coeffs)) == 0 for _, u, _ in rec.snapshots())

    def test_periodic_grid_rejected(self):
        from kslab.spectral_core import Grid
        g = Grid(1, 16, math.pi)
        with pytest.raises(ValueError):
            simulate_dirichlet_tmprime(SpectralField.zeros(g), SpectralField.zeros(g), 2.0, 0.1)

    def test_linear_decay_of_moment(self):
        dom = DirichletDomain(1, 32)
        tau, eps = 2.0, 1e-8
        rec = simulate_dirichlet_tmprime(SpectralField.zeros(dom.grid), dom.psi * eps, tau, 0.5, sample_dt=0.05)
        for t, _, p in rec.snapshots():
            J = dom.moment(p) / eps
            assert J == pytest.approx(dom.moment(dom.psi) * math.exp(-dom.lam * t / tau), rel=1e-6)

    def test_second_order_form(self):
        dom = DirichletDomain(1, 64)
        tau, h = 2.0, 1e-3
        (x,) = dom.grid.nodes()
        u0 = SpectralField.from_physical(dom.grid, 2 * np.sin(x) + np.sin(2 * x) ** 2)
        rec = simulate_dirichlet_tmprime(u0, dom.sine_data(1.0), tau, 0.2, sample_dt=h)
        ph = [np.asarray(p.coeffs) for _, _, p in rec.snapshots()]
        k2 = dom.grid.k2
        worst, scale = 0.0, 0.0
        for i in range(50, len(ph) - 1, 25):
            ptt = (ph[i + 1] - 2 * ph[i] + ph[i - 1]) / h ** 2
            pt = (ph[i + 1] - ph[i - 1]) / (2 * h)
            lap = SpectralField(dom.grid, -k2 * ph[i])
            sq = dom.grid.product(np.asarray(lap.coeffs), np.asarray(lap.coeffs))
            rhs = -(tau + 1) * k2 * pt - k2 ** 2 * ph[i] + sq
            worst = max(worst, float(np.max(np.abs(tau * ptt - rhs))))
            scale = max(scale, float(np.max(np.abs(sq))))
        assert worst <= 1e-3 * scale


class TestTrace:
    def test_eigenfunction_moments(self):
        dom = DirichletDomain(1, 32)
        rec = TrajectoryRecord()
        Z = SpectralField.zeros(dom.grid)
        for t in (0.0, 0.1, 0.2):
            rec.append(t, Z, dom.psi)
        tr = moment_trace(rec, dom, 2.0)
        assert tr.J[0] == pytest.approx(math.pi / 8, rel=1e-14)
        assert tr.I[0] == 0.0
        assert tr.X[0] == tr.J[0]
        assert tr.alpha == 0.75

    def test_needs_uniform_samples(self):
        dom = DirichletDomain(1, 16)
        rec = TrajectoryRecord()
        Z = SpectralField.zeros(dom.grid)
        for t in (0.0, 0.1, 0.3):
            rec.append(t, Z, Z)
        with pytest.raises(ValueError):
            moment_trace(rec, dom, 2.0)

    def test_needs_three_samples(self):
        dom = DirichletDomain(1, 16)
        rec = TrajectoryRecord()
        rec.append(0.0, SpectralField.zeros(dom.grid), SpectralField.zeros(dom.grid))
        with pytest.raises(ValueError):
            moment_trace(rec, dom, 2.0)

    def test_residuals_on_smooth_run(self):
        dom = DirichletDomain(1, 64)
        rec = simulate_dirichlet_tmprime(dom.sine_data(2.0), dom.sine_data(1.0), 2.0, 0.3, sample_dt=1e-3)
        tr = moment_trace(rec, dom, 2.0)
        assert tr.relative("djr_residual") <= 1e-5
        assert tr.relative("identity_residual") <= 1e-4


class TestJensen:
    def test_eigenfunction(self):
        dom = DirichletDomain(1, 64)
        lhs, rhs = jensen_pair(dom.psi, dom)
        # int psi^3 = (1/8)(4/3), (int psi^2)^2 = (pi/8)^2; sin^2 is not a sine
        # polynomial, so the node projection is only algebraically accurate
        assert lhs == pytest.approx(1 / 6, rel=1e-6)
        assert rhs == pytest.approx((math.pi / 8) ** 2, rel=1e-12)
        assert lhs >= rhs

    def test_zero(self):
        dom = DirichletDomain(1, 16)
        assert jensen_pair(SpectralField.zeros(dom.grid), dom) == (0.0, 0.0)

    def test_random_nonnegative_fields(self):
        dom = DirichletDomain(1, 64)
        (x,) = dom.grid.nodes()
        rng = np.random.default_rng(5)
        rec = TrajectoryRecord()
        for i in range(100):
            a = rng.uniform(0, 1, size=6)
            f = sum(a[j] * np.sin(x) ** (j + 1) for j in range(6))
            rec.append(float(i), SpectralField.zeros(dom.grid), SpectralField.from_physical(dom.grid, f))
        rep = jensen_check(rec, dom)
        assert rep.passed and rep.samples == 100

    def test_lap_square_moment(self):
        dom = DirichletDomain(1, 64)
        assert lap_square_moment(dom.psi, dom) == pytest.approx(1 / 6, rel=1e-6)


class TestCertificate:
    def test_thresholds(self):
        c = blowup_certificate(3.0, 6.0, 2.0, 1.0)
        assert c.data_condition
        assert not blowup_certificate(2.9, 6.0, 2.0, 1.0).data_condition
        assert not blowup_certificate(3.0, 5.9, 2.0, 1.0).data_condition

    def test_boundary_is_void(self):
        c = blowup_certificate(3.0, 100.0, 2.0, 1.0)
        assert not c.start_condition and c.void

    def test_sufficient_pair(self):
        J0 = 3.5
        c = blowup_certificate(J0, 2 / 3 * J0 ** 2, 2.0, 1.0)
        assert c.sufficient_pair and c.derivative_condition and c.t_max is not None
        assert np.isfinite(c.t_max) and c.t_max > 0

    def test_headline_data(self):
        c = blowup_certificate(4.0, 12.0, 2.0, 1.0)
        assert c.alpha == 0.75
        assert not c.void
        assert certificate_bound(c.t_max, 4.0, 2.0, 1.0) == pytest.approx(0.0, abs=1e-12)
        assert json.loads(c.to_json())["void"] is False

    def test_monotone_in_J0(self):
        ts = [blowup_certificate(J, 2 / 3 * J * J, 2.0, 1.0).t_max for J in np.linspace(3.2, 20, 30)]
        assert all(b <= a for a, b in zip(ts, ts[1:]))

    def test_unsupported_tau(self):
        with pytest.raises(UnsupportedParameters):
            blowup_certificate(4.0, 12.0, 1.9, 1.0)
        with pytest.raises(ValueError):
            blowup_certificate(4.0, 12.0, 2.0, 0.0)

    def test_void_certificate_makes_no_claim(self):
        dom = DirichletDomain(1, 32)
        rec = simulate_dirichlet_tmprime(dom.sine_data(0.5), dom.sine_data(0.5), 2.0, 0.05, sample_dt=0.005)
        tr = moment_trace(rec, dom, 2.0)
        chk = certify_against_simulation(tr, blowup_certificate(0.5, 0.5, 2.0, 1.0))
        assert not chk.passed and "void" in chk.notes[0]
