import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mskam.errors import DomainError, StepRejected, StructureError
from mskam.homological import solve_homological
from mskam.kamstep import (CSV_COLUMNS, NormalForm, lie_series, lie_transform,
                           perform_step, preprocess_normal_form, preprocess_step_count,
                           schedule_after_preprocessing)
from mskam.mslinalg import ScaleSet
from mskam.presets import model_1_1, preprocess_model
from mskam.scheduler import KAMSchedule, min_s0_for_H4
from mskam.tfseries import (AnalyticDomain, TFSeries, average, poisson_bracket, truncate,
                            weighted_norm)


def flow_rhs(F):
    n, m = F.dims
    dy = [F.diff_y(l) for l in range(n)]
    dx = [F.diff_x(l) for l in range(n)]
    dz = [F.diff_z(l) for l in range(2 * m)]

    def rhs(t, u):
        x, y, z = u[None, :n], u[None, n:2 * n], u[None, 2 * n:]
        ev = [np.real(d.evaluate(x, y, z)[0]) for d in dy + dx + dz]
        Fy, Fx, Fz = ev[:n], ev[n:2 * n], np.array(ev[2 * n:])
        zdot = np.r_[Fz[m:], -Fz[:m]] if m else np.zeros(0)
        return np.r_[Fy, -np.array(Fx), zdot]
    return rhs


def small_system(s=0.05):
    dims = (1, 1)
    M = np.array([[0.2, 0.05, 0.0], [0.05, 0.3, 0.0], [0.0, 0.0, 0.3]])
    P = (TFSeries.cos_mode(dims, (1,), 1.0)
         + TFSeries.from_terms(dims, [((1,), (1,), (0, 0), 0.2), ((-1,), (1,), (0, 0), 0.2),
                                      ((2,), (0,), (1, 1), 0.1j), ((-2,), (0,), (1, 1), -0.1j)]))
    return NormalForm(0.0, [1.0], M, None, P, ScaleSet(1e-2, (1.0,), (0.2,), ceiling=None),
                      AnalyticDomain(1.0, s))


class TestLieTransform:
    def test_zero_generator(self):
        H = small_system()
        Hb, rem = lie_transform(H, TFSeries.zeros(H.dims), R=H.P)
        assert Hb is H and rem.is_zero() or weighted_norm(rem, H.dom) == 0.0

    def test_translation_generator_rotates_coefficients(self):
        dims = (2, 0)
        omega = [1.0, math.sqrt(2.0)]
        b = np.array([0.3, -0.7])
        k = (2, 1)
        P = TFSeries.cos_mode(dims, k, 1.0)
        H = NormalForm(0.0, omega, np.zeros((2, 2)), None, P, ScaleSet(1e-2, (1.0,), ceiling=None),
                       AnalyticDomain(0.5, 0.1))
        F = TFSeries.from_terms(dims, [((0, 0), (1, 0), (), b[0]), ((0, 0), (0, 1), (), b[1])])
        Hb, _ = lie_transform(H, F, rel_tol=1e-16, max_order=60)
        phase = np.exp(1j * np.dot(k, b))
        assert complex(Hb.P.coefficient(k, (0, 0), ())) == pytest.approx(0.5 * phase, abs=1e-11)
        assert complex(Hb.P.coefficient((-2, -1), (0, 0), ())) == pytest.approx(
            0.5 * np.conj(phase), abs=1e-11)
        assert len(Hb.P) == 2

    def test_energy_matches_integrated_flow(self):
        H = small_system(s=0.05)
        R, _ = truncate(H.P, 4)
        res = solve_homological(H.freq(), H.lam, R, H.eps, 4)
        Hb, rem = lie_transform(H, res.F_series, R=R, rel_tol=1e-14, max_order=40)
        rng = np.random.default_rng(5)
        rhs = flow_rhs(res.F_series)
        budget = weighted_norm(rem, H.dom)
        full = H.hamiltonian()
        bar = Hb.hamiltonian()
        for _ in range(5):
            u0 = np.r_[rng.uniform(0, 2 * np.pi), rng.uniform(-0.02, 0.02, 3)]
            sol = solve_ivp(rhs, (0.0, 1.0), u0, method="DOP853", rtol=1e-13, atol=1e-15)
            u1 = sol.y[:, -1]
            exact = np.real(full.evaluate(u1[None, :1], u1[None, 1:2], u1[None, 2:])[0])
            approx = np.real(bar.evaluate(u0[None, :1], u0[None, 1:2], u0[None, 2:])[0])
            assert abs(exact - approx) <= budget

    def test_series_tail_is_booked(self):
        H = small_system()
        R, _ = truncate(H.P, 4)
        res = solve_homological(H.freq(), H.lam, R, H.eps, 4)
        lr = lie_transform(H, res.F_series, R=R, rel_tol=1e-2)
        assert lr.tail > 0 and lr.H_bar.P.overflow.get((0, 0), 0.0) >= lr.tail / H.eps * 0.999


class TestSymplecticConsistency:
    def test_bracket_commutes_with_transform(self):
        H = small_system(s=0.05)
        R, _ = truncate(H.P, 4)
        F = solve_homological(H.freq(), H.lam, R, H.eps, 4).F_series
        dims = H.dims
        dom = AnalyticDomain(0.5, 0.05)
        observables = [TFSeries.from_terms(dims, [((1,), (0,), (0, 0), 1.0)]),
                       TFSeries.from_terms(dims, [((0,), (1,), (0, 0), 1.0)]),
                       TFSeries.from_terms(dims, [((0,), (0,), (1, 0), 1.0)]),
                       TFSeries.from_terms(dims, [((0,), (0,), (0, 1), 1.0)])]
        for a in observables:
            for b in observables:
                lhs = poisson_bracket(lie_series(a, F, dom), lie_series(b, F, dom))
                rhs = lie_series(poisson_bracket(a, b), F, dom)
                diff = weighted_norm((lhs - rhs).without_overflow(), dom)
                budget = weighted_norm(lhs - lhs.without_overflow(), dom) + weighted_norm(
                    rhs - rhs.without_overflow(), dom)
                assert diff <= max(budget, 1e-12)


def model_schedule(mu0, steps=3):
    S = KAMSchedule(n=1, mu0=mu0, c0=1 / 64, max_steps=steps)
    return S.replace(s0=min_s0_for_H4(S, steps))


@pytest.fixture(scope="module")
def model_step():
    S = model_schedule(1e-6)
    H = model_1_1(S)
    Hp, cert = perform_step(H, S, 0)
    return S, H, Hp, cert


class TestPerformStep:
    def test_zero_perturbation(self):
        S = model_schedule(1e-6)
        H = model_1_1(S).with_(P=TFSeries.zeros((1, 1)))
        Hp, cert = perform_step(H, S, 0)
        assert cert.accepted and cert.norm_after == 0.0
        assert Hp.P.is_zero() and Hp.dom.r < H.dom.r and Hp.dom.s < H.dom.s
        assert np.array_equal(Hp.M, H.M) and np.array_equal(Hp.omega, H.omega)

    def test_model_contracts_superlinearly(self, model_step):
        S, H, Hp, cert = model_step
        assert cert.accepted, cert.diagnosis()
        assert all(cert.assumptions.values())
        assert math.log(cert.norm_after) / math.log(cert.norm_before) >= 1 + S.sigma - 0.2

    def test_average_absorbed(self, model_step):
        _, _, Hp, cert = model_step
        absorbed = weighted_norm(average(Hp.P).project_degree(0, 2), Hp.dom)
        assert absorbed == cert.absorbed_residual and absorbed <= cert.budget

    def test_reality_and_frequency(self, model_step):
        _, H, Hp, _ = model_step
        scale = max(1.0, np.abs(Hp.M).max())
        assert Hp.reality_defect() <= 1e-12 * scale
        assert np.array_equal(Hp.omega, H.omega)
        # no y-linear average left: the torus frequency is omega itself
        p010 = Hp.P.jet((0,))[1]
        assert np.abs(Hp.eps * p010).max() * Hp.dom.s <= Hp.norm_P() * Hp.eps

    def test_csv_row(self, model_step):
        _, _, _, cert = model_step
        row = cert.csv_row()
        assert len(row) == len(CSV_COLUMNS) and row[-1] == 1

    def test_resonant_shell_excluded(self):
        S = KAMSchedule(n=2, mu0=1e-6, c0=1 / 64, tau=3.5, max_steps=1)
        dims = (2, 0)
        H = NormalForm(0.0, [1.0, 1.0], 0.1 * np.eye(2), None, TFSeries.cos_mode(dims, (1, 0),
                                                                                1e-30),
                       ScaleSet(0.1, (1.0,), (0.1,), ceiling=None), AnalyticDomain(1.0, 1e-8))
        Hp, cert = perform_step(H, S, 0)
        assert not cert.accepted and Hp is H
        assert [1, -1] in [e["k"] for e in cert.excluded_shells]
        assert "excluded" in cert.diagnosis()


class TestPreprocessing:
    def test_step_count(self):
        assert preprocess_step_count(2.0, 1 / 12) == 6
        assert preprocess_step_count(2.0, 1 / 12) == math.floor(
            math.log(9) / math.log(1 + (11 / 12) / 2)) + 1

    def test_zero_perturbation_no_op(self):
        H, _ = preprocess_model(1e-2)
        H0 = H.with_(P=TFSeries.zeros((1, 1)))
        out = preprocess_normal_form(H0, 2.0, 1 / 12)
        assert out.P.is_zero() and np.array_equal(out.M, H0.M) and out.e == H0.e
        assert [r["norm"] for r in out.meta["preprocess"]] == [0.0] * 7

    def test_ledger_regression(self):
        eps = 1e-2
        H, C = preprocess_model(eps)
        out = preprocess_normal_form(H, 2.0, 1 / 12, ledger_constant=C)
        q = out.meta["preprocess_q"]
        log = out.meta["preprocess"]
        assert q == pytest.approx(1 + (11 / 12) / 2)
        for rec in log:
            assert rec["norm"] <= rec["ledger"]
        # exponent increments while the norm sits above the degree >= 3 floor
        expo = [math.log(r["norm"]) / math.log(eps) for r in log]
        for a, b in zip(expo[:3], expo[1:4]):
            assert b - a >= q - 0.1

    def test_domain_and_ledger_validation(self):
        H, C = preprocess_model(1e-2)
        with pytest.raises(DomainError):
            preprocess_normal_form(H.with_(dom=AnalyticDomain(1.0, 1e-4)), 2.0, 1 / 12)
        with pytest.raises(ValueError):
            preprocess_normal_form(H, 2.0, 1 / 12, ledger_constant=0.5 * H.norm_P())

    def test_ledger_violation_rejects(self):
        H, C = preprocess_model(1e-2)
        big = H.with_(P=H.P * 1e6)
        with pytest.raises(StepRejected):
            preprocess_normal_form(big, 2.0, 1 / 12)

    def test_follow_up_schedule(self):
        eps = 1e-3
        S = schedule_after_preprocessing(eps, n=1)
        assert S.s0 == eps ** 4
        assert S.gamma0 == pytest.approx(eps ** (1 / 36))
        assert S.mu0 == pytest.approx(eps ** (1 - 1 / 12 + 0.01))


def test_normal_form_invariants():
    dims = (1, 1)
    P = TFSeries.zeros(dims)
    bad_h = TFSeries.from_terms(dims, [((1,), (3,), (0, 0), 1.0)])
    with pytest.raises(StructureError):
        NormalForm(0.0, [1.0], np.eye(3), bad_h, P, ScaleSet(0.1, (1.0,), ceiling=None),
                   AnalyticDomain(1, 1))
    low_h = TFSeries.from_terms(dims, [((0,), (2,), (0, 0), 1.0)])
    with pytest.raises(StructureError):
        NormalForm(0.0, [1.0], np.eye(3), low_h, P, ScaleSet(0.1, (1.0,), ceiling=None),
                   AnalyticDomain(1, 1))
