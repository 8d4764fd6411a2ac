import math
from fractions import Fraction
from itertools import combinations, product

import numpy as np
import pytest
import sympy as sp
from hypothesis import assume, given, settings, strategies as st

from mskam.errors import MorseDegeneracyError, SmallDivisorError
from mskam.presets import example_6_2
from mskam.resonance import (ResonantHamiltonian, ResonanceWarning, TrigPotential,
                             averaged_potential, complete_unimodular, detect_resonance,
                             fast_coefficients, find_critical_points, generating_map,
                             integer_echelon, reduce_to_normal_form, torus_type,
                             verify_s_conditions)
from _util import cos_slow, hand_reduction
from mskam.tfseries import TFSeries

y1, y2 = sp.symbols("y1 y2")


def minors_gcd(K):
    d, m0 = K.shape
    g = 0
    for rows in combinations(range(d), m0):
        g = math.gcd(g, int(sp.Matrix(K[list(rows), :].tolist()).det()))
    return g


class TestDetection:
    def test_irrational(self):
        assert detect_resonance([1.0, math.sqrt(2)])[0] == 0

    def test_equal_frequencies(self):
        m0, G = detect_resonance([1.0, 1.0])
        assert m0 == 1 and G[:, 0].tolist() == [1, -1]

    def test_three_frequencies_exhaustive(self):
        w = np.array([1.0, 1.0, math.sqrt(2)])
        m0, G = detect_resonance(w)
        assert m0 == 1 and G[:, 0].tolist() == [1, -1, 0]
        hits = [k for k in product(range(-10, 11), repeat=3)
                if any(k) and abs(np.dot(k, w)) <= 1e-9 * np.linalg.norm(w)]
        g = G[:, 0]
        for k in hits:
            t = k[0] // g[0]
            assert np.array_equal(np.array(k), t * g)

    def test_exact_rationals(self):
        m0, G = detect_resonance([Fraction(1, 2), Fraction(1, 3)])
        assert m0 == 1 and G[:, 0].tolist() == [2, -3]
        m0, G = detect_resonance([sp.Rational(1, 2), sp.Rational(1, 2), sp.Integer(1)], cap=3)
        assert m0 == 2

    def test_near_resonance_warns(self):
        with pytest.warns(ResonanceWarning):
            detect_resonance([1.0, 1.0 + 1e-8])

    def test_echelon_unimodular(self):
        A = [[4, 6, 2], [2, 3, 7], [6, 9, 9]]
        E, U, rank = integer_echelon(A)
        assert abs(int(sp.Matrix(U).det())) == 1
        assert (sp.Matrix(U) * sp.Matrix(A)).tolist() == E
        assert rank == 2


class TestCompletion:
    def test_two_dimensional(self):
        f = complete_unimodular(np.array([[1], [-1]]))
        assert f.K_star[:, 0].tolist() == [0, -1]
        assert f.K0.tolist() == [[0, 1], [-1, -1]] and f.det() == 1

    def test_unit_generator(self):
        f = complete_unimodular(np.array([[0], [0], [1]]))
        assert f.det() == 1
        assert np.array_equal(np.abs(f.K_star), np.eye(3, dtype=int)[:, :2])

    def test_non_primitive(self):
        with pytest.raises(ValueError, match="gcd"):
            complete_unimodular(np.array([[2], [4]]))

    def test_random_primitive(self):
        rng = np.random.default_rng(7)
        done = 0
        while done < 100:
            d = int(rng.integers(2, 6))
            m0 = int(rng.integers(1, d))
            K = rng.integers(-4, 5, size=(d, m0))
            if minors_gcd(K) != 1:
                continue
            f = complete_unimodular(K)
            assert f.det() == 1
            assert np.array_equal(f.K0[:, d - m0:], K)
            assert f.pairing_identity()
            done += 1

    @settings(max_examples=30)
    @given(st.integers(2, 4).flatmap(lambda d: st.lists(
        st.integers(-3, 3), min_size=d, max_size=d)))
    def test_primitivity_matches_gcd(self, col):
        K = np.array(col)[:, None]
        assume(np.any(K))
        if minors_gcd(K) == 1:
            assert complete_unimodular(K).det() == 1
        else:
            with pytest.raises(ValueError):
                complete_unimodular(K)

    def test_angle_modes(self):
        f = complete_unimodular(np.array([[1], [-1]]))
        assert f.angle_mode((1, -1)) == (0, 1)
        assert f.annihilates([1.0, 1.0])[0] and not f.annihilates([1.0, 2.0])[0]


class TestCriticalPoints:
    def test_cosine(self):
        cps = find_critical_points({(1,): 0.5, (-1,): 0.5})
        assert [c.kind for c in cps] == ["max", "min"]
        assert cps[0].point[0] == 0.0 and cps[1].point[0] == pytest.approx(math.pi, abs=1e-12)

    def test_two_cosines(self):
        V = {(1, 0): 0.5, (-1, 0): 0.5, (0, 1): 0.5, (0, -1): 0.5}
        cps = find_critical_points(V)
        assert sorted(c.kind for c in cps) == ["max", "min", "saddle", "saddle"]
        assert len(cps) >= 2 ** 2

    @settings(max_examples=20)
    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=3, max_size=3))
    def test_dense_grid_oracle(self, coefs):
        V = {}
        for j, (a, b) in enumerate(coefs, start=1):
            V[(j,)] = complex(a, b) / 2
            V[(-j,)] = complex(a, -b) / 2
        T = TrigPotential(V)
        th = np.linspace(0, 2 * np.pi, 200000, endpoint=False) + 1e-5 * math.sqrt(2)
        g = T.gradient(th[:, None])[:, 0]
        scale = sum(abs(complex(a, b)) * j for j, (a, b) in enumerate(coefs, 1))
        assume(scale > 0.1)
        sign = np.sign(g)
        # skip near-degenerate instances where a sign change sits at grid scale
        h = T.hessian(th[:, None])[:, 0, 0]
        changes = np.nonzero(sign * np.roll(sign, -1) < 0)[0]
        assume(all(abs(h[i]) > 1e-3 * scale for i in changes))
        assume(np.min(np.abs(g)) > 0 or len(changes) > 0)
        cps = find_critical_points(T)
        assert len(cps) == len(changes)
        assert len(cps) >= 2

    def test_torus_type(self):
        assert torus_type(np.diag([1.0, 2.0])) == "elliptic"
        assert torus_type(np.diag([-1.0, 2.0])) == "hyperbolic"
        assert torus_type(np.diag([1.0, -1.0, 1.0, 1.0])) == "mixed"


class TestAveraging:
    def test_fast_coefficients_fft(self):
        def Pt(Q, qs):
            q = Q[:, 0]
            return np.cos(2 * q) + 0.3 * np.sin(q + qs[0]) + 0.1 * np.cos(3 * q - qs[0])

        h = fast_coefficients(Pt, 1, samples=64)
        qs = np.array([0.4])
        grid = 2 * np.pi * np.arange(64) / 64
        F = np.fft.fft(Pt(grid[:, None], qs)) * (2 * np.pi / 64)
        for k in range(-5, 6):
            assert abs(h((k,), qs) - F[k % 64]) <= 1e-12

    def test_average_matches_quadrature(self):
        f = complete_unimodular(np.array([[1], [-1]]))
        P = cos_slow(1.0, [((1, 0), (0, 0), (), 0.25), ((-1, 0), (0, 0), (), 0.25),
                           ((2, -1), (0, 0), (), 0.1j), ((-2, 1), (0, 0), (), -0.1j)])
        V, fast = averaged_potential(P, f)
        Kinv_T = np.linalg.inv(f.K0.T.astype(float))

        def Pt(Q, qs):
            q = np.hstack([Q, np.full((len(Q), 1), qs[0])])
            x = q @ Kinv_T.T
            return np.real(P.evaluate(x, np.zeros_like(x), np.zeros((len(x), 0))))

        h = fast_coefficients(Pt, 1, samples=32)
        for qs in (0.0, 0.7, 2.5):
            assert h((0,), np.array([qs])).real / (2 * np.pi) == pytest.approx(
                V.value(np.array([qs]))[0], abs=1e-12)
        # averaged potential re-projected onto fast modes vanishes
        for qs in (0.3, 1.9):
            def resid(Q, s):
                return Pt(Q, s) - V.value(np.array([s[0]]))[0]
            assert abs(fast_coefficients(resid, 1, samples=32)((0,), np.array([qs]))) <= 1e-12
        assert set(fast) == {(1,), (-1,)} and sum(len(v) for v in fast.values()) == 4


class TestReduction:
    @pytest.fixture
    def system(self):
        f = complete_unimodular(np.array([[1], [-1]]))
        H = ResonantHamiltonian([y1, y2], (y1 ** 2 + y2 ** 2) / 2, cos_slow(), 1e-2)
        return f, H

    @pytest.mark.parametrize("which", [0, 1])
    def test_hand_oracle(self, system, which):
        f, H = system
        theta0 = [0.0, math.pi][which]
        R = reduce_to_normal_form(H, f, [1.0, 1.0], theta0=[theta0])
        M, e, om, quartic = hand_reduction(1e-2, [0, sp.pi][which])
        nf = R.normal_form
        assert np.max(np.abs(nf.M - M)) <= 1e-10
        assert abs(nf.e - e) <= 1e-10
        assert nf.omega[0].real == pytest.approx(om, abs=1e-10)
        assert complex(nf.P.coefficient((0,), (0,), (4, 0))).real == pytest.approx(quartic,
                                                                                   abs=1e-10)
        assert R.ledger["shear"] == 0.0 and R.ledger["fast_modes"] == 0
        assert R.torus_type == ("hyperbolic" if which == 0 else "elliptic")
        assert nf.reality_defect() <= 1e-12

    def test_potential_is_slow_cosine(self, system):
        f, H = system
        V, fast = averaged_potential(H.P, f)
        assert V.coefs == {(1,): 0.5, (-1,): 0.5} and fast == {}

    def test_two_families(self, system):
        f, H = system
        cps = find_critical_points(averaged_potential(H.P, f)[0])
        assert len(cps) == 2 ** f.m0
        types = sorted(reduce_to_normal_form(H, f, [1.0, 1.0], theta0=c.point).torus_type
                       for c in cps)
        assert types == ["elliptic", "hyperbolic"]

    def test_off_manifold(self, system):
        f, H = system
        with pytest.raises(ValueError):
            reduce_to_normal_form(H, f, [1.0, 2.0])

    def test_small_divisor(self, system):
        f, H = system
        H.P = cos_slow(1.0, [((1, 0), (0, 0), (), 0.5), ((-1, 0), (0, 0), (), 0.5)])
        with pytest.raises(SmallDivisorError):
            reduce_to_normal_form(H, f, [1.0, 1.0], divisor_floor=10.0)
        R = reduce_to_normal_form(H, f, [1.0, 1.0])
        assert R.ledger["shear"] > 0 and R.ledger["fast_modes"] == 2

    def test_angle_independent_perturbation(self, system):
        f, H = system
        H.P = TFSeries.from_terms((2, 0), [((0, 0), (1, 0), (), 1.0)])
        with pytest.raises(MorseDegeneracyError):
            reduce_to_normal_form(H, f, [1.0, 1.0])

    def test_generating_map_symplectic(self):
        eps = 1e-2
        c = eps ** 2

        def chi_grad(X):
            return c * np.array([np.cos(X[0] + 0.3) * 2.0, -np.sin(X[1])])

        rng = np.random.default_rng(3)
        Om = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
        h = 1e-6
        for _ in range(5):
            u = rng.uniform(-1, 1, 4)

            def phi(u):
                p, q = generating_map(chi_grad, u[:2], u[2:])
                return np.r_[p, q]

            Jac = np.stack([(phi(u + h * e) - phi(u - h * e)) / (2 * h) for e in np.eye(4)], 1)
            assert np.abs(Jac.T @ Om @ Jac - Om).max() <= eps ** 4

    def test_report_json(self, system):
        import json

        f, H = system
        json.dumps(reduce_to_normal_form(H, f, [1.0, 1.0]).to_dict())


class TestSConditions:
    @pytest.fixture
    def family(self):
        lam = sp.Symbol("lam")
        f = complete_unimodular(np.array([[1], [-1]]))
        H = ResonantHamiltonian([y1, y2], (y1 ** 2 + y2 ** 2) / 2, cos_slow(), 1e-2)
        return f, H, lam

    def test_minimum_determinant(self, family):
        f, H, lam = family
        rep = verify_s_conditions(f, H, [lam], [lam, lam], [[1.0], [1.5]], theta0=[math.pi])
        assert rep["S2"] and rep.witnesses["S2"]["det"] == pytest.approx(1.0, abs=1e-14)
        assert rep["S1"] and rep.witnesses["S1"]["rank"] == 1

    def test_constant_frequency_fails_S1(self, family):
        f, H, lam = family
        rep = verify_s_conditions(f, H, [lam], [sp.Integer(1), sp.Integer(1)], [[1.0]],
                                  theta0=[math.pi])
        assert not rep["S1"]

    def test_example_6_2(self):
        ex = example_6_2()
        assert ex["frame"].det() == 1
        assert len(ex["critical_points"]) == 2
        kinds = {c.kind: t for c, t in zip(ex["critical_points"], ex["torus_types"])}
        assert kinds == {"min": "elliptic", "max": "hyperbolic"}
        for nf in ex["normal_forms"]:
            assert nf.reality_defect() <= 1e-12
