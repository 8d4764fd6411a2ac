import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from _util import random_real_series
from mskam.errors import DomainError, StructureError
from mskam.tfseries import (AnalyticDomain, MultiIndex, ParamCoefficient, TFSeries, average,
                            cauchy_shrink_bound, multiply, poisson_bracket, symplectic_J,
                            truncate, weighted_norm)

seeds = st.integers(0, 2**31 - 1)


def bracket_oracle(dims, ta, tb):
    """Symbolic bracket of two monomials, returned as a numeric callable."""
    n, m = dims
    x = sp.symbols(f"x0:{n}")
    y = sp.symbols(f"y0:{n}")
    z = sp.symbols(f"z0:{2 * m}")

    def expr(t):
        k, i, j, c = t
        e = sp.nsimplify(c) * sp.exp(sp.I * sum(kk * xx for kk, xx in zip(k, x)))
        for p, v in zip(i, y):
            e *= v ** p
        for p, v in zip(j, z):
            e *= v ** p
        return e

    A, B = expr(ta), expr(tb)
    out = sum(sp.diff(A, x[l]) * sp.diff(B, y[l]) - sp.diff(A, y[l]) * sp.diff(B, x[l])
              for l in range(n))
    for l in range(m):
        out += sp.diff(A, z[l]) * sp.diff(B, z[l + m]) - sp.diff(A, z[l + m]) * sp.diff(B, z[l])
    return sp.lambdify(list(x) + list(y) + list(z), out, "numpy")


def test_symplectic_J_convention():
    J = symplectic_J(2)
    assert np.array_equal(J, [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]])


class TestPoissonBracket:
    def test_linear_generator_rotates_mode(self):
        # {<w, y>, e^{i<k,x>}} = -i<k, w> e^{i<k,x>} with A_x B_y - A_y B_x
        dims = (2, 0)
        w = np.array([1.0, math.sqrt(2.0)])
        A = TFSeries.from_terms(dims, [((0, 0), (1, 0), (), w[0]), ((0, 0), (0, 1), (), w[1])])
        k = (2, -1)
        B = TFSeries.from_terms(dims, [(k, (0, 0), (), 1.0)])
        C = poisson_bracket(A, B)
        assert len(C) == 1
        assert complex(C.coefficient(k, (0, 0), ())) == pytest.approx(-1j * np.dot(k, w),
                                                                      abs=1e-15)

    def test_half_y_squared_with_sine(self):
        dims = (1, 1)
        A = TFSeries.from_terms(dims, [((0,), (2,), (0, 0), 0.5)])
        B = TFSeries.sin_mode(dims, (1,))
        C = poisson_bracket(A, B)
        pts = np.random.default_rng(3).uniform(-1, 1, size=(6, 4))
        got = C.evaluate(pts[:, :1], pts[:, 1:2], pts[:, 2:])
        assert np.allclose(got, -pts[:, 1] * np.cos(pts[:, 0]), atol=1e-14)

    def test_monomial_pairs_match_symbolic_differentiation(self):
        rng = np.random.default_rng(11)
        dims = (1, 1)
        for _ in range(5):
            ta, tb = [(tuple(rng.integers(-2, 3, 1)), tuple(rng.integers(0, 3, 1)),
                       tuple(rng.integers(0, 2, 2)), float(rng.integers(1, 5)))
                      for _ in range(2)]
            A = TFSeries.from_terms(dims, [ta], 8, 8)
            B = TFSeries.from_terms(dims, [tb], 8, 8)
            C = poisson_bracket(A, B)
            f = bracket_oracle(dims, ta, tb)
            pts = rng.uniform(-1, 1, size=(7, 4))
            ref = np.array([complex(f(*p)) for p in pts])
            got = C.evaluate(pts[:, :1], pts[:, 1:2], pts[:, 2:])
            assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(StructureError):
            poisson_bracket(TFSeries.zeros((1, 1)), TFSeries.zeros((2, 1)))

    def test_overflow_is_reported(self):
        dims = (1, 0)
        A = TFSeries.from_terms(dims, [((2,), (2,), (), 1.0)], 2, 2)
        B = TFSeries.from_terms(dims, [((2,), (2,), (), 1.0)], 2, 2)
        C = poisson_bracket(A, B.conj())
        assert C.overflow_mass() > 0
        assert weighted_norm(C, AnalyticDomain(0.1, 0.1)) > 0

    @given(seeds)
    def test_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        A = random_real_series((1, 1), rng, degree_cap=8, fourier_cap=8)
        B = random_real_series((1, 1), rng, degree_cap=8, fourier_cap=8)
        assert poisson_bracket(A, A).abs_mass().max(initial=0.0) <= 1e-12
        D = poisson_bracket(A, B) + poisson_bracket(B, A)
        assert D.abs_mass().max(initial=0.0) <= 1e-12

    @given(seeds, st.sampled_from([(1, 1), (2, 0), (2, 1)]))
    def test_jacobi_identity(self, seed, dims):
        rng = np.random.default_rng(seed)
        A, B, C = [random_real_series(dims, rng, nterms=3, K=1, degree_cap=8, fourier_cap=6)
                   for _ in range(3)]
        pb = poisson_bracket
        J = pb(A, pb(B, C)) + pb(B, pb(C, A)) + pb(C, pb(A, B))
        scale = max(pb(A, pb(B, C)).abs_mass().max(initial=0.0), 1.0)
        assert J.abs_mass().max(initial=0.0) <= 1e-10 * scale

    @given(seeds)
    def test_bilinear(self, seed):
        rng = np.random.default_rng(seed)
        A, B, C = [random_real_series((1, 1), rng, degree_cap=8) for _ in range(3)]
        a = rng.normal()
        lhs = poisson_bracket(a * A + B, C)
        rhs = a * poisson_bracket(A, C) + poisson_bracket(B, C)
        assert (lhs - rhs).abs_mass().max(initial=0.0) <= 1e-10 * max(1.0, abs(a))


class TestTruncate:
    def test_constant_kept(self):
        P = TFSeries.from_terms((1, 1), [((0,), (0,), (0, 0), 2.0)])
        R, tail = truncate(P, 3)
        assert R.index_set() == P.index_set() and len(tail) == 0

    def test_high_mode_dropped(self):
        P = TFSeries.cos_mode((1, 1), (4,))
        R, tail = truncate(P, 3)
        assert len(R) == 0 and tail.index_set() == P.index_set()

    def test_partition_of_fifty_terms(self, rng):
        P = random_real_series((2, 1), rng, nterms=25, K=4, max_degree=4, degree_cap=4)
        R, tail = truncate(P, 3)
        keys_R, keys_T = R.index_set(), tail.index_set()
        assert keys_R.isdisjoint(keys_T) and keys_R | keys_T == P.index_set()
        for row in keys_R:
            mi = MultiIndex(row[:2], row[2:4], row[4:])
            assert mi.degree <= 2 and mi.k_l1 <= 3
        assert ((R + tail) - P).abs_mass().max(initial=0.0) == 0.0

    def test_bad_K(self):
        with pytest.raises(ValueError):
            truncate(TFSeries.zeros((1, 0)), 0)

    @given(seeds, st.integers(1, 5))
    def test_projection(self, seed, K):
        P = random_real_series((1, 1), np.random.default_rng(seed), K=6, max_degree=4)
        R, _ = truncate(P, K)
        R2, tail2 = truncate(R, K)
        assert R2.index_set() == R.index_set() and np.array_equal(R2.coefs, R.coefs)
        assert len(tail2) == 0


class TestAverage:
    def test_pure_mode(self):
        assert len(average(TFSeries.cos_mode((1, 0), (1,)))) == 0

    def test_constant_plus_mode(self):
        dims = (1, 0)
        R = TFSeries.cos_mode(dims, (2,)) + TFSeries.from_terms(dims, [((0,), (0,), (), 0.7)])
        A = average(R)
        assert len(A) == 1 and complex(A.coefficient((0,), (0,), ())) == 0.7

    @given(seeds)
    def test_idempotent(self, seed):
        R = random_real_series((2, 1), np.random.default_rng(seed), K=1)
        A = average(R)
        AA = average(A)
        assert AA.index_set() == A.index_set() and np.array_equal(AA.coefs, A.coefs)


class TestNorms:
    def test_zero(self):
        assert weighted_norm(TFSeries.zeros((1, 1)), AnalyticDomain(1.0, 1.0)) == 0.0

    def test_single_mode_closed_form(self):
        P = TFSeries.from_terms((1, 0), [((1,), (0,), (), 2j)])
        assert weighted_norm(P, AnalyticDomain(0.5, 0.3)) == pytest.approx(2 * math.exp(0.5),
                                                                          rel=1e-15)
        assert 2 * math.exp(0.5) == pytest.approx(3.2974, abs=1e-4)

    def test_majorant_bounds_sup_on_real_torus(self, rng):
        P = random_real_series((1, 1), rng)
        dom = AnalyticDomain(0.2, 0.5)
        pts = rng.uniform(-1, 1, size=(200, 4)) * np.array([np.pi, 0.5, 0.5, 0.5])
        vals = np.abs(P.evaluate(pts[:, :1], pts[:, 1:2], pts[:, 2:]))
        assert vals.max() <= weighted_norm(P, dom)

    @given(seeds, st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, seed, r, s, dr, ds):
        P = random_real_series((1, 1), np.random.default_rng(seed), max_degree=3)
        assert weighted_norm(P, AnalyticDomain(r, s)) <= weighted_norm(P, AnalyticDomain(r + dr,
                                                                                         s + ds))

    @given(seeds)
    def test_subadditive(self, seed):
        rng = np.random.default_rng(seed)
        A, B = random_real_series((2, 1), rng), random_real_series((2, 1), rng)
        dom = AnalyticDomain(0.3, 0.7)
        bound = weighted_norm(A, dom) + weighted_norm(B, dom)
        # termwise |a + b| <= |a| + |b|; only summation rounding is allowed
        assert weighted_norm(A + B, dom) <= bound * (1 + 8 * np.finfo(float).eps)

    def test_cauchy_shrink(self):
        P = TFSeries.from_terms((1, 0), [((0,), (0,), (), 1.0)])
        assert cauchy_shrink_bound(P, AnalyticDomain(1, 1, eta=0.1), 2) == pytest.approx(100.0)
        dom = AnalyticDomain(0.4, 0.2, eta=0.3)
        assert cauchy_shrink_bound(P, dom, 0) == weighted_norm(P, dom)
        assert cauchy_shrink_bound(P, AnalyticDomain(0.4, 0.2, eta=1.0), 3) == weighted_norm(P, dom)

    def test_domain_validation(self):
        with pytest.raises(DomainError):
            AnalyticDomain(0.0, 1.0)
        with pytest.raises(DomainError):
            AnalyticDomain(1.0, 1.0, eta=0.0)
        with pytest.raises(DomainError):
            AnalyticDomain(1.0, 1.0, lambda_box=[[0, 1]], eta=0.6)


class TestReality:
    @given(seeds)
    def test_products_and_brackets_of_real_series_stay_real(self, seed):
        rng = np.random.default_rng(seed)
        A, B = random_real_series((1, 1), rng, degree_cap=8), random_real_series((1, 1), rng,
                                                                               degree_cap=8)
        for C in (multiply(A, B), poisson_bracket(A, B), A.conj() + B):
            scale = max(C.abs_mass().max(initial=0.0), 1.0)
            assert C.real_part_defect() <= 1e-12 * scale

    def test_defect_detects_complex_series(self):
        P = TFSeries.from_terms((1, 0), [((1,), (0,), (), 1.0)])
        assert P.real_part_defect() == 1.0


class TestSerialization:
    @given(seeds)
    def test_json_round_trip_is_exact(self, seed):
        P = random_real_series((2, 1), np.random.default_rng(seed))
        Q = TFSeries.from_json(P.to_json())
        assert Q.dims == P.dims and Q.degree_cap == P.degree_cap
        assert np.array_equal(Q.keys, P.keys) and np.array_equal(Q.coefs, P.coefs)
        assert Q.to_json() == P.to_json()

    def test_terms_in_canonical_order(self, rng):
        P = random_real_series((1, 1), rng, nterms=20)
        rows = P.keys.tolist()
        key = [(sum(abs(v) for v in r[:1]), r) for r in rows]
        assert key == sorted(key)


class TestCaps:
    @given(seeds)
    def test_no_stored_term_violates_caps(self, seed):
        rng = np.random.default_rng(seed)
        A = random_real_series((1, 1), rng, K=4, max_degree=3, degree_cap=3, fourier_cap=4)
        C = multiply(A, A)
        if len(C):
            assert C.degree.max() <= 3 and np.abs(C.k).max() <= 4


class TestParamCoefficient:
    def test_sympy_derivatives_consistent_with_differences(self):
        a, b = sp.symbols("a b")
        coef = ParamCoefficient.from_sympy([a ** 2 * b, sp.sin(a) + b], [a, b], order=2)
        assert coef.check_consistency(grid=[[0.3, 1.2], [1.1, -0.4]]) < 1e-6
        assert np.allclose(coef.derivative([0.3, 1.2], (1, 1)).ravel(), [0.6, 0.0])

    def test_table_consistency(self):
        x = np.linspace(0, 1, 201)
        coef = ParamCoefficient.from_table([x], np.sin(x), {(1,): np.cos(x)})
        assert coef.check_consistency() < 1e-4
        assert coef.value([x[10]]) == pytest.approx(np.sin(x[10]))
        with pytest.raises(ValueError):
            coef.value([0.123456789])

    def test_constant_has_zero_derivatives(self):
        coef = ParamCoefficient.constant([1.0, 2.0], nparam=2)
        assert np.all(coef.derivative([0.1, 0.2], (1, 0)) == 0)
