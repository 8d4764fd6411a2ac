"""Random-instance builders shared by the test modules."""
import numpy as np
import sympy as sp

from mskam.tfseries import TFSeries


def random_real_series(dims, rng, nterms=8, K=3, max_degree=2, degree_cap=4,
                       fourier_cap=8, scale=1.0):
    """Real-valued series: every term comes with its conjugate mirror."""
    n, m = dims
    terms = []
    for _ in range(nterms):
        k = rng.integers(-K, K + 1, n) if n else np.zeros(0, int)
        e = np.zeros(n + 2 * m, int)
        for _ in range(rng.integers(0, max_degree + 1)):
            e[rng.integers(0, n + 2 * m)] += 1
        c = scale * (rng.normal() + 1j * rng.normal())
        if not k.any():
            c = c.real
        terms.append((tuple(k), tuple(e[:n]), tuple(e[n:]), c))
        terms.append((tuple(-k), tuple(e[:n]), tuple(e[n:]), np.conj(c)))
    # mirrored pairs at k = 0 double the real coefficient, which stays real
    return TFSeries.from_terms(dims, terms, degree_cap, fourier_cap)


def random_symmetric(d, rng, scale=1.0):
    X = rng.normal(size=(d, d))
    return scale * (X + X.T) / 2


def random_hermitian(d, rng, scale=1.0):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (X + X.conj().T) / 2


def cos_slow(amp=1.0, extra=()):
    terms = [((1, -1), (0, 0), (), amp / 2), ((-1, 1), (0, 0), (), amp / 2)]
    return TFSeries.from_terms((2, 0), terms + list(extra))


def hand_reduction(eps, theta0):
    """Symbolic reduction of H1 = (y1^2 + y2^2)/2, P = cos(x1 - x2) at y0 = (1, 1)."""
    K0 = sp.Matrix([[0, 1], [-1, -1]])
    p = sp.symbols("p1 p2")
    y = sp.Matrix([1, 1]) + K0 * sp.Matrix(p)
    H1 = sp.expand((y[0] ** 2 + y[1] ** 2) / 2)
    th = sp.Symbol("th")
    V = sp.cos(th)
    e = sp.sqrt(sp.nsimplify(eps))
    M = sp.zeros(3, 3)
    A = sp.hessian(H1, p)
    slots = [0, 2]
    for a in range(2):
        for b in range(2):
            M[slots[a], slots[b]] = e * A[a, b]
    M[1, 1] = sp.nsimplify(eps) * e * sp.diff(V, th, 2).subs(th, theta0)
    energy = (H1.subs({p[0]: 0, p[1]: 0}) + sp.nsimplify(eps) ** 2 * V.subs(th, theta0)) / e
    omega = sp.diff(H1, p[0]).subs({p[0]: 0, p[1]: 0})
    quartic = sp.series(V.subs(th, theta0 + th), th, 0, 5).removeO().coeff(th, 4)
    return (np.array(M.evalf(), dtype=float), complex(energy.evalf()), float(omega),
            float(quartic))
