"""
Reduction of a resonant multi-scale Hamiltonian to a lower-dimensional
normal form.

Frame: integer generators ``K'`` of the resonance lattice are completed to a
unimodular ``K0 = (K*, K')``; ``y - y0 = K0 p`` and ``q = K0^T x`` split the
angles into fast ``q'`` (``n`` of them) and slow ``q''`` (``m0``).  Averaging
over ``q'`` removes the fast modes at leading order, the slow angles are
expanded about a nondegenerate critical point of the averaged potential,
and the actions are rescaled by ``eps^(1/2)``.

The reduced normal form uses ``z = (X'' - theta0, Y'')``, positions first,
so that ``z' = J dH/dz`` with ``J = [[0, I], [-I, 0]]``.
"""
import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import sympy as sp

from .errors import MorseDegeneracyError, SmallDivisorError
from .kamstep import NormalForm
from .mslinalg import FrequencyData, ScaleSet, operators_from_data
from .nonres import ConditionReport, _alphas, _check_rank, half_lattice, numerical_rank
from .tfseries import AnalyticDomain, ParamCoefficient, TFSeries, symplectic_J

__all__ = [
    "ResonanceWarning", "ResonanceFrame", "ResonantHamiltonian", "CriticalPoint",
    "ReducedForm", "TrigPotential", "detect_resonance", "complete_unimodular", "integer_echelon",
    "averaged_potential", "fast_coefficients", "find_critical_points",
    "reduce_to_normal_form", "verify_s_conditions", "torus_type", "generating_map",
]


class ResonanceWarning(UserWarning):
    """A near-resonance outside the detected lattice."""


# -- integer lattice tools ---------------------------------------------------

def integer_echelon(A):
    """
    Row echelon form over the integers: ``U A = E`` with ``U`` unimodular.

    Pivots are positive and entries above each pivot are reduced modulo it.

    Returns
    -------
    E, U : list of list of int
    rank : int
    """
    E = [[int(v) for v in row] for row in A]
    r = len(E)
    c = len(E[0]) if r else 0
    U = [[int(i == j) for j in range(r)] for i in range(r)]
    row = 0
    for col in range(c):
        if row >= r:
            break
        while True:
            nz = [i for i in range(row, r) if E[i][col] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda i: abs(E[i][col]))
            E[row], E[piv] = E[piv], E[row]
            U[row], U[piv] = U[piv], U[row]
            clean = True
            for i in range(row + 1, r):
                if E[i][col]:
                    q = E[i][col] // E[row][col]
                    E[i] = [a - q * b for a, b in zip(E[i], E[row])]
                    U[i] = [a - q * b for a, b in zip(U[i], U[row])]
                    if E[i][col]:
                        clean = False
            if clean:
                break
        if E[row][col] == 0:
            continue
        if E[row][col] < 0:
            E[row] = [-a for a in E[row]]
            U[row] = [-a for a in U[row]]
        for i in range(row):
            q = E[i][col] // E[row][col]
            if q:
                E[i] = [a - q * b for a, b in zip(E[i], E[row])]
                U[i] = [a - q * b for a, b in zip(U[i], U[row])]
        row += 1
    return E, U, row


def _is_exact(omega):
    return all(isinstance(v, (int, sp.Rational, sp.Integer)) or
               (hasattr(v, "numerator") and hasattr(v, "denominator")) for v in omega)


def detect_resonance(omega, tol=None, cap=10):
    """
    Integer basis of ``{k : |<k, omega>| <= tol, |k|_inf <= cap}``.

    Parameters
    ----------
    omega : sequence
        Floats, or exact rationals (ints, ``fractions.Fraction``, sympy).
    tol : float, optional
        Defaults to ``1e-9 |omega|`` for floats and 0 for exact input.
    cap : int
        Search box.

    Returns
    -------
    m0 : int
    generators : ndarray (d, m0) of int
        Columns span the lattice generated by all hits (echelon basis).
    """
    omega = list(omega)
    d = len(omega)
    exact = _is_exact(omega)
    ks = np.array([k for k in product(range(-cap, cap + 1), repeat=d)
                   if any(k) and next(v for v in k if v) > 0], dtype=np.int64)
    if exact:
        om = [sp.Rational(v.numerator, v.denominator) if hasattr(v, "numerator")
              and not isinstance(v, int) else sp.Integer(v) for v in omega]
        den = sp.ilcm(*[v.q for v in om])
        w = np.array([int(v * den) for v in om], dtype=np.int64)
        res = np.abs(ks @ w).astype(float)
        tol_ = 0.0
    else:
        w = np.asarray(omega, dtype=float)
        res = np.abs(ks @ w)
        tol_ = 1e-9 * float(np.linalg.norm(w)) if tol is None else float(tol)
    hit = res <= tol_
    if not exact:
        near = res[~hit]
        if near.size and near.min() <= 100 * max(tol_, 1e-300):
            warnings.warn(f"near-resonance outside tolerance: residual {near.min():.3e}",
                          ResonanceWarning, stacklevel=2)
    H = ks[hit]
    if H.shape[0] == 0:
        return 0, np.zeros((d, 0), dtype=np.int64)
    E, _, rank = integer_echelon(H.tolist())
    gens = np.array(E[:rank], dtype=np.int64).T
    return rank, gens


@dataclass
class ResonanceFrame:
    """
    ``K0 = (K*, K')`` with ``det K0 = 1``.

    Attributes
    ----------
    K_prime : ndarray (d, m0)
        Generators of the resonance lattice.
    K_star : ndarray (d, n)
        Completion.
    """

    K_prime: np.ndarray
    K_star: np.ndarray

    @property
    def d(self):
        return self.K_prime.shape[0]

    @property
    def m0(self):
        return self.K_prime.shape[1]

    @property
    def n(self):
        return self.d - self.m0

    @property
    def K0(self):
        return np.hstack([self.K_star, self.K_prime]).astype(np.int64)

    def det(self):
        return int(sp.Matrix(self.K0.tolist()).det())

    def K0_inv(self):
        inv = sp.Matrix(self.K0.tolist()).inv()
        return np.array(inv.tolist(), dtype=np.int64)

    def pairing_identity(self):
        """``K0^T K0^{-T} = I`` exactly, i.e. ``dy ^ dx = dp ^ dq``."""
        K = sp.Matrix(self.K0.tolist())
        return (K.T * K.inv().T) == sp.eye(self.d)

    def angle_mode(self, k_x):
        """Mode in ``q`` of the ``x``-mode ``k_x``: ``K0^{-1} k_x``."""
        return tuple(int(v) for v in self.K0_inv() @ np.asarray(k_x, dtype=np.int64))

    def annihilates(self, omega, tol=1e-9):
        w = np.asarray(omega, dtype=float)
        r = np.abs(self.K_prime.T @ w)
        return bool(np.all(r <= tol * max(1.0, float(np.linalg.norm(w))))), r

    def to_dict(self):
        return {"K_prime": self.K_prime.tolist(), "K_star": self.K_star.tolist(),
                "K0": self.K0.tolist(), "det": self.det()}


def complete_unimodular(K_prime):
    """
    Complete primitive integer generators to ``K0 = (K*, K')`` with
    ``det K0 = +1``.

    The echelon transform ``U K' = (I; 0)`` is reordered to ``V K' = (0; I)``;
    then ``V^{-1}`` carries ``K'`` in its last columns and a completion in
    the first ones, which is brought to integer echelon form column-wise.
    A negative determinant is fixed by negating the first completion column.

    Raises
    ------
    ValueError
        ``K'`` is not primitive (the gcd of its maximal minors exceeds 1).
    """
    Kp = np.asarray(K_prime, dtype=np.int64)
    if Kp.ndim == 1:
        Kp = Kp[:, None]
    d, m0 = Kp.shape
    if m0 > d or m0 == 0:
        raise ValueError("K_prime must have 1 <= m0 <= d columns")
    E, U, rank = integer_echelon(Kp.tolist())
    pivots = [E[i][i] if i < m0 else 0 for i in range(m0)]
    g = 1
    for p in pivots:
        g *= p
    if rank < m0 or g != 1:
        raise ValueError(f"K_prime is not primitive: gcd of maximal minors is {abs(g)}")
    V = [U[i] for i in range(m0, d)] + [U[i] for i in range(m0)]
    W = np.array(sp.Matrix(V).inv().tolist(), dtype=np.int64)
    assert np.array_equal(W[:, d - m0:], Kp)
    # canonical completion: echelon form of the K* columns (unimodular change)
    Es, _, _ = integer_echelon(W[:, : d - m0].T.tolist())
    K_star = np.array(Es, dtype=np.int64).T.copy()
    frame = ResonanceFrame(Kp.copy(), K_star)
    if frame.det() < 0:
        K_star[:, 0] *= -1
        frame = ResonanceFrame(Kp.copy(), K_star)
    return frame


def generating_map(chi_grad, Y, X):
    """
    ``(Y, X) -> (p, q)`` for ``S = <Y, q> + chi(q)``: ``p = Y + grad chi(X)``,
    ``q = X``.  A gradient shear, hence symplectic.
    """
    X = np.asarray(X, dtype=float)
    return np.asarray(Y, dtype=float) + chi_grad(X), X


# -- averaged potential and critical points ------------------------------

class TrigPotential:
    """``V(theta) = sum_j c_j exp(i <j, theta>)`` on ``T^m0``."""

    def __init__(self, coefs, m0=None):
        self.coefs = {tuple(int(v) for v in k): complex(c) for k, c in coefs.items()
                      if abs(c) > 0}
        dims = {len(k) for k in coefs}
        if len(dims) > 1 or (m0 is not None and dims and dims != {m0}):
            raise ValueError("modes of inconsistent length")
        self.m0 = m0 if m0 is not None else (dims.pop() if dims else 0)
        self._K = np.array(list(self.coefs), dtype=float).reshape(-1, self.m0)
        self._c = np.array(list(self.coefs.values()), dtype=complex)

    def _phase(self, th):
        th = np.atleast_2d(np.asarray(th, dtype=float))
        return np.exp(1j * th @ self._K.T) * self._c[None, :]

    def value(self, th):
        return np.real(self._phase(th).sum(axis=1))

    def gradient(self, th):
        e = self._phase(th)
        return np.real(1j * e @ self._K)

    def hessian(self, th):
        e = self._phase(th)
        return np.real(-np.einsum("pk,ka,kb->pab", e, self._K, self._K))

    def taylor(self, th0, degree):
        """Coefficients ``{alpha: d^alpha V(th0)/alpha!}`` up to ``degree``."""
        e = self._phase(th0)[0]
        out = {}
        for total in range(degree + 1):
            for alpha in _compositions(self.m0, total):
                fac = np.prod([math.factorial(a) for a in alpha])
                mon = np.prod((1j * self._K) ** np.array(alpha)[None, :], axis=1)
                out[alpha] = complex((e * mon).sum() / fac)
        return out

    def tail_bound(self, radius, degree):
        """Majorant of Taylor terms above ``degree`` on ``|u| <= radius``."""
        tot = 0.0
        for c, k in zip(self._c, self._K):
            a = float(np.abs(k).sum()) * radius
            tail = math.exp(a) - sum(a ** j / math.factorial(j) for j in range(degree + 1))
            tot += abs(c) * max(tail, 0.0)
        return tot


def _compositions(p, total):
    if p == 0:
        return [()] if total == 0 else []
    if p == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _compositions(p - 1, total - first):
            out.append((first,) + rest)
    return out


@dataclass
class CriticalPoint:
    point: np.ndarray
    value: float
    hessian: np.ndarray
    eigenvalues: np.ndarray
    kind: str
    degenerate: bool

    def to_dict(self):
        return {"point": self.point.tolist(), "value": self.value,
                "eigenvalues": self.eigenvalues.tolist(), "kind": self.kind,
                "degenerate": self.degenerate}


def _classify(ev, scale):
    tol = 1e-8 * max(scale, 1e-300)
    degenerate = bool(np.any(np.abs(ev) <= tol))
    if degenerate:
        return "degenerate", True
    if np.all(ev > 0):
        return "min", False
    if np.all(ev < 0):
        return "max", False
    return "saddle", False


def find_critical_points(V, grid=None, tol=1e-12, merge_radius=1e-6, max_iter=60):
    """
    All critical points of a trigonometric potential on ``T^m0``.

    Every node of a uniform seed grid is refined by Newton's method on the
    gradient; converged points are wrapped to ``[0, 2 pi)`` and merged
    within ``merge_radius``.  Each point is classified by the inertia of its
    Hessian.

    Parameters
    ----------
    V : TrigPotential or dict
    grid : int, optional
        Seeds per axis; defaults to ``4 * (max |j|_inf) + 8``.

    Returns
    -------
    list of CriticalPoint
        Sorted by position.
    """
    if not isinstance(V, TrigPotential):
        V = TrigPotential(V)
    m0 = V.m0
    kmax = int(np.abs(V._K).max(initial=1))
    g = 4 * kmax + 8 if grid is None else int(grid)
    axis = 2 * np.pi * (np.arange(g) + 0.25) / g
    th = np.array(list(product(axis, repeat=m0)), dtype=float)
    scale = float(np.abs(V._c).sum() * max(kmax, 1) ** 2)
    alive = np.ones(len(th), dtype=bool)
    for _ in range(max_iter):
        G = V.gradient(th)
        Hs = V.hessian(th)
        done = np.linalg.norm(G, axis=1) <= tol * scale
        step = np.zeros_like(th)
        for i in np.nonzero(alive & ~done)[0]:
            try:
                step[i] = np.linalg.solve(Hs[i], G[i])
            except np.linalg.LinAlgError:
                alive[i] = False
        step = np.clip(step, -0.5, 0.5)
        th = th - step
        if np.all(done | ~alive):
            break
    G = V.gradient(th)
    ok = alive & (np.linalg.norm(G, axis=1) <= 1e3 * tol * scale)
    pts = np.mod(th[ok], 2 * np.pi)
    found = []
    for p in pts:
        if any(np.linalg.norm(np.angle(np.exp(1j * (p - q)))) < merge_radius for q in found):
            continue
        found.append(p)
    out = []
    for p in sorted(found, key=lambda v: tuple(np.round(v, 9))):
        p = np.where(np.abs(p - 2 * np.pi) < 1e-12, 0.0, p)
        H = V.hessian(p)[0]
        ev = np.linalg.eigvalsh(H)
        kind, deg = _classify(ev, scale)
        out.append(CriticalPoint(p, float(V.value(p)[0]), H, ev, kind, deg))
    return out


def torus_type(M22):
    """``"elliptic"``, ``"hyperbolic"`` or ``"mixed"`` from the spectrum of ``M22 J``."""
    m = M22.shape[0] // 2
    ev = np.linalg.eigvals(np.asarray(M22, dtype=complex) @ symplectic_J(m))
    scale = max(float(np.abs(ev).max(initial=0.0)), 1e-300)
    imag = np.abs(ev.real) <= 1e-9 * scale
    real = np.abs(ev.imag) <= 1e-9 * scale
    if np.all(imag):
        return "elliptic"
    if np.all(real):
        return "hyperbolic"
    return "mixed"


# -- Hamiltonian data and reduction --------------------------------------

@dataclass
class ResonantHamiltonian:
    """
    ``H(x, y) = H1(y) + eps^2 P(x, y)``.

    Attributes
    ----------
    ys : list of sympy.Symbol
    H1 : sympy expression
        Integrable part (already carrying its scale factors).
    P : TFSeries
        Dims ``(d, 0)``; Fourier in ``x`` and Taylor in ``y - y0`` about the
        base point passed to the reduction.
    eps : float
    """

    ys: list
    H1: object
    P: TFSeries
    eps: float

    @property
    def d(self):
        return len(self.ys)

    def gradient(self, y):
        sub = dict(zip(self.ys, y))
        return np.array([float(sp.diff(self.H1, v).subs(sub)) for v in self.ys])

    def hessian(self, y):
        sub = dict(zip(self.ys, y))
        return np.array([[float(sp.diff(self.H1, a, b).subs(sub)) for b in self.ys]
                         for a in self.ys])


def fast_coefficients(Ptilde, n, samples=64):
    """
    ``h_k(q'') = int_{[0, 2 pi]^n} Ptilde(q', q'') exp(-i <k, q'>) dq'``
    by the trapezoid rule, which is exact for trigonometric polynomials of
    degree below ``samples``.

    Parameters
    ----------
    Ptilde : callable
        ``(q_fast (P, n), q_slow) -> values (P,)``.

    Returns
    -------
    callable
        ``(k, q_slow) -> h_k``.
    """
    axis = 2 * np.pi * np.arange(samples) / samples
    Q = np.array(list(product(axis, repeat=n)), dtype=float)
    w = (2 * np.pi / samples) ** n

    def h(k, q_slow):
        vals = Ptilde(Q, q_slow)
        return complex(w * np.sum(vals * np.exp(-1j * Q @ np.asarray(k, dtype=float))))
    return h


def averaged_potential(P, frame, p_order=0):
    """
    Fast/slow split of ``P o (K0^T)^{-1}`` at ``p = 0``.

    Returns
    -------
    V : TrigPotential
        Average over the fast angles.
    fast : dict
        ``k' -> {k'': c}``: normalised Fourier data of the fast modes.
    """
    n = frame.n
    Kinv = frame.K0_inv()
    slow, fast = {}, {}
    for mi, c in P:
        k, i = mi.fourier_k, mi.taylor_i
        if any(i):
            continue
        kq = tuple(int(v) for v in Kinv @ np.asarray(k, dtype=np.int64))
        kf, ks = kq[:n], kq[n:]
        if any(kf):
            fast.setdefault(kf, {})
            fast[kf][ks] = fast[kf].get(ks, 0) + complex(c)
        else:
            slow[ks] = slow.get(ks, 0) + complex(c)
    return TrigPotential(slow, frame.m0), fast


@dataclass
class ReducedForm:
    """
    Outcome of :func:`reduce_to_normal_form`.

    Attributes
    ----------
    normal_form : NormalForm
        ``e + <omega*, y> + 1/2 w^T M w + h + eps^(3/2) P_hat``.
    omega_star : ndarray
    M_breve : ndarray
        Unscaled block matrix ``diag(K0^T d2H1 K0, eps d2[P])`` in the order
        ``(Y', Y'', X'')``.
    potential : TrigPotential
    critical_points : list of CriticalPoint
    theta0 : ndarray
    ledger : dict
        Size estimates of the terms dropped from ``P_hat``.
    """

    frame: ResonanceFrame
    normal_form: NormalForm
    omega_star: np.ndarray
    M_breve: np.ndarray
    potential: TrigPotential
    critical_points: list
    theta0: np.ndarray
    ledger: dict = field(default_factory=dict)

    @property
    def torus_type(self):
        n = self.frame.n
        return torus_type(self.normal_form.M[n:, n:].real)

    def to_dict(self):
        nf = self.normal_form
        return {"frame": self.frame.to_dict(),
                "omega_star": self.omega_star.tolist(),
                "M_breve": self.M_breve.tolist(),
                "theta0": self.theta0.tolist(),
                "critical_points": [c.to_dict() for c in self.critical_points],
                "torus_type": self.torus_type,
                "normal_form": {"e": [nf.e.real, nf.e.imag],
                                "omega": nf.omega.real.tolist(),
                                "M": nf.M.real.tolist(),
                                "h": nf.h.to_json(), "P": nf.P.to_json(),
                                "eps": nf.eps},
                "ledger": self.ledger}


def _h1_taylor(H, y0, K0, degree):
    """Taylor coefficients of ``H1(y0 + K0 p)`` in ``p`` up to ``degree``."""
    d = H.d
    ps = sp.symbols(f"p0:{d}")
    t = sp.Symbol("t")
    K = sp.Matrix(K0.tolist())
    sub = {H.ys[i]: sp.nsimplify(y0[i]) + t * sum(K[i, j] * ps[j] for j in range(d))
           for i in range(d)}
    expr = sp.expand(sp.series(H.H1.subs(sub), t, 0, degree + 1).removeO())
    out = {}
    for deg in range(degree + 1):
        part = sp.expand(expr.coeff(t, deg))
        if part == 0:
            continue
        poly = sp.Poly(part, *ps)
        for mon, c in poly.terms():
            out[tuple(mon)] = complex(c)
    return out


def reduce_to_normal_form(H, frame, y0, theta0=None, degree_cap=4, fourier_cap=8,
                          divisor_floor=None, r=0.5, s=None):
    """
    Reduce ``H1(y) + eps^2 P(x, y)`` about ``y0`` on the resonant manifold.

    Parameters
    ----------
    H : ResonantHamiltonian
    frame : ResonanceFrame
    y0 : array_like
        Point with ``K'^T grad H1(y0) = 0``.
    theta0 : array_like, optional
        Critical point of the averaged potential; by default the first one
        returned by :func:`find_critical_points`.
    divisor_floor : float, optional
        Lower bound for ``|<k, omega*>|`` over the fast modes of ``P``.

    Returns
    -------
    ReducedForm

    Raises
    ------
    ValueError
        ``y0`` is not on the resonant manifold.
    SmallDivisorError
        A fast mode has ``|<k, omega*>|`` below the floor.
    MorseDegeneracyError
        The critical point is degenerate.
    """
    eps = float(H.eps)
    d, n, m0 = H.d, frame.n, frame.m0
    y0 = np.asarray(y0, dtype=float)
    omega = H.gradient(y0)
    ok, res = frame.annihilates(omega)
    if not ok:
        raise ValueError(f"y0 is not on the resonant manifold: residuals {res}")
    K0 = frame.K0
    om_star = frame.K_star.T @ omega
    A = K0.T @ H.hessian(y0) @ K0
    V, fast = averaged_potential(H.P, frame)
    floor = (1e-12 * max(1.0, float(np.abs(om_star).max(initial=0.0)))
             if divisor_floor is None else float(divisor_floor))
    bad = [k for k in fast if abs(np.dot(k, om_star)) < floor]
    if bad:
        k = bad[0]
        raise SmallDivisorError(k, abs(np.dot(k, om_star)), floor, f"fast modes {bad}")
    cps = find_critical_points(V) if m0 and V.coefs else []
    if theta0 is None:
        if not cps:
            raise MorseDegeneracyError("averaged potential has no critical point")
        theta0 = cps[0].point
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    P2 = V.hessian(theta0)[0] if m0 else np.zeros((0, 0))
    ev = np.linalg.eigvalsh(P2) if m0 else np.zeros(0)
    scale = float(np.abs(V._c).sum()) if V.coefs else 1.0
    if m0 and np.any(np.abs(ev) <= 1e-8 * scale):
        raise MorseDegeneracyError(f"degenerate critical point {theta0}: eigenvalues {ev}")
    # integrable part in p, then p = eps^(1/2) Y and H -> H / eps^(1/2)
    tay = _h1_taylor(H, y0, K0, degree_cap)
    se = math.sqrt(eps)
    e = tay.get((0,) * d, 0.0).real
    V0 = float(V.value(theta0)[0]) if V.coefs else 0.0
    e_nf = (e + eps ** 2 * V0) / se
    # ordering of the normal-form variables: y = Y' (n), z = (X'' (m0), Y'' (m0))
    dd = n + 2 * m0
    pos_Y = list(range(n)) + list(range(n + m0, n + 2 * m0))   # slots of (Y', Y'')
    M = np.zeros((dd, dd))
    for a in range(d):
        for b in range(d):
            M[pos_Y[a], pos_Y[b]] = se * A[a, b]
    M[n:n + m0, n:n + m0] = eps * se * P2
    h_terms = []
    for mon, c in tay.items():
        deg = sum(mon)
        if deg < 3:
            continue
        j = [0] * (2 * m0)
        for a in range(n, d):
            j[m0 + (a - n)] = mon[a]
        h_terms.append(((0,) * n, tuple(mon[:n]), tuple(j), c.real * se ** (deg - 1)))
    h = TFSeries.from_terms((n, m0), h_terms, degree_cap, fourier_cap)
    # P_hat (prefactor eps^(3/2)): cubic and higher Taylor terms of V at theta0
    p_terms = []
    if m0 and V.coefs:
        for alpha, c in V.taylor(theta0, degree_cap).items():
            if sum(alpha) < 3:
                continue
            p_terms.append(((0,) * n, (0,) * n, tuple(alpha) + (0,) * m0, c))
    P_hat = TFSeries.from_terms((n, m0), p_terms, degree_cap, fourier_cap)
    s = eps if s is None else float(s)
    ledger = _reduction_ledger(H, frame, V, fast, om_star, A, eps, s, degree_cap)
    if ledger["taylor_tail"] > 0:
        P_hat = P_hat + TFSeries((n, m0), degree_cap=degree_cap, fourier_cap=fourier_cap,
                                 overflow={(0, degree_cap + 1): ledger["taylor_tail"]
                                           / s ** (degree_cap + 1)})
    eps_nf = eps * se
    mu_vec = (se, eps * se) if m0 else (se,)
    scales = ScaleSet(eps_nf, (max(float(np.abs(om_star).max(initial=1.0)), eps_nf),),
                      mu_vec, ceiling=None)
    nf = NormalForm(complex(e_nf), om_star.astype(complex), M, h, P_hat, scales,
                    AnalyticDomain(r, s))
    M_breve = np.zeros((dd, dd))
    M_breve[:d, :d] = A
    M_breve[d:, d:] = eps * P2
    return ReducedForm(frame, nf, om_star, M_breve, V, cps, theta0, ledger)


def _reduction_ledger(H, frame, V, fast, om_star, A, eps, s, degree_cap):
    """
    Sizes of the terms not carried explicitly in ``P_hat`` (already divided
    by the ``eps^(3/2)`` prefactor and measured at radius ``s``).
    """
    se = math.sqrt(eps)
    Ab = float(sum(abs(c) * np.abs(k).sum() / abs(np.dot(k, om_star))
                   for k, mods in fast.items() for c in mods.values())) * eps ** 2
    Bb = float(sum(abs(c) * np.abs(ks).sum() / abs(np.dot(k, om_star))
                   for k, mods in fast.items() for ks, c in mods.items())) * eps ** 2
    nA = float(np.linalg.norm(A, 2))
    shear = Ab + Bb
    # quadratic cross terms of the shear, scaled as in the reduction
    h1 = nA * (se * s * shear + 0.5 * shear ** 2) / se
    # y-dependence of P at the scaled radius
    ydep = 0.0
    for mi, c in H.P:
        deg = sum(mi.taylor_i)
        if deg:
            ydep += abs(c) * (se * s * float(np.abs(frame.K0).sum())) ** deg
    ydep *= eps ** 2 / se
    tail = V.tail_bound(s, degree_cap) if V.coefs and frame.m0 else 0.0
    pref = eps * se
    return {"shear": shear, "h1": h1 / pref, "p_dependence": ydep / pref,
            "taylor_tail": tail, "fast_modes": len(fast),
            "orders": {"h1": "eps^2 |Y| + eps^(7/2)",
                       "h2": "eps^(5/2) (|Y|^2 + eps |Y| + eps^3)",
                       "X3": "eps^(3/2) |X''|^3"}}


# -- (S) conditions ----------------------------------------------------------

def verify_s_conditions(frame, H, lam_symbols, y0_exprs, lam_nodes, theta0=None, N=1, K=3,
                        sigma_tilde=1e-8, seed=0):
    """
    Evaluate (S1)-(S6) and (S5')/(S6') along a family of base points.

    Parameters
    ----------
    lam_symbols : list of sympy.Symbol
    y0_exprs : list of sympy expressions
        ``y0(lambda)`` on the resonant manifold.
    lam_nodes : array_like (P, p)

    Returns
    -------
    ConditionReport
    """
    d, n, m0 = H.d, frame.n, frame.m0
    eps = float(H.eps)
    sub = dict(zip(H.ys, y0_exprs))
    grad = sp.Matrix([sp.diff(H.H1, v) for v in H.ys]).subs(sub)
    hess = sp.hessian(H.H1, H.ys).subs(sub)
    Ks = sp.Matrix(frame.K_star.tolist())
    K0 = sp.Matrix(frame.K0.tolist())
    om_expr = Ks.T * grad
    V, _ = averaged_potential(H.P, frame)
    cps = find_critical_points(V) if m0 and V.coefs else []
    if theta0 is None and cps:
        theta0 = cps[0].point
    P2 = V.hessian(np.atleast_1d(theta0))[0] if m0 and V.coefs else np.zeros((m0, m0))
    A_expr = K0.T * hess * K0
    dd = n + 2 * m0
    pos_Y = list(range(n)) + list(range(n + m0, dd))
    Mb = sp.zeros(dd, dd)
    for a in range(d):
        for b in range(d):
            Mb[pos_Y[a], pos_Y[b]] = A_expr[a, b]
    for a in range(m0):
        for b in range(m0):
            Mb[n + a, n + b] = sp.nsimplify(eps * P2[a, b])
    p = len(lam_symbols)
    order = max(N, 1)
    omega = ParamCoefficient.from_sympy(list(om_expr), lam_symbols, order)
    Mc = ParamCoefficient.from_sympy(Mb, lam_symbols, order)
    freq = FrequencyData(n, m0, omega, Mc, nparam=p)
    lams = [np.atleast_1d(np.asarray(v, dtype=float)) for v in np.atleast_2d(lam_nodes)]
    rep = ConditionReport()
    # (S1)
    worst = None
    for lam in lams:
        cols = [freq.omega_at(lam, a) for a in _alphas(p, 1, N)]
        rk, sv = numerical_rank(np.stack(cols, axis=1))
        if worst is None or rk < worst[0]:
            worst = (rk, lam, sv)
    rep.verdicts["S1"] = bool(worst[0] == n)
    rep.witnesses["S1"] = {"rank": worst[0], "required": n, "lambda": worst[1]}
    # (S2)
    det = float(np.linalg.det(P2)) if m0 else 1.0
    rep.verdicts["S2"] = bool(abs(det) > sigma_tilde)
    rep.witnesses["S2"] = {"det": det, "theta0": np.atleast_1d(theta0).tolist()
                           if theta0 is not None else None}
    # (S3)/(S4) with the eps^2 floor as written
    l3 = l4 = math.inf
    for lam in lams:
        M = freq.M_at(lam)
        l3 = min(l3, float(np.linalg.eigvalsh(M.conj().T @ M)[0]))
        w = np.zeros(dd, dtype=complex)
        w[:n] = freq.omega_at(lam)
        B = np.block([[M, w[:, None]], [w[None, :], np.zeros((1, 1))]])
        l4 = min(l4, float(np.linalg.eigvalsh(B.conj().T @ B)[0]))
    rep.verdicts["S3"] = bool(l3 >= eps ** 2 * (1 - 1e-9))
    rep.verdicts["S4"] = bool(l4 >= eps ** 2 * (1 - 1e-9))
    rep.witnesses["S3"] = {"lambda_min": l3, "floor_sq": eps ** 2}
    rep.witnesses["S4"] = {"lambda_min": l4, "floor_sq": eps ** 2}
    rng = np.random.default_rng(seed)
    modes = half_lattice(n, K)

    def A1(k, w, M):
        return operators_from_data(k, w, M, n, m0).A1

    def A2(k, w, M):
        return operators_from_data(k, w, M, n, m0).A2

    def L1(k, w, M):
        return operators_from_data(k, w, M, n, m0).Lk1

    def L2(k, w, M):
        return operators_from_data(k, w, M, n, m0).Lk2

    for name, bld, prime in (("S5", A1, False), ("S6", A2, False),
                             ("S5'", L1, True), ("S6'", L2, True)):
        sub_rep = _check_rank(freq, lams, modes, N, name if prime else "S", (bld, 1), rng)
        key = next(iter(sub_rep.verdicts))
        rep.verdicts[name] = sub_rep.verdicts[key]
        rep.witnesses[name] = sub_rep.witnesses.get(key, {})
    return rep
