"""
Truncated Taylor-Fourier series in angles, actions and normal variables.

A series lives on ``T^n x R^n x R^{2m}`` with coordinates ``(x, y, z)`` and
is stored as a dense list of monomials

    p_{k i j} * y^i * z^j * exp(1j * <k, x>)

in canonical graded-lexicographic order on ``(|k|, k, i, j)``.  Coefficients
may carry trailing batch axes (for instance one entry per parameter node);
every operation broadcasts over them.

Terms that fall outside the degree or Fourier cap after an operation are not
silently discarded: their absolute mass is accumulated per ``(|k|_1, degree)``
bin in :attr:`TFSeries.overflow` so that :func:`weighted_norm` remains an
upper bound for the untruncated result.

Notes
-----
The Poisson bracket is

    {A, B} = A_x . B_y - A_y . B_x + A_z^T J B_z,   J = [[0, I_m], [-I_m, 0]],

so that ``d/dt (G o phi_F^t) = {G, F} o phi_F^t`` for the flow
``x' = F_y, y' = -F_x, z' = J F_z``.
"""
import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import DomainError, StructureError

__all__ = [
    "MultiIndex", "TFSeries", "ParamCoefficient", "AnalyticDomain",
    "poisson_bracket", "truncate", "average", "weighted_norm",
    "cauchy_shrink_bound", "symplectic_J", "lattice_shell_count",
]


def symplectic_J(m):
    """Return the ``2m x 2m`` matrix ``[[0, I_m], [-I_m, 0]]``."""
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[zero, eye], [-eye, zero]])


def lattice_shell_count(n, j):
    """Number of ``k`` in ``Z^n`` with ``|k|_1 == j``.

    Uses ``sum_i 2^i C(n, i) C(j-1, i-1)``; exact in integer arithmetic.
    """
    if j == 0:
        return 1
    return sum(2 ** i * math.comb(n, i) * math.comb(j - 1, i - 1)
               for i in range(1, min(n, j) + 1))


@dataclass(frozen=True)
class MultiIndex:
    """Index ``(k, i, j)`` of one monomial."""

    fourier_k: Tuple[int, ...]
    taylor_i: Tuple[int, ...]
    taylor_j: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "fourier_k", tuple(int(v) for v in self.fourier_k))
        object.__setattr__(self, "taylor_i", tuple(int(v) for v in self.taylor_i))
        object.__setattr__(self, "taylor_j", tuple(int(v) for v in self.taylor_j))
        if len(self.fourier_k) != len(self.taylor_i):
            raise StructureError("k and i must have the same length n")
        if len(self.taylor_j) % 2:
            raise StructureError("j must have even length 2m")
        if min(self.taylor_i + self.taylor_j, default=0) < 0:
            raise StructureError("Taylor exponents must be nonnegative")

    @property
    def degree(self):
        return sum(self.taylor_i) + sum(self.taylor_j)

    @property
    def k_l1(self):
        return sum(abs(v) for v in self.fourier_k)

    @property
    def k_sup(self):
        return max((abs(v) for v in self.fourier_k), default=0)

    def as_row(self):
        return np.array(self.fourier_k + self.taylor_i + self.taylor_j, dtype=np.int64)


class TFSeries:
    """
    Truncated Taylor-Fourier series with complex coefficients.

    Parameters
    ----------
    dims : tuple of int
        ``(n, m)``: number of angle/action pairs and of normal-variable pairs.
    keys : array_like of int, shape (T, 2n + 2m), optional
        Rows ``[k, i, j]``.
    coefs : array_like of complex, shape (T, ...), optional
        Coefficients; trailing axes are batch axes.
    degree_cap : int
        Largest stored ``|i| + |j|``.
    fourier_cap : int
        Largest stored ``max_l |k_l|``.
    overflow : dict, optional
        Mapping ``(|k|_1, degree) -> mass`` of discarded terms.
    lam_derivs : dict, optional
        Mapping ``l -> real array (T,)`` with ``max_{|a| <= l} sup |d^a p|``
        over the parameter box, used by :func:`weighted_norm` for ``l > 0``.

    Series are immutable: every method returns a new object.
    """

    __array_priority__ = 100

    def __init__(self, dims, keys=None, coefs=None, degree_cap=4, fourier_cap=8,
                 overflow=None, lam_derivs=None, batch_shape=(), _canonical=False):
        n, m = int(dims[0]), int(dims[1])
        if n < 0 or m < 0:
            raise StructureError("dims must be nonnegative")
        self.dims = (n, m)
        self.degree_cap = int(degree_cap)
        self.fourier_cap = int(fourier_cap)
        width = 2 * n + 2 * m
        if keys is None:
            keys = np.zeros((0, width), dtype=np.int64)
            coefs = np.zeros((0,) + tuple(batch_shape), dtype=complex)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, width)
        coefs = np.asarray(coefs, dtype=complex)
        if coefs.shape[:1] != keys.shape[:1]:
            raise StructureError("keys and coefs disagree in length")
        ovf = dict(overflow or {})
        if not _canonical:
            keys, coefs, extra, perm = _combine(keys, coefs, n, self.degree_cap,
                                                self.fourier_cap)
            for key, val in extra.items():
                ovf[key] = ovf.get(key, 0.0) + val
            if lam_derivs is not None and perm is not None:
                lam_derivs = {l: np.asarray(v)[perm] for l, v in lam_derivs.items()}
        self.keys = keys
        self.keys.setflags(write=False)
        self.coefs = coefs
        self.coefs.setflags(write=False)
        self.overflow = ovf
        self.lam_derivs = lam_derivs

    # construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, dims, degree_cap=4, fourier_cap=8, batch_shape=()):
        return cls(dims, degree_cap=degree_cap, fourier_cap=fourier_cap,
                   batch_shape=batch_shape)

    @classmethod
    def from_terms(cls, dims, terms, degree_cap=4, fourier_cap=8):
        """Build from an iterable of ``(k, i, j, coef)``."""
        n, m = dims
        rows, vals = [], []
        for k, i, j, c in terms:
            idx = MultiIndex(k, i, j)
            if len(idx.fourier_k) != n or len(idx.taylor_j) != 2 * m:
                raise StructureError(f"term {idx} does not match dims {dims}")
            rows.append(idx.as_row())
            vals.append(np.asarray(c, dtype=complex))
        if not rows:
            return cls.zeros(dims, degree_cap, fourier_cap)
        return cls(dims, np.array(rows), np.array(vals), degree_cap, fourier_cap)

    @classmethod
    def from_dict(cls, dims, mapping, degree_cap=4, fourier_cap=8):
        return cls.from_terms(dims, ((mi.fourier_k, mi.taylor_i, mi.taylor_j, c)
                                     for mi, c in mapping.items()),
                              degree_cap, fourier_cap)

    @classmethod
    def cos_mode(cls, dims, k, amplitude=1.0, degree_cap=4, fourier_cap=8):
        """``amplitude * cos<k, x>``."""
        n, m = dims
        k = tuple(int(v) for v in k)
        zi, zj = (0,) * n, (0,) * (2 * m)
        half = 0.5 * amplitude
        return cls.from_terms(dims, [(k, zi, zj, half),
                                     (tuple(-v for v in k), zi, zj, half)],
                              degree_cap, fourier_cap)

    @classmethod
    def sin_mode(cls, dims, k, amplitude=1.0, degree_cap=4, fourier_cap=8):
        """``amplitude * sin<k, x>``."""
        n, m = dims
        k = tuple(int(v) for v in k)
        zi, zj = (0,) * n, (0,) * (2 * m)
        c = amplitude / 2j
        return cls.from_terms(dims, [(k, zi, zj, c), (tuple(-v for v in k), zi, zj, -c)],
                              degree_cap, fourier_cap)

    @classmethod
    def polynomial(cls, dims, const=0.0, grad=None, hess=None, degree_cap=4,
                   fourier_cap=8):
        """Angle-independent ``c + <g, w> + 1/2 w^T H w`` with ``w = (y, z)``."""
        n, m = dims
        d = n + 2 * m
        terms = []
        zero = (0,) * n
        if const != 0:
            terms.append((zero, zero, (0,) * (2 * m), const))
        if grad is not None:
            g = np.asarray(grad, dtype=complex).reshape(d)
            for a in range(d):
                if g[a] != 0:
                    e = [0] * d
                    e[a] = 1
                    terms.append((zero, e[:n], e[n:], g[a]))
        if hess is not None:
            H = np.asarray(hess, dtype=complex).reshape(d, d)
            for a in range(d):
                for b in range(a, d):
                    c = 0.5 * H[a, a] if a == b else 0.5 * (H[a, b] + H[b, a])
                    if c != 0:
                        e = [0] * d
                        e[a] += 1
                        e[b] += 1
                        terms.append((zero, e[:n], e[n:], c))
        return cls.from_terms(dims, terms, degree_cap, fourier_cap)

    @classmethod
    def from_param_terms(cls, dims, terms, grid, l0=0, degree_cap=4, fourier_cap=8):
        """
        Sample parameter-dependent coefficients on a grid of nodes.

        Parameters
        ----------
        terms : iterable of (k, i, j, ParamCoefficient)
            Scalar-valued coefficients.
        grid : array_like, shape (G, p)
            Parameter nodes; they become the trailing batch axis.
        l0 : int
            Highest derivative order recorded in ``lam_derivs``.
        """
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        rows, vals, ders = [], [], {l: [] for l in range(1, l0 + 1)}
        for k, i, j, pc in terms:
            rows.append(MultiIndex(k, i, j).as_row())
            table = pc.tabulate(grid, l0)
            vals.append(np.asarray(table[(0,) * grid.shape[1]], dtype=complex).reshape(-1))
            for l in range(1, l0 + 1):
                best = np.abs(vals[-1]).max()
                for alpha, arr in table.items():
                    if 0 < sum(alpha) <= l:
                        best = max(best, np.abs(arr).max())
                ders[l].append(best)
        if not rows:
            return cls.zeros(dims, degree_cap, fourier_cap, batch_shape=(grid.shape[0],))
        lam = {l: np.array(v, dtype=float) for l, v in ders.items()} if l0 else None
        return cls(dims, np.array(rows), np.array(vals), degree_cap, fourier_cap,
                   lam_derivs=lam)

    def _new(self, keys, coefs, overflow=None, canonical=False, degree_cap=None,
             fourier_cap=None, lam_derivs=None):
        return TFSeries(self.dims, keys, coefs,
                        self.degree_cap if degree_cap is None else degree_cap,
                        self.fourier_cap if fourier_cap is None else fourier_cap,
                        overflow=overflow, lam_derivs=lam_derivs,
                        batch_shape=self.batch_shape, _canonical=canonical)

    # basic properties ----------------------------------------------------

    @property
    def n(self):
        return self.dims[0]

    @property
    def m(self):
        return self.dims[1]

    @property
    def batch_shape(self):
        return self.coefs.shape[1:]

    @property
    def k(self):
        return self.keys[:, :self.n]

    @property
    def i(self):
        return self.keys[:, self.n:2 * self.n]

    @property
    def j(self):
        return self.keys[:, 2 * self.n:]

    @property
    def degree(self):
        return self.keys[:, self.n:].sum(axis=1)

    @property
    def k_l1(self):
        return np.abs(self.k).sum(axis=1)

    def __len__(self):
        return self.keys.shape[0]

    def __iter__(self):
        for row, c in zip(self.keys, self.coefs):
            yield MultiIndex(row[:self.n], row[self.n:2 * self.n], row[2 * self.n:]), c

    def terms(self):
        """Dictionary ``MultiIndex -> coefficient``."""
        return dict(iter(self))

    def index_set(self):
        return {tuple(row) for row in self.keys.tolist()}

    def coefficient(self, k, i, j):
        row = MultiIndex(k, i, j).as_row()
        hit = np.nonzero((self.keys == row).all(axis=1))[0]
        if hit.size == 0:
            return np.zeros(self.batch_shape, dtype=complex)
        return self.coefs[hit[0]]

    def abs_mass(self):
        """Per-term ``sup`` over batch axes of ``|p|``."""
        a = np.abs(self.coefs)
        if a.ndim > 1:
            a = a.reshape(a.shape[0], -1).max(axis=1)
        return a

    def overflow_mass(self):
        """Total unweighted mass of discarded terms."""
        return float(sum(self.overflow.values()))

    def without_overflow(self):
        return self._new(self.keys, self.coefs, None, True)

    def is_zero(self):
        return len(self) == 0 and not self.overflow

    def __repr__(self):
        return (f"TFSeries(dims={self.dims}, terms={len(self)}, "
                f"degree_cap={self.degree_cap}, fourier_cap={self.fourier_cap}, "
                f"overflow={self.overflow_mass():.3e})")

    # linear algebra ------------------------------------------------------

    def _check(self, other):
        if not isinstance(other, TFSeries):
            raise StructureError("operand is not a TFSeries")
        if other.dims != self.dims:
            raise StructureError(f"dimension mismatch {self.dims} vs {other.dims}")

    def _caps(self, other):
        return (min(self.degree_cap, other.degree_cap),
                min(self.fourier_cap, other.fourier_cap))

    def __add__(self, other):
        if np.isscalar(other):
            return self + TFSeries.polynomial(self.dims, other, degree_cap=self.degree_cap,
                                              fourier_cap=self.fourier_cap)
        self._check(other)
        dc, fc = self._caps(other)
        ovf = _merge_overflow(self.overflow, other.overflow)
        b = np.broadcast_shapes(self.batch_shape, other.batch_shape)
        ca = np.broadcast_to(self.coefs, (len(self),) + b)
        cb = np.broadcast_to(other.coefs, (len(other),) + b)
        return TFSeries(self.dims, np.vstack([self.keys, other.keys]),
                        np.concatenate([ca, cb]), dc, fc, overflow=ovf)

    __radd__ = __add__

    def __neg__(self):
        return self._new(self.keys, -self.coefs, dict(self.overflow), True,
                         lam_derivs=self.lam_derivs)

    def __sub__(self, other):
        if np.isscalar(other):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TFSeries):
            return multiply(self, other)
        c = np.asarray(other, dtype=complex)
        scale = float(np.abs(c).max()) if c.size else 0.0
        ovf = {key: val * scale for key, val in self.overflow.items()}
        lam = None
        if self.lam_derivs is not None and c.ndim == 0:
            lam = {l: v * abs(complex(c)) for l, v in self.lam_derivs.items()}
        return TFSeries(self.dims, self.keys, self.coefs * c, self.degree_cap,
                        self.fourier_cap, overflow=ovf, lam_derivs=lam)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / np.asarray(other, dtype=complex))

    def conj(self):
        """Complex conjugate of the function (maps ``k -> -k``)."""
        keys = self.keys.copy()
        keys[:, :self.n] *= -1
        return TFSeries(self.dims, keys, np.conj(self.coefs), self.degree_cap,
                        self.fourier_cap, overflow=dict(self.overflow))

    def with_caps(self, degree_cap=None, fourier_cap=None):
        return TFSeries(self.dims, self.keys, self.coefs,
                        self.degree_cap if degree_cap is None else degree_cap,
                        self.fourier_cap if fourier_cap is None else fourier_cap,
                        overflow=dict(self.overflow))

    def select(self, mask):
        """Keep the terms where ``mask`` is true (overflow is dropped)."""
        mask = np.asarray(mask, dtype=bool)
        lam = None
        if self.lam_derivs is not None:
            lam = {l: v[mask] for l, v in self.lam_derivs.items()}
        return self._new(self.keys[mask], self.coefs[mask], None, True, lam_derivs=lam)

    def project_degree(self, lo=0, hi=None):
        deg = self.degree
        mask = deg >= lo
        if hi is not None:
            mask &= deg <= hi
        return self.select(mask)

    def real_part_defect(self):
        """Largest ``|p(-k, i, j) - conj(p(k, i, j))|`` over stored terms."""
        if len(self) == 0:
            return 0.0
        lookup = {row: idx for idx, row in enumerate(map(tuple, self.keys.tolist()))}
        worst = 0.0
        for idx, row in enumerate(self.keys.tolist()):
            mirror = tuple(-v for v in row[:self.n]) + tuple(row[self.n:])
            jdx = lookup.get(mirror)
            other = self.coefs[jdx] if jdx is not None else 0.0
            worst = max(worst, float(np.abs(other - np.conj(self.coefs[idx])).max()))
        return worst

    def real_projection(self):
        """``(P + conj(P)) / 2``: the real-valued part of the function."""
        half = 0.5 * (self + self.conj())
        return TFSeries(self.dims, half.keys, half.coefs, self.degree_cap,
                        self.fourier_cap, overflow=dict(self.overflow))

    # calculus ------------------------------------------------------------

    def diff_x(self, l):
        """Derivative with respect to the angle ``x_l``."""
        fac = 1j * self.k[:, l].astype(float)
        fac = fac.reshape((-1,) + (1,) * len(self.batch_shape))
        return TFSeries(self.dims, self.keys, self.coefs * fac, self.degree_cap,
                        self.fourier_cap)

    def _diff_taylor(self, col):
        e = self.keys[:, col]
        mask = e > 0
        keys = self.keys[mask].copy()
        keys[:, col] -= 1
        fac = e[mask].astype(float).reshape((-1,) + (1,) * len(self.batch_shape))
        return TFSeries(self.dims, keys, self.coefs[mask] * fac, self.degree_cap,
                        self.fourier_cap)

    def diff_y(self, l):
        return self._diff_taylor(self.n + l)

    def diff_z(self, l):
        return self._diff_taylor(2 * self.n + l)

    def evaluate(self, x, y, z):
        """
        Evaluate at points.

        Parameters
        ----------
        x, y : array_like, shape (P, n)
        z : array_like, shape (P, 2m)

        Returns
        -------
        ndarray, shape (P,) + batch_shape
        """
        n, m = self.dims
        y = np.atleast_2d(np.asarray(y, dtype=complex))
        npts = y.shape[0] if n == 0 else y.size // n
        x = np.asarray(x, dtype=complex).reshape(npts, n)
        y = y.reshape(npts, n)
        z = np.asarray(z, dtype=complex).reshape(npts, 2 * m)
        phase = np.exp(1j * x @ self.k.T.astype(complex))
        mono = np.ones_like(phase)
        for l in range(n):
            mono = mono * y[:, [l]] ** self.i[:, l]
        for l in range(2 * m):
            mono = mono * z[:, [l]] ** self.j[:, l]
        basis = phase * mono
        if len(self) == 0:
            return np.zeros((basis.shape[0],) + self.batch_shape, dtype=complex)
        flat = self.coefs.reshape(len(self), -1)
        out = basis @ flat
        return out.reshape((basis.shape[0],) + self.batch_shape)

    def shift(self, w0):
        """Substitute ``(y, z) -> (y, z) + w0``; exact for polynomials."""
        n, m = self.dims
        w0 = np.asarray(w0, dtype=complex).reshape(n + 2 * m)
        keys, coefs = self.keys, self.coefs
        nb = len(self.batch_shape)
        for var in range(n + 2 * m):
            a = w0[var]
            if a == 0 or len(keys) == 0:
                continue
            col = n + var
            e = keys[:, col]
            new_keys, new_coefs = [], []
            for c in range(int(e.max()) + 1):
                mask = e >= c
                kk = keys[mask].copy()
                kk[:, col] = c
                ee = e[mask]
                binom = np.array([math.comb(int(v), c) for v in ee], dtype=float)
                fac = binom * a ** (ee - c).astype(float)
                new_keys.append(kk)
                new_coefs.append(coefs[mask] * fac.reshape((-1,) + (1,) * nb))
            keys = np.vstack(new_keys)
            coefs = np.concatenate(new_coefs)
        out = TFSeries(self.dims, keys, coefs, self.degree_cap, self.fourier_cap,
                       overflow=dict(self.overflow))
        return out

    # jets ----------------------------------------------------------------

    def jet(self, k):
        """
        Coefficients of degree <= 2 at Fourier mode ``k``.

        Returns
        -------
        p00 : complex
        p10 : ndarray (n,)
        p01 : ndarray (2m,)
        A : ndarray (n, n)
            Symmetric, with the degree-two ``y`` part equal to ``y^T A y``.
        B : ndarray (n, 2m)
            ``y^T B z``.
        C : ndarray (2m, 2m)
            Symmetric, with the ``z`` part equal to ``1/2 z^T C z``.
        """
        if self.batch_shape:
            raise StructureError("jet extraction needs an unbatched series")
        n, m = self.dims
        d = n + 2 * m
        k = np.asarray(k, dtype=np.int64).reshape(n)
        rows = np.nonzero((self.k == k).all(axis=1) & (self.degree <= 2))[0]
        p00 = 0j
        lin = np.zeros(d, dtype=complex)
        Q = np.zeros((d, d), dtype=complex)
        for r in rows:
            e = self.keys[r, n:]
            c = self.coefs[r]
            nz = np.nonzero(e)[0]
            deg = int(e.sum())
            if deg == 0:
                p00 += c
            elif deg == 1:
                lin[nz[0]] += c
            elif len(nz) == 1:
                Q[nz[0], nz[0]] += 2 * c
            else:
                Q[nz[0], nz[1]] += c
                Q[nz[1], nz[0]] += c
        A = 0.5 * Q[:n, :n]
        B = Q[:n, n:]
        C = Q[n:, n:]
        return p00, lin[:n], lin[n:], A, B, C

    @classmethod
    def from_jets(cls, dims, jets, degree_cap=4, fourier_cap=8):
        """
        Inverse of :meth:`jet` over several modes.

        Parameters
        ----------
        jets : dict
            ``k -> (f00, f10, f01, A, B, C)`` with the conventions of
            :meth:`jet`; ``A`` and ``C`` need not be symmetric.
        """
        n, m = dims
        d = n + 2 * m
        rows, vals = [], []
        for k, (f00, f10, f01, A, B, C) in jets.items():
            k = tuple(int(v) for v in k)
            lin = np.concatenate([np.ravel(f10), np.ravel(f01)]) if d else np.zeros(0)
            Q = np.zeros((d, d), dtype=complex)
            A = np.asarray(A, dtype=complex).reshape(n, n)
            B = np.asarray(B, dtype=complex).reshape(n, 2 * m)
            C = np.asarray(C, dtype=complex).reshape(2 * m, 2 * m)
            Q[:n, :n] = A + A.T
            Q[:n, n:] = B
            Q[n:, :n] = B.T
            Q[n:, n:] = 0.5 * (C + C.T)
            rows.append(list(k) + [0] * d)
            vals.append(f00)
            for a in range(d):
                e = [0] * d
                e[a] = 1
                rows.append(list(k) + e)
                vals.append(lin[a])
                for b in range(a, d):
                    e = [0] * d
                    e[a] += 1
                    e[b] += 1
                    rows.append(list(k) + e)
                    vals.append(0.5 * Q[a, a] if a == b else Q[a, b])
        if not rows:
            return cls.zeros(dims, degree_cap, fourier_cap)
        return cls(dims, np.array(rows), np.array(vals, dtype=complex),
                   degree_cap, fourier_cap)

    def fourier_modes(self, include_zero=False):
        """Sorted distinct ``k`` vectors present in the series."""
        if len(self) == 0:
            return []
        ks = np.unique(self.k, axis=0)
        out = [tuple(int(v) for v in row) for row in ks]
        if not include_zero:
            out = [k for k in out if any(k)]
        out.sort(key=lambda k: (sum(abs(v) for v in k), k))
        return out

    # serialization ---------------------------------------------------------

    def to_json(self):
        """JSON text with 17-significant-digit coefficients."""
        if self.batch_shape:
            raise StructureError("JSON export supports unbatched series only")
        if not np.all(np.isfinite(self.coefs.view(float))):
            raise StructureError("cannot serialize non-finite coefficients")
        n = self.n
        lines = []
        for row, c in zip(self.keys.tolist(), self.coefs):
            lines.append("[%s, %s, %s, %s, %s]" % (
                json.dumps(row[:n]), json.dumps(row[n:2 * n]), json.dumps(row[2 * n:]),
                _g17(c.real), _g17(c.imag)))
        ovf = [[int(a), int(b), _g17(v)] for (a, b), v in sorted(self.overflow.items())]
        head = json.dumps({"dims": list(self.dims), "degree_cap": self.degree_cap,
                           "fourier_cap": self.fourier_cap})[:-1]
        return (head + ', "overflow": [' + ", ".join("[%d, %d, %s]" % tuple(o) for o in ovf)
                + '], "terms": [\n  ' + ",\n  ".join(lines) + "\n]}")

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        n, m = doc["dims"]
        rows, vals = [], []
        for k, i, j, re, im in doc["terms"]:
            rows.append(list(k) + list(i) + list(j))
            vals.append(complex(re, im))
        ovf = {(int(a), int(b)): float(v) for a, b, v in doc.get("overflow", [])}
        if not rows:
            return cls((n, m), degree_cap=doc["degree_cap"],
                       fourier_cap=doc["fourier_cap"], overflow=ovf)
        return cls((n, m), np.array(rows), np.array(vals), doc["degree_cap"],
                   doc["fourier_cap"], overflow=ovf)


def _g17(v):
    return "%.17g" % float(v)


def _merge_overflow(a, b):
    out = dict(a)
    for key, val in b.items():
        out[key] = out.get(key, 0.0) + val
    return out


def _combine(keys, coefs, n, degree_cap, fourier_cap):
    """Merge duplicate keys, split off cap violations, sort canonically."""
    batch = coefs.shape[1:]
    if keys.shape[0] == 0:
        return keys.copy(), coefs.copy(), {}, None
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    acc = np.zeros((uniq.shape[0],) + batch, dtype=complex)
    np.add.at(acc, inv, coefs)
    perm = None
    if uniq.shape[0] == keys.shape[0]:
        perm = np.empty(keys.shape[0], dtype=np.int64)
        perm[inv] = np.arange(keys.shape[0])
    flat = np.abs(acc.reshape(acc.shape[0], -1))
    nonzero = flat.max(axis=1) > 0 if flat.shape[1] else np.ones(acc.shape[0], bool)
    kk = uniq[:, :n]
    deg = uniq[:, n:].sum(axis=1)
    ksup = np.abs(kk).max(axis=1) if n else np.zeros(len(uniq), dtype=np.int64)
    inside = (deg <= degree_cap) & (ksup <= fourier_cap)
    extra = {}
    drop = nonzero & ~inside
    if drop.any():
        kl1 = np.abs(kk[drop]).sum(axis=1)
        mass = flat[drop].max(axis=1)
        for a, b, v in zip(kl1.tolist(), deg[drop].tolist(), mass.tolist()):
            extra[(a, b)] = extra.get((a, b), 0.0) + v
    keep = nonzero & inside
    uniq, acc = uniq[keep], acc[keep]
    if perm is not None:
        perm = perm[keep]
    order = _canonical_order(uniq, n)
    if perm is not None:
        perm = perm[order]
    return uniq[order], acc[order], extra, perm


def _canonical_order(keys, n):
    if keys.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    kl1 = np.abs(keys[:, :n]).sum(axis=1)
    cols = [keys[:, c] for c in range(keys.shape[1] - 1, -1, -1)]
    return np.lexsort(cols + [kl1])


def multiply(A, B):
    """Pointwise product, truncated to the smaller caps."""
    A._check(B)
    dc, fc = A._caps(B)
    if len(A) == 0 or len(B) == 0:
        return TFSeries.zeros(A.dims, dc, fc, np.broadcast_shapes(A.batch_shape, B.batch_shape))
    keys, coefs = _outer(A, B)
    return TFSeries(A.dims, keys, coefs, dc, fc)


def _outer(A, B):
    keys = (A.keys[:, None, :] + B.keys[None, :, :]).reshape(-1, A.keys.shape[1])
    ca = A.coefs.reshape((len(A), 1) + A.batch_shape)
    cb = B.coefs.reshape((1, len(B)) + B.batch_shape)
    coefs = ca * cb
    return keys, coefs.reshape((-1,) + coefs.shape[2:])


def poisson_bracket(A, B):
    """
    Poisson bracket ``{A, B} = A_x.B_y - A_y.B_x + A_z^T J B_z``.

    Parameters
    ----------
    A, B : TFSeries
        Series with identical ``dims``.

    Returns
    -------
    TFSeries
        Truncated to the smaller caps of the operands; discarded mass is
        reported in ``overflow``.

    Examples
    --------
    >>> dims = (1, 0)
    >>> A = TFSeries.from_terms(dims, [((0,), (2,), (), 0.5)])
    >>> B = TFSeries.sin_mode(dims, (1,))
    >>> C = poisson_bracket(A, B)      # -y cos x
    >>> complex(C.coefficient((1,), (1,), ())).real
    -0.5
    """
    A._check(B)
    n, m = A.dims
    dc, fc = A._caps(B)
    batch = np.broadcast_shapes(A.batch_shape, B.batch_shape)
    parts_k, parts_c = [], []

    def push(P, Q, sign):
        if len(P) and len(Q):
            k, c = _outer(P, Q)
            parts_k.append(k)
            parts_c.append(sign * np.broadcast_to(c, (c.shape[0],) + batch))

    for l in range(n):
        push(A.diff_x(l), B.diff_y(l), 1.0)
        push(A.diff_y(l), B.diff_x(l), -1.0)
    for l in range(m):
        push(A.diff_z(l), B.diff_z(l + m), 1.0)
        push(A.diff_z(l + m), B.diff_z(l), -1.0)
    if not parts_k:
        return TFSeries.zeros(A.dims, dc, fc, batch)
    return TFSeries(A.dims, np.vstack(parts_k), np.concatenate(parts_c), dc, fc)


def truncate(P, K_plus):
    """
    Split ``P`` into its low part ``R`` and the remainder.

    ``R`` keeps the terms with ``|i| + |j| <= 2`` and ``|k|_1 <= K_plus``;
    ``tail = P - R`` keeps everything else, including ``P``'s overflow.
    """
    if K_plus < 1:
        raise ValueError("K_plus must be >= 1")
    mask = (P.degree <= 2) & (P.k_l1 <= K_plus)
    R = P.select(mask)
    tail = P.select(~mask)
    tail = TFSeries(P.dims, tail.keys, tail.coefs, P.degree_cap, P.fourier_cap,
                    overflow=dict(P.overflow), _canonical=True)
    return R, tail


def average(R):
    """Angle average: the ``k = 0`` part of ``R``."""
    return R.select(R.k_l1 == 0)


@dataclass(frozen=True)
class AnalyticDomain:
    """
    Complex domain ``D(r, s)`` and parameter box.

    Parameters
    ----------
    r : float
        Half-width of the complex strip in the angles.
    s : float
        Radius for actions and normal variables.
    lambda_box : array_like, shape (p, 2), optional
        Lower and upper bounds of the parameter region.
    eta : float
        Margin by which the box is shrunk for derivative estimates.
    """

    r: float
    s: float
    lambda_box: Optional[np.ndarray] = None
    eta: float = 0.5

    def __post_init__(self):
        if not (self.r > 0 and self.s > 0):
            raise DomainError(f"need r > 0 and s > 0, got r={self.r}, s={self.s}")
        if not self.eta > 0:
            raise DomainError(f"need eta > 0, got {self.eta}")
        if self.lambda_box is not None:
            box = np.asarray(self.lambda_box, dtype=float).reshape(-1, 2)
            object.__setattr__(self, "lambda_box", box)
            radius = 0.5 * float((box[:, 1] - box[:, 0]).min())
            if not self.eta < radius:
                raise DomainError(f"eta={self.eta} must be below the box radius {radius}")

    def shrink(self, r, s, eta=None):
        return AnalyticDomain(r, s, self.lambda_box, self.eta if eta is None else eta)


def weighted_norm(P, dom, l=0):
    """
    Majorant norm ``sum |p_kij| exp(|k|_1 r) s^(|i|+|j|)``.

    This bounds the supremum of ``|d_lambda^l P|`` on ``D(r, s)`` and is
    monotone in ``r`` and ``s``.  For ``l > 0`` the series must carry
    derivative data (see :meth:`TFSeries.from_param_terms`); otherwise use
    :func:`cauchy_shrink_bound`.
    """
    r, s = float(dom.r), float(dom.s)
    if l == 0:
        mass = P.abs_mass()
    else:
        if P.lam_derivs is None or l not in P.lam_derivs:
            raise ValueError(f"no derivative data of order {l}; use cauchy_shrink_bound")
        mass = np.asarray(P.lam_derivs[l], dtype=float)
    total = float(np.sum(mass * np.exp(P.k_l1 * r) * s ** P.degree.astype(float)))
    for (kl1, deg), val in P.overflow.items():
        total += val * math.exp(kl1 * r) * s ** deg
    return total


def cauchy_shrink_bound(P, dom, l):
    """``weighted_norm(P, dom) / eta**l``: Cauchy estimate on the shrunk box."""
    eta = float(dom.eta)
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta}")
    return weighted_norm(P, dom, 0) / eta ** int(l)


class ParamCoefficient:
    """
    Parameter-dependent (array-valued) coefficient.

    Either a closed form (``func`` plus optional exact derivative callables)
    or a table of values and derivatives on a tensor grid.

    Parameters
    ----------
    func : callable, optional
        ``lam -> array`` of fixed shape.
    nparam : int
        Dimension ``p`` of the parameter.
    derivs : dict, optional
        ``alpha (tuple of int) -> callable`` with exact derivatives.
    fd_step : float
        Step for central differences when no exact derivative is available.
    """

    def __init__(self, func=None, nparam=1, derivs=None, fd_step=1e-4, axes=None,
                 table=None):
        self.func = func
        self.nparam = int(nparam)
        self.derivs = dict(derivs or {})
        self.fd_step = float(fd_step)
        self.axes = None if axes is None else [np.asarray(a, dtype=float) for a in axes]
        self.table = table
        if func is None and table is None:
            raise ValueError("need either func or table")

    # constructors

    @classmethod
    def constant(cls, value, nparam=1):
        value = np.asarray(value, dtype=complex)
        zero = np.zeros_like(value)
        return _ConstantCoefficient(value, zero, nparam)

    @classmethod
    def from_sympy(cls, expr, symbols, order=2):
        """
        Closed form from a sympy expression or matrix.

        All mixed partial derivatives up to ``order`` are generated exactly
        with ``sympy.diff`` and compiled with ``sympy.lambdify``.
        """
        import sympy as sp

        symbols = list(symbols)
        expr = sp.Matrix(expr) if isinstance(expr, (list, tuple)) or hasattr(expr, "shape") \
            else sp.Matrix([expr])
        shape = expr.shape

        def compile_(e):
            f = sp.lambdify(symbols, e, modules="numpy")

            def call(lam):
                lam = np.atleast_1d(np.asarray(lam, dtype=float))
                val = np.asarray(f(*lam), dtype=complex)
                return np.broadcast_to(val, shape).copy()
            return call

        derivs = {}
        p = len(symbols)
        for total in range(1, order + 1):
            for alpha in _multi_indices(p, total):
                e = expr
                for var, a in zip(symbols, alpha):
                    if a:
                        e = e.diff(var, a)
                derivs[alpha] = compile_(e)
        obj = cls(compile_(expr), nparam=p, derivs=derivs)
        obj.order = order
        obj.shape = shape
        return obj

    @classmethod
    def from_table(cls, axes, values, derivatives):
        """
        Tabulated data on the tensor grid ``axes``.

        Parameters
        ----------
        axes : list of 1-D arrays
        values : ndarray, shape (len(axes[0]), ..., *shape)
        derivatives : dict ``alpha -> ndarray`` of the same shape
        """
        table = {(0,) * len(axes): np.asarray(values, dtype=complex)}
        for alpha, arr in derivatives.items():
            table[tuple(alpha)] = np.asarray(arr, dtype=complex)
        return cls(None, nparam=len(axes), axes=axes, table=table)

    # evaluation

    def _node(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        idx = []
        for a, v in zip(self.axes, lam):
            hit = np.nonzero(np.isclose(a, v, rtol=0, atol=1e-12 * (1 + abs(v))))[0]
            if hit.size == 0:
                raise ValueError(f"parameter {lam} is not a grid node")
            idx.append(int(hit[0]))
        return tuple(idx)

    def value(self, lam):
        if self.table is not None:
            return self.table[(0,) * self.nparam][self._node(lam)]
        return self.func(lam)

    __call__ = value

    def derivative(self, lam, alpha):
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) == 0:
            return self.value(lam)
        if self.table is not None:
            if alpha not in self.table:
                raise KeyError(f"no tabulated derivative {alpha}")
            return self.table[alpha][self._node(lam)]
        if alpha in self.derivs:
            return self.derivs[alpha](lam)
        return self._finite_difference(lam, alpha)

    def _finite_difference(self, lam, alpha):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        h = self.fd_step
        out = 0
        for signs in product(*[range(a + 1) for a in alpha]):
            shift = np.array([(a - 2 * c) * h for a, c in zip(alpha, signs)])
            w = 1.0
            for a, c in zip(alpha, signs):
                w *= (-1) ** c * math.comb(a, c)
            out = out + w * np.asarray(self.func(lam + shift))
        return out / (2 * h) ** sum(alpha)

    def tabulate(self, grid, order=0):
        """Values and all derivatives up to ``order`` at each grid node."""
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        out = {}
        for total in range(order + 1):
            for alpha in _multi_indices(self.nparam, total):
                out[alpha] = np.stack([np.asarray(self.derivative(g, alpha)) for g in grid])
        return out

    def check_consistency(self, grid=None, rtol=1e-4, order=1):
        """
        Compare derivative data with finite differences of values.

        Returns
        -------
        float
            Largest relative discrepancy; compare against ``rtol``.
        """
        worst = 0.0
        if self.table is not None:
            vals = self.table[(0,) * self.nparam]
            for ax in range(self.nparam):
                alpha = tuple(int(i == ax) for i in range(self.nparam))
                if alpha not in self.table:
                    continue
                fd = np.gradient(vals, self.axes[ax], axis=ax, edge_order=2)
                ref = self.table[alpha]
                scale = max(np.abs(ref).max(), 1e-300)
                worst = max(worst, float(np.abs(fd - ref).max() / scale))
            return worst
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        for g in grid:
            for total in range(1, order + 1):
                for alpha in _multi_indices(self.nparam, total):
                    exact = np.asarray(self.derivative(g, alpha))
                    fd = np.asarray(self._finite_difference(g, alpha))
                    scale = max(np.abs(exact).max(), np.abs(self.value(g)).max(), 1e-300)
                    worst = max(worst, float(np.abs(fd - exact).max() / scale))
        return worst


class _ConstantCoefficient(ParamCoefficient):
    def __init__(self, value, zero, nparam):
        super().__init__(lambda lam: value, nparam=nparam)
        self._zero = zero

    def derivative(self, lam, alpha):
        if sum(alpha) == 0:
            return self.func(lam)
        return self._zero


def _multi_indices(p, total):
    """All ``alpha`` in ``N^p`` with ``|alpha| == total`` in lexicographic order."""
    if p == 0:
        return [()] if total == 0 else []
    if p == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _multi_indices(p - 1, total - first):
            out.append((first,) + rest)
    return out


multi_indices = _multi_indices
