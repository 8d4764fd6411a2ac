"""
Small-divisor operators and multi-scale eigenvalue floors.

For a Fourier mode ``k`` the homological equations of one KAM step reduce to
block upper-triangular linear systems.  This module builds those operators
from the frequency data, evaluates Hermitian floors ``lambda_min(A^* A)``,
and provides the multi-scale lower bounds used to certify them.

Vectorisation of matrix unknowns is column-major throughout, so that
``vec(X Y Z) = (Z^T kron X) vec(Y)``.
"""
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NumericError, StructureError
from .tfseries import ParamCoefficient, TFSeries, symplectic_J

__all__ = [
    "ScaleSet", "FrequencyData", "DivisorOperators", "build_operators",
    "operators_from_data", "hermitian_floor", "weyl_perturbation_check",
    "WeylReport", "multiscale_eig_lower_bound", "multiscale_inverse_denominator_check",
    "InverseCheck", "vec", "unvec", "operators_to_json",
]


def vec(X):
    """Column-major vectorisation."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v, rows, cols):
    return np.asarray(v).reshape((rows, cols), order="F")


@dataclass(frozen=True)
class ScaleSet:
    """
    Scale parameters of a multi-scale system.

    Parameters
    ----------
    eps : float
        Base scale; must not exceed any other scale.
    eps_vec : sequence of float
        Frequency scales ``eps_0 .. eps_m``.
    mu_vec : sequence of float
        Normal-matrix scales ``mu_1 .. mu_l``.
    ceiling : float or None
        Every scale must be at most this value; ``None`` disables the check.
    """

    eps: float
    eps_vec: tuple
    mu_vec: tuple = ()
    ceiling: Optional[float] = 0.1

    def __post_init__(self):
        object.__setattr__(self, "eps_vec", tuple(float(v) for v in np.ravel(self.eps_vec)))
        object.__setattr__(self, "mu_vec", tuple(float(v) for v in np.ravel(self.mu_vec)))
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.eps_vec:
            raise ValueError("eps_vec must be nonempty")
        tol = 1e-15 * self.eps
        for v in self.eps_vec + self.mu_vec:
            if v < self.eps - tol:
                raise ValueError(f"scale {v} is below the base scale {self.eps}")
        if self.ceiling is not None:
            for v in (self.eps,) + self.eps_vec + self.mu_vec:
                if v > self.ceiling:
                    raise ValueError(f"scale {v} exceeds the ceiling {self.ceiling}")

    @property
    def min_eps(self):
        return min(self.eps_vec)

    @property
    def min_eps_mu(self):
        return min(self.eps_vec + self.mu_vec)

    def floors(self, gamma, tau, k):
        """Scalar and matrix floors ``min-scale * gamma / |k|_1^tau``."""
        kk = float(np.abs(np.asarray(k)).sum())
        return self.min_eps * gamma / kk ** tau, self.min_eps_mu * gamma / kk ** tau

    def to_dict(self):
        return {"eps": self.eps, "eps_vec": list(self.eps_vec),
                "mu_vec": list(self.mu_vec), "ceiling": self.ceiling}


def _as_coefficient(value, nparam):
    if isinstance(value, ParamCoefficient):
        return value
    if callable(value):
        return ParamCoefficient(value, nparam=nparam)
    return ParamCoefficient.constant(value, nparam=nparam)


class FrequencyData:
    """
    Frequency vector, normal matrix and higher-order jet of the integrable part.

    Parameters
    ----------
    n, m : int
        Torus dimension and number of normal pairs.
    omega : ParamCoefficient, callable or array
        ``lambda -> (n,)`` frequency vector.
    M : ParamCoefficient, callable or array
        ``lambda -> (n+2m, n+2m)`` symmetric matrix.
    h : TFSeries, optional
        Angle-independent terms of degree >= 3 (parameter independent).
    nparam : int
        Dimension of the parameter.
    """

    def __init__(self, n, m, omega, M, h=None, nparam=1):
        self.n, self.m = int(n), int(m)
        self.nparam = int(nparam)
        self.omega = _as_coefficient(omega, self.nparam)
        self.M = _as_coefficient(M, self.nparam)
        self.h = h
        if h is not None:
            if h.dims != (self.n, self.m):
                raise StructureError("h has the wrong dims")
            if len(h) and (np.any(h.k != 0) or np.any(h.degree < 3)):
                raise StructureError("h must be angle independent of degree >= 3")

    @property
    def d(self):
        return self.n + 2 * self.m

    def omega_at(self, lam, alpha=None):
        out = self.omega.value(lam) if alpha is None else self.omega.derivative(lam, alpha)
        out = np.asarray(out, dtype=complex).reshape(-1)
        if out.size != self.n:
            raise StructureError(f"omega has length {out.size}, expected {self.n}")
        return out

    def M_at(self, lam, alpha=None):
        out = self.M.value(lam) if alpha is None else self.M.derivative(lam, alpha)
        out = np.asarray(out, dtype=complex).reshape(self.d, self.d)
        return out

    def check_symmetry(self, lam, tol=1e-12):
        M = self.M_at(lam)
        return float(np.abs(M - M.T).max()) <= tol * max(1.0, float(np.abs(M).max()))

    def blocks(self, lam):
        M = self.M_at(lam)
        n = self.n
        return M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]

    def h_gradient(self, w):
        """``(d_y h, d_z h)`` at the point ``w = (y, z)``."""
        if self.h is None or len(self.h) == 0:
            return np.zeros(self.d, dtype=complex)
        return _gradient(self.h, w)

    def h_hessian(self, w):
        if self.h is None or len(self.h) == 0:
            return np.zeros((self.d, self.d), dtype=complex)
        return _hessian(self.h, w)

    def Delta(self, lam, w):
        """``M_11 y + M_12 z + d_y h(y, z)``."""
        w = np.asarray(w, dtype=complex).reshape(self.d)
        M11, M12, _, _ = self.blocks(lam)
        n = self.n
        return M11 @ w[:n] + M12 @ w[n:] + self.h_gradient(w)[:n]


def _split_point(series, w):
    n, m = series.dims
    w = np.asarray(w, dtype=complex).reshape(n + 2 * m)
    return np.zeros((1, n)), w[None, :n], w[None, n:]


def _gradient(series, w):
    n, m = series.dims
    x, y, z = _split_point(series, w)
    out = [series.diff_y(l).evaluate(x, y, z)[0] for l in range(n)]
    out += [series.diff_z(l).evaluate(x, y, z)[0] for l in range(2 * m)]
    return np.array(out, dtype=complex)


def _hessian(series, w):
    n, m = series.dims
    x, y, z = _split_point(series, w)
    d = n + 2 * m

    def der(s, a):
        return s.diff_y(a) if a < n else s.diff_z(a - n)

    H = np.zeros((d, d), dtype=complex)
    for a in range(d):
        da = der(series, a)
        for b in range(a, d):
            H[a, b] = H[b, a] = der(da, b).evaluate(x, y, z)[0]
    return H


@dataclass
class DivisorOperators:
    """
    Operators of the homological equations at one Fourier mode.

    Attributes
    ----------
    Lk0 : complex
        ``1j * <k, omega>``.
    Lk1, Lk2 : ndarray
        Normal-block divisors of size ``2m`` and ``4m^2``.
    A1, A2 : ndarray
        Block upper-triangular operators as displayed for the nondegeneracy
        conditions, of sizes ``n + 2m`` and ``n^2 + 2mn + 4m^2``.
    A_full : ndarray
        ``A2`` with the ``varpi`` and ``h`` jet terms at ``jet_point``.
    A1_full : ndarray
        ``A1`` with the same jet terms.
    A2_exact : ndarray
        Degree-two operator obtained from the bracket itself; it differs from
        ``A_full`` by the sign of the (1, 2) block, i.e. by the unitary
        similarity ``diag(I, -I, -I)``, so both have identical floors.
    """

    k: tuple
    n: int
    m: int
    Lk0: complex
    Lk1: np.ndarray
    Lk2: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    A_full: np.ndarray
    A1_full: np.ndarray = None
    A2_exact: np.ndarray = None
    varpi: complex = 0j
    MtJ: np.ndarray = None

    @property
    def k_l1(self):
        return int(sum(abs(v) for v in self.k))

    def block_sizes(self):
        n, m = self.n, self.m
        return n * n, 2 * m * n, 4 * m * m


def operators_from_data(k, omega, M, n, m, varpi=0.0, h1=None, h2=None):
    """
    Assemble all operators from the numbers ``omega``, ``M`` at one node.

    Every entry is linear in ``(omega, M)`` when ``varpi`` and the jet terms
    vanish, so feeding derivatives ``(d omega, d M)`` yields the derivatives
    of the operators.
    """
    k = tuple(int(v) for v in np.ravel(k))
    if len(k) != n:
        raise StructureError(f"k has length {len(k)}, expected n={n}")
    omega = np.asarray(omega, dtype=complex).reshape(n)
    d = n + 2 * m
    M = np.asarray(M, dtype=complex)
    if M.shape != (d, d):
        raise StructureError(f"M has shape {M.shape}, expected {(d, d)}")
    J = symplectic_J(m)
    M21 = M[n:, :n]
    M22 = M[n:, n:]
    L0 = 1j * complex(np.dot(k, omega))
    I2m = np.eye(2 * m)
    In = np.eye(n)
    M22J = M22 @ J
    Lk1 = L0 * I2m - M22J
    Lk2 = L0 * np.eye(4 * m * m) - np.kron(M22J, I2m) - np.kron(I2m, M22J)
    MtJ = M21.T @ J

    def A1_of(L0v, MtJv, Lk1v):
        return np.block([[L0v * In, -MtJv], [np.zeros((2 * m, n)), Lk1v]])

    def A2_of(L0v, MtJv, Lk1v, a33, sign12):
        n2, nm, mm = n * n, 2 * m * n, 4 * m * m
        return np.block([
            [L0v * np.eye(n2), sign12 * np.kron(In, MtJv), np.zeros((n2, mm))],
            [np.zeros((nm, n2)), np.kron(In, Lk1v), -np.kron(MtJv, I2m)],
            [np.zeros((mm, n2)), np.zeros((mm, nm)), a33]])

    A1 = A1_of(L0, MtJ, Lk1)
    A2 = A2_of(L0, MtJ, Lk1, Lk2, 1.0)
    h1 = np.zeros((n, 2 * m)) if h1 is None else np.asarray(h1, dtype=complex)
    h2 = np.zeros((2 * m, 2 * m)) if h2 is None else np.asarray(h2, dtype=complex)
    varpi = complex(varpi)
    MtJf = (M21.T + h1) @ J
    h2J = h2 @ J
    Lk1f = Lk1 + varpi * I2m - h2J
    a33 = Lk2 + varpi * np.eye(4 * m * m) - np.kron(h2J, I2m) - np.kron(I2m, h2J)
    A_full = A2_of(L0 + varpi, MtJf, Lk1f, a33, 1.0)
    A1_full = A1_of(L0 + varpi, MtJf, Lk1f)
    A2_exact = A2_of(L0 + varpi, MtJf, Lk1f, a33, -1.0)
    return DivisorOperators(k, n, m, L0, Lk1, Lk2, A1, A2, A_full, A1_full,
                            A2_exact, varpi, MtJf)


def build_operators(freq, k, lam, jet_point=None):
    """
    Build the divisor operators of ``freq`` at mode ``k`` and parameter ``lam``.

    Parameters
    ----------
    freq : FrequencyData
    k : sequence of int
    lam : array_like
        Parameter node.
    jet_point : array_like, optional
        ``(y, z)`` at which ``varpi = 1j <k, Delta>`` and the second
        derivatives of ``h`` are frozen; defaults to the origin, where they
        vanish.
    """
    omega = freq.omega_at(lam)
    M = freq.M_at(lam)
    k_arr = np.asarray(k, dtype=float).reshape(-1)
    if k_arr.size != freq.n:
        raise StructureError(f"k has length {k_arr.size}, expected n={freq.n}")
    if jet_point is None:
        return operators_from_data(k, omega, M, freq.n, freq.m)
    w = np.asarray(jet_point, dtype=complex).reshape(freq.d)
    varpi = 1j * complex(np.dot(k_arr, freq.Delta(lam, w)))
    Hh = freq.h_hessian(w)
    n = freq.n
    return operators_from_data(k, omega, M, freq.n, freq.m, varpi,
                               h1=Hh[:n, n:], h2=Hh[n:, n:])


def hermitian_floor(Aop, floor):
    """
    Smallest eigenvalue of ``Aop^* Aop`` and whether it reaches ``floor**2``.

    Returns
    -------
    holds : bool
    lambda_min : float
    """
    A = np.asarray(Aop, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructureError("Aop must be square")
    if not np.all(np.isfinite(A)):
        raise NumericError("non-finite entries in operator")
    if A.size == 0:
        return True, math.inf
    lam_min = float(np.linalg.eigvalsh(A.conj().T @ A)[0])
    return bool(lam_min >= float(floor) ** 2), lam_min


@dataclass
class WeylReport:
    """Outcome of :func:`weyl_perturbation_check`."""

    lam_base: float
    lam_pert: float
    lam_H: float
    weyl_ok: bool
    half_floor_holds: bool
    certified: bool
    H_inf_norm: float

    def __bool__(self):
        return self.half_floor_holds


def weyl_perturbation_check(A_base, A_pert, s=None, tol=1e-12):
    """
    Transfer the floor of ``A_base^* A_base`` to ``A_pert^* A_pert``.

    With ``X = A_base^* A_base`` and ``H = A_pert^* A_pert - X`` this checks
    Weyl's inequality ``lambda_min(X + H) >= lambda_min(X) + lambda_min(H)``
    and whether the perturbed floor keeps at least half of the base one.

    Parameters
    ----------
    s : float, optional
        A priori bound on ``||H||_inf``.  When ``s <= lambda_min(X) / 2`` the
        half floor follows without looking at ``A_pert``; ``certified`` reports
        this.

    Returns
    -------
    WeylReport
        Truthy when the half floor holds.
    """
    A = np.asarray(A_base, dtype=complex)
    B = np.asarray(A_pert, dtype=complex)
    if A.shape != B.shape:
        raise StructureError("A_base and A_pert differ in shape")
    X = A.conj().T @ A
    Y = B.conj().T @ B
    H = Y - X
    H = 0.5 * (H + H.conj().T)
    lx = float(np.linalg.eigvalsh(X)[0])
    ly = float(np.linalg.eigvalsh(Y)[0])
    lh = float(np.linalg.eigvalsh(H)[0])
    scale = max(1.0, abs(lx), float(np.abs(H).max(initial=0.0)))
    weyl_ok = ly >= lx + lh - tol * scale
    hinf = float(np.abs(H).sum(axis=1).max(initial=0.0))
    bound = hinf if s is None else float(s)
    certified = bound <= 0.5 * lx and (s is None or hinf <= s * (1 + 1e-12))
    return WeylReport(lx, ly, lh, bool(weyl_ok), bool(ly >= 0.5 * lx - tol * scale),
                      bool(certified), hinf)


def multiscale_eig_lower_bound(A_parts, scales, weights=None):
    """
    Certified lower bound for ``lambda_min(A A^*)`` with ``A = sum eps_j A_j``.

    For any real ``c``, Weyl's inequality gives
    ``lambda_min(A A^*) >= c - ||A A^* - c I||_2 >= c - ||A A^* - c I||_F``.
    The bound is the larger of the two choices ``c = max_j eps_j^2`` and
    ``c = tr(A A^*) / n``, clipped at zero.

    Parameters
    ----------
    A_parts : list of ndarray
    scales : ScaleSet
        ``eps_vec`` supplies the weights unless ``weights`` is given.

    Returns
    -------
    float
    """
    parts = [np.asarray(P, dtype=complex) for P in A_parts]
    if not parts:
        return 0.0
    w = np.asarray(scales.eps_vec[:len(parts)] if weights is None else weights, dtype=float)
    if w.size != len(parts) or np.any(w <= 0):
        raise ValueError("need one positive weight per part")
    if all(not np.any(P) for P in parts):
        return 0.0
    A = sum(wi * P for wi, P in zip(w, parts))
    G = A @ A.conj().T
    nd = G.shape[0]
    best = 0.0
    for c in (float(np.max(w ** 2)), float(np.trace(G).real) / nd):
        E = G - c * np.eye(nd)
        best = max(best, c - float(np.linalg.norm(E, "fro")))
    return best


def multiscale_hypothesis(A_parts, scales, weights=None):
    """Whether ``||A A^* - c I||_F < c`` for ``c = max eps_j^2``."""
    parts = [np.asarray(P, dtype=complex) for P in A_parts]
    w = np.asarray(scales.eps_vec[:len(parts)] if weights is None else weights, dtype=float)
    A = sum(wi * P for wi, P in zip(w, parts))
    G = A @ A.conj().T
    c = float(np.max(w ** 2))
    return float(np.linalg.norm(G - c * np.eye(G.shape[0]), "fro")) < c


@dataclass
class InverseCheck:
    """Outcome of :func:`multiscale_inverse_denominator_check`."""

    holds: bool
    scales: list
    sizes: list
    failed_scale: Optional[float] = None
    reason: str = ""

    def __bool__(self):
        return self.holds


def multiscale_inverse_denominator_check(D, eps_seq=None, ratio=10.0):
    """
    Check that ``eps^2 D(eps)^{-1}`` stays bounded as ``eps -> 0``.

    Parameters
    ----------
    D : callable
        ``eps -> square matrix`` with entries linear in the scales.
    eps_seq : sequence of float, optional
        Decreasing geometric sequence; defaults to ``10**-2 .. 10**-6``.
    ratio : float
        Largest allowed growth of ``max |entry|`` between successive scales.

    Returns
    -------
    InverseCheck
        Truthy when every ratio is at most ``ratio``.
    """
    eps_seq = list(eps_seq) if eps_seq is not None else [10.0 ** -p for p in range(2, 7)]
    sizes = []
    for e in eps_seq:
        Dm = np.atleast_2d(np.asarray(D(e), dtype=complex))
        try:
            cond = np.linalg.cond(Dm)
            if not np.isfinite(cond) or cond > 1e15:
                raise np.linalg.LinAlgError("singular")
            inv = np.linalg.inv(Dm)
        except np.linalg.LinAlgError:
            return InverseCheck(False, eps_seq, sizes, e, "singular")
        sizes.append(float(np.abs(e * e * inv).max()))
        if len(sizes) > 1 and sizes[-1] > ratio * max(sizes[-2], 1e-300):
            return InverseCheck(False, eps_seq, sizes, e, "growth")
    return InverseCheck(True, eps_seq, sizes)


def operators_to_json(ops):
    """JSON document with every operator as row-major ``[re, im]`` pairs."""
    def mat(X):
        X = np.atleast_2d(np.asarray(X, dtype=complex))
        return [[[float(v.real), float(v.imag)] for v in row] for row in X]

    doc = {"k": list(ops.k), "n": ops.n, "m": ops.m,
           "Lk0": [float(ops.Lk0.real), float(ops.Lk0.imag)],
           "Lk1": mat(ops.Lk1), "Lk2": mat(ops.Lk2), "A1": mat(ops.A1),
           "A2": mat(ops.A2), "A_full": mat(ops.A_full)}
    return json.dumps(doc)
