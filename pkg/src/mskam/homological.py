"""
Homological equations and translation equations of one KAM step.

For every Fourier mode ``0 < |k|_1 <= K_+`` the jet of degree <= 2 of the
generator ``F`` solves a block upper-triangular linear system.  The three
degrees are solved in order 0, 1, 2; the lower-degree pieces enter the next
right-hand side through the Poisson bracket with the integrable part, which
makes the degree <= 2 part of ``{N, F} + eps (R - [R])`` vanish exactly.

The constant-shift translation removes the linear part of the averaged
perturbation by a damped Newton iteration.
"""
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import (ConditioningWarning, FloorError, PartialAssemblyError,
                     SmallDivisorError, StructureError, TranslationError)
from .mslinalg import build_operators, hermitian_floor, unvec, vec
from .tfseries import TFSeries, poisson_bracket

__all__ = [
    "GeneratorF", "TranslationShift", "solve_order0", "solve_order1", "solve_order2",
    "assemble_generator", "solve_homological", "normal_part", "solve_translation",
    "solve_isoenergetic_translation", "HomologicalResult",
]

COND_LIMIT = 1e12


@dataclass
class GeneratorF:
    """
    Generating Hamiltonian with jets of degree <= 2 per Fourier mode.

    ``jets[k] = (f00, f10, f01, f20, f11, f02)`` where ``f20`` and ``f02``
    follow the conventions of :meth:`TFSeries.jet`: the degree-two part is
    ``y^T f20 y + y^T f11 z + 1/2 z^T f02 z``.
    """

    dims: tuple
    jets: Dict[tuple, tuple]
    K_plus: int
    ledger: dict = field(default_factory=dict)

    def to_series(self, degree_cap=4, fourier_cap=8):
        return TFSeries.from_jets(self.dims, self.jets, degree_cap, fourier_cap)

    def reality_defect(self):
        worst = 0.0
        for k, jet in self.jets.items():
            mk = tuple(-v for v in k)
            if mk not in self.jets:
                worst = max(worst, max(float(np.abs(np.asarray(b)).max(initial=0.0))
                                       for b in jet))
                continue
            for a, b in zip(jet, self.jets[mk]):
                worst = max(worst, float(np.abs(np.conj(np.asarray(a)) - np.asarray(b))
                                         .max(initial=0.0)))
        return worst

    def max_abs(self):
        return max((float(np.abs(np.asarray(b)).max(initial=0.0))
                    for jet in self.jets.values() for b in jet), default=0.0)


@dataclass
class TranslationShift:
    """Constant shift ``(y0, z0)`` (and multiplier ``t`` on an energy surface)."""

    y0: np.ndarray
    z0: np.ndarray
    t: Optional[float] = None
    residual: float = 0.0
    iterations: int = 0
    bound: Optional[float] = None

    @property
    def w0(self):
        return np.concatenate([self.y0, self.z0])

    @property
    def within_bound(self):
        if self.bound is None:
            return True
        return float(np.abs(self.w0).max(initial=0.0)) <= 2.0 * self.bound


def _warn_condition(A, k, which):
    if A.size == 0:
        return
    c = np.linalg.cond(A)
    if c > COND_LIMIT:
        warnings.warn(f"condition number {c:.2e} at k={tuple(k)} ({which})",
                      ConditioningWarning, stacklevel=3)


def solve_order0(ops, p_k00, eps, floor=None, coupling=0.0):
    """
    Solve ``(L_k0 + varpi) f = eps p + coupling``.

    Parameters
    ----------
    ops : DivisorOperators
    p_k00 : complex
    eps : float
    floor : float, optional
        Nonresonance floor ``min eps_i gamma / |k|^tau``; the divisor must
        reach half of it.
    coupling : complex
        Additional right-hand side from lower-order terms.

    Raises
    ------
    SmallDivisorError
    """
    div = ops.Lk0 + ops.varpi
    if floor is not None and abs(div) < 0.5 * floor:
        raise SmallDivisorError(ops.k, abs(div), 0.5 * floor, "L_k0")
    rhs = eps * complex(p_k00) + complex(coupling)
    if rhs == 0:
        return 0j
    if div == 0:
        raise SmallDivisorError(ops.k, 0.0, 0.0 if floor is None else 0.5 * floor, "L_k0")
    return rhs / div


def _check_matrix_floor(A, floor, k, which):
    if floor is None:
        return
    holds, lam = hermitian_floor(A, math.sqrt(0.5) * floor)
    if not holds:
        raise SmallDivisorError(k, math.sqrt(max(lam, 0.0)), math.sqrt(0.5) * floor, which)


def solve_order1(ops, p_k10, p_k01, eps, floor=None, coupling=None):
    """
    Solve the degree-one system with the block operator ``A1``.

    The first block row is ``(L_k0 + varpi) f10 - (M21^T + h1) J f01`` and the
    second ``(L_k1 + varpi - h2 J) f01``; the right-hand side is
    ``eps (p10, p01) + coupling``.

    Returns
    -------
    f_k10 : ndarray (n,)
    f_k01 : ndarray (2m,)
    """
    n, m = ops.n, ops.m
    A = ops.A1_full
    rhs = eps * np.concatenate([np.ravel(p_k10), np.ravel(p_k01)]).astype(complex)
    if coupling is not None:
        rhs = rhs + np.concatenate([np.ravel(c) for c in coupling]).astype(complex)
    _check_matrix_floor(A, floor, ops.k, "A1")
    if not np.any(rhs):
        return np.zeros(n, dtype=complex), np.zeros(2 * m, dtype=complex)
    _warn_condition(A, ops.k, "A1")
    L = ops.Lk0 + ops.varpi
    f01 = np.linalg.solve(A[n:, n:], rhs[n:]) if m else np.zeros(0, dtype=complex)
    f10 = (rhs[:n] - A[:n, n:] @ f01) / L
    return f10, f01


def solve_order2(ops, p_k20, p_k11, p_k02, eps, floor=None, coupling=None):
    """
    Solve the degree-two system by block back-substitution.

    Unknowns are ``vec f20`` (n x n), ``vec f11^T`` (2m x n) and ``vec f02``
    (2m x 2m), column-major.  The ``f02`` block is solved first from the
    bottom diagonal block, then ``f11``, then ``f20``.

    Returns
    -------
    f_k20 : ndarray (n, n)
        Solution of the matrix system; only its symmetric part enters
        ``y^T f20 y``, and :meth:`TFSeries.from_jets` symmetrises it.
    f_k11 : ndarray (n, 2m)
    f_k02 : ndarray (2m, 2m)
        Symmetric whenever ``p_k02`` and the coupling are.
    """
    n, m = ops.n, ops.m
    n2, nm, mm = ops.block_sizes()
    A = ops.A2_exact
    p20 = np.asarray(p_k20, dtype=complex).reshape(n, n)
    p11 = np.asarray(p_k11, dtype=complex).reshape(n, 2 * m)
    p02 = np.asarray(p_k02, dtype=complex).reshape(2 * m, 2 * m)
    rhs = eps * np.concatenate([vec(p20), vec(p11.T), vec(p02)])
    if coupling is not None:
        c20, c11, c02 = (np.asarray(c, dtype=complex) for c in coupling)
        rhs = rhs + np.concatenate([vec(c20.reshape(n, n)), vec(c11.reshape(n, 2 * m).T),
                                    vec(c02.reshape(2 * m, 2 * m))])
    _check_matrix_floor(A, floor, ops.k, "A2")
    if not np.any(rhs):
        return (np.zeros((n, n), dtype=complex), np.zeros((n, 2 * m), dtype=complex),
                np.zeros((2 * m, 2 * m), dtype=complex))
    _warn_condition(A, ops.k, "A2")
    r1, r2, r3 = rhs[:n2], rhs[n2:n2 + nm], rhs[n2 + nm:]
    a33 = A[n2 + nm:, n2 + nm:]
    a23 = A[n2:n2 + nm, n2 + nm:]
    a12 = A[:n2, n2:n2 + nm]
    xC = np.linalg.solve(a33, r3) if mm else np.zeros(0, dtype=complex)
    Lk1f = A[n2:n2 + 2 * m, n2:n2 + 2 * m]
    R2 = unvec(r2 - a23 @ xC, 2 * m, n)
    G = np.linalg.solve(Lk1f, R2) if m else np.zeros((0, n), dtype=complex)
    xA = (r1 - a12 @ vec(G)) / A[0, 0]
    return unvec(xA, n, n), G.T.copy(), unvec(xC, 2 * m, 2 * m)


def assemble_generator(per_k, K_plus, excluded=(), dims=None, ledger=None):
    """
    Collect per-mode solutions into a :class:`GeneratorF`.

    Parameters
    ----------
    per_k : dict
        ``k -> (f00, f10, f01, f20, f11, f02)``.
    excluded : sequence
        Shell records that failed a floor; any entry aborts assembly.

    Raises
    ------
    PartialAssemblyError
    """
    excluded = list(excluded)
    if excluded:
        raise PartialAssemblyError(excluded)
    jets = {}
    for k in sorted(per_k, key=lambda k: (sum(abs(v) for v in k), k)):
        if not any(k):
            raise StructureError("the generator has no k = 0 terms")
        if sum(abs(v) for v in k) > K_plus:
            raise StructureError(f"mode {k} exceeds K_plus={K_plus}")
        jets[tuple(k)] = per_k[k]
    if dims is None:
        if not jets:
            raise StructureError("dims required for an empty generator")
        first = next(iter(jets.values()))
        dims = (len(first[1]), len(first[2]) // 2)
    return GeneratorF(tuple(dims), jets, int(K_plus), dict(ledger or {}))


def normal_part(dims, omega, M, h=None, e=0.0, degree_cap=4, fourier_cap=8):
    """``e + <omega, y> + 1/2 w^T M w + h`` as a series."""
    n, m = dims
    grad = np.concatenate([np.asarray(omega, dtype=complex).reshape(n), np.zeros(2 * m)])
    N = TFSeries.polynomial(dims, e, grad, M, degree_cap, fourier_cap)
    if h is not None and len(h):
        N = N + h.with_caps(degree_cap, fourier_cap)
    return N


@dataclass
class HomologicalResult:
    """Generator together with the bracket of the normal part with it."""

    F: GeneratorF
    F_series: TFSeries
    excluded: list
    modes: list


def solve_homological(freq, lam, R, eps, K_plus, scales=None, gamma=None, tau=None,
                      check_modes=None, workers=1, raise_on_exclusion=True):
    """
    Solve ``{N, F} + eps (R - [R]) = 0`` up to degree two.

    Parameters
    ----------
    freq : FrequencyData
    lam : array_like
        Parameter node at which ``omega`` and ``M`` are evaluated.
    R : TFSeries
        Truncated perturbation (unbatched).
    eps : float
    K_plus : int
    scales, gamma, tau : optional
        When all are given, every mode in ``check_modes`` (default: the
        nonzero modes of ``R``) is tested against its floors.

    Returns
    -------
    HomologicalResult
    """
    dims = (freq.n, freq.m)
    if R.dims != dims:
        raise StructureError("R does not match the frequency data")
    omega = freq.omega_at(lam)
    M = freq.M_at(lam)
    N = normal_part(dims, omega, M, freq.h, 0.0, R.degree_cap, R.fourier_cap)
    modes = [k for k in R.fourier_modes() if sum(abs(v) for v in k) <= K_plus]
    if check_modes is None:
        check_modes = modes
    use_floor = scales is not None and gamma is not None and tau is not None
    ops = {}

    def build(k):
        return k, build_operators(freq, k, lam)

    todo = sorted(set(check_modes) | set(modes), key=lambda k: (sum(map(abs, k)), k))
    if workers > 1 and len(todo) > 8:
        with ThreadPoolExecutor(workers) as pool:
            ops.update(pool.map(build, todo))
    else:
        ops.update(map(build, todo))

    excluded = []
    if use_floor:
        for k in sorted(check_modes, key=lambda k: (sum(map(abs, k)), k)):
            op = ops[k]
            f0, f1 = scales.floors(gamma, tau, k)
            if abs(op.Lk0) < f0:
                excluded.append({"k": list(k), "divisor": abs(op.Lk0), "floor": f0,
                                 "which": "L_k0"})
                continue
            for name, A in (("A1", op.A1), ("A2", op.A2)):
                holds, lmin = hermitian_floor(A, f1)
                if not holds:
                    excluded.append({"k": list(k), "divisor": math.sqrt(max(lmin, 0.0)),
                                     "floor": f1, "which": name})
                    break
    if excluded and raise_on_exclusion:
        raise PartialAssemblyError(excluded)

    jets = {k: [0j, None, None, None, None, None] for k in modes}
    n, m = dims
    for k in modes:
        p00 = R.jet(k)[0]
        jets[k][0] = solve_order0(ops[k], p00, eps)
    F0 = TFSeries.from_jets(dims, {k: (j[0], np.zeros(n), np.zeros(2 * m), np.zeros((n, n)),
                                       np.zeros((n, 2 * m)), np.zeros((2 * m, 2 * m)))
                                   for k, j in jets.items()}, R.degree_cap, R.fourier_cap)
    B0 = poisson_bracket(N, F0)
    for k in modes:
        _, p10, p01, _, _, _ = R.jet(k)
        _, c10, c01, _, _, _ = B0.jet(k)
        jets[k][1], jets[k][2] = solve_order1(ops[k], p10, p01, eps, coupling=(c10, c01))
    F01 = TFSeries.from_jets(dims, {k: (j[0], j[1], j[2], np.zeros((n, n)),
                                        np.zeros((n, 2 * m)), np.zeros((2 * m, 2 * m)))
                                    for k, j in jets.items()}, R.degree_cap, R.fourier_cap)
    B1 = poisson_bracket(N, F01)
    for k in modes:
        _, _, _, A, B, C = R.jet(k)
        _, _, _, cA, cB, cC = B1.jet(k)
        jets[k][3:] = solve_order2(ops[k], A, B, C, eps, coupling=(cA, cB, cC))
    per_k = {k: tuple(v) for k, v in jets.items()}
    F = assemble_generator(per_k, K_plus, dims=dims)
    Fs = F.to_series(R.degree_cap, R.fourier_cap) if per_k else TFSeries.zeros(
        dims, R.degree_cap, R.fourier_cap)
    return HomologicalResult(F, Fs, excluded, modes)


def _C1_floor(M, floor):
    lam = float(np.linalg.eigvalsh(M.conj().T @ M)[0])
    if lam < floor ** 2:
        raise FloorError(f"(C1) floor fails: lambda_min(M^T M) = {lam:.3e} < {floor ** 2:.3e}")
    return lam


def solve_translation(freq, p_010, p_001, eps, lam=None, floor=None, bound=None,
                      max_iter=50, damping=0.5, tol=1e-12):
    """
    Solve ``M w + d_w h(w) = -eps (p010, p001)`` for the shift ``w = (y0, z0)``.

    Damped Newton from ``w = 0``: a full step is accepted when it lowers the
    residual, otherwise the step is repeatedly multiplied by ``damping``.
    Convergence means ``|g(w)| <= tol (|eps p| + ||M|| |w|)``.

    Parameters
    ----------
    floor : float, optional
        ``min mu_j``; ``lambda_min(M^T M) >= floor**2`` is required.
    bound : float, optional
        The a priori size ``gamma^{3b} s mu``; recorded in the result.

    Raises
    ------
    FloorError, TranslationError
    """
    lam = np.zeros(freq.nparam) if lam is None else lam
    M = freq.M_at(lam)
    n, m = freq.n, freq.m
    b = eps * np.concatenate([np.ravel(p_010), np.ravel(p_001)]).astype(complex)
    if b.size != n + 2 * m:
        raise StructureError("p_010 / p_001 have the wrong sizes")
    if floor is not None:
        _C1_floor(M, floor)
    w = np.zeros(n + 2 * m, dtype=complex)
    if not np.any(b):
        return TranslationShift(w[:n].copy(), w[n:].copy(), None, 0.0, 0, bound)
    normM = float(np.linalg.norm(M, 2))

    def g(w):
        return M @ w + freq.h_gradient(w) + b

    r = g(w)
    for it in range(1, max_iter + 1):
        Jm = M + freq.h_hessian(w)
        step = np.linalg.solve(Jm, -r)
        t = 1.0
        while True:
            wn = w + t * step
            rn = g(wn)
            if np.linalg.norm(rn) < np.linalg.norm(r) or t < 1e-8:
                break
            t *= damping
        w, r = wn, rn
        if np.linalg.norm(r) <= tol * (np.linalg.norm(b) + normM * np.linalg.norm(w)):
            return TranslationShift(w[:n].copy(), w[n:].copy(), None,
                                    float(np.linalg.norm(r)), it, bound)
    raise TranslationError("Newton iteration did not converge", float(np.linalg.norm(r)),
                           max_iter)


def solve_isoenergetic_translation(freq, p_000, p_010, p_001, eps, lam=None, hess_p=None,
                                   floor=None, max_iter=50, damping=0.5, tol=1e-12):
    """
    Shift that keeps the energy level and makes the frequency proportional.

    Solves for ``(w1, t)``::

        1/2 w1^T Mt w1 + <(omega + eps p010, eps p001), w1> + eps p000 + h(w1) = 0
        M w1 + d_w h(w1) + eps (p010, p001) + (t omega, 0) = 0

    with ``Mt = M + eps * hess_p``.

    Parameters
    ----------
    hess_p : ndarray, optional
        Hessian of the averaged quadratic part of the perturbation.
    floor : float, optional
        Floor for the bordered matrix ``[[M, (omega, 0)], [(omega, 0)^T, 0]]``.

    Raises
    ------
    FloorError, TranslationError
    """
    lam = np.zeros(freq.nparam) if lam is None else lam
    M = freq.M_at(lam)
    n, m = freq.n, freq.m
    d = n + 2 * m
    om = np.concatenate([freq.omega_at(lam), np.zeros(2 * m)])
    Mt = M if hess_p is None else M + eps * np.asarray(hess_p, dtype=complex)
    b = eps * np.concatenate([np.ravel(p_010), np.ravel(p_001)]).astype(complex)
    c0 = eps * complex(p_000)
    border = np.block([[M, om[:, None]], [om[None, :], np.zeros((1, 1))]])
    lam_b = float(np.linalg.eigvalsh(border.conj().T @ border)[0])
    if floor is not None and lam_b < floor ** 2:
        raise FloorError(f"bordered floor fails: {lam_b:.3e} < {floor ** 2:.3e}")
    if lam_b <= 1e-300:
        raise FloorError("bordered matrix is singular")
    h = freq.h

    def hval(w):
        if h is None or len(h) == 0:
            return 0j
        return complex(h.evaluate(np.zeros((1, n)), w[None, :n], w[None, n:])[0])

    def G(u):
        w, t = u[:d], u[d]
        f1 = 0.5 * w @ Mt @ w + (om + b) @ w + c0 + hval(w)
        f2 = M @ w + freq.h_gradient(w) + b + t * om
        return np.concatenate([[f1], f2])

    u = np.zeros(d + 1, dtype=complex)
    r = G(u)
    scale = abs(c0) + np.linalg.norm(b)
    if scale == 0:
        return TranslationShift(u[:n].real * 0, u[n:d].real * 0, 0.0, 0.0, 0)
    for it in range(1, max_iter + 1):
        w = u[:d]
        Jac = np.zeros((d + 1, d + 1), dtype=complex)
        Jac[0, :d] = Mt @ w + om + b + freq.h_gradient(w)
        Jac[1:, :d] = M + freq.h_hessian(w)
        Jac[1:, d] = om
        step = np.linalg.solve(Jac, -r)
        t = 1.0
        while True:
            un = u + t * step
            rn = G(un)
            if np.linalg.norm(rn) < np.linalg.norm(r) or t < 1e-8:
                break
            t *= damping
        u, r = un, rn
        if np.linalg.norm(r) <= tol * (scale + np.linalg.norm(Jac) * np.linalg.norm(u)):
            return TranslationShift(u[:n].copy(), u[n:d].copy(), complex(u[d]),
                                    float(np.linalg.norm(r)), it)
    raise TranslationError("Newton iteration did not converge", float(np.linalg.norm(r)),
                           max_iter)
