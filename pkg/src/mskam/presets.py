"""
Bundled example systems: coupled resonant oscillators, a properly
degenerate resonant system and a three-scale artificial system.

Each builder returns plain data (frequency data, scales, perturbation) so the
pipelines in :mod:`mskam.cli` and the tests share one definition.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .kamstep import NormalForm
from .mslinalg import FrequencyData, ScaleSet
from .resonance import (TrigPotential, complete_unimodular, find_critical_points,
                        torus_type)
from .tfseries import AnalyticDomain, ParamCoefficient, TFSeries, symplectic_J

__all__ = ["Preset", "example_6_1", "example_6_1_collision", "example_6_1_transform",
           "example_6_2", "example_6_3", "example_6_3_normal_form", "model_1_1",
           "PRESETS", "mj_eigenvalues", "preprocess_model"]


@dataclass
class Preset:
    name: str
    freq: FrequencyData
    scales: ScaleSet
    symbols: list
    box: list
    info: dict = field(default_factory=dict)


def mj_eigenvalues(M22):
    """Eigenvalues of ``M22 J``, sorted by imaginary then real part."""
    m = M22.shape[0] // 2
    ev = np.linalg.eigvals(np.asarray(M22, dtype=complex) @ symplectic_J(m))
    return ev[np.lexsort((ev.real, ev.imag))]


def example_6_1(n1=1, n_tangent=1, eps=1e-2, box=None):
    """
    Coupled oscillators after the change to action-angle and ``(u, v)``
    coordinates: ``H = eps <w~, I> + 1/2 <z, M z> + eps^2 U``,
    ``M = diag(w_1^2 .. w_n1^2, w_1^2 .. w_n1^2)``.

    The parameters are ``(w_1 .. w_n1, w~_1 .. w~_nt)``.
    """
    ws = sp.symbols(f"w1:{n1 + 1}")
    wt = sp.symbols(f"v1:{n_tangent + 1}")
    syms = list(ws) + list(wt)
    e = sp.nsimplify(eps)
    omega = [e * v for v in wt]
    d = n_tangent + 2 * n1
    M = sp.zeros(d, d)
    for j, w in enumerate(ws):
        M[n_tangent + j, n_tangent + j] = w ** 2
        M[n_tangent + n1 + j, n_tangent + n1 + j] = w ** 2
    freq = FrequencyData(n_tangent, n1, ParamCoefficient.from_sympy(omega, syms, 2),
                         ParamCoefficient.from_sympy(M, syms, 2), nparam=len(syms))
    box = box or [(1.0, 1.5)] * n1 + [(1.0, 2.0)] * n_tangent
    scales = ScaleSet(eps, (eps,), (1.0,), ceiling=None)
    return Preset("example-6.1", freq, scales, syms, box,
                  {"n1": n1, "n_tangent": n_tangent, "eps": eps})


def example_6_1_collision(omega1=1.0, eps=1e-2, k=1):
    """
    Constant data with ``<k, omega> = omega_1^2`` exactly: the scalar divisor
    ``i<k, omega> - i omega_1^2`` vanishes and no parameter moves it.
    """
    w_t = omega1 ** 2 / k
    d = 3
    M = np.zeros((d, d))
    M[1, 1] = M[2, 2] = omega1 ** 2
    freq = FrequencyData(1, 1, ParamCoefficient.constant(np.array([w_t]), nparam=2),
                         ParamCoefficient.constant(M, nparam=2), nparam=2)
    scales = ScaleSet(eps, (eps,), (1.0,), ceiling=None)
    return Preset("example-6.1-collision", freq, scales, [], [(omega1, omega1), (w_t, w_t)],
                  {"k": k})


def example_6_1_transform(omega):
    """
    Jacobians of the oscillator change ``p -> w a P + w Q``, ``q -> P + a Q``
    (``a = sqrt(1 + 1/w)``) and of ``(P, Q) -> (u, v) = (a P + Q, P + a Q)``.

    Returns the two determinants: the first map is symplectic (det 1), the
    second scales the area form by ``a^2 - 1 = 1/w``.
    """
    a = math.sqrt(1 + 1 / omega)
    J1 = np.array([[omega * a, omega], [1.0, a]])
    J2 = np.array([[a, 1.0], [1.0, a]])
    return float(np.linalg.det(J1)), float(np.linalg.det(J2))


def example_6_3(eps=1e-2, a=0.3, b=0.7, box=None):
    """
    ``H = eps^2 <w, y> + 1/2 <(y, u, v), M (y, u, v)> + eps^4 P`` with
    ``M = [[eps w^2 I2, 0, 0], [0, eps^3 a, w^2], [0, w^2, eps^3 b]]`` and
    ``w^2 = w1^2 + w2^2``; the parameters are ``(w1, w2)``.
    """
    w1, w2 = sp.symbols("w1 w2")
    e = sp.nsimplify(eps)
    A, B = sp.nsimplify(a), sp.nsimplify(b)
    W = w1 ** 2 + w2 ** 2
    omega = [e ** 2 * w1, e ** 2 * w2]
    M = sp.Matrix([[e * W, 0, 0, 0], [0, e * W, 0, 0], [0, 0, e ** 3 * A, W],
                   [0, 0, W, e ** 3 * B]])
    freq = FrequencyData(2, 1, ParamCoefficient.from_sympy(omega, [w1, w2], 2),
                         ParamCoefficient.from_sympy(M, [w1, w2], 2), nparam=2)
    scales = ScaleSet(eps ** 3, (eps ** 2,), (eps, eps ** 3, 1.0), ceiling=None)
    return Preset("example-6.3", freq, scales, [w1, w2], box or [(1.0, 2.0), (1.0, 2.0)],
                  {"eps": eps, "a": a, "b": b})


def example_6_3_normal_form(preset, lam, amplitude=1.0, s=None, r=1.0,
                            degree_cap=4, fourier_cap=4):
    """Three-scale normal form at ``lam`` with ``P = amplitude cos(x1) (1 + u v)``."""
    eps = preset.info["eps"]
    dims = (2, 1)
    P = TFSeries.cos_mode(dims, (1, 0), amplitude, degree_cap, fourier_cap)
    P = P + TFSeries.from_terms(dims, [((1, 0), (0, 0), (1, 1), amplitude / 2),
                                       ((-1, 0), (0, 0), (1, 1), amplitude / 2)],
                                degree_cap, fourier_cap)
    scales = ScaleSet(eps ** 4, preset.scales.eps_vec, preset.scales.mu_vec, ceiling=None)
    lam = np.asarray(lam, dtype=float)
    return NormalForm(0.0, preset.freq.omega_at(lam).real, preset.freq.M_at(lam).real, None, P,
                      scales, AnalyticDomain(r, eps ** 16 if s is None else s), lam)


def example_6_2(eps=1e-2, omega1=(1.0,), potential=None, degree_cap=4, fourier_cap=8):
    """
    Toy properly degenerate system with ``n0 = n1 = 1``:
    ``H = y0^2 / 2 + eps (omega1 y1 + y1^2 / 2) + eps^2 P(x)`` at ``y0 = 0``.

    ``H0`` is resonant at ``y0 = 0`` (its frequency vanishes), the resonance
    lattice is spanned by ``K' = e_1``, the slow angle is ``x0`` and the fast
    one ``x1``.  The reduced form is ``eps <omega*, y> + 1/2 <z, M z> +
    eps^(4/3) P`` with ``M = diag(eps^(4/3) d2 h0, eps^(2/3) K'^T d2 H0 K')``
    in ``z = (u, v)`` (``u`` the slow angle, ``v`` its action), one form per
    critical point of the averaged potential ``h0``.

    Returns
    -------
    dict
        ``frame``, ``normal_forms``, ``critical_points``, ``torus_types``,
        ``potential``.
    """
    potential = potential or {(1, 0): 0.5, (-1, 0): 0.5, (1, 1): 0.1, (-1, -1): 0.1}
    frame = complete_unimodular(np.array([[1], [0]]))
    Kp = frame.K_prime.astype(float)
    om_star = float(omega1[0])
    # K0 = (K*, K'): keep modes with no fast component
    Kinv = frame.K0_inv()
    slow = {}
    for k, c in potential.items():
        kq = Kinv @ np.asarray(k)
        if kq[0] == 0:
            slow[(int(kq[1]),)] = slow.get((int(kq[1]),), 0) + c
    V = TrigPotential(slow)
    cps = find_critical_points(V)
    e23, e43 = eps ** (2.0 / 3.0), eps ** (4.0 / 3.0)
    d2H0 = float((Kp.T @ np.diag([1.0, 0.0]) @ Kp)[0, 0])
    d2H1 = 1.0
    forms = []
    for cp in cps:
        h0 = float(cp.hessian[0, 0])
        M = np.zeros((3, 3))
        M[1, 1] = e43 * h0
        M[2, 2] = e23 * d2H0
        P = TFSeries.from_terms((1, 1), [((0,), (2,), (0, 0), eps ** (1.0 / 3.0) * d2H1 / 2)],
                                degree_cap, fourier_cap)
        cubic = [((0,), (0,), (a[0], 0), c) for a, c in V.taylor(cp.point, degree_cap).items()
                 if sum(a) >= 3]
        if cubic:
            P = P + TFSeries.from_terms((1, 1), cubic, degree_cap, fourier_cap)
        scales = ScaleSet(e43, (eps,), (e43, e23), ceiling=None)
        nf = NormalForm(complex(eps ** 2 * cp.value / e23), [eps * om_star], M, None, P, scales,
                        AnalyticDomain(0.5, eps))
        forms.append(nf)
    return {"frame": frame, "normal_forms": forms, "critical_points": cps,
            "torus_types": [torus_type(nf.M[1:, 1:]) for nf in forms],
            "potential": V}


PRESETS = {"example-6.1": example_6_1, "example-6.2": example_6_2, "example-6.3": example_6_3}


def model_1_1(sched, mu1=0.1 * math.sqrt(2.0), weights=(0.5, 0.3, 0.2), degree_cap=4,
              fourier_cap=8):
    """
    One angle, one normal pair: ``H = y + mu1/2 |(y, z)|^2 + P`` with
    ``P = cos x (a + b y + c z1 z2)`` sized to the step-0 budget
    ``gamma0^{3b} s0^2 mu0`` of ``sched``.
    """
    from .scheduler import sequence_at

    v = sequence_at(sched, 0)
    amp = v.gamma ** (3 * sched.b) * v.s ** 2 * v.mu
    a, b, c = weights
    dims = (1, 1)
    P = TFSeries.from_terms(dims, [((sg,), (0,), (0, 0), a * amp / 2) for sg in (1, -1)]
                            + [((sg,), (1,), (0, 0), b * amp / (2 * v.s)) for sg in (1, -1)]
                            + [((sg,), (0,), (1, 1), c * amp / (2 * v.s ** 2)) for sg in (1, -1)],
                            degree_cap, fourier_cap)
    return NormalForm(0.0, [1.0], mu1 * np.eye(3), None, P,
                      ScaleSet(mu1, (1.0,), (mu1,), ceiling=None), AnalyticDomain(v.r, v.s))


def preprocess_model(eps, a=2.0, weights=(0.5, 0.3, 0.2), degree_cap=4, fourier_cap=8):
    """
    One angle, one normal pair with ``mu = eps^(1/a)``:
    ``H = y + mu/2 |(y, z)|^2 + mu P~``, ``P~ = cos x (c0 + c1 y + c2 z1 z2)``
    on ``D(1, eps^4)``.

    Returns
    -------
    H : NormalForm
    C : float
        Majorant norm of ``P~`` on the initial domain, the ledger constant.
    """
    from .tfseries import weighted_norm

    mu = eps ** (1.0 / a)
    c0, c1, c2 = weights
    dims = (1, 1)
    Pt = TFSeries.from_terms(dims, [((sg,), (0,), (0, 0), c0) for sg in (1, -1)]
                             + [((sg,), (1,), (0, 0), c1) for sg in (1, -1)]
                             + [((sg,), (0,), (1, 1), c2) for sg in (1, -1)],
                             degree_cap, fourier_cap)
    dom = AnalyticDomain(1.0, eps ** 4)
    H = NormalForm(0.0, [1.0], mu * np.eye(3), None, Pt * mu,
                   ScaleSet(eps, (1.0,), (mu,), ceiling=None), dom)
    return H, weighted_norm(Pt, dom)
