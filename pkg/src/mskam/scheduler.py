"""
Iteration constants, their sequences, and the driver of the KAM loop.

All sequences follow closed forms; ``mu`` and ``s`` are evaluated in log
space so that very small values neither underflow nor lose precision.
"""
import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gammaincc, gammaln, logsumexp

from .errors import ConfigError

__all__ = [
    "KAMSchedule", "SequenceValues", "sequence_at", "check_assumptions",
    "gamma_sum", "log_gamma_sum", "h2_tail_integral", "h8_monotone_factor", "run",
    "calibrate_c0", "min_s0_for_H4", "RunResult",
]


@dataclass(frozen=True)
class KAMSchedule:
    """
    Constants of the KAM iteration.

    Parameters
    ----------
    n : int
        Torus dimension (enters ``(H1)``, ``Gamma`` and the ``tau`` bound).
    r0, s0, gamma0, eta0, mu0 : float
        Initial strip width, radius, nonresonance constant, box margin and
        perturbation size, all in ``(0, 1]``.
    tau : float
        Diophantine exponent; must exceed ``n (N + 1) + 1``.
    b, l0, N : int
        Exponent in ``gamma^{3b}``, number of parameter derivatives, and the
        derivative order of the rank conditions.
    sigma, lambda0, c0 : float
        Contraction exponent, the exponent in ``(64 c0)^{1/(1-lambda0)}`` and
        the step constant.
    kappa : float
        ``K_+ = ([log 1/mu] + 1)^{3 kappa}``.
    max_steps : int
    target_norm : float or None
        Stop when the perturbation norm falls below this value; ``None``
        means ``1e-16`` times the initial norm.
    """

    n: int = 1
    r0: float = 1.0
    s0: float = 1e-8
    gamma0: float = 0.1
    eta0: float = 0.1
    mu0: float = 1e-6
    tau: float = 3.5
    b: int = 1
    l0: int = 1
    N: int = 0
    sigma: float = 1.0 / 12.0
    lambda0: float = 0.5
    c0: float = 1.0
    kappa: float = 1.0
    max_steps: int = 12
    target_norm: Optional[float] = None

    def __post_init__(self):
        for name in ("r0", "s0", "gamma0", "eta0", "mu0"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ConfigError(f"{name}={v} must lie in (0, 1]")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not self.tau > self.n * (self.N + 1) + 1:
            raise ConfigError(f"tau={self.tau} must exceed n(N+1)+1 = "
                              f"{self.n * (self.N + 1) + 1}")
        if not 0 < self.lambda0 < 1:
            raise ConfigError("lambda0 must lie in (0, 1)")
        if not 0 < self.sigma < 1:
            raise ConfigError("sigma must lie in (0, 1)")
        if not self.c0 > 0:
            raise ConfigError("c0 must be positive")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")

    @property
    def chi(self):
        return (self.b + 2) * self.tau + 5 * self.l0 + 10

    def replace(self, **changes):
        data = asdict(self)
        unknown = set(changes) - set(data)
        if unknown:
            raise ConfigError(f"unknown schedule field(s): {sorted(unknown)}")
        data.update(changes)
        return KAMSchedule(**data)

    def to_dict(self):
        out = asdict(self)
        out["chi"] = self.chi
        return out

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class SequenceValues(NamedTuple):
    r: float
    gamma: float
    eta: float
    mu: float
    K: int
    s: float
    alpha: float
    log_mu: float
    log_s: float


def _exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def _geometric(x0, nu):
    # x0 (1 - sum_{i=1}^{nu} 2^{-(i+1)}) = x0 (1/2 + 2^{-(nu+1)})
    return x0 * (0.5 + 2.0 ** (-(nu + 1)))


def _log_mu(sched, nu):
    q = (1.0 + sched.sigma) ** nu
    return ((q - 1.0) / ((1.0 - sched.lambda0) * sched.sigma) * math.log(64.0 * sched.c0)
            + q * math.log(sched.mu0))


def _K_from_log_mu(sched, log_mu):
    base = math.floor(-log_mu) + 1 if -log_mu > 0 else 1
    return max(1, int(math.floor(base ** (3.0 * sched.kappa))))


def sequence_at(sched, nu):
    """
    Values of the iteration sequences at step ``nu``.

    ``r``, ``gamma`` and ``eta`` shrink geometrically towards half their
    initial value; ``mu_nu`` uses its closed form; ``s_nu = alpha_{nu-1}
    s_{nu-1} / 8`` with ``alpha = mu^{1/3}``; ``K_nu`` is built from
    ``mu_{nu-1}`` (from ``mu_0`` when ``nu = 0``).

    Returns
    -------
    SequenceValues
    """
    if nu < 0:
        raise ValueError("nu must be >= 0")
    r = _geometric(sched.r0, nu)
    g = _geometric(sched.gamma0, nu)
    e = _geometric(sched.eta0, nu)
    lmu = _log_mu(sched, nu)
    ls = math.log(sched.s0)
    for i in range(nu):
        ls += _log_mu(sched, i) / 3.0 - math.log(8.0)
    K = _K_from_log_mu(sched, _log_mu(sched, max(nu - 1, 0)))
    return SequenceValues(r, g, e, _exp(lmu), K, _exp(ls), _exp(lmu / 3.0), lmu, ls)


def _log_shell_counts(n, j):
    """``log c_n(j)`` for an integer array ``j >= 1``."""
    j = np.asarray(j, dtype=float)
    terms = []
    for i in range(1, n + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (i * math.log(2.0) + gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
                 + gammaln(j) - gammaln(i) - gammaln(j - i + 1))
        t = np.where(j >= i, t, -np.inf)
        terms.append(t)
    return logsumexp(np.vstack(terms), axis=0)


def log_gamma_sum(n, K, chi, delta, chunk=200000):
    """
    ``log sum_{0 < |k|_1 <= K} |k|_1^chi exp(-|k|_1 delta)`` over ``k`` in ``Z^n``.

    Summed shell by shell with the exact lattice counts; stops early once
    the remaining shells cannot change the result in double precision.
    """
    if K < 1:
        return -math.inf
    total = -math.inf
    peak = chi / delta if delta > 0 else math.inf
    start = 1
    while start <= K:
        stop = min(K, start + chunk - 1)
        j = np.arange(start, stop + 1, dtype=float)
        lt = _log_shell_counts(n, j) + chi * np.log(j) - j * delta
        total = float(np.logaddexp(total, logsumexp(lt)))
        if stop > peak and lt[-1] < total - 60.0:
            break
        start = stop + 1
    return total


def gamma_sum(n, K, chi, delta):
    """``Gamma`` as a float (``inf`` on overflow)."""
    lg = log_gamma_sum(n, K, chi, delta)
    return math.exp(lg) if lg < 709.0 else math.inf


def h2_tail_integral(n, l0, K, delta):
    """``int_K^inf x^{n+l0} exp(-delta x) dx`` by the incomplete gamma identity."""
    a = n + l0 + 1.0
    return float(gammaincc(a, K * delta) * math.exp(gammaln(a) - a * math.log(delta)))


def h8_monotone_factor(sigma, b, x):
    """``2^{sigma x} (1 - 1/(2^{x+1} - 2))^{3b}``, increasing for ``x > 1``."""
    return 2.0 ** (sigma * x) * (1.0 - 1.0 / (2.0 ** (x + 1) - 2.0)) ** (3 * b)


def min_s0_for_H4(sched, steps=None, safety=0.25):
    """
    Largest ``s0`` (times ``safety``) for which ``(H4)`` holds at every step
    up to ``steps``.
    """
    steps = sched.max_steps if steps is None else steps
    best = 1.0
    ls_shift = 0.0
    for nu in range(steps + 1):
        cur = sequence_at(sched, nu)
        nxt = sequence_at(sched, nu + 1)
        # s_nu = s0 * exp(ls_shift); need s_nu <= (gamma / K^{tau+1})^2
        need = 2.0 * (math.log(cur.gamma) - (sched.tau + 1) * math.log(nxt.K))
        best = min(best, math.exp(need - ls_shift))
        ls_shift += cur.log_mu / 3.0 - math.log(8.0)
    return min(1.0, best * safety)


def check_assumptions(sched, nu, state=None):
    """
    Evaluate ``(H1)``-``(H8)`` for the step ``nu -> nu + 1``.

    Parameters
    ----------
    state : dict, optional
        ``M`` (normal matrix at the node) and ``mu_min`` (smallest normal
        scale) for ``(H3)``; ``c`` overrides ``c0`` in ``(H5)``/``(H6)``.

    Returns
    -------
    dict
        ``"H1"`` .. ``"H8"`` -> bool, plus ``"details"`` with the numbers.
        ``(H3)`` is reported true when no matrix is supplied, since it is a
        property of the normal form rather than of the schedule; the
        ``details`` entry records that it was not evaluated.
    """
    state = dict(state or {})
    cur = sequence_at(sched, nu)
    nxt = sequence_at(sched, nu + 1)
    dr = cur.r - nxt.r
    delta = dr / 8.0
    K = nxt.K
    n = sched.n
    lgam = log_gamma_sum(n, K, sched.chi, delta)
    c = float(state.get("c", sched.c0))
    log_cmuG = math.log(c) + cur.log_mu + lgam
    out = {}
    det = {"r": cur.r, "r_plus": nxt.r, "K_plus": K, "log_Gamma": lgam, "mu": cur.mu,
           "alpha": cur.alpha, "s": cur.s, "gamma": cur.gamma, "gamma_plus": nxt.gamma}
    out["H1"] = K >= 8.0 * (n + sched.l0) / dr
    tail = h2_tail_integral(n, sched.l0, K, delta)
    det["H2_tail"] = tail
    out["H2"] = tail <= cur.mu
    if "M" in state and state["M"] is not None:
        M = np.asarray(state["M"], dtype=complex)
        lmin = float(np.linalg.eigvalsh(M.conj().T @ M)[0])
        det["H3_lambda_min"] = lmin
        out["H3"] = lmin >= float(state.get("mu_min", 0.0)) ** 2
    else:
        det["H3_lambda_min"] = None
        out["H3"] = True
    log_h4 = 0.5 * cur.log_s + (sched.tau + 1) * math.log(K)
    det["H4_lhs"] = math.exp(log_h4) if log_h4 < 709 else math.inf
    out["H4"] = log_h4 <= math.log(cur.gamma)
    out["H5"] = log_cmuG < math.log(dr / 8.0)
    out["H6"] = log_cmuG < cur.log_mu / 3.0 - math.log(8.0)
    out["H7"] = cur.log_mu < cur.log_mu / 3.0 - math.log(8.0)
    lhs = (3 * sched.b * math.log(cur.gamma) + sched.sigma * cur.log_mu
           + float(np.logaddexp(lgam, sched.b * math.log(cur.gamma))))
    det["H8_log_lhs"] = lhs
    out["H8"] = lhs <= 3 * sched.b * math.log(nxt.gamma)
    out = {k: bool(v) for k, v in out.items()}
    out["details"] = det
    return out


@dataclass
class RunResult:
    """Outcome of :func:`run`."""

    H_star: object
    history: list
    converged: bool
    failure: Optional[str] = None
    grid: object = None

    def __iter__(self):
        yield self.H_star
        yield self.history


def run(H0, sched, nodes=None, workers=1, step_kwargs=None):
    """
    Iterate KAM steps until the perturbation norm reaches ``target_norm``.

    Parameters
    ----------
    H0 : NormalForm
    sched : KAMSchedule
    nodes : LambdaGrid, optional
        When given, ``H0`` must be a list of normal forms, one per node; nodes
        whose step excludes a shell are dropped for good.

    Returns
    -------
    RunResult
        Iterable as ``(H_star, history)``.
    """
    from .kamstep import perform_step, perform_step_grid
    from .tfseries import weighted_norm

    step_kwargs = dict(step_kwargs or {})
    if nodes is not None:
        return _run_grid(H0, sched, nodes, workers, step_kwargs, perform_step_grid)
    history = []
    H = H0
    norm0 = weighted_norm(H.P, H.dom)
    target = sched.target_norm if sched.target_norm is not None else 1e-16 * norm0
    if norm0 <= target or H.P.is_zero():
        return RunResult(H, history, True)
    for nu in range(sched.max_steps):
        kw = dict(step_kwargs)
        kw.setdefault("lie_budget", target)
        H_next, cert = perform_step(H, sched, nu, workers=workers, **kw)
        history.append(cert)
        if not cert.accepted:
            return RunResult(H, history, False, cert.diagnosis())
        H = H_next
        if cert.norm_after <= target:
            return RunResult(H, history, True)
    return RunResult(H, history, False, "max_steps reached")


def _run_grid(Hs, sched, grid, workers, step_kwargs, perform_step_grid):
    from .tfseries import weighted_norm

    history = []
    Hs = list(Hs)
    norms = [weighted_norm(H.P, H.dom) for H in Hs]
    target = sched.target_norm if sched.target_norm is not None else 1e-16 * max(norms)
    for nu in range(sched.max_steps):
        live = grid.included_indices()
        if len(live) == 0:
            return RunResult(Hs, history, False, "empty surviving set", grid)
        if all(weighted_norm(Hs[i].P, Hs[i].dom) <= target for i in live):
            return RunResult(Hs, history, True, None, grid)
        kw = dict(step_kwargs)
        kw.setdefault("lie_budget", target)
        Hs, certs = perform_step_grid(Hs, sched, nu, grid, workers=workers, **kw)
        history.append(certs)
    live = grid.included_indices()
    if len(live) == 0:
        return RunResult(Hs, history, False, "empty surviving set", grid)
    done = all(weighted_norm(Hs[i].P, Hs[i].dom) <= target for i in live)
    return RunResult(Hs, history, done, None if done else "max_steps reached", grid)


def calibrate_c0(H0, sched, steps=2, floor=1.0 / 64.0, safety=2.0, **step_kwargs):
    """
    Measure the step constant on a warm-up run.

    The ratio ``|P_+| / (gamma_+^{3b} s_+^2 mu^{1+sigma})`` is recorded for
    each warm-up step; the returned ``c0`` is ``max(floor, safety * max ratio)``.
    """
    from .kamstep import perform_step
    from .tfseries import weighted_norm

    H = H0
    worst = 0.0
    for nu in range(steps):
        H_next, cert = perform_step(H, sched, nu, enforce=False, **step_kwargs)
        cur = sequence_at(sched, nu)
        nxt = sequence_at(sched, nu + 1)
        log_den = (3 * sched.b * math.log(nxt.gamma) + 2 * nxt.log_s
                   + (1 + sched.sigma) * cur.log_mu)
        if cert.norm_after > 0:
            worst = max(worst, math.exp(math.log(cert.norm_after) - log_den))
        H = H_next
        if H.P.is_zero():
            break
    return max(floor, safety * worst)
