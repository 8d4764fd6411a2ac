"""
Nonresonant parameter sets, nondegeneracy conditions and excluded measure.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import stats

from .errors import DataError, StructureError
from .mslinalg import operators_from_data
from .tfseries import multi_indices, symplectic_J

__all__ = [
    "LambdaGrid", "ConditionReport", "MeasureTable", "CONDITIONS", "half_lattice",
    "build_nonresonant_set", "check_conditions", "reduce_conditions",
    "estimate_excluded_measure", "numerical_rank", "r2_sequence",
]

CONDITIONS = ("D", "M1", "M2", "C1", "C2", "M1'", "M2'", "M1''", "M2''")
RANK_RTOL = 1e-10


def r2_sequence(count, dim=2, offset=0.5):
    """
    Additive recurrence ``{offset + i * a}`` with the generalised golden ratio.

    Low-discrepancy and, unlike a tensor lattice, not aligned with rational
    resonance lines.
    """
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (dim + 1))
    a = phi ** -np.arange(1, dim + 1)
    i = np.arange(1, count + 1)[:, None]
    return np.mod(offset + i * a[None, :], 1.0)


def half_lattice(n, K, sup_cap=None):
    """Nonzero ``k`` with ``|k|_1 <= K`` and first nonzero entry positive."""
    lim = K if sup_cap is None else min(K, sup_cap)
    out = []
    for k in product(range(-lim, lim + 1), repeat=n):
        if not any(k) or sum(abs(v) for v in k) > K:
            continue
        if next(v for v in k if v) > 0:
            out.append(k)
    out.sort(key=lambda k: (sum(abs(v) for v in k), k))
    return out


class LambdaGrid:
    """
    Finite sample of the parameter set with per-node exclusion records.

    Exclusion is monotone: once excluded, a node stays excluded.

    Parameters
    ----------
    nodes : array_like, shape (P, p)
    weights : array_like, optional
        Cell volumes for measure estimates; uniform by default.
    """

    def __init__(self, nodes, weights=None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if nodes.shape[0] == 0:
            raise ValueError("grid must be nonempty")
        self.nodes = nodes
        self.weights = (np.full(len(nodes), 1.0 / len(nodes)) if weights is None
                        else np.asarray(weights, dtype=float))
        self.records = [None] * len(nodes)

    @classmethod
    def lattice(cls, box, counts):
        """Cell-centred tensor lattice on ``box = [(lo, hi), ...]``."""
        axes = [lo + (np.arange(c) + 0.5) * (hi - lo) / c for (lo, hi), c in zip(box, counts)]
        pts = np.array(list(product(*axes)))
        return cls(pts)

    @classmethod
    def quasi_random(cls, box, count, offset=0.5):
        u = r2_sequence(count, len(box), offset)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        return cls(lo + u * (hi - lo))

    @classmethod
    def monte_carlo(cls, box, count, seed=0):
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        return cls(lo + rng.random((count, len(box))) * (hi - lo))

    def __len__(self):
        return len(self.nodes)

    def copy(self):
        g = LambdaGrid(self.nodes.copy(), self.weights.copy())
        g.records = [None if r is None else dict(r) for r in self.records]
        return g

    def included_mask(self):
        return np.array([r is None for r in self.records])

    def included_indices(self):
        return [i for i, r in enumerate(self.records) if r is None]

    def exclude(self, i, k, which, nu=0, divisor=None, floor=None):
        if self.records[i] is not None:
            return False
        self.records[i] = {"k": [int(v) for v in k], "which": which, "nu": int(nu),
                           "divisor": divisor, "floor": floor}
        return True

    def status(self, i):
        r = self.records[i]
        return "included" if r is None else ("excluded", tuple(r["k"]), r["which"])

    def excluded_fraction(self):
        mask = ~self.included_mask()
        return float(self.weights[mask].sum() / self.weights.sum())

    def refines(self, other):
        """True when every node excluded in ``other`` is excluded here."""
        a = self.included_mask()
        b = other.included_mask()
        return bool(np.all(~b <= ~a))


@dataclass
class ConditionReport:
    """Verdicts with the data that backs each one."""

    verdicts: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.verdicts[key]

    def all_hold(self, keys=None):
        keys = self.verdicts.keys() if keys is None else keys
        return all(self.verdicts[k] for k in keys)

    def merge(self, other):
        self.verdicts.update(other.verdicts)
        self.witnesses.update(other.witnesses)
        self.notes.extend(other.notes)
        return self

    def to_dict(self):
        return {"verdicts": dict(self.verdicts), "witnesses": _jsonable(self.witnesses),
                "notes": list(self.notes)}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [float(np.real(x)), float(np.imag(x))]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def numerical_rank(A, rtol=RANK_RTOL):
    """Rank with threshold ``rtol * sigma_max``; returns ``(rank, singular values)``."""
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return 0, np.zeros(0)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > rtol * sv[0])), sv


# -- floors -----------------------------------------------------------------

def _node_floor_check(freq, scales, lam, modes, gamma, tau):
    omega = freq.omega_at(lam)
    M = freq.M_at(lam)
    n, m = freq.n, freq.m
    for k in modes:
        f0, f1 = scales.floors(gamma, tau, k)
        L = abs(np.dot(k, omega))
        if L < f0:
            return k, "L_k0", L, f0
        if m == 0:
            if L < f1:
                return k, "A1", L, f1
            continue
        ops = operators_from_data(k, omega, M, n, m)
        for name, A in (("A1", ops.A1), ("A2", ops.A2)):
            lmin = float(np.linalg.eigvalsh(A.conj().T @ A)[0])
            if lmin < f1 * f1:
                return k, name, math.sqrt(max(lmin, 0.0)), f1
    return None


def build_nonresonant_set(freq, scales, grid, gamma, tau, K_plus, nu=0, workers=1,
                          sup_cap=None):
    """
    Exclude nodes that fail a floor on some shell ``0 < |k|_1 <= K_plus``.

    Every included node of ``grid`` is tested against the scalar floor on
    ``|L_k0|`` and the matrix floors on ``A1^* A1`` and ``A2^* A2``; the first
    failure ``(k, which)`` is recorded.  Conjugate modes share floors, so half
    of the lattice is visited.  ``grid`` is updated in place and returned.
    """
    modes = half_lattice(freq.n, int(K_plus), sup_cap)
    live = grid.included_indices()
    if gamma <= 0 or not modes or not live:
        return grid
    if freq.m == 0:
        return _build_scalar(freq, scales, grid, gamma, tau, modes, live, nu)

    def one(i):
        return i, _node_floor_check(freq, scales, grid.nodes[i], modes, gamma, tau)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            res = list(pool.map(one, live))
    else:
        res = [one(i) for i in live]
    for i, hit in res:
        if hit is not None:
            k, which, d, f = hit
            grid.exclude(i, k, which, nu, d, f)
    return grid


def _build_scalar(freq, scales, grid, gamma, tau, modes, live, nu):
    # with m = 0 both operators are multiples of the identity, so
    # lambda_min(A^* A) = |L_k0|^2 and the floors collapse to scalar tests
    K = np.array(modes, dtype=float)
    W = np.stack([freq.omega_at(grid.nodes[i]).real for i in live])
    L = np.abs(W @ K.T)
    kl1 = np.abs(K).sum(axis=1)
    f0 = scales.min_eps * gamma / kl1 ** tau
    f1 = scales.min_eps_mu * gamma / kl1 ** tau
    floor = np.maximum(f0, f1)
    bad = L < floor[None, :]
    for row, i in enumerate(live):
        hits = np.nonzero(bad[row])[0]
        if hits.size:
            j = int(hits[0])
            which = "L_k0" if L[row, j] < f0[j] else "A1"
            grid.exclude(i, modes[j], which, nu, float(L[row, j]), float(floor[j]))
    return grid


# -- derivative stacks --------------------------------------------------------

def _alphas(p, lo, hi):
    out = []
    for t in range(lo, hi + 1):
        out.extend(multi_indices(p, t))
    return out


def _deriv(coef_getter, lam, alpha):
    try:
        return coef_getter(lam, alpha)
    except KeyError as exc:
        raise DataError(f"missing parameter derivative {alpha}: {exc}") from None


def _operator_stack(freq, lam, k, alphas, build):
    """``[build(d^alpha omega, d^alpha M) for alpha]`` (operators are linear)."""
    mats = []
    for a in alphas:
        w = _deriv(freq.omega_at, lam, a if sum(a) else None)
        M = _deriv(freq.M_at, lam, a if sum(a) else None)
        mats.append(build(k, w, M))
    return mats


def _combined_rank(mats, rng):
    """Rank of columns ``c_i = sum_alpha r_{i alpha} d^alpha A[:, i]``."""
    S = np.stack(mats)                       # (A, rows, cols)
    R = rng.standard_normal((S.shape[0], S.shape[2]))
    C = np.einsum("arc,ac->rc", S, R)
    r, sv = numerical_rank(C)
    return r, sv


def _builders(freq):
    n, m = freq.n, freq.m

    def A1(k, w, M):
        return operators_from_data(k, w, M, n, m).A1

    def A2(k, w, M):
        return operators_from_data(k, w, M, n, m).A2

    def Lk1(k, w, M):
        return operators_from_data(k, w, M, n, m).Lk1

    def Lk2(k, w, M):
        return operators_from_data(k, w, M, n, m).Lk2

    return {"M1": (A1, 0), "M2": (A2, 0), "M1'": (Lk1, 1), "M2'": (Lk2, 1)}


def _lam_list(grid):
    if isinstance(grid, LambdaGrid):
        return [grid.nodes[i] for i in grid.included_indices()]
    arr = np.asarray(grid, dtype=float)
    if arr.ndim <= 1:
        arr = arr.reshape(1, -1)
    return list(arr)


def check_conditions(freq, scales, grid, which="all", N=1, K=4, seed=0):
    """
    Evaluate nondegeneracy conditions at every included node of ``grid``.

    Parameters
    ----------
    which : str or sequence of str
        Condition ids from :data:`CONDITIONS`, or ``"all"``.
    N : int
        Highest derivative order used in the rank stacks.
    K : int
        Mode cap for the ``k``-dependent conditions.
    seed : int
        Seed for the column combinations of the rank tests.

    Returns
    -------
    ConditionReport
        A verdict holds when it holds at every node and mode; the witness
        records the worst node (smallest rank or eigenvalue).

    Raises
    ------
    DataError
        Derivative data up to order ``N`` is unavailable.
    """
    ids = CONDITIONS if which == "all" else ((which,) if isinstance(which, str) else tuple(which))
    for c in ids:
        if c not in CONDITIONS:
            raise ValueError(f"unknown condition {c!r}")
    lams = _lam_list(grid)
    rep = ConditionReport()
    modes = half_lattice(freq.n, K)
    rng = np.random.default_rng(seed)
    builders = _builders(freq)
    for c in ids:
        if c == "D":
            rep.merge(_check_D(freq, lams, N))
        elif c in ("C1", "C2"):
            rep.merge(_check_C(freq, scales, lams, c))
        elif c in builders:
            rep.merge(_check_rank(freq, lams, modes, N, c, builders[c], rng))
        else:
            rep.merge(_check_eigen(freq, lams, modes, N, c))
    return rep


def _check_D(freq, lams, N):
    alphas = _alphas(freq.nparam, 0, N)
    worst = None
    for lam in lams:
        cols = [_deriv(freq.omega_at, lam, a if sum(a) else None) for a in alphas]
        r, sv = numerical_rank(np.stack(cols, axis=1))
        if worst is None or r < worst[0]:
            worst = (r, lam, sv)
    rep = ConditionReport()
    rep.verdicts["D"] = bool(worst[0] == freq.n)
    rep.witnesses["D"] = {"rank": worst[0], "required": freq.n, "lambda": worst[1],
                          "singular_values": worst[2], "N": N}
    return rep


def _check_C(freq, scales, lams, which):
    n, m = freq.n, freq.m
    worst = None
    for lam in lams:
        M = freq.M_at(lam)
        if which == "C1":
            B = M
            floor = min(scales.mu_vec) if scales.mu_vec else scales.min_eps_mu
        else:
            w = np.zeros(n + 2 * m, dtype=complex)
            w[:n] = freq.omega_at(lam)
            B = np.block([[M, w[:, None]], [w[None, :], np.zeros((1, 1))]])
            floor = scales.min_eps_mu
        lmin = float(np.linalg.eigvalsh(B.conj().T @ B)[0])
        if worst is None or lmin < worst[0]:
            worst = (lmin, lam, floor)
    rep = ConditionReport()
    rep.verdicts[which] = bool(worst[0] >= worst[2] ** 2)
    rep.witnesses[which] = {"lambda_min": worst[0], "floor_sq": worst[2] ** 2,
                            "lambda": worst[1]}
    return rep


def _check_rank(freq, lams, modes, N, which, entry, rng):
    build, lo = entry
    rep = ConditionReport()
    if which in ("M1'", "M2'") and freq.m == 0:
        rep.verdicts[which] = True
        rep.witnesses[which] = {"note": "no normal directions"}
        return rep
    alphas = _alphas(freq.nparam, lo, N)
    worst = None
    for lam in lams:
        for k in modes:
            mats = _operator_stack(freq, lam, k, alphas, build)
            r, sv = _combined_rank(mats, rng)
            full = mats[0].shape[1]
            if worst is None or r - full < worst[0] - worst[1]:
                worst = (r, full, lam, k, sv)
    rep.verdicts[which] = bool(worst is None or worst[0] == worst[1])
    if worst is not None:
        rep.witnesses[which] = {"rank": worst[0], "required": worst[1], "lambda": worst[2],
                                "k": list(worst[3]), "singular_values": worst[4],
                                "orders": [lo, N]}
    return rep


# -- eigenvalue form ---------------------------------------------------------

def _eig_data(M22J):
    vals, S = np.linalg.eig(M22J)
    cond = np.linalg.cond(S)
    return vals, S, cond


def _eig_first_derivs(freq, lam, alpha_list):
    """First derivatives of the eigenvalues of ``M22 J`` (simple eigenvalues)."""
    n, m = freq.n, freq.m
    J = symplectic_J(m)
    M22J = freq.M_at(lam)[n:, n:] @ J
    vals, S, cond = _eig_data(M22J)
    Sinv = np.linalg.inv(S)
    out = []
    for a in alpha_list:
        dM = _deriv(freq.M_at, lam, a)[n:, n:] @ J
        out.append(np.einsum("ij,jk,ki->i", Sinv, dM, S))
    return vals, np.array(out), cond


def _shifted(lam, alpha, h):
    base = np.asarray(lam, dtype=float)
    return base + h * np.asarray(alpha, dtype=float)


def _tilde_derivs(freq, lam, k, N, pairs):
    """
    Derivatives of ``i<k, omega> - sum(selected eigenvalues)`` in each
    coordinate direction up to order ``N``.

    First order uses exact eigenvector perturbation; higher orders use
    central differences of the first-order formula with eigenvalue matching.
    """
    p = freq.nparam
    units = [tuple(int(i == j) for j in range(p)) for i in range(p)]
    vals, d1, cond = _eig_first_derivs(freq, lam, units)
    res = []
    wdir = [_deriv(freq.omega_at, lam, u) for u in units]
    for j, u in enumerate(units):
        base = 1j * np.dot(k, wdir[j])
        res.append(np.array([base - sum(d1[j][i] for i in sel) for sel in pairs]))
    if N >= 2:
        h = 1e-4
        for j, u in enumerate(units):
            lp = _shifted(lam, u, h)
            lm = _shifted(lam, u, -h)
            vp, dp, _ = _eig_first_derivs(freq, lp, units)
            vm, dm, _ = _eig_first_derivs(freq, lm, units)
            ip = [int(np.argmin(np.abs(vp - v))) for v in vals]
            im = [int(np.argmin(np.abs(vm - v))) for v in vals]
            wp = _deriv(freq.omega_at, lp, u)
            wm = _deriv(freq.omega_at, lm, u)
            fp = np.array([1j * np.dot(k, wp) - sum(dp[j][ip[i]] for i in sel) for sel in pairs])
            fm = np.array([1j * np.dot(k, wm) - sum(dm[j][im[i]] for i in sel) for sel in pairs])
            res.append((fp - fm) / (2 * h))
    return vals, np.array(res), cond


def _check_eigen(freq, lams, modes, N, which):
    rep = ConditionReport()
    m = freq.m
    if m == 0:
        rep.verdicts[which] = True
        rep.witnesses[which] = {"note": "no normal directions"}
        return rep
    idx = range(2 * m)
    pairs = [(i,) for i in idx] if which == "M1''" else [(i, j) for i in idx for j in idx]
    worst = None
    diag_ok = True
    for lam in lams:
        scale = max(1.0, float(np.abs(freq.omega_at(lam)).max()),
                    float(np.abs(freq.M_at(lam)).max()))
        for k in modes:
            vals, D, cond = _tilde_derivs(freq, lam, k, N, pairs)
            if cond > 1e8:
                diag_ok = False
            mags = np.abs(D).max(axis=0)            # best derivative per pair
            tol = 1e-8 * scale
            j = int(np.argmin(mags))
            if worst is None or mags[j] < worst[0]:
                worst = (float(mags[j]), lam, k, pairs[j], vals)
            if mags[j] <= tol:
                rep.verdicts[which] = False
    rep.verdicts.setdefault(which, True)
    rep.witnesses[which] = {"min_derivative": worst[0], "lambda": worst[1], "k": list(worst[2]),
                            "eigen_indices": list(worst[3]), "eigenvalues": worst[4],
                            "orders": [1, N]}
    if not diag_ok:
        rep.notes.append(f"{which}: M22 J is numerically non-diagonalizable at some node")
    return rep


# -- reduction ---------------------------------------------------------------

def _greedy_select(mats, tol=RANK_RTOL):
    """
    Choose one derivative order per column so that the chosen columns are
    independent; returns the choice and the assembled matrix (or None).
    """
    S = np.stack(mats)
    ncol = S.shape[2]
    scale = float(np.abs(S).max()) or 1.0
    chosen = []
    Q = np.zeros((S.shape[1], 0), dtype=complex)
    for c in range(ncol):
        best = None
        for a in range(S.shape[0]):
            v = S[a, :, c]
            r = v - Q @ (Q.conj().T @ v)
            nr = np.linalg.norm(r)
            if best is None or nr > best[0]:
                best = (nr, a, r)
        if best[0] <= tol * scale * math.sqrt(S.shape[1]):
            return chosen, None
        chosen.append(best[1])
        Q = np.hstack([Q, (best[2] / best[0])[:, None]])
    C = np.stack([S[a, :, c] for c, a in enumerate(chosen)], axis=1)
    return chosen, C


def reduce_conditions(freq, grid=None, N=1, K=4):
    """
    Derive (M1)/(M2) from (D) and the primed conditions by construction.

    For each node and mode, a derivative order is selected for every column
    of ``L_k1`` and ``L_k2`` (the column exchanges), and for the scalar
    blocks from (D).  The same selections applied to the columns of ``A1``
    and ``A2`` give block upper-triangular matrices whose rank is checked.
    When ``M22 J`` is diagonalizable the scalar (M1'')/(M2'') tests are run
    as well and compared with the primed verdicts.

    Returns
    -------
    ConditionReport
        Keys ``"M1"``, ``"M2"`` (by reduction), ``"M1'"``, ``"M2'"``
        (selection found), and ``"M1''"``, ``"M2''"`` when applicable.
    """
    n, m = freq.n, freq.m
    lams = _lam_list(np.zeros((1, freq.nparam)) if grid is None else grid)
    modes = half_lattice(n, K)
    alphas = _alphas(freq.nparam, 1, N)
    rep = ConditionReport()
    holds = {"M1": True, "M2": True, "M1'": True, "M2'": True}
    witness = {}
    diag = True
    for lam in lams:
        J = symplectic_J(m)
        _, _, cond = _eig_data(freq.M_at(lam)[n:, n:] @ J) if m else (None, None, 1.0)
        diag = diag and cond < 1e8
        for k in modes:
            ops_d = [operators_from_data(k, _deriv(freq.omega_at, lam, a),
                                         _deriv(freq.M_at, lam, a), n, m) for a in alphas]
            # scalar block: the best order from (D)
            L0s = np.array([o.Lk0 for o in ops_d])
            a0 = int(np.argmax(np.abs(L0s)))
            ok0 = abs(L0s[a0]) > RANK_RTOL * max(1.0, float(np.abs(L0s).max()))
            if m:
                sel1, C1 = _greedy_select([o.Lk1 for o in ops_d])
                sel2, C2 = _greedy_select([o.Lk2 for o in ops_d])
            else:
                sel1, C1, sel2, C2 = [], np.zeros((0, 0)), [], np.zeros((0, 0))
            ok1 = C1 is not None
            ok2 = C2 is not None
            holds["M1'"] &= ok1
            holds["M2'"] &= ok2
            r1 = r2 = None
            if ok0 and ok1:
                cols = [ops_d[a0].A1[:, c] for c in range(n)]
                cols += [ops_d[a].A1[:, n + c] for c, a in enumerate(sel1)]
                r1, _ = numerical_rank(np.stack(cols, axis=1))
                holds["M1"] &= r1 == n + 2 * m
            else:
                holds["M1"] = False
            if ok0 and ok1 and ok2:
                n2, nm = n * n, 2 * m * n
                cols = [ops_d[a0].A2[:, c] for c in range(n2)]
                cols += [ops_d[sel1[c % (2 * m)]].A2[:, n2 + c] for c in range(nm)]
                cols += [ops_d[a].A2[:, n2 + nm + c] for c, a in enumerate(sel2)]
                r2, _ = numerical_rank(np.stack(cols, axis=1))
                holds["M2"] &= r2 == n2 + nm + 4 * m * m
            else:
                holds["M2"] = False
            key = (tuple(np.round(lam, 12)), tuple(k))
            if key[1] == modes[0] or r1 is None or r2 is None:
                witness.setdefault("selections", []).append(
                    {"lambda": list(lam), "k": list(k), "scalar_order": list(alphas[a0]),
                     "Lk1_orders": [list(alphas[a]) for a in sel1],
                     "Lk2_orders": [list(alphas[a]) for a in sel2],
                     "rank_A1": r1, "rank_A2": r2})
    rep.verdicts.update({k: bool(v) for k, v in holds.items()})
    rep.witnesses["reduction"] = witness
    if m and diag:
        eig = check_conditions(freq, None, np.asarray(lams), ("M1''", "M2''"), N=N, K=K)
        rep.merge(eig)
        for a, b in (("M1''", "M1'"), ("M2''", "M2'")):
            if rep.verdicts[a] != rep.verdicts[b]:
                rep.notes.append(f"{a} and {b} disagree")
    elif m:
        rep.notes.append("M22 J not diagonalizable: scalar tests skipped, direct rank path used")
    return rep


# -- measure -----------------------------------------------------------------

@dataclass
class MeasureTable:
    """Excluded fraction per ``gamma`` with a log-log slope fit."""

    gammas: list
    fractions: list
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    predicted: float
    degenerate: bool
    note: str = ""

    def rows(self):
        return [[g, f, self.slope, self.ci_low, self.ci_high]
                for g, f in zip(self.gammas, self.fractions)]

    header = ["gamma", "excluded_fraction", "fitted_slope", "ci_low", "ci_high"]


def estimate_excluded_measure(freq, scales, grid, gammas, tau, N=0, K=20, workers=1,
                              level=0.95):
    """
    Excluded fraction of ``grid`` for each ``gamma`` and the fitted exponent.

    The union over shells ``0 < |k|_1 <= K`` stands in for the union over all
    steps.  The slope of ``log(fraction)`` against ``log(gamma)`` is fitted by
    least squares with a ``level`` confidence band from the t distribution;
    the prediction is ``1 / (N + 1)``.  A fit with fewer than two nonzero
    fractions is reported as degenerate instead of raising.
    """
    gammas = [float(g) for g in gammas]
    fr = []
    for g in gammas:
        gg = grid.copy()
        build_nonresonant_set(freq, scales, gg, g, tau, K, workers=workers)
        fr.append(gg.excluded_fraction())
    pos = [(g, f) for g, f in zip(gammas, fr) if f > 0]
    pred = 1.0 / (N + 1)
    if len(pos) < 2 or len({g for g, _ in pos}) < 2:
        return MeasureTable(gammas, fr, math.nan, math.nan, math.nan, math.nan, pred, True,
                            "fewer than two nonzero fractions")
    x = np.log([g for g, _ in pos])
    y = np.log([f for _, f in pos])
    fit = stats.linregress(x, y)
    if len(pos) > 2:
        t = stats.t.ppf(0.5 + level / 2, len(pos) - 2)
        lo, hi = fit.slope - t * fit.stderr, fit.slope + t * fit.stderr
    else:
        lo = hi = fit.slope
    return MeasureTable(gammas, fr, float(fit.slope), float(fit.intercept), float(lo),
                        float(hi), pred, False)
