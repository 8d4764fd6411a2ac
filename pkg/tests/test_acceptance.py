"""
Acceptance gate.  Each ``test_criterion_NN`` maps to one numbered acceptance
criterion; the terminal summary prints one PASS/FAIL line per criterion.

Run on its own with ``pytest tests/test_acceptance.py`` or
``python tests/test_acceptance.py``.
"""
import json
import math
import time

import numpy as np
import pytest
import sympy as sp

from _util import cos_slow, hand_reduction, random_hermitian, random_real_series, \
    random_symmetric
from mskam.cli import parse_config, run_config
from mskam.errors import PartialAssemblyError
from mskam.homological import normal_part, solve_homological, solve_order2
from mskam.kamstep import perform_step, preprocess_normal_form, preprocess_step_count
from mskam.mslinalg import (FrequencyData, ScaleSet, operators_from_data, vec,
                            weyl_perturbation_check)
from mskam.nonres import (LambdaGrid, check_conditions, estimate_excluded_measure,
                          reduce_conditions)
from mskam.presets import (example_6_1, example_6_1_collision, example_6_2, example_6_3,
                           mj_eigenvalues, model_1_1, preprocess_model)
from mskam.resonance import (ResonantHamiltonian, averaged_potential, complete_unimodular,
                             find_critical_points, reduce_to_normal_form)
from mskam.scheduler import KAMSchedule, min_s0_for_H4, run
from mskam.tfseries import (AnalyticDomain, ParamCoefficient, TFSeries, average,
                            poisson_bracket, truncate, weighted_norm)

SIGMA = 1 / 12


def frequency_shift_term(M, F):
    """``<Delta(y, z), d_x F>``; ``Delta = M_{1.} (y, z)`` is the y-gradient of the quadratic."""
    n, m = F.dims
    d = n + 2 * m
    out = F * 0.0
    for l in range(n):
        lin = []
        for c in range(d):
            e = np.zeros(d, int)
            e[c] = 1
            lin.append(((0,) * n, tuple(e[:n]), tuple(e[n:]), M[l, c]))
        out = out + TFSeries.from_terms((n, m), lin, F.degree_cap, F.fourier_cap) * F.diff_x(l)
    return out


def test_criterion_01_homological_identity():
    rng = np.random.default_rng(101)
    eps, gamma, tau = 1e-2, 0.1, 2
    solved, attempts, worst, worst_jet = 0, 0, 0.0, 0.0
    t0 = time.perf_counter()
    while solved < 20:
        attempts += 1
        assert attempts < 200
        n, m = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        K = int(rng.integers(1, 6))
        d = n + 2 * m
        freq = FrequencyData(n, m, rng.uniform(1.0, 2.0, n), random_symmetric(d, rng, 0.3))
        scales = ScaleSet(eps, (1.0,), (0.3,) * m, ceiling=None)
        R, _ = truncate(random_real_series((n, m), rng, nterms=8, K=K, fourier_cap=12), K)
        try:
            res = solve_homological(freq, np.zeros(1), R, eps, K, scales=scales,
                                    gamma=gamma, tau=tau)
        except PartialAssemblyError:
            continue
        M = freq.M_at([0.0])
        N = normal_part((n, m), freq.omega_at([0.0]), M, None, 0, 4, 12)
        E = poisson_bracket(N, res.F_series) + eps * (R - average(R))
        # the jet solve is exact through degree two; what is left is the
        # degree-three spill-over <Delta(y, z), d_x F_2> of the top jet
        dom = AnalyticDomain(0.5, eps ** 4)
        ref = weighted_norm(eps * R, dom)
        spill = E + frequency_shift_term(M, res.F_series.project_degree(2, 2))
        worst_jet = max(worst_jet, weighted_norm(E.project_degree(0, 2), dom) / ref,
                        weighted_norm(spill, dom) / ref)
        # full identity on a radius where (H4) holds with margin:
        # s^(1/2) K^(tau+1) <= 1e-3 gamma
        s = min(eps ** 4, (1e-3 * gamma / K ** (tau + 1)) ** 2)
        dom = AnalyticDomain(0.5, s)
        worst = max(worst, weighted_norm(E, dom) / weighted_norm(eps * R, dom))
        solved += 1
    assert worst_jet <= 1e-12
    assert worst <= 1e-10
    assert time.perf_counter() - t0 < 5.0


def sym(X):
    return (X + X.T) / 2


@pytest.mark.parametrize("dims", [(1, 1), (2, 1)])
def test_criterion_02_solver_oracle(dims):
    rng = np.random.default_rng(202)
    n, m = dims
    d = n + 2 * m
    for _ in range(10):
        ops = operators_from_data(tuple(rng.integers(1, 3, n)), rng.uniform(1, 2, n),
                                  random_symmetric(d, rng, 0.3), n, m)
        c = lambda *s: rng.normal(size=s) + 1j * rng.normal(size=s)  # noqa: E731
        p20, p11, p02 = sym(c(n, n)), c(n, 2 * m), sym(c(2 * m, 2 * m))
        f20, f11, f02 = solve_order2(ops, p20, p11, p02, 1e-2)
        rhs = 1e-2 * np.concatenate([vec(p20), vec(p11.T), vec(p02)])
        assert ops.A2_exact.shape == (n * n + 2 * m * n + 4 * m * m,) * 2
        ref = np.linalg.solve(ops.A2_exact, rhs)
        got = np.concatenate([vec(f20), vec(f11.T), vec(f02)])
        assert np.linalg.norm(got - ref) <= 1e-11 * np.linalg.norm(ref)


def test_criterion_03_weyl_floor():
    rng = np.random.default_rng(303)
    certified = 0
    for _ in range(200):
        d = int(rng.integers(1, 10))
        X = random_hermitian(d, rng)
        H = random_hermitian(d, rng, 0.5)
        assert np.linalg.eigvalsh(X + H)[0] >= (np.linalg.eigvalsh(X)[0]
                                                + np.linalg.eigvalsh(H)[0] - 1e-12)
        A = rng.normal(size=(d, d)) + 3 * np.eye(d)
        B = A + 10.0 ** rng.uniform(-4, 0) * rng.normal(size=(d, d))
        rep = weyl_perturbation_check(A, B)
        assert rep.weyl_ok
        if rep.H_inf_norm <= 0.5 * rep.lam_base:
            certified += 1
            assert rep.certified and bool(rep)
            assert rep.lam_pert >= 0.5 * rep.lam_base
    assert certified >= 50


def test_criterion_04_contraction_rate():
    t0 = time.perf_counter()
    before, after = [], []
    for mu0 in (1e-4, 1e-5, 1e-6):
        S = KAMSchedule(n=1, mu0=mu0, c0=1 / 64, max_steps=2)
        S = S.replace(s0=min_s0_for_H4(S, 2))
        _, cert = perform_step(model_1_1(S), S, 0)
        assert cert.accepted, cert.diagnosis()
        before.append(math.log(cert.norm_before))
        after.append(math.log(cert.norm_after))
    slope = np.polyfit(before, after, 1)[0]
    assert slope >= 1 + SIGMA - 0.2
    assert time.perf_counter() - t0 < 30.0


def test_criterion_05_preprocessing():
    assert preprocess_step_count(2.0, SIGMA) == 6
    constants = []
    for eps in (1e-2, 3e-3, 1e-3):
        H, C = preprocess_model(eps)
        out = preprocess_normal_form(H, 2.0, SIGMA, ledger_constant=C)
        log = out.meta["preprocess"]
        assert len(log) == 7 and all(r["norm"] <= r["ledger"] for r in log)
        assert weighted_norm(out.P, out.dom) <= C * eps ** 9
        constants.append(C)
    assert max(constants) / min(constants) <= 10.0


def identity_freq(n=2):
    omega = ParamCoefficient(lambda lam: np.asarray(lam, dtype=complex), nparam=n,
                             derivs={tuple(int(i == j) for i in range(n)):
                                     (lambda lam, j=j: np.eye(n)[j].astype(complex))
                                     for j in range(n)})
    return FrequencyData(n, 0, omega, np.zeros((n, n)), nparam=n)


def test_criterion_06_measure_law():
    t0 = time.perf_counter()
    grid = LambdaGrid.quasi_random([(1.0, 2.0), (1.0, 2.0)], 10_000)
    table = estimate_excluded_measure(identity_freq(2), ScaleSet(1.0, (1.0,), ceiling=None),
                                      grid, [0.1, 0.05, 0.025, 0.0125], 3.5, N=0, K=20)
    assert not table.degenerate and 0.8 <= table.slope <= 1.2
    assert time.perf_counter() - t0 < 60.0


def test_criterion_07_example_6_1():
    pre = example_6_1()
    for w in (1.0, 1.5):
        ev = mj_eigenvalues(pre.freq.M_at([w, 1.3])[1:, 1:].real)
        assert np.max(np.abs(ev - np.array([-1j * w ** 2, 1j * w ** 2]))) <= 1e-12
    rep = reduce_conditions(pre.freq, LambdaGrid.quasi_random(pre.box, 5), N=1, K=3)
    assert rep["M1''"] and rep["M2''"]
    bad = example_6_1_collision()
    rep = check_conditions(bad.freq, bad.scales, [[1.0, 1.0]], ("M1''",), N=2, K=2)
    assert not rep["M1''"]


def test_criterion_08_example_6_3():
    pre = example_6_3(eps=1e-2)
    grid = LambdaGrid.lattice(pre.box, [3, 3])
    rep = check_conditions(pre.freq, pre.scales, grid, ("D", "C1", "M1'", "M2'"), N=1, K=3)
    assert rep.all_hold()
    for lam in grid.nodes:
        M = pre.freq.M_at(lam).real
        assert np.linalg.eigvalsh(M.T @ M)[0] >= 1e-2 ** 6


def test_criterion_09_resonance():
    frame = complete_unimodular(np.array([[1], [-1]]))
    assert frame.det() == 1 and frame.pairing_identity()
    y1, y2 = sp.symbols("y1 y2")
    H = ResonantHamiltonian([y1, y2], (y1 ** 2 + y2 ** 2) / 2, cos_slow(), 1e-2)
    V, _ = averaged_potential(H.P, frame)
    cps = find_critical_points(V)
    assert len(cps) == 2 ** frame.m0
    types = []
    for cp in cps:
        R = reduce_to_normal_form(H, frame, [1.0, 1.0], theta0=cp.point)
        theta0 = 0 if abs(cp.point[0]) < 1e-9 else sp.pi
        M, e, om, quartic = hand_reduction(1e-2, theta0)
        nf = R.normal_form
        assert np.max(np.abs(nf.M - M)) <= 1e-10 and abs(nf.e - e) <= 1e-10
        assert abs(nf.omega[0].real - om) <= 1e-10
        assert abs(complex(nf.P.coefficient((0,), (0,), (4, 0))).real - quartic) <= 1e-10
        types.append(R.torus_type)
    assert sorted(types) == ["elliptic", "hyperbolic"]


def test_criterion_10_reality_and_determinism(tmp_path):
    S = KAMSchedule(n=1, mu0=1e-6, c0=1 / 64, max_steps=3)
    S = S.replace(s0=min_s0_for_H4(S, 3))
    res = run(model_1_1(S), S)
    forms = [res.H_star] + example_6_2()["normal_forms"]
    H, C = preprocess_model(1e-2)
    forms.append(preprocess_normal_form(H, 2.0, SIGMA, ledger_constant=C))
    assert max(f.reality_defect() for f in forms) <= 1e-12

    for mode, csv in (("measure", "measure.csv"), ("kam-run", "steps.csv")):
        blobs = []
        for tag in ("a", "b"):
            cfg = parse_config({"mode": mode, "out": str(tmp_path / mode / tag),
                                "grid": {"count": 2000}})
            run_config(cfg)
            blobs.append((tmp_path / mode / tag / csv).read_bytes())
            man = json.loads((tmp_path / mode / tag / "manifest.json").read_text())
            assert man["config"] == json.loads(json.dumps(man["config"]))
        assert blobs[0] == blobs[1] and blobs[0]


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
