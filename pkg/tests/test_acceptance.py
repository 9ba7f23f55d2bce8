"""Acceptance criteria 1-11, one PASS/FAIL line each.

Lines are collected in ``RESULTS`` and printed in the terminal summary (see
conftest.py). Run this file directly to print them without pytest.
"""

import json
import math
import os
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from pdae_lab.eigenbasis import BoundarySpec, BoxDomain, poincare_constant, tensor_modes, uniform_grid
from pdae_lab.modal_dae import PdaeProblem, assemble_modal_family, field_response, solve_family
from pdae_lab.pencil import MatrixPencil, generalized_eigenvalues, is_regular, reconstruction_residual, verdict, weierstrass
from pdae_lab.semilinear_sim import SemilinearModel, SimConfig, simulate
from pdae_lab.signals import Signal
from pdae_lab.stability import delta_criterion, fit_log_rate, lmi_certificate, poincare_check_spectral
from pdae_lab.wetland import WetlandParams, classify_stability, equilibrium, reaction

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from test_modal_dae import random_index1, svd_oracle, system  # noqa: E402
from pdae_lab.modal_dae import consistent_initial_condition, solve_mode  # noqa: E402
from test_pencil import E_DESC, E_NIL, det_roots, match, random_regular_pencil  # noqa: E402
from test_stability import scalar_problem  # noqa: E402

RESULTS: dict[int, str] = {}


def report(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1-3


def test_criterion_01_table1():
    F = Fraction
    rows = {}
    worst_entry = 0.0
    for h1 in (0.1, 24.0):
        row = classify_stability(WetlandParams(h1=h1, h2=0.1))
        rows[h1] = row
        want = np.array(
            [
                [F(-18, 145), F(-144, 145), -F(18, 145) * F(h1)],
                [F(306, 725), F(-17, 725), -F(17, 725) * F("0.1")],
                [0, 0, 1],
            ],
            dtype=float,
        )
        worst_entry = max(worst_entry, np.abs(row.A_J - want).max())
    norms_ok = abs(rows[0.1].norm_AJ - 1.0069) <= 1e-3 and abs(rows[24.0].norm_AJ - 3.2841) <= 1e-3
    m_stable, m_unstable = rows[0.1].margin_table, rows[24.0].margin_table
    margins_ok = abs(m_stable - 1.9931) <= 1e-3 and abs(m_unstable - (-0.7159)) <= 1e-3
    flagged = rows[0.1].margin_matches_min_d is False
    report(
        1,
        norms_ok and worst_entry <= 1e-12 and margins_ok and flagged,
        f"|A_J| = {rows[0.1].norm_AJ:.4f}, {rows[24.0].norm_AJ:.4f}; entry err {worst_entry:.1e}; "
        f"3 - |A_J| = {m_stable:.4f}, {m_unstable:.4f} (tabulated 1.9931, -0.7159); "
        f"min-d reading {rows[0.1].margin_min_d:.4f} flagged={flagged}",
    )


def test_criterion_02_equilibrium():
    p = WetlandParams()
    x = equilibrium(p)
    err = np.abs(x - np.array([9 / 145, 17 / 145, 0.0])).max()
    res = np.abs(reaction(p, x.reshape(3, 1))).max()
    report(2, err <= 1e-15 and res <= 1e-14, f"x* = {x.round(7).tolist()}, |x* - rational| {err:.1e}, |f(x*)| {res:.1e}")


def test_criterion_03_poincare_constant():
    basis = tensor_modes(BoxDomain((math.pi, 1.0)), BoundarySpec.uniform("neumann", 2), 16)
    mu1 = poincare_constant(basis)
    report(3, abs(mu1 - 1.0) <= 1e-12, f"mu1 = {mu1!r}")


# ---------------------------------------------------------------- 4-6


def test_criterion_04_modal_oracles():
    import sympy as sp

    worst1 = 0.0
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        n = int(rng.integers(2, 6))
        E, A = random_index1(rng, n)
        B = rng.normal(size=(n, 2))
        sig = Signal.term(rng.normal(size=2), omega=1.3) + Signal.term(rng.normal(size=2), a=-0.4, omega=0.0, kind="const")
        sysm = system(E, A, B)
        X0, _ = consistent_initial_condition(sysm, rng.normal(size=n), sig)
        times = np.linspace(0, 5, 41)
        got = solve_mode(sysm, X0, sig, times).X
        worst1 = max(worst1, np.abs(got - svd_oracle(E, A, B, sig, X0, times)).max())
    t = sp.symbols("t", real=True)
    u = t + sp.sin(2 * t)
    x2 = -u
    x1 = sp.diff(x2, t) - u
    f = sp.lambdify(t, [x1, x2], "numpy")
    sig = Signal.term([1.0], power=1) + Signal.term([1.0], omega=2.0, kind="sin")
    sysm = system(E_NIL, np.eye(2), [[1.0], [1.0]])
    X0, _ = consistent_initial_condition(sysm, [5.0, 5.0], sig)
    times = np.linspace(0, 3, 13)
    worst2 = np.abs(solve_mode(sysm, X0, sig, times).X - np.array(f(times), dtype=float).T).max()
    report(4, worst1 <= 1e-6 and worst2 <= 1e-10, f"index-1 max err {worst1:.1e} (20 systems), index-2 err {worst2:.1e}")


def test_criterion_05_weierstrass():
    fixtures = [
        MatrixPencil(E_DESC, np.array([[-1.0, 0.0], [0.0, 1.0]])),
        MatrixPencil(E_NIL, np.eye(2)),
        MatrixPencil(np.eye(3), np.diag([-1.0, -2.0, 3.0])),
        MatrixPencil(np.diag([2.0, 1.0, 0.0]), np.array([[-1.0, 2.0, 0.0], [0.0, -3.0, 1.0], [1.0, 0.0, 1.0]])),
    ]
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(2, 6))
        fixtures.append(random_regular_pencil(rng, n, int(rng.integers(0, n + 1))))
    worst_rec = 0.0
    worst_det = 0.0
    for pen in fixtures:
        ok, c = is_regular(pen)
        wf = weierstrass(pen, c)
        normE = np.linalg.norm(pen.E, 2)
        rec = reconstruction_residual(pen, wf)
        worst_rec = max(worst_rec, rec / normE if normE else (0.0 if rec == 0 else math.inf))
        worst_det = max(worst_det, match(generalized_eigenvalues(pen, c), det_roots(pen.E, pen.A)))
    report(
        5,
        worst_rec <= 1e-8 and worst_det <= 1e-6,
        f"{len(fixtures)} pencils: max residual/|E| {worst_rec:.1e}, det-oracle spectrum err {worst_det:.1e}",
    )


def test_criterion_06_lmi_equivalence():
    agree, worst_margin = 0, math.inf
    for seed in range(10):
        rng = np.random.default_rng(900 + seed)
        E, A_eff, lam1 = scalar_problem(rng, admissible=seed % 2 == 0)
        v = verdict(MatrixPencil(E, lam1 * np.eye(E.shape[0]) + A_eff))
        cert = lmi_certificate(E, A_eff, lam1)
        agree += cert.feasible == v.admissible
        if cert.feasible:
            worst_margin = min(worst_margin, -cert.neg_margin)
    report(6, agree == 10 and worst_margin >= 1e-6, f"{agree}/10 verdicts agree; smallest feasible margin {worst_margin:.2e}")


# ---------------------------------------------------------------- 7-8


def rotation_fixture():
    E, D, A = np.eye(2), 2 * np.eye(2), 0.1 * np.array([[0.0, 1.0], [-1.0, 0.0]])
    dom = BoxDomain((math.pi, 1.0))

    def ic(z1, z2):
        return np.stack([1 + np.cos(z1) + 0.5 * np.cos(2 * z1) * np.cos(math.pi * z2), 0.5 - np.cos(z1)], -1)

    return E, D, A, dom, ic


def test_criterion_07_energy_decay():
    E, D, A, dom, ic = rotation_fixture()
    cert = delta_criterion(E, D, A, 1.0)
    res = simulate(SemilinearModel.linear(E, D, A), dom, (64, 16), ic, config=SimConfig(dt=0.01, t_end=3.0, snapshot_stride=100))
    t = res.times
    el = res.diagnostics["energy"]
    bound = el[0] * np.exp(-(cert.delta - 0.05) * t)
    energy_ok = bool(np.all(el <= bound * (1 + 1e-12)))
    dev_rate = fit_log_rate(t, res.diagnostics["mean_deviation"])
    el_rate = fit_log_rate(t, el)
    dev_ok = dev_rate is not None and dev_rate <= -(cert.delta - 0.05)
    report(
        7,
        cert.applicable and energy_ok and dev_ok,
        f"delta {cert.delta:.3f}; E_L bound holds={energy_ok} (fitted rate {el_rate:.3f}); "
        f"deviation rate {dev_rate:.3f} vs required <= {-(cert.delta - 0.05):.3f}",
    )


def test_criterion_08_poincare_suite():
    lows = {}
    for kind in ("neumann", "dirichlet"):
        basis = tensor_modes(BoxDomain((math.pi, 1.0)), BoundarySpec.uniform(kind, 2), 12, quad_nodes=32)
        low = math.inf
        for seed in range(100):
            coeffs = np.random.default_rng(seed).normal(size=12)
            low = min(low, *poincare_check_spectral(coeffs, basis))
        lows[kind] = low
    eq = []
    for kind, j in (("neumann", 1), ("dirichlet", 0)):
        basis = tensor_modes(BoxDomain((math.pi, 1.0)), BoundarySpec.uniform(kind, 2), 4)
        e = np.zeros(4)
        e[j] = 1.0
        eq.append(abs(poincare_check_spectral(e, basis)[0]))
    report(
        8,
        min(lows.values()) >= -1e-8 and max(eq) <= 1e-8,
        f"min residual neumann {lows['neumann']:.2e}, dirichlet {lows['dirichlet']:.2e}; equality gap {max(eq):.1e}",
    )


# ---------------------------------------------------------------- 9-11 (CLI runs)


def run_demo(case, out, threads):
    env = dict(os.environ, PDAE_LAB_THREADS=str(threads))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env.pop(var, None)
    cmd = [sys.executable, "-m", "pdae_lab.cli", "wetland-demo", "--case", case, "--seed", "7", "--out", str(out)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True, check=False)


@pytest.fixture(scope="module")
def demo_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("demo")
    runs = {}
    for key, case, threads in (("s1", "stable", 1), ("s1b", "stable", 1), ("sN", "stable", 4), ("u1", "unstable", 1)):
        runs[key] = (base / key, run_demo(case, base / key, threads))
    return runs


@pytest.mark.slow
def test_criterion_09_wetland_runs(demo_runs):
    s_dir, s_proc = demo_runs["s1"]
    u_dir, u_proc = demo_runs["u1"]
    s = json.loads((s_dir / "summary.json").read_text())["simulation"]
    u = json.loads((u_dir / "summary.json").read_text())["simulation"]
    stable_ok = s_proc.returncode == 0 and s["status"] == "converged" and s["distance_to_equilibrium"] <= 1e-3
    unstable_ok = u["distance_to_equilibrium"] > 0.05
    report(
        9,
        stable_ok and unstable_ok,
        f"stable: {s['status']} (exit {s_proc.returncode}), distance {s['distance_to_equilibrium']:.2e}; "
        f"unstable: {u['status']} (exit {u_proc.returncode}), distance {u['distance_to_equilibrium']:.2e} vs ball 0.05",
    )


def test_criterion_10_modal_vs_grid():
    E, D, A, dom, ic = rotation_fixture()
    bc = BoundarySpec.uniform("neumann", 2)
    prob = PdaeProblem(E, D, A, dom, bc, initial=ic)
    fam = assemble_modal_family(prob, tensor_modes(dom, bc, 16))
    times = np.array([0.0, 0.5, 1.0])
    trajs, _ = solve_family(prob, fam, times)
    errs = []
    # default run, then a grid-halving pair at a dt small enough that time error is negligible
    for nodes, dt in (((64, 16), 0.01), ((64, 16), 0.001), ((127, 31), 0.001)):
        modal = field_response(fam, trajs, uniform_grid(dom, nodes))
        res = simulate(SemilinearModel.linear(E, D, A), dom, nodes, ic, config=SimConfig(dt=dt, t_end=1.0, snapshot_stride=int(round(0.5 / dt))))
        errs.append(max(np.abs(a.values - b.values).max() for a, b in zip(modal, res.snapshots)))
    ratio = errs[1] / errs[2]
    report(
        10,
        errs[0] <= 1e-3 and 3.0 <= ratio <= 5.0,
        f"default err {errs[0]:.2e}; at dt=1e-3: h {errs[1]:.2e}, h/2 {errs[2]:.2e}, ratio {ratio:.2f}",
    )


@pytest.mark.slow
def test_criterion_11_determinism(demo_runs):
    ref_dir, ref_proc = demo_runs["s1"]
    files = sorted(p.name for p in ref_dir.iterdir())
    bad = []
    for key in ("s1b", "sN"):
        d, proc = demo_runs[key]
        if proc.returncode != ref_proc.returncode or sorted(p.name for p in d.iterdir()) != files:
            bad.append(f"{key}: file set or exit code")
            continue
        bad += [f"{key}/{f}" for f in files if (d / f).read_bytes() != (ref_dir / f).read_bytes()]
    report(11, not bad and len(files) >= 6, f"{len(files)} files compared across repeat and 1 vs 4 threads; mismatches {bad or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
