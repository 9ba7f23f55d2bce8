import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import solve_ivp

from pdae_lab.eigenbasis import BoundarySpec, BoxDomain, GridField, project, tensor_modes, uniform_grid
from pdae_lab.modal_dae import (
    ModalError,
    ModalSystem,
    PdaeProblem,
    assemble_modal_family,
    consistent_initial_condition,
    field_response,
    matrix_exponential,
    output_response,
    solve_family,
    solve_mode,
)
from pdae_lab.pencil import IrregularPencil, MatrixPencil, weierstrass
from pdae_lab.signals import Signal
from pdae_lab.wetland import WetlandParams, equilibrium, jacobian_at, wetland_model

E_DESC = np.array([[1.0, 0.0], [0.0, 0.0]])


def system(E, A, B, mu=0.0):
    E, A, B = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (E, A, B))
    return ModalSystem(1, mu, E, A, B, np.zeros((1, E.shape[0])), weierstrass(MatrixPencil(E, A)))


def svd_oracle(E, A, B, u, X0, times):
    """Index-1 oracle: split by the SVD of E, solve the slow ODE with DOP853, then the algebraic rows."""
    U, s, Vt = np.linalg.svd(E)
    r = int(np.sum(s > 1e-10 * s[0]))
    Ah, Bh = U.T @ A @ Vt.T, U.T @ B
    A11, A12, A21, A22 = Ah[:r, :r], Ah[:r, r:], Ah[r:, :r], Ah[r:, r:]
    B1, B2 = Bh[:r], Bh[r:]
    S = np.diag(s[:r])

    def alg(w1, t):
        return -np.linalg.solve(A22, A21 @ w1 + B2 @ u(t))

    def rhs(t, w1):
        return np.linalg.solve(S, A11 @ w1 + A12 @ alg(w1, t) + B1 @ u(t))

    w0 = (Vt @ X0)[:r]
    sol = solve_ivp(rhs, (times[0], times[-1]), w0, method="DOP853", t_eval=times, rtol=1e-13, atol=1e-13)
    W = np.vstack([np.concatenate([w1, alg(w1, t)]) for w1, t in zip(sol.y.T, times)])
    return W @ Vt


def random_index1(rng, n):
    """Index-1 pair with Hurwitz slow dynamics and a well-conditioned algebraic block."""
    r = int(rng.integers(1, n))
    Q1, _ = np.linalg.qr(rng.normal(size=(n, n)))
    Q2, _ = np.linalg.qr(rng.normal(size=(n, n)))
    S = np.diag(rng.uniform(0.5, 2.0, r))
    F = rng.normal(size=(r, r))
    F -= (np.linalg.eigvals(F).real.max() + rng.uniform(0.2, 1.0)) * np.eye(r)
    A12, A21 = rng.normal(size=(r, n - r)), rng.normal(size=(n - r, r))
    A22 = rng.normal(size=(n - r, n - r)) + 3.0 * np.eye(n - r)
    A_hat = np.block([[S @ F + A12 @ np.linalg.solve(A22, A21), A12], [A21, A22]])
    E = Q1 @ np.diag(np.r_[np.diag(S), np.zeros(n - r)]) @ Q2.T
    return E, Q1 @ A_hat @ Q2.T


@pytest.mark.parametrize("seed", range(20))
def test_index1_against_adaptive_oracle(seed):
    rng = np.random.default_rng(500 + seed)
    n = int(rng.integers(2, 6))
    E, A = random_index1(rng, n)
    B = rng.normal(size=(n, 2))
    sig = Signal.term(rng.normal(size=2), omega=1.3) + Signal.term(rng.normal(size=2), a=-0.4, omega=0.0, kind="const")
    sysm = system(E, A, B)
    assert sysm.wf.nu == 1
    X0, _ = consistent_initial_condition(sysm, rng.normal(size=n), sig)
    times = np.linspace(0, 5, 41)
    got = solve_mode(sysm, X0, sig, times).X
    want = svd_oracle(E, A, B, sig, X0, times)
    assert np.abs(got - want).max() <= 1e-6


def test_index2_symbolic_oracle():
    t = sp.symbols("t", real=True)
    u = t + sp.sin(2 * t)
    # E x' = x + B u with E = [[0,1],[0,0]], B = (1, 1): x2 = -u, x1 = x2' - u
    x2 = -u
    x1 = sp.diff(x2, t) - u
    f = sp.lambdify(t, [x1, x2], "numpy")
    sig = Signal.term([1.0], power=1) + Signal.term([1.0], omega=2.0, kind="sin")
    sysm = system([[0, 1], [0, 0]], np.eye(2), [[1.0], [1.0]])
    assert sysm.wf.nu == 2
    X0, res = consistent_initial_condition(sysm, [5.0, 5.0], sig)
    times = np.linspace(0, 3, 13)
    got = solve_mode(sysm, X0, sig, times).X
    want = np.array(f(times), dtype=float).T
    assert np.abs(got - want).max() <= 1e-10
    assert np.allclose(X0, want[0], atol=1e-12)


def test_consistent_ic_examples():
    sysm = system(E_DESC, -np.eye(2), np.zeros((2, 1)))
    X0, res = consistent_initial_condition(sysm, [1.0, 7.0])
    assert np.allclose(X0, [1.0, 0.0]) and math.isclose(res, 7.0)
    X0, res = consistent_initial_condition(sysm, [1.0, 0.0])
    assert res == 0.0 and np.allclose(X0, [1.0, 0.0])


def test_solve_mode_examples():
    sysm = system([[1.0]], [[-2.0]], [[0.0]])
    tr = solve_mode(sysm, [1.0], None, [0.0, 1.0])
    assert abs(tr.X[1, 0] - 0.1353352832) < 1e-10
    sysm = system(E_DESC, -np.eye(2), [[0.0], [1.0]])
    u = Signal.term([1.0], kind="const")
    X0, _ = consistent_initial_condition(sysm, [2.0, 0.0], u)
    tr = solve_mode(sysm, X0, u, np.linspace(0, 2, 5))
    assert np.allclose(tr.X[:, 0], 2 * np.exp(-np.linspace(0, 2, 5)), atol=1e-12)
    assert np.allclose(tr.X[:, 1], 1.0, atol=1e-12)


def test_solve_mode_rejects_inconsistent_and_unsorted():
    sysm = system(E_DESC, -np.eye(2), np.zeros((2, 1)))
    with pytest.raises(ModalError):
        solve_mode(sysm, [1.0, 7.0], None, [0.0, 1.0])
    with pytest.raises(ValueError):
        solve_mode(sysm, [1.0, 0.0], None, [1.0, 0.0])


def test_dae_residual_and_semigroup(rng):
    E, A = random_index1(rng, 4)
    B = rng.normal(size=(4, 1))
    u = Signal.term([1.0], omega=2.0)
    sysm = system(E, A, B)
    X0, _ = consistent_initial_condition(sysm, rng.normal(size=4), u)
    h = 1e-4
    ts = np.array([0.5, 1.0, 2.0])
    pts = np.sort(np.concatenate([ts - h, ts, ts + h, [0.0]]))
    X = solve_mode(sysm, X0, u, pts).X
    for t in ts:
        i = int(np.argmin(abs(pts - t)))
        dX = (X[i + 1] - X[i - 1]) / (2 * h)
        assert np.abs(E @ dX - A @ X[i] - B @ u(t)).max() <= 1e-6
    # unforced semigroup
    X0, _ = consistent_initial_condition(sysm, rng.normal(size=4))
    T = 0.8
    full = solve_mode(sysm, X0, None, [0.0, 2 * T]).X[-1]
    half = solve_mode(sysm, X0, None, [0.0, T]).X[-1]
    again = solve_mode(sysm, half, None, [0.0, T]).X[-1]
    assert np.abs(full - again).max() <= 1e-8


def test_matrix_exponential(rng):
    assert np.allclose(matrix_exponential(np.zeros((3, 3)), 2.0), np.eye(3))
    assert np.allclose(matrix_exponential(np.diag([1.0, -2.0]), 0.5), np.diag(np.exp([0.5, -1.0])))
    checked = 0
    while checked < 5:
        M = rng.normal(size=(5, 5))
        w, V = np.linalg.eig(M)
        if np.linalg.cond(V) > 1e3:
            continue
        oracle = (V @ np.diag(np.exp(w)) @ np.linalg.inv(V)).real
        assert np.abs(matrix_exponential(M, 1.0) - oracle).max() <= 1e-10 * max(1.0, np.abs(oracle).max())
        checked += 1
    with pytest.raises(OverflowError):
        matrix_exponential(np.eye(2) * 1e3, 100.0)


def heat_problem(initial=None, domain=None, bc=None, C=None):
    domain = domain or BoxDomain((math.pi, 1.0))
    bc = bc or BoundarySpec.uniform("neumann", domain.d)
    return PdaeProblem(np.eye(1), np.eye(1), np.zeros((1, 1)), domain, bc, C=C, initial=initial)


def test_heat_modes_and_single_mode_field():
    prob = heat_problem()
    basis = tensor_modes(prob.domain, prob.bc, 6)
    fam = assemble_modal_family(prob, basis, 3)
    for s, m in zip(fam.systems, basis.modes):
        assert np.allclose(s.A, -m.mu)
    phi2 = basis.modes[1]
    prob.initial = lambda z1, z2: phi2(z1, z2)
    times = np.linspace(0, 1, 5)
    fam = assemble_modal_family(prob, basis, 6)
    trajs, _ = solve_family(prob, fam, times)
    grid = uniform_grid(prob.domain, (17, 9))
    mesh = np.meshgrid(*grid, indexing="ij")
    fields = field_response(fam, trajs, grid)
    for t, f in zip(times, fields):
        assert np.abs(f.values[..., 0] - np.exp(-phi2.mu * t) * phi2(*mesh)).max() <= 1e-8


def test_output_blocks_neumann():
    C = np.ones((1, 3))
    prob = PdaeProblem(np.eye(3), np.eye(3), np.zeros((3, 3)), BoxDomain((math.pi, 1.0)), BoundarySpec.uniform("neumann", 2), C=C)
    basis = tensor_modes(prob.domain, prob.bc, 5)
    fam = assemble_modal_family(prob, basis, 5)
    assert np.allclose(fam.systems[0].C_j, C * math.sqrt(math.pi))
    for s in fam.systems[1:]:
        assert np.abs(s.C_j).max() < 1e-12


def test_output_is_disturbance_when_C_zero():
    prob = heat_problem(initial=lambda z1, z2: 1 + np.cos(z1), C=np.zeros((1, 1)))
    basis = tensor_modes(prob.domain, prob.bc, 4)
    fam = assemble_modal_family(prob, basis, 4)
    times = np.linspace(0, 1, 6)
    trajs, _ = solve_family(prob, fam, times)
    v = Signal.term([0.3], omega=1.0)
    assert np.array_equal(output_response(fam, trajs, v, times), v(times))


def test_output_linearity(rng):
    prob = heat_problem(C=np.ones((1, 1)))
    basis = tensor_modes(prob.domain, prob.bc, 5)
    fam = assemble_modal_family(prob, basis, 5)
    times = np.linspace(0, 1, 4)
    a = rng.normal(size=(5, 1))
    b = rng.normal(size=(5, 1))
    ta, _ = solve_family(prob, fam, times, a)
    tb, _ = solve_family(prob, fam, times, b)
    tab, _ = solve_family(prob, fam, times, 2 * a + 3 * b)
    va, vb = Signal.term([1.0], omega=1.0), Signal.term([1.0], a=-1.0, kind="const")
    ya = output_response(fam, ta, va, times)
    yb = output_response(fam, tb, vb, times)
    yab = output_response(fam, tab, va.scaled(2) + vb.scaled(3), times)
    assert np.abs(yab - (2 * ya + 3 * yb)).max() <= 1e-10


def test_truncation_monotone_on_heat():
    init = lambda z1: z1 * (1 - z1)  # noqa: E731
    dom = BoxDomain((1.0,))
    prob = heat_problem(initial=init, domain=dom, bc=BoundarySpec.uniform("dirichlet", 1))
    grid = uniform_grid(dom, (101,))
    diffs = []
    for N in (2, 4, 8):
        out = []
        for K in (N, 2 * N):
            basis = tensor_modes(dom, prob.bc, K)
            fam = assemble_modal_family(prob, basis, K)
            trajs, _ = solve_family(prob, fam, [0.0])
            out.append(field_response(fam, trajs, grid)[0].values)
        diffs.append(np.abs(out[0] - out[1]).max())
    assert diffs[0] > diffs[1] > diffs[2]


def test_initial_field_reconstruction_matches_projection():
    prob = heat_problem(initial=lambda z1, z2: 0.3 * (1 + np.cos(z1)))
    basis = tensor_modes(prob.domain, prob.bc, 6)
    fam = assemble_modal_family(prob, basis, 6)
    trajs, res = solve_family(prob, fam, [0.0])
    grid = uniform_grid(prob.domain, (9, 5))
    mesh = np.meshgrid(*grid, indexing="ij")
    f0 = field_response(fam, trajs, grid)[0]
    assert np.abs(f0.values[..., 0] - 0.3 * (1 + np.cos(mesh[0]))).max() < 1e-10
    assert max(res) == 0.0


def test_wetland_family_flags_irregular_kernel_mode(wetland_basis):
    p = WetlandParams()
    A = jacobian_at(wetland_model(p), equilibrium(p))
    prob = PdaeProblem(p.E, p.D, A, wetland_basis.domain, wetland_basis.bc)
    with pytest.raises(IrregularPencil, match="mode 2 pencil irregular"):
        assemble_modal_family(prob, wetland_basis, 5)
    fam = assemble_modal_family(prob, wetland_basis, 5, skip_irregular=True)
    assert fam.irregular == [2]
    assert [s.wf.nu for s in fam.systems] == [1, 1, 1, 1]
    assert fam.uniform_index
    assert np.allclose([s.mu for s in fam.systems], [0, 4, 9, math.pi**2])


def test_problem_validation():
    dom, bc = BoxDomain((1.0,)), BoundarySpec.uniform("neumann", 1)
    with pytest.raises(ValueError):
        PdaeProblem(np.eye(2), np.eye(3), np.eye(2), dom, bc)
    with pytest.raises(ValueError):
        PdaeProblem(np.eye(2), -np.eye(2), np.eye(2), dom, bc)
    with pytest.raises(ValueError):
        PdaeProblem(np.eye(2), np.zeros((2, 2)), np.eye(2), dom, bc)
    prob = PdaeProblem(np.eye(1), np.eye(1), np.zeros((1, 1)), dom, bc)
    assert prob.flags == ["neither E nor D is singular"]


def test_nonuniform_index_diagnostic():
    # det(sE - A + mu D) = 1 - 2 mu - mu s: index 2 at mu = 0, one finite eigenvalue otherwise
    E = np.array([[0.0, 1.0], [0.0, 0.0]])
    A = np.eye(2)
    D = np.ones((2, 2))
    prob = PdaeProblem(E, D, A, BoxDomain((1.0,)), BoundarySpec.uniform("neumann", 1))
    basis = tensor_modes(prob.domain, prob.bc, 3)
    fam = assemble_modal_family(prob, basis, 3)
    nus = [s.wf.nu for s in fam.systems]
    assert len(set(nus)) > 1
    assert not fam.uniform_index and fam.diagnostics
