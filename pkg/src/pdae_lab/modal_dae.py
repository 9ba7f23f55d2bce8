"""Modal reduction of linear PDAEs and closed-form mode solutions.

Projecting ``E ∂x/∂t = DΔx + Ax + Bu`` on Laplacian eigenfunctions ``φ_j``
gives one descriptor system per mode,

    E Ẋ_j = (A - μ_j D) X_j + B U_j,    Y_j = C_j X_j,

with ``C_j = C ∫φ_j dz``. Each mode is solved exactly through its Weierstrass
form: the slow part by a matrix exponential augmented with the input's
generator (so the convolution needs no quadrature), the fast part by the finite
sum ``-Σ_i J^i B2 U^{(i)}``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .eigenbasis import Basis, BoundarySpec, BoxDomain, GridField, project, reconstruct
from .pencil import IrregularPencil, MatrixPencil, WeierstrassForm, is_regular, weierstrass
from .signals import Signal

log = logging.getLogger(__name__)

EXPM_LIMIT = 1e4


class ModalError(ValueError):
    pass


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("PDAE_LAB_THREADS", "1")))
    except ValueError:
        return 1


def matrix_exponential(M: np.ndarray, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling and squaring with a degree-13 Padé approximant."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    size = np.linalg.norm(M, 1) * abs(t)
    if size > EXPM_LIMIT:
        raise OverflowError(f"‖M t‖₁ = {size:.3g} exceeds {EXPM_LIMIT:g}; rescale time or split the interval")
    return sla.expm(M * t)


@dataclass
class PdaeProblem:
    E: np.ndarray
    D: np.ndarray
    A: np.ndarray
    domain: BoxDomain
    bc: BoundarySpec
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    initial: Callable[..., np.ndarray] | GridField | None = None
    input: Signal | Sequence[Signal] | None = None
    disturbance: Signal | None = None
    ic_components: tuple[int, ...] | None = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.E.shape[0]
        for name in ("E", "D", "A"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected ({n}, {n})")
        self.B = np.zeros((n, 1)) if self.B is None else np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.zeros((1, n)) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        sym = 0.5 * (self.D + self.D.T)
        if np.linalg.eigvalsh(sym).min() < -1e-12:
            raise ValueError("D must be positive semidefinite")
        if not np.any(self.D):
            raise ValueError("D must be nonzero")
        if len(self.bc.axes) != self.domain.d:
            raise ValueError("boundary spec and domain dimensions differ")
        if abs(np.linalg.det(self.E)) > 1e-14 and abs(np.linalg.det(self.D)) > 1e-14:
            self.flags.append("neither E nor D is singular")

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def mode_inputs(self, basis: Basis, N: int) -> list[Signal]:
        """``U_j``: per-mode signals, from a uniform input or supplied directly."""
        if self.input is None:
            return [Signal.zero(self.n_u) for _ in range(N)]
        if isinstance(self.input, Signal):
            ints = basis.mode_integrals()[:N]
            return [self.input.scaled(float(w)) for w in ints]
        sigs = list(self.input)
        if len(sigs) < N:
            sigs += [Signal.zero(self.n_u)] * (N - len(sigs))
        return sigs[:N]


@dataclass(frozen=True)
class ModalSystem:
    j: int
    mu: float
    E: np.ndarray
    A: np.ndarray  # A - μ_j D
    B: np.ndarray
    C_j: np.ndarray
    wf: WeierstrassForm

    @property
    def pencil(self) -> MatrixPencil:
        return MatrixPencil(self.E, self.A)

    @property
    def B1(self) -> np.ndarray:
        return (self.wf.Q @ self.B)[: self.wf.r]

    @property
    def B2(self) -> np.ndarray:
        return (self.wf.Q @ self.B)[self.wf.r :]


@dataclass
class ModalFamily:
    systems: list[ModalSystem]
    basis: Basis
    irregular: list[int] = field(default_factory=list)
    uniform_index: bool = True
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.systems)


@dataclass
class ModalTrajectory:
    j: int
    times: np.ndarray
    X: np.ndarray  # (len(times), n)
    consistency_residual: float


def assemble_modal_family(
    problem: PdaeProblem, basis: Basis, N: int | None = None, skip_irregular: bool = False
) -> ModalFamily:
    """Build the pencil, Weierstrass form and output block for modes ``1..N``.

    An irregular mode pencil raises :class:`IrregularPencil` naming the mode,
    unless ``skip_irregular`` is set, in which case it is listed in
    ``family.irregular`` and left out.
    """
    N = len(basis) if N is None else N
    if N > len(basis):
        raise ValueError(f"N={N} exceeds basis size {len(basis)}")
    ints = basis.mode_integrals()
    systems, irregular = [], []
    for j in range(N):
        mu = basis.modes[j].mu
        Aj = problem.A - mu * problem.D
        ok, c = is_regular(MatrixPencil(problem.E, Aj))
        if not ok:
            if skip_irregular:
                irregular.append(j + 1)
                continue
            raise IrregularPencil(f"mode {j + 1} pencil irregular (mu={mu:.12g})")
        wf = weierstrass(MatrixPencil(problem.E, Aj), c)
        systems.append(ModalSystem(j + 1, mu, problem.E, Aj, problem.B, problem.C * ints[j], wf))
    fam = ModalFamily(systems, basis, irregular)
    nus = {s.wf.nu for s in systems}
    if len(nus) > 1:
        fam.uniform_index = False
        fam.diagnostics.append(f"index differs across modes: {sorted(nus)}")
        log.warning("non-uniform index across modes: %s", sorted(nus))
    return fam


def _fast_part(system: ModalSystem, U: Signal, t: np.ndarray) -> np.ndarray:
    """``-Σ_{i<ν} J^i B2 U^{(i)}(t)`` in canonical fast coordinates, shape (len(t), n-r)."""
    wf = system.wf
    m = wf.n - wf.r
    out = np.zeros(t.shape + (m,))
    if m == 0 or U.is_zero:
        return out
    JB = system.B2
    deriv = U
    for _ in range(max(wf.nu, 1)):
        out -= deriv(t) @ JB.T
        JB = wf.J @ JB
        deriv = deriv.derivative()
    return out


def consistent_initial_condition(system: ModalSystem, raw_X0, U: Signal | None = None) -> tuple[np.ndarray, float]:
    """Replace the fast canonical coordinates of ``raw_X0`` by their forced values.

    Returns ``(X0, residual)`` with residual ``‖X0 - raw_X0‖``.
    """
    raw = np.asarray(raw_X0, dtype=float)
    U = Signal.zero(system.B.shape[1]) if U is None else U
    wf = system.wf
    xi = wf.Z_inv @ raw
    xi[wf.r :] = _fast_part(system, U, np.asarray(0.0))
    X0 = wf.Z @ xi
    return X0, float(np.linalg.norm(X0 - raw))


def _propagate(aug: np.ndarray, state0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """States ``exp(aug t_i) state0``, stepping between samples with cached exponentials."""
    norm = np.linalg.norm(aug, 1)
    max_step = 0.5 * EXPM_LIMIT / norm if norm > 0 else np.inf
    cache: dict[float, np.ndarray] = {}

    def step(h: float) -> np.ndarray:
        if h not in cache:
            m = int(np.ceil(h / max_step)) if h > max_step else 1
            P = matrix_exponential(aug, h / m)
            cache[h] = np.linalg.matrix_power(P, m)
        return cache[h]

    out = np.empty((len(times), len(state0)))
    state, t_prev = state0, 0.0
    for i, t in enumerate(times):
        h = float(t - t_prev)
        if h != 0.0:
            # rounding lets uniform grids reuse one exponential
            state = step(round(h, 13)) @ state
        out[i] = state
        t_prev = t
    return out


def solve_mode(system: ModalSystem, X0, U: Signal | None, times) -> ModalTrajectory:
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("time grid must be ascending")
    wf = system.wf
    U = Signal.zero(system.B.shape[1]) if U is None else U
    X0 = np.asarray(X0, dtype=float)
    xi0 = wf.Z_inv @ X0
    fast0 = _fast_part(system, U, np.asarray(0.0))
    resid = float(np.linalg.norm(xi0[wf.r :] - fast0))
    scale = max(1.0, float(np.linalg.norm(X0)))
    if resid > 1e-8 * scale:
        raise ModalError(f"mode {system.j}: initial condition inconsistent (residual {resid:.3g})")
    r = wf.r
    xi = np.zeros((len(times), wf.n))
    if r:
        F = wf.slow_matrix
        G = np.linalg.solve(wf.E1, system.B1)
        W, H, w0 = U.generator()
        k = W.shape[0]
        # augmented generator: d/dt [x; w] = [[F, G H], [0, W]] [x; w]
        aug = np.zeros((r + k, r + k))
        aug[:r, :r] = F
        aug[:r, r:] = G @ H
        aug[r:, r:] = W
        state = np.concatenate([xi0[:r], w0])
        xi[:, :r] = _propagate(aug, state, times)[:, :r]
    xi[:, r:] = _fast_part(system, U, times)
    X = xi @ wf.Z.T
    return ModalTrajectory(system.j, times, X, resid)


def solve_family(
    problem: PdaeProblem,
    family: ModalFamily,
    times,
    X0_raw: np.ndarray | None = None,
) -> tuple[list[ModalTrajectory], list[float]]:
    """Project the initial field, make each mode consistent and solve it.

    Returns trajectories (mode order) and per-mode consistency residuals.
    """
    N = max((s.j for s in family.systems), default=0)
    if X0_raw is None:
        if problem.initial is None:
            X0_raw = np.zeros((len(family.basis), problem.n))
        else:
            X0_raw = project(problem.initial, family.basis)
            if X0_raw.shape[1] != problem.n:
                raise ValueError(f"initial field has {X0_raw.shape[1]} components, expected {problem.n}")
    inputs = problem.mode_inputs(family.basis, max(N, 1))

    def work(system: ModalSystem):
        U = inputs[system.j - 1]
        X0, res = consistent_initial_condition(system, X0_raw[system.j - 1], U)
        return solve_mode(system, X0, U, times), res

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        results = list(pool.map(work, family.systems))
    return [r[0] for r in results], [r[1] for r in results]


def field_response(
    family: ModalFamily, trajectories: Sequence[ModalTrajectory], grid: Sequence[np.ndarray]
) -> list[GridField]:
    """``x(t, z) = Σ_j X_j(t) φ_j(z)`` on ``grid`` at every trajectory time."""
    if not trajectories:
        return []
    times = trajectories[0].times
    for tr in trajectories:
        if tr.times.shape != times.shape or np.any(tr.times != times):
            raise ValueError("trajectories do not share a time grid")
    mesh = np.meshgrid(*grid, indexing="ij")
    phis = {s.j: family.basis.modes[s.j - 1](*mesh) for s in family.systems}
    n = trajectories[0].X.shape[1]
    out = []
    for k in range(len(times)):
        vals = np.zeros(mesh[0].shape + (n,))
        for tr in sorted(trajectories, key=lambda tr: tr.j):
            vals += phis[tr.j][..., None] * tr.X[k]
        out.append(GridField(tuple(grid), vals))
    return out


def output_response(
    family: ModalFamily, trajectories: Sequence[ModalTrajectory], disturbance: Signal | None, times
) -> np.ndarray:
    """``y(t) = Σ_j C_j X_j(t) + v(t)``; shape ``(len(times), n_y)``."""
    times = np.asarray(times, dtype=float)
    by_j = {s.j: s for s in family.systems}
    n_y = family.systems[0].C_j.shape[0] if family.systems else (disturbance.dim if disturbance else 0)
    y = np.zeros((len(times), n_y))
    for tr in sorted(trajectories, key=lambda tr: tr.j):
        y += tr.X @ by_j[tr.j].C_j.T
    if disturbance is not None:
        y += disturbance(times)
    return y


def initial_coefficients(problem: PdaeProblem, basis: Basis) -> np.ndarray:
    if problem.initial is None:
        return np.zeros((len(basis), problem.n))
    return project(problem.initial, basis)


def reconstruct_initial(problem: PdaeProblem, basis: Basis, grid) -> GridField:
    return reconstruct(initial_coefficients(problem, basis), basis, grid)
