"""Method-of-lines simulation of ``E ∂x/∂t = DΔx + f(x)`` on box grids.

Diffusion is implicit and reaction explicit (second-order SBDF, first step
IMEX Euler), with one sparse factorization per differential component.
Boundary conditions use ghost-node reflection. Rows of ``E`` that vanish are
algebraic: when they decouple from the differential components they are
solved once (plus an optional multiple of the continuous kernel of the
algebraic operator); otherwise they are Newton-solved at every step.

Reaction functions are vectorized: ``f`` maps an ``(n, M)`` array of states to
``(n, M)`` and ``f_jacobian`` maps it to ``(n, n, M)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .eigenbasis import AxisBC, Basis, BoundarySpec, BoxDomain, GridField, Mode, uniform_grid
from .stability import gradient_energy, mean_deviation

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    pass


@dataclass
class SemilinearModel:
    E: np.ndarray
    D: np.ndarray
    f: Callable[[np.ndarray], np.ndarray]
    f_jacobian: Callable[[np.ndarray], np.ndarray]
    algebraic_rows: tuple[int, ...] | None = None

    def __post_init__(self):
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        zero_rows = tuple(int(i) for i in np.flatnonzero(np.linalg.norm(self.E, axis=1) <= 1e-12))
        if self.algebraic_rows is None:
            self.algebraic_rows = zero_rows
        elif tuple(sorted(self.algebraic_rows)) != zero_rows:
            raise ValueError(f"algebraic_rows {self.algebraic_rows} disagree with zero rows of E {zero_rows}")

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def differential_rows(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if i not in self.algebraic_rows)

    @classmethod
    def linear(cls, E, D, A) -> "SemilinearModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(E, D, lambda x: A @ x, lambda x: np.broadcast_to(A[:, :, None], A.shape + x.shape[1:]).copy())


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    t_end: float = 100.0
    snapshot_stride: int = 100
    steady_tol: float = 1e-3
    divergence_bound: float = 1e6
    newton_tol: float = 1e-10
    newton_maxiter: int = 25
    diagnostics_stride: int = 1


@dataclass
class SimResult:
    times: np.ndarray
    snapshot_times: np.ndarray
    snapshots: list[GridField]
    diagnostics: dict[str, np.ndarray]
    status: str  # converged | diverged | unsettled
    final_residual: float
    converged_at: float | None
    steps: int
    algebraic_mode: str
    kernel_dimension: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def final(self) -> GridField:
        return self.snapshots[-1]


def laplacian_1d(n: int, h: float, bc: AxisBC) -> tuple[sp.csr_matrix, np.ndarray]:
    """Second-order Laplacian on ``n`` nodes including both faces.

    Returns the matrix and a boolean mask of Dirichlet-pinned nodes (whose
    rows are zero).
    """
    main = -2.0 * np.ones(n)
    upper = np.ones(n - 1)
    lower = np.ones(n - 1)
    pinned = np.zeros(n, dtype=bool)
    (p0, q0), (pL, qL) = bc.low, bc.high
    # ghost x_{-1} = x_1 - 2h(p/q)x_0 at the low face, mirrored at the high face
    if q0 == 0:
        pinned[0] = True
    else:
        upper[0] = 2.0
        main[0] -= 2.0 * h * p0 / q0
    if qL == 0:
        pinned[-1] = True
    else:
        lower[-1] = 2.0
        main[-1] -= 2.0 * h * pL / qL
    L = sp.diags([lower, main, upper], [-1, 0, 1], format="lil")
    for i in np.flatnonzero(pinned):
        L.rows[i] = []
        L.data[i] = []
    return L.tocsr() / h**2, pinned


def grid_laplacian(grid: Sequence[np.ndarray], bc: BoundarySpec) -> tuple[sp.csr_matrix, np.ndarray]:
    """Tensor 5-point (2-D) / 2d+1-point Laplacian on the flattened C-order grid."""
    sizes = [len(g) for g in grid]
    total = sp.csr_matrix((int(np.prod(sizes)), int(np.prod(sizes))))
    pinned = np.zeros(sizes, dtype=bool)
    for axis, (g, ax_bc) in enumerate(zip(grid, bc.axes)):
        h = float(g[1] - g[0])
        L1, pin1 = laplacian_1d(len(g), h, ax_bc)
        term = sp.identity(1, format="csr")
        for k, m in enumerate(sizes):
            term = sp.kron(term, L1 if k == axis else sp.identity(m), format="csr")
        total = total + term
        shape = [1] * len(sizes)
        shape[axis] = len(g)
        pinned |= pin1.reshape(shape)
    flat_pin = pinned.ravel()
    if flat_pin.any():
        keep = sp.diags((~flat_pin).astype(float))
        total = keep @ total
    return total.tocsr(), flat_pin


def algebraic_kernel(basis: Basis, D_aa, K, tol: float = 1e-9) -> tuple[list[Mode], int]:
    """Basis modes ``φ`` solving ``D_aa Δφ v + K φ v = 0`` for some vector ``v``.

    For the scalar equation ``Δx + x = 0`` (``D_aa = K = [[1]]``) these are the
    modes with ``μ = 1``.
    """
    D_aa = np.atleast_2d(np.asarray(D_aa, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    out = []
    for m in basis.modes:
        sv = np.linalg.svd(K - m.mu * D_aa, compute_uv=False)
        if sv.min() <= tol * max(1.0, sv.max()):
            out.append(m)
    return out, len(out)


def _kernel_field(mode: Mode, D_aa, K, mesh) -> np.ndarray:
    """Kernel mode scaled to unit sup-norm with a null vector of ``K - μD_aa``; shape (n_a, M)."""
    _, _, vt = np.linalg.svd(np.atleast_2d(K) - mode.mu * np.atleast_2d(D_aa))
    v = vt[-1]
    v = v / v[np.argmax(np.abs(v))]
    phi = mode(*mesh).ravel()
    phi = phi / np.abs(phi).max()
    if phi[0] < 0:
        phi = -phi
    return v[:, None] * phi[None, :]


def _evaluate_initial(initial, mesh, n) -> np.ndarray:
    if callable(initial):
        vals = np.asarray(initial(*mesh), dtype=float)
    else:
        vals = np.asarray(initial, dtype=float)
    if vals.shape == mesh[0].shape:
        vals = vals[..., None]
    if vals.shape[-1] < n:
        vals = np.concatenate([vals, np.zeros(vals.shape[:-1] + (n - vals.shape[-1],))], axis=-1)
    return vals.reshape(-1, n).T.copy()


class _Stepper:
    def __init__(self, model: SemilinearModel, L: sp.csr_matrix, pinned: np.ndarray, cfg: SimConfig):
        E, D = model.E, model.D
        if np.any(E - np.diag(np.diag(E))) or np.any(D - np.diag(np.diag(D))):
            raise ValueError("the grid simulator needs diagonal E and D")
        self.model, self.L, self.pinned, self.cfg = model, L, pinned, cfg
        self.e = np.diag(E)
        self.d = np.diag(D)
        I = sp.identity(L.shape[0], format="csc")
        self.euler, self.bdf2 = {}, {}
        for i in model.differential_rows:
            if self.e[i] <= 0:
                raise ValueError(f"E[{i},{i}] must be positive on differential rows")
            # factor once per component; pinned rows stay identity-scaled
            self.euler[i] = spl.splu((self.e[i] * I - cfg.dt * self.d[i] * L).tocsc())
            self.bdf2[i] = spl.splu((1.5 * self.e[i] * I - cfg.dt * self.d[i] * L).tocsc())

    def rhs_residual(self, x: np.ndarray) -> np.ndarray:
        """``DΔx + f(x)`` on every component, pinned nodes zeroed."""
        r = self.d[:, None] * (self.L @ x.T).T + self.model.f(x)
        r[:, self.pinned] = 0.0
        return r

    def step(self, x, f_now, x_prev=None, f_prev=None):
        dt = self.cfg.dt
        out = x.copy()
        for i in self.model.differential_rows:
            if x_prev is None:
                rhs = self.e[i] * x[i] + dt * f_now[i]
                solver = self.euler[i]
            else:
                rhs = self.e[i] * (2.0 * x[i] - 0.5 * x_prev[i]) + dt * (2.0 * f_now[i] - f_prev[i])
                solver = self.bdf2[i]
            rhs[self.pinned] = 0.0
            out[i] = solver.solve(rhs)
        return out

    def newton(self, x: np.ndarray) -> np.ndarray:
        """Solve the algebraic rows for their components, differential ones fixed."""
        alg = list(self.model.algebraic_rows)
        M = x.shape[1]
        cfg = self.cfg
        x = x.copy()
        for it in range(cfg.newton_maxiter + 1):
            res = self.rhs_residual(x)[alg]
            if np.abs(res).max(initial=0.0) <= cfg.newton_tol:
                return x
            if it == cfg.newton_maxiter:
                break
            jac = self.model.f_jacobian(x)
            blocks = []
            for a in alg:
                row = []
                for b in alg:
                    blk = sp.diags(jac[a, b])
                    if a == b:
                        blk = blk + self.d[a] * self.L
                    row.append(blk)
                blocks.append(row)
            J = sp.bmat(blocks, format="lil")
            # pinned nodes of each algebraic component are fixed at zero
            for k in range(len(alg)):
                for node in np.flatnonzero(self.pinned):
                    idx = k * M + node
                    J.rows[idx], J.data[idx] = [idx], [1.0]
            delta = spl.spsolve(J.tocsc(), -res.ravel())
            x[alg] += delta.reshape(len(alg), M)
        raise NewtonError(
            f"Newton did not converge in {cfg.newton_maxiter} iterations (residual {np.abs(res).max():.3g})"
        )


def simulate(
    model: SemilinearModel,
    domain: BoxDomain,
    nodes: Sequence[int],
    initial,
    x3_amplitude: float = 0.0,
    config: SimConfig = SimConfig(),
    bc: BoundarySpec | None = None,
    basis: Basis | None = None,
) -> SimResult:
    """Integrate from ``initial`` to ``config.t_end``.

    ``initial`` is a callable of the coordinate meshes returning ``(..., n)``
    values (missing trailing components start at zero) or such an array.
    ``x3_amplitude`` scales the kernel field added to decoupled algebraic
    components when the algebraic operator has a kernel.
    """
    cfg = config
    if not cfg.dt > 0:
        raise ValueError(f"dt must be positive, got {cfg.dt}")
    if not cfg.t_end > 0:
        raise ValueError(f"t_end must be positive, got {cfg.t_end}")
    if any(m < 3 for m in nodes):
        raise ValueError("need at least 3 grid nodes per axis")
    bc = BoundarySpec.uniform("neumann", domain.d) if bc is None else bc
    grid = uniform_grid(domain, nodes)
    mesh = np.meshgrid(*grid, indexing="ij")
    L, pinned = grid_laplacian(grid, bc)
    stepper = _Stepper(model, L, pinned, cfg)
    n = model.n
    x = _evaluate_initial(initial, mesh, n)
    x[:, pinned] = 0.0
    alg = list(model.algebraic_rows)
    diff = list(model.differential_rows)
    notes = []
    algebraic_mode = "none"
    kernel_dim = 0
    held = None
    if alg:
        jac0 = model.f_jacobian(x)
        decoupled = np.abs(np.asarray(jac0)[np.ix_(alg, diff)]).max(initial=0.0) == 0.0 if diff else True
        if decoupled:
            algebraic_mode = "held"
            x[alg] = 0.0
            x = stepper.newton(x)
            if basis is None:
                from .eigenbasis import tensor_modes

                basis = tensor_modes(domain, bc, 64)
            K = np.asarray(model.f_jacobian(np.zeros((n, 1))))[:, :, 0][np.ix_(alg, alg)]
            D_aa = model.D[np.ix_(alg, alg)]
            kmodes, kernel_dim = algebraic_kernel(basis, D_aa, K)
            if kmodes:
                x[alg] += x3_amplitude * _kernel_field(kmodes[0], D_aa, K, mesh)
                notes.append(f"algebraic kernel dimension {kernel_dim}; first mode {kmodes[0].multi_index}")
            elif x3_amplitude:
                notes.append("x3_amplitude ignored: algebraic operator has no kernel")
            held = x[alg].copy()
        else:
            algebraic_mode = "newton"
            x = stepper.newton(x)

    n_steps = int(round(cfg.t_end / cfg.dt))
    E = model.E
    stride = max(1, cfg.diagnostics_stride)

    def frame(state) -> GridField:
        return GridField(grid, state.T.reshape(*mesh[0].shape, n))

    times, energy, deviation, mins, maxs = [], [], [], [], []

    def record(t, state):
        fld = frame(state)
        times.append(t)
        energy.append(gradient_energy(fld, E))
        deviation.append(mean_deviation(fld))
        mins.append(state.min(axis=1))
        maxs.append(state.max(axis=1))

    snap_t, snaps = [0.0], [frame(x)]
    record(0.0, x)
    status = "unsettled"
    converged_at = None
    f_now = model.f(x)
    x_prev = f_prev = None
    step = 0
    for step in range(1, n_steps + 1):
        x_new = stepper.step(x, f_now, x_prev, f_prev)
        if held is not None:
            x_new[alg] = held
        elif alg:
            x_new = stepper.newton(x_new)
        x_prev, f_prev, x = x, f_now, x_new
        t = step * cfg.dt
        if not np.all(np.isfinite(x)) or np.abs(x).max() > cfg.divergence_bound:
            status = "diverged"
            record(t, np.where(np.isfinite(x), x, np.nan))
            snap_t.append(t)
            snaps.append(frame(x))
            break
        f_now = model.f(x)
        if step % stride == 0 or step == n_steps:
            record(t, x)
        if step % cfg.snapshot_stride == 0 or step == n_steps:
            snap_t.append(t)
            snaps.append(frame(x))
            if converged_at is None and diff:
                if np.abs(stepper.rhs_residual(x)[diff]).max() <= cfg.steady_tol:
                    converged_at = t
    final_res = float(np.abs(stepper.rhs_residual(x)[diff]).max()) if diff else 0.0
    if status != "diverged" and final_res <= cfg.steady_tol:
        status = "converged"
    diagnostics = {
        "energy": np.array(energy),
        "mean_deviation": np.array(deviation),
        "min": np.array(mins),
        "max": np.array(maxs),
    }
    return SimResult(
        times=np.array(times),
        snapshot_times=np.array(snap_t),
        snapshots=snaps,
        diagnostics=diagnostics,
        status=status,
        final_residual=final_res,
        converged_at=converged_at,
        steps=step,
        algebraic_mode=algebraic_mode,
        kernel_dimension=kernel_dim,
        notes=notes,
    )


def steady_residual(model: SemilinearModel, field: GridField, bc: BoundarySpec | None = None) -> float:
    """``‖DΔx + f(x)‖_∞`` on the differential rows of a grid field."""
    d = len(field.grid)
    bc = BoundarySpec.uniform("neumann", d) if bc is None else bc
    L, pinned = grid_laplacian(field.grid, bc)
    x = field.values.reshape(-1, field.n).T
    r = np.diag(model.D)[:, None] * (L @ x.T).T + model.f(x)
    r[:, pinned] = 0.0
    rows = list(model.differential_rows)
    return float(np.abs(r[rows]).max())
