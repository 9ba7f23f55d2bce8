"""Stability instruments for linear PDAEs.

* spectrum structure of the operator ``DΔ + A`` (eigenvalues of ``A - μ_j D``),
* sign relation ``s = λ/e`` for scalar pencils ``(E, λI)``,
* a constructive LMI certificate ``EᵀP = PᵀE ⪰ 0``, ``λ₁(Pᵀ+P) + PᵀA + AᵀP ≺ 0``,
* the energy decay rate ``δ = 2(d₁μ₁ - ‖A‖)/‖E‖`` and the diagnostics used to
  check it on trajectories (gradient energy, deviation from the spatial mean,
  Poincaré residuals).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .eigenbasis import Basis, GridField, grad_field
from .pencil import IrregularPencil, MatrixPencil, is_regular, weierstrass

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class SpectrumReport:
    lambdas: tuple[complex, ...]
    g: int
    epsilon: float | None
    epsilon_below_one: bool | None
    all_real: bool
    tail_negative_from: int | None
    per_mode: tuple[tuple[complex, ...], ...]


def _sorted_desc(vals) -> list[complex]:
    return sorted((complex(v) for v in vals), key=lambda s: (-s.real, -s.imag))


def spectrum_report(E, D, A, basis: Basis, N: int | None = None) -> SpectrumReport:
    """Eigenvalues of ``A - μ_j D`` over the first ``N`` modes, sorted by real part.

    ``E`` is accepted for signature symmetry with the other instruments; the
    operator spectrum does not depend on it.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N = len(basis) if N is None else N
    if N > len(basis):
        raise ValueError(f"N={N} exceeds basis size {len(basis)}")
    per_mode = [tuple(_sorted_desc(np.linalg.eigvals(A - m.mu * D))) for m in basis.modes[:N]]
    lambdas = _sorted_desc(v for vals in per_mode for v in vals)
    g = sum(1 for v in lambdas if v.real >= -ZERO_TOL)
    eps = below = None
    if g < len(lambdas) and lambdas[g].real < 0:
        eps = abs(lambdas[0]) / abs(lambdas[g])
        below = eps < 1
    all_real = all(abs(v.imag) <= 1e-12 * max(1.0, abs(v)) for v in lambdas)
    tail = None
    for j in range(N, 0, -1):
        if all(v.real < -ZERO_TOL for v in per_mode[j - 1]):
            tail = j
        else:
            break
    return SpectrumReport(tuple(lambdas), g, eps, below, all_real, tail, tuple(per_mode))


@dataclass(frozen=True)
class SignReversalReport:
    e_values: tuple[complex, ...]
    s_values: tuple[tuple[complex, ...], ...]  # per λ, one s per nonzero e
    consistent: bool
    reversal_detected: bool
    nonnegative_E: bool


def sign_reversal_check(E, lambda_list, tol: float = 1e-9) -> SignReversalReport:
    """Check ``s = λ/e`` and ``sign Re s = sign λ · sign Re e`` for pencils ``(E, λI)``."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    lams = []
    for lam in lambda_list:
        if np.ndim(lam) != 0 or abs(np.imag(lam)) > 0:
            raise ValueError(f"scalar pencils need real scalar λ, got {lam!r}")
        lams.append(float(np.real(lam)))
    evals = _sorted_desc(np.linalg.eigvals(E))
    thr = tol * max(np.linalg.norm(E, 2), 1.0)
    nonzero = [e for e in evals if abs(e) > thr]
    s_all, consistent, reversal = [], True, False
    for lam in lams:
        s = [lam / e for e in nonzero]
        s_all.append(tuple(s))
        for e, si in zip(nonzero, s):
            if np.sign(si.real) != np.sign(lam) * np.sign(e.real):
                consistent = False
            if np.sign(si.real) != np.sign(lam) and lam != 0:
                reversal = True
    nonneg = all(abs(e.imag) <= thr and e.real >= -thr for e in evals)
    return SignReversalReport(tuple(evals), tuple(s_all), consistent, reversal, nonneg)


@dataclass(frozen=True)
class LmiCertificate:
    P: np.ndarray
    sym_residual: float
    semidef_margin: float
    neg_margin: float
    feasible: bool
    diagnostics: tuple[str, ...] = ()


def literal_lambda1(D, basis: Basis, N: int | None = None) -> float:
    """``max_j max Re σ(-μ_j D)``: the diffusion-only reading of ``λ₁``."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    N = len(basis) if N is None else N
    return max(float(np.linalg.eigvals(-m.mu * D).real.max()) for m in basis.modes[:N])


def folded_lambda1(D, A, basis: Basis, N: int | None = None) -> float:
    """Largest real part of the operator spectrum (``A`` folded into ``λ₁``)."""
    return spectrum_report(None, D, A, basis, N).lambdas[0].real


def lmi_certificate(E, A_eff, lambda1: float, tol: float = 1e-8) -> LmiCertificate:
    """Construct ``P`` from the Weierstrass form of ``(E, λ₁I + A_eff)`` and verify it.

    The slow block gets the solution of a Lyapunov equation with right-hand
    side ``-I``; the fast block gets ``-I``. Both LMI conditions are then
    evaluated in the original coordinates, and ``feasible`` reflects that
    check only.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A_eff = np.atleast_2d(np.asarray(A_eff, dtype=float))
    n = E.shape[0]
    A_t = lambda1 * np.eye(n) + A_eff
    pencil = MatrixPencil(E, A_t)
    ok, c = is_regular(pencil)
    if not ok:
        raise IrregularPencil("LMI pencil (E, λ₁I + A) is not regular")
    wf = weierstrass(pencil, c)
    r = wf.r
    notes = []
    X = np.zeros((r, r))
    if r:
        F = wf.slow_matrix
        ev = np.linalg.eigvals(F)
        pair_sums = np.abs(ev[:, None] + ev[None, :].conj())
        if pair_sums.min() <= 1e-12 * max(1.0, np.abs(ev).max()):
            raise np.linalg.LinAlgError("Lyapunov equation singular: two slow eigenvalues sum to ~0")
        X = sla.solve_continuous_lyapunov(F.T, -np.eye(r))
        X = 0.5 * (X + X.T)
    P1 = np.linalg.solve(wf.E1.T, X) if r else X
    P_hat = sla.block_diag(P1, -np.eye(n - r)) if n else np.zeros((0, 0))
    P = wf.Q.T @ P_hat @ wf.Z_inv
    EtP = E.T @ P
    scale = max(np.linalg.norm(P, 2), 1.0) * max(np.linalg.norm(E, 2), 1.0)
    sym_res = float(np.linalg.norm(EtP - EtP.T, 2))
    semidef = float(np.linalg.eigvalsh(0.5 * (EtP + EtP.T)).min())
    L2 = P.T @ A_t + A_t.T @ P
    neg = float(np.linalg.eigvalsh(0.5 * (L2 + L2.T)).max())
    if sym_res > tol * scale:
        notes.append(f"EᵀP not symmetric (residual {sym_res:.3g}); index {wf.nu} > 1 or numerical failure")
    if semidef < -tol * scale:
        notes.append(f"EᵀP indefinite (min eigenvalue {semidef:.3g}); slow block not Hurwitz")
    if not neg < 0:
        notes.append(f"second LMI not negative definite (max eigenvalue {neg:.3g})")
    feasible = not notes
    return LmiCertificate(P, sym_res, semidef, neg, feasible, tuple(notes))


@dataclass(frozen=True)
class DecayCertificate:
    d1: float
    mu1: float
    normA: float
    normE: float
    delta: float
    applicable: bool
    margin: float  # d1·μ1 - ‖A‖
    table_margin: float  # n·d1·μ1 - ‖A‖, the tabulated reading
    reasons: tuple[str, ...] = ()


def delta_criterion(E, D, A, mu1: float) -> DecayCertificate:
    E = np.atleast_2d(np.asarray(E, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = E.shape[0]
    d_eigs = np.linalg.eigvalsh(0.5 * (D + D.T))
    e_eigs = np.linalg.eigvalsh(0.5 * (E + E.T))
    d1 = float(d_eigs.min())
    normA = float(np.linalg.norm(A, 2))
    normE = float(np.linalg.norm(E, 2))
    delta = 2.0 * (d1 * mu1 - normA) / normE if normE > 0 else float("nan")
    reasons = []
    if e_eigs.min() < -ZERO_TOL or np.linalg.norm(E - E.T) > ZERO_TOL:
        reasons.append("E is not symmetric positive semidefinite")
    if d1 <= ZERO_TOL:
        reasons.append("D is not positive definite")
    if not delta > 0:
        reasons.append("delta <= 0")
    return DecayCertificate(
        d1=d1,
        mu1=float(mu1),
        normA=normA,
        normE=normE,
        delta=float(delta),
        applicable=not reasons,
        margin=d1 * mu1 - normA,
        table_margin=n * d1 * mu1 - normA,
        reasons=tuple(reasons),
    )


def trapezoid_weights(grid) -> np.ndarray:
    """Tensor trapezoid weights with the grid's shape."""
    w = np.ones(())
    for g in grid:
        g = np.asarray(g, dtype=float)
        h = np.diff(g)
        w1 = np.zeros(len(g))
        w1[:-1] += 0.5 * h
        w1[1:] += 0.5 * h
        w = np.multiply.outer(w, w1)
    return w


_WEIGHTS: dict = {}


def _weights_for(grid) -> np.ndarray:
    key = tuple((len(g), float(g[0]), float(g[-1])) for g in grid)
    if key not in _WEIGHTS:
        _WEIGHTS[key] = trapezoid_weights(grid)
    return _WEIGHTS[key]


def grid_integral(values: np.ndarray, grid) -> float:
    """Trapezoidal integral over all grid axes of a ``grid_shape`` array."""
    return float(np.sum(_weights_for(grid) * values))


def gradient_energy(field: GridField, E) -> float:
    """``½ ∫ Σ_i (∂x/∂z_i)ᵀ E (∂x/∂z_i) dz`` with finite-difference gradients."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    dens = 0.0
    for g in grad_field(field):
        dens = dens + np.einsum("...i,ij,...j->...", g.values, E, g.values)
    return 0.5 * grid_integral(dens, field.grid)


def spatial_mean(field: GridField) -> np.ndarray:
    w = _weights_for(field.grid)
    return np.tensordot(w, field.values, axes=w.ndim) / w.sum()


def mean_deviation(field: GridField) -> float:
    """``∫ ‖x(z) - x_M‖ dz`` with the Euclidean norm per node."""
    dev = np.linalg.norm(field.values - spatial_mean(field), axis=-1)
    return grid_integral(dev, field.grid)


@dataclass(frozen=True)
class EnergySeries:
    times: np.ndarray
    energy: np.ndarray
    mean_deviation: np.ndarray
    rate: float | None
    deviation_rate: float | None


def fit_log_rate(times, values, floor: float = 1e-12) -> float | None:
    """Least-squares slope of ``log(values)`` over samples above ``floor``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = values > floor
    if mask.sum() < 2:
        return None
    slope, _ = np.polyfit(times[mask], np.log(values[mask]), 1)
    return float(slope)


def energy_series(fields, E, times) -> EnergySeries:
    fields = list(fields)
    if len(fields) < 2:
        raise ValueError("energy_series needs at least two snapshots")
    times = np.asarray(times, dtype=float)
    energy = np.array([gradient_energy(f, E) for f in fields])
    dev = np.array([mean_deviation(f) for f in fields])
    return EnergySeries(times, energy, dev, fit_log_rate(times, energy), fit_log_rate(times, dev))


def poincare_check(field: GridField, mu1: float, kind: str) -> tuple[float, ...]:
    """Poincaré residuals from finite differences on ``field`` (first component).

    Neumann: ``(‖∇x‖² - μ₁‖x - x̄‖², ‖Δx‖² - μ₁‖∇x‖²)``; Dirichlet: ``(‖∇x‖² - μ₁‖x‖²,)``.
    Discretization error is O(h²); :func:`poincare_check_spectral` is exact for
    band-limited fields.
    """
    if kind not in ("neumann", "dirichlet"):
        raise ValueError(f"Poincaré check is defined for neumann/dirichlet, not {kind!r}")
    x = GridField(field.grid, field.values[..., :1])
    grads = grad_field(x)
    grad_sq = sum(grid_integral(g.values[..., 0] ** 2, x.grid) for g in grads)
    if kind == "dirichlet":
        return (grad_sq - mu1 * grid_integral(x.values[..., 0] ** 2, x.grid),)
    xbar = spatial_mean(x)[0]
    dev_sq = grid_integral((x.values[..., 0] - xbar) ** 2, x.grid)
    lap = sum(grad_field(g)[i].values[..., 0] for i, g in enumerate(grads))
    lap_sq = grid_integral(lap**2, x.grid)
    return (grad_sq - mu1 * dev_sq, lap_sq - mu1 * grad_sq)


def poincare_check_spectral(coeffs, basis: Basis, mu1: float | None = None) -> tuple[float, ...]:
    """Poincaré residuals for ``x = Σ c_j φ_j``, integrals by the basis quadrature.

    Gradient and Laplacian are evaluated analytically from the separable modes.
    """
    from .eigenbasis import poincare_constant

    coeffs = np.asarray(coeffs, dtype=float)
    mu1 = poincare_constant(basis) if mu1 is None else mu1
    q = basis.quadrature
    mesh = q.mesh()
    modes = basis.modes[: len(coeffs)]
    x = sum(c * m(*mesh) for c, m in zip(coeffs, modes))
    grads = [sum(c * m.gradient(*mesh)[i] for c, m in zip(coeffs, modes)) for i in range(basis.domain.d)]
    lap = sum(c * m.laplacian(*mesh) for c, m in zip(coeffs, modes))
    grad_sq = float(sum(q.integrate(g**2) for g in grads))
    kind = basis.bc.kind
    if kind == "dirichlet":
        return (grad_sq - mu1 * float(q.integrate(x**2)),)
    if kind != "neumann":
        raise ValueError(f"Poincaré check is defined for neumann/dirichlet, not {kind!r}")
    xbar = float(q.integrate(x)) / basis.domain.volume
    return (
        grad_sq - mu1 * float(q.integrate((x - xbar) ** 2)),
        float(q.integrate(lap**2)) - mu1 * grad_sq,
    )
