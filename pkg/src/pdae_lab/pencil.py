"""Regular matrix pencils ``sE - A``: regularity, spectra and the Weierstrass split.

The decomposition works on ``Ê = (cE - A)⁻¹E`` for a shift ``c`` with
``det(cE - A) ≠ 0``. Eigenvalues ``θ ≠ 0`` of ``Ê`` are the finite pencil
eigenvalues ``s = c - 1/θ``; ``θ = 0`` belongs to the infinite ones. A reordered
real Schur form followed by a Sylvester solve block-diagonalizes ``Ê`` and gives
left/right transforms ``Q, Z`` with

    Q E Z = diag(E1, J),    Q A Z = diag(A1, I)

where ``E1`` is invertible and ``J`` is nilpotent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

CLUSTER_TOL = 1e-8


class PencilError(ValueError):
    pass


class IrregularPencil(PencilError):
    pass


class ClusterAmbiguity(PencilError):
    pass


@dataclass(frozen=True)
class MatrixPencil:
    E: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if E.shape != A.shape or E.shape[0] != E.shape[1]:
            raise ValueError(f"pencil needs equal square matrices, got E{E.shape} A{A.shape}")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.E.shape[0]

    def det(self, s: complex) -> complex:
        return np.linalg.det(s * self.E - self.A)


@dataclass(frozen=True)
class WeierstrassForm:
    """Two-sided canonical form of a regular pencil.

    ``Q @ E @ Z = blockdiag(E1, J)`` and ``Q @ A @ Z = blockdiag(A1, A2)`` with
    ``A2 = I``. ``M``/``M_inv`` block-diagonalize ``Ê = (cE - A)⁻¹E``.
    """

    shift: float
    Q: np.ndarray
    Z: np.ndarray
    Z_inv: np.ndarray
    M: np.ndarray
    M_inv: np.ndarray
    r: int
    E1: np.ndarray
    A1: np.ndarray
    J: np.ndarray
    A2: np.ndarray
    nu: int
    E_hat_blocks: tuple[np.ndarray, np.ndarray]

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def slow_matrix(self) -> np.ndarray:
        """``E1⁻¹A1``: dynamics of the slow coordinates."""
        return np.linalg.solve(self.E1, self.A1) if self.r else np.zeros((0, 0))


@dataclass(frozen=True)
class PencilVerdict:
    regular: bool
    shift: float | None
    impulse_free: bool
    nu: int | None
    finite_spectrum: tuple[complex, ...]
    admissible: bool


def _scale(pencil: MatrixPencil) -> float:
    return max(np.linalg.norm(pencil.E, 2), np.linalg.norm(pencil.A, 2), 1.0)


def is_regular(pencil: MatrixPencil, tol: float = 1e-10) -> tuple[bool, float]:
    """Sample ``det(sE - A)`` at ``s_k = k + 0.5``; regular iff some sample is nonzero.

    The witness is the sample with the largest scaled determinant.
    """
    n = pencil.n
    best, best_s = -1.0, 0.5
    for k in range(n + 1):
        s = k + 0.5
        # normalize so the test is invariant to the pencil's magnitude
        val = abs(pencil.det(s)) / (_scale(pencil) * max(1.0, s)) ** n
        if val > best:
            best, best_s = val, s
    return best > tol, best_s


def _numerical_rank(M: np.ndarray, tol: float) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > tol))


def nilpotency_index(J: np.ndarray, tol: float = 1e-8) -> int:
    """Smallest ``k`` with ``J^k`` numerically zero; ``0`` for an empty block."""
    J = np.atleast_2d(np.asarray(J, dtype=float)) if np.size(J) else np.zeros((0, 0))
    m = J.shape[0]
    if m == 0:
        return 0
    scale = max(np.linalg.norm(J, 2), 1.0)
    P = np.eye(m)
    for k in range(1, m + 1):
        P = P @ J
        if _numerical_rank(P, tol * scale**k) == 0:
            return k
    raise PencilError(f"block is not nilpotent: rank of J^{m} is {_numerical_rank(P, tol * scale**m)}")


def _split(pencil: MatrixPencil, c: float, cluster_tol: float):
    K = c * pencil.E - pencil.A
    lu = sla.lu_factor(K)
    E_hat = sla.lu_solve(lu, pencil.E)
    scale = max(np.linalg.norm(E_hat, 2), np.finfo(float).tiny)
    thr = cluster_tol * scale
    mags = np.abs(np.linalg.eigvals(E_hat)) if pencil.n else np.array([])
    if np.any((mags > 0.1 * thr) & (mags < 10 * thr)):
        raise ClusterAmbiguity(
            f"eigenvalue of (cE-A)^-1 E within [0.1, 10] x cluster_tol ({thr:.3g}); pass cluster_tol explicitly"
        )
    T, U, r = sla.schur(E_hat, output="real", sort=lambda re, im: np.hypot(re, im) > thr)
    return K, lu, E_hat, T, U, r


def weierstrass(pencil: MatrixPencil, c: float | None = None, cluster_tol: float = CLUSTER_TOL) -> WeierstrassForm:
    n = pencil.n
    if c is None:
        ok, c = is_regular(pencil)
        if not ok:
            raise IrregularPencil("pencil is not regular: det(sE - A) vanishes at all samples")
    if abs(np.linalg.det(c * pencil.E - pencil.A)) == 0.0:
        raise IrregularPencil(f"shift c={c} makes cE - A singular")
    K, lu, E_hat, T, U, r = _split(pencil, c, cluster_tol)
    T11, T12, T22 = T[:r, :r], T[:r, r:], T[r:, r:]
    # decouple: T11 X - X T22 = -T12
    X = sla.solve_sylvester(T11, -T22, -T12) if 0 < r < n else np.zeros((r, n - r))
    Y = np.eye(n)
    Y[:r, r:] = X
    Y_inv = np.eye(n)
    Y_inv[:r, r:] = -X
    M = U @ Y
    M_inv = Y_inv @ U.T
    cond = np.linalg.cond(M)
    if cond > 1e12:
        raise PencilError(f"ill-conditioned Weierstrass transform (cond {cond:.3g})")
    E1_hat, N_hat = T11, T22
    # normalize the fast block so its A-part is the identity
    F = c * N_hat - np.eye(n - r)
    F_inv = np.linalg.inv(F) if n - r else np.zeros((0, 0))
    left = np.eye(n)
    left[r:, r:] = F_inv
    Q = left @ M_inv @ sla.lu_solve(lu, np.eye(n))
    E1 = E1_hat
    A1 = c * E1_hat - np.eye(r)
    J = F_inv @ N_hat
    nu = nilpotency_index(J) if n - r else 0
    return WeierstrassForm(
        shift=float(c),
        Q=Q,
        Z=M,
        Z_inv=M_inv,
        M=M,
        M_inv=M_inv,
        r=r,
        E1=E1,
        A1=A1,
        J=J,
        A2=np.eye(n - r),
        nu=nu,
        E_hat_blocks=(E1_hat, N_hat),
    )


def reconstruction_residual(pencil: MatrixPencil, wf: WeierstrassForm) -> float:
    """``‖M⁻¹ Ê M - diag(Ê1, N̂)‖`` for the form's shift."""
    E_hat = np.linalg.solve(wf.shift * pencil.E - pencil.A, pencil.E)
    D = sla.block_diag(*wf.E_hat_blocks) if wf.n else np.zeros((0, 0))
    return float(np.linalg.norm(wf.M_inv @ E_hat @ wf.M - D, 2)) if wf.n else 0.0


def _sort_desc(vals) -> list[complex]:
    return sorted((complex(v) for v in vals), key=lambda s: (-s.real, -s.imag))


def generalized_eigenvalues(
    pencil: MatrixPencil, c: float | None = None, cluster_tol: float = CLUSTER_TOL
) -> list[complex]:
    """Finite eigenvalues of ``sE - A``, sorted by real part, descending."""
    if c is None:
        ok, c = is_regular(pencil)
        if not ok:
            raise IrregularPencil("pencil is not regular")
    E_hat = np.linalg.solve(c * pencil.E - pencil.A, pencil.E)
    thr = cluster_tol * max(np.linalg.norm(E_hat, 2), np.finfo(float).tiny)
    theta = np.linalg.eigvals(E_hat) if pencil.n else np.array([])
    return _sort_desc(c - 1.0 / t for t in theta if abs(t) > thr)


def verdict(pencil: MatrixPencil, cluster_tol: float = CLUSTER_TOL) -> PencilVerdict:
    regular, c = is_regular(pencil)
    if not regular:
        return PencilVerdict(False, None, False, None, (), False)
    wf = weierstrass(pencil, c, cluster_tol)
    spec = tuple(generalized_eigenvalues(pencil, c, cluster_tol))
    impulse_free = wf.nu <= 1
    stable = all(s.real < 0 for s in spec)
    return PencilVerdict(True, c, impulse_free, wf.nu, spec, impulse_free and stable)


def scalar_weierstrass(E: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Single-similarity form for pencils ``(E, λI)``: ``M⁻¹EM = diag(E1, J)``.

    Returns ``(M, E1, J, nu)``. Only valid for ``A = λI``, where one similarity
    suffices because ``λI`` commutes with every transform.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n = E.shape[0]
    thr = CLUSTER_TOL * max(np.linalg.norm(E, 2), np.finfo(float).tiny)
    T, U, r = sla.schur(E, output="real", sort=lambda re, im: np.hypot(re, im) > thr)
    X = sla.solve_sylvester(T[:r, :r], -T[r:, r:], -T[:r, r:]) if 0 < r < n else np.zeros((r, n - r))
    Y = np.eye(n)
    Y[:r, r:] = X
    M = U @ Y
    J = T[r:, r:]
    return M, T[:r, :r], J, nilpotency_index(J) if n - r else 0
