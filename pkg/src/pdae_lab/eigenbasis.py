"""Laplacian eigenbases on axis-aligned boxes.

Eigenpairs solve ``-Δφ = μφ`` with homogeneous boundary conditions
``p·x + q·∂x/∂n = 0`` on each face. The problem separates, so every mode is a
product of one-dimensional Sturm-Liouville eigenfunctions
``φ_i(z) = a·cos(k z) + b·sin(k z)`` (or ``a + b z`` when ``k = 0``) and
``μ = Σ k_i²``.

Integrals against the basis use a tensor Gauss-Legendre rule.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

ZERO_MU_TOL = 1e-12


class BracketError(RuntimeError):
    """The Robin root scan ran out of brackets before finding enough roots."""


@dataclass(frozen=True)
class BoxDomain:
    lengths: tuple[float, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        if not lengths:
            raise ValueError("domain needs at least one axis")
        if any(not (v > 0 and math.isfinite(v)) for v in lengths):
            raise ValueError(f"domain lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def d(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


@dataclass(frozen=True)
class AxisBC:
    """Coefficients ``(p, q)`` of ``p·x + q·∂x/∂n = 0`` at the low and high face."""

    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self):
        for name in ("low", "high"):
            p, q = (float(v) for v in getattr(self, name))
            if p == 0 and q == 0:
                raise ValueError(f"{name} face has (p, q) = (0, 0)")
            # p·q < 0 gives a negative eigenvalue of -Δ; not supported
            if p * q < 0:
                raise ValueError(f"{name} face needs p·q >= 0, got ({p}, {q})")
            object.__setattr__(self, name, (p, q))

    @property
    def kind(self) -> str:
        qs = (self.low[1], self.high[1])
        ps = (self.low[0], self.high[0])
        if qs == (0.0, 0.0):
            return "dirichlet"
        if ps == (0.0, 0.0):
            return "neumann"
        return "robin"


@dataclass(frozen=True)
class BoundarySpec:
    axes: tuple[AxisBC, ...]

    @classmethod
    def uniform(cls, kind: str, d: int) -> "BoundarySpec":
        pq = {"dirichlet": (1.0, 0.0), "neumann": (0.0, 1.0)}[kind]
        return cls(tuple(AxisBC(pq, pq) for _ in range(d)))

    @property
    def kind(self) -> str:
        kinds = {ax.kind for ax in self.axes}
        return kinds.pop() if len(kinds) == 1 else "mixed"


def _face_kind(pq: tuple[float, float]) -> str | None:
    p, q = pq
    if q == 0:
        return "D"
    if p == 0:
        return "N"
    return None


def _axis_function(k: float, pq_low: tuple[float, float]) -> tuple[float, float]:
    """Unnormalized (cos, sin) or (const, linear) coefficients fixed by the low face."""
    p0, q0 = pq_low
    # p0·φ(0) - q0·φ'(0) = 0, outward normal at z=0 points to -z
    if k == 0.0:
        a, b = q0, p0
    else:
        a, b = q0 * k, p0
    s = math.hypot(a, b)
    return a / s, b / s


def _axis_norm_sq(k: float, a: float, b: float, length: float) -> float:
    L = length
    if k == 0.0:
        return a * a * L + a * b * L**2 + b * b * L**3 / 3.0
    s2 = math.sin(2 * k * L)
    cc = L / 2 + s2 / (4 * k)
    ss = L / 2 - s2 / (4 * k)
    cs = math.sin(k * L) ** 2 / (2 * k)
    return a * a * cc + b * b * ss + 2 * a * b * cs


def characteristic(k: float, length: float, bc: AxisBC) -> float:
    """Determinant whose zeros ``k > 0`` are the axis wavenumbers."""
    (p0, q0), (pL, qL) = bc.low, bc.high
    kL = k * length
    return (p0 * pL - q0 * qL * k * k) * math.sin(kL) + k * (p0 * qL + q0 * pL) * math.cos(kL)


def _zero_is_root(length: float, bc: AxisBC) -> bool:
    (p0, q0), (pL, qL) = bc.low, bc.high
    return p0 * (pL * length + qL) + q0 * pL == 0.0


def _robin_roots(length: float, bc: AxisBC, count: int) -> list[float]:
    # scan step pi/(2L), refined 8x so close root pairs do not share a bracket
    step = math.pi / (2 * length) / 8
    scale = lambda k: characteristic(k, length, bc) / (1.0 + k * k)  # noqa: E731
    roots: list[float] = []
    lo = step * 1e-6
    f_lo = scale(lo)
    max_brackets = 64 * (count + 4) * 8
    for i in range(1, max_brackets):
        hi = i * step
        f_hi = scale(hi)
        if f_lo == 0.0:
            roots.append(lo)
        elif f_lo * f_hi < 0:
            roots.append(brentq(scale, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400))
        if len(roots) >= count:
            return roots[:count]
        lo, f_lo = hi, f_hi
    raise BracketError(
        f"found {len(roots)} of {count} roots; last bracket [{lo:.6g}, {lo + step:.6g}]"
    )


def sl_modes_1d(length: float, bc: AxisBC, count: int) -> list[tuple[float, float]]:
    """First ``count`` wavenumbers and normalization constants on ``[0, length]``.

    Returns ``(k, c)`` pairs sorted by ``k``; the eigenvalue is ``k²`` and ``c``
    scales the unit-coefficient eigenfunction to unit L² norm.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    return [(m.root, m.norm) for m in _axis_modes(length, bc, count)]


@dataclass(frozen=True)
class AxisMode:
    root: float
    a: float  # cos (or constant) coefficient, before normalization
    b: float  # sin (or linear) coefficient
    norm: float

    def value(self, z: np.ndarray) -> np.ndarray:
        k = self.root
        if k == 0.0:
            return self.norm * (self.a + self.b * z)
        return self.norm * (self.a * np.cos(k * z) + self.b * np.sin(k * z))

    def deriv(self, z: np.ndarray) -> np.ndarray:
        k = self.root
        if k == 0.0:
            return self.norm * self.b * np.ones_like(z)
        return self.norm * k * (-self.a * np.sin(k * z) + self.b * np.cos(k * z))


def _axis_modes(length: float, bc: AxisBC, count: int) -> list[AxisMode]:
    kinds = (_face_kind(bc.low), _face_kind(bc.high))
    if None not in kinds:
        # closed forms: NN -> nπ/L from 0, DD -> nπ/L from 1, mixed -> (n+1/2)π/L
        if kinds == ("N", "N"):
            roots = [n * math.pi / length for n in range(count)]
        elif kinds == ("D", "D"):
            roots = [n * math.pi / length for n in range(1, count + 1)]
        else:
            roots = [(n + 0.5) * math.pi / length for n in range(count)]
    else:
        roots = _robin_roots(length, bc, count)
        if _zero_is_root(length, bc):
            roots = [0.0] + roots[: count - 1]
    modes = []
    for k in roots:
        a, b = _axis_function(k, bc.low)
        modes.append(AxisMode(k, a, b, 1.0 / math.sqrt(_axis_norm_sq(k, a, b, length))))
    return modes


@dataclass(frozen=True)
class Mode:
    multi_index: tuple[int, ...]
    mu: float
    axes: tuple[AxisMode, ...]

    @property
    def axis_roots(self) -> tuple[float, ...]:
        return tuple(ax.root for ax in self.axes)

    @property
    def norm_constants(self) -> tuple[float, ...]:
        return tuple(ax.norm for ax in self.axes)

    @property
    def is_constant(self) -> bool:
        return self.mu <= ZERO_MU_TOL

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        """Evaluate on broadcastable coordinate arrays, one per axis."""
        out = 1.0
        for ax, z in zip(self.axes, coords):
            out = out * ax.value(np.asarray(z, dtype=float))
        return out

    def gradient(self, *coords: np.ndarray) -> list[np.ndarray]:
        vals = [ax.value(np.asarray(z, dtype=float)) for ax, z in zip(self.axes, coords)]
        ders = [ax.deriv(np.asarray(z, dtype=float)) for ax, z in zip(self.axes, coords)]
        grads = []
        for i in range(len(self.axes)):
            g = 1.0
            for j in range(len(self.axes)):
                g = g * (ders[j] if i == j else vals[j])
            grads.append(g)
        return grads

    def laplacian(self, *coords: np.ndarray) -> np.ndarray:
        return -self.mu * self(*coords)


@dataclass(frozen=True)
class Quadrature:
    """Tensor Gauss-Legendre rule mapped onto the box."""

    nodes: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, domain: BoxDomain, n: int | Sequence[int] = 64) -> "Quadrature":
        ns = [n] * domain.d if isinstance(n, int) else list(n)
        nodes, weights = [], []
        for L, m in zip(domain.lengths, ns):
            x, w = leggauss(m)
            nodes.append(0.5 * L * (x + 1.0))
            weights.append(0.5 * L * w)
        return cls(tuple(nodes), tuple(weights))

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.nodes, indexing="ij")

    def weight_tensor(self) -> np.ndarray:
        w = self.weights[0]
        for wi in self.weights[1:]:
            w = np.multiply.outer(w, wi)
        return w

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate over the leading ``d`` axes of ``values``."""
        out = np.asarray(values, dtype=float)
        for w in self.weights:
            out = np.tensordot(w, out, axes=(0, 0))
        return out


@dataclass(frozen=True)
class Basis:
    domain: BoxDomain
    bc: BoundarySpec
    modes: tuple[Mode, ...]
    quadrature: Quadrature = field(repr=False)

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def mus(self) -> np.ndarray:
        return np.array([m.mu for m in self.modes])

    def mode_integrals(self) -> np.ndarray:
        """``∫_Ω φ_j dz`` for every mode."""
        q = self.quadrature
        mesh = q.mesh()
        return np.array([q.integrate(m(*mesh)) for m in self.modes])

    def gram(self) -> np.ndarray:
        q = self.quadrature
        mesh = q.mesh()
        vals = np.stack([m(*mesh) for m in self.modes], axis=-1)
        w = q.weight_tensor()[..., None]
        flat = (vals * np.sqrt(w)).reshape(-1, len(self.modes))
        return flat.T @ flat


def tensor_modes(
    domain: BoxDomain, bc: BoundarySpec, count: int, quad_nodes: int | Sequence[int] = 64
) -> Basis:
    """The ``count`` smallest-μ product modes, ascending with lexicographic tie-break."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(bc.axes) != domain.d:
        raise ValueError(f"boundary spec has {len(bc.axes)} axes, domain has {domain.d}")
    per_axis = [_axis_modes(L, ax, count) for L, ax in zip(domain.lengths, bc.axes)]
    # best-first enumeration over the index lattice; axis mu lists are sorted
    def key(idx):
        return (sum(per_axis[i][n].root ** 2 for i, n in enumerate(idx)), idx)

    start = (0,) * domain.d
    heap = [key(start)]
    seen = {start}
    modes: list[Mode] = []
    while heap and len(modes) < count:
        mu, idx = heapq.heappop(heap)
        modes.append(Mode(idx, mu, tuple(per_axis[i][n] for i, n in enumerate(idx))))
        for i in range(domain.d):
            nxt = idx[:i] + (idx[i] + 1,) + idx[i + 1 :]
            if nxt[i] < count and nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, key(nxt))
    return Basis(domain, bc, tuple(modes), Quadrature.build(domain, quad_nodes))


@dataclass
class GridField:
    """Node values on a tensor grid; ``values`` has shape ``(*grid_shape, n)``."""

    grid: tuple[np.ndarray, ...]
    values: np.ndarray

    def __post_init__(self):
        self.grid = tuple(np.asarray(g, dtype=float) for g in self.grid)
        self.values = np.asarray(self.values, dtype=float)
        shape = tuple(len(g) for g in self.grid)
        if self.values.shape[:-1] != shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {shape} x n")

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.grid, indexing="ij")


def uniform_grid(domain: BoxDomain, nodes: Sequence[int]) -> tuple[np.ndarray, ...]:
    return tuple(np.linspace(0.0, L, m) for L, m in zip(domain.lengths, nodes))


def project(field_fn: Callable[..., np.ndarray] | GridField, basis: Basis) -> np.ndarray:
    """Modal coefficients ``c_j = ⟨x, φ_j⟩``, shape ``(N, n)``.

    ``field_fn`` is either a callable of the ``d`` coordinate arrays returning
    ``(..., n)`` (or scalar-shaped) values, or a :class:`GridField`, which is
    interpolated onto the quadrature nodes (tensor cubic).
    """
    q = basis.quadrature
    mesh = q.mesh()
    if isinstance(field_fn, GridField):
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(field_fn.grid, field_fn.values, method="cubic")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = interp(pts).reshape(*mesh[0].shape, field_fn.n)
    else:
        vals = np.asarray(field_fn(*mesh), dtype=float)
        if vals.shape == mesh[0].shape:
            vals = vals[..., None]
    if vals.shape[:-1] != mesh[0].shape:
        raise ValueError(f"field evaluated to shape {vals.shape}, expected {mesh[0].shape} x n")
    w = q.weight_tensor()
    coeffs = np.empty((len(basis), vals.shape[-1]))
    for j, m in enumerate(basis.modes):
        coeffs[j] = np.tensordot(w * m(*mesh), vals, axes=(tuple(range(basis.domain.d)),) * 2)
    return coeffs


def reconstruct(coefficients: np.ndarray, basis: Basis, grid: Sequence[np.ndarray]) -> GridField:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.ndim == 1:
        coefficients = coefficients[:, None]
    if len(coefficients) > len(basis):
        raise ValueError(f"{len(coefficients)} coefficients for a {len(basis)}-mode basis")
    mesh = np.meshgrid(*grid, indexing="ij")
    out = np.zeros((*mesh[0].shape, coefficients.shape[1]))
    for c, m in zip(coefficients, basis.modes):
        out += m(*mesh)[..., None] * c
    return GridField(tuple(grid), out)


def poincare_constant(basis: Basis) -> float:
    for m in basis.modes:
        if m.mu > ZERO_MU_TOL:
            return m.mu
    raise ValueError(f"no positive eigenvalue among the first {len(basis)} modes")


def grad_field(field: GridField) -> tuple[GridField, ...]:
    """Second-order finite-difference gradient, one GridField per axis."""
    if any(len(g) < 3 for g in field.grid):
        raise ValueError("grad_field needs at least 3 nodes per axis")
    parts = np.gradient(field.values, *field.grid, axis=tuple(range(len(field.grid))), edge_order=2)
    if len(field.grid) == 1:
        parts = [parts]
    return tuple(GridField(field.grid, p) for p in parts)

