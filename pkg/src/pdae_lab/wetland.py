"""Prey-predator-human wetland model.

State ``x = (x1, x2, x3)``: prey, predator and human density. The first two
rows are logistic/Lotka-Volterra reaction-diffusion equations with a human
pressure term ``h_i x3``; the third row is the elliptic constraint
``0 = Δx3 + x3`` under no-flux boundaries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .eigenbasis import Basis, BoundarySpec, BoxDomain, poincare_constant, tensor_modes
from .semilinear_sim import SemilinearModel
from .stability import DecayCertificate, SpectrumReport, delta_criterion, spectrum_report

# tabulated (‖A_J‖, d1·μ1 - ‖A_J‖) per (h1, h2)
TABLE1 = {
    (0.1, 0.1): (1.0069, 1.9931),
    (24.0, 0.1): (3.2841, -0.7159),
}


@dataclass(frozen=True)
class WetlandParams:
    r1: float = 2.0
    r2: float = 0.2
    N1: float = 1.0
    N2: float = 1.0
    k1: float = 8.0
    k2: float = 18.0
    h1: float = 0.1
    h2: float = 0.1
    d1: float = 2.0
    d2: float = 3.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def E(self) -> np.ndarray:
        return np.diag([1.0, 1.0, 0.0])

    @property
    def D(self) -> np.ndarray:
        return np.diag([self.d1, self.d2, 1.0])


def reference_domain() -> BoxDomain:
    return BoxDomain((np.pi, 1.0))


def reference_initial(z1, z2):
    """Prey 0.3, predator 0.3(1 + cos z1); the human component is set by the constraint."""
    x1 = 0.3 * np.ones_like(z1)
    x2 = 0.3 * (1.0 + np.cos(z1))
    return np.stack([x1, x2], axis=-1)


def reaction(p: WetlandParams, x: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x[0], x[1], x[2]
    return np.stack(
        [
            p.r1 * x1 * (1.0 - x1 / p.N1 - p.k1 * x2 / p.N2 - p.h1 * x3),
            p.r2 * x2 * (-1.0 + p.k2 * x1 / p.N1 - x2 / p.N2 - p.h2 * x3),
            x3,
        ]
    )


def reaction_jacobian(p: WetlandParams, x: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x[0], x[1], x[2]
    zero = np.zeros_like(x1)
    g1 = 1.0 - x1 / p.N1 - p.k1 * x2 / p.N2 - p.h1 * x3
    g2 = -1.0 + p.k2 * x1 / p.N1 - x2 / p.N2 - p.h2 * x3
    return np.array(
        [
            [p.r1 * (g1 - x1 / p.N1), -p.r1 * p.k1 * x1 / p.N2, -p.r1 * p.h1 * x1],
            [p.r2 * p.k2 * x2 / p.N1, p.r2 * (g2 - x2 / p.N2), -p.r2 * p.h2 * x2],
            [zero, zero, np.ones_like(x1)],
        ]
    )


def wetland_model(params: WetlandParams) -> SemilinearModel:
    return SemilinearModel(
        E=params.E,
        D=params.D,
        f=lambda x: reaction(params, x),
        f_jacobian=lambda x: reaction_jacobian(params, x),
    )


def equilibrium(params: WetlandParams) -> np.ndarray:
    """Positive coexistence state ``(N1(k1+1), N2(k2-1)) / (1 + k1 k2)`` with ``x3 = 0``."""
    p = params
    if not p.k2 > 1:
        raise ValueError(f"no positive equilibrium for k2 = {p.k2} <= 1")
    den = 1.0 + p.k1 * p.k2
    return np.array([p.N1 * (p.k1 + 1.0) / den, p.N2 * (p.k2 - 1.0) / den, 0.0])


def jacobian_at(model: SemilinearModel, x_star) -> np.ndarray:
    x = np.asarray(x_star, dtype=float).reshape(-1, 1)
    return np.asarray(model.f_jacobian(x))[:, :, 0]


@dataclass
class Table1Row:
    h1: float
    h2: float
    A_J: np.ndarray
    norm_AJ: float
    margin_min_d: float  # d1·μ1 - ‖A_J‖ with d1 = min σ(D)
    margin_table: float  # n·d1·μ1 - ‖A_J‖
    certificate: DecayCertificate
    spectrum: SpectrumReport
    tabulated_norm: float | None
    tabulated_margin: float | None

    @property
    def norm_matches(self) -> bool | None:
        return None if self.tabulated_norm is None else abs(self.norm_AJ - self.tabulated_norm) <= 1e-3

    @property
    def margin_matches_table_reading(self) -> bool | None:
        return None if self.tabulated_margin is None else abs(self.margin_table - self.tabulated_margin) <= 1e-3

    @property
    def margin_matches_min_d(self) -> bool | None:
        return None if self.tabulated_margin is None else abs(self.margin_min_d - self.tabulated_margin) <= 1e-3


def classify_stability(params: WetlandParams, domain: BoxDomain | None = None, basis: Basis | None = None) -> Table1Row:
    domain = reference_domain() if domain is None else domain
    if basis is None:
        basis = tensor_modes(domain, BoundarySpec.uniform("neumann", domain.d), 16)
    model = wetland_model(params)
    A_J = jacobian_at(model, equilibrium(params))
    mu1 = poincare_constant(basis)
    cert = delta_criterion(params.E, params.D, A_J, mu1)
    spec = spectrum_report(params.E, params.D, A_J, basis)
    tab = TABLE1.get((round(params.h1, 12), round(params.h2, 12)))
    return Table1Row(
        h1=params.h1,
        h2=params.h2,
        A_J=A_J,
        norm_AJ=cert.normA,
        margin_min_d=cert.margin,
        margin_table=cert.table_margin,
        certificate=cert,
        spectrum=spec,
        tabulated_norm=None if tab is None else tab[0],
        tabulated_margin=None if tab is None else tab[1],
    )
