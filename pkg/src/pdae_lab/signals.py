"""Input signals built from ``t^k · e^{at} · {cos, sin}(ωt) · v`` terms.

Each term is stored as the real part of ``c · t^k · e^{λt}`` with complex
``λ = a + iω`` and complex coefficient vector ``c``; that class is closed under
differentiation, so derivatives of any order are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Term:
    power: int
    rate: complex
    coef: np.ndarray  # complex vector

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("power must be nonnegative")
        object.__setattr__(self, "coef", np.atleast_1d(np.asarray(self.coef, dtype=complex)))
        object.__setattr__(self, "rate", complex(self.rate))


@dataclass(frozen=True)
class Signal:
    dim: int
    terms: tuple[Term, ...] = field(default=())

    def __post_init__(self):
        for t in self.terms:
            if t.coef.shape != (self.dim,):
                raise ValueError(f"term vector has shape {t.coef.shape}, signal dim is {self.dim}")

    # construction helpers
    @classmethod
    def zero(cls, dim: int) -> "Signal":
        return cls(dim, ())

    @classmethod
    def term(cls, vector, power: int = 0, a: float = 0.0, omega: float = 0.0, kind: str = "cos") -> "Signal":
        """``t^power · e^{a t} · kind(ω t) · vector`` with ``kind`` in {cos, sin, const}."""
        v = np.atleast_1d(np.asarray(vector, dtype=float))
        if kind == "const" or omega == 0.0:
            if kind == "sin":
                return cls.zero(len(v))
            return cls(len(v), (Term(power, a, v.astype(complex)),))
        # cos(ωt) = Re e^{iωt}; sin(ωt) = Re(-i e^{iωt})
        c = v.astype(complex) if kind == "cos" else -1j * v
        return cls(len(v), (Term(power, complex(a, omega), c),))

    def __add__(self, other: "Signal") -> "Signal":
        if self.dim != other.dim:
            raise ValueError("signal dimensions differ")
        return Signal(self.dim, self.terms + other.terms)

    def scaled(self, factor: float) -> "Signal":
        return Signal(self.dim, tuple(Term(t.power, t.rate, factor * t.coef) for t in self.terms))

    def mapped(self, matrix: np.ndarray) -> "Signal":
        """The signal ``matrix @ u(t)``."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return Signal(matrix.shape[0], tuple(Term(t.power, t.rate, matrix @ t.coef) for t in self.terms))

    @property
    def is_zero(self) -> bool:
        return all(not np.any(t.coef) for t in self.terms)

    def derivative(self, order: int = 1) -> "Signal":
        sig = self
        for _ in range(order):
            out = []
            for t in sig.terms:
                # d/dt t^k e^{λt} = k t^{k-1} e^{λt} + λ t^k e^{λt}
                if t.rate != 0:
                    out.append(Term(t.power, t.rate, t.rate * t.coef))
                if t.power > 0:
                    out.append(Term(t.power - 1, t.rate, t.power * t.coef))
            sig = Signal(sig.dim, tuple(out))
        return sig

    def __call__(self, t) -> np.ndarray:
        """Values at scalar or array ``t``; shape ``(*t.shape, dim)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.dim,), dtype=complex)
        for term in self.terms:
            out += (t**term.power * np.exp(term.rate * t))[..., None] * term.coef
        return out.real

    def generator(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Real linear system ``ẇ = W w, u = H w, w(0) = w0`` reproducing the signal.

        Each term with power ``k`` and rate ``a + iω`` contributes states
        ``t^m/m! · e^{at} · (cos ωt, sin ωt)`` for ``m = 0..k`` (the sine half is
        dropped when ω = 0).
        """
        blocks, outs, inits = [], [], []
        for term in self.terms:
            a, w = term.rate.real, term.rate.imag
            k = term.power
            if w == 0.0:
                size = k + 1
                W = a * np.eye(size) + np.diag(np.ones(k), -1)
                w0 = np.zeros(size)
                w0[0] = 1.0
                H = np.zeros((self.dim, size))
                H[:, k] = math.factorial(k) * term.coef.real
            else:
                size = 2 * (k + 1)
                W = np.zeros((size, size))
                rot = np.array([[a, -w], [w, a]])
                for m in range(k + 1):
                    W[2 * m : 2 * m + 2, 2 * m : 2 * m + 2] = rot
                    if m:
                        W[2 * m : 2 * m + 2, 2 * m - 2 : 2 * m] = np.eye(2)
                w0 = np.zeros(size)
                w0[0] = 1.0
                H = np.zeros((self.dim, size))
                # Re(c (cos + i sin)) = Re(c) cos - Im(c) sin
                H[:, 2 * k] = math.factorial(k) * term.coef.real
                H[:, 2 * k + 1] = -math.factorial(k) * term.coef.imag
            blocks.append(W)
            outs.append(H)
            inits.append(w0)
        if not blocks:
            return np.zeros((0, 0)), np.zeros((self.dim, 0)), np.zeros(0)
        from scipy.linalg import block_diag

        return block_diag(*blocks), np.hstack(outs), np.concatenate(inits)
