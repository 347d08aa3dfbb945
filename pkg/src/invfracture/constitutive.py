"""Forward and inverse stored-energy potentials.

The forward potential ``W(F)`` is a Lennard-Jones type law: it vanishes at
``F = 1``, blows up as ``F -> 0`` and saturates at the surface-energy
constant ``gamma`` as ``F -> inf``.  The inverse potential is
``W*(H) = H W(1/H)``; it is a double well in the inverse stretch ``H`` with
wells at ``H = 0`` (vacuum) and ``H = 1`` (material).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class ModelKind(str, enum.Enum):
    PAPER_EXAMPLE = "paper"
    GENERAL_LJ = "lj"


@dataclass(frozen=True)
class ConstitutiveModel:
    """Potential pair ``W``/``W*``.

    ``PAPER_EXAMPLE`` is ``W(F) = (1 - 1/F)**2``.  ``GENERAL_LJ`` is
    ``W(F) = A/F**m - B/F**n + C`` with ``C`` solved from ``W(1) = 0``.
    """

    kind: ModelKind = ModelKind.PAPER_EXAMPLE
    A: float = 1.0
    B: float = 2.0
    C: float = 1.0
    m: float = 2.0
    n: float = 1.0

    @classmethod
    def paper_example(cls) -> "ConstitutiveModel":
        return cls(ModelKind.PAPER_EXAMPLE)

    @classmethod
    def general_lj(cls, A: float, m: float, n: float, B: float | None = None) -> "ConstitutiveModel":
        """Build a validated Lennard-Jones law.

        ``B`` defaults to ``m*A/n`` so that the well sits at ``F = 1``;
        an explicit ``B`` must agree with that value.  Requires ``A > 0``
        and ``m > n >= 1`` (the latter keeps ``M*`` finite at ``H = 0``).
        """
        if not A > 0:
            raise ValueError(f"A must be positive, got {A}")
        if not (m > n >= 1):
            raise ValueError(f"need m > n >= 1, got m={m}, n={n}")
        B_well = m * A / n
        if B is None:
            B = B_well
        elif not np.isclose(B, B_well, rtol=1e-12, atol=0.0):
            raise ValueError(f"B={B} puts the energy well away from F=1; expected B={B_well}")
        C = B - A
        return cls(ModelKind.GENERAL_LJ, float(A), float(B), float(C), float(m), float(n))

    @property
    def gamma(self) -> float:
        if self.kind is ModelKind.PAPER_EXAMPLE:
            return 1.0
        return self.C

    # -- forward ---------------------------------------------------------
    def forward(self, F):
        F = np.asarray(F, dtype=float)
        if np.any(F <= 0):
            raise DomainError("stretch F must be positive")
        if self.kind is ModelKind.PAPER_EXAMPLE:
            g = 1.0 - 1.0 / F
            return g * g, 2.0 * g / (F * F)
        A, B, C, m, n = self.A, self.B, self.C, self.m, self.n
        W = A * F ** (-m) - B * F ** (-n) + C
        S = -m * A * F ** (-m - 1) + n * B * F ** (-n - 1)
        return W, S

    # -- inverse ---------------------------------------------------------
    def inverse(self, H):
        H = np.asarray(H, dtype=float)
        if np.any(H < 0):
            raise DomainError("inverse stretch H must be nonnegative")
        return self._inverse_ext(H)

    def _inverse_ext(self, H):
        """``(W*, S*, M*)`` extended smoothly to small negative ``H``.

        Assembly evaluates the potential between nodes, where a
        nodally-constrained field can dip marginally below zero.
        """
        H = np.asarray(H, dtype=float)
        if self.kind is ModelKind.PAPER_EXAMPLE:
            one_m = 1.0 - H
            return H * one_m * one_m, one_m * (1.0 - 3.0 * H), 6.0 * H - 4.0
        A, B, C, m, n = self.A, self.B, self.C, self.m, self.n
        Hp = np.maximum(H, 0.0)
        Ws = A * Hp ** (m + 1) - B * Hp ** (n + 1) + C * Hp
        Ss = (m + 1) * A * Hp**m - (n + 1) * B * Hp**n + C
        Ms = m * (m + 1) * A * Hp ** (m - 1) - n * (n + 1) * B * Hp ** (n - 1)
        neg = H < 0
        if np.any(neg):
            # second-order Taylor continuation from H = 0 (m > n >= 1)
            M0 = -2.0 * B if n == 1 else 0.0
            Ws = np.where(neg, C * H + 0.5 * M0 * H * H, Ws)
            Ss = np.where(neg, C + M0 * H, Ss)
            Ms = np.where(neg, M0, Ms)
        return Ws, Ss, Ms


def eval_forward(model: ConstitutiveModel, F):
    """Return ``(W, S)`` with ``S = dW/dF``."""
    return model.forward(F)


def eval_inverse(model: ConstitutiveModel, H):
    """Return ``(W*, S*, M*)``: the inverse potential and its first two derivatives."""
    return model.inverse(H)


def duality_check(model: ConstitutiveModel, H_samples) -> float:
    """Max over samples of ``|W*(H) - H W(1/H)| / (1 + |W*(H)|)``."""
    H = np.asarray(H_samples, dtype=float)
    if np.any(H <= 0):
        raise DomainError("duality check needs H > 0")
    Ws, _, _ = model.inverse(H)
    W, _ = model.forward(1.0 / H)
    return float(np.max(np.abs(Ws - H * W) / (1.0 + np.abs(Ws))))
