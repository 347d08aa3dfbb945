"""Local stability of equilibria through the reduced second variation.

Admissible variations vanish, with their slope, on the broken set, so the
second-variation matrix is restricted by deleting both dofs of every
broken node (crack-face nodes included) and the two boundary value dofs.
Each floating good region contributes one translation zero mode; a state
is stable when the remaining spectrum is positive.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import assembly
from .activeset import EquilibriumState
from .assembly import ScaledProblem
from .cracks import CrackTopology, crack_topology
from .errors import InvFractureError


class AsymmetricMatrix(InvFractureError, ValueError):
    """Raised when a matrix handed to the symmetric eigensolver is not symmetric."""


class Verdict(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    MARGINAL = "Marginal"
    INCONSISTENT = "Inconsistent"


@dataclass
class StabilityReport:
    eigenvalues: np.ndarray
    n_zero: int
    n_negative: int
    P: int
    verdict: Verdict
    zero_tol: float
    scale: float
    zero_mode_separation: float = float("nan")

    def as_dict(self, head: int | None = None) -> dict:
        ev = self.eigenvalues if head is None else self.eigenvalues[:head]
        return {
            "eigenvalues": [float(x) for x in ev],
            "n_eigenvalues": int(len(self.eigenvalues)),
            "n_zero": self.n_zero,
            "n_negative": self.n_negative,
            "P": self.P,
            "verdict": self.verdict.value,
            "zero_tol": self.zero_tol,
            "scale": self.scale,
            "zero_mode_separation": self.zero_mode_separation,
        }


def kept_dofs(state: EquilibriumState, topology: CrackTopology | None = None) -> np.ndarray:
    """Dofs of the admissible variation space, ascending."""
    mesh = state.mesh
    topo = topology or crack_topology(state)
    keep = np.ones(mesh.n_dofs, dtype=bool)
    broken = np.flatnonzero(topo.broken_mask(mesh.n_nodes))
    keep[2 * broken] = False
    keep[2 * broken + 1] = False
    keep[assembly.boundary_dofs(mesh)] = False
    return np.flatnonzero(keep)


def reduced_hessian(problem: ScaledProblem, state: EquilibriumState, topology: CrackTopology | None = None) -> np.ndarray:
    """Dense second-variation matrix over the admissible dofs."""
    idx = kept_dofs(state, topology)
    G = assembly.second_variation_matrix(problem, state.field)
    return G[idx][:, idx].toarray()


def count_floating_regions(topology: CrackTopology) -> int:
    """Good intervals bounded by crack faces at both ends."""
    return len(topology.floating_regions())


def eigen_spectrum(G, sym_tol: float = 1e-10) -> np.ndarray:
    """All eigenvalues of the symmetric matrix ``G``, ascending.

    ``sym_tol`` is relative to ``max(1, max|G|)``.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise AsymmetricMatrix(f"expected a square matrix, got shape {G.shape}")
    if G.size == 0:
        return np.zeros(0)
    asym = float(np.max(np.abs(G - G.T)))
    if asym > sym_tol * max(1.0, float(np.max(np.abs(G)))):
        raise AsymmetricMatrix(f"matrix is not symmetric (max |G - G^T| = {asym:.3e})")
    return sla.eigvalsh(G)


def classify(spectrum, P: int, zero_tol: float = 1e-8) -> StabilityReport:
    """Count zero and negative eigenvalues and decide the verdict.

    A negative eigenvalue is decisive; otherwise the zero count is
    compared with the number of translation modes ``P``.
    """
    ev = np.sort(np.asarray(spectrum, dtype=float))
    scale = max(abs(ev[0]), abs(ev[-1]), 1.0) if ev.size else 1.0
    thr = zero_tol * scale
    n_zero = int(np.count_nonzero(np.abs(ev) <= thr))
    n_neg = int(np.count_nonzero(ev < -thr))
    if n_neg >= 1:
        verdict = Verdict.UNSTABLE
    elif n_zero < P:
        verdict = Verdict.INCONSISTENT
    elif n_zero == P:
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.MARGINAL
    return StabilityReport(ev, n_zero, n_neg, int(P), verdict, float(zero_tol), float(scale))


def translation_modes(state: EquilibriumState, topology: CrackTopology) -> list:
    """Full-length dof vectors of the translation modes, one per floating region.

    On the region the mode is ``h'`` in the deformed frame: value dofs carry
    ``(1 + u')/lambda`` and derivative dofs ``u''/lambda``; it is zero elsewhere.
    """
    mesh = state.mesh
    lam = state.lam
    val = state.inverse_strain_nodes / lam
    der = state.field.nodal_curvature() / lam
    modes = []
    for g in topology.floating_regions():
        ka, kb = topology.good_nodes[g]
        xi = np.zeros(mesh.n_dofs)
        nodes = np.arange(ka + 1, kb)
        xi[2 * nodes] = val[nodes]
        xi[2 * nodes + 1] = der[nodes]
        modes.append(xi)
    return modes


def translation_mode_check(
    problem: ScaledProblem, state: EquilibriumState, topology: CrackTopology | None = None, metric: str = "bending"
) -> float:
    """Max over floating regions of ``|G xi| / |xi|``; 0 when there are none.

    With ``metric="bending"`` the residual is measured in the dual norm and
    ``xi`` in the energy norm of ``metric_factor`` (``|L^-1 G xi| / |L^T xi|``),
    the same scaling ``assess`` uses; this ratio is dimensionless and shrinks
    under refinement.  ``metric="plain"`` uses Euclidean dof norms, which
    carry the ``h^-3`` size of ``G``.
    """
    if metric not in ("bending", "plain"):
        raise ValueError(f"unknown metric {metric!r}")
    topo = topology or crack_topology(state)
    modes = translation_modes(state, topo)
    if not modes:
        return 0.0
    idx = kept_dofs(state, topo)
    G = assembly.second_variation_matrix(problem, state.field)[idx][:, idx]
    L = metric_factor(state.mesh, idx) if metric == "bending" else None
    worst = 0.0
    for xi in modes:
        x = xi[idx]
        if L is None:
            r = np.linalg.norm(G @ x) / np.linalg.norm(x)
        else:
            r = np.linalg.norm(sla.solve_triangular(L, G @ x, lower=True)) / np.linalg.norm(L.T @ x)
        worst = max(worst, float(r))
    return worst


def metric_factor(mesh, idx) -> np.ndarray:
    """Lower Cholesky factor of the bending Gram matrix on the kept dofs.

    In the plain dof metric the spectrum runs from about ``h^-3`` down to
    about ``h``, so a zero threshold relative to the largest eigenvalue
    swallows the physical low modes.  Measured against
    ``int (v'')^2`` the top of the spectrum stays near ``eps^2 / lambda^3``
    while the inertia is unchanged.  The Gram matrix is definite on the
    kept dofs because every good region has a pinned value at one end.
    """
    B, _, _ = assembly.gram_matrices(mesh)
    return sla.cholesky(B[idx][:, idx].toarray(), lower=True)


def metric_hessian(problem: ScaledProblem, state: EquilibriumState, topology: CrackTopology | None = None):
    """``L^-1 G L^-T`` for the bending metric factor ``L``; returns ``(matrix, kept dofs, L)``."""
    idx = kept_dofs(state, topology)
    if idx.size == 0:
        return np.zeros((0, 0)), idx, np.zeros((0, 0))
    L = metric_factor(state.mesh, idx)
    G = reduced_hessian(problem, state, topology)
    X = sla.solve_triangular(L, G, lower=True)
    Gt = sla.solve_triangular(L, X.T, lower=True)
    return 0.5 * (Gt + Gt.T), idx, L


def deflate(G: np.ndarray, modes: np.ndarray) -> np.ndarray:
    """Compress ``G`` onto the orthogonal complement of the columns of ``modes``.

    The result has the modes as exact null vectors; the rest of its
    spectrum is that of ``G`` on the complement.
    """
    Q, _ = np.linalg.qr(modes)
    GQ = G @ Q
    out = G - Q @ GQ.T - GQ @ Q.T + Q @ (Q.T @ GQ) @ Q.T
    return 0.5 * (out + out.T)


def assess(
    problem: ScaledProblem,
    state: EquilibriumState,
    topology: CrackTopology | None = None,
    zero_tol: float = 1e-8,
    diagnostics: bool = True,
) -> StabilityReport:
    """Stability verdict for one state.

    The reduced Hessian is measured in the bending metric of
    ``metric_factor``.  The discrete translation modes of floating regions
    are not exact null vectors, because the faces sit on nodes, so their
    eigenvalues are small but not round-off zeros.  They are therefore
    removed explicitly: the operator is compressed onto variations
    L2-orthogonal to every translation mode, whose ``P`` directions then
    count as the zero modes.  ``zero_mode_separation`` records, for the
    uncompressed spectrum, the ratio of the ``P``-th smallest ``|beta|`` to
    the next one; a ratio well below one confirms that the translation
    modes are the near-null directions; it costs a second
    eigendecomposition and is skipped when ``diagnostics`` is false.
    """
    topo = topology or crack_topology(state)
    P = count_floating_regions(topo)
    Gt, idx, L = metric_hessian(problem, state, topo)
    sep = float("nan")
    if P and idx.size:
        if diagnostics:
            raw = np.sort(np.abs(eigen_spectrum(Gt)))
            if len(raw) > P:
                sep = float(raw[P - 1] / raw[P])
        _, _, M = assembly.gram_matrices(state.mesh)
        Xi = np.stack([xi[idx] for xi in translation_modes(state, topo)], axis=1)
        # v is L2-orthogonal to xi  <=>  w = L^T v is orthogonal to L^-1 M xi
        Gt = deflate(Gt, sla.solve_triangular(L, M[idx][:, idx] @ Xi, lower=True))
    report = classify(eigen_spectrum(Gt), P, zero_tol)
    report.zero_mode_separation = sep
    return report
