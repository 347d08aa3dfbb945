"""Energy, residual, tangent and second variation on the computational domain.

With ``s = y / lambda`` and ``u(s) = h(lambda s) - s`` the energy is

    E(u) = int [eps^2 / (2 lambda^3)] (u'')^2 + lambda W*((1 + u') / lambda) ds

The residual is ``lambda^3 dE/dU`` minus the nodal multiplier forces
``lambda^4 mu_k`` on the derivative dofs of active nodes, and minus the
element forces ``lambda^4 rho_e`` of the flat-element rows (see
``constraint_rows``).  In the bordered KKT matrix the multiplier unknowns
are ``-lambda^4`` times these so the matrix stays symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constitutive import ConstitutiveModel
from .errors import ConstraintViolation
from .mesh import GAUSS4, HermiteField, Mesh, QuadratureRule, shape_eval


@dataclass(frozen=True)
class ScaledProblem:
    epsilon: float
    lam: float
    model: ConstitutiveModel
    mesh: Mesh

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    def with_lambda(self, lam: float) -> "ScaledProblem":
        return ScaledProblem(self.epsilon, float(lam), self.model, self.mesh)


@dataclass
class KktSystem:
    """Bordered Newton system ``[[K, C^T], [C, 0]]`` with its residual."""

    matrix: sp.csr_matrix
    residual: np.ndarray
    active: np.ndarray
    n_field: int = field(default=0)


class _ElementTables:
    """Shape-function tables at the quadrature points of a uniform mesh."""

    _cache: dict = {}

    def __init__(self, mesh: Mesh, rule: QuadratureRule):
        N, dN, d2N = shape_eval(rule.points, mesh.h)
        self.N, self.B1, self.B2 = N, dN, d2N
        self.wh = rule.weights * mesh.h
        self.edofs = mesh.element_dofs()
        ne = mesh.n_elems
        self.rows = np.repeat(self.edofs, 4, axis=1).ravel()
        self.cols = np.tile(self.edofs, (1, 4)).ravel()
        self.shape = (mesh.n_dofs, mesh.n_dofs)
        self.ne = ne

    @classmethod
    def get(cls, mesh: Mesh, rule: QuadratureRule = GAUSS4) -> "_ElementTables":
        key = (mesh, len(rule.points))
        tab = cls._cache.get(key)
        if tab is None:
            if len(cls._cache) > 64:
                cls._cache.clear()
            tab = cls._cache[key] = cls(mesh, rule)
        return tab


def _dofs(u) -> np.ndarray:
    return u.dofs if isinstance(u, HermiteField) else np.asarray(u, dtype=float)


def quad_fields(problem: ScaledProblem, u):
    """``u'`` and ``u''`` at quadrature points, shape ``(n_elems, n_qp)``."""
    tab = _ElementTables.get(problem.mesh)
    c = _dofs(u)[tab.edofs]
    return c @ tab.B1.T, c @ tab.B2.T


def _scatter(tab: _ElementTables, r_e: np.ndarray) -> np.ndarray:
    # element e owns dofs 2e..2e+3; two strided adds keep the sum order fixed
    R = np.zeros(tab.shape[0])
    R[: 2 * tab.ne] += r_e[:, :2].ravel()
    R[2:] += r_e[:, 2:].ravel()
    return R


def energy(problem: ScaledProblem, u, check: bool = True, feas_tol: float = 1e-10) -> float:
    """Total energy of the field ``u`` at stretch ``problem.lam``."""
    lam, eps = problem.lam, problem.epsilon
    tab = _ElementTables.get(problem.mesh)
    up, upp = quad_fields(problem, u)
    H = (1.0 + up) / lam
    if check and H.min() < -feas_tol:
        raise ConstraintViolation(f"inverse strain {H.min():.3e} below zero at a quadrature point")
    Ws, _, _ = problem.model._inverse_ext(H)
    dens = eps**2 / (2.0 * lam**3) * upp**2 + lam * Ws
    return float(np.sum(dens @ tab.wh))


def field_residual(problem: ScaledProblem, u) -> np.ndarray:
    """``lambda^3 dE/dU`` over all field dofs, no boundary conditions."""
    lam, eps = problem.lam, problem.epsilon
    tab = _ElementTables.get(problem.mesh)
    up, upp = quad_fields(problem, u)
    _, Ss, _ = problem.model._inverse_ext((1.0 + up) / lam)
    r_e = (eps**2 * upp * tab.wh) @ tab.B2 + (lam**3 * Ss * tab.wh) @ tab.B1
    return _scatter(tab, r_e)


def boundary_dofs(mesh: Mesh) -> np.ndarray:
    return np.array([0, mesh.n_dofs - 2])


def flat_elements(active) -> np.ndarray:
    """Elements whose two end nodes are both in ``active``."""
    a = np.unique(np.asarray(active, dtype=int))
    return a[:-1][np.diff(a) == 1]


def _elems(active, elems):
    if elems is None:
        return flat_elements(active)
    return np.unique(np.asarray(elems, dtype=int))


def constraint_rows(mesh: Mesh, active, elems=None):
    """Linearized equality constraints for an active set.

    One row ``u'_k + 1 = 0`` per active node, then one row per active
    element setting its scaled middle Bernstein coefficient to zero (see
    ``element_margins``).  ``elems`` defaults to the elements between two
    active nodes.  Boundary value dofs are left out since they are held at
    zero.  Returns ``(C, c0)`` with the constraint values ``C @ U + c0``.
    """
    active = np.asarray(active, dtype=int)
    elems = _elems(active, elems)
    na, nf = len(active), len(elems)
    h3 = mesh.h / 3.0
    re = na + np.arange(nf)
    rows = np.concatenate([np.arange(na), re, re, re, re])
    cols = np.concatenate([2 * active + 1, 2 * elems + 2, 2 * elems, 2 * elems + 1, 2 * elems + 3])
    vals = np.concatenate([np.ones(na), np.ones(nf), -np.ones(nf), np.full(2 * nf, -h3)])
    # boundary values are pinned to zero by their own rows
    keep = ~np.isin(cols, boundary_dofs(mesh))
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    C = sp.csr_matrix((vals, (rows, cols)), shape=(na + nf, mesh.n_dofs))
    c0 = np.concatenate([np.ones(na), np.full(nf, h3)])
    return C, c0


def element_margins(mesh: Mesh, u) -> np.ndarray:
    """Scaled middle Bernstein coefficient of ``1 + u'`` on every element.

    ``1 + u'`` is quadratic on an element with Bernstein coefficients
    ``(1 + u'_a, b, 1 + u'_b)``; nonnegative coefficients make it
    nonnegative throughout.  Returns ``(h/3) b = u_b - u_a + h/3 - (h/3)(u'_a + u'_b)``.
    When both end slopes equal -1 a zero margin means the element is flat.
    """
    U = _dofs(u)
    v, d = U[0::2], U[1::2]
    h3 = mesh.h / 3.0
    return np.diff(v) + h3 - h3 * (d[:-1] + d[1:])


def residual(problem: ScaledProblem, u, mu, active, rho=None, elems=None) -> np.ndarray:
    """Full KKT residual: field rows, then one constraint row per active node
    and per active element.

    ``mu`` holds nodal multipliers and ``rho`` (optional, per element) the
    element multipliers; both enter with the factor ``lambda^4``.  Boundary
    rows hold ``u(s_min)`` and ``u(s_max)`` themselves.
    """
    mesh = problem.mesh
    U = _dofs(u)
    mu = np.asarray(mu, dtype=float)
    active = np.asarray(active, dtype=int)
    if U.shape != (mesh.n_dofs,) or mu.shape != (mesh.n_nodes,):
        raise ValueError("dimension mismatch between field, multipliers and mesh")
    rho = np.zeros(mesh.n_elems) if rho is None else np.asarray(rho, dtype=float)
    if rho.shape != (mesh.n_elems,):
        raise ValueError("dimension mismatch between element multipliers and mesh")
    elems = _elems(active, elems)
    C, c0 = constraint_rows(mesh, active, elems)
    R = field_residual(problem, U) - problem.lam**4 * (C.T @ np.concatenate([mu[active], rho[elems]]))
    bc = boundary_dofs(mesh)
    R[bc] = U[bc]
    return np.concatenate([R, C @ U + c0])


def _element_stiffness(problem: ScaledProblem, u, scale_tan: float):
    lam, eps = problem.lam, problem.epsilon
    tab = _ElementTables.get(problem.mesh)
    up, _ = quad_fields(problem, u)
    _, _, Ms = problem.model._inverse_ext((1.0 + up) / lam)
    bend = eps**2 * np.einsum("q,qi,qj->ij", tab.wh, tab.B2, tab.B2)
    k_e = bend[None, :, :] + np.einsum("eq,qi,qj->eij", scale_tan * Ms * tab.wh, tab.B1, tab.B1)
    # einsum's summation order can differ between (i, j) and (j, i)
    k_e = 0.5 * (k_e + k_e.transpose(0, 2, 1))
    return tab, k_e


def stiffness(problem: ScaledProblem, u) -> sp.csr_matrix:
    """Field block ``int eps^2 phi'' psi'' + lambda^2 M* phi' psi' ds`` (no BCs)."""
    tab, k_e = _element_stiffness(problem, u, problem.lam**2)
    return sp.coo_matrix((k_e.ravel(), (tab.rows, tab.cols)), shape=tab.shape).tocsr()


def tangent(problem: ScaledProblem, u, active, mu=None, rho=None, elems=None) -> KktSystem:
    """Symmetric bordered KKT matrix for the current active set.

    Boundary value dofs are eliminated symmetrically and replaced by unit
    diagonal entries, so the dimension is ``2 n_nodes + n_active + n_elems_active``.
    """
    mesh = problem.mesh
    U = _dofs(u)
    active = np.asarray(active, dtype=int)
    if U.shape != (mesh.n_dofs,):
        raise ValueError("dimension mismatch between field and mesh")
    keep = np.ones(mesh.n_dofs)
    keep[boundary_dofs(mesh)] = 0.0
    D = sp.diags(keep)
    K = D @ stiffness(problem, U) @ D + sp.diags(1.0 - keep)
    elems = _elems(active, elems)
    C, _ = constraint_rows(mesh, active, elems)
    A = sp.bmat([[K, C.T], [C, None]], format="csr")
    if mu is None:
        mu = np.zeros(mesh.n_nodes)
    return KktSystem(A, residual(problem, U, mu, active, rho, elems), active, mesh.n_dofs)


def second_variation_matrix(problem: ScaledProblem, u) -> sp.csr_matrix:
    """Matrix of ``(1/lambda^3) int eps^2 (v'')^2 + lambda^2 M* (v')^2 ds``."""
    return stiffness(problem, u) / problem.lam**3


def gram_matrices(mesh: Mesh):
    """Bending ``int phi'' psi''``, stiffness ``int phi' psi'`` and mass ``int phi psi``."""
    tab = _ElementTables.get(mesh)
    out = []
    for B in (tab.B2, tab.B1, tab.N):
        k = np.einsum("q,qi,qj->ij", tab.wh, B, B)
        k_e = np.broadcast_to(k, (tab.ne, 4, 4))
        out.append(sp.coo_matrix((k_e.ravel(), (tab.rows, tab.cols)), shape=tab.shape).tocsr())
    return tuple(out)
