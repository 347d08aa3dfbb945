"""Primal active-set Newton solver for the unilateral inverse-strain constraint.

Two families of linear inequalities discretize ``H >= 0``.  ``1 + u'`` is
quadratic on each element; its end Bernstein coefficients are the nodal
values, bounded by ``u'_k + 1 >= 0``, and the middle one gets its own
element bound.  Together they keep ``H >= 0`` everywhere, not only at
nodes.  The nodal bound alone lets a cubic dip below ``H = 0`` between two
broken nodes, because the potential rewards negative ``H``.  The element
multiplier acts as the multiplier density inside broken intervals.

For a trial active set the equality-constrained problem is solved by Newton
on the bordered KKT system.  Steps are clamped so inactive constraints stay
feasible; a constraint that blocks the step joins the active set.  After
each inner convergence all violated constraints are added, or else the one
with the most negative multiplier leaves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from . import assembly
from .assembly import ScaledProblem
from .errors import NonConvergence, SingularTangent
from .mesh import HermiteField

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    tol_abs: float = 1e-9
    tol_rel: float = 1e-9
    max_newton: int = 50
    max_activeset: int = 100
    activation_tol: float = 1e-12
    deactivation_tol: float = 1e-12
    max_halvings: int = 10

    def __post_init__(self):
        for name in ("tol_abs", "tol_rel", "activation_tol", "deactivation_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_newton < 1 or self.max_activeset < 1:
            raise ValueError("iteration limits must be at least 1")


@dataclass
class EquilibriumState:
    """A discrete KKT point: field, multipliers and active constraint sets.

    ``mu``/``active`` are per node, ``rho``/``elems`` per element.  When
    ``elems`` is not given it defaults to the elements between two active
    nodes.
    """

    lam: float
    field: HermiteField
    mu: np.ndarray = None
    active: np.ndarray = None
    rho: np.ndarray = None
    elems: np.ndarray = None
    branch: int = 0
    side: str = ""
    converged: bool = False
    residual_norm: float = float("nan")
    newton_iterations: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mesh = self.field.mesh
        self.mu = np.zeros(mesh.n_nodes) if self.mu is None else np.asarray(self.mu, dtype=float)
        self.rho = np.zeros(mesh.n_elems) if self.rho is None else np.asarray(self.rho, dtype=float)
        if self.active is None:
            self.active = np.zeros(0, dtype=int)
        self.active = np.unique(np.asarray(self.active, dtype=int))
        if self.elems is None:
            self.elems = assembly.flat_elements(self.active)
        self.elems = np.unique(np.asarray(self.elems, dtype=int))
        if self.mu.shape != (mesh.n_nodes,) or self.rho.shape != (mesh.n_elems,):
            raise ValueError("multiplier arrays do not match the mesh")

    @property
    def mesh(self):
        return self.field.mesh

    @property
    def inverse_strain_nodes(self) -> np.ndarray:
        """Nodal ``1 + u'`` (the inverse strain times lambda)."""
        return 1.0 + self.field.slopes

    def copy(self, **changes) -> "EquilibriumState":
        base = replace(
            self,
            field=self.field.copy(),
            mu=self.mu.copy(),
            active=self.active.copy(),
            rho=self.rho.copy(),
            elems=self.elems.copy(),
            meta=dict(self.meta),
        )
        return replace(base, **changes) if changes else base


def kkt_report(state: EquilibriumState) -> dict:
    """Max dual, primal and complementarity violations plus the residual norm.

    Both constraint families are included; element margins are rescaled
    to the middle Bernstein coefficient so they compare with ``1 + u'``.
    """
    mesh = state.mesh
    g = state.inverse_strain_nodes
    ge = assembly.element_margins(mesh, state.field) * (3.0 / mesh.h)
    return {
        "dual": float(max(0.0, -state.mu.min(), -state.rho.min())),
        "primal": float(max(0.0, -g.min(), -ge.min())),
        "complementarity": float(max(np.max(np.abs(state.mu * g)), np.max(np.abs(state.rho * ge)))),
        "residual": float(state.residual_norm),
    }


def _kkt_residual(problem, U, nu, C, c0):
    # nu = -lambda^4 [mu on active nodes, rho on active elements]
    R = assembly.field_residual(problem, U) + C.T @ nu
    bc = assembly.boundary_dofs(problem.mesh)
    R[bc] = U[bc]
    return np.concatenate([R, C @ U + c0])


def _factorize(problem, U, active, elems):
    kkt = assembly.tangent(problem, U, active, elems=elems)
    try:
        return spla.splu(kkt.matrix.tocsc())
    except RuntimeError as exc:
        raise SingularTangent(f"{exc} at lambda={problem.lam:.6g}") from exc


def _blocking(gap, dgap, free):
    """Largest feasible step fraction and the constraints that stop it."""
    shrink = free & (dgap < 0) & (gap + dgap < 0)
    if not np.any(shrink):
        return np.inf, np.zeros(0, dtype=int)
    ratios = np.full(gap.shape, np.inf)
    ratios[shrink] = np.maximum(gap[shrink], 0.0) / (-dgap[shrink])
    amin = float(ratios.min())
    return amin, np.flatnonzero(ratios <= amin * (1.0 + 1e-12) + 1e-300)


def solve_equilibrium(
    problem: ScaledProblem,
    guess: EquilibriumState,
    options: SolverOptions | None = None,
) -> EquilibriumState:
    """Find a KKT point of the energy at ``problem.lam`` starting from ``guess``.

    The active sets are inherited from the guess.  Raises ``NonConvergence``
    with the best iterate attached (flagged unconverged) when an iteration
    limit is hit.
    """
    opt = options or SolverOptions()
    mesh = problem.mesh
    h = mesh.h
    lam4 = problem.lam**4
    U = guess.field.dofs.copy()
    U[assembly.boundary_dofs(mesh)] = 0.0
    mu = guess.mu.copy()
    rho = guess.rho.copy()
    active = np.union1d(guess.active, np.flatnonzero(U[1::2] + 1.0 < -opt.activation_tol))
    elems = np.union1d(guess.elems, np.flatnonzero(assembly.element_margins(mesh, U) < -opt.activation_tol * h))

    n_newton = 0
    best = None
    initial_norm = None

    def make_state(converged, rnorm):
        m = np.zeros(mesh.n_nodes)
        r = np.zeros(mesh.n_elems)
        m[active] = mu[active]
        r[elems] = rho[elems]
        return EquilibriumState(
            lam=problem.lam,
            field=HermiteField(mesh, U.copy()),
            mu=m,
            active=active.copy(),
            rho=r,
            elems=elems.copy(),
            branch=guess.branch,
            side=guess.side,
            converged=converged,
            residual_norm=float(rnorm),
            newton_iterations=n_newton,
            meta=dict(guess.meta),
        )

    def unpack(nu):
        mu[:] = 0.0
        rho[:] = 0.0
        mu[active] = -nu[: len(active)] / lam4
        rho[elems] = -nu[len(active) :] / lam4

    for _outer in range(opt.max_activeset):
        C, c0 = assembly.constraint_rows(mesh, active, elems)
        nu = -lam4 * np.concatenate([mu[active], rho[elems]])
        F = _kkt_residual(problem, U, nu, C, c0)
        fnorm = float(np.linalg.norm(F))
        if initial_norm is None:
            initial_norm = fnorm
        tol = opt.tol_abs + opt.tol_rel * initial_norm
        restart = False
        inner_ok = fnorm <= tol
        it = 0
        while not inner_ok and it < opt.max_newton:
            it += 1
            n_newton += 1
            step = _factorize(problem, U, active, elems).solve(-F)
            if not np.all(np.isfinite(step)):
                raise SingularTangent(f"non-finite Newton step at lambda={problem.lam:.6g}")
            dU = step[: mesh.n_dofs]
            dnu = step[mesh.n_dofs :]

            # clamp the step so inactive constraints stay feasible
            free_n = np.ones(mesh.n_nodes, dtype=bool)
            free_n[active] = False
            free_e = np.ones(mesh.n_elems, dtype=bool)
            free_e[elems] = False
            a_n, block_n = _blocking(U[1::2] + 1.0, dU[1::2], free_n)
            a_e, block_e = _blocking(assembly.element_margins(mesh, U), assembly.element_margins(mesh, dU) - h / 3.0, free_e)
            alpha_max = min(a_n, a_e)
            if alpha_max < np.inf:
                U = U + alpha_max * dU
                unpack(nu + alpha_max * dnu)
                if a_n <= a_e:
                    U[2 * block_n + 1] = -1.0
                    active = np.union1d(active, block_n)
                if a_e <= a_n:
                    elems = np.union1d(elems, block_e)
                restart = True
                break

            alpha = 1.0
            for _ in range(opt.max_halvings):
                U_try = U + alpha * dU
                nu_try = nu + alpha * dnu
                F_try = _kkt_residual(problem, U_try, nu_try, C, c0)
                if np.linalg.norm(F_try) <= fnorm:
                    break
                alpha *= 0.5
            U, nu, F = U_try, nu_try, F_try
            fnorm = float(np.linalg.norm(F))
            unpack(nu)
            # the residual floor is ~ |K| eps_mach |U|, so a vanishing full
            # Newton update also counts as convergence
            small_step = alpha == 1.0 and np.linalg.norm(dU) <= opt.tol_abs + opt.tol_rel * np.linalg.norm(U)
            inner_ok = fnorm <= tol or small_step

        if restart:
            continue
        if best is None or fnorm < best[0]:
            best = (fnorm, make_state(False, fnorm))
        if not inner_ok:
            raise NonConvergence(
                f"Newton stalled at lambda={problem.lam:.6g} (|F|={fnorm:.3e})",
                state=best[1],
                lam=problem.lam,
            )

        viol_n = np.setdiff1d(np.flatnonzero(U[1::2] + 1.0 < -opt.activation_tol), active)
        viol_e = np.setdiff1d(np.flatnonzero(assembly.element_margins(mesh, U) < -opt.activation_tol * h), elems)
        if viol_n.size or viol_e.size:
            active = np.union1d(active, viol_n)
            elems = np.union1d(elems, viol_e)
            continue
        # single removal: the most negative multiplier over both families
        m_n = mu[active].min() if active.size else np.inf
        m_e = rho[elems].min() if elems.size else np.inf
        if min(m_n, m_e) < -opt.deactivation_tol:
            if m_n <= m_e:
                k = active[np.argmin(mu[active])]
                active = active[active != k]
                mu[k] = 0.0
            else:
                e = elems[np.argmin(rho[elems])]
                elems = elems[elems != e]
                rho[e] = 0.0
            continue
        # pin active slopes exactly; the linear solve leaves them ~1e-10 off
        U[2 * active + 1] = -1.0
        F = _kkt_residual(problem, U, -lam4 * np.concatenate([mu[active], rho[elems]]), C, c0)
        return make_state(True, float(np.linalg.norm(F)))

    raise NonConvergence(
        f"active set did not settle at lambda={problem.lam:.6g}",
        state=best[1] if best else make_state(False, float("nan")),
        lam=problem.lam,
    )
