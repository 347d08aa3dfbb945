"""Natural-parameter continuation of the homogeneous and bifurcated branches.

Branch ``n`` is computed on the cell ``[0, 1/n]`` and extended to ``[0, 1]``
by odd reflection and ``2/n``-periodic tiling.  After switching onto the
branch just below the bifurcation load, the unbroken part is followed
downward until it stops existing (the breakage point ``N_n``).  The broken
part is then continued forward from there, each step opening the crack
gap by the stretch increment.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import assembly, cracks, postprocess, stability
from .activeset import EquilibriumState, SolverOptions, solve_equilibrium
from .assembly import ScaledProblem
from .constitutive import ConstitutiveModel
from .errors import DegenerateFace, NonConvergence, NotFound
from .mesh import HermiteField, Mesh, eval_field

log = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 6


class Side(str, enum.Enum):
    A = "A"
    B = "B"

    @property
    def sign(self) -> float:
        return 1.0 if self is Side.A else -1.0


@dataclass
class ContinuationPlan:
    """Parameters of a branch trace.

    ``elements_per_cell`` fixes the cell mesh for every branch; when left
    at ``None`` each branch ``n`` uses ``elements_total // n`` elements, so
    the extended mesh always has ``elements_total`` elements.
    ``switch_amplitude`` is relative to the cell length.
    """

    epsilon: float = 0.1
    lambda_start: float = 1.0
    lambda_end: float = 1.9
    step: float = 0.01
    n_max: int = 6
    elements_per_cell: int | None = None
    elements_total: int = 600
    switch_amplitude: float = 1e-2
    model: ConstitutiveModel = field(default_factory=ConstitutiveModel.paper_example)
    options: SolverOptions = field(default_factory=SolverOptions)
    zero_tol: float = 1e-8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.lambda_start >= 1.0:
            raise ValueError(f"lambda_start must be at least 1, got {self.lambda_start}")
        if not self.lambda_end >= self.lambda_start:
            raise ValueError("lambda_end must not be below lambda_start")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if not self.switch_amplitude > 0:
            raise ValueError("switch_amplitude must be positive")
        for n in range(1, self.n_max + 1):
            if self.cell_elements(n) < 10:
                raise ValueError(f"branch {n} would have fewer than 10 elements per cell")

    def cell_elements(self, n: int) -> int:
        if self.elements_per_cell is not None:
            return int(self.elements_per_cell)
        if self.elements_total % n:
            raise ValueError(f"{self.elements_total} elements cannot be split into {n} equal cells")
        return self.elements_total // n

    def cell_mesh(self, n: int) -> Mesh:
        return Mesh(self.cell_elements(n), 0.0, 1.0 / n)

    def full_mesh(self, n: int = 1) -> Mesh:
        return Mesh(n * self.cell_elements(n), 0.0, 1.0)

    def grid_value(self, k: int) -> float:
        return round(self.lambda_start + k * self.step, 12)

    def grid(self) -> np.ndarray:
        """Recorded stretch values from ``lambda_start`` to ``lambda_end``."""
        k = int(np.floor((self.lambda_end - self.lambda_start) / self.step + 1e-9))
        return np.array([self.grid_value(i) for i in range(k + 1)])

    def problem(self, lam: float, mesh: Mesh) -> ScaledProblem:
        return ScaledProblem(self.epsilon, float(lam), self.model, mesh)


@dataclass
class BranchSample:
    lam: float
    energy: float
    stress_mean: float
    stress_dev: float
    verdict: str
    P: int
    n_crack_faces: int
    n_material_cracks: int
    broken: bool
    state: EquilibriumState = field(repr=False, default=None)
    crack_set: list = field(default_factory=list)
    note: str = ""


@dataclass
class BranchRecord:
    branch: int
    side: str
    samples: list = field(default_factory=list)
    lambda_bifurcation: float = float("nan")
    lambda_breakage: float = float("nan")
    irreversible: bool = True

    def sort(self):
        self.samples.sort(key=lambda smp: (smp.lam, smp.broken))


@dataclass(frozen=True)
class Bifurcation:
    lam: float
    mode: int


# -- homogeneous branch ------------------------------------------------------
def homogeneous_state(problem: ScaledProblem) -> EquilibriumState:
    """``u = 0`` with no active constraints; the residual is checked."""
    mesh = problem.mesh
    st = EquilibriumState(problem.lam, HermiteField(mesh), branch=0, converged=True)
    r = float(np.linalg.norm(assembly.residual(problem, st.field, st.mu, st.active)))
    if r > 1e-12:
        raise NonConvergence(f"homogeneous residual {r:.3e} at lambda={problem.lam:.6g}", state=st, lam=problem.lam)
    st.residual_norm = r
    return st


def _banded(G) -> np.ndarray:
    """Upper banded storage of a symmetric sparse matrix (Hermite bandwidth 3)."""
    G = G.tocsr()
    n = G.shape[0]
    kd = 3
    ab = np.zeros((kd + 1, n))
    for k in range(kd + 1):
        ab[kd - k, k:] = G.diagonal(k)
    return ab


def _homogeneous_hessian(epsilon, model, mesh, lam):
    prob = ScaledProblem(epsilon, lam, model, mesh)
    keep = np.setdiff1d(np.arange(mesh.n_dofs), assembly.boundary_dofs(mesh))
    return assembly.second_variation_matrix(prob, np.zeros(mesh.n_dofs))[keep][:, keep], keep


def _negative_count(epsilon, model, mesh, lam) -> int:
    G, _ = _homogeneous_hessian(epsilon, model, mesh, lam)
    ev = sla.eigvals_banded(_banded(G), select="v", select_range=(-np.inf, 0.0))
    return int(len(ev))


def _mode_number(epsilon, model, mesh, lam, k) -> int:
    """Sign changes in the slope dofs of the ``k``-th lowest homogeneous mode."""
    G, keep = _homogeneous_hessian(epsilon, model, mesh, lam)
    _, vec = sla.eig_banded(_banded(G), select="i", select_range=(k - 1, k - 1))
    v = np.zeros(mesh.n_dofs)
    v[keep] = vec[:, 0]
    d = v[1::2]
    d = d[np.abs(d) > 1e-8 * np.abs(d).max()]
    return int(np.count_nonzero(np.diff(np.sign(d)) != 0))


def detect_bifurcations(
    epsilon: float,
    model: ConstitutiveModel,
    n_max: int,
    n_elems: int = 600,
    lam_min: float = 1.0,
    dlam: float = 0.01,
    lam_limit: float = 4.0,
    tol: float = 1e-6,
) -> list:
    """Loads where the homogeneous second variation loses its ``k``-th
    positive eigenvalue, ``k = 1..n_max``.

    The scan runs upward from ``lam_min`` in steps of ``dlam`` until
    ``n_max`` crossings are found; each is bisected to ``tol``.  Raises
    ``NotFound`` if fewer crossings occur below ``lam_limit``.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    mesh = Mesh(n_elems)

    def count(lam):
        return _negative_count(epsilon, model, mesh, lam)

    out = []
    lo, c_lo = lam_min, count(lam_min)
    if c_lo:
        raise NotFound(f"homogeneous state already unstable at lambda={lam_min}")
    while len(out) < n_max:
        hi = lo + dlam
        if hi > lam_limit:
            raise NotFound(f"only {len(out)} of {n_max} bifurcations below lambda={lam_limit}")
        c_hi = count(hi)
        for k in range(c_lo + 1, min(c_hi, n_max) + 1):
            a, b = lo, hi
            while b - a > tol:
                mid = 0.5 * (a + b)
                if count(mid) >= k:
                    b = mid
                else:
                    a = mid
            lam_k = 0.5 * (a + b)
            out.append(Bifurcation(lam_k, _mode_number(epsilon, model, mesh, b, k)))
        lo, c_lo = hi, c_hi
    return out


# -- branch switching and predictors -------------------------------------------
def cell_mode(mesh: Mesh) -> HermiteField:
    """First eigenmode of the cell, ``sin(pi s / L)``."""
    k = np.pi / mesh.length
    return HermiteField.interpolate(mesh, lambda s: np.sin(k * (s - mesh.s_min)), lambda s: k * np.cos(k * (s - mesh.s_min)))


def branch_switch(problem: ScaledProblem, lambda_n: float, n: int, side, amplitude: float) -> EquilibriumState:
    """Homogeneous state plus ``+-amplitude`` times the cell eigenmode.

    Side A has the positive sign, which lowers ``H`` at the right end of
    the cell.
    """
    side = Side(side)
    mode = cell_mode(problem.mesh)
    dofs = side.sign * amplitude * mode.dofs
    dofs[assembly.boundary_dofs(problem.mesh)] = 0.0
    return EquilibriumState(problem.lam, HermiteField(problem.mesh, dofs), branch=n, side=side.value, meta={"lambda_n": lambda_n})


def open_gap(state: EquilibriumState, lam1: float) -> EquilibriumState:
    """Predictor for the broken branch at ``lam1`` from ``state``.

    The good part keeps its shape in the deformed frame; the extra length
    ``(lam1 - lam0) L`` is inserted as empty space next to the crack face
    (the weakest node when nothing is broken yet).
    """
    mesh = state.mesh
    lam0 = state.lam
    L = mesh.length
    s = mesh.nodes - mesh.s_min
    act = state.active
    if act.size:
        kc = act.min() if act.max() == mesh.n_nodes - 1 else act.max()
    else:
        kc = int(np.argmin(state.inverse_strain_nodes))
    yc = lam0 * s[kc]
    D = (lam1 - lam0) * L
    y = lam1 * s
    flat = (y > yc) & (y < yc + D)
    yo = np.where(y <= yc, y, np.where(flat, yc, y - D))
    sig = np.clip(yo / lam0, 0.0, L)
    u, up, _ = eval_field(state.field, sig + mesh.s_min)
    d = np.empty(mesh.n_dofs)
    d[0::2] = sig + u - s
    d[1::2] = np.where(flat, -1.0, (lam1 / lam0) * (1.0 + up) - 1.0)
    d[assembly.boundary_dofs(mesh)] = 0.0
    active = np.flatnonzero(d[1::2] <= -1.0 + 1e-12)
    return EquilibriumState(lam1, HermiteField(mesh, d), active=active, branch=state.branch, side=state.side, meta=dict(state.meta))


# -- symmetric extension ---------------------------------------------------------
def extend_symmetric(cell_state: EquilibriumState, n: int) -> EquilibriumState:
    """Odd reflection and ``2/n``-periodic tiling of a cell state onto ``[0, 1]``.

    Multipliers are reflected evenly.  A nodal multiplier on an interior
    cell boundary is doubled, since the node collects the constraint force
    of both neighbouring cells.
    """
    cm = cell_state.mesh
    nc = cm.n_elems
    if not np.isclose(cm.length * n, 1.0, rtol=1e-12) or cm.s_min != 0.0:
        raise ValueError(f"cell [{cm.s_min}, {cm.s_max}] does not tile [0, 1] with n={n}")
    mesh = Mesh(n * nc, 0.0, 1.0)
    v, d = cell_state.field.values, cell_state.field.slopes
    V = np.empty(mesh.n_nodes)
    Dd = np.empty(mesh.n_nodes)
    mu = np.zeros(mesh.n_nodes)
    rho = np.empty(mesh.n_elems)
    for m in range(n):
        nodes = m * nc + np.arange(nc + 1)
        elems = m * nc + np.arange(nc)
        if m % 2 == 0:
            V[nodes], Dd[nodes] = v, d
            mu[nodes] += cell_state.mu
            rho[elems] = cell_state.rho
        else:
            V[nodes], Dd[nodes] = -v[::-1], d[::-1]
            mu[nodes] += cell_state.mu[::-1]
            rho[elems] = cell_state.rho[::-1]
    dofs = np.empty(mesh.n_dofs)
    dofs[0::2], dofs[1::2] = V, Dd
    cell_active = np.zeros(nc + 1, dtype=bool)
    cell_active[cell_state.active] = True
    cell_elem = np.zeros(nc, dtype=bool)
    cell_elem[cell_state.elems] = True
    act = np.concatenate([cell_active if m % 2 == 0 else cell_active[::-1] for m in range(n)])
    # shared boundary nodes appear twice in the concatenation; keep one copy
    keep = np.ones(len(act), dtype=bool)
    keep[(nc + 1) * np.arange(1, n)] = False
    act = act[keep]
    el = np.concatenate([cell_elem if m % 2 == 0 else cell_elem[::-1] for m in range(n)])
    return EquilibriumState(
        cell_state.lam,
        HermiteField(mesh, dofs),
        mu=mu,
        active=np.flatnonzero(act),
        rho=rho,
        elems=np.flatnonzero(el),
        branch=cell_state.branch,
        side=cell_state.side,
        converged=cell_state.converged,
        residual_norm=cell_state.residual_norm,
        newton_iterations=cell_state.newton_iterations,
        meta=dict(cell_state.meta),
    )


# -- sample evaluation -----------------------------------------------------------
def evaluate(plan: ContinuationPlan, state: EquilibriumState, broken: bool) -> BranchSample:
    """Energy, stress, crack topology and stability of a full-domain state."""
    prob = plan.problem(state.lam, state.mesh)
    # keep the cell residual and record the full-domain one in its place
    state.meta.setdefault("cell_residual", state.residual_norm)
    r = assembly.residual(prob, state.field, state.mu, state.active, state.rho, state.elems)
    state.residual_norm = float(np.linalg.norm(r))
    E = assembly.energy(prob, state.field)
    s_mean, s_dev = postprocess.stress(prob, state)
    note = ""
    try:
        topo = cracks.crack_topology(state)
    except DegenerateFace as exc:
        # a gap narrower than one element; still classified, but flagged
        topo = cracks.crack_topology(state, allow_degenerate=True)
        note = f"degenerate face: {exc}"
    report = stability.assess(prob, state, topo, plan.zero_tol, diagnostics=False)
    verdict, P = report.verdict.value, report.P
    n_faces, crack_set = len(topo.faces), list(topo.material_crack_set)
    return BranchSample(
        state.lam, E, s_mean, s_dev, verdict, P, n_faces, len(crack_set), broken, state, crack_set, note
    )


def homogeneous_branch(plan: ContinuationPlan, extra_loads=()) -> BranchRecord:
    """The trivial branch on the grid, plus any ``extra_loads`` in range
    (the bifurcation loads, so the diagram shows where stability is lost)."""
    rec = BranchRecord(0, "")
    mesh = plan.full_mesh(1)
    loads = set(plan.grid().tolist())
    loads.update(float(x) for x in extra_loads if plan.lambda_start <= x <= plan.lambda_end)
    for lam in sorted(loads):
        st = homogeneous_state(plan.problem(lam, mesh))
        rec.samples.append(evaluate(plan, st, broken=False))
    return rec


def _is_unbroken(state: EquilibriumState) -> bool:
    return state.active.size == 0 and state.elems.size == 0


def _on_branch(state: EquilibriumState, delta: float) -> bool:
    """Unbroken and not fallen back to the homogeneous state."""
    return _is_unbroken(state) and float(np.max(np.abs(state.field.values))) > 1e-3 * delta


def continue_branch(plan: ContinuationPlan, n: int, side, lambda_n: float | None = None) -> BranchRecord:
    """Trace branch ``n`` on one side of the pitchfork.

    Switches at the last grid load below ``lambda_n``, steps down along the
    unbroken branch (halving the step up to six times when a solve fails
    or the state touches the constraint), then continues the broken branch
    forward to ``plan.lambda_end``.  Samples inside the plan's range are
    extended to ``[0, 1]`` and evaluated.
    """
    side = Side(side)
    if lambda_n is None:
        bif = detect_bifurcations(plan.epsilon, plan.model, n, plan.full_mesh(1).n_elems)
        lambda_n = bif[n - 1].lam
    mesh = plan.cell_mesh(n)
    rec = BranchRecord(n, side.value, lambda_bifurcation=lambda_n)
    lo_rec, hi_rec = plan.lambda_start - 1e-12, plan.lambda_end + 1e-12

    def solve(lam, guess):
        return solve_equilibrium(plan.problem(lam, mesh), guess, plan.options)

    def record(st, broken):
        if lo_rec <= st.lam <= hi_rec:
            rec.samples.append(evaluate(plan, extend_symmetric(st, n), broken))

    # switch onto the branch at the grid load just below lambda_n
    k = int(np.ceil((lambda_n - plan.lambda_start) / plan.step - 1e-9)) - 1
    if k < 0:
        raise NotFound(f"bifurcation {lambda_n:.6g} lies below lambda_start")
    lam = plan.grid_value(k)
    delta = plan.switch_amplitude * mesh.length
    state = None
    for amp in (delta, 5.0 * delta):
        st = solve(lam, branch_switch(plan.problem(lam, mesh), lambda_n, n, side, amp))
        if _on_branch(st, delta):
            state = st
            break
    if state is None:
        raise NonConvergence(f"branch {n}{side.value} switch fell back to the homogeneous state", lam=lam)
    record(state, False)

    # unbroken branch, downward; aim at each grid load in turn but never
    # further than the current step, which is halved on every failure
    step = plan.step
    halvings = 0
    while state.lam - step >= 1.0:
        below = int(np.ceil((state.lam - plan.lambda_start) / plan.step - 1e-9)) - 1
        target = max(plan.grid_value(below), round(state.lam - step, 12))
        try:
            trial = solve(target, state)
            ok = _on_branch(trial, delta)
        except NonConvergence:
            ok = False
        if ok:
            state = trial
            if target == plan.grid_value(below):
                record(state, False)
            continue
        if halvings == MAX_STEP_HALVINGS:
            break
        halvings += 1
        step *= 0.5
    rec.lambda_breakage = state.lam

    # broken branch, forward from the breakage point
    k = int(np.floor((state.lam - plan.lambda_start) / plan.step + 1e-9)) + 1
    prev_topo = None
    current = state
    while True:
        lam = plan.grid_value(k)
        if lam > plan.lambda_end + 1e-12:
            break
        current = _solve_broken(plan, mesh, current, lam)
        # right at the breakage point a sub-element gap can close again, which
        # lands back on the unbroken branch already recorded above
        if not _is_unbroken(current):
            record(current, True)
        k += 1

    rec.sort()
    for smp in rec.samples:
        if not smp.broken:
            continue
        topo = cracks.crack_topology(smp.state, allow_degenerate=True)
        if prev_topo is not None and not cracks.check_irreversibility(prev_topo, topo, 0.5 * smp.state.mesh.h):
            rec.irreversible = False
            smp.note = (smp.note + " crack set shrank").strip()
        prev_topo = topo
    return rec


def _solve_broken(plan, mesh, state, lam):
    """Gap-opening predictor and solve; the step is subdivided on failure."""
    target = lam
    for attempt in range(MAX_STEP_HALVINGS + 1):
        n_sub = 2**attempt
        st = state
        try:
            for j in range(1, n_sub + 1):
                lam_j = state.lam + (target - state.lam) * j / n_sub
                st = solve_equilibrium(plan.problem(lam_j, mesh), open_gap(st, lam_j), plan.options)
            return st
        except NonConvergence as exc:
            err = exc
    raise NonConvergence(f"broken branch stalled at lambda={target:.6g}: {err}", state=getattr(err, "state", None), lam=target)


def trace_all(plan: ContinuationPlan, jobs: int = 1) -> tuple:
    """Homogeneous branch plus both sides of branches ``1..n_max``.

    Returns ``(bifurcations, records)``.  With ``jobs > 1`` branches are
    computed in separate processes; the result order does not depend on it.
    """
    bif = detect_bifurcations(plan.epsilon, plan.model, plan.n_max, plan.full_mesh(1).n_elems)
    for i, b in enumerate(bif):
        if b.mode != i + 1:
            log.warning("crossing %d at lambda=%.6f has a mode with %d slope sign changes", i + 1, b.lam, b.mode)
    tasks = [(plan, i + 1, side, b.lam) for i, b in enumerate(bif) for side in (Side.A, Side.B)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(continue_branch, *t) for t in tasks]
            hom = homogeneous_branch(plan, [b.lam for b in bif])
            branches = [f.result() for f in futs]
    else:
        hom = homogeneous_branch(plan, [b.lam for b in bif])
        branches = [continue_branch(*t) for t in tasks]
    return bif, [hom] + branches
