"""Crack topology, driving forces, dissipation and translation families.

Broken nodes are those with ``u'_k + 1`` at (or below) a small threshold.
Consecutive broken nodes form broken intervals; their ends away from the
domain boundary are crack faces.  The material image ``x = s + u(s)`` is
constant over a broken interval, so every broken interval is one material
crack point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import assembly
from .activeset import EquilibriumState
from .assembly import ScaledProblem
from .errors import DegenerateFace, WindowExceeded
from .mesh import HermiteField


class Orientation(str, enum.Enum):
    GOOD_LEFT = "GoodLeft"
    GOOD_RIGHT = "GoodRight"


@dataclass(frozen=True)
class CrackFace:
    node: int
    s_face: float
    y_face: float
    x_face: float
    orientation: Orientation
    phi: float = float("nan")


@dataclass
class CrackTopology:
    """Broken/good partition of the computational domain.

    Intervals are ``(a, b)`` pairs in ``s``; ``broken_nodes`` and
    ``good_nodes`` hold the matching node-index ranges ``(first, last)``.
    """

    broken_intervals: list = field(default_factory=list)
    good_intervals: list = field(default_factory=list)
    faces: list = field(default_factory=list)
    material_crack_set: list = field(default_factory=list)
    broken_nodes: list = field(default_factory=list)
    good_nodes: list = field(default_factory=list)
    s_min: float = 0.0
    s_max: float = 1.0

    @property
    def is_broken(self) -> bool:
        return bool(self.broken_intervals)

    def broken_mask(self, n_nodes: int) -> np.ndarray:
        mask = np.zeros(n_nodes, dtype=bool)
        for a, b in self.broken_nodes:
            mask[a : b + 1] = True
        return mask

    def floating_regions(self) -> list:
        """Indices into ``good_intervals`` of regions with a face at both ends."""
        broken = {k for a, b in self.broken_nodes for k in (a, b)}
        return [i for i, (ka, kb) in enumerate(self.good_nodes) if ka in broken and kb in broken]


def _runs(idx: np.ndarray) -> list:
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return list(zip(starts.tolist(), ends.tolist()))


def crack_topology(
    state: EquilibriumState, tol_H: float = 1e-10, x_tol: float | None = None, allow_degenerate: bool = False
) -> CrackTopology:
    """Group broken nodes (``u'_k + 1 <= tol_H``) into intervals and faces.

    Material points closer than ``x_tol`` (default half an element) are
    merged, so the two faces of an internal crack give one crack point.
    Raises ``DegenerateFace`` for a broken interval made of a single node
    unless ``allow_degenerate`` is set.
    """
    mesh = state.mesh
    s = mesh.nodes
    lam = state.lam
    u = state.field.values
    runs = _runs(np.flatnonzero(state.inverse_strain_nodes <= tol_H))
    if x_tol is None:
        x_tol = 0.5 * mesh.h

    topo = CrackTopology(s_min=mesh.s_min, s_max=mesh.s_max)
    last = mesh.n_nodes - 1
    cursor = 0
    xs = []
    for a, b in runs:
        if a == b and not allow_degenerate:
            raise DegenerateFace(f"broken interval reduced to node {a} (s={s[a]:.6g})")
        if a > cursor:
            topo.good_intervals.append((float(s[cursor]), float(s[a])))
            topo.good_nodes.append((cursor, a))
        topo.broken_intervals.append((float(s[a]), float(s[b])))
        topo.broken_nodes.append((a, b))
        if a > 0:
            topo.faces.append(CrackFace(a, float(s[a]), lam * float(s[a]), float(s[a] + u[a]), Orientation.GOOD_LEFT))
        if b < last:
            topo.faces.append(CrackFace(b, float(s[b]), lam * float(s[b]), float(s[b] + u[b]), Orientation.GOOD_RIGHT))
        # h is constant over the interval; the midpoint node is representative
        m = (a + b) // 2
        xs.append(float(s[m] + u[m]) + 0.0)
        cursor = b
    if cursor < last or not runs:
        topo.good_intervals.append((float(s[cursor]), float(s[last])))
        topo.good_nodes.append((cursor, last))

    for x in xs:
        if not any(abs(x - y) <= x_tol for y in topo.material_crack_set):
            topo.material_crack_set.append(x)
    topo.material_crack_set.sort()
    return topo


# -- driving force -----------------------------------------------------------
def _broken_density(state: EquilibriumState, face: CrackFace) -> float:
    """Multiplier density on the broken side of ``face`` in y-domain units.

    The flat-element multiplier ``rho_e`` tested against ``phi'`` gives
    ``rho_e int phi' ds``, so the continuum density is ``lambda rho_e``.
    Uses the first element past the face with both end nodes broken.
    """
    ne = state.mesh.n_elems
    k = face.node
    if face.orientation is Orientation.GOOD_LEFT:
        cand = [k, k + 1]
    else:
        cand = [k - 1, k - 2]
    g = state.inverse_strain_nodes
    for e in cand:
        if 0 <= e < ne and g[e] <= 1e-10 and g[e + 1] <= 1e-10:
            return state.lam * float(state.rho[e])
    raise DegenerateFace(f"no fully broken element next to the face at s={face.s_face:.6g}")


def third_derivative_jump(state: EquilibriumState, face: CrackFace) -> float:
    """``[[h''']]`` across ``face`` (right minus left), y-domain units.

    ``h'''`` is zero on the broken side.  On the good side the element-wise
    constant ``u'''`` of the two nearest good elements is linearly
    extrapolated to the face and divided by ``lambda^3``.
    """
    t = state.field.third_derivative()
    k = face.node
    if face.orientation is Orientation.GOOD_LEFT:
        e1, e2 = k - 2, k - 3
    else:
        e1, e2 = k + 1, k + 2
    if min(e1, e2) < 0 or max(e1, e2) >= len(t):
        raise DegenerateFace(f"good region next to s={face.s_face:.6g} is shorter than three elements")
    # the element touching the face straddles it at sub-element scale, so
    # the two elements behind it are used; their centres sit at 1.5h and 2.5h
    good = 2.0 * t[e1] - t[e2]
    good /= state.lam**3
    if face.orientation is Orientation.GOOD_LEFT:
        return 0.0 - good
    return good - 0.0


def driving_force(state: EquilibriumState, face: CrackFace, epsilon: float | None = None):
    """``phi = [[mu]]`` at ``face``, plus the estimate ``-eps^2 [[h''']]`` when
    ``epsilon`` is given.

    The jump is right side minus left side in ``y``; the good side carries
    zero multiplier, so a face with the good region on its left has
    ``phi > 0`` and one with the good region on its right has ``phi < 0``.
    """
    dens = _broken_density(state, face)
    phi = dens if face.orientation is Orientation.GOOD_LEFT else -dens
    if epsilon is None:
        return phi
    return phi, -(epsilon**2) * third_derivative_jump(state, face)


def with_driving_forces(state: EquilibriumState, topo: CrackTopology) -> CrackTopology:
    faces = [CrackFace(f.node, f.s_face, f.y_face, f.x_face, f.orientation, driving_force(state, f)) for f in topo.faces]
    return replace(topo, faces=faces)


def dissipation_rate(phi: float, V: float):
    """``D = phi V`` and whether it is admissible (``D >= 0``)."""
    D = phi * V
    return D, bool(D >= 0.0)


def check_irreversibility(prev: CrackTopology, nxt: CrackTopology, tol_x: float) -> bool:
    """True when every material crack point of ``prev`` is still present in ``nxt``."""
    new = np.asarray(nxt.material_crack_set, dtype=float)
    for x in prev.material_crack_set:
        if new.size == 0 or np.min(np.abs(new - x)) > tol_x:
            return False
    return True


# -- translation families ------------------------------------------------------
def _region_window(topo: CrackTopology, region_index: int):
    """Node ranges of the broken intervals on either side of a floating region."""
    floating = topo.floating_regions()
    if not 0 <= region_index < len(floating):
        raise IndexError(f"no floating region {region_index}; there are {len(floating)}")
    ka, kb = topo.good_nodes[floating[region_index]]
    left = next(r for r in topo.broken_nodes if r[1] == ka)
    right = next(r for r in topo.broken_nodes if r[0] == kb)
    return left, right


def _resize_middle(a: np.ndarray, new_len: int) -> np.ndarray:
    """Grow or shrink ``a`` to ``new_len`` by repeating or dropping middle entries.

    Flat-interval multipliers are uniform away from the interval ends, so
    this keeps both end layers intact.
    """
    mid = len(a) // 2
    extra = new_len - len(a)
    if extra >= 0:
        return np.concatenate([a[:mid], np.full(extra, a[mid]), a[mid:]])
    return np.concatenate([a[:mid + extra], a[mid:]]) if mid + extra >= 0 else a[:new_len]


def translate_family(
    state: EquilibriumState,
    region_index: int,
    theta: float,
    topology: CrackTopology | None = None,
    problem: ScaledProblem | None = None,
):
    """Shift a floating good region by the whole number of elements nearest
    to ``theta`` (a deformed-length offset, positive to the right).

    The region's nodal dofs move rigidly in ``y``; the broken intervals on
    either side lengthen and shorten accordingly.  Raises ``WindowExceeded``
    when either neighbouring broken interval would drop below one element.
    Multipliers of the resized broken intervals are stretched from the old
    ones; with ``problem`` given they are instead refitted to the moved
    field (``refit_multipliers``), which stays exact when an interval
    shrinks to a few elements.
    """
    topo = topology or crack_topology(state)
    mesh = state.mesh
    h = mesh.h
    k = int(round(theta / (state.lam * h)))
    (la, lb), (ra, rb) = _region_window(topo, region_index)
    if k == 0:
        return state.copy()
    if lb + k - la < 1 or rb - (ra + k) < 1:
        raise WindowExceeded(
            f"shift of {k} elements leaves less than one element of empty space (allowed {la - lb + 1}..{rb - ra - 1})"
        )

    U = state.field.dofs
    v, d = U[0::2], U[1::2]
    s = mesh.nodes
    new_v, new_d = v.copy(), d.copy()
    mu, rho = state.mu.copy(), state.rho.copy()

    # good region with its two face nodes, moved rigidly in y:
    # s_new = s_old + k h and h is unchanged, so u_new = u_old - k h
    src = np.arange(lb, ra + 1)
    new_v[src + k] = v[src] - k * h
    new_d[src + k] = d[src]
    mu[src + k] = state.mu[src]
    rho[src[:-1] + k] = state.rho[src[:-1]]

    # flat intervals keep their material point x = s + u
    for lo, hi, lo2, hi2 in ((la, lb, la, lb + k), (ra, rb, ra + k, rb)):
        idx = np.arange(lo2, hi2 + 1)
        new_v[idx] = (s[lo] + v[lo]) - s[idx]
        new_d[idx] = -1.0
        mu[lo2 : hi2 + 1] = _resize_middle(state.mu[lo : hi + 1], hi2 - lo2 + 1)
        rho[lo2:hi2] = _resize_middle(state.rho[lo:hi], hi2 - lo2)

    def moved(ids, first, last, shift):
        ids = np.asarray(ids)
        return ids[(ids >= first) & (ids <= last)] + shift

    outside_n = state.active[(state.active < la) | (state.active > rb)]
    active = np.concatenate([outside_n, np.arange(la, lb + k + 1), moved(state.active, lb, ra, k), np.arange(ra + k, rb + 1)])
    outside_e = state.elems[(state.elems < la) | (state.elems >= rb)]
    elems = np.concatenate([outside_e, np.arange(la, lb + k), moved(state.elems, lb, ra - 1, k), np.arange(ra + k, rb)])

    dofs = np.empty_like(U)
    dofs[0::2], dofs[1::2] = new_v, new_d
    out = state.copy(field=HermiteField(mesh, dofs), mu=mu, rho=rho, active=np.unique(active), elems=np.unique(elems))
    return out if problem is None else refit_multipliers(problem, out)


def refit_multipliers(problem: ScaledProblem, state: EquilibriumState) -> EquilibriumState:
    """Least-squares multipliers for the field and active sets of ``state``.

    Solves ``lambda^4 C^T [mu; rho] = lambda^3 dE/dU`` over the non-boundary
    field rows; the remaining residual measures how far the field is from
    an equilibrium with these active sets.
    """
    mesh = problem.mesh
    C, _ = assembly.constraint_rows(mesh, state.active, state.elems)
    rows = np.setdiff1d(np.arange(mesh.n_dofs), assembly.boundary_dofs(mesh))
    A = problem.lam**4 * C.T.toarray()[rows]
    nu, *_ = np.linalg.lstsq(A, assembly.field_residual(problem, state.field)[rows], rcond=None)
    mu = np.zeros(mesh.n_nodes)
    rho = np.zeros(mesh.n_elems)
    na = len(state.active)
    mu[state.active] = nu[:na]
    rho[state.elems] = nu[na:]
    return state.copy(mu=mu, rho=rho)


def family_residual(problem: ScaledProblem, state: EquilibriumState) -> float:
    """KKT residual norm of ``state`` with its own multipliers and active sets."""
    r = assembly.residual(problem, state.field, state.mu, state.active, state.rho, state.elems)
    return float(np.linalg.norm(r))
