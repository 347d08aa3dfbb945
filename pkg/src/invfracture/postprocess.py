"""Stress, forward deformation and serialization of traced branches."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import assembly
from .activeset import EquilibriumState
from .assembly import ScaledProblem
from .cracks import CrackTopology, crack_topology
from .mesh import GAUSS4, HermiteField, Mesh, eval_field

DIAGRAM_HEADER = [
    "branch",
    "side",
    "lambda",
    "energy",
    "stress_mean",
    "stress_dev",
    "verdict",
    "P",
    "n_crack_faces",
    "n_material_cracks",
]


def stress_field(problem: ScaledProblem, state: EquilibriumState) -> np.ndarray:
    """Cauchy stress at every quadrature point, shape ``(n_elems, n_qp)``.

    ``sigma = eps^2 (H'' H - H'^2 / 2) + W*(H) - H S*(H)`` with
    ``H = (1 + u')/lambda``, ``H' = u''/lambda^2`` and ``H''`` the
    element-wise constant ``u'''/lambda^3``.
    """
    lam, eps = problem.lam, problem.epsilon
    up, upp = assembly.quad_fields(problem, state.field)
    u3 = state.field.third_derivative()[:, None]
    H = (1.0 + up) / lam
    H1 = upp / lam**2
    H2 = u3 / lam**3
    Ws, Ss, _ = problem.model._inverse_ext(H)
    return eps**2 * (H2 * H - 0.5 * H1 * H1) + Ws - Ss * H


def stress(problem: ScaledProblem, state: EquilibriumState):
    """Integral mean of the stress over the domain and its max deviation."""
    sig = stress_field(problem, state)
    mesh = problem.mesh
    mean = float(np.sum(sig @ (GAUSS4.weights * mesh.h)) / mesh.length)
    return mean, float(np.max(np.abs(sig - mean)))


@dataclass
class CrackJump:
    x: float
    f_minus: float
    f_plus: float

    @property
    def opening(self) -> float:
        return self.f_plus - self.f_minus


def forward_map(state: EquilibriumState, n_samples: int = 200, topology: CrackTopology | None = None):
    """Samples ``(x, f(x))`` of the forward deformation and its jumps.

    ``f`` inverts ``h`` on the good set.  Every broken interval is one jump
    at its material point, from the deformed position of its left end to
    that of its right end.  Returns ``(pairs, jumps, good_length)``.
    """
    topo = topology or crack_topology(state, allow_degenerate=True)
    lam = state.lam
    good_len = sum(b - a for a, b in topo.good_intervals)
    pairs = []
    for a, b in topo.good_intervals:
        m = max(2, int(round(n_samples * (b - a) / max(good_len, 1e-300))))
        s = np.linspace(a, b, m)
        u, _, _ = eval_field(state.field, s)
        pairs.extend(zip((s + u).tolist(), (lam * s).tolist()))
    jumps = []
    u_nodes = state.field.values
    s_nodes = state.mesh.nodes
    for (a, b), (ka, kb) in zip(topo.broken_intervals, topo.broken_nodes):
        x = float(s_nodes[(ka + kb) // 2] + u_nodes[(ka + kb) // 2])
        jumps.append(CrackJump(x, lam * a, lam * b))
    return pairs, jumps, lam * good_len


# -- records -------------------------------------------------------------------
@dataclass
class DiagramRow:
    branch: int
    side: str
    lam: float
    energy: float
    stress_mean: float
    stress_dev: float
    verdict: str
    P: int
    n_crack_faces: int
    n_material_cracks: int

    def __post_init__(self):
        if not self.stress_dev >= 0:
            raise ValueError("stress deviation must be nonnegative")

    def values(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class SolutionSnapshot:
    lam: float
    branch: int
    side: str
    s: np.ndarray
    u: np.ndarray
    du: np.ndarray
    mu: np.ndarray
    y: np.ndarray
    h: np.ndarray
    H: np.ndarray
    rho: np.ndarray = None
    active: np.ndarray = None
    elems: np.ndarray = None
    topology: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.s)
        for name in ("u", "du", "mu", "y", "h", "H"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"array {name} has length {arr.shape}, expected {n}")
            setattr(self, name, arr)
        self.s = np.asarray(self.s, dtype=float)
        self.rho = np.zeros(n - 1) if self.rho is None else np.asarray(self.rho, dtype=float)
        self.active = np.zeros(0, dtype=int) if self.active is None else np.asarray(self.active, dtype=int)
        self.elems = np.zeros(0, dtype=int) if self.elems is None else np.asarray(self.elems, dtype=int)
        if self.rho.shape != (n - 1,):
            raise ValueError("element multiplier array does not match the node count")
        if n and self.H.min() < -1e-10:
            raise ValueError(f"snapshot has H = {self.H.min():.3e} < 0")

    @classmethod
    def from_state(cls, state: EquilibriumState, topology: CrackTopology | None = None) -> "SolutionSnapshot":
        s = state.mesh.nodes
        u = state.field.values
        topo = topology or crack_topology(state, allow_degenerate=True)
        summary = {
            "broken_intervals": [list(iv) for iv in topo.broken_intervals],
            "good_intervals": [list(iv) for iv in topo.good_intervals],
            "faces": [
                {"s": f.s_face, "y": f.y_face, "x": f.x_face, "orientation": f.orientation.value} for f in topo.faces
            ],
            "material_crack_set": list(topo.material_crack_set),
        }
        return cls(
            state.lam,
            state.branch,
            state.side,
            s,
            u.copy(),
            state.field.slopes.copy(),
            state.mu.copy(),
            state.lam * s,
            s + u,
            state.inverse_strain_nodes / state.lam,
            state.rho.copy(),
            state.active.copy(),
            state.elems.copy(),
            summary,
        )

    def to_state(self) -> EquilibriumState:
        """Rebuild the equilibrium state on a uniform mesh over ``s``."""
        mesh = Mesh(len(self.s) - 1, float(self.s[0]), float(self.s[-1]))
        dofs = np.empty(mesh.n_dofs)
        dofs[0::2], dofs[1::2] = self.u, self.du
        return EquilibriumState(
            self.lam, HermiteField(mesh, dofs), mu=self.mu, active=self.active, rho=self.rho, elems=self.elems,
            branch=self.branch, side=self.side, converged=True,
        )

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SolutionSnapshot":
        d = dict(d)
        d["lam"] = d.pop("lambda")
        return cls(**d)


def snapshot_name(branch: int, side: str, lam: float) -> str:
    return f"branch{branch}{side}_lambda{float(lam)!r}.json"


def _write(path: str, text: str):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def diagram_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIAGRAM_HEADER)
    for r in rows:
        # repr gives the shortest decimal that round-trips
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()])
    return buf.getvalue()


def diagram_json(rows) -> str:
    objs = [dict(zip(DIAGRAM_HEADER, r.values())) for r in rows]
    return json.dumps(objs, indent=1) + "\n"


def write_records(rows, snapshots, out_dir: str, fmt: str = "csv") -> list:
    """Write the diagram table and one JSON file per snapshot; returns the paths."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc}") from exc
    path = os.path.join(out_dir, f"diagram.{fmt}")
    _write(path, diagram_csv(rows) if fmt == "csv" else diagram_json(rows))
    paths = [path]
    for snap in snapshots:
        p = os.path.join(out_dir, snapshot_name(snap.branch, snap.side, snap.lam))
        _write(p, json.dumps(snap.to_json()) + "\n")
        paths.append(p)
    return paths


def _row_from_strings(d: dict) -> DiagramRow:
    return DiagramRow(
        int(d["branch"]),
        d["side"],
        float(d["lambda"]),
        float(d["energy"]),
        float(d["stress_mean"]),
        float(d["stress_dev"]),
        d["verdict"],
        int(d["P"]),
        int(d["n_crack_faces"]),
        int(d["n_material_cracks"]),
    )


def read_diagram(path: str) -> list:
    """Parse a ``diagram.csv`` or ``diagram.json`` file back into rows."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if path.endswith(".json"):
        return [_row_from_strings(d) for d in json.loads(text)]
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != DIAGRAM_HEADER:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    return [_row_from_strings(d) for d in reader]


def read_snapshot(path: str) -> SolutionSnapshot:
    try:
        with open(path, encoding="utf-8") as fh:
            return SolutionSnapshot.from_json(json.load(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
