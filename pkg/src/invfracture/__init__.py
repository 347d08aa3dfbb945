"""Inverse-deformation fracture of a 1D bar: constrained equilibria,
branch continuation, crack bookkeeping and local stability."""

from .activeset import EquilibriumState, SolverOptions, kkt_report, solve_equilibrium
from .assembly import ScaledProblem
from .constitutive import ConstitutiveModel, ModelKind
from .continuation import (
    Bifurcation,
    BranchRecord,
    BranchSample,
    ContinuationPlan,
    Side,
    continue_branch,
    detect_bifurcations,
    extend_symmetric,
    trace_all,
)
from .cracks import CrackTopology, crack_topology, driving_force, translate_family
from .errors import (
    ConstraintViolation,
    DegenerateFace,
    DomainError,
    InvFractureError,
    NonConvergence,
    NotFound,
    SingularTangent,
    WindowExceeded,
)
from .mesh import HermiteField, Mesh
from .postprocess import DiagramRow, SolutionSnapshot, read_diagram, read_snapshot, write_records
from .stability import StabilityReport, Verdict, assess

__version__ = "0.1.0"

__all__ = [
    "Bifurcation",
    "BranchRecord",
    "BranchSample",
    "ConstitutiveModel",
    "ConstraintViolation",
    "ContinuationPlan",
    "CrackTopology",
    "DegenerateFace",
    "DiagramRow",
    "DomainError",
    "EquilibriumState",
    "HermiteField",
    "InvFractureError",
    "Mesh",
    "ModelKind",
    "NonConvergence",
    "NotFound",
    "ScaledProblem",
    "Side",
    "SingularTangent",
    "SolutionSnapshot",
    "SolverOptions",
    "StabilityReport",
    "Verdict",
    "WindowExceeded",
    "assess",
    "continue_branch",
    "crack_topology",
    "detect_bifurcations",
    "driving_force",
    "extend_symmetric",
    "kkt_report",
    "read_diagram",
    "read_snapshot",
    "solve_equilibrium",
    "trace_all",
    "translate_family",
    "write_records",
]
