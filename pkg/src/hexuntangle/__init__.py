"""Validity certification and untangling of hexahedral meshes."""
from .energy import ActiveTetSet, EnergyModel, EnergyParams, chi, f_eps, g_eps, mesh_energy, mesh_energy_gradient
from .mesh import HexMesh, MeshError, compute_boundary, load_mesh, save_mesh
from .metrics import BoundaryMovementReport, boundary_report, displacement, neighbor_scale
from .optimizer import OptimizeBudget, OptimizeOutcome, minimize
from .tets import TetPattern, TetTable, enumerate_tet_patterns
from .untangle import UntangleConfig, UntangleResult, Untangler, build_blobs, fast_epsilon, untangle, update_epsilon
from .validity import HexClass, ValidityReport, bezier_validity, classify_hexes, mesh_validity

__version__ = "0.1.0"

__all__ = [
    "ActiveTetSet",
    "BoundaryMovementReport",
    "EnergyModel",
    "EnergyParams",
    "HexClass",
    "HexMesh",
    "MeshError",
    "OptimizeBudget",
    "OptimizeOutcome",
    "TetPattern",
    "TetTable",
    "UntangleConfig",
    "UntangleResult",
    "Untangler",
    "ValidityReport",
    "bezier_validity",
    "boundary_report",
    "build_blobs",
    "chi",
    "classify_hexes",
    "compute_boundary",
    "displacement",
    "enumerate_tet_patterns",
    "f_eps",
    "fast_epsilon",
    "g_eps",
    "load_mesh",
    "mesh_energy",
    "mesh_energy_gradient",
    "mesh_validity",
    "minimize",
    "neighbor_scale",
    "save_mesh",
    "untangle",
    "update_epsilon",
]
