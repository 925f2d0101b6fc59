"""Hybrid high-order solver for clamped Kirchhoff-Love plate bending on
general polygonal meshes."""

from .mesh import (PolygonalMesh, MeshError, mesh_stats, generate_unit_square,
                   generate_lshape_triangular, uniform_refine, read_mesh,
                   write_mesh)
from .basis import MaterialTensor, ElementBasis, FaceBasis
from .local import LocalKit, element_kit
from .assembly import (assemble, solve, build_dof_map, full_residual,
                       export_matrix, CondensedSystem, Solution, SolverError)
from .postproc import (ErrorReport, FluxReport, discrete_energy,
                       error_energy_norm, error_l2, error_reconstruction_l2,
                       jump_seminorm, flux_report, eoc)

__all__ = [
    "PolygonalMesh", "MeshError", "mesh_stats", "generate_unit_square",
    "generate_lshape_triangular", "uniform_refine", "read_mesh", "write_mesh",
    "MaterialTensor", "ElementBasis", "FaceBasis",
    "LocalKit", "element_kit",
    "assemble", "solve", "build_dof_map", "full_residual", "export_matrix",
    "CondensedSystem", "Solution", "SolverError",
    "ErrorReport", "FluxReport", "discrete_energy", "error_energy_norm",
    "error_l2", "error_reconstruction_l2", "jump_seminorm", "flux_report",
    "eoc",
]

__version__ = "0.1.0"
