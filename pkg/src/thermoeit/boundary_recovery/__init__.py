from src.thermoeit.boundary_recovery.halfspace import (
    BoundaryTensorEstimate,
    HalfspaceProbe,
    estimate_boundary_tensor,
    halfspace_root,
)
from src.thermoeit.boundary_recovery.psi import probe_boundary_decay, psi_map, slab_window, unit_operator

__all__ = [
    "BoundaryTensorEstimate", "HalfspaceProbe", "estimate_boundary_tensor", "halfspace_root",
    "probe_boundary_decay", "psi_map", "slab_window", "unit_operator",
]
