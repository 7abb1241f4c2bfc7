"""Critical conditions for thermal explosion in a disk with a partially insulated wall."""
from .analysis import (
    CoreAnalysis,
    PhysicalScaling,
    ScalingFit,
    analyze_core,
    boundary_layer_thickness,
    classical_B,
    classical_solution,
    fit_scaling_law,
    lambda_from_physical,
    solve_radial,
)
from .continuation import (
    ContinuationTrace,
    CriticalEstimate,
    FoldFit,
    StepPolicy,
    extrapolate_in_n,
    fit_fold,
    newton_solve,
    trace_branch,
)
from .discretization import SolutionField, jacobian, residual
from .geometry import (
    BoundaryKind,
    BoundarySpec,
    PolarGrid,
    WallType,
    build_grid,
    build_sector_grid,
    classify_boundary,
)

__version__ = "0.1.0"
