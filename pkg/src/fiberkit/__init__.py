"""fiberkit: myocardial fiber architecture, anisotropic activation, pointwise
active-stress mechanics and 0D closed-loop circulation."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConfigError,
    DataError,
    DegeneracyError,
    DivergenceError,
    FiberkitError,
    MeshError,
    ParseError,
    SolverError,
    ValidationError,
    WellPosednessError,
)
from .frames import Frame, Triad, angles_to_fibers, fibers_to_angles  # noqa: E402
from .geometry import TetMesh, box_mesh, generate_idealized_biventricle  # noqa: E402

__all__ = [
    "__version__", "ConfigError", "DataError", "DegeneracyError", "DivergenceError",
    "FiberkitError", "MeshError", "ParseError", "SolverError", "ValidationError",
    "WellPosednessError", "Frame", "Triad", "angles_to_fibers", "fibers_to_angles",
    "TetMesh", "box_mesh", "generate_idealized_biventricle",
]
