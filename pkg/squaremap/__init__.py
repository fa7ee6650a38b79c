"""Area-preserving square parameterization of genus-0 and genus-1 meshes, with geometry images."""

from .config import SolverConfig
from .errors import SquareMapError
from .mesh import TriMesh

__version__ = "0.1.0"

__all__ = ["SolverConfig", "SquareMapError", "TriMesh", "__version__"]
