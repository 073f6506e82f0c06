"""Port-Hamiltonian continuum mechanics on structured grids."""
from phcm.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
