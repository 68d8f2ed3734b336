"""Numerical laboratory for a radial three-wave Schrodinger system in four
dimensions: ground states, linearized spectrum, time evolution, virial
identities, modulation and the special threshold solutions."""

__version__ = "0.1.0"

from .radial import Field3, MassTriple, RadialGrid, make_grid  # noqa: E402
from .states import GroundStateBundle, balanced_grid, functionals, ground_state  # noqa: E402

__all__ = [
    "Field3",
    "GroundStateBundle",
    "MassTriple",
    "RadialGrid",
    "__version__",
    "balanced_grid",
    "functionals",
    "ground_state",
    "make_grid",
]
