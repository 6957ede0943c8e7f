"""Linear combinations of ansatz circuits: expressibility, energy
minimization, and an ancilla-free overlap-measurement protocol, all on a
seeded statevector simulator.
"""

__version__ = "0.1.0"

from . import circuits, expressibility, lca, pcm, sim, vqe
from .errors import (
    CircuitFileError,
    DegenerateCombinationError,
    DegenerateRegionError,
    GaugeUndefinedError,
    TrainingAbortedError,
    UnknownTemplateError,
    UnstableDivisionError,
    UnsupportedGeneratorError,
)

__all__ = [
    "__version__",
    "circuits",
    "expressibility",
    "lca",
    "pcm",
    "sim",
    "vqe",
    "CircuitFileError",
    "DegenerateCombinationError",
    "DegenerateRegionError",
    "GaugeUndefinedError",
    "TrainingAbortedError",
    "UnknownTemplateError",
    "UnstableDivisionError",
    "UnsupportedGeneratorError",
]
