"""Exception types shared across the package.

Every error raised on a contract violation has a dedicated class here so
callers can distinguish configuration mistakes from numerically degenerate
inputs without string matching.
"""


class CircuitFileError(ValueError):
    """The circuit library file is malformed or fails validation."""


class UnknownTemplateError(KeyError):
    """Requested ansatz id is not present in the library."""


class UnsupportedGeneratorError(ValueError):
    """The gate has no single Pauli-string generator (e.g. controlled rotations)."""


class DegenerateCombinationError(ValueError):
    """The linear combination has vanishing norm (c'Sc below threshold)."""


class GaugeUndefinedError(ValueError):
    """A member state is (numerically) orthogonal to the gauge anchor."""


class UnstableDivisionError(ValueError):
    """A reconstruction step would divide by a near-zero overlap."""


class DegenerateRegionError(ValueError):
    """All fidelity samples coincide; adaptive binning has zero width."""


class TrainingAbortedError(RuntimeError):
    """Gradient descent hit a degenerate combination mid-run.

    Carries the partial energy trace so callers can inspect how far the
    run progressed before the abort.
    """

    def __init__(self, message, step, energies):
        super().__init__(message)
        self.step = step
        self.energies = list(energies)
