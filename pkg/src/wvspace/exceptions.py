"""Typed errors raised across the package."""


class InadmissibleWeightError(ValueError):
    """A weight vanishes on an atom whose L2 norm does not."""

    def __init__(self, message, atoms=()):
        super().__init__(message)
        self.atoms = list(atoms)


class InactiveAtomError(ValueError):
    """The hyperplane of an atom misses the open domain."""


class BelowResolutionError(ValueError):
    """The grid is too coarse for the requested construction."""


class BudgetError(ValueError):
    """The neuron budget cannot realize even the coarsest dictionary."""
