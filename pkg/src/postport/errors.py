"""Exception types raised by the simulator."""


class SimulationError(Exception):
    """Base class for all simulator errors."""


class InvalidIndex(SimulationError, IndexError):
    pass


class InvalidDimension(SimulationError, ValueError):
    pass


class LabelClash(SimulationError, ValueError):
    pass


class LabelNotFound(SimulationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class PostSelectionImpossible(SimulationError):
    """The requested post-selection has (numerically) zero probability."""


class ResourceLimit(SimulationError):
    """An operator would exceed the configured memory cap."""


class ProtocolOrderError(SimulationError):
    """An event log violates the temporal or causal rules of a protocol."""
