"""Exception types raised by the simulator."""


class SimulationError(RuntimeError):
    """Base class for failures during a simulation run."""


class PacketError(ValueError):
    """Invalid initial wave packet (too narrow or touching the boundary)."""


class GridMismatchError(ValueError):
    pass


class NonFinitePotentialError(SimulationError):
    pass


class NodeRegionError(SimulationError):
    """The Bohmian velocity is undefined where the density is below the floor."""


class TrajectoryOutOfGridError(SimulationError):
    pass


class RegimeViolationError(ValueError):
    """The charge is outside the linear (large-surface) flux regime."""


class TooCloseToPlaneError(ValueError):
    pass


class ProbeBlowupError(SimulationError):
    pass


class WindowTooShortError(ValueError):
    pass


class VanishingNormError(SimulationError):
    pass


class InsufficientDataError(ValueError):
    pass


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration files."""
