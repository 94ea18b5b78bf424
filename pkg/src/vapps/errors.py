"""Exception hierarchy shared by every layer of the parameter server."""


class ContractViolation(Exception):
    """A caller broke a documented precondition."""


class MagnitudeCapError(ContractViolation):
    """An update exceeded the table's configured magnitude cap ``u``."""


class ProtocolError(Exception):
    """A peer sent something the protocol forbids (seq gap, bad routing)."""


class DecodeError(ProtocolError):
    """A frame could not be decoded into a complete message."""


class ConfigError(Exception):
    pass


class StalenessUnavailable(Exception):
    """A pull could not be satisfied before the socket-mode timeout."""


class SimulationDeadlock(Exception):
    """Every worker is blocked and no message is in flight."""


class OutsideSimulation(Exception):
    """An omniscient audit was requested without a global view."""


class BoundViolation(AssertionError):
    """An asserted consistency or convergence bound did not hold."""
