"""Parameter server with clock- and value-bounded consistency models."""

from .core import ParamKey, ParamTable, UpdateRecord, VectorClock, WorkerId
from .errors import (
    BoundViolation, ConfigError, ContractViolation, DecodeError, MagnitudeCapError,
    OutsideSimulation, ProtocolError, SimulationDeadlock, StalenessUnavailable,
)
from .policy import MAGNITUDE, SIGNED, ConsistencyPolicy, Model
from .topology import TableSpec, Topology

__version__ = "0.1.0"

__all__ = [
    "BoundViolation", "ConfigError", "ConsistencyPolicy", "ContractViolation", "DecodeError",
    "MAGNITUDE", "MagnitudeCapError", "Model", "OutsideSimulation", "ParamKey", "ParamTable",
    "ProtocolError", "SIGNED", "SimulationDeadlock", "StalenessUnavailable", "TableSpec",
    "Topology", "UpdateRecord", "VectorClock", "WorkerId",
]
