"""
Core types for the graphflow engine.

These are the records every verification run is built from:
- Request: Typed unit of work (a suite invocation, a simulation query)
- Emission: Typed output record from a pipeline (a test report, a kernel value)
- State: Typed accumulated context between requests

Requests and emissions are immutable and serializable. No wall-clock
timestamps are stored, so a rerun with the same seeds serializes to the
same bytes.

The error hierarchy used across the package also lives here.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Generic, TypeVar

T = TypeVar("T")  # Request payload type
U = TypeVar("U")  # Emission payload type
S = TypeVar("S")  # State type


class GraphflowError(Exception):
    """Base class for every error raised by graphflow_engine."""


class ConfigError(GraphflowError, ValueError):
    """Malformed configuration: missing alpha entries, bad lattice steps, bad JSON shapes."""


class HorizonError(GraphflowError, ValueError):
    """A time lies outside the noise horizon or is finer than the resolved level."""


class LatticeError(GraphflowError, ValueError):
    """A point is off the lattice or outside the domain of a star chart."""


class InvariantViolation(GraphflowError):
    """A constructed object breaks one of its stated invariants."""


def _serialize(value: Any) -> Any:
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if hasattr(value, "__dataclass_fields__"):
        return asdict(value)
    return value


@dataclass(frozen=True)
class Request(Generic[T]):
    """
    An immutable unit of work entering a pipeline.

    Requests carry:
    - A typed payload (suite parameters, a query)
    - A source identifier (cli, tests, a caller name)
    - A deterministic request_id used as the prefix of every emission id
    - Optional metadata

    Example:
        request = Request(
            payload=SuiteRequest(suite="sbm", n=2000, seed=7),
            source="cli",
            request_id="sbm-7",
        )
    """

    payload: T
    source: str
    request_id: str
    metadata: Dict[str, Any] = field(default_factory=dict)

    def with_metadata(self, **kwargs: Any) -> Request[T]:
        """Return a new request with additional metadata."""
        return Request(
            payload=self.payload,
            source=self.source,
            request_id=self.request_id,
            metadata={**self.metadata, **kwargs},
        )

    def to_dict(self) -> Dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "request_id": self.request_id,
            "source": self.source,
            "payload": _serialize(self.payload),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], payload_factory: Callable[[Any], T]) -> Request[T]:
        """Deserialize from dictionary."""
        return cls(
            request_id=data["request_id"],
            source=data["source"],
            payload=payload_factory(data["payload"]),
            metadata=data.get("metadata", {}),
        )


@dataclass(frozen=True)
class Emission(Generic[U]):
    """
    An immutable output record from a pipeline.

    Emissions carry the computed payload, the request_id that caused them,
    a dotted emission type for filtering downstream, and metadata holding
    the trace of the stage that produced them.
    """

    payload: U
    caused_by: str
    emission_type: str
    emission_id: str
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "emission_id": self.emission_id,
            "caused_by": self.caused_by,
            "emission_type": self.emission_type,
            "payload": _serialize(self.payload),
            "metadata": self.metadata,
        }


@dataclass
class State(Generic[S]):
    """
    Mutable accumulated context between requests.

    State is the only mutable thing in the engine. The version counter
    increments on every update.
    """

    value: S
    version: int = 0

    def update(self, new_value: S) -> State[S]:
        """Update state with new value, incrementing version. Returns self for chaining."""
        self.value = new_value
        self.version += 1
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Serialize to dictionary."""
        return {"value": _serialize(self.value), "version": self.version}

