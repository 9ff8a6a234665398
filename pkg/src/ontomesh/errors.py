"""Exception hierarchy shared by every ontomesh module."""


class OntomeshError(Exception):
    """Base class for all errors raised by ontomesh."""


class ParseError(OntomeshError):
    """A document is not well-formed."""


class ValidationError(OntomeshError):
    def __init__(self, invariant: str, offending: str):
        self.invariant = invariant
        self.offending = offending
        super().__init__(f"{invariant}: {offending!r}")


class CycleError(ValidationError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("subclass relation must be acyclic", " -> ".join(cycle))


class UnknownClassError(OntomeshError, KeyError):
    def __str__(self) -> str:
        return f"unknown class {self.args[0]!r}"


class UnknownInstanceError(OntomeshError, KeyError):
    def __str__(self) -> str:
        return f"unknown instance {self.args[0]!r}"


class EstimatorError(OntomeshError):
    """Unknown estimator or missing estimator resources."""


class IntegrationError(OntomeshError):
    """Invalid command list or failed integration stage."""


class ProtocolError(OntomeshError):
    """Malformed frame or message."""
