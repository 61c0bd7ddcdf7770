"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations

from typing import Any, Sequence


class DiftError(Exception):
    """Base class for all errors raised by diftgame."""


class ParseError(DiftError):
    """Input could not be decoded in the declared format."""


class ValidationError(DiftError):
    """A decoded graph violates one of the model invariants."""

    def __init__(self, invariant: str, element: Any = None, detail: str = "") -> None:
        self.invariant = invariant
        self.element = element
        msg = f"invariant violated: {invariant}"
        if element is not None:
            msg += f" (offending element: {element!r})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NoAttackPath(DiftError):
    """No entry point reaches any destination."""


class CyclicGraph(DiftError):
    def __init__(self, witness: Sequence[Any]) -> None:
        self.witness = list(witness)
        super().__init__(f"graph contains a cycle: {' -> '.join(map(str, self.witness))}")


class PathExplosion(DiftError):
    def __init__(self, limit: int) -> None:
        self.limit = limit
        super().__init__(f"more than {limit} attack paths")


class Disconnected(DiftError):
    """The source cannot reach the sink, so every cut is degenerate."""


class NoFeasibleCut(DiftError):
    """Every source-sink path crosses only nodes that cannot be analyzed."""


class EmptyCut(DiftError):
    pass


class NoQualifyingPath(DiftError):
    """No attack path crosses exactly one trap node."""


class IllegalAction(DiftError):
    pass


class StrategyError(DiftError):
    """A strategy breaks the per-state normalization or sign rules."""


class InvalidTheta(DiftError):
    pass


class ConfigMismatch(DiftError):
    """An experiment config refers to nodes or paths the graph lacks."""


class InstanceTooLarge(DiftError):
    pass
