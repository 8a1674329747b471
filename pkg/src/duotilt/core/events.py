"""Event specifications: which functional of the walk is being estimated.

All events are indicators.  ``direction="above"`` means the comparison
``>= level`` and ``"below"`` means ``<= level``; equality counts as a hit in
both cases, so a first-passage barrier at the starting point triggers at
step 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ContractError, ValidationError

__all__ = [
    "FixedTimeThreshold",
    "FirstPassageBeforeT",
    "JointPassageAndTerminal",
    "EventSpec",
    "event_horizon",
    "event_id",
    "compare",
]


def _check_direction(direction: str) -> None:
    if direction not in ("above", "below"):
        raise ValidationError(f"direction must be 'above' or 'below', got {direction!r}")


def compare(values: np.ndarray, level: float, direction: str) -> np.ndarray:
    """Elementwise threshold comparison with hit-at-equality semantics."""
    if direction == "above":
        return values >= level
    return values <= level


@dataclass(frozen=True)
class FixedTimeThreshold:
    """F = 1{ S_n[component] above/below threshold } evaluated only at step n."""

    n: int
    component: int
    threshold: float
    direction: str = "above"

    def __post_init__(self):
        if self.n <= 0:
            raise ValidationError("fixed-time horizon n must be positive")
        _check_direction(self.direction)


@dataclass(frozen=True)
class FirstPassageBeforeT:
    """F = 1{ tau_b <= T } with tau_b the first n >= 0 where S crosses the barrier."""

    component: int
    barrier: float
    horizon: int
    direction: str = "above"

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValidationError("first-passage horizon T must be positive")
        _check_direction(self.direction)


@dataclass(frozen=True)
class JointPassageAndTerminal:
    """Conjunction of a first passage within T and a terminal threshold at T.

    The path always runs to T (the terminal coordinate is needed) even when
    the passage occurs earlier.
    """

    passage: FirstPassageBeforeT
    terminal_component: int
    terminal_threshold: float
    terminal_direction: str = "below"

    def __post_init__(self):
        _check_direction(self.terminal_direction)


EventSpec = Union[FixedTimeThreshold, FirstPassageBeforeT, JointPassageAndTerminal]


def event_horizon(event: EventSpec) -> int:
    """Number of steps a path must be simulated for."""
    if isinstance(event, FixedTimeThreshold):
        return event.n
    if isinstance(event, FirstPassageBeforeT):
        return event.horizon
    if isinstance(event, JointPassageAndTerminal):
        return event.passage.horizon
    raise ContractError(f"unknown event type {type(event).__name__}")


def event_id(event: EventSpec) -> str:
    """Short stable identifier used in CSV reports."""
    if isinstance(event, FixedTimeThreshold):
        return f"fixed[{event.component}]{event.direction}{event.threshold:g}@n={event.n}"
    if isinstance(event, FirstPassageBeforeT):
        return f"passage[{event.component}]{event.direction}{event.barrier:g}@T={event.horizon}"
    if isinstance(event, JointPassageAndTerminal):
        p = event.passage
        return (
            f"joint(passage[{p.component}]{p.direction}{p.barrier:g},"
            f"terminal[{event.terminal_component}]{event.terminal_direction}"
            f"{event.terminal_threshold:g})@T={p.horizon}"
        )
    raise ContractError(f"unknown event type {type(event).__name__}")
