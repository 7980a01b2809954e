"""What the adversary can know, where and when.

The adversary controls all space outside the actors' interiors, so anything
an actor emits becomes observable at the emission event and spreads at light
speed from there.  The :class:`InfoLedger` records that first-observation
event per datum; :func:`validate_injection` is the light-cone check every
adversarial message must pass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import CausalityViolation, ConfigurationError
from .spacetime import SpacetimeEvent, causally_accessible, exact, light_cone_deficit


class Scenario(enum.Enum):
    I = "I"
    II = "II"


@dataclass(frozen=True)
class AdversaryCapabilities:
    """Scenario I: tag immobile.  Scenario II: tag movable at speed <= ``speed_bound``."""

    scenario: Scenario = Scenario.I
    speed_bound: object = None
    can_drop_messages: bool = False

    def problems(self, c=1) -> list[tuple[str, str]]:
        out = []
        if self.scenario is Scenario.II:
            if self.speed_bound is None:
                out.append(("adversary.speed_bound", "scenario II needs a speed bound v"))
            else:
                v = exact(self.speed_bound)
                if not 0 < v <= exact(c):
                    out.append(("adversary.speed_bound", f"need 0 < v <= c, got v={self.speed_bound}"))
        elif self.speed_bound is not None:
            out.append(("adversary.speed_bound", "scenario I keeps the tag immobile; v must be unset"))
        return out

    def check(self, c=1):
        problems = self.problems(c)
        if problems:
            raise ConfigurationError(problems)

    @property
    def can_move_tag(self) -> bool:
        return self.scenario is Scenario.II


@dataclass(frozen=True)
class InfoLedgerEntry:
    datum: str
    origin: SpacetimeEvent


class InfoLedger:
    """datum id -> event where it first left an actor's private state."""

    def __init__(self):
        self._entries: dict[str, SpacetimeEvent] = {}

    def record(self, datum: str, event: SpacetimeEvent) -> None:
        self._entries.setdefault(datum, event)

    def origin(self, datum: str) -> SpacetimeEvent | None:
        return self._entries.get(datum)

    def __contains__(self, datum):
        return datum in self._entries

    def __len__(self):
        return len(self._entries)

    def entries(self) -> list[InfoLedgerEntry]:
        return [InfoLedgerEntry(d, e) for d, e in self._entries.items()]


def validate_injection(refs, emit: SpacetimeEvent, ledger: InfoLedger, geom) -> None:
    """Raise :class:`CausalityViolation` unless every referenced datum is in
    the past light cone of ``emit``.  An empty ``refs`` (pure local
    randomness) always passes."""
    for datum in refs:
        origin = ledger.origin(datum)
        if origin is None:
            raise CausalityViolation(
                datum, math.inf, f"datum {datum!r} has never been emitted; the adversary cannot know it"
            )
        if not causally_accessible(origin, emit, geom):
            raise CausalityViolation(datum, light_cone_deficit(origin, emit, geom))
