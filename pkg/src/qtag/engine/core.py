"""Deterministic discrete-event core.

One global queue ordered by ``(time, actor id, sequence number)``.  Times are
:class:`fractions.Fraction` so that "arrives at the same moment" is an exact
equality.  Every emitted message enters the information ledger at its
emission event before any delivery is scheduled.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable

from ..causality import AdversaryCapabilities, InfoLedger, validate_injection
from ..errors import CapabilityViolation, EngineError
from ..mac import MacTag
from ..spacetime import Geometry, SpacetimeEvent, exact, exact_delay, exact_point

ADVERSARY = "E"
_TICKS = 10**12
TAG = "T"


def station_id(i: int) -> str:
    return f"A{i}"


def fmt_num(x) -> str:
    return str(exact(x))


@dataclass(frozen=True)
class Message:
    """A protocol or adversarial message.

    ``datums`` lists the information this message makes public when emitted;
    ``refs`` lists the already-public information an injection was computed
    from (checked against the light cone).
    """

    kind: str
    sender: str
    round: int | None = None
    bit: int | None = None
    side: int | None = None
    mac: MacTag | None = None
    datums: tuple = ()
    refs: tuple = ()
    onward: str | None = None
    via: str | None = None

    def passed_through(self, actor: str) -> "Message":
        """The same signal continuing past a switched-off actor; reveals nothing new."""
        return replace(self, datums=(), refs=(), via=actor)

    def record(self) -> dict:
        out = {"kind": self.kind, "sender": self.sender}
        if self.via is not None:
            out["via"] = self.via
        if self.round is not None:
            out["round"] = self.round
        if self.bit is not None:
            out["bit"] = self.bit
        if self.side is not None:
            out["side"] = self.side
        if self.mac is not None:
            out["mac"] = self.mac.hex()
        return out


@dataclass(frozen=True)
class Emission:
    """What an observer sees: the emission event, the message and its addressee."""

    event: SpacetimeEvent
    message: Message
    destination: str


class CountingRandom:
    """Seeded RNG that counts draws so traces can report them."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self.draws = 0

    def bit(self) -> int:
        self.draws += 1
        return self._rng.getrandbits(1)

    def randrange(self, n: int) -> int:
        self.draws += 1
        return self._rng.randrange(n)

    def random(self) -> float:
        self.draws += 1
        return self._rng.random()

    def getrandbits(self, k: int) -> int:
        self.draws += 1
        return self._rng.getrandbits(k)


class Actor:
    """Base class for stations, the tag and helper actors."""

    id: str = "?"

    def setup(self, sim: "Simulator") -> None:
        pass

    def on_deliver(self, sim: "Simulator", msg: Message, t: Fraction) -> None:
        pass

    def on_wake(self, sim: "Simulator", token, t: Fraction) -> None:
        pass


@dataclass
class _Move:
    actor: str
    position: tuple


class Simulator:
    def __init__(
        self,
        geom: Geometry,
        seed: int = 0,
        *,
        trace: bool = True,
        capabilities: AdversaryCapabilities | None = None,
        max_events: int | None = None,
    ):
        self.geom = geom
        self.c = geom.exact_c
        self.rng = CountingRandom(seed)
        self.capabilities = capabilities or AdversaryCapabilities()
        self.ledger = InfoLedger()
        self.trace: list[dict] | None = [] if trace else None
        self.observers: list[Callable[["Simulator", Emission], None]] = []
        self.actors: dict[str, Actor] = {}
        self.positions: dict[str, tuple] = {}
        self.shielded: set[str] = set()
        self.max_events = max_events
        self.now = Fraction(0)
        self.event_count = 0
        self.last_move: dict[str, Fraction] = {}
        self._queue: list = []
        self._seq = 0
        self._started = False
        self._dropped: set[int] = set()

    # -- actors ---------------------------------------------------------
    def add_actor(self, actor: Actor, position) -> Actor:
        if actor.id in self.actors:
            raise EngineError(f"duplicate actor {actor.id}")
        self.actors[actor.id] = actor
        self.positions[actor.id] = exact_point(position)
        return actor

    def position_of(self, actor_id: str) -> tuple:
        return self.positions[actor_id]

    # -- tracing --------------------------------------------------------
    def record(self, kind: str, t, x, actor: str, **detail) -> None:
        if self.trace is None:
            return
        rec = {
            "i": len(self.trace),
            "kind": kind,
            "t": fmt_num(t),
            "x": [fmt_num(v) for v in x],
            "actor": actor,
            "rng": self.rng.draws,
        }
        rec.update(detail)
        self.trace.append(rec)

    # -- scheduling -----------------------------------------------------
    def _push(self, t: Fraction, actor: str, kind: str, payload) -> int:
        t = exact(t)
        if self._started and t < self.now:
            raise EngineError(f"cannot schedule {kind} at {t} before now={self.now}")
        self._seq += 1
        # Integer tick first: monotone in t and much cheaper to compare than Fraction.
        tick = t.numerator * _TICKS // t.denominator
        heapq.heappush(self._queue, (tick, t, actor, self._seq, kind, payload))
        return self._seq

    def emit(self, msg: Message, at, src_pos, dst: str) -> int:
        """Schedule ``msg`` to leave ``src_pos`` at time ``at`` toward actor ``dst``.

        ``dst`` may be :data:`ADVERSARY`, meaning the emission is only
        observed (captured at the source by the adversary's relay).
        """
        return self._push(at, msg.sender, "emit", (msg, exact_point(src_pos), dst))

    schedule_send = emit

    def wake(self, actor_id: str, at, token=None) -> int:
        return self._push(at, actor_id, "wake", token)

    def inject(self, msg: Message, event: SpacetimeEvent, dst: str) -> int:
        """Adversarial emission; rejected unless causally valid *now*."""
        validate_injection(msg.refs, event, self.ledger, self.geom)
        return self.emit(msg, event.exact_t, event.exact_x, dst)

    def relocate(self, actor_id: str, position, depart, arrive) -> None:
        """Move an actor (the tag) from its current position, speed-checked."""
        caps = self.capabilities
        if not caps.can_move_tag:
            raise CapabilityViolation(f"scenario {caps.scenario.value} forbids moving {actor_id}")
        depart, arrive = exact(depart), exact(arrive)
        start = self.positions[actor_id]
        target = exact_point(position)
        if depart < self.last_move.get(actor_id, depart):
            raise CapabilityViolation("relocations must not overlap")
        duration = arrive - depart
        sq = sum((a - b) ** 2 for a, b in zip(start, target))
        v = exact(caps.speed_bound)
        if duration < 0 or sq > (v * duration) ** 2:
            raise CapabilityViolation(
                f"moving {actor_id} by {float(sq) ** 0.5:.6g} in {float(duration):.6g} exceeds speed bound {float(v):.6g}"
            )
        self.last_move[actor_id] = arrive
        if not self._started and arrive <= self.now:
            self._apply_move(actor_id, target, arrive, depart)
        else:
            self._push(arrive, actor_id, "move", (_Move(actor_id, target), depart))

    def _apply_move(self, actor_id, target, arrive, depart):
        self.record("move", arrive, target, actor_id, depart=fmt_num(depart),
                    origin=[fmt_num(v) for v in self.positions[actor_id]])
        self.positions[actor_id] = target

    def drop(self, handle: int) -> None:
        """Jam a scheduled emission or delivery."""
        if not self.capabilities.can_drop_messages:
            raise CapabilityViolation("message dropping is disabled")
        self._dropped.add(handle)

    # -- main loop ------------------------------------------------------
    def run(self) -> None:
        for actor in list(self.actors.values()):
            actor.setup(self)
        self._started = True
        while self._queue:
            _, t, actor, seq, kind, payload = heapq.heappop(self._queue)
            if seq in self._dropped:
                continue
            self.now = t
            self.event_count += 1
            if self.max_events is not None and self.event_count > self.max_events:
                raise EngineError(f"event budget {self.max_events} exceeded")
            if kind == "emit":
                self._do_emit(t, *payload)
            elif kind == "deliver":
                msg, dst, src = payload
                self.record("deliver", t, self.positions[dst], dst, msg=msg.record(), emit_i=src)
                self.actors[dst].on_deliver(self, msg, t)
            elif kind == "wake":
                self.actors[actor].on_wake(self, payload, t)
            elif kind == "move":
                move, depart = payload
                self._apply_move(move.actor, move.position, t, depart)

    def _do_emit(self, t, msg: Message, src, dst) -> None:
        event = SpacetimeEvent(t, src)
        emit_i = len(self.trace) if self.trace is not None else None
        for d in msg.datums:
            self.ledger.record(d, event)
        self.record(
            "emit", t, src, msg.sender, to=dst, msg=msg.record(),
            datums=list(msg.datums), refs=list(msg.refs),
        )
        emission = Emission(event, msg, dst)
        for observe in self.observers:
            observe(self, emission)
        if dst == ADVERSARY:
            return
        if msg.sender in self.shielded and msg.via is None:
            self.record("intercept", t, src, ADVERSARY, to=dst, msg=msg.record())
            return
        if dst in self.shielded and msg.sender != ADVERSARY:
            self.record("intercept", t, src, ADVERSARY, to=dst, msg=msg.record())
            return
        delay = exact_delay(src, self.positions[dst], self.c)
        self._push(t + delay, dst, "deliver", (msg, dst, emit_i))
