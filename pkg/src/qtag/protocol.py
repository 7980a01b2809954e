"""Honest-party behaviour for the tagging protocol.

One dimension: stations ``A0`` (left) and ``A1`` (right) each send a random
challenge bit per round, timed to reach the claimed tag point together; the
tag answers with key bit ``k[4i + 2a + b]`` toward both stations at once, and
each station checks bit and arrival time.

Two or three dimensions: ``n + 1`` stations each request one bit from
successive two-bit blocks of their own sub-key, turn the round-trip time into
a distance bound, and the bounds are multilaterated against the claimed
position.
"""

from __future__ import annotations

import enum
import functools
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .engine.core import ADVERSARY, TAG, Actor, Message, Simulator, station_id
from .errors import ConfigurationError, KeyDepletionError, ReleaseRefused
from .keys import BlockKeySet, KeyStore, Release, key_index
from .mac import MAC_KEY_BITS, KeyPool, mac_sign, mac_verify
from .spacetime import (
    TAU_GEO,
    Geometry,
    Multilateration,
    SpacetimeEvent,
    exact,
    exact_delay,
    in_simplex,
    in_tetrahedron,
    multilaterate,
)

ONE_DIM = "one_dim"
THREE_DIM = "three_dim"
MODES = (ONE_DIM, THREE_DIM)


@dataclass(frozen=True)
class ProtocolConfig:
    """``rounds`` is the security parameter N; ``round_period`` the spacing
    between consecutive challenge arrivals; the window is ``N * period``.

    ``start_time`` is the target arrival time of round 0 at the claimed tag
    point; ``None`` means one time unit after the slowest station could
    reach it.
    """

    rounds: int = 10
    round_period: object = 1
    timing_tolerance: object = 0
    authenticate_messages: bool = False
    mode: str = ONE_DIM
    start_time: object = None

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigurationError(problems)

    def problems(self) -> list[tuple[str, str]]:
        out = []
        if not isinstance(self.rounds, int) or isinstance(self.rounds, bool) or self.rounds < 0:
            out.append(("protocol.rounds", f"must be a non-negative integer, got {self.rounds!r}"))
        try:
            if exact(self.round_period) <= 0:
                out.append(("protocol.round_period", "must be > 0"))
        except (TypeError, ValueError, ZeroDivisionError):
            out.append(("protocol.round_period", f"not a number: {self.round_period!r}"))
        try:
            if exact(self.timing_tolerance) < 0:
                out.append(("protocol.timing_tolerance", "must be >= 0"))
        except (TypeError, ValueError, ZeroDivisionError):
            out.append(("protocol.timing_tolerance", f"not a number: {self.timing_tolerance!r}"))
        if self.mode not in MODES:
            out.append(("protocol.mode", f"must be one of {MODES}, got {self.mode!r}"))
        if self.start_time is not None:
            try:
                exact(self.start_time)
            except (TypeError, ValueError, ZeroDivisionError):
                out.append(("protocol.start_time", f"not a number: {self.start_time!r}"))
        return out

    @property
    def tau(self) -> Fraction:
        return exact(self.round_period)

    @property
    def epsilon(self) -> Fraction:
        return exact(self.timing_tolerance)

    @property
    def delta_t(self) -> Fraction:
        return self.rounds * self.tau

    @property
    def pair_wait(self) -> Fraction:
        return self.tau / 2

    def t0(self, geom: Geometry) -> Fraction:
        if self.start_time is not None:
            return exact(self.start_time)
        return _default_start(geom)

    def target_time(self, geom: Geometry, i: int) -> Fraction:
        return self.t0(geom) + i * self.tau


@functools.lru_cache(maxsize=256)
def _default_start(geom: Geometry) -> Fraction:
    return max(exact_delay(s, geom.exact_claimed, geom.c) for s in geom.exact_stations) + 1


class FailureCause(enum.Enum):
    WRONG_BIT = "WrongBit"
    LATE = "Late"
    EARLY = "Early"
    MISSING = "Missing"
    MAC_FAIL = "MacFail"
    WINDOW = "Window"
    OUTSIDE_HULL = "OutsideHull"
    POSITION = "Position"


# -- messages and MAC slots ---------------------------------------------------

@dataclass(frozen=True)
class ChallengeMessage:
    round: int
    bit: int
    station: int
    send_event: SpacetimeEvent
    mac: object = None


@dataclass(frozen=True)
class ResponseMessage:
    round: int
    bit: int
    emit_event: SpacetimeEvent
    destination: str
    mac: object = None


def challenge_datum(side: int, i: int) -> str:
    return f"{'ab'[side] if side < 2 else f's{side}'}_{i}"


def mac_payload(kind: str, i: int, side: int, bit: int) -> bytes:
    return f"{kind}|{i}|{side}|{bit}".encode()


class MessageAuth:
    """Per-message MAC keys for the authenticated-messages option.

    Both ends derive the key offset from the message identity: round ``i``
    and slot (one slot per station for challenges, one per station for
    responses), so no coordination is needed and no two messages share bits.
    """

    def __init__(self, pool: KeyPool, stations: int):
        self.pool = pool
        self.slots = 2 * stations

    @staticmethod
    def bits_needed(rounds: int, stations: int) -> int:
        return rounds * 2 * stations * MAC_KEY_BITS

    def _key(self, kind, i, side):
        slot = side if kind in ("challenge", "request") else self.slots // 2 + side
        off = MAC_KEY_BITS * (self.slots * i + slot)
        return off, self.pool.at(off, MAC_KEY_BITS, label=f"{kind}:{i}:{side}")

    def sign(self, kind, i, side, bit):
        off, key = self._key(kind, i, side)
        return mac_sign(mac_payload(kind, i, side, bit), key, off)

    def verify(self, msg: Message) -> bool:
        try:
            _, key = self._key(msg.kind, msg.round, msg.side)
        except KeyDepletionError:
            return False
        return mac_verify(mac_payload(msg.kind, msg.round, msg.side, msg.bit), msg.mac, key)


# -- 1D scheduling ------------------------------------------------------------

def schedule_challenges_1d(geom: Geometry, cfg: ProtocolConfig, rng, auth: MessageAuth | None = None):
    """Send events so that both challenge bits of round ``i`` reach the
    claimed tag point at ``T_0 + i * tau``.  Bits are drawn a, b per round."""
    if geom.dimension != 1:
        raise ConfigurationError("one-dimensional scheduling needs a 1D geometry")
    out = []
    tag = geom.exact_claimed
    delays = [exact_delay(s, tag, geom.c) for s in geom.exact_stations]
    for i in range(cfg.rounds):
        target = cfg.target_time(geom, i)
        bits = (rng.bit(), rng.bit())
        for side in (0, 1):
            mac = auth.sign("challenge", i, side, bits[side]) if auth else None
            event = SpacetimeEvent(target - delays[side], geom.exact_stations[side])
            out.append(ChallengeMessage(i, bits[side], side, event, mac))
    return out


def expected_arrivals_1d(geom: Geometry, cfg: ProtocolConfig, i: int) -> dict[str, Fraction]:
    target = cfg.target_time(geom, i)
    return {
        station_id(s): target + exact_delay(geom.exact_claimed, pos, geom.c)
        for s, pos in enumerate(geom.exact_stations)
    }


# -- the tag ------------------------------------------------------------------

@dataclass
class TagReaction:
    responses: list
    refused: bool = False
    depleted: bool = False


def tag_on_arrival(store: KeyStore, i: int, a: int, b: int, t, tag_pos, stations: Sequence[str],
                   auth: MessageAuth | None = None) -> TagReaction:
    """Release ``k[4i+2a+b]`` and address it to every station at time ``t``."""
    try:
        bit = store.release(i, a, b)
    except KeyDepletionError:
        return TagReaction([], depleted=True)
    except ReleaseRefused:
        return TagReaction([], refused=True)
    event = SpacetimeEvent(exact(t), tuple(tag_pos))
    responses = []
    for s, dst in enumerate(stations):
        mac = auth.sign("response", i, s, bit) if auth else None
        responses.append(ResponseMessage(i, bit, event, dst, mac))
    return TagReaction(responses)


class Tag(Actor):
    """The tagging device.

    Switched on, it pairs 1D challenges whose arrival times are exactly equal
    and answers block requests one at a time.  Switched off, it forwards
    everything unchanged, learning and revealing nothing.
    """

    id = TAG

    def __init__(self, cfg: ProtocolConfig, stations: Sequence[str], store: KeyStore | None = None,
                 blocks: BlockKeySet | None = None, auth: MessageAuth | None = None, on: bool = True):
        self.cfg = cfg
        self.stations = list(stations)
        self.store = store
        self.blocks = blocks
        self.auth = auth
        self.on = on
        self.counter = 0
        self.depleted = False
        self._groups: dict[tuple, dict] = {}

    def on_deliver(self, sim: Simulator, msg: Message, t):
        if not self.on:
            if msg.onward is not None:
                sim.emit(msg.passed_through(self.id), t, sim.position_of(self.id), msg.onward)
            return
        if msg.kind not in ("challenge", "request"):
            return
        if self.auth is not None and not self.auth.verify(msg):
            sim.record("mac_reject", t, sim.position_of(self.id), self.id, msg=msg.record())
            return
        if msg.kind == "challenge":
            self._challenge(sim, msg, t)
        else:
            self._request(sim, msg, t)

    def _challenge(self, sim, msg, t):
        key = (msg.round, t)
        group = self._groups.setdefault(key, {})
        if group.get("done"):
            return
        if msg.side in group:
            if group[msg.side] != msg.bit:
                self._burn(sim, msg.round, t, "conflicting-duplicate")
                group["done"] = True
            return
        group[msg.side] = msg.bit
        if 0 in group and 1 in group:
            group["done"] = True
            self._respond(sim, msg.round, group[0], group[1], t)
        else:
            sim.wake(self.id, t + self.cfg.pair_wait, key)

    def on_wake(self, sim, key, t):
        group = self._groups.get(key)
        if group is not None and not group.get("done"):
            group["done"] = True
            self._burn(sim, key[0], t, "unpaired")

    def _burn(self, sim, i, t, why):
        self.store.burn(i)
        if i == self.counter:
            self.counter += 1
        sim.record("burn", t, sim.position_of(self.id), self.id, round=i, cause=why)

    def _respond(self, sim, i, a, b, t):
        pos = sim.position_of(self.id)
        if self.store.round_state(i).status is Release.UNRELEASED and i != self.counter:
            self._burn(sim, i, t, "index-mismatch")
            return
        reaction = tag_on_arrival(self.store, i, a, b, t, pos, self.stations, self.auth)
        if reaction.depleted:
            self.depleted = True
            sim.record("depleted", t, pos, self.id, round=i)
            return
        if reaction.refused:
            sim.record("refused", t, pos, self.id, round=i, index=2 * a + b)
            return
        self.counter = max(self.counter, i + 1)
        idx = key_index(i, a, b)
        for s, resp in enumerate(reaction.responses):
            msg = Message("response", self.id, i, resp.bit, s, resp.mac,
                          datums=(f"k_{idx}", f"response_{i}"))
            sim.emit(msg, t, pos, resp.destination)

    def _request(self, sim, msg, t):
        s, j, which = msg.side, msg.round, msg.bit
        pos = sim.position_of(self.id)
        try:
            bit = self.blocks.release(s, j, which)
        except KeyDepletionError:
            self.depleted = True
            sim.record("depleted", t, pos, self.id, round=j, station=s)
            return
        except ReleaseRefused:
            sim.record("refused", t, pos, self.id, round=j, station=s, index=which)
            return
        mac = self.auth.sign("response", j, s, bit) if self.auth else None
        reply = Message("response", self.id, j, bit, s, mac,
                        datums=(f"k{s}_{2 * j + which}", f"response_{s}_{j}"))
        sim.emit(reply, t, pos, station_id(s))


# -- stations -----------------------------------------------------------------

@dataclass(frozen=True)
class ObservedResponse:
    bit: int
    arrival: Fraction
    mac_ok: bool = True


class ChallengeStation(Actor):
    """1D station: emits its scheduled challenges and logs responses."""

    def __init__(self, index: int, challenges: Sequence[ChallengeMessage], auth: MessageAuth | None = None):
        self.index = index
        self.id = station_id(index)
        self.challenges = [ch for ch in challenges if ch.station == index]
        self.auth = auth
        self.received: dict[int, list[ObservedResponse]] = {}

    def setup(self, sim):
        other = station_id(1 - self.index)
        for ch in self.challenges:
            msg = Message("challenge", self.id, ch.round, ch.bit, self.index, ch.mac,
                          datums=(challenge_datum(self.index, ch.round),), onward=other)
            sim.emit(msg, ch.send_event.exact_t, ch.send_event.exact_x, TAG)

    def on_deliver(self, sim, msg, t):
        if msg.kind != "response" or msg.round is None:
            return
        ok = self.auth.verify(msg) if self.auth is not None else True
        self.received.setdefault(msg.round, []).append(ObservedResponse(msg.bit, t, ok))


@dataclass(frozen=True)
class BlockRequest:
    block: int
    which: int
    send_time: Fraction


class RequestStation(Actor):
    """Multilateration station: requests one bit per block and times the reply.

    Station 0 holds every sub-key and, in ``authenticated_link`` mode, is
    the only holder; other stations then fetch the bit they need from it
    after the tag's reply has arrived.
    """

    def __init__(self, index: int, requests: Sequence[BlockRequest], auth: MessageAuth | None = None,
                 keys: BlockKeySet | None = None, hub: bool = False):
        self.index = index
        self.id = station_id(index)
        self.requests = list(requests)
        self.auth = auth
        self.keys = keys
        self.hub = hub
        self.received: dict[int, list[ObservedResponse]] = {}
        self.key_bits: dict[int, int] = {}
        self.verified_at: dict[int, Fraction] = {}

    def setup(self, sim):
        for r in self.requests:
            mac = self.auth.sign("request", r.block, self.index, r.which) if self.auth else None
            msg = Message("request", self.id, r.block, r.which, self.index, mac,
                          datums=(f"request_{self.index}_{r.block}",))
            sim.emit(msg, r.send_time, sim.position_of(self.id), TAG)

    def on_deliver(self, sim, msg, t):
        if msg.kind == "response" and msg.round is not None and msg.side == self.index:
            ok = self.auth.verify(msg) if self.auth is not None else True
            first = msg.round not in self.received
            self.received.setdefault(msg.round, []).append(ObservedResponse(msg.bit, t, ok))
            if not first:
                return
            if self.keys is not None:
                which = self._which(msg.round)
                self.key_bits[msg.round] = self.keys.peek(self.index, msg.round, which)
                self.verified_at[msg.round] = t
            else:
                ask = Message("keyshare_request", self.id, msg.round, self._which(msg.round), self.index)
                sim.emit(ask, t, sim.position_of(self.id), station_id(0))
        elif msg.kind == "keyshare_request" and self.hub:
            bit = self.keys.peek(msg.side, msg.round, msg.bit)
            share = Message("keyshare", self.id, msg.round, bit, msg.side,
                            datums=(f"k{msg.side}_{2 * msg.round + msg.bit}",))
            sim.emit(share, t, sim.position_of(self.id), msg.sender)
        elif msg.kind == "keyshare" and msg.side == self.index:
            self.key_bits.setdefault(msg.round, msg.bit)
            self.verified_at.setdefault(msg.round, t)

    def _which(self, block):
        for r in self.requests:
            if r.block == block:
                return r.which
        raise KeyError(block)


# -- verification -------------------------------------------------------------

@dataclass(frozen=True)
class StationCheck:
    station: str
    bit_correct: bool
    arrival_error: Fraction | None
    on_time: bool
    cause: FailureCause | None = None
    distance_bound: Fraction | None = None

    @property
    def passed(self) -> bool:
        return self.cause is None


@dataclass(frozen=True)
class RoundVerdict:
    round: int
    stations: tuple
    expected: Mapping = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.stations)

    @property
    def cause(self) -> FailureCause | None:
        for s in self.stations:
            if s.cause is not None:
                return s.cause
        return None

    def check(self, station: str) -> StationCheck:
        for s in self.stations:
            if s.station == station:
                return s
        raise KeyError(station)


def _station_check(station, expected_bit, expected_time, observed, eps) -> StationCheck:
    # Judged on the earliest response; later duplicates only matter if their bit disagrees.
    obs = sorted(observed, key=lambda o: o.arrival)
    if not obs:
        return StationCheck(station, False, None, False, FailureCause.MISSING)
    first = obs[0]
    err = first.arrival - expected_time
    on_time = abs(err) <= eps
    bit_ok = all(o.bit == expected_bit for o in obs)
    if not all(o.mac_ok for o in obs):
        cause = FailureCause.MAC_FAIL
    elif err < -eps:
        cause = FailureCause.EARLY
    elif err > eps:
        cause = FailureCause.LATE
    elif not bit_ok:
        cause = FailureCause.WRONG_BIT
    else:
        cause = None
    return StationCheck(station, bit_ok, err, on_time, cause)


def verify_round(expected_bit: int, expected_arrivals: Mapping[str, Fraction],
                 observed: Mapping[str, Sequence[ObservedResponse]], epsilon=0, round: int = 0) -> RoundVerdict:
    """Timing-and-bit test for one round at every station."""
    eps = exact(epsilon)
    checks = tuple(
        _station_check(s, expected_bit, exact(t), observed.get(s, ()), eps)
        for s, t in expected_arrivals.items()
    )
    return RoundVerdict(round, checks, dict(expected_arrivals))


@dataclass(frozen=True)
class Failure:
    round: int | None
    cause: FailureCause
    station: str | None = None


@dataclass(frozen=True)
class AuthDecision:
    authenticated: bool
    rounds_completed: int
    first_failure: Failure | None = None
    multilateration: Multilateration | None = None


def decide(verdicts: Sequence[RoundVerdict], cfg: ProtocolConfig) -> AuthDecision:
    """Accept iff the first N rounds all pass; the first failure ends the session."""
    n = cfg.rounds
    done = 0
    for v in verdicts[:n]:
        if v.round != done:
            return AuthDecision(False, done, Failure(done, FailureCause.MISSING))
        if not v.passed:
            bad = next(s for s in v.stations if not s.passed)
            return AuthDecision(False, done, Failure(v.round, bad.cause, bad.station))
        done += 1
    if done < n:
        return AuthDecision(False, done, Failure(done, FailureCause.MISSING))
    # Each station's replies must all fall inside one window of length N * tau.
    per_station: dict = {}
    for v in verdicts[:n]:
        for s, t in v.expected.items():
            per_station.setdefault(s, []).append(t)
    if any(max(ts) - min(ts) > cfg.delta_t for ts in per_station.values()):
        return AuthDecision(False, done, Failure(None, FailureCause.WINDOW))
    return AuthDecision(True, done)


# -- multilateration driver ---------------------------------------------------

def schedule_requests(geom: Geometry, cfg: ProtocolConfig, rng, blocks: Sequence[int] | None = None):
    """Per-station request lists; station s sends block j at ``T_j - delay(s, claimed)``."""
    blocks = range(cfg.rounds) if blocks is None else blocks
    out = {s: [] for s in range(len(geom.stations))}
    for j in blocks:
        target = cfg.target_time(geom, j)
        for s, pos in enumerate(geom.exact_stations):
            which = rng.bit()
            out[s].append(BlockRequest(j, which, target - exact_delay(pos, geom.exact_claimed, geom.c)))
    return out


def verify_block(station: RequestStation, block: int, geom: Geometry, cfg: ProtocolConfig) -> StationCheck:
    """Distance-bound check for one block at one station.

    ``arrival_error`` is (half round trip) - (claimed one-way delay); the
    check is one-sided: a bound larger than the claimed distance plus
    ``epsilon * c`` fails as Late.
    """
    req = next(r for r in station.requests if r.block == block)
    claimed_delay = exact_delay(geom.exact_stations[station.index], geom.exact_claimed, geom.c)
    obs = sorted(station.received.get(block, ()), key=lambda o: o.arrival)
    if not obs:
        return StationCheck(station.id, False, None, False, FailureCause.MISSING)
    first = obs[0]
    rtt = first.arrival - req.send_time
    bound = geom.exact_c * rtt / 2
    err = rtt / 2 - claimed_delay
    expected_bit = station.key_bits.get(block)
    bit_ok = expected_bit is not None and all(o.bit == expected_bit for o in obs)
    within = err <= cfg.epsilon
    if not all(o.mac_ok for o in obs):
        cause = FailureCause.MAC_FAIL
    elif not within:
        cause = FailureCause.LATE
    elif not bit_ok:
        cause = FailureCause.WRONG_BIT
    else:
        cause = None
    return StationCheck(station.id, bit_ok, err, within, cause, bound)


def authenticate_3d(verdicts: Sequence[RoundVerdict], geom: Geometry, cfg: ProtocolConfig) -> AuthDecision:
    """Combine per-station distance bounds into a position decision."""
    claimed = [float(v) for v in geom.exact_claimed]
    stations = [[float(v) for v in s] for s in geom.exact_stations]
    inside = in_tetrahedron(claimed, stations) if geom.dimension == 3 else in_simplex(claimed, stations)
    if not inside:
        return AuthDecision(False, 0, Failure(None, FailureCause.OUTSIDE_HULL))
    decision = decide(verdicts, cfg)
    if not decision.authenticated or cfg.rounds == 0:
        return decision
    medians = []
    for s in range(len(stations)):
        bounds = [v.stations[s].distance_bound for v in verdicts[: cfg.rounds]]
        medians.append(float(statistics.median(bounds)))
    ml = multilaterate(stations, medians)
    off = sum((a - b) ** 2 for a, b in zip(ml.position, claimed)) ** 0.5
    if not ml.consistent or off > TAU_GEO:
        return AuthDecision(False, decision.rounds_completed, Failure(None, FailureCause.POSITION), ml)
    return AuthDecision(True, decision.rounds_completed, None, ml)
