"""The spoofing game: adversary strategies under engine-enforced light cones.

A strategy is an actor with id ``E`` that is notified of every emission in
causal order and may inject messages or (scenario II) move the tag.  It never
gets to see secret key bits: an injection may reference only datums that are
already in the information ledger and inside its past light cone.

Each built-in strategy also carries a vectorised per-round kernel and an
exact per-round success probability obtained by enumerating its random
inputs; :mod:`qtag.experiment` uses those for large Monte Carlo runs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .causality import (  # noqa: F401  (re-exported)
    AdversaryCapabilities,
    InfoLedger,
    InfoLedgerEntry,
    Scenario,
    validate_injection,
)
from .engine.core import ADVERSARY, TAG, Actor, Emission, Message, Simulator, station_id
from .errors import ConfigurationError
from .mac import MacTag
from .protocol import ONE_DIM, ProtocolConfig, challenge_datum
from .spacetime import Geometry, SpacetimeEvent, causally_accessible, exact, exact_delay, exact_point


@dataclass(frozen=True)
class SpoofOutcome:
    trials: int
    successes: int
    exact: float | None = None

    @property
    def p_hat(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


@dataclass
class SessionContext:
    """Public protocol knowledge: geometry, schedule and expected arrivals."""

    geom: Geometry
    cfg: ProtocolConfig

    @property
    def stations(self) -> list[str]:
        return [station_id(s) for s in range(len(self.geom.stations))]

    @property
    def one_dim(self) -> bool:
        return self.cfg.mode == ONE_DIM

    def expected_arrival(self, i: int, s: int) -> Fraction:
        """When station ``s`` expects the reply for round/block ``i``."""
        g = self.geom
        return self.cfg.target_time(g, i) + exact_delay(g.exact_claimed, g.exact_stations[s], g.c)


class Strategy(Actor):
    """Base class; subclasses override :meth:`observe` and/or :meth:`setup`."""

    id = ADVERSARY
    name = "abstract"
    tag_on = True
    modes = ("one_dim", "three_dim")

    def __init__(self, ctx: SessionContext, **params):
        if ctx.cfg.mode not in self.modes:
            raise ConfigurationError([("adversary.strategy", f"{self.name} does not support mode {ctx.cfg.mode}")])
        self.ctx = ctx
        self.params = params

    def attach(self, sim: Simulator) -> None:
        sim.add_actor(self, self.ctx.geom.exact_claimed)
        sim.observers.append(self.observe)

    def observe(self, sim: Simulator, em: Emission) -> None:
        pass

    def _forged_mac(self, sim):
        return MacTag(sim.rng.getrandbits(64)) if self.ctx.cfg.authenticate_messages else None

    # -- Monte Carlo support ---------------------------------------------
    def independent_bits(self) -> int:
        """Distinct secret bits a single round exposes to guessing."""
        return 1 if self.ctx.one_dim else len(self.ctx.geom.stations)

    def round_success(self, values: dict) -> bool:
        return True

    def random_variables(self) -> list[str]:
        return []

    def exact_round_probability(self) -> Fraction:
        """Enumerate every assignment of the round's random bits."""
        names = self.random_variables()
        if not names:
            return Fraction(int(self.round_success({})))
        hits = sum(self.round_success(dict(zip(names, v))) for v in itertools.product((0, 1), repeat=len(names)))
        return Fraction(hits, 2 ** len(names))

    def batch_round_success(self, gen: np.random.Generator, trials: int, rounds: int) -> np.ndarray:
        return np.ones((trials, rounds), dtype=bool)


class Honest(Strategy):
    """No adversary at all (used for completeness runs)."""

    name = "none"

    def attach(self, sim):
        pass


class GuessSpoofer(Strategy):
    """Tag switched off; the adversary broadcasts guessed bits.

    Each reply leaves ``guess_position`` (default: the claimed tag point) at
    the earliest time at which it is not early at any station.
    """

    name = "guess"
    tag_on = False

    def _origin(self):
        pos = self.params.get("guess_position")
        return exact_point(pos) if pos is not None else self.ctx.geom.exact_claimed

    def setup(self, sim):
        self._schedule_guesses(sim)

    def _schedule_guesses(self, sim):
        ctx, g = self.ctx, self.ctx.geom
        x = self._origin()
        n_st = len(g.stations)
        for i in range(ctx.cfg.rounds):
            if ctx.one_dim:
                guess = sim.rng.bit()
                guesses = [guess] * n_st
                t_e = max(ctx.expected_arrival(i, s) - exact_delay(x, g.exact_stations[s], g.c) for s in range(n_st))
                times = [t_e] * n_st
            else:
                guesses = [sim.rng.bit() for _ in range(n_st)]
                times = [ctx.expected_arrival(i, s) - exact_delay(x, g.exact_stations[s], g.c) for s in range(n_st)]
            for s in range(n_st):
                msg = Message("response", ADVERSARY, i, guesses[s], s, self._forged_mac(sim),
                              datums=(f"guess_{i}_{s}",))
                sim.inject(msg, SpacetimeEvent(times[s], x), station_id(s))

    def random_variables(self):
        k = self.independent_bits()
        return [f"key{s}" for s in range(k)] + [f"guess{s}" for s in range(k)]

    def round_success(self, v):
        k = self.independent_bits()
        return all(v[f"key{s}"] == v[f"guess{s}"] for s in range(k))

    def batch_round_success(self, gen, trials, rounds):
        k = self.independent_bits()
        key = gen.integers(0, 2, (trials, rounds, k), dtype=np.uint8)
        guess = gen.integers(0, 2, (trials, rounds, k), dtype=np.uint8)
        return np.all(key == guess, axis=2)


class OffTagPrecompute(GuessSpoofer):
    """Tag holds expanded key but is switched off; probes learn nothing."""

    name = "off_tag_precompute"

    def __init__(self, ctx, **params):
        super().__init__(ctx, **params)
        self.probes_sent: list[str] = []
        self.echoes: list[Message] = []

    def setup(self, sim):
        g = self.ctx.geom
        src = list(g.exact_claimed)
        src[0] += 1
        for k in range(int(self.params.get("probes", 3))):
            datum = f"probe_{k}"
            probe = Message("probe", ADVERSARY, k, k & 1, datums=(datum,), onward=ADVERSARY)
            sim.inject(probe, SpacetimeEvent(Fraction(k, 4), tuple(src)), TAG)
            self.probes_sent.append(datum)
        self._schedule_guesses(sim)

    def observe(self, sim, em):
        if em.message.kind == "probe" and em.message.via == TAG:
            self.echoes.append(em.message)


class _Relocating(Strategy):
    """Moves the tag by ``displacement`` before the session and mediates its I/O."""

    modes = ("one_dim", "three_dim")

    def __init__(self, ctx, **params):
        super().__init__(ctx, **params)
        self.pending: dict[int, dict[int, Emission]] = {}

    def setup(self, sim):
        g = self.ctx.geom
        delta = exact_point(self.params.get("displacement") or [0] * g.dimension)
        if len(delta) != g.dimension:
            raise ConfigurationError([("adversary.params.displacement", f"need {g.dimension} components")])
        start = sim.position_of(TAG)
        target = tuple(a + d for a, d in zip(start, delta))
        sim.shielded.add(TAG)
        if any(delta):
            dist = exact_delay(start, target, 1)
            duration = self.params.get("move_duration")
            if duration is None:
                v = sim.capabilities.speed_bound
                duration = dist / exact(v) if v else Fraction(0)
            sim.relocate(TAG, target, -exact(duration), 0)

    def _tag(self, sim):
        return sim.position_of(TAG)


class RelayAttack(_Relocating):
    """Pure relay: forward genuine challenges to the moved tag as soon as
    they can reach it, and forward its replies straight back."""

    name = "relocation"

    def observe(self, sim, em):
        msg = em.message
        tag = self._tag(sim)
        if msg.sender.startswith("A") and msg.kind in ("challenge", "request") and msg.via is None:
            if msg.kind == "request":
                t = em.event.exact_t + exact_delay(em.event.exact_x, tag, sim.c)
                self._relay(sim, msg, t, tag)
                return
            group = self.pending.setdefault(msg.round, {})
            group[msg.side] = em
            if len(group) == 2:
                t = max(e.event.exact_t + exact_delay(e.event.exact_x, tag, sim.c) for e in group.values())
                for e in group.values():
                    self._relay(sim, e.message, t, tag)
        elif msg.sender == TAG and msg.kind == "response":
            self._forward(sim, em, em.event.exact_t)

    def _relay(self, sim, msg, t, tag):
        copy = Message(msg.kind, ADVERSARY, msg.round, msg.bit, msg.side, msg.mac, refs=msg.datums)
        sim.inject(copy, SpacetimeEvent(t, tag), TAG)

    def _forward(self, sim, em, t):
        msg = em.message
        copy = Message("response", ADVERSARY, msg.round, msg.bit, msg.side, msg.mac, refs=msg.datums)
        sim.inject(copy, SpacetimeEvent(t, em.event.exact_x), station_id(msg.side))


class InputInjection(RelayAttack):
    """Feed the moved tag early enough for on-time replies everywhere,
    guessing whichever challenge bit cannot reach it in time."""

    name = "input_injection"
    modes = ("one_dim",)

    def __init__(self, ctx, **params):
        super().__init__(ctx, **params)
        self.guessed: dict[int, int] = {}

    def setup(self, sim):
        super().setup(sim)
        for i in range(self.ctx.cfg.rounds):
            sim.wake(self.id, self._deadline(sim, i), i)

    def _deadline(self, sim, i):
        tag = self._tag(sim)
        g = self.ctx.geom
        return min(self.ctx.expected_arrival(i, s) - exact_delay(tag, g.exact_stations[s], g.c)
                   for s in range(len(g.stations)))

    def on_wake(self, sim, i, t):
        tag = self._tag(sim)
        here = SpacetimeEvent(t, tag)
        guessed = 0
        for side in (0, 1):
            datum = challenge_datum(side, i)
            origin = sim.ledger.origin(datum)
            em = self.pending.get(i, {}).get(side)
            if origin is not None and em is not None and causally_accessible(origin, here, sim.geom):
                self._relay(sim, em.message, t, tag)
            else:
                guessed += 1
                msg = Message("challenge", ADVERSARY, i, sim.rng.bit(), side, self._forged_mac(sim),
                              datums=(f"injected_{side}_{i}",))
                sim.inject(msg, here, TAG)
        self.guessed[i] = guessed

    def observe(self, sim, em):
        msg = em.message
        if msg.kind == "challenge" and msg.sender.startswith("A") and msg.via is None:
            self.pending.setdefault(msg.round, {})[msg.side] = em
        elif msg.sender == TAG and msg.kind == "response":
            i, s = msg.round, msg.side
            g = self.ctx.geom
            t = max(em.event.exact_t,
                    self.ctx.expected_arrival(i, s) - exact_delay(em.event.exact_x, g.exact_stations[s], g.c))
            self._forward(sim, em, t)

    def guessed_sides(self) -> int:
        g = self.params.get("guessed_sides")
        if g is not None:
            return int(g)
        return max(self.guessed.values(), default=1)

    def random_variables(self):
        return ["a", "b", "ga", "gb", "k0", "k1", "k2", "k3"]

    def round_success(self, v):
        g = self.guessed_sides()
        # With one guessed side the guess replaces the far (A0) bit.
        a_used = v["ga"] if g >= 1 else v["a"]
        b_used = v["gb"] if g >= 2 else v["b"]
        sent = v[f"k{2 * a_used + b_used}"]
        return sent == v[f"k{2 * v['a'] + v['b']}"]

    def batch_round_success(self, gen, trials, rounds):
        g = self.guessed_sides()
        shape = (trials, rounds)
        a = gen.integers(0, 2, shape, dtype=np.uint8)
        b = gen.integers(0, 2, shape, dtype=np.uint8)
        ga = gen.integers(0, 2, shape, dtype=np.uint8) if g >= 1 else a
        gb = gen.integers(0, 2, shape, dtype=np.uint8) if g >= 2 else b
        keys = gen.integers(0, 2, (trials, rounds, 4), dtype=np.uint8)
        sent = np.take_along_axis(keys, (2 * ga + gb)[..., None].astype(np.intp), axis=2)[..., 0]
        want = np.take_along_axis(keys, (2 * a + b)[..., None].astype(np.intp), axis=2)[..., 0]
        return sent == want


class FtlProbe(Strategy):
    """Deliberately illegal: answers using a challenge bit before it could arrive."""

    name = "ftl_probe"

    def observe(self, sim, em):
        msg = em.message
        if msg.sender != station_id(0) or msg.kind not in ("challenge", "request") or msg.via is not None:
            return
        g = self.ctx.geom
        far = max(g.exact_stations, key=lambda s: exact_delay(s, em.event.exact_x, 1))
        x = tuple(f + (c - f) / 10 for f, c in zip(far, g.exact_claimed))
        t = em.event.exact_t + exact_delay(em.event.exact_x, x, sim.c) / 2
        forged = Message("response", ADVERSARY, msg.round, msg.bit, 0, refs=msg.datums)
        sim.inject(forged, SpacetimeEvent(t, x), station_id(0))


STRATEGIES = {
    cls.name: cls
    for cls in (Honest, GuessSpoofer, OffTagPrecompute, RelayAttack, InputInjection, FtlProbe)
}


def make_strategy(name: str, ctx: SessionContext, params: dict | None = None) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ConfigurationError([("adversary.strategy", f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}")])
    return cls(ctx, **(params or {}))
