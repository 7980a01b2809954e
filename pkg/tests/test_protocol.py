from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtag.engine.core import TAG, Message, Simulator
from qtag.engine.runner import run
from qtag.keys import BlockKeySet, KeyStore, Release
from qtag.mac import KeyPool
from qtag.protocol import (
    AuthDecision,
    ChallengeStation,
    FailureCause,
    MessageAuth,
    ObservedResponse,
    ProtocolConfig,
    RoundVerdict,
    StationCheck,
    Tag,
    authenticate_3d,
    decide,
    schedule_challenges_1d,
    tag_on_arrival,
    verify_round,
)
from qtag.spacetime import Geometry

from conftest import TETRA, build


class Fixed:
    """RNG stand-in returning a fixed bit sequence."""

    def __init__(self, bits):
        self.bits = list(bits)

    def bit(self):
        return self.bits.pop(0)


def _geom(tag):
    return Geometry(1, [[0], [10]], [tag])


def test_schedule_examples():
    cfg = ProtocolConfig(rounds=3, start_time=10)
    sends = schedule_challenges_1d(_geom(5), cfg, Fixed([0, 1] * 3))
    assert [ch.send_event.exact_t for ch in sends[:2]] == [5, 5]
    sends = schedule_challenges_1d(_geom(2), cfg, Fixed([0, 1] * 3))
    assert {ch.station: ch.send_event.exact_t for ch in sends[:2]} == {0: 8, 1: 2}
    sends = schedule_challenges_1d(_geom(5), ProtocolConfig(rounds=3, start_time=10, round_period=3),
                                   Fixed([1, 0] * 3))
    assert [ch.send_event.exact_t for ch in sends if ch.round == 2] == [11, 11]
    assert [(ch.station, ch.bit) for ch in sends[:2]] == [(0, 1), (1, 0)]


def test_default_start_keeps_sends_nonnegative():
    g = _geom(Fraction(1, 3))
    cfg = ProtocolConfig(rounds=2)
    assert cfg.t0(g) == Fraction(29, 3) + 1
    assert min(ch.send_event.exact_t for ch in schedule_challenges_1d(g, cfg, Fixed([0] * 4))) == 1


def test_config_window():
    cfg = ProtocolConfig(rounds=7, round_period="1/2")
    assert cfg.delta_t == Fraction(7, 2) and cfg.pair_wait == Fraction(1, 4)


def test_tag_on_arrival_examples():
    store = KeyStore([1, 0, 0, 0])
    r = tag_on_arrival(store, 0, 0, 0, 10, (5,), ["A0", "A1"])
    assert [(m.bit, m.destination, m.emit_event.exact_t) for m in r.responses] == [(1, "A0", 10), (1, "A1", 10)]
    again = tag_on_arrival(store, 0, 0, 0, 12, (5,), ["A0", "A1"])
    assert [m.bit for m in again.responses] == [1, 1]
    burned = tag_on_arrival(store, 0, 1, 0, 13, (5,), ["A0", "A1"])
    assert burned.responses == [] and burned.refused
    assert store.round_state(0).status is Release.BURNED
    assert tag_on_arrival(KeyStore([]), 0, 0, 0, 0, (5,), ["A0"]).depleted


def _obs(bit, t):
    return [ObservedResponse(bit, Fraction(t))]


EXPECT = {"A0": Fraction(15), "A1": Fraction(15)}


def test_verify_round_examples():
    ok = verify_round(1, EXPECT, {"A0": _obs(1, 15), "A1": _obs(1, 15)})
    assert ok.passed and all(s.arrival_error == 0 and s.on_time for s in ok.stations)
    wrong = verify_round(1, EXPECT, {"A0": _obs(0, 15), "A1": _obs(0, 15)})
    assert wrong.cause is FailureCause.WRONG_BIT
    late = verify_round(1, EXPECT, {"A0": _obs(1, 19), "A1": _obs(1, 15)})
    assert late.check("A0").cause is FailureCause.LATE and late.check("A0").arrival_error == 4
    early = verify_round(1, EXPECT, {"A0": _obs(1, 14), "A1": _obs(1, 15)})
    assert early.cause is FailureCause.EARLY
    missing = verify_round(1, EXPECT, {"A0": _obs(1, 15)})
    assert missing.check("A1").cause is FailureCause.MISSING
    mac = verify_round(1, EXPECT, {"A0": [ObservedResponse(1, Fraction(15), False)], "A1": _obs(1, 15)})
    assert mac.cause is FailureCause.MAC_FAIL
    tolerant = verify_round(1, EXPECT, {"A0": _obs(1, "15.5"), "A1": _obs(1, "14.5")}, epsilon="1/2")
    assert tolerant.passed


@given(st.fractions(min_value=-5, max_value=5), st.fractions(min_value=0, max_value=2))
def test_on_time_iff_within_tolerance(err, eps):
    v = verify_round(0, {"A0": Fraction(10)}, {"A0": _obs(0, Fraction(10) + err)}, eps)
    assert v.check("A0").on_time == (abs(err) <= eps)


def _verdict(i, ok):
    cause = None if ok else FailureCause.WRONG_BIT
    return RoundVerdict(i, (StationCheck("A0", ok, Fraction(0), True, cause),), {"A0": Fraction(10 + i)})


def test_decide_examples():
    cfg = ProtocolConfig(rounds=3)
    assert decide([_verdict(i, True) for i in range(3)], cfg).authenticated
    d = decide([_verdict(0, True), _verdict(1, False), _verdict(2, True)], cfg)
    assert not d.authenticated and d.first_failure.round == 1 and d.rounds_completed == 1
    assert decide([], ProtocolConfig(rounds=0)) == AuthDecision(True, 0)
    short = decide([_verdict(0, True)], cfg)
    assert short.first_failure.cause is FailureCause.MISSING


@given(st.lists(st.booleans(), min_size=1, max_size=12), st.lists(st.booleans(), max_size=6))
def test_decision_monotone(prefix, suffix):
    n = len(prefix) + len(suffix)
    cfg = ProtocolConfig(rounds=n)
    first = decide([_verdict(i, ok) for i, ok in enumerate(prefix)], ProtocolConfig(rounds=len(prefix)))
    full = decide([_verdict(i, ok) for i, ok in enumerate(prefix + suffix)], cfg)
    assert full.authenticated == all(prefix + suffix)
    if not first.authenticated:
        assert not full.authenticated


def _tag_sim(deliveries, store_bits=(1, 0, 0, 1) * 4):
    g = _geom(5)
    cfg = ProtocolConfig(rounds=4)
    sim = Simulator(g)
    tag = Tag(cfg, ["A0", "A1"], store=KeyStore(store_bits))
    sim.add_actor(tag, (5,))
    from qtag.engine.core import Actor

    class Sink(Actor):
        def __init__(self, i):
            self.id = f"A{i}"
            self.got = []

        def on_deliver(self, sim, msg, t):
            self.got.append((msg.round, msg.bit, t))

    sinks = [sim.add_actor(Sink(0), (0,)), sim.add_actor(Sink(1), (10,))]
    for t, side, rnd, bit in deliveries:
        sim.emit(Message("challenge", f"A{side}", rnd, bit, side), t, (5,), TAG)
    sim.run()
    return sim, tag, sinks


def test_tag_pairs_only_exactly_simultaneous_arrivals():
    sim, tag, sinks = _tag_sim([(10, 0, 0, 1), (10, 1, 0, 1)])
    assert sinks[0].got == [(0, 1, 15)] and sinks[1].got == [(0, 1, 15)]
    sim, tag, sinks = _tag_sim([(10, 0, 0, 1), (Fraction(10) + Fraction(1, 10**12), 1, 0, 1)])
    assert sinks[0].got == []
    assert tag.store.round_state(0).status is Release.BURNED
    assert any(r["kind"] == "burn" and r["cause"] == "unpaired" for r in sim.trace)


def test_tag_conflicting_duplicate_burns():
    sim, tag, sinks = _tag_sim([(10, 0, 0, 1), (10, 0, 0, 0), (10, 1, 0, 1)])
    assert sinks[0].got == []
    assert tag.store.round_state(0).status is Release.BURNED


def test_tag_identical_redelivery_reemits():
    sim, tag, sinks = _tag_sim([(10, 0, 0, 0), (10, 1, 0, 1), (12, 0, 0, 0), (12, 1, 0, 1)])
    assert [b for _, b, _ in sinks[0].got] == [0, 0]
    assert [t for _, _, t in sinks[0].got] == [15, 17]


def test_tag_index_counter_mismatch_fails_safe():
    sim, tag, sinks = _tag_sim([(10, 0, 2, 0), (10, 1, 2, 0)])
    assert sinks[0].got == []
    assert tag.store.round_state(2).status is Release.BURNED
    assert any(r.get("cause") == "index-mismatch" for r in sim.trace)


def test_tag_off_passes_signals_through():
    g = _geom(5)
    sim = Simulator(g)
    tag = Tag(ProtocolConfig(rounds=1), ["A0", "A1"], store=KeyStore([1] * 4), on=False)
    sim.add_actor(tag, (5,))
    st = ChallengeStation(1, [])
    sim.add_actor(st, (10,))
    sim.emit(Message("challenge", "A0", 0, 1, 0, datums=("a_0",), onward="A1"), 0, (0,), TAG)
    sim.run()
    delivered = [r for r in sim.trace if r["kind"] == "deliver" and r["actor"] == "A1"]
    assert delivered and delivered[0]["t"] == "10" and delivered[0]["msg"]["via"] == "T"
    assert tag.store.emitted == []


# -- end-to-end honest sessions ----------------------------------------------------

@pytest.mark.parametrize("tag", [5, 2, "1/3", "9.75"])
def test_honest_1d_completeness(tag):
    cfg = build({"dimension": 1, "c": "3/2", "stations": [[0], [10]], "tag": [tag]}, protocol__rounds=25)
    r = run(cfg, 17)
    assert r.decision.authenticated
    assert set(r.arrival_errors()) == {0}


def test_challenges_arrive_simultaneously():
    r = run(build(protocol__rounds=6), 3)
    arrivals = {}
    for rec in r.trace:
        if rec["kind"] == "deliver" and rec["actor"] == "T" and rec["msg"]["kind"] == "challenge":
            arrivals.setdefault(rec["msg"]["round"], set()).add(rec["t"])
    assert len(arrivals) == 6 and all(len(ts) == 1 for ts in arrivals.values())


def test_response_never_precedes_both_challenges():
    from qtag.spacetime import causally_accessible

    r = run(build(protocol__rounds=5), 8)
    led = r.sim.ledger
    for i in range(5):
        resp = led.origin(f"response_{i}")
        for d in (f"a_{i}", f"b_{i}"):
            assert causally_accessible(led.origin(d), resp, r.config.geometry)


def test_authenticated_messages_end_to_end():
    cfg = build(protocol__rounds=6, protocol__authenticate_messages=True)
    r = run(cfg, 2)
    assert r.decision.authenticated
    macs = [rec for rec in r.trace if rec["kind"] == "emit" and "mac" in rec["msg"]]
    assert len(macs) == 6 * 4
    tag = r.sim.actors["T"]
    assert tag.auth.pool.overlapping_spans() == []


def test_authenticated_messages_reject_forgeries():
    cfg = build(protocol__rounds=3, protocol__authenticate_messages=True, adversary__strategy="guess")
    for seed in range(5):
        r = run(cfg, seed)
        assert not r.decision.authenticated
        assert r.decision.first_failure.cause is FailureCause.MAC_FAIL


def test_message_auth_slots_are_disjoint():
    auth = MessageAuth(KeyPool([0, 1] * MessageAuth.bits_needed(3, 2)), 2)
    for i in range(3):
        for side in (0, 1):
            auth.sign("challenge", i, side, 1)
            auth.sign("response", i, side, 0)
    assert auth.pool.overlapping_spans() == []
    assert len(auth.pool.spans) == 12


def test_honest_3d_completeness():
    r = run(build(TETRA, protocol__rounds=20), 4)
    assert r.decision.authenticated
    assert set(r.arrival_errors()) == {0}
    assert max(abs(a - 2) for a in r.decision.multilateration.position) < 1e-9


def test_3d_displaced_tag_is_rejected():
    r = run(build(TETRA, protocol__rounds=4, geometry__tag=[4, 2, 2], geometry__claimed_tag=[2, 2, 2]), 1)
    assert not r.decision.authenticated


def test_3d_tolerance_lets_timing_through_but_position_fails():
    cfg = build(TETRA, protocol__rounds=4, protocol__timing_tolerance=3,
                geometry__tag=[3, 2, 2], geometry__claimed_tag=[2, 2, 2])
    r = run(cfg, 1)
    assert r.decision.first_failure.cause is FailureCause.POSITION
    assert max(abs(a - b) for a, b in zip(r.decision.multilateration.position, (3, 2, 2))) < 1e-6


def test_3d_outside_hull_rejected_regardless():
    r = run(build(TETRA, protocol__rounds=3, geometry__tag=[8, 8, 8]), 1)
    assert r.decision.first_failure.cause is FailureCause.OUTSIDE_HULL
    assert all(v.passed for v in r.verdicts)


def test_3d_distance_bounds_are_exact():
    r = run(build(TETRA, protocol__rounds=2), 0)
    from qtag.spacetime import exact_delay

    g = r.config.geometry
    for v in r.verdicts:
        for s, check in enumerate(v.stations):
            assert check.distance_bound == exact_delay(g.exact_stations[s], g.exact_claimed) * g.exact_c


def test_3d_burned_block_is_missing():
    g = Geometry(3, TETRA["stations"], TETRA["tag"])
    blocks = BlockKeySet([[0, 1, 1, 0]] * 4)
    blocks.release(0, 0, 0)
    with pytest.raises(Exception):
        blocks.release(0, 0, 1)
    cfg = ProtocolConfig(rounds=1, mode="three_dim")
    from qtag.protocol import RequestStation, schedule_requests, verify_block

    sim = Simulator(g)
    reqs = schedule_requests(g, cfg, Fixed([1, 0, 0, 0]))
    stations = [sim.add_actor(RequestStation(s, reqs[s], keys=blocks), g.stations[s]) for s in range(4)]
    sim.add_actor(Tag(cfg, [st.id for st in stations], blocks=blocks), g.tag)
    sim.run()
    assert verify_block(stations[0], 0, g, cfg).cause is FailureCause.MISSING
    assert verify_block(stations[1], 0, g, cfg).passed


def test_authenticated_link_verification_delay_is_measured():
    r = run(build(TETRA, protocol__rounds=3, keys__share_mode="authenticated_link"), 5)
    assert r.decision.authenticated
    assert len(r.verification_delays) == 12
    # station 0 holds the key; others wait a round trip to A0
    assert sorted(set(r.verification_delays)) == [0, 20]


def test_two_dimensional_geometry():
    tri = {"dimension": 2, "c": 1, "stations": [[0, 0], [12, 0], [0, 12]], "tag": [3, 4]}
    r = run(build(tri, protocol__rounds=5), 1)
    assert r.decision.authenticated
    assert not run(build(tri, protocol__rounds=5, geometry__claimed_tag=[3, 5]), 1).decision.authenticated


def test_key_depletion_fails_rounds_instead_of_stalling():
    cfg = build(protocol__rounds=40, keys__initial_key_bits=0, keys__auth_reserve_bits=0)
    r = run(cfg, 1)
    assert not r.decision.authenticated
    assert r.decision.first_failure.cause is FailureCause.MISSING
    assert any(rec["kind"] == "depleted" for rec in r.trace)
