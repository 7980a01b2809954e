"""End-to-end session driver and trace replay.

``run`` provisions keys (expanding them by QKE when the preshared key is too
short), builds the actors for the configured mode and strategy, executes the
event loop and judges every round.  The trace is a list of plain dicts; its
serialized form is newline-delimited JSON behind a versioned header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..adversary import SessionContext, Strategy, make_strategy
from ..causality import InfoLedger
from ..errors import CapabilityViolation, CausalityViolation, KeyDepletionError, ReplayMismatch
from ..keys import BlockKeySet, KeyStore
from ..mac import KeyPool
from ..protocol import (
    ONE_DIM,
    AuthDecision,
    ChallengeStation,
    MessageAuth,
    RequestStation,
    RoundVerdict,
    Tag,
    authenticate_3d,
    decide,
    expected_arrivals_1d,
    schedule_challenges_1d,
    schedule_requests,
    verify_block,
    verify_round,
)
from ..qke import AUTH_BITS_PER_SESSION, QkeSession, QkeStatus, qke_expand
from ..spacetime import SpacetimeEvent, causally_accessible, exact, exact_delay, light_cone_deficit
from .core import ADVERSARY, TAG, Simulator, station_id

TRACE_FORMAT = "qtag-trace"
TRACE_VERSION = 1


@dataclass
class RunResult:
    config: object
    seed: int
    decision: AuthDecision
    verdicts: list
    trace: list | None
    qke: list
    strategy: Strategy
    sim: Simulator
    abort: Exception | None = None
    verification_delays: list = field(default_factory=list)

    @property
    def spoofed(self) -> bool:
        """Authenticated although the tag was off or moved."""
        return self.decision.authenticated and self.config.adversary.strategy != "none"

    def arrival_errors(self) -> list[Fraction]:
        return [s.arrival_error for v in self.verdicts for s in v.stations if s.arrival_error is not None]

    def header(self) -> dict:
        return {"format": TRACE_FORMAT, "version": TRACE_VERSION, "seed": self.seed,
                "config": self.config.to_dict()}

    def trace_lines(self) -> list[str]:
        return [_dumps(self.header())] + [_dumps(r) for r in self.trace or []]

    def write_trace(self, path) -> None:
        Path(path).write_text("\n".join(self.trace_lines()) + "\n")


def _dumps(rec) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


# -- key provisioning ---------------------------------------------------------

@dataclass
class Provisioned:
    tag_bits: list
    verifier_bits: list
    tag_mac_bits: list
    verifier_mac_bits: list
    sessions: list


def key_demand(config) -> tuple[int, int]:
    """(tagging bits, message-MAC bits) a session of N rounds consumes."""
    proto, geom = config.protocol, config.geometry
    stations = len(geom.stations)
    tagging = 4 * proto.rounds if proto.mode == ONE_DIM else 2 * stations * proto.rounds
    mac = MessageAuth.bits_needed(proto.rounds, stations) if proto.authenticate_messages else 0
    return tagging, mac


def provision_keys(config, gen: np.random.Generator) -> Provisioned:
    """Split the preshared key into a QKE authentication reserve and tagging
    material; run QKE sessions until the tagging material suffices.

    If QKE keeps aborting the session proceeds short of key and the tag
    simply runs dry (rounds then fail as Missing)."""
    kc = config.keys
    initial = kc.initial_bits()
    if initial is None:
        initial = gen.integers(0, 2, kc.initial_key_bits, dtype=np.uint8).tolist()
    reserve = min(kc.auth_reserve_bits, len(initial))
    auth = list(initial[:reserve])
    alice = list(initial[reserve:])
    bob = list(alice)
    tagging, mac = key_demand(config)
    need = tagging + mac
    sessions = []
    while len(alice) < need and len(sessions) < kc.max_qke_sessions:
        if len(auth) < AUTH_BITS_PER_SESSION:
            break
        s = QkeSession.from_auth_bits(auth[:AUTH_BITS_PER_SESSION], qber_threshold=kc.qber_threshold, f_est=kc.f_est)
        auth = auth[AUTH_BITS_PER_SESSION:]
        qke_expand(s, kc.qke_n_raw, gen, eavesdrop=kc.eavesdrop_qke)
        sessions.append(s)
        if s.status is QkeStatus.COMPLETED:
            refill = min(AUTH_BITS_PER_SESSION, len(s.alice_key))
            auth += s.alice_key[:refill]
            alice += s.alice_key[refill:]
            bob += s.bob_key[refill:]
    return Provisioned(bob[:tagging], alice[:tagging], bob[tagging:need], alice[tagging:need], sessions)


# -- the driver ---------------------------------------------------------------

def _auth(bits, stations, enabled):
    return MessageAuth(KeyPool(list(bits)), stations) if enabled else None


def run(config, seed: int | None = None, *, trace: bool = True, allow_abort: bool = False,
        max_events: int | None = None) -> RunResult:
    """Execute one tagging session.

    Causality and capability violations abort the simulation; they are
    re-raised unless ``allow_abort`` is set, in which case the partial trace
    (ending in an ``abort`` record) is returned."""
    seed = config.experiment.seed if seed is None else seed
    geom, proto = config.geometry, config.protocol
    sim = Simulator(geom, seed, trace=trace, capabilities=config.adversary.capabilities(),
                    max_events=max_events if max_events is not None else event_budget(config))
    gen = np.random.default_rng([seed, 1])
    keys = provision_keys(config, gen)
    for s in keys.sessions:
        sim.record("qke", 0, geom.exact_stations[0], station_id(0), **s.summary())

    ctx = SessionContext(geom, proto)
    strategy = make_strategy(config.adversary.strategy, ctx, config.adversary.params)
    n_st = len(geom.stations)
    ids = [station_id(s) for s in range(n_st)]
    mac_on = proto.authenticate_messages

    if proto.mode == ONE_DIM:
        challenges = schedule_challenges_1d(geom, proto, sim.rng, _auth(keys.verifier_mac_bits, n_st, mac_on))
        stations = [ChallengeStation(s, challenges, _auth(keys.verifier_mac_bits, n_st, mac_on)) for s in range(n_st)]
        tag = Tag(proto, ids, store=KeyStore(keys.tag_bits), auth=_auth(keys.tag_mac_bits, n_st, mac_on),
                  on=strategy.tag_on)
    else:
        requests = schedule_requests(geom, proto, sim.rng)
        verifier_blocks = BlockKeySet.from_shared(keys.verifier_bits, n_st)
        shared = config.keys.share_mode == "qke_link"
        stations = [
            RequestStation(s, requests[s], _auth(keys.verifier_mac_bits, n_st, mac_on),
                           keys=verifier_blocks if shared or s == 0 else None, hub=s == 0)
            for s in range(n_st)
        ]
        tag = Tag(proto, ids, blocks=BlockKeySet.from_shared(keys.tag_bits, n_st),
                  auth=_auth(keys.tag_mac_bits, n_st, mac_on), on=strategy.tag_on)
    for st, pos in zip(stations, geom.exact_stations):
        sim.add_actor(st, pos)
    sim.add_actor(tag, geom.exact_tag)
    strategy.attach(sim)

    abort = None
    try:
        sim.run()
    except (CausalityViolation, CapabilityViolation) as exc:
        sim.record("abort", sim.now, geom.exact_claimed, ADVERSARY, error=type(exc).__name__, detail=str(exc))
        if not allow_abort:
            raise
        abort = exc

    delays = []
    if proto.mode == ONE_DIM:
        verifier = KeyStore(keys.verifier_bits)
        verdicts = []
        for i in range(proto.rounds):
            a, b = (ch.bit for ch in challenges[2 * i: 2 * i + 2])
            try:
                expected = verifier.peek(i, a, b)
            except KeyDepletionError:
                expected = -1
            observed = {st.id: st.received.get(i, []) for st in stations}
            verdicts.append(verify_round(expected, expected_arrivals_1d(geom, proto, i), observed, proto.epsilon, i))
        decision = decide(verdicts, proto)
    else:
        verdicts = []
        for j in range(proto.rounds):
            checks = tuple(verify_block(st, j, geom, proto) for st in stations)
            expected = {st.id: strategy.ctx.expected_arrival(j, st.index) for st in stations}
            verdicts.append(RoundVerdict(j, checks, expected))
            for st in stations:
                got = st.received.get(j)
                if got and j in st.verified_at:
                    delays.append(st.verified_at[j] - min(o.arrival for o in got))
        decision = authenticate_3d(verdicts, geom, proto)
    return RunResult(config, seed, decision, verdicts, sim.trace, [s.summary() for s in keys.sessions],
                     strategy, sim, abort, delays)


def event_budget(config) -> int:
    """Upper bound on engine events for one session (termination guard)."""
    n_st = len(config.geometry.stations)
    per_round = 16 * (n_st + 1) ** 2
    return 1000 + per_round * max(config.protocol.rounds, 1) + int(config.adversary.params.get("probes", 3) or 0) * 4


# -- replay -------------------------------------------------------------------

@dataclass
class AuditViolation:
    record: int
    datum: str
    deficit: float


@dataclass
class ReplayReport:
    equal: bool
    records: int
    first_divergence: int | None = None
    expected: dict | None = None
    actual: dict | None = None
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.equal and not self.violations

    def describe(self) -> str:
        lines = []
        if self.equal:
            lines.append(f"replay: {self.records} records identical")
        else:
            lines.append(f"replay: divergence at record {self.first_divergence}")
            lines.append(f"  trace:  {_dumps(self.expected) if self.expected else '<missing>'}")
            lines.append(f"  replay: {_dumps(self.actual) if self.actual else '<missing>'}")
        if self.violations:
            for v in self.violations:
                lines.append(f"causality audit: record {v.record} uses {v.datum!r}, short by {v.deficit:g} time units")
        else:
            lines.append("causality audit: 0 violations")
        return "\n".join(lines)


def read_trace(source) -> tuple[dict, list[dict]]:
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    elif isinstance(source, (str, bytes)):
        rows = [json.loads(line) for line in source.splitlines() if line.strip()]
    else:
        rows = [json.loads(r) if isinstance(r, str) else r for r in source]
    if not rows or rows[0].get("format") != TRACE_FORMAT:
        raise ReplayMismatch("not a trace: missing header")
    header = rows[0]
    if header.get("version") != TRACE_VERSION:
        raise ReplayMismatch(f"trace version {header.get('version')!r} is not supported (expected {TRACE_VERSION})")
    return header, rows[1:]


def audit_trace(records: list[dict], geom) -> list[AuditViolation]:
    """Re-check every adversarial emission against a ledger rebuilt from the trace."""
    ledger = InfoLedger()
    out = []
    for rec in records:
        if rec.get("kind") != "emit":
            continue
        event = SpacetimeEvent(exact(rec["t"]), tuple(exact(v) for v in rec["x"]))
        if rec.get("actor") == ADVERSARY:
            for datum in rec.get("refs", []):
                origin = ledger.origin(datum)
                if origin is None:
                    out.append(AuditViolation(rec["i"], datum, float("inf")))
                elif not causally_accessible(origin, event, geom):
                    out.append(AuditViolation(rec["i"], datum, light_cone_deficit(origin, event, geom)))
        for datum in rec.get("datums", []):
            ledger.record(datum, event)
    return out


def replay(source) -> ReplayReport:
    """Re-execute a trace from its header and compare record by record."""
    from ..config import ScenarioConfig

    header, records = read_trace(source)
    config = ScenarioConfig.from_dict(header["config"])
    fresh = run(config, header["seed"], allow_abort=True).trace
    report = ReplayReport(True, len(records))
    for k in range(max(len(records), len(fresh))):
        want = records[k] if k < len(records) else None
        got = fresh[k] if k < len(fresh) else None
        if want != got:
            report.equal = False
            report.first_divergence = k
            report.expected, report.actual = want, got
            break
    report.violations = audit_trace(records, config.geometry)
    return report
