"""Quantum key expansion at the qubit-abstraction level (BB84).

Qubits are ideal: a measurement in the preparation basis returns the
prepared bit, any other basis returns a fair coin.  The only error source is
an intercept-resend eavesdropper.  Every classical message of the sifting and
estimation phase is authenticated with 128 bits from the preshared
authentication key, so tampering aborts the session.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mac import MAC_KEY_BITS, KeyPool, mac_sign, mac_verify

QBER_THRESHOLD = 0.11
F_EST = 0.25
MESSAGES_PER_SESSION = 4
AUTH_BITS_PER_SESSION = MESSAGES_PER_SESSION * MAC_KEY_BITS


class QkeStatus(enum.Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    ABORTED = "aborted"


@dataclass
class QkeSession:
    """One expansion run between a sender (Alice's lab) and a receiver (the tag).

    Each side keeps its own copy of the authentication key; both copies are
    consumed in lockstep.
    """

    alice_auth: KeyPool
    bob_auth: KeyPool
    qber_threshold: float = QBER_THRESHOLD
    f_est: float = F_EST
    raw_length: int = 0
    sifted_length: int = 0
    sample_size: int = 0
    qber: float = 0.0
    status: QkeStatus = QkeStatus.RUNNING
    cause: str | None = None
    alice_key: list = field(default_factory=list)
    bob_key: list = field(default_factory=list)
    transcript: list = field(default_factory=list)

    @classmethod
    def from_auth_bits(cls, auth_bits, **kw) -> "QkeSession":
        bits = [int(b) for b in auth_bits]
        return cls(KeyPool(list(bits)), KeyPool(list(bits)), **kw)

    @property
    def new_key(self) -> list:
        return self.alice_key if self.status is QkeStatus.COMPLETED else []

    def summary(self) -> dict:
        return {
            "raw": self.raw_length,
            "sifted": self.sifted_length,
            "sample": self.sample_size,
            "qber": self.qber,
            "status": self.status.value,
            "cause": self.cause,
            "key_bits": len(self.new_key),
        }


Tamper = Callable[[str, bytes], bytes]


def _abort(session: QkeSession, cause: str) -> QkeSession:
    session.status = QkeStatus.ABORTED
    session.cause = cause
    session.alice_key, session.bob_key = [], []
    return session


def _authenticated(session, name, payload, sender_pool, receiver_pool, tamper) -> bool:
    off, key = sender_pool.take(MAC_KEY_BITS, label=name)
    tag = mac_sign(payload, key, off)
    received = tamper(name, payload) if tamper else payload
    _, rkey = receiver_pool.take(MAC_KEY_BITS, label=name)
    ok = mac_verify(received, tag, rkey)
    session.transcript.append({"message": name, "bytes": len(payload), "tag": tag.hex(), "verified": ok})
    return ok


def qke_expand(
    session: QkeSession,
    n_raw: int,
    rng: np.random.Generator,
    eavesdrop: bool = False,
    tamper: Tamper | None = None,
) -> QkeSession:
    """Run one BB84 round of ``n_raw`` qubits and update ``session`` in place.

    ``tamper(name, payload)`` models an active attacker on the classical
    channel; the four message names are ``bases``, ``sift``, ``sample`` and
    ``estimate``.
    """
    if session.status is not QkeStatus.RUNNING:
        raise ValueError(f"session already {session.status.value}")
    if n_raw <= 0:
        raise ValueError("n_raw must be positive")
    if min(session.alice_auth.remaining(), session.bob_auth.remaining()) < AUTH_BITS_PER_SESSION:
        return _abort(session, "auth-key-depleted")

    session.raw_length = n_raw
    alice_bits = rng.integers(0, 2, n_raw, dtype=np.uint8)
    alice_bases = rng.integers(0, 2, n_raw, dtype=np.uint8)
    bob_bases = rng.integers(0, 2, n_raw, dtype=np.uint8)
    coins = rng.integers(0, 2, n_raw, dtype=np.uint8)

    sent_bits, sent_bases = alice_bits, alice_bases
    if eavesdrop:
        eve_bases = rng.integers(0, 2, n_raw, dtype=np.uint8)
        eve_coins = rng.integers(0, 2, n_raw, dtype=np.uint8)
        sent_bits = np.where(eve_bases == alice_bases, alice_bits, eve_coins).astype(np.uint8)
        sent_bases = eve_bases
    bob_bits = np.where(bob_bases == sent_bases, sent_bits, coins).astype(np.uint8)

    if not _authenticated(session, "bases", b"bases|" + np.packbits(bob_bases).tobytes(),
                          session.bob_auth, session.alice_auth, tamper):
        return _abort(session, "authentication")
    match = alice_bases == bob_bases
    if not _authenticated(session, "sift", b"sift|" + np.packbits(match).tobytes(),
                          session.alice_auth, session.bob_auth, tamper):
        return _abort(session, "authentication")

    sifted = np.flatnonzero(match)
    session.sifted_length = len(sifted)
    m = int(round(session.f_est * len(sifted)))
    picks = np.sort(rng.choice(len(sifted), size=m, replace=False)) if m else np.empty(0, dtype=np.int64)
    sample_pos = sifted[picks]
    session.sample_size = m

    payload = b"sample|" + sample_pos.astype(">u4").tobytes() + np.packbits(alice_bits[sample_pos]).tobytes()
    if not _authenticated(session, "sample", payload, session.alice_auth, session.bob_auth, tamper):
        return _abort(session, "authentication")
    payload = b"estimate|" + np.packbits(bob_bits[sample_pos]).tobytes()
    if not _authenticated(session, "estimate", payload, session.bob_auth, session.alice_auth, tamper):
        return _abort(session, "authentication")

    errors = int(np.count_nonzero(alice_bits[sample_pos] != bob_bits[sample_pos]))
    session.qber = errors / m if m else 0.0
    if session.qber > session.qber_threshold:
        return _abort(session, "qber")

    keep = np.ones(len(sifted), dtype=bool)
    keep[picks] = False
    session.alice_key = alice_bits[sifted[keep]].tolist()
    session.bob_key = bob_bits[sifted[keep]].tolist()
    session.status = QkeStatus.COMPLETED
    return session
