"""Experiment reports: a fixed-width table and schema-versioned JSON records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

RECORD_SCHEMA = 1


@dataclass
class ConfigResult:
    """Aggregate over all trials of one configuration (one sweep point)."""

    point: dict
    strategy: str
    rounds: int
    trials: int
    successes: int
    p_hat: float
    exact: float | None
    ci_low: float
    ci_high: float
    mean_abs_error: float | None
    max_abs_error: float | None
    sifted_mean: float | None
    qber_mean: float | None
    method: str
    duration: float | None = field(default=None, compare=False)

    def record(self) -> dict:
        rec = {k: v for k, v in asdict(self).items() if k != "duration"}
        return {"schema": RECORD_SCHEMA, **rec}

    @classmethod
    def from_record(cls, rec: dict) -> "ConfigResult":
        if rec.get("schema") != RECORD_SCHEMA:
            raise ValueError(f"unsupported record schema {rec.get('schema')!r}")
        names = {f.name for f in fields(cls)} - {"duration"}
        return cls(**{k: rec[k] for k in names})


@dataclass
class ExperimentReport:
    results: list = field(default_factory=list)

    def to_records(self) -> str:
        return "".join(json.dumps(r.record(), sort_keys=True) + "\n" for r in self.results)

    def to_table(self) -> str:
        cols = [
            ("point", 24), ("strategy", 18), ("N", 5), ("trials", 9), ("succ", 9), ("p_hat", 11),
            ("exact", 11), ("ci95_low", 11), ("ci95_high", 11), ("max_err", 9), ("qber", 7), ("sec", 7),
        ]
        lines = [" ".join(name.ljust(w) for name, w in cols).rstrip()]
        for r in self.results:
            point = ",".join(f"{k.split('.')[-1]}={v}" for k, v in r.point.items()) or "-"
            cells = [
                point, r.strategy, str(r.rounds), str(r.trials), str(r.successes), _num(r.p_hat),
                _num(r.exact), _num(r.ci_low), _num(r.ci_high), _num(r.max_abs_error),
                _num(r.qber_mean, 4), _num(r.duration, 2),
            ]
            lines.append(" ".join(c[:w].ljust(w) for c, (_, w) in zip(cells, cols)).rstrip())
        return "\n".join(lines) + "\n"

    def emit(self, stream, fmt: str = "table") -> None:
        stream.write(self.to_records() if fmt == "records" else self.to_table())


def _num(x, digits=6) -> str:
    if x is None:
        return "-"
    return f"{x:.{digits}g}"


def parse_records(text: str) -> list[ConfigResult]:
    return [ConfigResult.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]
