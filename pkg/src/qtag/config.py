"""Scenario configuration files.

YAML (JSON is accepted too, being a YAML subset), schema version 1::

    schema: 1
    geometry:   {dimension: 1, c: 1, stations: [[0], [10]], tag: [5]}
    protocol:   {rounds: 10, round_period: 1, timing_tolerance: 0, mode: one_dim}
    keys:       {initial_key_bits: 1024, qke_n_raw: 4096}
    adversary:  {strategy: guess, scenario: I}
    experiment: {trials: 1000, seed: 7, sweep: {protocol.rounds: [1, 2, 4, 8]}}

Exact values (coordinates, times, c, v) may be written as ``"13/2"``.
Loading validates everything and reports every problem with its field path.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .causality import AdversaryCapabilities, Scenario
from .errors import ConfigurationError
from .keys import bits_from_hex
from .protocol import ONE_DIM, THREE_DIM, ProtocolConfig
from .spacetime import Geometry

SCHEMA_VERSION = 1
SHARE_MODES = ("qke_link", "authenticated_link")
METHODS = ("auto", "event", "batch")


class ConfigParseError(ConfigurationError):
    """The file is not well-formed YAML; the message carries line and column."""


@dataclass(frozen=True)
class KeysConfig:
    initial_key_hex: str | None = None
    initial_key_bits: int = 1024
    auth_reserve_bits: int = 1024
    qke_n_raw: int = 4096
    qber_threshold: float = 0.11
    f_est: float = 0.25
    share_mode: str = "qke_link"
    eavesdrop_qke: bool = False
    max_qke_sessions: int = 64

    def problems(self) -> list[tuple[str, str]]:
        out = []
        for name in ("initial_key_bits", "auth_reserve_bits", "qke_n_raw", "max_qke_sessions"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                out.append((f"keys.{name}", f"must be a non-negative integer, got {v!r}"))
        if self.qke_n_raw == 0:
            out.append(("keys.qke_n_raw", "must be positive"))
        if self.initial_key_hex is not None:
            try:
                bits = bits_from_hex(str(self.initial_key_hex))
            except ValueError as exc:
                out.append(("keys.initial_key_hex", f"not hex: {exc}"))
            else:
                if isinstance(self.initial_key_bits, int) and self.initial_key_bits > len(bits):
                    out.append(("keys.initial_key_bits", f"hex key holds only {len(bits)} bits"))
        for name in ("qber_threshold", "f_est"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0 <= v <= 1:
                out.append((f"keys.{name}", f"must lie in [0, 1], got {v!r}"))
        if self.share_mode not in SHARE_MODES:
            out.append(("keys.share_mode", f"must be one of {SHARE_MODES}"))
        return out

    def initial_bits(self) -> list[int] | None:
        if self.initial_key_hex is None:
            return None
        return bits_from_hex(str(self.initial_key_hex), self.initial_key_bits)


@dataclass(frozen=True)
class AdversaryConfig:
    strategy: str = "none"
    scenario: str = "I"
    speed_bound: Any = None
    can_drop_messages: bool = False
    params: dict = field(default_factory=dict)

    def capabilities(self) -> AdversaryCapabilities:
        return AdversaryCapabilities(Scenario(self.scenario), self.speed_bound, self.can_drop_messages)


@dataclass(frozen=True)
class ExperimentConfig:
    trials: int = 1
    seed: int = 0
    workers: int = 1
    method: str = "auto"
    sweep: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: Geometry
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    keys: KeysConfig = field(default_factory=KeysConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        g = self.geometry
        geometry = {
            "dimension": g.dimension,
            "c": g.c,
            "stations": [list(s) for s in g.stations],
            "tag": list(g.tag),
        }
        if g.tag_extent is not None:
            geometry["tag_extent"] = list(g.tag_extent)
        if g.claimed_tag is not None:
            geometry["claimed_tag"] = list(g.claimed_tag)
        return {
            "schema": SCHEMA_VERSION,
            "geometry": geometry,
            "protocol": asdict(self.protocol),
            "keys": asdict(self.keys),
            "adversary": copy.deepcopy(asdict(self.adversary)),
            "experiment": copy.deepcopy(asdict(self.experiment)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        cfg, errors = _build(data)
        if errors:
            raise ConfigurationError(errors)
        return cfg

    def with_values(self, assignments: dict) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"protocol.rounds": 4}``."""
        data = self.to_dict()
        for path, value in assignments.items():
            section, _, key = path.partition(".")
            if section not in data or not key:
                raise ConfigurationError([(path, "unknown parameter path")])
            target = data[section]
            *parents, leaf = key.split(".")
            for p in parents:
                target = target.setdefault(p, {})
            target[leaf] = copy.deepcopy(value)
        return ScenarioConfig.from_dict(data)

    def sweep_points(self) -> list[dict]:
        """Cartesian product of the listed sweep values, in file order."""
        sweep = self.experiment.sweep
        if not sweep:
            return [{}]
        keys = list(sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(sweep[k] for k in keys))]


def _known(section: str, data: dict, allowed, errors) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        errors.append((section, "must be a mapping"))
        return {}
    for key in data:
        if key not in allowed:
            errors.append((f"{section}.{key}", "unknown field"))
    return {k: v for k, v in data.items() if k in allowed}


def _build(data) -> tuple[ScenarioConfig | None, list]:
    errors: list[tuple[str, str]] = []
    if not isinstance(data, dict):
        return None, [("", "top level must be a mapping")]
    top = {"schema", "geometry", "protocol", "keys", "adversary", "experiment"}
    for key in data:
        if key not in top:
            errors.append((key, "unknown section"))
    if data.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        errors.append(("schema", f"unsupported schema {data.get('schema')!r}; expected {SCHEMA_VERSION}"))

    gd = _known("geometry", data.get("geometry"), {"dimension", "c", "stations", "tag", "tag_extent", "claimed_tag"}, errors)
    geom = None
    if "geometry" not in data:
        errors.append(("geometry", "required"))
    else:
        missing = [k for k in ("dimension", "stations", "tag") if k not in gd]
        for k in missing:
            errors.append((f"geometry.{k}", "required"))
        if not missing:
            try:
                geom = Geometry(**gd)
            except ConfigurationError as exc:
                errors.extend((f"geometry.{p}" if p else "geometry", m) for p, m in exc.errors)
            except TypeError as exc:
                errors.append(("geometry", str(exc)))

    def section(name, kind):
        raw = _known(name, data.get(name), {f.name for f in fields(kind)}, errors)
        try:
            obj = kind(**raw)
        except ConfigurationError as exc:
            errors.extend(exc.errors)
            return None
        except TypeError as exc:
            errors.append((name, str(exc)))
            return None
        probs = obj.problems() if hasattr(obj, "problems") and kind is not ProtocolConfig else []
        errors.extend(probs)
        return obj

    protocol = section("protocol", ProtocolConfig)
    keys = section("keys", KeysConfig)
    adversary = section("adversary", AdversaryConfig)
    experiment = section("experiment", ExperimentConfig)

    if protocol is not None and protocol.rounds < 1:
        errors.append(("protocol.rounds", "N must be >= 1"))
    if geom is not None and protocol is not None:
        if protocol.mode == ONE_DIM and geom.dimension != 1:
            errors.append(("protocol.mode", "one_dim mode needs a 1D geometry"))
        if protocol.mode == THREE_DIM and geom.dimension not in (2, 3):
            errors.append(("protocol.mode", "three_dim (multilateration) mode needs a 2D or 3D geometry"))
    if adversary is not None:
        from .adversary import STRATEGIES

        if adversary.strategy not in STRATEGIES:
            errors.append(("adversary.strategy", f"unknown strategy {adversary.strategy!r}; choose from {sorted(STRATEGIES)}"))
        elif protocol is not None and protocol.mode not in STRATEGIES[adversary.strategy].modes:
            errors.append(("adversary.strategy", f"{adversary.strategy} does not support mode {protocol.mode}"))
        if adversary.scenario not in ("I", "II"):
            errors.append(("adversary.scenario", "must be 'I' or 'II'"))
        elif geom is not None:
            try:
                errors.extend(adversary.capabilities().problems(geom.c))
            except (TypeError, ValueError, ZeroDivisionError):
                errors.append(("adversary.speed_bound", f"not a number: {adversary.speed_bound!r}"))
        if not isinstance(adversary.params, dict):
            errors.append(("adversary.params", "must be a mapping"))
    if experiment is not None:
        e = experiment
        for name in ("trials", "workers"):
            v = getattr(e, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                errors.append((f"experiment.{name}", f"must be an integer >= 1, got {v!r}"))
        if not isinstance(e.seed, int) or isinstance(e.seed, bool) or not 0 <= e.seed < 2**64:
            errors.append(("experiment.seed", "must be an unsigned 64-bit integer"))
        if e.method not in METHODS:
            errors.append(("experiment.method", f"must be one of {METHODS}"))
        if not isinstance(e.sweep, dict):
            errors.append(("experiment.sweep", "must be a mapping of parameter path -> list of values"))
        else:
            for path, values in e.sweep.items():
                if not isinstance(values, list):
                    errors.append((f"experiment.sweep.{path}", "must be a list"))
                elif path.split(".")[0] not in {"geometry", "protocol", "keys", "adversary"}:
                    errors.append((f"experiment.sweep.{path}", "unknown parameter path"))

    if errors:
        return None, errors
    cfg = ScenarioConfig(geom, protocol, keys, adversary, experiment)
    # Every sweep point must be valid on its own.
    plain = ScenarioConfig(geom, protocol, keys, adversary, replace(experiment, sweep={}))
    for point in cfg.sweep_points():
        if not point:
            continue
        try:
            plain.with_values(point)
        except ConfigurationError as exc:
            errors.extend((f"experiment.sweep[{point}].{p}", m) for p, m in exc.errors)
    return (None, errors) if errors else (cfg, [])


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigParseError([(where, getattr(exc, "problem", None) or str(exc))]) from exc
    return ScenarioConfig.from_dict(data)


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
