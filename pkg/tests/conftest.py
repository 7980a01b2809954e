import pytest
from hypothesis import HealthCheck, settings

from qtag.config import ScenarioConfig

settings.register_profile(
    "qtag", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("qtag")

SYMMETRIC = {"dimension": 1, "c": 1, "stations": [[0], [10]], "tag": [5]}
TETRA = {"dimension": 3, "c": 1, "stations": [[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10]], "tag": [2, 2, 2]}


def build(geometry=None, **overrides) -> ScenarioConfig:
    """Scenario from a geometry plus dotted-path overrides (``protocol__rounds=3``)."""
    geometry = geometry or SYMMETRIC
    data = {"geometry": dict(geometry)}
    if geometry["dimension"] > 1:
        data["protocol"] = {"mode": "three_dim"}
    cfg = ScenarioConfig.from_dict(data)
    return cfg.with_values({k.replace("__", "."): v for k, v in overrides.items()}) if overrides else cfg


@pytest.fixture
def make_config():
    return build


@pytest.fixture
def symmetric():
    return build(protocol__rounds=4)


@pytest.fixture
def relocated():
    def make(strategy="relocation", delta=2, **kw):
        kw.setdefault("adversary__params", {"displacement": [delta]})
        return build(adversary__strategy=strategy, adversary__scenario="II", adversary__speed_bound="1/10", **kw)
    return make
