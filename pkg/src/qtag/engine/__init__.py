"""Event engine and the end-to-end session driver."""

from .core import ADVERSARY, TAG, Actor, Emission, Message, Simulator, station_id

__all__ = ["ADVERSARY", "TAG", "Actor", "Emission", "Message", "Simulator", "station_id", "run", "replay"]


def __getattr__(name):
    # The runner depends on the protocol layer, which itself imports core.
    if name in ("run", "replay", "RunResult", "ReplayReport"):
        from . import runner

        return getattr(runner, name)
    raise AttributeError(name)
