"""Monte Carlo estimation of spoofing probabilities.

Trial ``k`` of an experiment with master seed ``m`` runs with seed
``SeedSequence(m).spawn(trials)[k].generate_state(1, uint64)[0]``, so results
never depend on the worker count or completion order.

Two estimators:

* ``event``: every trial is a full engine session.
* ``batch``: one engine session (the template) fixes every round's timing
  verdict, which does not depend on secret or guessed bits; the bit
  outcomes of all trials are then drawn by the strategy's vectorised kernel.
  Chunk ``j`` of ``chunk_size(N)`` trials draws from child ``j`` of the
  master SeedSequence.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from statistics import mean

import numpy as np

from .adversary import SpoofOutcome
from .engine.runner import run
from .protocol import ONE_DIM, FailureCause, RoundVerdict, authenticate_3d, decide
from .report import ConfigResult, ExperimentReport

Z95 = 1.959963984540054
EVENT_LIMIT = 5000


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def trial_seeds(master: int, trials: int) -> list[int]:
    children = np.random.SeedSequence(master).spawn(trials)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def chunk_size(rounds: int) -> int:
    return max(1, (1 << 22) // max(rounds, 1))


# -- event-driven trials ------------------------------------------------------

def _event_chunk(args):
    config, seeds = args
    out = []
    for s in seeds:
        r = run(config, s, trace=False)
        errs = [abs(float(e)) for e in r.arrival_errors()]
        out.append((r.decision.authenticated, errs, r.qke))
    return out


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def estimate_event(config, trials: int, master: int, workers: int = 1):
    seeds = trial_seeds(master, trials)
    per = max(1, math.ceil(trials / max(workers, 1)))
    jobs = [(config, seeds[k:k + per]) for k in range(0, trials, per)]
    rows = [row for chunk in _map(_event_chunk, jobs, workers) for row in chunk]
    successes = sum(ok for ok, _, _ in rows)
    errors = [e for _, errs, _ in rows for e in errs]
    qke = [q for _, _, sessions in rows for q in sessions]
    return successes, errors, qke, None


# -- batch trials -------------------------------------------------------------

def _bit_blind(verdicts):
    """Verdicts with wrong-bit failures forgiven: what timing alone decides."""
    out = []
    for v in verdicts:
        checks = tuple(replace(s, cause=None, bit_correct=True) if s.cause is FailureCause.WRONG_BIT else s
                       for s in v.stations)
        out.append(RoundVerdict(v.round, checks, v.expected))
    return out


def template(config, master: int):
    """One full session; returns (result, timing-only decision)."""
    result = run(config, trial_seeds(master, 1)[0], trace=False)
    blind = _bit_blind(result.verdicts)
    if config.protocol.mode == ONE_DIM:
        timing = decide(blind, config.protocol)
    else:
        timing = authenticate_3d(blind, config.geometry, config.protocol)
    return result, timing


def _batch_chunk(args):
    strategy, seed_seq, n, rounds = args
    gen = np.random.default_rng(seed_seq)
    return int(np.count_nonzero(np.all(strategy.batch_round_success(gen, n, rounds), axis=1)))


def estimate_batch(config, trials: int, master: int, workers: int = 1):
    result, timing = template(config, master)
    errors = [abs(float(e)) for e in result.arrival_errors()]
    rounds = config.protocol.rounds
    strategy = result.strategy
    exact = float(strategy.exact_round_probability() ** rounds) if timing.authenticated else 0.0
    if not timing.authenticated:
        return 0, errors, result.qke, exact
    size = chunk_size(rounds)
    n_chunks = math.ceil(trials / size)
    children = np.random.SeedSequence(master).spawn(n_chunks)
    jobs = [(strategy, children[j], min(size, trials - j * size), rounds) for j in range(n_chunks)]
    successes = sum(_map(_batch_chunk, jobs, workers))
    return successes, errors, result.qke, exact


def exact_reference(config, master: int | None = None) -> float:
    """Enumerated per-round probability to the power N, from a template session."""
    result, timing = template(config, config.experiment.seed if master is None else master)
    if not timing.authenticated:
        return 0.0
    return float(result.strategy.exact_round_probability() ** config.protocol.rounds)


def estimate(config, trials: int | None = None, seed: int | None = None, workers: int | None = None,
             method: str | None = None) -> SpoofOutcome:
    res = run_config(config, {}, trials, seed, workers, method)
    return SpoofOutcome(res.trials, res.successes, res.exact)


def resolve_method(config, trials: int, method: str | None = None) -> str:
    method = method or config.experiment.method
    if method == "auto":
        return "event" if trials <= EVENT_LIMIT else "batch"
    return method


def run_config(config, point: dict, trials=None, seed=None, workers=None, method=None) -> ConfigResult:
    trials = trials or config.experiment.trials
    master = config.experiment.seed if seed is None else seed
    workers = workers or config.experiment.workers
    method = resolve_method(config, trials, method)
    start = time.perf_counter()
    if method == "event":
        successes, errors, qke, _ = estimate_event(config, trials, master, workers)
        exact = exact_reference(config, master)
    else:
        successes, errors, qke, exact = estimate_batch(config, trials, master, workers)
    lo, hi = wilson_interval(successes, trials)
    done = [q for q in qke if q["status"] == "completed"]
    return ConfigResult(
        point=dict(point),
        strategy=config.adversary.strategy,
        rounds=config.protocol.rounds,
        trials=trials,
        successes=successes,
        p_hat=successes / trials,
        exact=exact,
        ci_low=lo,
        ci_high=hi,
        mean_abs_error=mean(errors) if errors else None,
        max_abs_error=max(errors) if errors else None,
        sifted_mean=mean(q["sifted"] for q in done) if done else None,
        qber_mean=mean(q["qber"] for q in qke) if qke else None,
        method=method,
        duration=time.perf_counter() - start,
    )


def run_experiment(config, trials=None, seed=None, workers=None, method=None) -> ExperimentReport:
    """Every sweep point of ``config``, in file order."""
    report = ExperimentReport()
    base = config.with_values({"experiment.sweep": {}})
    for point in config.sweep_points():
        cfg = base.with_values(point) if point else base
        report.results.append(run_config(cfg, point, trials, seed, workers, method))
    return report
