"""Seeded Monte Carlo driver.

Each path owns two independent random streams derived from ``(seed,
path_index)``: one for energy inter-arrival gaps, one for channel coins. Coin
``k`` belongs to the ``k``-th update opportunity of the path, so two policies
run on the same ``(seed, path_index)`` see the same energy trace and the same
channel state at every common scheduled epoch.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import (
    AoiAccumulator,
    AttemptLog,
    BatteryState,
    DeliveryLog,
    EnergyCausalityError,
    EnergyTrace,
    finalize_aoi,
    record_delivery,
)
from .policies import AttemptHistory, Phase, Policy, PolicyView, make_policy

_CHUNK = 512
_STREAM_TAGS = {"energy": 0, "channel": 1, "walk": 2}


def derive_stream(seed: int, path_index: int, stream_tag: str) -> np.random.Generator:
    """Independent, reproducible generator for one purpose on one path."""
    tag = _STREAM_TAGS.get(stream_tag)
    if tag is None:
        tag = zlib.crc32(stream_tag.encode()) | (1 << 32)
    ss = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(path_index, tag))
    return np.random.Generator(np.random.PCG64(ss))


def poisson_arrivals(rng: np.random.Generator, rate: float = 1.0) -> Iterator[float]:
    """Lazy Poisson arrival instants built from exponential(1) gaps."""
    t = 0.0
    while True:
        for g in rng.standard_exponential(_CHUNK).tolist():
            t += g / rate
            yield t


def channel_coins(rng: np.random.Generator, p: float) -> Iterator[bool]:
    """Bernoulli(p) success flags, one per update opportunity."""
    while True:
        for u in rng.random(_CHUNK).tolist():
            yield u < p


def log_grid(horizon: float, points: int = 50) -> tuple[float, ...]:
    """Logarithmically spaced horizons from 1 (or horizon, if smaller) up to horizon."""
    lo = min(1.0, horizon)
    grid = np.geomspace(lo, horizon, points).tolist()
    grid[-1] = float(horizon)
    return tuple(sorted(set(grid)))


@dataclass(frozen=True)
class ExperimentConfig:
    p: float
    T: float
    paths: int = 500
    seed: int = 42
    policy: str = "bu"
    T0: float = 30.0
    E0: int = 2
    t0_clock: str = "absolute"
    sample_grid: tuple[float, ...] | None = None
    rate: float = 1.0

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.paths < 1:
            raise ValueError("paths must be at least 1")
        if self.E0 < 1:
            raise ValueError("E0 must be at least 1")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        make_policy(self.policy, self.T0, self.t0_clock).check_initial_level(self.E0)
        if self.sample_grid is not None:
            grid = tuple(float(g) for g in self.sample_grid)
            if any(not 0 < g <= self.T for g in grid) or list(grid) != sorted(set(grid)):
                raise ValueError("sample_grid must be strictly increasing within (0, T]")
            object.__setattr__(self, "sample_grid", grid)

    @property
    def grid(self) -> tuple[float, ...]:
        return self.sample_grid if self.sample_grid is not None else log_grid(self.T)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["sample_grid"] is not None:
            d["sample_grid"] = list(d["sample_grid"])
        return d


@dataclass(frozen=True)
class SimRecord:
    path_index: int
    policy: str
    horizon: float
    attempts: AttemptLog
    deliveries: DeliveryLog
    aoi: float  # R(T)
    grid: tuple[float, ...]
    grid_aoi: tuple[float, ...]  # R(t)/t at each grid point
    initial_level: int
    final_level: int
    max_level: int
    skipped_epochs: int
    arrivals: int
    removals: tuple[tuple[float, int], ...] = ()
    phases: tuple[tuple[float, str], ...] = ()
    t1: tuple[float, ...] = ()
    t2: tuple[float, ...] = ()
    tail: tuple[float, ...] = ()
    stage1_deliveries: tuple[int, ...] = ()
    trace: EnergyTrace | None = field(default=None, repr=False)

    @property
    def average_aoi(self) -> float:
        return self.aoi / self.horizon

    def age_at(self, t: float) -> float:
        """Instantaneous age t - U(t)."""
        i = self.deliveries.count_until(t)
        return t - (self.deliveries.epochs[i - 1] if i else 0.0)

    def stripped(self) -> "SimRecord":
        """Copy without the per-event logs."""
        return dataclasses.replace(self, attempts=AttemptLog(), deliveries=DeliveryLog(), trace=None)

    def to_json(self) -> str:
        d = {
            "path_index": self.path_index,
            "policy": self.policy,
            "horizon": self.horizon,
            "aoi": self.aoi,
            "average_aoi": self.average_aoi,
            "attempts": len(self.attempts.epochs),
            "deliveries": len(self.deliveries.epochs),
            "arrivals": self.arrivals,
            "initial_level": self.initial_level,
            "final_level": self.final_level,
            "max_level": self.max_level,
            "skipped_epochs": self.skipped_epochs,
            "attempt_epochs": list(self.attempts.epochs),
            "battery_before": list(self.attempts.battery_before),
            "delivery_epochs": list(self.deliveries.epochs),
            "removals": [list(r) for r in self.removals],
            "t1": list(self.t1),
            "t2": list(self.t2),
            "tail": list(self.tail),
        }
        return json.dumps(d, separators=(",", ":"))


def _renewals(phases, deliveries, horizon):
    """Completed stage-1/stage-2 durations, stage-1 tails and delivery counts."""
    t1, t2, tail, counts = [], [], [], []
    dl = np.asarray(deliveries, dtype=float)
    starts = [t for t, ph in phases if ph is Phase.STAGE1]
    ends = [t for t, ph in phases if ph is Phase.STAGE2]
    for i, end in enumerate(ends):
        start = starts[i]
        t1.append(end - start)
        k_end = int(np.searchsorted(dl, end, side="right"))
        k_start = int(np.searchsorted(dl, start, side="right"))
        tail.append(end - (dl[k_end - 1] if k_end else 0.0))
        counts.append(k_end - k_start)
        if i + 1 < len(starts):
            t2.append(starts[i + 1] - end)
    return tuple(t1), tuple(t2), tuple(tail), tuple(counts)


def simulate(
    policy: Policy,
    p: float,
    horizon: float,
    arrivals: Iterator[float],
    coins: Iterator[bool],
    e0: int = 2,
    grid: Sequence[float] = (),
    rate: float = 1.0,
    path_index: int = 0,
    keep_trace: bool = False,
) -> SimRecord:
    """Run one path: merge energy arrivals with the policy's wake-ups up to ``horizon``.

    An arrival at the same instant as a wake-up is processed first.
    """
    policy.check_initial_level(e0)
    battery = e0
    max_level = e0
    epochs: list[float] = []
    before: list[int] = []
    delivered: list[float] = []
    removals: list[tuple[float, int]] = []
    seen: list[float] = []
    history = AttemptHistory(epochs)
    acc = AoiAccumulator()
    grid = list(grid)
    gi = 0
    grid_aoi: list[float] = []
    skipped = 0
    n_arrivals = 0

    def consult(now):
        nonlocal battery
        d = policy.decide(PolicyView(now, BatteryState(battery, e0), history, rate))
        if d.set_battery is not None:
            if d.set_battery > battery:
                raise EnergyCausalityError(f"policy {policy.name} tried to add energy at {now}")
            battery = d.set_battery
            removals.append((now, battery))
        if d.next_epoch is not None and not d.next_epoch > now:
            raise ValueError(f"policy {policy.name} scheduled {d.next_epoch} at {now}")
        return d

    def opportunity(t):
        nonlocal battery, acc, skipped
        good = next(coins)
        if battery < 1:
            skipped += 1
            return
        epochs.append(t)
        before.append(battery)
        battery -= 1
        if good:
            delivered.append(t)
            acc = record_delivery(acc, t)

    decision = consult(0.0)
    next_arrival = next(arrivals)
    while True:
        wake = math.inf if decision.next_epoch is None else decision.next_epoch
        t = min(next_arrival, wake)
        if t > horizon:
            break
        while gi < len(grid) and grid[gi] < t:
            grid_aoi.append(finalize_aoi(acc, grid[gi]) / grid[gi])
            gi += 1
        if next_arrival <= wake:
            battery += 1
            n_arrivals += 1
            if battery > max_level:
                max_level = battery
            if keep_trace:
                seen.append(next_arrival)
            next_arrival = next(arrivals)
            if decision.next_epoch is None:
                opportunity(t)
                decision = consult(t)
        else:
            if decision.attempt:
                opportunity(t)
            decision = consult(t)
    while gi < len(grid):
        grid_aoi.append(finalize_aoi(acc, grid[gi]) / grid[gi])
        gi += 1

    phases = tuple(getattr(policy, "transitions", ()))
    t1, t2, tail, counts = _renewals(phases, delivered, horizon) if phases else ((), (), (), ())
    return SimRecord(
        path_index=path_index,
        policy=policy.name,
        horizon=horizon,
        attempts=AttemptLog(tuple(epochs), tuple(before)),
        deliveries=DeliveryLog(tuple(delivered)),
        aoi=finalize_aoi(acc, horizon),
        grid=tuple(grid),
        grid_aoi=tuple(grid_aoi),
        initial_level=e0,
        final_level=battery,
        max_level=max_level,
        skipped_epochs=skipped,
        arrivals=n_arrivals,
        removals=tuple(removals),
        phases=tuple((t, ph.name) for t, ph in phases),
        t1=t1,
        t2=t2,
        tail=tail,
        stage1_deliveries=counts,
        trace=EnergyTrace(tuple(seen), horizon) if keep_trace else None,
    )


def run_path(config: ExperimentConfig, path_index: int, keep_trace: bool = False) -> SimRecord:
    """Simulate path ``path_index``; a pure function of ``(config, path_index)``."""
    return simulate(
        make_policy(config.policy, config.T0, config.t0_clock),
        config.p,
        config.T,
        poisson_arrivals(derive_stream(config.seed, path_index, "energy"), config.rate),
        channel_coins(derive_stream(config.seed, path_index, "channel"), config.p),
        e0=config.E0,
        grid=config.grid,
        rate=config.rate,
        path_index=path_index,
        keep_trace=keep_trace,
    )


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    grid: tuple[float, ...]
    mean: tuple[float, ...]  # mean of R(t)/t across paths
    stderr: tuple[float, ...]
    terminal: tuple[float, ...]  # per-path R(T)/T, ordered by path index
    t1: tuple[float, ...] = ()
    t2: tuple[float, ...] = ()
    tail: tuple[float, ...] = ()
    records: tuple[SimRecord, ...] | None = None

    @property
    def mean_aoi(self) -> float:
        """Mean of R(T)/T at the full horizon."""
        return _mean_stderr(self.terminal)[0]

    @property
    def stderr_aoi(self) -> float:
        return _mean_stderr(self.terminal)[1]


def _worker(args):
    config, index, keep = args
    rec = run_path(config, index, keep_trace=keep)
    return rec if keep else rec.stripped()


def default_workers() -> int:
    env = os.environ.get("EHAOI_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def _mean_stderr(column: Sequence[float]) -> tuple[float, float]:
    n = len(column)
    mean = math.fsum(column) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2 for x in column) / (n - 1)
    return mean, math.sqrt(var / n)


def run_records(
    config: ExperimentConfig, workers: int | None = None, keep_records: bool = False
) -> list[SimRecord]:
    """All path records in path-index order."""
    workers = default_workers() if workers is None else workers
    tasks = [(config, i, keep_records) for i in range(config.paths)]
    if workers <= 1:
        return [_worker(t) for t in tasks]
    chunk = max(1, config.paths // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker, tasks, chunksize=chunk))


def run_experiment(
    config: ExperimentConfig, workers: int | None = None, keep_records: bool = False
) -> ExperimentResult:
    """Mean and standard error of R(t)/t over paths at each grid point.

    The result depends only on ``config``: paths are seeded independently and
    aggregated in index order with exactly rounded sums.
    """
    recs = run_records(config, workers, keep_records)
    columns = list(zip(*(r.grid_aoi for r in recs)))
    stats = [_mean_stderr(c) for c in columns]
    return ExperimentResult(
        config=config,
        grid=config.grid,
        mean=tuple(m for m, _ in stats),
        stderr=tuple(s for _, s in stats),
        terminal=tuple(r.average_aoi for r in recs),
        t1=tuple(x for r in recs for x in r.t1),
        t2=tuple(x for r in recs for x in r.t2),
        tail=tuple(x for r in recs for x in r.tail),
        records=tuple(recs) if keep_records else None,
    )


def dump_records(records: Sequence[SimRecord], path) -> None:
    """Write one JSON object per line."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json())
            fh.write("\n")
