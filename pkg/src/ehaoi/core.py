"""Domain types, the energy-queue recurrence and exact AoI accounting.

Time is a double-precision scalar measured in units of 1/lambda. Energy is an
integer count of whole units; every status update costs exactly one unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EnergyCausalityError(RuntimeError):
    """An update was attempted with an empty battery."""


class OrderingError(ValueError):
    """Instants were supplied out of order."""


@dataclass(frozen=True)
class EnergyTrace:
    """One sample path of harvesting arrival instants over (0, horizon]."""

    arrival_times: tuple[float, ...]
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        prev = 0.0
        for t in self.arrival_times:
            if not (prev < t <= self.horizon):
                raise OrderingError(
                    f"arrival times must be strictly increasing in (0, {self.horizon}]"
                )
            prev = t

    @classmethod
    def poisson(cls, rng: np.random.Generator, horizon: float, rate: float = 1.0) -> "EnergyTrace":
        """Draw a Poisson(rate) trace by accumulating exponential(1) gaps.

        A rate other than one is handled by rescaling time, so the unit-rate
        draws are shared across rates for a given stream.
        """
        times = []
        t = 0.0
        while True:
            gaps = rng.standard_exponential(256)
            for g in gaps:
                t += g / rate
                if t > horizon:
                    return cls(tuple(times), horizon)
                times.append(t)

    def count_in(self, start: float, stop: float) -> int:
        """Number of arrivals in the half-open window (start, stop]."""
        arr = self.arrival_times
        return int(np.searchsorted(arr, stop, side="right") - np.searchsorted(arr, start, side="right"))


@dataclass(frozen=True)
class BatteryState:
    level: int
    initial_level: int = 2

    def __post_init__(self):
        if self.level < 0:
            raise EnergyCausalityError(f"battery level cannot be negative ({self.level})")
        if self.initial_level < 1:
            raise ValueError("initial battery level must be at least 1")


@dataclass(frozen=True)
class AttemptLog:
    """Attempted update instants with the battery level just before each."""

    epochs: tuple[float, ...] = ()
    battery_before: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.epochs) != len(self.battery_before):
            raise ValueError("epochs and battery_before must have equal length")
        if any(b < 1 for b in self.battery_before):
            raise EnergyCausalityError("attempt logged with empty battery")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise OrderingError("attempt epochs must be strictly increasing")

    def count_until(self, t: float) -> int:
        """M(t): number of attempts in (0, t]."""
        return int(np.searchsorted(self.epochs, t, side="right"))


@dataclass(frozen=True)
class DeliveryLog:
    """Successful delivery instants S_1 < S_2 < ...; S_0 = 0 is implicit."""

    epochs: tuple[float, ...] = ()

    def __post_init__(self):
        prev = 0.0
        for s in self.epochs:
            if not s > prev:
                raise OrderingError("delivery epochs must be strictly increasing and positive")
            prev = s

    def count_until(self, t: float) -> int:
        """N(t): number of deliveries in (0, t]."""
        return int(np.searchsorted(self.epochs, t, side="right"))

    def inter_delivery_times(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], np.asarray(self.epochs, dtype=float))))


@dataclass(frozen=True)
class AoiAccumulator:
    """Running area under the age sawtooth.

    ``accumulated_area`` holds sum X_i^2 / 2 over deliveries recorded so far;
    the open tail since ``last_delivery`` is added by :func:`finalize_aoi`.
    """

    last_delivery: float = 0.0
    accumulated_area: float = 0.0

    def age_at(self, t: float) -> float:
        return t - self.last_delivery

    def area_at(self, t: float) -> float:
        """R(t), assuming no delivery in (last_delivery, t]."""
        return finalize_aoi(self, t)


def energy_step(battery: BatteryState, arrivals_in_interval: int, attempt: bool) -> BatteryState:
    """Advance the battery across one interval and an optional attempt at its end.

    Arrivals in the interval land strictly before the attempt.
    """
    level = battery.level + arrivals_in_interval
    if attempt:
        if level < 1:
            raise EnergyCausalityError(
                f"update attempted with battery level {level}; at least one unit is required"
            )
        level -= 1
    return BatteryState(level, battery.initial_level)


def record_delivery(acc: AoiAccumulator, s: float) -> AoiAccumulator:
    if not s > acc.last_delivery:
        raise OrderingError(f"delivery at {s} does not follow previous delivery at {acc.last_delivery}")
    gap = s - acc.last_delivery
    return AoiAccumulator(s, acc.accumulated_area + 0.5 * gap * gap)


def finalize_aoi(acc: AoiAccumulator, horizon: float) -> float:
    """R(T): the accumulated area plus the open tail (T - S_N(T))^2 / 2."""
    if horizon < acc.last_delivery:
        raise OrderingError(f"horizon {horizon} precedes last delivery {acc.last_delivery}")
    tail = horizon - acc.last_delivery
    return acc.accumulated_area + 0.5 * tail * tail


def accumulated_aoi(deliveries: Sequence[float] | DeliveryLog, horizon: float) -> float:
    """R(T) for a full set of delivery instants, all of which must be <= horizon."""
    epochs = deliveries.epochs if isinstance(deliveries, DeliveryLog) else deliveries
    acc = AoiAccumulator()
    for s in epochs:
        acc = record_delivery(acc, s)
    return finalize_aoi(acc, horizon)


def aoi_brute_force(deliveries: Sequence[float] | DeliveryLog, horizon: float, dt: float) -> float:
    """Midpoint Riemann sum of the instantaneous age t - U(t) over [0, horizon].

    Independent of the sawtooth bookkeeping above; used as its oracle.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    epochs = np.asarray(deliveries.epochs if isinstance(deliveries, DeliveryLog) else deliveries, dtype=float)
    stamps = np.concatenate(([0.0], epochs))
    total = 0.0
    n_cells = int(np.ceil(horizon / dt))
    block = 1 << 20
    for start in range(0, n_cells, block):
        k = np.arange(start, min(start + block, n_cells))
        left = k * dt
        right = np.minimum(left + dt, horizon)
        mid = 0.5 * (left + right)
        idx = np.searchsorted(epochs, mid, side="right")
        total += float(np.sum((mid - stamps[idx]) * (right - left)))
    return total


def replay_battery(
    initial_level: int,
    trace: EnergyTrace,
    attempts: AttemptLog,
    removals: Sequence[tuple[float, int]] = (),
) -> list[int]:
    """Recompute the battery level just before every attempt by replaying
    :func:`energy_step` over the trace, honouring energy-removal events.

    ``removals`` lists ``(instant, new_level)`` pairs; a removal at the same
    instant as an attempt applies after that attempt.
    """
    events = [(t, 0, None) for t in attempts.epochs] + [(t, 1, lvl) for t, lvl in removals]
    events.sort(key=lambda e: (e[0], e[1]))
    battery = BatteryState(initial_level, initial_level)
    before = []
    last_t = 0.0
    for t, kind, lvl in events:
        arrivals = trace.count_in(last_t, t)
        last_t = t
        if kind == 0:
            before.append(battery.level + arrivals)
            battery = energy_step(battery, arrivals, attempt=True)
        else:
            battery = energy_step(battery, arrivals, attempt=False)
            if lvl > battery.level:
                raise ValueError(f"energy removal at {t} would raise battery to {lvl}")
            battery = BatteryState(lvl, initial_level)
    return before


__all__ = [
    "AoiAccumulator",
    "AttemptLog",
    "BatteryState",
    "DeliveryLog",
    "EnergyCausalityError",
    "EnergyTrace",
    "OrderingError",
    "accumulated_aoi",
    "aoi_brute_force",
    "energy_step",
    "finalize_aoi",
    "record_delivery",
    "replay_battery",
]
