"""Online status-update policies.

A policy only ever receives a :class:`PolicyView`: the current instant, its
battery, its own attempt history and the harvesting rate. Channel outcomes,
delivery instants and the success probability are never passed in, so no
policy can condition on them.
"""

from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass

from .core import BatteryState


class Phase(enum.Enum):
    STAGE1 = 1
    STAGE2 = 2


class AttemptHistory(Sequence):
    """Read-only window onto the engine's list of attempt instants."""

    __slots__ = ("_epochs",)

    def __init__(self, epochs: list[float]):
        self._epochs = epochs

    def __getitem__(self, i):
        return self._epochs[i]

    def __len__(self):
        return len(self._epochs)


@dataclass(frozen=True, slots=True)
class PolicyView:
    now: float
    battery: BatteryState
    own_attempt_history: Sequence[float]
    harvesting_rate: float = 1.0


@dataclass(frozen=True, slots=True)
class PolicyDecision:
    """When the policy next wants to act.

    ``next_epoch`` is an update opportunity when ``attempt`` is true and a
    pure timer otherwise. ``None`` means event-driven: attempt at the next
    energy arrival. ``set_battery`` is an energy-removal directive applied at
    the current instant.
    """

    next_epoch: float | None
    attempt: bool = True
    set_battery: int | None = None

    def __post_init__(self):
        if self.set_battery is not None and self.set_battery < 0:
            raise ValueError("set_battery must be non-negative")


def _next_integer(now: float) -> float:
    return float(math.floor(now) + 1)


def bu_next(view: PolicyView) -> PolicyDecision:
    """Best-effort uniform: the next scheduled epoch is the smallest integer after ``now``."""
    return PolicyDecision(_next_integer(view.now))


def greedy_next(view: PolicyView) -> PolicyDecision:
    """Spend every stored unit at once, then update on each energy arrival.

    Stored units are serialized at successive representable instants just
    after ``now``.
    """
    if view.battery.level >= 1:
        return PolicyDecision(math.nextafter(view.now, math.inf))
    return PolicyDecision(None)


def bu_er_next(
    view: PolicyView,
    t0: float,
    phase: Phase,
    clock_origin: float = 0.0,
    restart_clock: bool = False,
) -> tuple[PolicyDecision, Phase, float]:
    """One step of best-effort updating with energy removal.

    Called at time zero and after every wake-up with the post-epoch battery.
    Stage 1 is plain BU; it ends when the post-epoch battery reaches zero or
    when the clock passes ``clock_origin + t0``, at which point the battery is
    emptied. Stage 2 keeps BU updating until the post-epoch battery is at least
    one, cuts it back to exactly one and re-enters stage 1.

    With ``restart_clock`` the T0 clock restarts at every return to stage 1,
    giving i.i.d. renewal cycles. Otherwise the cutoff fires once, at absolute
    time ``t0``, and the returned origin becomes infinite afterwards.
    Returns the decision, the new phase and the new clock origin.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    level = view.battery.level
    now = view.now
    expired = now >= clock_origin + t0
    set_battery = None
    if phase is Phase.STAGE1:
        if level == 0:
            phase = Phase.STAGE2
        elif expired:
            set_battery = 0
            phase = Phase.STAGE2
    elif level >= 1:
        set_battery = 1
        phase = Phase.STAGE1
        if restart_clock:
            clock_origin = now
    if expired and not restart_clock:
        clock_origin = math.inf

    nxt = _next_integer(now)
    cutoff = clock_origin + t0
    if phase is Phase.STAGE1 and now < cutoff < nxt:
        return PolicyDecision(cutoff, attempt=False, set_battery=set_battery), phase, clock_origin
    return PolicyDecision(nxt, set_battery=set_battery), phase, clock_origin


class Policy(ABC):
    """Per-path policy state machine. Create a fresh instance for every path."""

    name: str = ""

    @abstractmethod
    def decide(self, view: PolicyView) -> PolicyDecision: ...

    def check_initial_level(self, e0: int) -> None:
        if e0 < 1:
            raise ValueError("initial battery level must be at least 1")


class BestEffortUniform(Policy):
    name = "bu"

    def decide(self, view):
        return bu_next(view)


class Greedy(Policy):
    name = "greedy"

    def decide(self, view):
        return greedy_next(view)


class BestEffortEnergyRemoval(Policy):
    """BU with energy removal; records its phase changes as ``(instant, phase)``."""

    name = "bu-er"

    def __init__(self, t0: float = 30.0, restart_clock: bool = False):
        if t0 <= 0:
            raise ValueError("t0 must be positive")
        self.t0 = t0
        self.restart_clock = restart_clock
        self.phase = Phase.STAGE1
        self.clock_origin = 0.0
        self.stage_start = 0.0
        self.transitions: list[tuple[float, Phase]] = [(0.0, Phase.STAGE1)]

    def check_initial_level(self, e0):
        if e0 != 2:
            raise ValueError("bu-er is defined for an initial battery level of 2")

    def decide(self, view):
        now = view.now
        if self.phase is Phase.STAGE1 and now > self.stage_start and now == math.floor(now):
            hist = view.own_attempt_history
            # stage 1 never reaches an epoch with an empty battery
            assert hist and hist[-1] == now, f"silent epoch at {now} during stage 1"
        decision, phase, self.clock_origin = bu_er_next(
            view, self.t0, self.phase, self.clock_origin, self.restart_clock
        )
        if phase is not self.phase:
            self.transitions.append((now, phase))
            self.phase = phase
            self.stage_start = now
        return decision


T0_CLOCKS = ("absolute", "cycle")
POLICY_NAMES = ("bu", "bu-er", "greedy")


def make_policy(name: str, t0: float = 30.0, t0_clock: str = "absolute") -> Policy:
    if t0_clock not in T0_CLOCKS:
        raise ValueError(f"unknown t0 clock {t0_clock!r}; expected one of {', '.join(T0_CLOCKS)}")
    if name == "bu":
        return BestEffortUniform()
    if name == "bu-er":
        return BestEffortEnergyRemoval(t0, restart_clock=t0_clock == "cycle")
    if name == "greedy":
        return Greedy()
    raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
