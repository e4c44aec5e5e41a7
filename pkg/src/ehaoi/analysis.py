"""Closed-form bounds, renewal statistics and hitting-time diagnostics.

Every check returns a :class:`CheckReport`; statistical slack defaults to
three standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .engine import ExperimentConfig, run_experiment

# probability that one slot of Poisson(1) energy leaves an empty battery empty
Q_EMPTY = 2.0 * math.exp(-1.0)


@dataclass
class CheckReport:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"check: {self.name}", f"passed: {str(self.passed).lower()}"]
        for k, v in self.values.items():
            lines.append(f"{k}: {_fmt(v)}")
        return "\n".join(lines)

    def to_row(self) -> dict:
        row = {"check": self.name, "passed": self.passed}
        for k, v in self.values.items():
            row[k] = v if np.isscalar(v) else " ".join(_fmt(x) for x in v)
        return row


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def lower_bound(p: float) -> float:
    """(2 - p) / (2p): the AoI floor for bounded updating policies."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    return (2.0 - p) / (2.0 * p)


def geometric_pmf(j, p: float):
    """(1-p)^(j-1) p: the first success of Bernoulli(p) trials lands on trial j."""
    j = np.asarray(j)
    if np.any(j < 1):
        raise ValueError("j must be at least 1")
    out = (1.0 - p) ** (j - 1.0) * p
    return float(out) if out.ndim == 0 else out


def geometric_truncation(p: float, tol: float = 1e-13) -> int:
    """Smallest J with tail mass (1-p)^J below ``tol``."""
    if p >= 1:
        return 1
    return max(1, math.ceil(math.log(tol) / math.log1p(-p)))


def geometric_second_moment(p: float, terms: int | None = None) -> float:
    """Partial sum of j^2 p_j; ``(2 - p) / p^2`` in the limit."""
    n = geometric_truncation(p) + 10 if terms is None else terms
    j = np.arange(1, n + 1, dtype=float)
    return math.fsum(j * j * geometric_pmf(j, p))


# --- battery random walk ------------------------------------------------------


def first_hitting_index(arrivals: Iterable[int], start: int = 1) -> int | None:
    """First n with start + sum_{i<=n}(A_i - 1) == 0, or None if never reached."""
    level = start
    for n, a in enumerate(arrivals, 1):
        level += a - 1
        if level <= 0:
            return n
    return None


def walk_hitting_time(rng: np.random.Generator, cap: int = 10**8) -> tuple[int, bool]:
    """Sample the zero-hitting time of the Poisson(1) - 1 walk started at 1.

    Returns ``(kappa, censored)``; a censored sample reports ``cap``.
    """
    level, n, size = 1, 0, 64
    while n < cap:
        m = min(size, cap - n)
        path = level + np.cumsum(rng.poisson(1.0, m) - 1)
        hit = int(np.argmax(path <= 0))
        if path[hit] <= 0:
            return n + hit + 1, False
        level = int(path[-1])
        n += m
        size = min(size * 2, 1 << 20)
    return cap, True


def walk_hitting_times(rng: np.random.Generator, samples: int, cap: int = 10**8) -> np.ndarray:
    """``samples`` censored hitting times min(kappa, cap)."""
    return np.array([walk_hitting_time(rng, cap)[0] for _ in range(samples)], dtype=np.int64)


def gamma(alpha):
    return np.exp(-alpha) - (1.0 - alpha)


def gamma_prime(alpha):
    return 1.0 - np.exp(-alpha)


def hitting_time_bound(alpha):
    """Martingale lower bound exp(-alpha) / gamma'(alpha) on E[kappa]."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    out = np.exp(-alpha) / gamma_prime(alpha)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WalkDiagnostics:
    kappa: np.ndarray
    cap: int
    alphas: tuple[float, ...]
    bounds: tuple[float, ...]

    @classmethod
    def sample(cls, rng, samples: int, cap: int, alphas: Sequence[float]) -> "WalkDiagnostics":
        kappa = walk_hitting_times(rng, samples, cap)
        return cls(kappa, cap, tuple(alphas), tuple(hitting_time_bound(a) for a in alphas))

    def censored_mean(self, cap: int | None = None) -> float:
        cap = self.cap if cap is None else min(cap, self.cap)
        return float(np.minimum(self.kappa, cap).mean())


def martingale_bound_check(
    alphas: Sequence[float], kappa: np.ndarray, cap: int, slack_se: float = 3.0
) -> CheckReport:
    """Censored mean of kappa against exp(-alpha)/gamma'(alpha) for each alpha.

    An alpha whose bound is not below ``cap`` cannot be tested with censored
    samples and is reported as untestable.
    """
    kappa = np.minimum(np.asarray(kappa), cap)
    mean = float(kappa.mean())
    se = float(kappa.std(ddof=1) / math.sqrt(kappa.size)) if kappa.size > 1 else 0.0
    bounds, ok = [], []
    for a in alphas:
        b = hitting_time_bound(a)
        bounds.append(b)
        ok.append(bool(b >= cap or mean >= b - slack_se * se))
    return CheckReport(
        "martingale_bound",
        all(ok),
        {
            "alphas": list(alphas),
            "bounds": bounds,
            "censored_mean": mean,
            "stderr": se,
            "cap": cap,
            "testable": [b < cap for b in bounds],
            "per_alpha_pass": ok,
        },
    )


def hitting_time_growth_check(kappa: np.ndarray, low_cap: int, high_cap: int, factor: float = 5.0) -> CheckReport:
    """Censored-mean growth between two caps, the finite-sample face of E[kappa] = inf."""
    kappa = np.asarray(kappa)
    lo = float(np.minimum(kappa, low_cap).mean())
    hi = float(np.minimum(kappa, high_cap).mean())
    return CheckReport(
        "hitting_time_growth",
        hi > factor * lo,
        {"low_cap": low_cap, "high_cap": high_cap, "mean_low": lo, "mean_high": hi, "ratio": hi / lo, "factor": factor},
    )


# --- renewal structure ---------------------------------------------------------


@dataclass(frozen=True)
class RenewalStats:
    t1: np.ndarray
    t2: np.ndarray
    tail: np.ndarray
    deliveries: np.ndarray

    def __post_init__(self):
        for name in ("t1", "t2", "tail"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} samples must be non-negative")

    @classmethod
    def from_records(cls, records) -> "RenewalStats":
        def pool(attr, dtype=float):
            return np.array([x for r in records for x in getattr(r, attr)], dtype=dtype)

        return cls(pool("t1"), pool("t2"), pool("tail"), pool("stage1_deliveries", np.int64))


def t2_distribution_check(t2: Sequence[float], q: float = Q_EMPTY, alpha: float = 1e-3, slack_se: float = 3.0) -> CheckReport:
    """Chi-square fit of stage-2 durations to geometric(1 - q) on {1, 2, ...}.

    Bins with expected count below 5 are pooled into the upper tail.
    """
    t2 = np.asarray(t2, dtype=float)
    n = t2.size
    if n < 2:
        raise ValueError("need at least two stage-2 samples")
    if np.any(t2 != np.round(t2)) or np.any(t2 < 1):
        raise ValueError("stage-2 durations must be positive integers")
    r = 1.0 - q
    k = 1
    while n * geometric_pmf(k + 1, r) >= 5:
        k += 1
    j = np.arange(1, k + 1)
    expected = np.append(n * geometric_pmf(j, r), n * q**k)
    observed = np.append([np.count_nonzero(t2 == x) for x in j], np.count_nonzero(t2 > k))
    chi2, pval = stats.chisquare(observed, expected)
    mean = float(t2.mean())
    se = float(t2.std(ddof=1) / math.sqrt(n))
    target = 1.0 / r
    mean_ok = abs(mean - target) <= slack_se * se
    return CheckReport(
        "t2_geometric",
        bool(pval >= alpha and mean_ok),
        {
            "samples": n,
            "q": q,
            "p_t2_1": float(np.mean(t2 == 1)),
            "expected_p_t2_1": r,
            "chi2": float(chi2),
            "bins": k + 1,
            "p_value": float(pval),
            "mean": mean,
            "stderr": se,
            "expected_mean": target,
        },
    )


def renewal_tail_check(tails_by_t0: Mapping[float, Sequence[float]], max_ratio: float = 2.0) -> CheckReport:
    """First and second moments of T1 - S_N(T1) stay within a band across T0."""
    t0s = sorted(tails_by_t0)
    m1 = [float(np.mean(tails_by_t0[t])) for t in t0s]
    m2 = [float(np.mean(np.square(tails_by_t0[t]))) for t in t0s]

    def band(m):
        lo, hi = min(m), max(m)
        if hi <= 1e-12:
            return 1.0
        return hi / lo if lo > 0 else math.inf

    r1, r2 = band(m1), band(m2)
    return CheckReport(
        "renewal_tail",
        r1 < max_ratio and r2 < max_ratio,
        {"t0": t0s, "mean": m1, "second_moment": m2, "mean_ratio": r1, "second_moment_ratio": r2},
    )


def thinning_check(inter_times: Sequence[float], p: float, max_j: int = 20, slack_se: float = 3.0) -> CheckReport:
    """Per-bin frequency of integer inter-delivery gaps against (1-p)^(j-1) p."""
    x = np.rint(np.asarray(inter_times, dtype=float)).astype(np.int64)
    n = x.size
    j = np.arange(1, max_j + 1)
    pj = geometric_pmf(j, p)
    freq = np.array([np.count_nonzero(x == k) for k in j]) / n
    se = np.sqrt(pj * (1 - pj) / n)
    z = np.divide(freq - pj, se, out=np.zeros_like(pj), where=se > 0)
    return CheckReport(
        "thinning_geometric",
        bool(np.all(np.abs(z) <= slack_se)),
        {"samples": n, "p": p, "max_abs_z": float(np.max(np.abs(z))), "freq": freq.tolist(), "pmf": pj.tolist()},
    )


# --- BU-ER convergence ----------------------------------------------------------


def t0_convergence_check(
    p: float,
    t0_grid: Sequence[float],
    T: float = 5000,
    paths: int = 500,
    seed: int = 42,
    t0_clock: str = "cycle",
    tolerance: float | None = None,
    workers: int | None = None,
    slack_se: float = 3.0,
) -> CheckReport:
    """Long-run AoI of BU-ER against the lower bound as T0 grows.

    Passes when every step up the T0 grid is no worse than the previous one
    (paired difference within ``slack_se`` standard errors), BU is no worse
    than any BU-ER run, and, if ``tolerance`` is given, the largest T0 lands
    within that relative distance of the bound.
    """
    bound = lower_bound(p)
    bu = np.array(run_experiment(ExperimentConfig(p=p, T=T, paths=paths, seed=seed, policy="bu"), workers).terminal)
    runs = []
    for t0 in sorted(t0_grid):
        cfg = ExperimentConfig(p=p, T=T, paths=paths, seed=seed, policy="bu-er", T0=t0, t0_clock=t0_clock)
        runs.append(np.array(run_experiment(cfg, workers).terminal))
    means = [float(r.mean()) for r in runs]
    ses = [float(r.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0 for r in runs]
    trend_ok = True
    for a, b in zip(runs, runs[1:]):
        d = b - a
        se = float(d.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
        trend_ok &= bool(d.mean() <= slack_se * se)
    dominance_ok = all(bool(np.all(bu <= r + 1e-12)) for r in runs)
    gap = [m / bound - 1.0 for m in means]
    passed = trend_ok and dominance_ok
    if tolerance is not None:
        passed = passed and abs(gap[-1]) <= tolerance
    return CheckReport(
        "t0_convergence",
        passed,
        {
            "p": p,
            "t0_clock": t0_clock,
            "t0": sorted(t0_grid),
            "mean": means,
            "stderr": ses,
            "relative_gap": gap,
            "bu_mean": float(bu.mean()),
            "lower_bound": bound,
            "trend_ok": trend_ok,
            "dominance_ok": dominance_ok,
        },
    )
