"""Request arrival streams for one experiment cell."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .simcore import JobKind


@dataclass(frozen=True)
class Flat:
    pass


@dataclass(frozen=True)
class TimeOfDay:
    """Sinusoidal diurnal swing around the base rate."""

    period: float
    amplitude: float

    def __post_init__(self):
        if not 0 <= self.amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1)")
        if not self.period > 0:
            raise ValueError("period must be > 0")


@dataclass(frozen=True)
class FlashCrowd:
    """Rate multiplied by ``multiplier`` inside ``[start, start + duration)``."""

    start: float
    duration: float
    multiplier: float

    def __post_init__(self):
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")
        if self.duration < 0:
            raise ValueError("flash crowd duration must be >= 0")


Profile = Union[Flat, TimeOfDay, FlashCrowd]


@dataclass(frozen=True)
class WorkloadSpec:
    rate: float
    job_kind: JobKind = JobKind.SIMPLE
    duration: float = 10.0
    arrival_process: str = "poisson"  # or "deterministic"
    profile: Profile = field(default_factory=Flat)
    seed: int = 0
    # fraction of complex jobs in mixed traffic; None keeps every job ``job_kind``
    complex_fraction: Optional[float] = None

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")
        if self.arrival_process not in ("poisson", "deterministic"):
            raise ValueError(f"unknown arrival process {self.arrival_process!r}")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.complex_fraction is not None and not 0 <= self.complex_fraction <= 1:
            raise ValueError("complex_fraction must lie in [0, 1]")


class RateSchedule(tuple):
    """Sorted, de-duplicated, strictly positive request-rate levels."""

    def __new__(cls, levels: Iterable[float]):
        values = sorted({float(v) for v in levels})
        if not values:
            raise ValueError("rate schedule is empty")
        if values[0] <= 0:
            raise ValueError("rate levels must be > 0")
        return super().__new__(cls, values)


# Levels as printed, including the repeated 40.
PRINTED_LEVELS = (2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 100, 150, 300, 350, 400, 40, 500, 1000)


def default_schedule() -> RateSchedule:
    return RateSchedule(PRINTED_LEVELS)


def effective_rate(profile: Profile, base_rate: float, t: float) -> float:
    if isinstance(profile, TimeOfDay):
        return base_rate * (1.0 + profile.amplitude * math.sin(2.0 * math.pi * t / profile.period))
    if isinstance(profile, FlashCrowd):
        if profile.start <= t < profile.start + profile.duration:
            return base_rate * profile.multiplier
        return base_rate
    return base_rate


def peak_rate(profile: Profile, base_rate: float) -> float:
    if isinstance(profile, TimeOfDay):
        return base_rate * (1.0 + profile.amplitude)
    if isinstance(profile, FlashCrowd):
        return base_rate * profile.multiplier
    return base_rate


def cumulative_rate(profile: Profile, base_rate: float, t: float) -> float:
    """Expected number of arrivals in ``[0, t)``."""
    if isinstance(profile, TimeOfDay):
        w = 2.0 * math.pi / profile.period
        return base_rate * (t + profile.amplitude * (1.0 - math.cos(w * t)) / w)
    if isinstance(profile, FlashCrowd):
        inside = min(max(t - profile.start, 0.0), profile.duration)
        return base_rate * (t + (profile.multiplier - 1.0) * inside)
    return base_rate * t


def _invert_cumulative(profile: Profile, base_rate: float, target: float, hi: float) -> float:
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cumulative_rate(profile, base_rate, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return hi


def _deterministic_times(spec: WorkloadSpec) -> np.ndarray:
    profile = spec.profile
    if isinstance(profile, Flat):
        count = math.floor(spec.rate * spec.duration + 1e-9)
        return np.arange(count) / spec.rate
    total = cumulative_rate(profile, spec.rate, spec.duration)
    count = math.floor(total + 1e-9)
    times = [_invert_cumulative(profile, spec.rate, k, spec.duration) for k in range(count)]
    return np.array([t for t in times if t < spec.duration])


def _poisson_times(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    lam = peak_rate(spec.profile, spec.rate)
    horizon = spec.duration
    chunk = int(lam * horizon + 6.0 * math.sqrt(lam * horizon) + 16)
    times = np.cumsum(rng.exponential(1.0 / lam, size=chunk))
    while times[-1] < horizon:
        more = np.cumsum(rng.exponential(1.0 / lam, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times < horizon]
    if not isinstance(spec.profile, Flat):
        # thinning against the time-varying rate
        u = rng.random(times.size)
        rates = np.array([effective_rate(spec.profile, spec.rate, t) for t in times])
        times = times[u * lam < rates]
    return times


def _strictly_increasing(times: np.ndarray) -> np.ndarray:
    if times.size > 1 and np.any(np.diff(times) <= 0):
        times = times.copy()
        for i in range(1, times.size):
            if times[i] <= times[i - 1]:
                times[i] = np.nextafter(times[i - 1], np.inf)
    return times


def generate(spec: WorkloadSpec) -> list[tuple[float, JobKind]]:
    """Return ``(send_time, kind)`` pairs in ``[0, duration)``, strictly increasing."""
    if spec.duration == 0:
        return []
    rng = np.random.default_rng(spec.seed)
    if spec.arrival_process == "deterministic":
        times = _deterministic_times(spec)
    else:
        times = _poisson_times(spec, rng)
    times = _strictly_increasing(times)
    if spec.complex_fraction is None:
        kinds = [spec.job_kind] * times.size
    else:
        heavy = rng.random(times.size) < spec.complex_fraction
        kinds = [JobKind.COMPLEX if h else JobKind.SIMPLE for h in heavy]
    return list(zip(times.tolist(), kinds))
