from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled signal with optional per-sample standard error.

    ``times`` are in seconds.
    """

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or v.shape != t.shape:
            raise UsageError("times and values must be 1-D arrays of equal length")
        if self.stderr is not None:
            e = np.asarray(self.stderr, dtype=float)
            if e.shape != t.shape:
                raise UsageError("stderr must match the length of values")
            object.__setattr__(self, "stderr", e)
        if len(t) > 2:
            steps = np.diff(t)
            if np.ptp(steps) > 1e-9 * abs(steps.mean()):
                raise UsageError("trace is not uniformly sampled")

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __sub__(self, other: "SignalTrace") -> "SignalTrace":
        if not np.array_equal(self.times, other.times):
            raise UsageError("traces are sampled on different clocks")
        err = None
        if self.stderr is not None and other.stderr is not None:
            err = np.hypot(self.stderr, other.stderr)
        return SignalTrace(self.times, self.values - other.values, err)

    def scaled(self, factor: float) -> "SignalTrace":
        err = None if self.stderr is None else self.stderr * abs(factor)
        return SignalTrace(self.times, self.values * factor, err)

    def window(self, t_min: float, t_max: float) -> "SignalTrace":
        sel = (self.times >= t_min) & (self.times <= t_max)
        err = None if self.stderr is None else self.stderr[sel]
        return SignalTrace(self.times[sel], self.values[sel], err)
