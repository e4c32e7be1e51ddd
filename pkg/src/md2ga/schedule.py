"""Per-decoder prediction horizons and the decoder activity mask.

Frame indices in the public contract are 1-based: frame 1 is the first
observed pose and frame ``T_p + T_f`` the last predicted one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


class Mode(str, enum.Enum):
    INCREMENTAL = "incremental"
    FULL_ALL = "full-all"
    DISJOINT = "disjoint"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"fullall": "full-all", "disjoint-segments": "disjoint",
                   "disjointsegments": "disjoint"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ScheduleError(f"unknown schedule mode {value!r}; "
                                f"expected one of {[m.value for m in cls]}") from None


@dataclass(frozen=True)
class HorizonSchedule:
    """Output span of each decoder on the padded timeline.

    ``lengths[k]`` is the number of frames head ``k`` emits and
    ``segment_starts[k]`` the 1-based frame of its first output. For the
    incremental and full-horizon modes every head starts at frame 1.
    """
    T_p: int
    T_f: int
    K: int
    mode: Mode
    lengths: tuple
    segment_starts: tuple

    @property
    def total(self) -> int:
        return self.T_p + self.T_f

    def spans(self) -> list:
        """Inclusive 1-based (first, last) frame per decoder."""
        return [(s, s + n - 1) for s, n in zip(self.segment_starts, self.lengths)]

    def future_frames(self) -> list:
        return [max(0, last - max(first, self.T_p + 1) + 1) for first, last in self.spans()]

    def table(self) -> list:
        return [(k + 1, n, f) for k, (n, f) in enumerate(zip(self.lengths, self.future_frames()))]


def incremental_length(k: int, T_p: int, T_f: int, K: int) -> int:
    # floor((k-1) * (T_f-1) / (K-1)) in exact integer arithmetic
    return ((k - 1) * (T_f - 1)) // (K - 1) + 1 + T_p


def compute_horizons(T_p: int, T_f: int, K: int, mode="incremental") -> HorizonSchedule:
    mode = Mode.parse(mode)
    if K < 2:
        raise ScheduleError(f"decoder count K must satisfy K >= 2, got K={K}")
    if T_p < 1:
        raise ScheduleError(f"T_p must be >= 1, got {T_p}")
    if T_f < 2:
        raise ScheduleError(f"T_f must be >= 2, got {T_f}")

    total = T_p + T_f
    if mode is Mode.INCREMENTAL:
        if K > T_f:
            raise ScheduleError(f"K={K} exceeds T_f={T_f}: incremental horizons would repeat")
        lengths = tuple(incremental_length(k, T_p, T_f, K) for k in range(1, K + 1))
        starts = (1,) * K
    elif mode is Mode.FULL_ALL:
        lengths = (total,) * K
        starts = (1,) * K
    else:
        if K > T_f:
            raise ScheduleError(f"K={K} exceeds T_f={T_f}: some segments would be empty")
        seg = T_f // K
        seg_lengths = [seg] * (K - 1) + [T_f - seg * (K - 1)]
        seg_starts = [T_p + 1 + seg * k for k in range(K)]
        # decoder 1 also reconstructs the observed frames so every column is covered
        lengths = tuple([T_p + seg_lengths[0]] + seg_lengths[1:])
        starts = tuple([1] + seg_starts[1:])
    return HorizonSchedule(T_p, T_f, K, mode, lengths, starts)


def single_schedule(T_p: int, T_f: int) -> HorizonSchedule:
    """One head spanning the whole padded timeline (the sole-decoder baseline)."""
    return HorizonSchedule(T_p, T_f, 1, Mode.FULL_ALL, (T_p + T_f,), (1,))


def build_mask(schedule: HorizonSchedule) -> np.ndarray:
    """Binary K x (T_p+T_f) matrix; column ``t-1`` marks decoders covering frame ``t``."""
    mask = np.zeros((schedule.K, schedule.total))
    for k, (first, last) in enumerate(schedule.spans()):
        mask[k, first - 1:last] = 1.0
    return mask
