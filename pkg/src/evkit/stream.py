"""Core event-vision domain types and in-memory stream operations.

Conventions used everywhere in this package:

* timestamps are integer microseconds (refractory comparisons happen in
  nanoseconds inside the camera simulator, where 200 ns matters);
* time intervals are half-open ``[t_start, t_end)`` so adjacent slices
  partition a stream exactly;
* polarity is +1/-1 in the API and a boolean on disk / in text files.

All types are immutable values after construction (arrays are marked
read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "SensorConfig",
    "Event",
    "EventStream",
    "GrayFrame",
    "FlowField",
    "slice_stream",
    "merge_streams",
]


@dataclass(frozen=True)
class SensorConfig:
    """Event-camera model parameters.

    Defaults reproduce the simulated sensor this toolkit targets: 1280x720
    at 70 deg field of view, symmetric contrast thresholds of 0.28, a
    200 ns refractory period, grayscale/flow cadence of 20 Hz and a
    brightness-comparison cadence of 17 Hz.
    """

    width: int = 1280
    height: int = 720
    fov_deg: float = 70.0
    c_pos: float = 0.28
    c_neg: float = 0.28
    refractory_ns: int = 200
    frame_rate: float = 20.0
    compare_rate: float = 17.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"resolution must be >= 1x1, got {self.width}x{self.height}")
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise ValueError("resolution must fit in 16 unsigned bits per axis")
        if self.c_pos <= 0 or self.c_neg <= 0:
            raise ValueError("contrast thresholds must be positive")
        if self.refractory_ns < 0:
            raise ValueError("refractory period must be >= 0")

    def scaled(self, width: int, height: int) -> "SensorConfig":
        """Same sensor model at a different resolution."""
        return replace(self, width=width, height=height)


class Event(NamedTuple):
    """A single brightness-change report."""

    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 or -1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EventStream:
    """A time-sorted sequence of events, stored column-wise.

    ``x``/``y`` are int32 pixel coordinates, ``t`` int64 microsecond
    timestamps (non-decreasing), ``p`` int8 polarities in {+1, -1}.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sensor: SensorConfig = field(default_factory=SensorConfig)

    @classmethod
    def from_arrays(cls, x, y, t, p, sensor: SensorConfig) -> "EventStream":
        """Build a validated stream from array-likes."""
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        t = np.asarray(t, dtype=np.int64)
        p = np.asarray(p, dtype=np.int8)
        if not (x.shape == y.shape == t.shape == p.shape) or x.ndim != 1:
            raise ValueError("event channels must be 1-D arrays of equal length")
        if t.size and np.any(np.diff(t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if t.size and t[0] < 0:
            raise ValueError("event timestamps must be non-negative")
        if x.size and (x.min() < 0 or x.max() >= sensor.width or y.min() < 0 or y.max() >= sensor.height):
            raise ValueError(
                f"event coordinates outside sensor resolution {sensor.width}x{sensor.height}"
            )
        if p.size and not np.all(np.abs(p) == 1):
            raise ValueError("polarities must be +1 or -1")
        return cls(_readonly(x), _readonly(y), _readonly(t), _readonly(p), sensor)

    @classmethod
    def empty(cls, sensor: SensorConfig) -> "EventStream":
        return cls.from_arrays([], [], [], [], sensor)

    @classmethod
    def from_events(cls, events, sensor: SensorConfig) -> "EventStream":
        """Build from an iterable of (x, y, t, p) tuples, kept in given order."""
        ev = list(events)
        if not ev:
            return cls.empty(sensor)
        x, y, t, p = zip(*ev)
        return cls.from_arrays(x, y, t, p, sensor)

    def __len__(self) -> int:
        return int(self.t.size)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index) -> "EventStream":
        """Sub-stream at the given index selection (must preserve time order)."""
        return EventStream.from_arrays(
            self.x[index], self.y[index], self.t[index], self.p[index], self.sensor
        )

    @property
    def duration_us(self) -> int:
        """Half-open span covering every event: last - first + 1 (0 if empty)."""
        return int(self.t[-1] - self.t[0] + 1) if len(self) else 0


@dataclass(frozen=True)
class GrayFrame:
    """Timestamped grayscale image with intensities in [0, 1] (float32)."""

    t: int
    image: np.ndarray

    def __post_init__(self) -> None:
        img = np.ascontiguousarray(self.image, dtype=np.float32)
        if img.ndim != 2:
            raise ValueError("frame image must be 2-D")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "image", _readonly(img))

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement (pixels) over the interval [t0, t1)."""

    t0: int
    t1: int
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if not self.t0 < self.t1:
            raise ValueError(f"flow interval must satisfy t0 < t1, got [{self.t0}, {self.t1})")
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        if u.shape != v.shape or u.ndim != 2:
            raise ValueError("u and v must be 2-D arrays of identical shape")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow must be finite everywhere")
        object.__setattr__(self, "u", _readonly(u))
        object.__setattr__(self, "v", _readonly(v))

    @property
    def shape(self) -> tuple:
        return self.u.shape


def slice_stream(stream: EventStream, t_start: int, t_end: int) -> EventStream:
    """Events with t_start <= t < t_end, order preserved.

    This is the reference in-memory semantics that indexed container
    slicing is tested against.
    """
    if t_start > t_end:
        raise ValueError(f"t_start must be <= t_end, got [{t_start}, {t_end})")
    i0 = int(np.searchsorted(stream.t, t_start, side="left"))
    i1 = int(np.searchsorted(stream.t, t_end, side="left"))
    return stream.take(slice(i0, i1))


def merge_streams(a: EventStream, b: EventStream) -> EventStream:
    """Sorted merge of two streams; stable for equal timestamps (a before b)."""
    if (a.sensor.width, a.sensor.height) != (b.sensor.width, b.sensor.height):
        raise ValueError(
            f"sensor resolution mismatch: {a.sensor.width}x{a.sensor.height} "
            f"vs {b.sensor.width}x{b.sensor.height}"
        )
    t = np.concatenate([a.t, b.t])
    order = np.argsort(t, kind="stable")
    return EventStream.from_arrays(
        np.concatenate([a.x, b.x])[order],
        np.concatenate([a.y, b.y])[order],
        t[order],
        np.concatenate([a.p, b.p])[order],
        a.sensor,
    )
