"""Frame-to-event camera simulation.

Brightness is compared in log intensity, L = ln(I + 1e-3). For each
pixel and consecutive frame pair (t_a, t_b], the change against the
pixel's reference level triggers one event per full contrast-threshold
multiple crossed; the n events share the interval with evenly distributed
timestamps t_a + k (t_b - t_a) / (n + 1), k = 1..n, strictly inside the
interval so none lands on a frame timestamp. The reference level then
advances by n * C (not by the full change), carrying the residual into
the next interval. Emissions closer than the refractory period to the
pixel's previous emission are suppressed, but the reference level still
advances; the comparator resets regardless of output.

Timestamps are integer microseconds; refractory comparison happens in
nanoseconds where the 200 ns default is meaningful.
"""

from __future__ import annotations

import numpy as np

from .stream import EventStream, GrayFrame, SensorConfig

__all__ = ["log_intensity", "EventSimulator", "simulate_events", "COUNT_GUARD"]

LOG_EPS = 1e-3
# |delta| / C is floored to count threshold multiples; the guard absorbs
# float division noise so exact multiples (0.84 / 0.28) count fully
COUNT_GUARD = 1e-9


def log_intensity(frame: GrayFrame) -> np.ndarray:
    """L = ln(I + 1e-3); monotone in I."""
    return np.log(frame.image.astype(np.float64) + LOG_EPS)


class EventSimulator:
    """Stateful per-pixel simulator; feed frames in time order."""

    def __init__(self, sensor: SensorConfig):
        self.sensor = sensor
        self.l_ref: np.ndarray | None = None
        self.l_last: np.ndarray | None = None
        self.t_last_ns: np.ndarray | None = None
        self._t_prev_us: int | None = None
        self._chunks: list[tuple] = []

    def feed(self, frame: GrayFrame) -> None:
        if frame.image.shape != (self.sensor.height, self.sensor.width):
            raise ValueError(
                f"frame shape {frame.image.shape} does not match sensor "
                f"{self.sensor.height}x{self.sensor.width}"
            )
        log_img = log_intensity(frame)
        if self.l_ref is None:
            self.l_ref = log_img.copy()
            self.l_last = log_img
            # sentinel far in the past but safe against int64 overflow
            self.t_last_ns = np.full(log_img.shape, -(1 << 62), np.int64)
            self._t_prev_us = frame.t
            return
        if frame.t <= self._t_prev_us:
            raise ValueError(
                f"frame timestamps must be strictly increasing "
                f"({frame.t} after {self._t_prev_us})"
            )
        self._emit_interval(self._t_prev_us, frame.t, log_img)
        self.l_last = log_img
        self._t_prev_us = frame.t

    def _emit_interval(self, t_a: int, t_b: int, log_img: np.ndarray) -> None:
        delta = log_img - self.l_ref
        sign = np.sign(delta)
        c = np.where(delta > 0, self.sensor.c_pos, self.sensor.c_neg)
        n = np.floor(np.abs(delta) / c + COUNT_GUARD).astype(np.int64)
        self.l_ref = self.l_ref + sign * n * c

        ys, xs = np.nonzero(n)
        if ys.size == 0:
            return
        counts = n[ys, xs]
        total = int(counts.sum())
        rx = np.repeat(xs, counts)
        ry = np.repeat(ys, counts)
        rp = np.repeat(sign[ys, xs].astype(np.int8), counts)
        rn = np.repeat(counts, counts)
        starts = np.cumsum(counts) - counts
        k = np.arange(total) - np.repeat(starts, counts) + 1
        span = float(t_b - t_a)
        t_real = t_a + k * span / (rn + 1.0)
        rt_us = np.rint(t_real).astype(np.int64)

        keep = self._apply_refractory(ys, xs, counts, t_a, t_b, rt_us, starts)
        self._chunks.append((rx[keep], ry[keep], rt_us[keep], rp[keep]))

    def _apply_refractory(self, ys, xs, counts, t_a, t_b, rt_us, starts) -> np.ndarray:
        """Suppression mask; updates per-pixel last-emission times."""
        tau = self.sensor.refractory_ns
        prev_ns = self.t_last_ns[ys, xs]
        first_ns = rt_us[starts] * 1000
        # fast path when no candidate of a pixel can violate tau; the 2 us
        # margin is conservative against microsecond rounding of gaps
        ideal_gap_ns = np.floor_divide((t_b - t_a) * 1000, counts + 1)
        clear = (first_ns - prev_ns >= tau) & ((ideal_gap_ns - 2000 >= tau) | (counts == 1))

        keep = np.ones(rt_us.size, dtype=bool)
        for j in np.nonzero(~clear)[0]:
            last = int(prev_ns[j])
            for i in range(starts[j], starts[j] + counts[j]):
                t_ns = int(rt_us[i]) * 1000
                if t_ns - last >= tau:
                    last = t_ns
                else:
                    keep[i] = False
            self.t_last_ns[ys[j], xs[j]] = last
        ok = np.nonzero(clear)[0]
        if ok.size:
            self.t_last_ns[ys[ok], xs[ok]] = rt_us[starts[ok] + counts[ok] - 1] * 1000
        return keep

    def residual(self) -> np.ndarray:
        """|L_last - l_ref| per pixel: change not yet past a threshold."""
        if self.l_ref is None:
            raise RuntimeError("no frames fed yet")
        return np.abs(self.l_last - self.l_ref)

    def finish(self) -> EventStream:
        if not self._chunks:
            return EventStream.empty(self.sensor)
        x = np.concatenate([c[0] for c in self._chunks])
        y = np.concatenate([c[1] for c in self._chunks])
        t = np.concatenate([c[2] for c in self._chunks])
        p = np.concatenate([c[3] for c in self._chunks])
        order = np.argsort(t, kind="stable")  # row-major within equal t
        return EventStream.from_arrays(x[order], y[order], t[order], p[order],
                                       self.sensor)


def simulate_events(frames, sensor: SensorConfig,
                    return_sim: bool = False):
    """Run the simulator over a frame sequence; returns the sorted stream.

    ``return_sim`` also hands back the simulator for reference-level and
    residual inspection.
    """
    sim = EventSimulator(sensor)
    n = 0
    for frame in frames:
        sim.feed(frame)
        n += 1
    if n < 2:
        raise ValueError("need at least two frames to emit events")
    stream = sim.finish()
    if return_sim:
        return stream, sim
    return stream
