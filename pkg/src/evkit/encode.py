"""Event-stream encoders (frame-like tensors) and training augmentations.

Two encoding schemes: per-bin polarity counting, and Gaussian weighting
where every event contributes to every bin with a peak-normalized kernel
``exp(-(t - mu_b)^2 / (2 sigma_b^2))``, ``mu_b`` the bin center and
``sigma_b = lambda * bin_width``. Peak normalization keeps single-event
responses comparable across bin counts.

Augmentations are pure functions returning new streams (and companion
flow-field transforms where the geometry changes); every random one is
deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .stream import EventStream, FlowField, SensorConfig, merge_streams

__all__ = [
    "EncoderConfig",
    "EncodedVolume",
    "encode_count",
    "encode_gaussian",
    "augment_time_warp",
    "augment_noise",
    "augment_flip",
    "augment_crop",
    "augment_rotate90",
    "flip_flow",
    "rotate90_flow",
]


@dataclass(frozen=True)
class EncoderConfig:
    scheme: str = "count"  # "count" | "gaussian"
    bins: int = 1
    lam: float = 0.5       # Gaussian width scale (sigma = lam * bin width)
    channel_mode: str = "two-channel"  # "two-channel" | "signed"

    def __post_init__(self) -> None:
        if self.scheme not in ("count", "gaussian"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        if self.channel_mode not in ("two-channel", "signed"):
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")


@dataclass(frozen=True)
class EncodedVolume:
    """(bins, channels, H, W) tensor; channels = (positive, negative) or one signed."""

    values: np.ndarray
    t_start: int
    t_end: int

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def _span(stream: EventStream, t_start, t_end) -> tuple[int, int]:
    if t_start is None:
        if len(stream) == 0:
            raise ValueError("empty span: give t_start/t_end for an empty stream")
        t_start = int(stream.t[0])
    if t_end is None:
        if len(stream) == 0:
            raise ValueError("empty span: give t_start/t_end for an empty stream")
        t_end = int(stream.t[-1]) + 1
    if t_end <= t_start:
        raise ValueError(f"empty span [{t_start}, {t_end})")
    return int(t_start), int(t_end)


def _accumulate(stream: EventStream, cfg: EncoderConfig, bin_weights: np.ndarray,
                t_start: int, t_end: int) -> EncodedVolume:
    """Shared splat: bin_weights is (B, N) per-bin per-event weight."""
    sensor = stream.sensor
    h, w = sensor.height, sensor.width
    b = cfg.bins
    channels = 2 if cfg.channel_mode == "two-channel" else 1
    out = np.zeros((b, channels, h, w))
    flat = stream.y.astype(np.intp) * w + stream.x.astype(np.intp)
    pos = stream.p > 0
    for k in range(b):
        wk = bin_weights[k]
        if cfg.channel_mode == "two-channel":
            out[k, 0] = np.bincount(flat[pos], weights=wk[pos], minlength=h * w).reshape(h, w)
            out[k, 1] = np.bincount(flat[~pos], weights=wk[~pos], minlength=h * w).reshape(h, w)
        else:
            out[k, 0] = np.bincount(flat, weights=wk * stream.p, minlength=h * w).reshape(h, w)
    return EncodedVolume(out, t_start, t_end)


def encode_count(stream: EventStream, cfg: EncoderConfig,
                 t_start: int | None = None, t_end: int | None = None) -> EncodedVolume:
    """Group events into ``cfg.bins`` even time bins and sum polarities.

    Two-channel mode keeps (count of +1, count of -1) per pixel; signed
    mode stores their difference.
    """
    t_start, t_end = _span(stream, t_start, t_end)
    b = cfg.bins
    idx = ((stream.t - t_start) * b) // (t_end - t_start)
    idx = np.clip(idx, 0, b - 1)
    weights = np.zeros((b, len(stream)))
    weights[idx, np.arange(len(stream))] = 1.0
    return _accumulate(stream, cfg, weights, t_start, t_end)


def encode_gaussian(stream: EventStream, cfg: EncoderConfig,
                    t_start: int | None = None, t_end: int | None = None,
                    kernel: Callable | None = None) -> EncodedVolume:
    """Every event votes into every bin, weighted by a Gaussian of its
    timestamp around the bin center.

    ``kernel(t_us, mu_us, sigma_us) -> weights`` can override the Gaussian
    (test hook; substituting a constant 1 with one bin degenerates to the
    count encoding).
    """
    t_start, t_end = _span(stream, t_start, t_end)
    b = cfg.bins
    width = (t_end - t_start) / b
    sigma = cfg.lam * width
    centers = t_start + (np.arange(b) + 0.5) * width
    t = stream.t.astype(np.float64)
    if kernel is None:
        def kernel(ts, mu, sg):
            return np.exp(-((ts - mu) ** 2) / (2.0 * sg * sg))
    weights = np.stack([kernel(t, centers[k], sigma) for k in range(b)])
    return _accumulate(stream, cfg, weights, t_start, t_end)


def augment_time_warp(stream: EventStream, factor: float) -> EventStream:
    """Scale timestamps: t' = round(factor * t). Order is preserved."""
    if factor <= 0:
        raise ValueError("time-warp factor must be > 0")
    t = np.rint(stream.t * float(factor)).astype(np.int64)
    return EventStream.from_arrays(stream.x, stream.y, t, stream.p, stream.sensor)


def augment_noise(stream: EventStream, rate: float, seed: int,
                  t_start: int | None = None, t_end: int | None = None) -> EventStream:
    """Merge in uniform random events at ``rate`` events/pixel/second.

    The added count is Poisson with mean rate * W * H * duration; position
    is uniform over the sensor, time uniform over the span, polarity a
    fair coin. Deterministic per seed.
    """
    if rate < 0:
        raise ValueError("noise rate must be >= 0")
    if rate == 0:
        return stream
    t_start, t_end = _span(stream, t_start, t_end)
    sensor = stream.sensor
    duration_s = (t_end - t_start) / 1e6
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate * sensor.width * sensor.height * duration_s)
    t = np.sort(rng.integers(t_start, t_end, size=n))
    noise = EventStream.from_arrays(
        rng.integers(0, sensor.width, size=n),
        rng.integers(0, sensor.height, size=n),
        t,
        rng.choice(np.array([-1, 1], np.int8), size=n),
        sensor,
    )
    return merge_streams(stream, noise)


def augment_flip(stream: EventStream, axis: str) -> EventStream:
    """Flip events: ``horizontal`` (x), ``vertical`` (y) or ``polarity``."""
    sensor = stream.sensor
    if axis == "horizontal":
        return EventStream.from_arrays(sensor.width - 1 - stream.x, stream.y,
                                       stream.t, stream.p, sensor)
    if axis == "vertical":
        return EventStream.from_arrays(stream.x, sensor.height - 1 - stream.y,
                                       stream.t, stream.p, sensor)
    if axis == "polarity":
        return EventStream.from_arrays(stream.x, stream.y, stream.t,
                                       -stream.p, sensor)
    raise ValueError(f"unknown flip axis {axis!r}")


def flip_flow(flow: FlowField, axis: str) -> FlowField:
    """Companion ground-truth transform for :func:`augment_flip`."""
    if axis == "horizontal":
        return FlowField(flow.t0, flow.t1, -flow.u[:, ::-1], flow.v[:, ::-1])
    if axis == "vertical":
        return FlowField(flow.t0, flow.t1, flow.u[::-1, :], -flow.v[::-1, :])
    if axis == "polarity":
        return flow
    raise ValueError(f"unknown flip axis {axis!r}")


def augment_crop(stream: EventStream, x0: int, y0: int, w: int, h: int) -> EventStream:
    """Keep events inside the window and re-origin coordinates.

    The result carries a sensor resized to the window.
    """
    sensor = stream.sensor
    if w <= 0 or h <= 0:
        raise ValueError("crop window must be non-empty")
    if x0 < 0 or y0 < 0 or x0 + w > sensor.width or y0 + h > sensor.height:
        raise ValueError("crop window outside sensor bounds")
    keep = ((stream.x >= x0) & (stream.x < x0 + w) &
            (stream.y >= y0) & (stream.y < y0 + h))
    return EventStream.from_arrays(
        stream.x[keep] - x0, stream.y[keep] - y0, stream.t[keep], stream.p[keep],
        replace(sensor, width=w, height=h),
    )


def augment_rotate90(stream: EventStream, k: int) -> EventStream:
    """Rotate coordinates by k * 90 degrees clockwise (k in {1, 2, 3})."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    s = stream
    for _ in range(k):
        sensor = s.sensor
        x, y = sensor.height - 1 - s.y, s.x
        s = EventStream.from_arrays(
            x, y, s.t, s.p, replace(sensor, width=sensor.height, height=sensor.width)
        )
    return s


def rotate90_flow(flow: FlowField, k: int) -> FlowField:
    """Companion flow transform for :func:`augment_rotate90` (clockwise)."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    u, v = flow.u, flow.v
    for _ in range(k):
        u, v = np.rot90(v, k=-1) * -1.0, np.rot90(u, k=-1)
    return FlowField(flow.t0, flow.t1, u, v)
