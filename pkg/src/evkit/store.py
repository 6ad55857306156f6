"""Self-contained indexed container for event streams, frames and flow.

File format ``EVZ1`` (all integers little-endian):

* header: magic ``EVZ1``, version, sensor config, channel counts, frame
  shape, recording span ``[t_lo, t_end)``, codec id, block size, section
  count, section table (16-byte name, offset, length);
* one section per channel, each holding its own entry count, dtype,
  entries-per-block, optional per-block delta transform, a block table
  (offset, compressed length, raw length) and the compressed blocks.

Channels: ``ev.x``/``ev.y`` (u16), ``ev.t`` (u64, per-block delta coded),
``ev.p`` (bool byte, 1 means +1), ``gray.t``/``flow.t0``/``flow.t1``
(u64), ``gray.img``/``flow.uv`` (f32, one frame or field per block), and
the precomputed time maps ``map.ms2ev``/``map.ms2gray``/``map.ms2flow``
(u64, first index with t >= k milliseconds) plus per-event
``map.ev2gray``/``map.ev2flow`` (i64, latest frame/field at-or-before the
event, -1 when none).

Reading a slice touches only the blocks overlapping it; a bounded LRU
block cache (default 64 MiB) keeps repeated reads cheap without loading
whole channels. Millisecond maps narrow every timestamp query to one
bracketing index range which is then binary-searched for exact
microsecond slicing. Compression is deterministic, so two writes of the
same input are byte-identical.

A container open for reading supports concurrent readers (reads use
``os.pread`` and the cache is lock-protected); writing is single-writer
via a temp file renamed into place.
"""

from __future__ import annotations

import os
import struct
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .interp import bilinear_sample
from .props import write_props
from .stream import EventStream, FlowField, GrayFrame, SensorConfig

__all__ = [
    "Container",
    "ContainerError",
    "OutOfRangeError",
    "SyncedSlice",
    "write_container",
    "accumulate_flow",
    "import_text",
    "export_text",
    "sidecar_path",
    "sensor_from_props",
]

MAGIC = b"EVZ1"
VERSION = 1
DEFAULT_BLOCK_SIZE = 65536
DEFAULT_CACHE_BYTES = 64 * 1024 * 1024

_CODECS = {0: "none", 1: "zlib"}
_CODEC_IDS = {v: k for k, v in _CODECS.items()}

_DTYPES = {1: "<u2", 2: "<u8", 3: "u1", 4: "<f4", 5: "<i8"}
_DTYPE_IDS = {v: k for k, v in _DTYPES.items()}

_XFORM_RAW = 0
_XFORM_DELTA = 1

# header after magic+version: sensor, counts, shapes, span, codec, block size
_HEADER = struct.Struct("<HHddd Q dd QQQ HH QQ BxxxI I")
_SECTION_ENTRY = struct.Struct("<16sQQ")
_CHANNEL_HEAD = struct.Struct("<QIBBxxI")  # n_entries, entries_per_block, dtype, xform, n_blocks
_BLOCK_ENTRY = struct.Struct("<QQQ")  # rel offset, comp len, raw len


class ContainerError(Exception):
    """Container is malformed or was used outside its contract."""


class OutOfRangeError(ContainerError):
    """Requested span lies outside the recorded range."""


def _compress(codec: str, raw: bytes) -> bytes:
    if codec == "none":
        return raw
    return zlib.compress(raw, 6)


def _decompress(codec: str, comp: bytes, raw_len: int) -> bytes:
    if codec == "none":
        return comp
    return zlib.decompress(comp, bufsize=raw_len)


def _delta_encode(arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out[1:] = arr[1:] - arr[:-1]
    return out


def _delta_decode(arr: np.ndarray) -> np.ndarray:
    return np.cumsum(arr, dtype=arr.dtype)


def _encode_channel(values: np.ndarray, dtype: str, entries_per_block: int,
                    codec: str, xform: int = _XFORM_RAW) -> bytes:
    """Serialize one channel: header, block table, compressed blocks."""
    values = np.ascontiguousarray(values, dtype=np.dtype(dtype))
    n = values.shape[0]
    entry_items = int(np.prod(values.shape[1:], dtype=np.int64)) if values.ndim > 1 else 1
    n_blocks = (n + entries_per_block - 1) // entries_per_block
    blocks = []
    table = []
    rel = 0
    for b in range(n_blocks):
        chunk = values[b * entries_per_block : (b + 1) * entries_per_block]
        chunk = chunk.reshape(-1)
        if xform == _XFORM_DELTA:
            chunk = _delta_encode(chunk)
        raw = chunk.tobytes()
        comp = _compress(codec, raw)
        table.append((rel, len(comp), len(raw)))
        blocks.append(comp)
        rel += len(comp)
    del entry_items  # implied by raw_len; readers recover it from block 0
    head = _CHANNEL_HEAD.pack(n, entries_per_block, _DTYPE_IDS[dtype], xform, n_blocks)
    parts = [head]
    parts.extend(_BLOCK_ENTRY.pack(*row) for row in table)
    parts.extend(blocks)
    return b"".join(parts)


@dataclass(frozen=True)
class SyncedSlice:
    """Events in a span with the enclosing frames and synchronized flow.

    ``gray_start`` is the latest frame at-or-before the span start;
    ``gray_end`` the first frame at-or-after the span end (the last frame,
    flagged via ``gray_end_clamped``, when none exists). ``flow`` is the
    accumulated displacement over exactly [t_start, t_end).
    """

    events: EventStream
    t_start: int
    t_end: int
    gray_start: GrayFrame | None = None
    gray_end: GrayFrame | None = None
    flow: FlowField | None = None
    gray_start_index: int = -1
    gray_end_index: int = -1
    gray_end_clamped: bool = False


def accumulate_flow(flows: Sequence[FlowField], t_start: int, t_end: int) -> FlowField:
    """Compose per-interval displacement fields over [t_start, t_end).

    Interior intervals are chained by sampling each successor field at the
    displaced position (bilinear, clamped to the border, so trajectories
    leaving the frame keep their last valid displacement); fractional
    boundary intervals contribute their displacement scaled by the covered
    fraction of the interval.
    """
    if t_start >= t_end:
        raise ValueError(f"span must be non-empty, got [{t_start}, {t_end})")
    parts = sorted((f for f in flows if f.t1 > t_start and f.t0 < t_end), key=lambda f: f.t0)
    if not parts or parts[0].t0 > t_start or parts[-1].t1 < t_end:
        raise ValueError(f"flow coverage gap: [{t_start}, {t_end}) not covered")
    for a, b in zip(parts, parts[1:]):
        if b.t0 != a.t1:
            raise ValueError(f"flow coverage gap between t={a.t1} and t={b.t0}")
    h, w = parts[0].shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    du = np.zeros((h, w))
    dv = np.zeros((h, w))
    for f in parts:
        frac = (min(f.t1, t_end) - max(f.t0, t_start)) / (f.t1 - f.t0)
        px = gx + du
        py = gy + dv
        du += frac * bilinear_sample(f.u.astype(np.float64), px, py)
        dv += frac * bilinear_sample(f.v.astype(np.float64), px, py)
    return FlowField(t_start, t_end, du.astype(np.float32), dv.astype(np.float32))


def _first_at_or_after_ms(times: np.ndarray, n_ms: int) -> np.ndarray:
    """Map entry k -> index of first element with t >= k milliseconds."""
    bounds = np.arange(n_ms, dtype=np.int64) * 1000
    return np.searchsorted(times, bounds, side="left").astype(np.uint64)


def _latest_at_or_before(times: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Per query, index of latest element with t <= query (-1 when none)."""
    return np.searchsorted(times, queries, side="right").astype(np.int64) - 1


class _BlockCache:
    """Bounded LRU of decoded blocks, shared by concurrent readers."""

    def __init__(self, capacity_bytes: int):
        self.capacity = capacity_bytes
        self._items: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            arr = self._items.get(key)
            if arr is not None:
                self._items.move_to_end(key)
            return arr

    def put(self, key, arr: np.ndarray) -> None:
        if self.capacity <= 0:
            return
        with self._lock:
            if key in self._items:
                return
            self._items[key] = arr
            self._bytes += arr.nbytes
            while self._bytes > self.capacity and self._items:
                _, old = self._items.popitem(last=False)
                self._bytes -= old.nbytes


class _Channel:
    """Reader for one stored channel (lazy, block-granular)."""

    def __init__(self, fd: int, name: str, offset: int, codec: str, cache: _BlockCache):
        self.fd = fd
        self.name = name
        self.codec = codec
        self.cache = cache
        head = os.pread(fd, _CHANNEL_HEAD.size, offset)
        (self.n_entries, self.entries_per_block, dtype_id, self.xform,
         self.n_blocks) = _CHANNEL_HEAD.unpack(head)
        self.dtype = np.dtype(_DTYPES[dtype_id])
        table_raw = os.pread(fd, _BLOCK_ENTRY.size * self.n_blocks,
                             offset + _CHANNEL_HEAD.size)
        self.table = [_BLOCK_ENTRY.unpack_from(table_raw, i * _BLOCK_ENTRY.size)
                      for i in range(self.n_blocks)]
        self.payload_offset = offset + _CHANNEL_HEAD.size + len(table_raw)
        if self.n_blocks:
            n0 = min(self.entries_per_block, self.n_entries)
            self.items = self.table[0][2] // (self.dtype.itemsize * n0)
        else:
            self.items = 1

    def _block(self, b: int) -> np.ndarray:
        key = (self.name, b)
        arr = self.cache.get(key)
        if arr is None:
            rel, comp_len, raw_len = self.table[b]
            comp = os.pread(self.fd, comp_len, self.payload_offset + rel)
            arr = np.frombuffer(_decompress(self.codec, comp, raw_len), dtype=self.dtype)
            if self.xform == _XFORM_DELTA:
                arr = _delta_decode(arr)
            arr.setflags(write=False)
            self.cache.put(key, arr)
        return arr

    def read(self, i0: int, i1: int) -> np.ndarray:
        """Entries [i0, i1) as one flat array, touching only their blocks."""
        if not 0 <= i0 <= i1 <= self.n_entries:
            raise ContainerError(f"{self.name}: entry range [{i0}, {i1}) out of bounds")
        if i0 == i1:
            return np.empty(0, dtype=self.dtype)
        epb = self.entries_per_block
        b0, b1 = i0 // epb, (i1 - 1) // epb
        parts = []
        for b in range(b0, b1 + 1):
            blk = self._block(b)
            lo = max(i0 - b * epb, 0) * self.items
            hi = min(i1 - b * epb, epb) * self.items
            parts.append(blk[lo:hi])
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def read_all(self) -> np.ndarray:
        return self.read(0, self.n_entries)


class Container:
    """Read handle over an ``.evz`` file. Indexes load once at open."""

    def __init__(self, path, cache_bytes: int = DEFAULT_CACHE_BYTES):
        self.path = os.fspath(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            self._load_header(cache_bytes)
        except Exception:
            os.close(self._fd)
            raise

    def _load_header(self, cache_bytes: int) -> None:
        fd = self._fd
        magic = os.pread(fd, 4, 0)
        if magic != MAGIC:
            raise ContainerError(f"{self.path}: not an EVZ container (magic {magic!r})")
        (version,) = struct.unpack("<I", os.pread(fd, 4, 4))
        if version != VERSION:
            raise ContainerError(f"{self.path}: unsupported version {version}")
        head = _HEADER.unpack(os.pread(fd, _HEADER.size, 8))
        (width, height, fov, c_pos, c_neg, refractory_ns, frame_rate, compare_rate,
         self.n_events, self.n_gray, self.n_flow, gray_h, gray_w,
         self.t_lo, self.t_end, codec_id, self.block_size, n_sections) = head
        self.sensor = SensorConfig(width, height, fov, c_pos, c_neg,
                                   int(refractory_ns), frame_rate, compare_rate)
        self.frame_shape = (gray_h, gray_w) if gray_h else None
        self.codec = _CODECS[codec_id]
        table_off = 8 + _HEADER.size
        raw = os.pread(fd, _SECTION_ENTRY.size * n_sections, table_off)
        self._cache = _BlockCache(cache_bytes)
        self._channels: dict[str, _Channel] = {}
        for i in range(n_sections):
            name_b, offset, _length = _SECTION_ENTRY.unpack_from(raw, i * _SECTION_ENTRY.size)
            name = name_b.rstrip(b"\0").decode("ascii")
            self._channels[name] = _Channel(fd, name, offset, self.codec, self._cache)
        # small index arrays are loaded eagerly; event channels stay lazy
        self.gray_t = self._channels["gray.t"].read_all().astype(np.int64)
        self.flow_t0 = self._channels["flow.t0"].read_all().astype(np.int64)
        self.flow_t1 = self._channels["flow.t1"].read_all().astype(np.int64)
        self.ms_to_event = self._channels["map.ms2ev"].read_all()
        self.ms_to_gray = self._channels["map.ms2gray"].read_all()
        self.ms_to_flow = self._channels["map.ms2flow"].read_all()

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "Container":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- point lookups -------------------------------------------------

    def event_index_for_time(self, t: int) -> int:
        """Index of the first event with timestamp >= t."""
        if self.n_events == 0:
            return 0
        k = min(max(t, 0) // 1000, len(self.ms_to_event) - 1)
        lo = int(self.ms_to_event[k])
        hi = int(self.ms_to_event[k + 1]) if k + 1 < len(self.ms_to_event) else self.n_events
        if t < 0:
            return 0
        if lo == hi:
            return lo
        ts = self._channels["ev.t"].read(lo, hi)
        return lo + int(np.searchsorted(ts, np.uint64(t), side="left"))

    def events(self, i0: int, i1: int) -> EventStream:
        """Events by index range [i0, i1)."""
        ch = self._channels
        p_raw = ch["ev.p"].read(i0, i1)
        return EventStream.from_arrays(
            ch["ev.x"].read(i0, i1).astype(np.int32),
            ch["ev.y"].read(i0, i1).astype(np.int32),
            ch["ev.t"].read(i0, i1).astype(np.int64),
            p_raw.astype(np.int8) * 2 - 1,
            self.sensor,
        )

    def all_events(self) -> EventStream:
        return self.events(0, self.n_events)

    def gray_frame(self, i: int) -> GrayFrame:
        img = self._channels["gray.img"].read(i, i + 1).reshape(self.frame_shape)
        return GrayFrame(int(self.gray_t[i]), img)

    def flow_field(self, i: int) -> FlowField:
        uv = self._channels["flow.uv"].read(i, i + 1).reshape((2,) + self.frame_shape)
        return FlowField(int(self.flow_t0[i]), int(self.flow_t1[i]), uv[0], uv[1])

    def event_to_gray(self) -> np.ndarray:
        """Per-event index of the latest frame at-or-before the event (-1: none)."""
        return self._channels["map.ev2gray"].read_all()

    def event_to_flow(self) -> np.ndarray:
        return self._channels["map.ev2flow"].read_all()

    # -- slicing -------------------------------------------------------

    def _check_span(self, t_start: int, t_end: int) -> None:
        if t_start > t_end:
            raise ValueError(f"t_start must be <= t_end, got [{t_start}, {t_end})")
        if t_start < self.t_lo or t_end > self.t_end:
            raise OutOfRangeError(
                f"slice [{t_start}, {t_end}) outside recorded range "
                f"[{self.t_lo}, {self.t_end})"
            )

    def _enclosing_frames(self, t_start: int, t_end: int):
        if self.n_gray == 0:
            return None, None, -1, -1, False
        i_start = int(np.searchsorted(self.gray_t, t_start, side="right")) - 1
        if i_start < 0:
            raise OutOfRangeError(
                f"slice start {t_start} precedes first frame at t={int(self.gray_t[0])}"
            )
        i_end = int(np.searchsorted(self.gray_t, t_end, side="left"))
        clamped = i_end >= self.n_gray
        if clamped:
            i_end = self.n_gray - 1
        return self.gray_frame(i_start), self.gray_frame(i_end), i_start, i_end, clamped

    def _flow_over(self, t_start: int, t_end: int) -> FlowField | None:
        if self.n_flow == 0 or t_start >= t_end:
            return None
        j0 = max(int(np.searchsorted(self.flow_t1, t_start, side="right")), 0)
        j1 = int(np.searchsorted(self.flow_t0, t_end, side="left"))
        fields = [self.flow_field(j) for j in range(j0, j1)]
        return accumulate_flow(fields, t_start, t_end)

    def read_slice(self, t_start: int, t_end: int) -> SyncedSlice:
        """Events in [t_start, t_end) with enclosing frames and accumulated flow.

        Peak memory is proportional to the slice plus the loaded indexes,
        not the file: only blocks overlapping the slice are decoded.
        """
        self._check_span(t_start, t_end)
        i0 = self.event_index_for_time(t_start)
        i1 = self.event_index_for_time(t_end)
        gs, ge, gi0, gi1, clamped = self._enclosing_frames(t_start, t_end)
        return SyncedSlice(
            events=self.events(i0, i1),
            t_start=t_start,
            t_end=t_end,
            gray_start=gs,
            gray_end=ge,
            flow=self._flow_over(t_start, t_end),
            gray_start_index=gi0,
            gray_end_index=gi1,
            gray_end_clamped=clamped,
        )

    def _slice_by_event_index(self, i0: int, i1: int) -> SyncedSlice:
        ts = self._channels["ev.t"]
        t_start = int(ts.read(i0, i0 + 1)[0]) if i0 < self.n_events else self.t_end
        t_end = int(ts.read(i1, i1 + 1)[0]) if i1 < self.n_events else self.t_end
        gs, ge, gi0, gi1, clamped = self._enclosing_frames(t_start, t_end)
        return SyncedSlice(
            events=self.events(i0, i1),
            t_start=t_start,
            t_end=t_end,
            gray_start=gs,
            gray_end=ge,
            flow=self._flow_over(t_start, t_end),
            gray_start_index=gi0,
            gray_end_index=gi1,
            gray_end_clamped=clamped,
        )

    def iterate(self, mode: str, step: int) -> Iterator[SyncedSlice]:
        """Sequential non-overlapping slices covering the recording.

        ``mode`` is one of ``time`` (step in microseconds), ``event-count``
        (step in events; slices partition the stream exactly even across
        equal timestamps) or ``gray-index`` (step in frames; step 1 yields
        consecutive-frame training samples).
        """
        if step <= 0:
            raise ValueError("step must be > 0")
        if mode == "time":
            t = self.t_lo
            while t < self.t_end:
                yield self.read_slice(t, min(t + step, self.t_end))
                t += step
        elif mode == "event-count":
            for i0 in range(0, self.n_events, step):
                yield self._slice_by_event_index(i0, min(i0 + step, self.n_events))
        elif mode == "gray-index":
            last = self.n_gray - 1
            for j in range(0, last, step):
                yield self.read_slice(int(self.gray_t[j]), int(self.gray_t[min(j + step, last)]))
        else:
            raise ValueError(f"unknown stride mode {mode!r}")


def write_container(
    events: EventStream,
    frames: Sequence[GrayFrame],
    flows: Sequence[FlowField],
    path,
    props: Mapping | None = None,
    codec: str = "zlib",
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> Container:
    """Write events, frames and flow fields to ``path`` and reopen for reading.

    Time maps are fully precomputed here. Output bytes are deterministic
    for identical input. A sidecar properties file (``<path>.props``,
    minus the container suffix) records the sensor config, counts and any
    caller-supplied metadata such as generator seeds.
    """
    if codec not in _CODEC_IDS:
        raise ValueError(f"unknown codec {codec!r}; have {sorted(_CODEC_IDS)}")
    frames = list(frames)
    flows = list(flows)
    gray_t = np.array([f.t for f in frames], dtype=np.int64)
    flow_t0 = np.array([f.t0 for f in flows], dtype=np.int64)
    flow_t1 = np.array([f.t1 for f in flows], dtype=np.int64)
    if gray_t.size and np.any(np.diff(gray_t) <= 0):
        raise ValueError("frames must have strictly increasing timestamps")
    if flow_t0.size and (np.any(np.diff(flow_t0) <= 0) or np.any(flow_t1[:-1] > flow_t0[1:])):
        raise ValueError("flow fields must be sorted and non-overlapping")
    shape = frames[0].image.shape if frames else (flows[0].shape if flows else None)
    for f in frames:
        if f.image.shape != shape:
            raise ValueError("all frames must share one shape")
    for f in flows:
        if shape is not None and f.shape != shape:
            raise ValueError("flow shape must match frame shape")

    t = events.t.astype(np.int64)
    spans_hi = [int(t[-1]) + 1 if t.size else 0,
                int(gray_t[-1]) if gray_t.size else 0,
                int(flow_t1[-1]) if flow_t1.size else 0]
    t_end = max(spans_hi)
    spans_lo = [v for v in (int(t[0]) if t.size else None,
                            int(gray_t[0]) if gray_t.size else None,
                            int(flow_t0[0]) if flow_t0.size else None) if v is not None]
    t_lo = min(spans_lo) if spans_lo else 0
    n_ms = (max(t_end - 1, 0) // 1000) + 2

    ev2gray = _latest_at_or_before(gray_t, t) if len(events) else np.empty(0, np.int64)
    ev2flow = _latest_at_or_before(flow_t0, t) if len(events) else np.empty(0, np.int64)

    sections: list[tuple[str, bytes]] = []

    def add(name, values, dtype, epb, xform=_XFORM_RAW):
        sections.append((name, _encode_channel(values, dtype, epb, codec, xform)))

    frame_items = int(np.prod(shape)) if shape else 1
    add("ev.x", events.x.astype("<u2"), "<u2", block_size)
    add("ev.y", events.y.astype("<u2"), "<u2", block_size)
    add("ev.t", t.astype("<u8"), "<u8", block_size, _XFORM_DELTA)
    add("ev.p", (events.p > 0).astype("u1"), "u1", block_size)
    add("gray.t", gray_t.astype("<u8"), "<u8", block_size)
    gray_stack = (np.stack([f.image for f in frames]) if frames
                  else np.empty((0,) + (shape or (0, 0)), np.float32))
    add("gray.img", gray_stack.reshape(len(frames), frame_items), "<f4", 1)
    add("flow.t0", flow_t0.astype("<u8"), "<u8", block_size)
    add("flow.t1", flow_t1.astype("<u8"), "<u8", block_size)
    flow_stack = (np.stack([np.stack([f.u, f.v]) for f in flows]) if flows
                  else np.empty((0, 2) + (shape or (0, 0)), np.float32))
    add("flow.uv", flow_stack.reshape(len(flows), 2 * frame_items), "<f4", 1)
    add("map.ms2ev", _first_at_or_after_ms(t, n_ms), "<u8", block_size)
    add("map.ms2gray", _first_at_or_after_ms(gray_t, n_ms), "<u8", block_size)
    add("map.ms2flow", _first_at_or_after_ms(flow_t0, n_ms), "<u8", block_size)
    add("map.ev2gray", ev2gray.astype("<i8"), "<i8", block_size)
    add("map.ev2flow", ev2flow.astype("<i8"), "<i8", block_size)

    gray_h, gray_w = shape if shape else (0, 0)
    header = _HEADER.pack(
        events.sensor.width, events.sensor.height, events.sensor.fov_deg,
        events.sensor.c_pos, events.sensor.c_neg, events.sensor.refractory_ns,
        events.sensor.frame_rate, events.sensor.compare_rate,
        len(events), len(frames), len(flows), gray_h, gray_w,
        t_lo, t_end, _CODEC_IDS[codec], block_size, len(sections),
    )
    table_offset = 8 + _HEADER.size
    payload_offset = table_offset + _SECTION_ENTRY.size * len(sections)
    table = []
    offset = payload_offset
    for name, blob in sections:
        table.append(_SECTION_ENTRY.pack(name.encode("ascii").ljust(16, b"\0"),
                                         offset, len(blob)))
        offset += len(blob)

    path = os.fspath(path)
    tmp = path + ".partial"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(header)
            fh.writelines(table)
            for _, blob in sections:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise

    meta = {"format": "EVZ1", "codec": codec, "block_size": block_size,
            "counts": {"events": len(events), "gray": len(frames), "flow": len(flows)},
            "span": {"t_lo": t_lo, "t_end": t_end},
            "sensor": {"width": events.sensor.width, "height": events.sensor.height,
                       "fov_deg": events.sensor.fov_deg, "c_pos": events.sensor.c_pos,
                       "c_neg": events.sensor.c_neg,
                       "refractory_ns": events.sensor.refractory_ns,
                       "frame_rate": events.sensor.frame_rate,
                       "compare_rate": events.sensor.compare_rate}}
    if props:
        meta.update(props)
    write_props(sidecar_path(path), meta)
    return Container(path)


def sidecar_path(path) -> str:
    base, _ = os.path.splitext(os.fspath(path))
    return base + ".props"


def sensor_from_props(props: Mapping) -> SensorConfig:
    """Sensor config from flattened sidecar keys (``sensor.*``)."""
    ref = SensorConfig()

    def get(k, d):
        return props.get(f"sensor.{k}", d)

    return SensorConfig(
        width=int(get("width", ref.width)),
        height=int(get("height", ref.height)),
        fov_deg=float(get("fov_deg", ref.fov_deg)),
        c_pos=float(get("c_pos", ref.c_pos)),
        c_neg=float(get("c_neg", ref.c_neg)),
        refractory_ns=int(get("refractory_ns", ref.refractory_ns)),
        frame_rate=float(get("frame_rate", ref.frame_rate)),
        compare_rate=float(get("compare_rate", ref.compare_rate)),
    )


def import_text(path, sensor: SensorConfig) -> EventStream:
    """Parse the plain-text interchange format: ``t_us x y p`` per line.

    ``p`` is 0/1 on disk (0 means -1). Lines starting with ``#`` and blank
    lines are skipped. Events are sorted on return; coordinates outside
    the sensor resolution are rejected.
    """
    ts, xs, ys, ps = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ValueError(f"{path}:{lineno}: expected 't x y p', got {raw!r}")
            try:
                t, x, y, p = (int(f) for f in fields)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: non-integer field in {raw!r}") from e
            if p not in (0, 1):
                raise ValueError(f"{path}:{lineno}: polarity must be 0 or 1, got {p}")
            if not (0 <= x < sensor.width and 0 <= y < sensor.height):
                raise ValueError(
                    f"{path}:{lineno}: coordinate ({x}, {y}) outside "
                    f"{sensor.width}x{sensor.height}"
                )
            if t < 0:
                raise ValueError(f"{path}:{lineno}: negative timestamp {t}")
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(1 if p else -1)
    t_arr = np.array(ts, dtype=np.int64)
    order = np.argsort(t_arr, kind="stable")
    return EventStream.from_arrays(
        np.array(xs, np.int32)[order], np.array(ys, np.int32)[order],
        t_arr[order], np.array(ps, np.int8)[order], sensor,
    )


def export_text(stream: EventStream, path) -> None:
    """Write the plain-text interchange format (inverse of import_text)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(stream)):
            fh.write(f"{stream.t[i]} {stream.x[i]} {stream.y[i]} "
                     f"{1 if stream.p[i] > 0 else 0}\n")
