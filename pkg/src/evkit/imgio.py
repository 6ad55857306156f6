"""Portable image I/O (binary PGM/PPM) and flow colorization.

PGM (grayscale) and PPM (color) are trivially portable, lossless, and
byte-deterministic, which keeps end-to-end pipeline hashes stable.
"""

from __future__ import annotations

import numpy as np

__all__ = ["write_pgm", "read_pgm", "write_ppm", "to_u8", "flow_to_color"]


def to_u8(img: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Scale a float image into uint8. ``lo``/``hi`` default to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    lo = 0.0 if lo is None else float(lo)
    hi = 1.0 if hi is None else float(hi)
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    scaled = (img - lo) / (hi - lo)
    return (np.clip(scaled, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    """Write a uint8 grayscale image as binary PGM (P5)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM output requires a 2-D image")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM image as uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM supported, maxval={maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    elif magic == b"P2":
        img = np.array(data[pos:].split(), dtype=np.uint8)[: w * h]
    else:
        raise ValueError(f"not a PGM file: magic {magic!r}")
    return img.reshape(h, w).copy()


def write_ppm(path, img: np.ndarray) -> None:
    """Write a uint8 HxWx3 color image as binary PPM (P6)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM output requires an HxWx3 image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def flow_to_color(u: np.ndarray, v: np.ndarray, max_mag: float | None = None) -> np.ndarray:
    """Standard flow wheel: hue encodes direction, saturation magnitude.

    Returns a uint8 HxWx3 RGB image. ``max_mag`` sets full saturation;
    defaults to the field's maximum magnitude.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = float(mag.max()) if mag.size else 1.0
    sat = np.clip(mag / max_mag, 0.0, 1.0) if max_mag > 0 else np.zeros_like(mag)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0  # [0, 1)

    # HSV -> RGB with V = 1
    i = np.floor(hue * 6.0).astype(int) % 6
    f = hue * 6.0 - np.floor(hue * 6.0)
    p = 1.0 - sat
    q = 1.0 - f * sat
    t = 1.0 - (1.0 - f) * sat
    one = np.ones_like(sat)
    r = np.choose(i, [one, q, p, p, t, one])
    g = np.choose(i, [t, one, one, q, p, p])
    b = np.choose(i, [p, p, t, one, one, q])
    return (np.stack([r, g, b], axis=-1) * 255.0 + 0.5).astype(np.uint8)
