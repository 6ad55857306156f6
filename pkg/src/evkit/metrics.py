"""Optical-flow evaluation metrics and training losses.

AEE/AAE/XPE reduce only over an event-pixel mask (pixels with at least
one event in the evaluation window). AAE is computed on 2-D flow vectors
via a clamped arccos; pixels where either vector is (numerically) zero
are excluded from the mean and reported separately. The Charbonnier
penalty is ``rho(z) = (z^2 + eps^2)^alpha`` with defaults alpha = 0.45,
eps = 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .interp import bilinear_sample
from .props import format_props
from .stream import EventStream, FlowField, GrayFrame

__all__ = [
    "event_mask",
    "aee",
    "aae",
    "xpe",
    "EvalReport",
    "evaluate_flow",
    "charbonnier",
    "photometric_loss",
    "smoothness_loss",
    "DEFAULT_ALPHA",
    "DEFAULT_EPS",
]

DEFAULT_ALPHA = 0.45
DEFAULT_EPS = 1e-3
_ZERO_NORM = 1e-9


def event_mask(stream: EventStream, shape: tuple | None = None) -> np.ndarray:
    """Boolean image, true where at least one event occurred."""
    if shape is None:
        shape = (stream.sensor.height, stream.sensor.width)
    h, w = shape
    flat = np.zeros(h * w, dtype=bool)
    flat[stream.y.astype(np.intp) * w + stream.x.astype(np.intp)] = True
    return flat.reshape(h, w)


def _check_pair(pred: FlowField, gt: FlowField, mask: np.ndarray) -> None:
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ValueError("prediction, ground truth and mask must share one shape")


def aee(pred: FlowField, gt: FlowField, mask: np.ndarray) -> float:
    """Mean endpoint distance |pred - gt| over masked pixels."""
    _check_pair(pred, gt, mask)
    if not mask.any():
        raise ValueError("empty mask: AEE undefined")
    du = pred.u[mask] - gt.u[mask]
    dv = pred.v[mask] - gt.v[mask]
    return float(np.mean(np.hypot(du, dv)))


def aae(pred: FlowField, gt: FlowField, mask: np.ndarray,
        return_excluded: bool = False):
    """Mean angle (degrees) between prediction and ground truth over the mask.

    Pixels where either vector norm is below 1e-9 are excluded; their
    count is available via ``return_excluded``.
    """
    _check_pair(pred, gt, mask)
    pu, pv = pred.u[mask].astype(np.float64), pred.v[mask].astype(np.float64)
    gu, gv = gt.u[mask].astype(np.float64), gt.v[mask].astype(np.float64)
    np_norm = np.hypot(pu, pv)
    ng_norm = np.hypot(gu, gv)
    ok = (np_norm >= _ZERO_NORM) & (ng_norm >= _ZERO_NORM)
    if not ok.any():
        raise ValueError("empty effective mask: AAE undefined")
    cos = (pu[ok] * gu[ok] + pv[ok] * gv[ok]) / (np_norm[ok] * ng_norm[ok])
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    mean = float(np.mean(ang))
    if return_excluded:
        return mean, int(np.count_nonzero(~ok))
    return mean


def xpe(pred: FlowField, gt: FlowField, mask: np.ndarray, x: float) -> float:
    """Percentage of masked pixels with endpoint error > x pixels."""
    if x <= 0:
        raise ValueError("X must be > 0")
    _check_pair(pred, gt, mask)
    if not mask.any():
        raise ValueError("empty mask: XPE undefined")
    err = np.hypot(pred.u[mask] - gt.u[mask], pred.v[mask] - gt.v[mask])
    return float(100.0 * np.count_nonzero(err > x) / err.size)


@dataclass(frozen=True)
class EvalReport:
    aee: float
    aae_deg: float
    xpe: dict = field(default_factory=dict)  # threshold (px) -> percentage
    n_pixels: int = 0
    n_aae_excluded: int = 0

    def to_props(self) -> dict:
        out = {"aee": self.aee, "aae_deg": self.aae_deg,
               "n_pixels": self.n_pixels, "n_aae_excluded": self.n_aae_excluded}
        for k in sorted(self.xpe):
            out[f"xpe.{k}"] = self.xpe[k]
        return out

    def __str__(self) -> str:
        return format_props(self.to_props())


def evaluate_flow(pred: FlowField, gt: FlowField, mask: np.ndarray,
                  thresholds=(1.0, 2.0, 3.0)) -> EvalReport:
    """Full report: AEE, AAE and XPE at the given thresholds."""
    mean_ang, excluded = aae(pred, gt, mask, return_excluded=True)
    return EvalReport(
        aee=aee(pred, gt, mask),
        aae_deg=mean_ang,
        xpe={float(x): xpe(pred, gt, mask, x) for x in thresholds},
        n_pixels=int(np.count_nonzero(mask)),
        n_aae_excluded=excluded,
    )


def charbonnier(z: np.ndarray, alpha: float = DEFAULT_ALPHA,
                eps: float = DEFAULT_EPS) -> np.ndarray:
    """(z^2 + eps^2)^alpha, a smooth approximation of |z|."""
    return (np.square(np.asarray(z, dtype=np.float64)) + eps * eps) ** alpha


def photometric_loss(frame0: GrayFrame, frame1: GrayFrame, flow: FlowField,
                     alpha: float = DEFAULT_ALPHA, eps: float = DEFAULT_EPS) -> float:
    """Mean Charbonnier of frame1(x + flow(x)) - frame0(x).

    frame1 is sampled bilinearly; pixels whose target lands out of bounds
    are excluded from the mean.
    """
    if frame0.image.shape != frame1.image.shape or frame0.image.shape != flow.shape:
        raise ValueError("frames and flow must share one shape")
    h, w = flow.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = gx + flow.u
    ty = gy + flow.v
    valid = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    if not valid.any():
        raise ValueError("all warp targets out of bounds")
    warped = bilinear_sample(frame1.image.astype(np.float64), tx, ty)
    resid = warped[valid] - frame0.image.astype(np.float64)[valid]
    return float(np.mean(charbonnier(resid, alpha, eps)))


def smoothness_loss(flow: FlowField, alpha: float = DEFAULT_ALPHA,
                    eps: float = DEFAULT_EPS) -> float:
    """Mean Charbonnier of horizontal and vertical neighbor flow differences."""
    h, w = flow.shape
    if h < 2 and w < 2:
        raise ValueError("flow must be at least 2 pixels in one direction")
    diffs = []
    for comp in (flow.u.astype(np.float64), flow.v.astype(np.float64)):
        if w >= 2:
            diffs.append((comp[:, 1:] - comp[:, :-1]).ravel())
        if h >= 2:
            diffs.append((comp[1:, :] - comp[:-1, :]).ravel())
    return float(np.mean(charbonnier(np.concatenate(diffs), alpha, eps)))
