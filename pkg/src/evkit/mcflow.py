"""Contrast-maximization optical flow from raw events.

A candidate flow is a coarse grid of per-cell (u, v) pixel/second
velocities, bilinearly upsampled to pixel resolution. Events warp to a
reference time along their local velocity, splat bilinearly into an image
of warped events (IWE), and the flow is scored by how sharp that image
is: variance, mean squared gradient magnitude, or normalized multi-focal
variants that divide by the same functional on the identity-warp IWE and
average over patch decompositions of the image.

Estimation is multi-start finite-difference gradient ascent with a
backtracking step, coarse-to-fine over grid resolutions, maximizing
``objective - lambda_s * smoothness``. The IWE is Gaussian-blurred
(sigma = 1 px by default, switchable) before scoring to smooth the
discrete objective landscape. Deterministic per optimizer seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .metrics import charbonnier
from .stream import EventStream, FlowField

__all__ = [
    "FlowParams",
    "IWE",
    "Objective",
    "OptimizerConfig",
    "Diagnostics",
    "warp_events",
    "objective_value",
    "smoothness",
    "estimate_flow",
]


@dataclass(frozen=True)
class FlowParams:
    """P x Q x 2 grid of (u, v) px/s; (1, 1) is the global motion model."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        g = np.ascontiguousarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or g.shape[2] != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ValueError("grid must be a P x Q x 2 array")
        if not np.isfinite(g).all():
            raise ValueError("grid must be finite")
        object.__setattr__(self, "grid", g)

    @classmethod
    def constant(cls, u: float, v: float, shape=(1, 1)) -> "FlowParams":
        g = np.zeros(shape + (2,))
        g[..., 0] = u
        g[..., 1] = v
        return cls(g)

    @property
    def shape(self) -> tuple:
        return self.grid.shape[:2]

    def cell_weights(self, xs: np.ndarray, ys: np.ndarray, width: int, height: int):
        """Sparse bilinear interpolation stencil at the given pixel positions.

        Returns (idx, w): four flat cell indices and weights per point, so
        the per-point velocity is ``sum_j w[j] * grid.reshape(-1, 2)[idx[j]]``.
        Cell centers sit at ((q + 0.5) W / Q, (p + 0.5) H / P) with
        constant extrapolation beyond the outermost centers.
        """
        p_rows, q_cols = self.shape
        gx = np.clip(xs / width * q_cols - 0.5, 0.0, q_cols - 1.0)
        gy = np.clip(ys / height * p_rows - 0.5, 0.0, p_rows - 1.0)
        x0 = np.floor(gx).astype(np.intp)
        y0 = np.floor(gy).astype(np.intp)
        x1 = np.minimum(x0 + 1, q_cols - 1)
        y1 = np.minimum(y0 + 1, p_rows - 1)
        fx = gx - x0
        fy = gy - y0
        idx = np.stack([y0 * q_cols + x0, y0 * q_cols + x1,
                        y1 * q_cols + x0, y1 * q_cols + x1])
        w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                      (1 - fx) * fy, fx * fy])
        return idx, w

    def at_points(self, xs: np.ndarray, ys: np.ndarray, width: int, height: int):
        idx, w = self.cell_weights(xs, ys, width, height)
        flat = self.grid.reshape(-1, 2)
        vx = np.einsum("kn,kn->n", w, flat[idx, 0])
        vy = np.einsum("kn,kn->n", w, flat[idx, 1])
        return vx, vy

    def dense(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        gy, gx = np.mgrid[0:height, 0:width].astype(np.float64)
        vx, vy = self.at_points(gx.ravel(), gy.ravel(), width, height)
        return vx.reshape(height, width), vy.reshape(height, width)

    def upsampled(self, shape: tuple) -> "FlowParams":
        """Resample the grid to a finer parameter shape (coarse-to-fine)."""
        p, q = shape
        cx = (np.arange(q) + 0.5) * 1.0 / q
        cy = (np.arange(p) + 0.5) * 1.0 / p
        xs, ys = np.meshgrid(cx, cy)
        vx, vy = self.at_points(xs.ravel(), ys.ravel(), 1, 1)
        return FlowParams(np.stack([vx, vy], axis=-1).reshape(p, q, 2))


@dataclass(frozen=True)
class IWE:
    """Image of warped events: per-pixel accumulated bilinear votes."""

    image: np.ndarray
    t_ref: int
    n_events: int
    mass_in: float     # geometric (unsigned) vote mass inside the frame

    @property
    def mass_clipped(self) -> float:
        return self.n_events - self.mass_in


def warp_events(stream: EventStream, flow: FlowParams, t_ref: int,
                signed: bool = True) -> IWE:
    """Splat each event at x' = x - (t - t_ref) * v(x) with bilinear votes.

    ``signed`` accumulates polarity (+1/-1); unsigned accumulates 1 per
    event. Votes falling outside the frame are clipped; the lost geometric
    mass is recorded.
    """
    sensor = stream.sensor
    h, w = sensor.height, sensor.width
    xs = stream.x.astype(np.float64)
    ys = stream.y.astype(np.float64)
    vx, vy = flow.at_points(xs, ys, w, h)
    dt = (stream.t - t_ref).astype(np.float64) / 1e6
    wx = xs - dt * vx
    wy = ys - dt * vy
    val = stream.p.astype(np.float64) if signed else np.ones(len(stream))

    x0 = np.floor(wx).astype(np.int64)
    y0 = np.floor(wy).astype(np.int64)
    fx = wx - x0
    fy = wy - y0
    img = np.zeros(h * w)
    mass = 0.0
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        cx = x0 + dx
        cy = y0 + dy
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        img += np.bincount((cy[ok] * w + cx[ok]), weights=(val * wgt)[ok],
                           minlength=h * w)
        mass += float(wgt[ok].sum())
    return IWE(img.reshape(h, w), t_ref, len(stream), mass)


@dataclass(frozen=True)
class Objective:
    """Contrast functional over an IWE.

    kinds: ``variance``, ``gradient``, ``norm-multifocal-variance``,
    ``norm-multifocal-gradient``. Normalized kinds require the
    identity-warp IWE as reference and average the per-patch ratio over
    ``patch_scales`` decompositions (an s x s grid of patches per scale).
    """

    kind: str = "variance"
    patch_scales: tuple = (1, 2, 4)
    blur_sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("variance", "gradient",
                             "norm-multifocal-variance", "norm-multifocal-gradient"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if any(s < 1 for s in self.patch_scales):
            raise ValueError("patch scales must be >= 1")

    @property
    def normalized(self) -> bool:
        return self.kind.startswith("norm-multifocal")


def _functional(img: np.ndarray, kind: str) -> float:
    if kind.endswith("variance"):
        return float(np.mean((img - img.mean()) ** 2))
    gy, gx = np.gradient(img)
    return float(np.mean(gx * gx + gy * gy))


def _patches(img: np.ndarray, s: int):
    h, w = img.shape
    ys = np.linspace(0, h, s + 1).astype(int)
    xs = np.linspace(0, w, s + 1).astype(int)
    for i in range(s):
        for j in range(s):
            yield img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]


def objective_value(iwe: IWE, objective: Objective, reference: IWE | None = None) -> float:
    """Score an IWE; higher is sharper.

    Normalized multi-focal kinds divide each patch's functional by the
    same functional on the identity-warp ``reference`` IWE and average
    over patches and scales (patches with zero reference are skipped), so
    the identity warp itself scores exactly 1.
    """
    if iwe.image.size == 0 or iwe.n_events == 0:
        raise ValueError("empty IWE")
    img = iwe.image
    if objective.blur_sigma > 0:
        img = gaussian_filter(img, objective.blur_sigma)
    if not objective.normalized:
        return _functional(img, objective.kind)
    if reference is None:
        raise ValueError(f"{objective.kind} requires the identity-warp reference IWE")
    ref = reference.image
    if objective.blur_sigma > 0:
        ref = gaussian_filter(ref, objective.blur_sigma)
    ratios = []
    for s in objective.patch_scales:
        for patch, ref_patch in zip(_patches(img, s), _patches(ref, s)):
            den = _functional(ref_patch, objective.kind)
            if den > 0:
                ratios.append(_functional(patch, objective.kind) / den)
    if not ratios:
        raise ValueError("all reference patches are degenerate (zero contrast)")
    return float(np.mean(ratios))


def smoothness(flow: FlowParams, alpha: float = 0.45, eps: float = 1e-3) -> float:
    """Charbonnier penalty on neighbor differences of grid velocities.

    Reported net of the eps floor so a constant grid scores exactly 0;
    grids without neighbors in any direction score 0.
    """
    g = flow.grid
    diffs = []
    if g.shape[1] >= 2:
        diffs.append((g[:, 1:, :] - g[:, :-1, :]).ravel())
    if g.shape[0] >= 2:
        diffs.append((g[1:, :, :] - g[:-1, :, :]).ravel())
    if not diffs:
        return 0.0
    d = np.concatenate(diffs)
    floor = float(charbonnier(np.zeros(1), alpha, eps)[0])
    # clamp away the ulp left by subtracting the floor from its own mean
    return max(0.0, float(np.mean(charbonnier(d, alpha, eps)) - floor))


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 5
    seed: int = 0
    init_spread: float = 50.0   # px/s search radius for the random starts
    max_iters: int = 120
    fd_step: float = 0.5        # px/s finite-difference step
    step_init: float = 8.0      # px/s initial ascent step
    step_min: float = 0.05      # px/s convergence threshold
    lambda_smooth: float = 0.01
    signed: bool = True


@dataclass
class Diagnostics:
    objective_trace: list = field(default_factory=list)
    best_objective: float = float("-inf")
    mass_clipped: float = 0.0
    converged: bool = True
    starts: list = field(default_factory=list)


def estimate_flow(stream: EventStream, model_shape=(1, 1),
                  objective: Objective | None = None,
                  config: OptimizerConfig | None = None,
                  t_ref: int | None = None):
    """Estimate the flow grid maximizing IWE contrast over the stream.

    Multi-start finite-difference gradient ascent with backtracking,
    coarse-to-fine from 1x1 up to ``model_shape`` (doubling each level).
    Returns (FlowParams in px/s, Diagnostics).
    """
    if len(stream) == 0:
        raise ValueError("cannot estimate flow from an empty stream")
    objective = objective or Objective()
    cfg = config or OptimizerConfig()
    if t_ref is None:
        t_ref = int(stream.t[0])

    sensor = stream.sensor
    h, w = sensor.height, sensor.width
    xs = stream.x.astype(np.float64)
    ys = stream.y.astype(np.float64)
    dt = (stream.t - t_ref).astype(np.float64) / 1e6
    val = stream.p.astype(np.float64) if cfg.signed else np.ones(len(stream))
    # smoothness is penalized on displacement over the stream span (px),
    # not raw px/s, so lambda_smooth is timescale-free
    span_s = max(float(stream.t[-1] - stream.t[0]) / 1e6, 1e-6)

    reference = (warp_events(stream, FlowParams.constant(0, 0), t_ref, cfg.signed)
                 if objective.normalized else None)

    def score(grid_flat, shape, idx, wgt):
        """Objective minus smoothness; the stencil (idx, wgt) is fixed per level."""
        flat = grid_flat.reshape(-1, 2)
        vx = np.einsum("kn,kn->n", wgt, flat[idx, 0])
        vy = np.einsum("kn,kn->n", wgt, flat[idx, 1])
        wx = xs - dt * vx
        wy = ys - dt * vy
        img = np.zeros(h * w)
        x0 = np.floor(wx).astype(np.int64)
        y0 = np.floor(wy).astype(np.int64)
        fx = wx - x0
        fy = wy - y0
        mass = 0.0
        for ddx, ddy, cw in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                             (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            cx = x0 + ddx
            cy = y0 + ddy
            ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
            img += np.bincount((cy[ok] * w + cx[ok]), weights=(val * cw)[ok],
                               minlength=h * w)
            mass += float(cw[ok].sum())
        iwe = IWE(img.reshape(h, w), t_ref, len(stream), mass)
        value = objective_value(iwe, objective, reference)
        displacement_grid = FlowParams(grid_flat.reshape(shape + (2,)) * span_s)
        return value - cfg.lambda_smooth * smoothness(displacement_grid), mass

    # level schedule: 1x1 doubling toward the requested model shape
    levels = [(1, 1)]
    while levels[-1] != tuple(model_shape):
        p, q = levels[-1]
        levels.append((min(p * 2, model_shape[0]), min(q * 2, model_shape[1])))

    diag = Diagnostics()
    rng = np.random.default_rng(cfg.seed)

    def ascend(grid_flat, shape, idx, wgt):
        best, mass = score(grid_flat, shape, idx, wgt)
        if not np.isfinite(best):
            raise ValueError("non-finite objective")
        step = cfg.step_init
        trace = [best]
        converged = False
        for _ in range(cfg.max_iters):
            grad = np.zeros_like(grid_flat)
            for i in range(grid_flat.size):
                for sgn in (1.0, -1.0):
                    probe = grid_flat.copy()
                    probe[i] += sgn * cfg.fd_step
                    v, _ = score(probe, shape, idx, wgt)
                    grad[i] += sgn * v
            norm = np.linalg.norm(grad)
            if norm == 0:
                converged = True
                break
            direction = grad / norm
            improved = False
            while step >= cfg.step_min:
                cand = grid_flat + step * direction
                v, m = score(cand, shape, idx, wgt)
                if np.isfinite(v) and v > best:
                    grid_flat, best, mass = cand, v, m
                    trace.append(best)
                    improved = True
                    step = min(step * 1.5, cfg.step_init)  # regrow after success
                    break
                step *= 0.5
            if not improved:
                converged = True  # step exhausted below step_min
                break
        return grid_flat, best, mass, trace, converged

    # multi-start at every level: ridges between cells of equal velocity
    # are escaped only from asymmetric (per-cell perturbed) starts
    grid = None
    best_val = float("-inf")
    best_mass = 0.0
    for level, shape in enumerate(levels):
        n_params = shape[0] * shape[1] * 2
        if level == 0:
            starts = [np.zeros(n_params)]
            starts += [np.tile(rng.uniform(-cfg.init_spread, cfg.init_spread, 2),
                               shape[0] * shape[1]) for _ in range(cfg.n_starts - 1)]
            stencil = FlowParams(np.zeros(shape + (2,))).cell_weights(xs, ys, w, h)
        else:
            base = grid.upsampled(shape).grid.ravel()
            starts = [base.copy()]
            starts += [base + rng.uniform(-cfg.init_spread / 2, cfg.init_spread / 2,
                                          n_params) for _ in range(cfg.n_starts - 1)]
            stencil = FlowParams(np.zeros(shape + (2,))).cell_weights(xs, ys, w, h)
        level_best = float("-inf")
        for g0 in starts:
            g, v, mass, trace, conv = ascend(g0.copy(), shape, *stencil)
            diag.starts.append({"level": shape, "objective": v})
            if v > level_best:
                level_best = v
                grid = FlowParams(g.reshape(shape + (2,)))
                best_val, best_mass = v, mass
                diag.objective_trace = diag.objective_trace + trace
                diag.converged = conv

    diag.best_objective = best_val
    diag.mass_clipped = len(stream) - best_mass
    return grid, diag
