"""Command-line pipeline: generate, simulate-events, encode, estimate,
evaluate, visualize, import, export.

Configuration comes from a properties file (``--config``) with flag
overrides on top (flags win). ``--seed`` re-derives every stage seed from
one master value. ``--threads`` caps worker threads without changing any
output byte; the EVKIT_THREADS environment variable sets its default.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import imgio
from .encode import EncoderConfig, encode_count, encode_gaussian
from .mcflow import Objective, OptimizerConfig, estimate_flow
from .metrics import evaluate_flow, event_mask
from .pipeline import default_config, generate_dataset
from .props import read_props, write_props
from .store import (
    Container,
    export_text,
    import_text,
    sensor_from_props,
    sidecar_path,
    write_container,
)
from .stream import EventStream, FlowField, GrayFrame, SensorConfig

OVERLAY_WINDOW_MS = 100  # default event accumulation window for overlays

_SEED_STAGES = ("scene", "boids", "texture", "trajectory", "noise", "optimizer")


def _load_config(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        cfg.update(read_props(args.config))
    if getattr(args, "seed", None) is not None:
        for k, name in enumerate(_SEED_STAGES):
            cfg[f"seeds.{name}"] = int(args.seed) * 1000 + k
    return cfg


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(int(args.threads), 1)
    return max(int(os.environ.get("EVKIT_THREADS", "1")), 1)


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    if args.preset:
        cfg["pipeline.preset"] = args.preset
    if args.trajectory:
        cfg["trajectory.preset"] = args.trajectory
    if args.duration is not None:
        cfg["render.duration"] = float(args.duration)
    container = generate_dataset(cfg, args.out, threads=_threads(args))
    print(f"wrote {container.path}: {container.n_events} events, "
          f"{container.n_gray} frames, {container.n_flow} flow fields")
    container.close()
    return 0


def cmd_simulate_events(args) -> int:
    frames: list[GrayFrame] = []
    if os.path.isdir(args.input):
        # directory of frame_<t_us>.pgm files
        names = sorted(n for n in os.listdir(args.input) if n.endswith(".pgm"))
        if not names:
            print(f"error: no .pgm frames in {args.input}", file=sys.stderr)
            return 2
        for name in names:
            t_us = int(name.rsplit("_", 1)[-1].removesuffix(".pgm"))
            img = imgio.read_pgm(os.path.join(args.input, name))
            frames.append(GrayFrame(t_us, img.astype(np.float32) / 255.0))
        frames.sort(key=lambda f: f.t)
        h, w = frames[0].image.shape
        sensor = SensorConfig(width=w, height=h)
        if args.config:
            sensor = sensor_from_props({**read_props(args.config),
                                        "sensor.width": w, "sensor.height": h})
    else:
        src = Container(args.input)
        sensor = src.sensor
        frames = [src.gray_frame(i) for i in range(src.n_gray)]
        src.close()
    from .camsim import simulate_events

    stream = simulate_events(frames, sensor)
    write_container(stream, frames, [], args.out).close()
    print(f"wrote {args.out}: {len(stream)} events from {len(frames)} frames")
    return 0


def cmd_encode(args) -> int:
    c = Container(args.input)
    t0 = args.t_start if args.t_start is not None else c.t_lo
    t1 = args.t_end if args.t_end is not None else c.t_end
    stream = c.read_slice(t0, t1).events
    cfg = EncoderConfig(scheme=args.scheme, bins=args.bins, lam=args.lam,
                        channel_mode=args.channel_mode)
    encode = encode_gaussian if args.scheme == "gaussian" else encode_count
    vol = encode(stream, cfg, t0, t1)
    os.makedirs(args.out, exist_ok=True)
    peak = float(np.abs(vol.values).max()) or 1.0
    for b in range(vol.bins):
        for ch in range(vol.channels):
            img = imgio.to_u8(vol.values[b, ch], lo=-peak if args.channel_mode == "signed" else 0.0,
                              hi=peak)
            imgio.write_pgm(os.path.join(args.out, f"bin{b:03d}_ch{ch}.pgm"), img)
    print(f"wrote {vol.bins * vol.channels} images to {args.out}")
    c.close()
    return 0


def _windows(c: Container, window: int):
    """Consecutive gray-frame windows of `window` pairs each."""
    last = c.n_gray - 1
    starts = range(0, last, window)
    for j in starts:
        k = min(j + window, last)
        yield int(c.gray_t[j]), int(c.gray_t[k])


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    c = Container(args.input)
    if c.n_gray < 2:
        print("error: container has no frame pairs to window over", file=sys.stderr)
        return 2
    shape = tuple(int(s) for s in args.grid.split("x"))
    objective = Objective(kind=args.objective)
    opt = OptimizerConfig(seed=int(cfg["seeds.optimizer"]))
    flows = []
    report = {}
    for i, (t0, t1) in enumerate(_windows(c, args.window)):
        stream = c.read_slice(t0, t1).events
        if len(stream) == 0:
            continue
        params, diag = estimate_flow(stream, shape, objective, opt, t_ref=t0)
        u, v = params.dense(c.sensor.width, c.sensor.height)
        span_s = (t1 - t0) / 1e6
        flows.append(FlowField(t0, t1, (u * span_s).astype(np.float32),
                               (v * span_s).astype(np.float32)))
        report[f"window{i:03d}.objective"] = diag.best_objective
        report[f"window{i:03d}.px_per_s.u"] = float(params.grid[..., 0].mean())
        report[f"window{i:03d}.px_per_s.v"] = float(params.grid[..., 1].mean())
    write_container(EventStream.empty(c.sensor), [], flows, args.out,
                    props=report).close()
    print(f"wrote {args.out}: {len(flows)} estimated flow fields")
    c.close()
    return 0


def cmd_evaluate(args) -> int:
    c = Container(args.input)
    if c.n_flow == 0:
        print("error: container has no ground-truth flow channel", file=sys.stderr)
        return 2
    pred = Container(args.pred)
    if pred.n_flow == 0:
        print("error: prediction container has no flow channel", file=sys.stderr)
        pred.close()
        return 2
    reports = []
    lines = []
    for i in range(pred.n_flow):
        pf = pred.flow_field(i)
        sl = c.read_slice(pf.t0, pf.t1)
        if len(sl.events) == 0:
            continue
        mask = event_mask(sl.events)
        rep = evaluate_flow(pf, sl.flow, mask)
        reports.append(rep)
        lines.append(f"window {i}: aee={rep.aee:.4f}px aae={rep.aae_deg:.3f}deg "
                     f"n={rep.n_pixels}")
    if not reports:
        print("error: no overlapping windows with events", file=sys.stderr)
        return 2
    mean_aee = float(np.mean([r.aee for r in reports]))
    mean_aae = float(np.mean([r.aae_deg for r in reports]))
    for line in lines:
        print(line)
    print(f"aggregate: aee={mean_aee:.4f}px aae={mean_aae:.3f}deg "
          f"windows={len(reports)}")
    if args.out:
        props = {"aggregate.aee": mean_aee, "aggregate.aae_deg": mean_aae,
                 "aggregate.windows": len(reports)}
        for i, r in enumerate(reports):
            for k, v in r.to_props().items():
                props[f"window{i:03d}.{k}"] = v
        write_props(args.out, props)
    c.close()
    pred.close()
    if args.aee_budget is not None and mean_aee > args.aee_budget:
        print(f"FAIL: aggregate AEE {mean_aee:.4f} exceeds budget "
              f"{args.aee_budget}", file=sys.stderr)
        return 1
    return 0


def cmd_visualize(args) -> int:
    c = Container(args.input)
    os.makedirs(args.out, exist_ok=True)
    n = 0
    if args.mode == "overlay":
        step = args.window_ms * 1000
        for i, sl in enumerate(c.iterate("time", step)):
            base = (sl.gray_start.image if sl.gray_start is not None
                    else np.zeros((c.sensor.height, c.sensor.width), np.float32))
            rgb = np.repeat(imgio.to_u8(base)[..., None], 3, axis=2)
            ev = sl.events
            pos = ev.p > 0
            rgb[ev.y[pos], ev.x[pos]] = (255, 32, 32)
            rgb[ev.y[~pos], ev.x[~pos]] = (32, 32, 255)
            imgio.write_ppm(os.path.join(args.out, f"overlay_{i:04d}.ppm"), rgb)
            n += 1
    elif args.mode == "flow-color":
        for i in range(c.n_flow):
            f = c.flow_field(i)
            rgb = imgio.flow_to_color(f.u, f.v)
            imgio.write_ppm(os.path.join(args.out, f"flow_{i:04d}.ppm"), rgb)
            n += 1
    elif args.mode == "volume":
        events = c.all_events()
        path = os.path.join(args.out, "events.ply")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("ply\nformat ascii 1.0\n"
                     f"element vertex {len(events)}\n"
                     "property float x\nproperty float y\nproperty float z\n"
                     "property char polarity\n"
                     "end_header\n")
            for i in range(len(events)):
                fh.write(f"{int(events.x[i])} {int(events.y[i])} "
                         f"{events.t[i] / 1000.0} {int(events.p[i])}\n")
        n = 1
    else:
        print(f"error: unknown mode {args.mode!r}", file=sys.stderr)
        return 2
    print(f"wrote {n} file(s) to {args.out}")
    c.close()
    return 0


def cmd_import(args) -> int:
    sensor = SensorConfig()
    if args.config:
        sensor = sensor_from_props(read_props(args.config))
    stream = import_text(args.input, sensor)
    write_container(stream, [], [], args.out).close()
    print(f"wrote {args.out}: {len(stream)} events "
          f"(sidecar {sidecar_path(args.out)})")
    return 0


def cmd_export(args) -> int:
    c = Container(args.input)
    export_text(c.all_events(), args.out)
    print(f"wrote {args.out}: {c.n_events} events")
    c.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evkit",
                                description="synthetic event-vision pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="properties file with configuration")
        sp.add_argument("--seed", type=int, help="master seed overriding seeds.*")
        sp.add_argument("--threads", type=int,
                        help="worker threads (default $EVKIT_THREADS or 1)")
        sp.add_argument("--out", required=out_required, help="output path")

    g = sub.add_parser("generate", help="run the full generation pipeline")
    common(g)
    g.add_argument("--preset", choices=("static", "dynamic"))
    g.add_argument("--trajectory",
                   choices=("down-constant-altitude", "forward-varying-depth"))
    g.add_argument("--duration", type=float, help="sequence length in seconds")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate-events",
                       help="frames (container or PGM dir) to an event container")
    s.add_argument("input")
    common(s)
    s.set_defaults(func=cmd_simulate_events)

    e = sub.add_parser("encode", help="encode a slice into per-bin images")
    e.add_argument("input")
    common(e)
    e.add_argument("--scheme", choices=("count", "gaussian"), default="count")
    e.add_argument("--bins", type=int, default=4)
    e.add_argument("--lam", type=float, default=0.5)
    e.add_argument("--channel-mode", choices=("two-channel", "signed"),
                   default="two-channel")
    e.add_argument("--t-start", type=int)
    e.add_argument("--t-end", type=int)
    e.set_defaults(func=cmd_encode)

    est = sub.add_parser("estimate", help="contrast-maximization flow estimation")
    est.add_argument("input")
    common(est)
    est.add_argument("--grid", default="1x1", help="flow grid PxQ (rows x cols)")
    est.add_argument("--objective", default="variance",
                     choices=("variance", "gradient", "norm-multifocal-variance",
                              "norm-multifocal-gradient"))
    est.add_argument("--window", type=int, default=2,
                     help="frame pairs per estimation window")
    est.set_defaults(func=cmd_estimate)

    ev = sub.add_parser("evaluate", help="score predicted flow against ground truth")
    ev.add_argument("input", help="container with ground-truth flow")
    ev.add_argument("--pred", required=True, help="container with predicted flow")
    ev.add_argument("--aee-budget", type=float,
                    help="nonzero exit when aggregate AEE exceeds this")
    common(ev, out_required=False)
    ev.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("visualize", help="overlay, flow-color or volume outputs")
    v.add_argument("input")
    common(v)
    v.add_argument("--mode", choices=("overlay", "flow-color", "volume"),
                   required=True)
    v.add_argument("--window-ms", type=int, default=OVERLAY_WINDOW_MS)
    v.set_defaults(func=cmd_visualize)

    imp = sub.add_parser("import", help="text events to a container")
    imp.add_argument("input")
    common(imp)
    imp.set_defaults(func=cmd_import)

    exp = sub.add_parser("export", help="container events to text")
    exp.add_argument("input")
    common(exp)
    exp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
