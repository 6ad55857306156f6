"""evkit: synthetic underwater event-camera data at desk scale.

Capabilities, one module each: core stream types (:mod:`evkit.stream`),
the indexed ``.evz`` container (:mod:`evkit.store`), tensor encoders and
augmentations (:mod:`evkit.encode`), frame-to-event simulation
(:mod:`evkit.camsim`), seeded scene synthesis (:mod:`evkit.scene`), fish
school dynamics (:mod:`evkit.boids`), the plane renderer with analytic
ground-truth flow (:mod:`evkit.render`), contrast-maximization flow
estimation (:mod:`evkit.mcflow`) and evaluation metrics
(:mod:`evkit.metrics`). The ``evkit`` command wires them into a pipeline.
"""

from .stream import (
    Event,
    EventStream,
    FlowField,
    GrayFrame,
    SensorConfig,
    merge_streams,
    slice_stream,
)

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventStream",
    "FlowField",
    "GrayFrame",
    "SensorConfig",
    "merge_streams",
    "slice_stream",
    "__version__",
]
