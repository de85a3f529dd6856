"""Connected-vehicle sensing: probe tagging and probe-only metrics.

A fraction ``p`` of vehicles is tagged as probes once, at network entry,
from a random stream independent of the traffic streams; enabling or
changing the penetration rate therefore never alters trajectories, only
what the controllers observe.  Controllers under partial sensing read
windows accumulated over probe vehicles only, optionally rescaled by 1/p.
Phase selection is an argmax, so the uniform rescale never changes a
decision; ``raw`` is the default.
"""

from __future__ import annotations

from dataclasses import dataclass

from .controllers import MetricWindow
from .rng import RunStreams

SCALINGS = ("raw", "inverse-p")


@dataclass(frozen=True)
class PenetrationConfig:
    p: float
    scaling: str = "raw"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"penetration {self.p} outside [0, 1]")
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}")
        if self.scaling == "inverse-p" and self.p == 0.0:
            raise ValueError("inverse-p scaling undefined at p = 0")


def tag_vehicle(streams: RunStreams, vehicle_index: int, p: float) -> bool:
    """Probe flag for a vehicle entering the network; immutable afterwards."""
    return streams.is_probe(vehicle_index, p)


def observed_window(window: MetricWindow, probe_window: MetricWindow,
                    config: PenetrationConfig) -> MetricWindow:
    """The window a controller sees under partial sensing.

    ``probe_window`` holds the accumulators over tagged vehicles only.  With
    inverse-p scaling the sums are inflated to estimate the full metric;
    the snapshot counts scale the same way (fractional snapshots are fine,
    they only ever enter weight arithmetic).
    """
    if config.scaling == "raw":
        return probe_window
    f = 1.0 / config.p
    return MetricWindow(
        dt=probe_window.dt, steps=probe_window.steps,
        sum_count=probe_window.sum_count * f,
        sum_stopped=probe_window.sum_stopped * f,
        sum_distance=probe_window.sum_distance * f,
        snapshot_count=probe_window.snapshot_count * f,
        snapshot_stopped=probe_window.snapshot_stopped * f,
    )
