"""Mesoscopic grid-network traffic simulation with max-pressure control."""

from .network import Link, Movement, Phase, Intersection, Network, build_grid, validate
from .controllers import ControllerSpec, MetricWindow, VARIANTS
from .dynamics import Simulation, TraceConfig, FixedSchedule
from .sensing import PenetrationConfig

__version__ = "0.1.0"

__all__ = [
    "Link", "Movement", "Phase", "Intersection", "Network", "build_grid",
    "validate", "ControllerSpec", "MetricWindow", "VARIANTS", "Simulation",
    "TraceConfig", "FixedSchedule", "PenetrationConfig", "__version__",
]
