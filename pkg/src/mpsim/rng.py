"""Counter-based random streams for reproducible simulation runs.

Every random quantity in a run is a pure function of (run seed, stream id,
counter keys).  This gives three properties the simulator relies on:

* byte-identical trajectories for identical seed and config,
* independent streams for traffic (arrivals, routing) and probe tagging,
  so enabling connected-vehicle sensing never perturbs the traffic itself,
* world-invariant routing: a vehicle's k-th turn choice depends only on
  its creation index and k, never on when it reaches the intersection.
  The exhaustive schedule search needs this so that every candidate signal
  sequence is evaluated against the same demand realization.

The mixing function is splitmix64; uniforms take the top 53 bits.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
_MASK = U64(0xFFFFFFFFFFFFFFFF)
_GAMMA = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

# stream identifiers
STREAM_ARRIVAL = 1
STREAM_TURN = 2
STREAM_TAG = 3


@njit(cache=True, inline="always")
def splitmix64(x):
    x = (x + _GAMMA) & _MASK
    z = x
    z = ((z ^ (z >> U64(30))) * _MIX1) & _MASK
    z = ((z ^ (z >> U64(27))) * _MIX2) & _MASK
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def mix3(seed, stream, a, b):
    h = splitmix64(U64(seed) ^ splitmix64(U64(stream)))
    h = splitmix64(h ^ U64(a))
    return splitmix64(h ^ U64(b))


@njit(cache=True, inline="always")
def uniform(seed, stream, a, b):
    """Uniform in [0, 1) keyed by (seed, stream, a, b)."""
    return float(mix3(seed, stream, a, b) >> U64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def poisson_count(lam, u):
    """Inverse-CDF Poisson sample from a single uniform.

    Exact for the small per-step arrival rates used here (lam well below
    ~30; beyond that the running product underflows).
    """
    if lam <= 0.0:
        return 0
    p = np.exp(-lam)
    cum = p
    k = 0
    while u >= cum and k < 1000:
        k += 1
        p *= lam / k
        cum += p
    return k


class RunStreams:
    """Python-facing handle for one run's random streams.

    The simulation kernel calls the njit functions directly; this wrapper
    exposes the same draws for tests and statistical checks.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def arrivals(self, link_index: int, step: int, lam: float) -> int:
        u = uniform(self.seed, STREAM_ARRIVAL, link_index, step)
        return int(poisson_count(lam, u))

    def turn_uniform(self, vehicle_index: int, hop: int) -> float:
        return float(uniform(self.seed, STREAM_TURN, vehicle_index, hop))

    def is_probe(self, vehicle_index: int, p: float) -> bool:
        return bool(uniform(self.seed, STREAM_TAG, vehicle_index, 0) < p)
