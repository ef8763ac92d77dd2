"""Reproducible random streams: Brownian increments and Poisson jump events.

Streams are keyed by ``(master_seed, stream_index)`` through numpy's
``SeedSequence`` spawn keys and the counter-based Philox generator, so a
path's noise never depends on which worker simulated it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import JumpCatalogue

_MASK64 = (1 << 64) - 1

BROWNIAN = 0
JUMP_TIMES = 1
JUMP_MARKS = 2
AUXILIARY = 3

_EXP_BLOCK = 1024


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_index: int

    def generator(self, purpose: int = BROWNIAN) -> np.random.Generator:
        """Fresh generator for one purpose; equal arguments give equal draws."""
        seq = np.random.SeedSequence(
            self.master_seed & _MASK64,
            spawn_key=(self.stream_index & _MASK64, purpose),
        )
        return np.random.Generator(np.random.Philox(seq))


def derive_stream(master_seed: int, path_index: int) -> RngStream:
    return RngStream(int(master_seed), int(path_index))


def brownian_increments(stream: RngStream, k: int, n_steps: int, dt: float) -> np.ndarray:
    """``(n_steps, k)`` array of i.i.d. N(0, dt I_k) increments."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = stream.generator(BROWNIAN)
    return np.sqrt(dt) * rng.standard_normal((int(n_steps), int(k)))


class BrownianSource:
    """Chunked reader over a stream's Brownian increments.

    Reading the increments in chunks yields exactly the sequence returned by
    :func:`brownian_increments`.
    """

    def __init__(self, stream: RngStream, k: int, dt: float):
        self._rng = stream.generator(BROWNIAN)
        self.k = k
        self._sqrt_dt = np.sqrt(dt)

    def take(self, n_steps: int) -> np.ndarray:
        return self._sqrt_dt * self._rng.standard_normal((n_steps, self.k))


def jump_event_arrays(stream: RngStream, catalogue: JumpCatalogue, horizon: float):
    """Sorted event times on ``[0, horizon]`` and the atom index of each event."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if catalogue is None or len(catalogue) == 0 or horizon == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    total = catalogue.total_rate
    rng = stream.generator(JUMP_TIMES)
    blocks = []
    t = 0.0
    while t <= horizon:
        gaps = rng.exponential(1.0 / total, size=_EXP_BLOCK)
        times = t + np.cumsum(gaps)
        blocks.append(times)
        t = times[-1]
    times = np.concatenate(blocks)
    times = times[times <= horizon]
    probs = catalogue.rates / total
    atoms = stream.generator(JUMP_MARKS).choice(len(catalogue), size=times.size, p=probs)
    return times, atoms.astype(np.int64)


def jump_events(stream: RngStream, catalogue: JumpCatalogue, horizon: float) -> list:
    """List of ``(time, mark)`` pairs of a compound Poisson process."""
    times, atoms = jump_event_arrays(stream, catalogue, horizon)
    if times.size == 0:
        return []
    return [(float(t), catalogue.marks[a]) for t, a in zip(times, atoms)]
