"""
Reproducible random streams for Monte Carlo work.

One root seed fans out into independent streams keyed by (run, stream) through numpy's
`SeedSequence` spawn keys, each driving a counter-based `Philox` generator.  A run's
draws depend only on the root seed and its own key, never on which thread simulated it
or in what order, so serial and parallel executions produce identical numbers.

Stream 0 of a run drives its truth trajectory (initial state and process noise); stream i
drives the measurement noise of sensor i.
"""
from __future__ import annotations

import numpy as np

TRUTH_STREAM = 0


def stream(seed: int, run: int, stream_id: int) -> np.random.Generator:
    """
    >>> a = stream(7, 3, 1).standard_normal(2)
    >>> b = stream(7, 3, 1).standard_normal(2)
    >>> bool(np.array_equal(a, b))
    True
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(run, stream_id))
    return np.random.Generator(np.random.Philox(sequence))


def truth_stream(seed: int, run: int) -> np.random.Generator:
    return stream(seed, run, TRUTH_STREAM)


def sensor_stream(seed: int, run: int, sensor_index: int) -> np.random.Generator:
    return stream(seed, run, sensor_index)
