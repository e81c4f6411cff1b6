"""
Runtime knobs that are not part of a scenario: how covariances are updated and how the
Monte Carlo harness simulates and schedules its work.
"""
from __future__ import annotations

import dataclasses
import logging
import os
import typing

from fuselab.exceptions import DomainError

logger = logging.getLogger(__name__)

THREADS_ENV = "FUSELAB_THREADS"
TRUTH_METHODS = ("euler-maruyama", "exact")


def workers_from_env(environ: typing.Optional[typing.Mapping[str, str]] = None) -> int:
    """
    The Monte Carlo worker cap from `FUSELAB_THREADS`; anything missing or unusable means one.

    >>> workers_from_env({"FUSELAB_THREADS": "4"})
    4
    >>> workers_from_env({"FUSELAB_THREADS": "many"})
    1
    """
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring %s=%r, expected an integer", THREADS_ENV, raw)
        return 1
    return max(value, 1)


@dataclasses.dataclass(frozen=True)
class FilterConfig:
    joseph_form: bool = False


@dataclasses.dataclass(frozen=True)
class SimulationConfig:
    """
    :param truth_method: `euler-maruyama` substeps or the `exact` LTI discretization.
    :param chunk_size: Runs simulated together; fixed so results do not depend on `workers`.
    :param workers: Threads the runs are spread across.
    """

    truth_method: str = "euler-maruyama"
    chunk_size: int = 128
    workers: int = 1

    def __post_init__(self) -> None:
        if self.truth_method not in TRUTH_METHODS:
            raise DomainError(f"truth_method must be one of {TRUTH_METHODS}, got {self.truth_method!r}")
        if self.chunk_size < 1:
            raise DomainError("chunk_size must be positive")
        if self.workers < 1:
            raise DomainError("workers must be positive")

    @classmethod
    def from_env(cls, **overrides: typing.Any) -> SimulationConfig:
        overrides.setdefault("workers", workers_from_env())
        return cls(**overrides)
