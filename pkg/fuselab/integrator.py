"""
Fixed step fourth order Runge-Kutta propagation of the first two moments between epochs.

Between measurements a Kalman filter's mean and covariance obey the linear ODEs

    dx/dt = F(t) x                        (mean)
    dP/dt = F(t) P + P F(t)ᵀ + G Q Gᵀ     (lyapunov)

The same Lyapunov equation also drives the cross-covariance of two local filters, which
is not symmetric; callers pass `symmetrize=False` for it.  Intervals are covered with full
steps of `dt` and one final shortened step so propagation lands exactly on the next epoch.

For time invariant models `exact_discretization` gives the matrix exponential answer the
integrator is checked against.
"""
from __future__ import annotations

import dataclasses
import enum
import functools
import math
import typing

import numpy as np
from scipy import linalg

from fuselab.exceptions import DomainError, NumericOverflowError
from fuselab.instrumentation import broker
from fuselab.linalg import symmetrize as _symmetrize
from fuselab.model import StateModel

# Remainders below this fraction of dt are absorbed into the last full step.
_GRID_RTOL = 1e-9


class MomentKind(str, enum.Enum):
    MEAN = "mean"
    LYAPUNOV = "lyapunov"


@dataclasses.dataclass(frozen=True)
class MomentOde:
    model: StateModel
    kind: MomentKind = MomentKind.MEAN

    @functools.cached_property
    def diffusion(self) -> np.ndarray:
        return self.model.noise_covariance()

    def derivative(self, t: float, state: np.ndarray) -> np.ndarray:
        F = self.model.F(t)
        if self.kind is MomentKind.MEAN:
            return F @ state
        return F @ state + state @ F.T + self.diffusion


def rk4_step(ode: MomentOde, state: np.ndarray, t: float, h: float) -> np.ndarray:
    """
    One classical Runge-Kutta step; F is sampled at t, t + h/2 and t + h.

    >>> model = StateModel.constant([[-1.0]], [[1.0]], [[1.0]])
    >>> rk4_step(MomentOde(model, MomentKind.LYAPUNOV), np.array([[0.5]]), 0.0, 0.3)
    array([[0.5]])
    """
    if not h > 0:
        raise DomainError(f"step must be positive, got {h!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = ode.derivative(t, state)
        k2 = ode.derivative(t + 0.5 * h, state + 0.5 * h * k1)
        k3 = ode.derivative(t + 0.5 * h, state + 0.5 * h * k2)
        k4 = ode.derivative(t + h, state + h * k3)
        result = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(k4)) and np.all(np.isfinite(result))):
        raise NumericOverflowError(t, h)
    return result


def step_schedule(t0: float, t1: float, dt: float) -> typing.List[typing.Tuple[float, float]]:
    """
    The `(t, h)` pairs covering [t0, t1]: floor((t1 - t0) / dt) full steps, then one shortened
    step whose end is t1 itself.

    >>> [round(h, 6) for _, h in step_schedule(0.0, 0.025, 0.01)]
    [0.01, 0.01, 0.005]
    """
    if not t1 > t0:
        raise DomainError(f"interval end {t1!r} must come after its start {t0!r}")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt!r}")
    span = t1 - t0
    full = math.floor(span / dt + _GRID_RTOL)
    steps = [(t0 + k * dt, dt) for k in range(full)]
    start = t0 + full * dt
    if t1 - start > _GRID_RTOL * dt:
        steps.append((start, t1 - start))
    elif steps:
        last_t, _ = steps[-1]
        steps[-1] = (last_t, t1 - last_t)
    else:
        steps.append((t0, span))
    return steps


def propagate_interval(
    ode: MomentOde,
    state: np.ndarray,
    t0: float,
    t1: float,
    dt: float,
    symmetrize: typing.Optional[bool] = None,
    topic: typing.Optional[str] = None,
) -> np.ndarray:
    """
    Propagate a mean or covariance from t0 to exactly t1.
    :param symmetrize: Re-symmetrize after every step; defaults to True for the lyapunov kind.
    :param topic: When given, the propagation is published on this instrumentation topic.
    :return: The state at t1.
    """
    if symmetrize is None:
        symmetrize = ode.kind is MomentKind.LYAPUNOV
    state = np.array(state, dtype=float)
    for t, h in step_schedule(t0, t1, dt):
        state = rk4_step(ode, state, t, h)
        if symmetrize:
            state = _symmetrize(state)
    if topic is not None:
        broker.publish(topic)
    return state


def exact_discretization(model: StateModel, h: float) -> typing.Tuple[np.ndarray, np.ndarray]:
    """
    The transition matrix and integrated process noise of a time invariant model over h,
    from one matrix exponential of the Van Loan block matrix [[-F, GQGᵀ], [0, Fᵀ]] h.

    >>> phi, qd = exact_discretization(StateModel.constant([[-1.0]], [[1.0]], [[2.0]]), 1.0)
    >>> bool(np.isclose(qd[0, 0], 1.0 - np.exp(-2.0)))
    True
    """
    if not model.is_time_invariant:
        raise DomainError("exact discretization needs a time invariant F")
    F = typing.cast(np.ndarray, model.constant_drift)
    n = model.dim
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -F
    block[:n, n:] = model.noise_covariance()
    block[n:, n:] = F.T
    exponential = linalg.expm(block * h)
    phi = exponential[n:, n:].T
    return phi, _symmetrize(phi @ exponential[:n, n:])


def exact_covariance(model: StateModel, P: np.ndarray, h: float) -> np.ndarray:
    phi, qd = exact_discretization(model, h)
    return _symmetrize(phi @ P @ phi.T + qd)
