"""
The per-sensor continuous-discrete Kalman filter.

Each local filter sees only its own sensor.  At an epoch it corrects its prediction with
the measurement; between epochs it propagates the mean and covariance through the moment
ODEs of `fuselab.integrator`.  The first epoch is updated too, using the initial belief
as its prior.

Covariances and gains never depend on the measured values, so for Monte Carlo work the
covariance recursion is computed once (`covariance_schedule`) and the mean recursion is
then run on many measurement streams at once (`filter_means`).
"""
from __future__ import annotations

import dataclasses
import logging
import typing

import numpy as np
from scipy import linalg

from fuselab.config import FilterConfig
from fuselab.exceptions import DomainError, SingularMatrixError
from fuselab.instrumentation import LOCAL
from fuselab.integrator import MomentKind, MomentOde, propagate_interval
from fuselab.linalg import symmetrize
from fuselab.model import GaussianBelief, Scenario, SensorModel

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class LocalFilterState:
    sensor: SensorModel
    prior: GaussianBelief
    posterior: GaussianBelief
    gain: np.ndarray


@dataclasses.dataclass(frozen=True)
class GainSchedule:
    """
    Everything a local filter computes that does not depend on measured values, stacked by
    epoch: `prior_covs` and `posterior_covs` are (K, n, n), `gains` is (K, n, m).
    """

    sensor: SensorModel
    times: np.ndarray
    prior_covs: np.ndarray
    posterior_covs: np.ndarray
    gains: np.ndarray


def kalman_gain(
    P_pred: np.ndarray, H: np.ndarray, R: np.ndarray, sensor: typing.Optional[int] = None
) -> np.ndarray:
    """
    K = P Hᵀ (H P Hᵀ + R)⁻¹, through a Cholesky solve of the innovation covariance.

    >>> kalman_gain(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    array([[0.5]])
    """
    P_pred, H, R = np.atleast_2d(P_pred), np.atleast_2d(H), np.atleast_2d(R)
    innovation = symmetrize(H @ P_pred @ H.T + R)
    try:
        factor = linalg.cho_factor(innovation, lower=True)
    except linalg.LinAlgError as exc:
        where = f" for sensor {sensor}" if sensor is not None else ""
        raise SingularMatrixError(f"innovation covariance is singular{where}", sensor=sensor) from exc
    return linalg.cho_solve(factor, H @ P_pred.T).T


def _covariance_update(
    P_prior: np.ndarray, sensor: SensorModel, config: FilterConfig
) -> typing.Tuple[np.ndarray, np.ndarray]:
    K = kalman_gain(P_prior, sensor.H, sensor.R, sensor=sensor.index)
    reduction = np.eye(P_prior.shape[0]) - K @ sensor.H
    if config.joseph_form:
        posterior = reduction @ P_prior @ reduction.T + K @ sensor.R @ K.T
    else:
        posterior = reduction @ P_prior
    return symmetrize(posterior), K


def measurement_update(
    prior: GaussianBelief,
    y: typing.Any,
    sensor: SensorModel,
    config: FilterConfig = FilterConfig(),
) -> typing.Tuple[GaussianBelief, np.ndarray]:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (sensor.dim,) or prior.mean.shape != (sensor.H.shape[1],):
        raise DomainError(f"measurement / state dimensions do not match sensor {sensor.index}")
    cov, K = _covariance_update(prior.cov, sensor, config)
    mean = prior.mean + K @ (y - sensor.H @ prior.mean)
    return GaussianBelief(t=prior.t, mean=mean, cov=cov), K


def _sensor(scenario: Scenario, sensor_index: int) -> SensorModel:
    if not 1 <= sensor_index <= scenario.sensor_count:
        raise DomainError(f"sensor index {sensor_index} outside 1..{scenario.sensor_count}")
    return scenario.sensors[sensor_index - 1]


def run_local_filter(
    scenario: Scenario,
    sensor_index: int,
    measurements: typing.Sequence[typing.Any],
    config: FilterConfig = FilterConfig(),
) -> typing.List[LocalFilterState]:
    """
    Filter one sensor's measurement stream (one vector per epoch).
    :param sensor_index: The 1-based sensor index.
    :return: The prior, posterior and gain at every epoch.
    """
    sensor = _sensor(scenario, sensor_index)
    epochs = scenario.epochs
    if len(measurements) != epochs.size:
        raise DomainError(f"expected {epochs.size} measurements for sensor {sensor_index}, got {len(measurements)}")
    mean_ode = MomentOde(scenario.state, MomentKind.MEAN)
    cov_ode = MomentOde(scenario.state, MomentKind.LYAPUNOV)

    states: typing.List[LocalFilterState] = []
    prior = GaussianBelief(t=float(epochs[0]), mean=np.array(scenario.initial.mean), cov=np.array(scenario.initial.cov))
    for k, t in enumerate(epochs):
        if k > 0:
            previous = states[-1].posterior
            t0, t1 = float(epochs[k - 1]), float(t)
            prior = GaussianBelief(
                t=t1,
                mean=propagate_interval(mean_ode, previous.mean, t0, t1, scenario.dt),
                cov=propagate_interval(cov_ode, previous.cov, t0, t1, scenario.dt, topic=LOCAL),
            )
        posterior, K = measurement_update(prior, measurements[k], sensor, config)
        states.append(LocalFilterState(sensor=sensor, prior=prior, posterior=posterior, gain=K))
    return states


def covariance_schedule(
    scenario: Scenario, sensor_index: int, config: FilterConfig = FilterConfig()
) -> GainSchedule:
    sensor = _sensor(scenario, sensor_index)
    epochs = scenario.epochs
    cov_ode = MomentOde(scenario.state, MomentKind.LYAPUNOV)
    priors, posteriors, gains = [], [], []
    prior = np.array(scenario.initial.cov)
    for k, t in enumerate(epochs):
        if k > 0:
            t0, t1 = float(epochs[k - 1]), float(t)
            prior = propagate_interval(cov_ode, posteriors[-1], t0, t1, scenario.dt, topic=LOCAL)
        posterior, K = _covariance_update(prior, sensor, config)
        priors.append(prior)
        posteriors.append(posterior)
        gains.append(K)
    logger.debug("sensor %d: final posterior trace %.6g", sensor.index, float(np.trace(posteriors[-1])))
    return GainSchedule(
        sensor=sensor,
        times=np.array(epochs),
        prior_covs=np.stack(priors),
        posterior_covs=np.stack(posteriors),
        gains=np.stack(gains),
    )


def filter_means(scenario: Scenario, schedule: GainSchedule, measurements: np.ndarray) -> np.ndarray:
    """
    Run the mean recursion of one local filter on R measurement streams at once.
    :param measurements: (K, m, R) array, one column per Monte Carlo run.
    :return: (K, n, R) posterior means.
    """
    K_epochs, _, runs = measurements.shape
    epochs = scenario.epochs
    mean_ode = MomentOde(scenario.state, MomentKind.MEAN)
    H = schedule.sensor.H
    means = np.empty((K_epochs, scenario.n, runs))
    x = np.repeat(scenario.initial.mean[:, np.newaxis], runs, axis=1)
    for k in range(K_epochs):
        if k > 0:
            x = propagate_interval(mean_ode, x, float(epochs[k - 1]), float(epochs[k]), scenario.dt)
        x = x + schedule.gains[k] @ (measurements[k] - H @ x)
        means[k] = x
    return means
