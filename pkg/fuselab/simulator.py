"""
Monte Carlo evaluation of the local filters and the fusion rules.

A run draws a ground truth trajectory of dx/dt = F x + G w, synthesizes every sensor's
measurements from it and runs the estimators over them.  The filters' covariances and
gains never depend on measured values, so they are computed once for all runs (a
`CovariancePlan`), and the runs themselves are simulated and filtered in chunks, vectorized
across the runs of a chunk.

Chunks have a fixed size and their sums are reduced in chunk order, so the result depends on
the scenario and its seed only, not on how many workers shared the chunks.

How the truth is advanced between epochs is a strategy: `EulerMaruyama` substeps of the
integrator step (the default, valid for any F(t)) or `ExactDiscretization` (matrix
exponential transition and integrated process noise, time invariant models only).
"""
from __future__ import annotations

import dataclasses
import logging
import math
import typing
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import linalg

from fuselab.config import FilterConfig, SimulationConfig
from fuselab.cross_covariance import CrossCovBank, assemble_joint_covariance, run_cross_bank
from fuselab.exceptions import DomainError, NotPositiveDefiniteError, NumericOverflowError, ScenarioValidationError
from fuselab.fusion import FusionRule, WeightSet, actual_fused_covariance, fuse, get_fusion_rule
from fuselab.integrator import exact_discretization, step_schedule
from fuselab.linalg import psd_sqrt, spd_factor
from fuselab.local_filter import GainSchedule, covariance_schedule, filter_means
from fuselab.model import Scenario, SensorModel, validate_scenario
from fuselab.rng import sensor_stream, truth_stream

logger = logging.getLogger(__name__)

LOCAL_PREFIX = "local"

Factor = typing.Tuple[np.ndarray, bool]


@dataclasses.dataclass(frozen=True)
class TruthTrajectory:
    """
    The true state of one run at every epoch.
    :param states: (K, n) array, one row per epoch.
    :param seed: The scenario's root seed.
    :param run: The run index the trajectory's random stream was keyed by.
    """

    times: np.ndarray
    states: np.ndarray
    seed: int
    run: int


@dataclasses.dataclass(frozen=True)
class SimulatedBatch:
    """
    A chunk of runs: `truth` is (K, n, R) and `measurements[i]` is sensor i + 1's (K, m, R).
    """

    runs: range
    truth: np.ndarray
    measurements: typing.Tuple[np.ndarray, ...]


@dataclasses.dataclass(frozen=True)
class MseSeries:
    """
    Per epoch Monte Carlo statistics for every evaluated method.

    :param mse: method -> (K, n) mean square error of each state component.
    :param anees: method -> (K,) average normalized estimation error squared, normalized by
        the method's actual error covariance and the state dimension (1.0 when consistent).
    :param reported_traces: method -> (K,) trace of the covariance the method claims.
    :param actual_traces: method -> (K,) trace of the method's true error covariance.
    :param weights: fusion method -> the weights it used at every epoch.
    :param runs: Number of Monte Carlo runs averaged.
    """

    times: np.ndarray
    mse: typing.Mapping[str, np.ndarray]
    anees: typing.Mapping[str, np.ndarray]
    reported_traces: typing.Mapping[str, np.ndarray]
    actual_traces: typing.Mapping[str, np.ndarray]
    weights: typing.Mapping[str, typing.Tuple[WeightSet, ...]]
    runs: int

    @property
    def methods(self) -> typing.List[str]:
        return list(self.mse)

    def component(self, method: str, index: int = 0) -> np.ndarray:
        return self.mse[method][:, index]


# ------------------------------------------ Truth steppers ------------------------------------------


class TruthStepper(typing.Protocol):
    """
    Advances a stack of true states across every epoch interval of a scenario, consuming
    `draws` standard normal numbers per run.
    """

    draws: int

    def trajectory(self, x0: np.ndarray, noise: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class EulerMaruyama:
    """
    x <- x + F(t) x h + G ζ with ζ ~ N(0, Q h), on the integrator's step grid.
    """

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.diffusion = scenario.state.G @ psd_sqrt(scenario.state.Q)
        epochs = scenario.epochs
        self.intervals = [
            step_schedule(float(epochs[k - 1]), float(epochs[k]), scenario.dt) for k in range(1, epochs.size)
        ]
        self.draws = sum(len(steps) for steps in self.intervals) * self.diffusion.shape[1]

    def trajectory(self, x0: np.ndarray, noise: np.ndarray) -> np.ndarray:
        states = np.empty((len(self.intervals) + 1,) + x0.shape)
        states[0] = x = x0
        p = self.diffusion.shape[1]
        cursor = 0
        for k, steps in enumerate(self.intervals, start=1):
            with np.errstate(over="ignore", invalid="ignore"):
                for t, h in steps:
                    z = noise[cursor : cursor + p]
                    cursor += p
                    x = x + (self.scenario.state.F(t) @ x) * h + math.sqrt(h) * (self.diffusion @ z)
            if not np.all(np.isfinite(x)):
                raise NumericOverflowError(t, h)
            states[k] = x
        return states


class ExactDiscretization:
    """
    x <- Φ(h) x + η with η ~ N(0, Q_d(h)), one draw per epoch interval.
    """

    def __init__(self, scenario: Scenario) -> None:
        if not scenario.state.is_time_invariant:
            raise DomainError("the exact truth discretization needs a time invariant F")
        cache: typing.Dict[float, typing.Tuple[np.ndarray, np.ndarray]] = {}
        self.transitions = []
        for gap in np.diff(scenario.epochs):
            key = float(gap)
            if key not in cache:
                phi, qd = exact_discretization(scenario.state, key)
                cache[key] = (phi, psd_sqrt(qd))
            self.transitions.append(cache[key])
        self.n = scenario.n
        self.draws = len(self.transitions) * self.n

    def trajectory(self, x0: np.ndarray, noise: np.ndarray) -> np.ndarray:
        states = np.empty((len(self.transitions) + 1,) + x0.shape)
        states[0] = x = x0
        for k, (phi, root) in enumerate(self.transitions, start=1):
            x = phi @ x + root @ noise[(k - 1) * self.n : k * self.n]
            states[k] = x
        return states


TRUTH_STEPPERS: typing.Dict[str, typing.Callable[[Scenario], TruthStepper]] = {
    "euler-maruyama": EulerMaruyama,
    "exact": ExactDiscretization,
}


def truth_stepper(scenario: Scenario, method: str) -> TruthStepper:
    try:
        stepper = TRUTH_STEPPERS[method]
    except KeyError:
        raise DomainError(f"unknown truth method {method!r}; known: {', '.join(TRUTH_STEPPERS)}") from None
    return stepper(scenario)


# ------------------------------------------ Simulation ------------------------------------------


def _truth_stack(scenario: Scenario, stepper: TruthStepper, runs: range) -> np.ndarray:
    z0, noise = [], []
    for run in runs:
        generator = truth_stream(scenario.seed, run)
        z0.append(generator.standard_normal(scenario.n))
        noise.append(generator.standard_normal(stepper.draws))
    x0 = scenario.initial.mean[:, np.newaxis] + psd_sqrt(scenario.initial.cov) @ np.stack(z0, axis=1)
    return stepper.trajectory(x0, np.stack(noise, axis=1))


def _measurement_stack(seed: int, runs: range, sensor: SensorModel, truth: np.ndarray) -> np.ndarray:
    """
    y = H x + v for a (K, n, R) truth stack; each run's noise comes from its own sensor stream.
    """
    epochs = truth.shape[0]
    z = np.stack([sensor_stream(seed, run, sensor.index).standard_normal((epochs, sensor.dim)) for run in runs], axis=2)
    return np.einsum("mn,knr->kmr", sensor.H, truth) + np.einsum("ml,klr->kmr", psd_sqrt(sensor.R), z)


def simulate_batch(scenario: Scenario, runs: range, config: SimulationConfig = SimulationConfig()) -> SimulatedBatch:
    stepper = truth_stepper(scenario, config.truth_method)
    truth = _truth_stack(scenario, stepper, runs)
    measurements = tuple(_measurement_stack(scenario.seed, runs, sensor, truth) for sensor in scenario.sensors)
    return SimulatedBatch(runs=runs, truth=truth, measurements=measurements)


def simulate_truth(scenario: Scenario, run_seed: int, config: SimulationConfig = SimulationConfig()) -> TruthTrajectory:
    """
    One run's true trajectory.  The same (scenario, run) always gives the same trajectory.

    :param run_seed: The run index keying this trajectory's random stream.
    """
    stepper = truth_stepper(scenario, config.truth_method)
    states = _truth_stack(scenario, stepper, range(run_seed, run_seed + 1))[:, :, 0]
    return TruthTrajectory(times=np.array(scenario.epochs), states=states, seed=scenario.seed, run=run_seed)


def generate_measurements(
    truth: TruthTrajectory, sensors: typing.Sequence[SensorModel], run_seed: typing.Optional[int] = None
) -> typing.List[np.ndarray]:
    """
    :param run_seed: The run whose noise streams to use; defaults to the truth's own run.
    :return: One (K, m) array per sensor, one measurement vector per epoch.
    """
    run = truth.run if run_seed is None else run_seed
    stack = truth.states[:, :, np.newaxis]
    return [_measurement_stack(truth.seed, range(run, run + 1), sensor, stack)[:, :, 0] for sensor in sensors]


# ------------------------------------------ Covariance plan ------------------------------------------


def resolve_methods(methods: typing.Iterable[str], sensor_count: int) -> typing.List[str]:
    """
    Canonical method names: fusion rules by their registry name, `local` expanded into one
    `local<i>` per sensor.

    >>> resolve_methods(["FF", "local", "ci"], 2)
    ['ff', 'local1', 'local2', 'ci']
    """
    resolved: typing.List[str] = []
    for raw in methods:
        name = raw.strip().lower()
        if name == LOCAL_PREFIX:
            names = [f"{LOCAL_PREFIX}{i}" for i in range(1, sensor_count + 1)]
        elif name.startswith(LOCAL_PREFIX) and name[len(LOCAL_PREFIX) :].isdigit():
            index = int(name[len(LOCAL_PREFIX) :])
            if not 1 <= index <= sensor_count:
                raise DomainError(f"{raw!r} names a sensor outside 1..{sensor_count}")
            names = [f"{LOCAL_PREFIX}{index}"]
        elif name in FusionRule.registry:
            names = [name]
        else:
            raise DomainError(f"unknown method {raw!r}")
        for canonical in names:
            if canonical not in resolved:
                resolved.append(canonical)
    if not resolved:
        raise DomainError("at least one method is required")
    return resolved


def _local_index(method: str) -> typing.Optional[int]:
    if method.startswith(LOCAL_PREFIX):
        return int(method[len(LOCAL_PREFIX) :])
    return None


@dataclasses.dataclass(frozen=True)
class FusionSchedule:
    """
    A fusion rule's weights at every epoch and the true error covariance they produce.
    """

    method: str
    weightsets: typing.Tuple[WeightSet, ...]
    actual_covs: np.ndarray


def fusion_schedule(
    scenario: Scenario,
    method: str,
    local_schedules: typing.Sequence[GainSchedule],
    banks: typing.Sequence[CrossCovBank],
) -> FusionSchedule:
    rule = get_fusion_rule(method)
    weightsets, actual = [], []
    for k in range(scenario.epochs.size):
        local_covs = [schedule.posterior_covs[k] for schedule in local_schedules]
        joint = assemble_joint_covariance(local_covs, banks[k])
        weightset = rule.weights(local_covs, joint)
        weightsets.append(weightset)
        actual.append(actual_fused_covariance(weightset, joint))
    return FusionSchedule(method=rule.name, weightsets=tuple(weightsets), actual_covs=np.stack(actual))


@dataclasses.dataclass(frozen=True)
class CovariancePlan:
    """
    Everything about a Monte Carlo study that does not depend on the random draws.
    """

    scenario: Scenario
    methods: typing.Tuple[str, ...]
    local_schedules: typing.Tuple[GainSchedule, ...]
    fusion: typing.Mapping[str, FusionSchedule]

    def reported_covs(self, method: str) -> np.ndarray:
        index = _local_index(method)
        if index is not None:
            return self.local_schedules[index - 1].posterior_covs
        return np.stack([ws.reported_cov for ws in self.fusion[method].weightsets])

    def actual_covs(self, method: str) -> np.ndarray:
        index = _local_index(method)
        if index is not None:
            return self.local_schedules[index - 1].posterior_covs
        return self.fusion[method].actual_covs

    def estimates(self, method: str, local_means: typing.Sequence[np.ndarray]) -> np.ndarray:
        """
        :param local_means: One (K, n, R) posterior mean stack per sensor.
        :return: The method's (K, n, R) estimates.
        """
        index = _local_index(method)
        if index is not None:
            return local_means[index - 1]
        weightsets = self.fusion[method].weightsets
        return np.stack([fuse(ws, [means[k] for means in local_means]) for k, ws in enumerate(weightsets)])


def plan_covariances(
    scenario: Scenario, methods: typing.Sequence[str], filter_config: FilterConfig = FilterConfig()
) -> CovariancePlan:
    """
    Run the covariance side of every local filter, the cross-covariance bank when any fusion
    rule is evaluated, and every fusion rule's weights.  Both rules are scored against the
    exact joint covariance, so the bank is needed for CI's actual covariance too.
    """
    methods = tuple(resolve_methods(methods, scenario.sensor_count))
    local_schedules = tuple(
        covariance_schedule(scenario, i, filter_config) for i in range(1, scenario.sensor_count + 1)
    )
    fusion_methods = [method for method in methods if _local_index(method) is None]
    fusion: typing.Dict[str, FusionSchedule] = {}
    if fusion_methods:
        gains = [[schedule.gains[k] for schedule in local_schedules] for k in range(scenario.epochs.size)]
        banks = run_cross_bank(scenario, gains)
        for method in fusion_methods:
            fusion[method] = fusion_schedule(scenario, method, local_schedules, banks)
    return CovariancePlan(scenario=scenario, methods=methods, local_schedules=local_schedules, fusion=fusion)


# ------------------------------------------ Monte Carlo ------------------------------------------


def accumulate_squared_errors(truth: np.ndarray, estimates: np.ndarray) -> np.ndarray:
    """
    Sum over runs of the squared error of every component, (K, n, R) stacks in, (K, n) out.

    >>> truth = np.ones((2, 1, 3))
    >>> accumulate_squared_errors(truth, truth).tolist()
    [[0.0], [0.0]]
    """
    if truth.shape != estimates.shape:
        raise DomainError(f"truth {truth.shape} and estimates {estimates.shape} differ in shape")
    return np.sum((estimates - truth) ** 2, axis=2)


def _normalized_errors(errors: np.ndarray, factors: typing.Sequence[typing.Optional[Factor]]) -> np.ndarray:
    sums = np.empty(errors.shape[0])
    for k, factor in enumerate(factors):
        if factor is None:
            sums[k] = np.nan
        else:
            sums[k] = float(np.sum(errors[k] * linalg.cho_solve(factor, errors[k])))
    return sums


def _try_factor(matrix: np.ndarray) -> typing.Optional[Factor]:
    try:
        return spd_factor(matrix)
    except NotPositiveDefiniteError:
        return None


@dataclasses.dataclass(frozen=True)
class _ChunkSums:
    squared: typing.Dict[str, np.ndarray]
    normalized: typing.Dict[str, np.ndarray]


def _evaluate_chunk(
    plan: CovariancePlan,
    factors: typing.Mapping[str, typing.Sequence[typing.Optional[Factor]]],
    config: SimulationConfig,
    runs: range,
) -> _ChunkSums:
    scenario = plan.scenario
    batch = simulate_batch(scenario, runs, config)
    local_means = [
        filter_means(scenario, schedule, measurements)
        for schedule, measurements in zip(plan.local_schedules, batch.measurements)
    ]
    squared, normalized = {}, {}
    for method in plan.methods:
        estimates = plan.estimates(method, local_means)
        squared[method] = accumulate_squared_errors(batch.truth, estimates)
        normalized[method] = _normalized_errors(estimates - batch.truth, factors[method])
    logger.debug("runs %d..%d done", runs.start, runs.stop - 1)
    return _ChunkSums(squared=squared, normalized=normalized)


def chunk_ranges(runs: int, chunk_size: int) -> typing.List[range]:
    """
    >>> chunk_ranges(5, 2)
    [range(0, 2), range(2, 4), range(4, 5)]
    """
    return [range(start, min(start + chunk_size, runs)) for start in range(0, runs, chunk_size)]


def monte_carlo_mse(
    scenario: Scenario,
    methods: typing.Sequence[str],
    config: SimulationConfig = SimulationConfig(),
    filter_config: FilterConfig = FilterConfig(),
) -> MseSeries:
    """
    Estimate every method's per epoch mean square error over `scenario.mc_runs` runs.
    :param methods: Any of `ff`, `ci`, `local` (every sensor) or `local<i>`.
    :return: The averaged statistics, identical for any number of workers.
    """
    runs = scenario.mc_runs
    if runs < 2:
        raise DomainError("a Monte Carlo study needs at least two runs")
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioValidationError(violations)
    plan = plan_covariances(scenario, methods, filter_config)
    factors = {method: [_try_factor(P) for P in plan.actual_covs(method)] for method in plan.methods}
    chunks = chunk_ranges(runs, config.chunk_size)
    logger.info(
        "simulating %d runs of %s in %d chunks on %d worker(s)",
        runs,
        ",".join(plan.methods),
        len(chunks),
        config.workers,
    )

    def evaluate(chunk: range) -> _ChunkSums:
        return _evaluate_chunk(plan, factors, config, chunk)

    if config.workers == 1 or len(chunks) == 1:
        results = [evaluate(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=min(config.workers, len(chunks))) as executor:
            results = list(executor.map(evaluate, chunks))

    squared = {method: np.zeros((scenario.epochs.size, scenario.n)) for method in plan.methods}
    normalized = {method: np.zeros(scenario.epochs.size) for method in plan.methods}
    for result in results:
        for method in plan.methods:
            squared[method] += result.squared[method]
            normalized[method] += result.normalized[method]

    return MseSeries(
        times=np.array(scenario.epochs),
        mse={method: total / runs for method, total in squared.items()},
        anees={method: total / (runs * scenario.n) for method, total in normalized.items()},
        reported_traces={method: np.trace(plan.reported_covs(method), axis1=1, axis2=2) for method in plan.methods},
        actual_traces={method: np.trace(plan.actual_covs(method), axis1=1, axis2=2) for method in plan.methods},
        weights={method: schedule.weightsets for method, schedule in plan.fusion.items()},
        runs=runs,
    )
