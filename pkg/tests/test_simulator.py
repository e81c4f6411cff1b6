import dataclasses

import numpy as np
import pytest
from scipy import linalg

from fuselab.config import SimulationConfig
from fuselab.exceptions import DomainError, ScenarioValidationError
from fuselab.local_filter import filter_means
from fuselab.model import InitialBelief, SensorModel, StateModel, expand_sensors
from fuselab.simulator import (
    TruthTrajectory,
    accumulate_squared_errors,
    generate_measurements,
    monte_carlo_mse,
    plan_covariances,
    resolve_methods,
    simulate_batch,
    simulate_truth,
    truth_stepper,
)
from fuselab.steady_state import steady_state

EXACT = SimulationConfig(truth_method="exact")


def noiseless(scenario, x0):
    state = scenario.state
    quiet = StateModel.constant(state.constant_drift, state.G, np.zeros_like(state.Q))
    return dataclasses.replace(
        scenario, state=quiet, initial=InitialBelief(mean=x0, cov=np.zeros((scenario.n, scenario.n)))
    )


# ------------------------------------------ Truth ------------------------------------------


def test_exact_truth_without_noise_follows_the_flow(oscillator):
    scenario = noiseless(oscillator, [1.0, 0.0])
    truth = simulate_truth(scenario, 0, EXACT)
    F = oscillator.state.F(0.0)
    flow = np.array([linalg.expm(F * t) @ [1.0, 0.0] for t in scenario.epochs])
    np.testing.assert_allclose(truth.states, flow, atol=1e-10)


def test_euler_maruyama_without_noise_is_first_order_accurate(make_scalar):
    scenario = noiseless(make_scalar(count=11), [1.0])
    truth = simulate_truth(scenario, 0)
    # (1 - h)^(t / h) against exp(-t)
    assert truth.states[-1, 0] == pytest.approx(np.exp(-1.0), rel=1e-2)
    assert truth.states[-1, 0] == pytest.approx(0.99**100, rel=1e-12)


def test_truth_is_reproducible_per_run(oscillator):
    first = simulate_truth(oscillator, 5)
    assert np.array_equal(first.states, simulate_truth(oscillator, 5).states)
    assert not np.array_equal(first.states, simulate_truth(oscillator, 6).states)
    assert (first.seed, first.run) == (oscillator.seed, 5)


def test_batches_agree_with_single_runs(oscillator):
    batch = simulate_batch(oscillator, range(2, 5))
    truth = simulate_truth(oscillator, 3)
    np.testing.assert_allclose(batch.truth[:, :, 1], truth.states, rtol=1e-12, atol=1e-12)
    single = generate_measurements(truth, oscillator.sensors)
    for sensor, measurements in enumerate(batch.measurements):
        np.testing.assert_allclose(measurements[:, :, 1], single[sensor], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("config", [SimulationConfig(), EXACT], ids=["euler-maruyama", "exact"])
def test_truth_holds_the_stationary_variance(make_scalar, config):
    scenario = make_scalar(count=11)
    batch = simulate_batch(scenario, range(5000), config)
    assert float(np.var(batch.truth[-1, 0])) == pytest.approx(0.5, rel=0.1)


def test_truth_methods_are_checked(make_scalar):
    with pytest.raises(DomainError):
        truth_stepper(make_scalar(), "runge-kutta")
    ramp = StateModel.time_varying(lambda t: np.array([[-1.0 - t]]), [[1.0]], [[1.0]])
    with pytest.raises(DomainError):
        truth_stepper(dataclasses.replace(make_scalar(), state=ramp), "exact")
    assert truth_stepper(make_scalar(count=3), "euler-maruyama").draws == 20


# ------------------------------------------ Measurements ------------------------------------------


def test_noiseless_sensor_reports_the_projection(oscillator):
    truth = simulate_truth(oscillator, 0)
    exact_sensor = SensorModel(index=1, H=[[1.0, 0.0]], R=[[0.0]])
    (y,) = generate_measurements(truth, [exact_sensor])
    np.testing.assert_array_equal(y, truth.states @ exact_sensor.H.T)


def test_sensor_noise_is_independent_and_reproducible():
    truth = TruthTrajectory(times=np.arange(1000.0), states=np.zeros((1000, 1)), seed=3, run=0)
    sensors = [SensorModel(index=i, H=[[1.0]], R=[[1.0]]) for i in (1, 2)]
    first, second = generate_measurements(truth, sensors)
    assert abs(np.corrcoef(first[:, 0], second[:, 0])[0, 1]) < 0.1
    assert float(np.std(first)) == pytest.approx(1.0, rel=0.1)
    (other_run,) = generate_measurements(truth, sensors[:1], run_seed=1)
    assert abs(np.corrcoef(first[:, 0], other_run[:, 0])[0, 1]) < 0.1
    again, _ = generate_measurements(truth, sensors)
    assert np.array_equal(first, again)


# ------------------------------------------ Bookkeeping ------------------------------------------


def test_squared_errors_of_a_perfect_estimator_vanish():
    truth = np.arange(12.0).reshape(2, 2, 3)
    np.testing.assert_array_equal(accumulate_squared_errors(truth, truth.copy()), np.zeros((2, 2)))
    np.testing.assert_array_equal(accumulate_squared_errors(truth, truth + 1.0), np.full((2, 2), 3.0))
    with pytest.raises(DomainError):
        accumulate_squared_errors(truth, truth[:, :, :2])


@pytest.mark.parametrize("methods", [["local4"], ["kalman"], [], ["local0"]])
def test_unusable_method_lists(methods):
    with pytest.raises(DomainError):
        resolve_methods(methods, 3)


def test_methods_are_deduplicated():
    assert resolve_methods(["local2", "local", "ci", "CI"], 3) == ["local2", "local1", "local3", "ci"]


def test_a_single_run_is_not_a_study(oscillator):
    with pytest.raises(DomainError):
        monte_carlo_mse(dataclasses.replace(oscillator, mc_runs=1), ["ff"])


def test_sensors_sharing_an_index_are_refused(make_scalar):
    scenario = make_scalar(mc_runs=10)
    twins = tuple(dataclasses.replace(sensor, index=1) for sensor in scenario.sensors)
    with pytest.raises(ScenarioValidationError) as error:
        monte_carlo_mse(dataclasses.replace(scenario, sensors=twins), ["ff"])
    assert [str(v) for v in error.value.violations] == ["index_mismatch(sensor=2)"]


def test_simulation_config_is_checked():
    with pytest.raises(DomainError):
        SimulationConfig(truth_method="runge-kutta")
    with pytest.raises(DomainError):
        SimulationConfig(workers=0)


def test_local_methods_skip_the_cross_covariances(oscillator):
    plan = plan_covariances(oscillator, ["local"])
    assert plan.methods == ("local1", "local2", "local3")
    assert plan.fusion == {}
    np.testing.assert_array_equal(plan.actual_covs("local2"), plan.local_schedules[1].posterior_covs)


def test_ci_reports_at_least_its_actual_covariance(oscillator):
    plan = plan_covariances(oscillator, ["ff", "ci"])
    ci_gap = plan.reported_covs("ci") - plan.actual_covs("ci")
    assert np.all(np.linalg.eigvalsh(ci_gap) >= -1e-10)
    np.testing.assert_allclose(plan.reported_covs("ff"), plan.actual_covs("ff"), rtol=1e-9, atol=1e-15)


def test_results_do_not_depend_on_the_worker_count(oscillator):
    scenario = dataclasses.replace(oscillator, mc_runs=200)
    serial = monte_carlo_mse(scenario, ["ff", "ci", "local"], SimulationConfig(chunk_size=64, workers=1))
    threaded = monte_carlo_mse(scenario, ["ff", "ci", "local"], SimulationConfig(chunk_size=64, workers=4))
    assert serial.methods == threaded.methods == ["ff", "ci", "local1", "local2", "local3"]
    for method in serial.methods:
        assert np.array_equal(serial.mse[method], threaded.mse[method])
        assert np.array_equal(serial.anees[method], threaded.anees[method])
    assert serial.runs == 200
    assert serial.component("ff", 1).shape == (oscillator.epochs.size,)
    assert set(serial.weights) == {"ff", "ci"}


def test_halving_the_step_barely_moves_the_fused_covariances(oscillator):
    coarse = plan_covariances(oscillator, ["ff", "ci"])
    fine = plan_covariances(dataclasses.replace(oscillator, dt=0.005), ["ff", "ci"])
    for method in ("ff", "ci"):
        a = np.trace(coarse.actual_covs(method), axis1=1, axis2=2)
        b = np.trace(fine.actual_covs(method), axis1=1, axis2=2)
        assert np.max(np.abs(a - b) / b) < 0.01


def test_optimal_fusion_is_never_worse_than_ci(oscillator):
    plan = plan_covariances(oscillator, ["ff", "ci", "local"])
    ff = np.trace(plan.actual_covs("ff"), axis1=1, axis2=2)
    ci = np.trace(plan.actual_covs("ci"), axis1=1, axis2=2)
    best_local = np.min([np.trace(plan.actual_covs(f"local{i}"), axis1=1, axis2=2) for i in (1, 2, 3)], axis=0)
    assert np.all(ff <= ci + 1e-8)
    assert np.all(ff <= best_local + 1e-8)


# ------------------------------------------ Monte Carlo studies ------------------------------------------


@pytest.mark.slow
def test_estimators_are_consistent(oscillator):
    series = monte_carlo_mse(dataclasses.replace(oscillator, mc_runs=4000), ["ff", "ci", "local"], EXACT)
    for method in series.methods:
        anees = series.anees[method]
        assert np.all((0.85 <= anees) & (anees <= 1.15)), method
        assert float(np.mean(anees)) == pytest.approx(1.0, abs=0.05), method
        ratio = series.mse[method].sum(axis=1) / series.actual_traces[method]
        assert float(np.mean(ratio)) == pytest.approx(1.0, abs=0.05), method


@pytest.mark.slow
def test_monte_carlo_reaches_the_closed_form_steady_state(make_scalar):
    scenario = make_scalar(gap=5.0, count=4, mc_runs=4000)
    series = monte_carlo_mse(scenario, ["ff", "ci"])
    report = steady_state(1, 5, 2)
    assert series.mse["ff"][-1, 0] == pytest.approx(report.P_FF, rel=0.1)
    assert series.mse["ci"][-1, 0] == pytest.approx(report.P_CI, rel=0.1)


@pytest.mark.slow
def test_fusion_beats_every_local_filter(oscillator):
    series = monte_carlo_mse(oscillator, ["ff", "ci", "local"])
    settled = slice(10, None)
    ff = float(np.mean(series.mse["ff"][settled].sum(axis=1)))
    ci = float(np.mean(series.mse["ci"][settled].sum(axis=1)))
    best_local = min(float(np.mean(series.mse[f"local{i}"][settled].sum(axis=1))) for i in (1, 2, 3))
    assert ff <= 1.05 * ci
    assert ci < best_local


@pytest.mark.slow
def test_ci_tracks_ff_on_the_angle_at_every_epoch(oscillator):
    series = monte_carlo_mse(oscillator, ["ff", "ci", "local"])
    assert series.runs == 1000
    ff, ci = series.component("ff", 0), series.component("ci", 0)
    assert np.max(np.abs(ci - ff) / ff) < 0.05
    for i in (1, 2, 3):
        local = series.component(f"local{i}", 0)
        assert np.all(ff <= 1.05 * local), i
        assert np.all(ci <= 1.05 * local), i


def test_fusing_a_single_sensor_returns_its_estimate(oscillator):
    scenario = expand_sensors(dataclasses.replace(oscillator, mc_runs=2), 1)
    plan = plan_covariances(scenario, ["ff", "ci", "local"])
    batch = simulate_batch(scenario, range(2))
    local_means = [filter_means(scenario, plan.local_schedules[0], batch.measurements[0])]
    for method in ("ff", "ci"):
        np.testing.assert_allclose(plan.actual_covs(method), plan.actual_covs("local1"), rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(plan.estimates(method, local_means), local_means[0], rtol=1e-12, atol=1e-12)
