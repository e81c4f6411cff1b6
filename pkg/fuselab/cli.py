"""
The `fuselab` command line.

    fuselab steady-state --q 1 --r1 5 --r2 2 --check --out results/
    fuselab simulate --scenario oscillator.json --methods ff,ci,local --out results/
    fuselab bench --sensor-counts 1 3 6 --repeats 5 --out results/
    fuselab validate --scenario my_scenario.json

Every library failure maps to a stable exit code (see `fuselab.exceptions`): 0 success,
1 validation or domain error, 2 io or parse error, 3 numerical failure.  Results go to stdout
and CSV files; diagnostics go to stderr through `logging` (`-v` for INFO, `-vv` for DEBUG).
"""
from __future__ import annotations

import argparse
import dataclasses
import importlib.resources
import logging
import math
import pathlib
import statistics
import sys
import time
import typing

import numpy as np

from fuselab import csvio
from fuselab.config import TRUTH_METHODS, FilterConfig, SimulationConfig
from fuselab.cross_covariance import assemble_joint_covariance, run_cross_bank
from fuselab.exceptions import DomainError, FuselabError, ScenarioValidationError
from fuselab.fusion import WeightSet, actual_fused_covariance, ci_weights, ff_weights, fuse, get_fusion_rule
from fuselab.instrumentation import CROSS, counting
from fuselab.local_filter import covariance_schedule, filter_means
from fuselab.model import Scenario, expand_sensors, load_scenario, validate_scenario
from fuselab.simulator import monte_carlo_mse, simulate_batch
from fuselab.steady_state import SteadyStateReport, ci_relative_excess, steady_state

logger = logging.getLogger(__name__)

PUBLISHED_ARGUMENTS = (1.0, 5.0, 2.0)
PUBLISHED_P_FF = 0.3896
PUBLISHED_P_CI = 0.3925
PUBLISHED_ATOL = 5e-5
TWO_ROUTE_ATOL = 1e-6

BENCH_FIELDS = ("N", "method", "median_seconds", "ode_props", "median_total_seconds", "epochs")


def bundled_scenario(name: str = "oscillator") -> pathlib.Path:
    return pathlib.Path(str(importlib.resources.files("fuselab") / "scenarios" / f"{name}.json"))


# ------------------------------------------ steady-state ------------------------------------------


def cross_check(report: SteadyStateReport) -> typing.Dict[str, typing.Tuple[float, float]]:
    """
    Recompute the oracle's weights and fused variances with the general fusion code applied to
    its own covariance triple.
    :return: name: (closed form value, fusion code value).
    """
    joint = np.array([[report.P11, report.P12], [report.P12, report.P22]])
    ff = ff_weights(joint, 1, 2)
    ci = ci_weights([np.array([[report.P11]]), np.array([[report.P22]])])
    return {
        "C1": (report.C1, float(ff.weights[0][0, 0])),
        "C2": (report.C2, float(ff.weights[1][0, 0])),
        "W1": (report.W1, float(ci.weights[0][0, 0])),
        "W2": (report.W2, float(ci.weights[1][0, 0])),
        "P_FF": (report.P_FF, float(actual_fused_covariance(ff, joint)[0, 0])),
        "P_CI": (report.P_CI, float(actual_fused_covariance(ci, joint)[0, 0])),
    }


def cmd_steady_state(
    q: float, r1: float, r2: float, check: bool = False, out_dir: typing.Optional[pathlib.Path] = None
) -> int:
    """
    Print the closed form report and, given `out_dir`, write it to `steady_state.csv` there.
    """
    report = steady_state(q, r1, r2)
    excess = ci_relative_excess(report)
    for field in csvio.STEADY_STATE_FIELDS:
        print(f"{field:>5} = {getattr(report, field):.10g}")
    print(f"CI relative excess = {excess:.4%}")
    if out_dir is not None:
        csvio.write_steady_state(csvio.ensure_directory(out_dir) / "steady_state.csv", report, excess)
    if not check:
        return 0

    failures = [
        f"{name}: closed form {oracle!r} vs fusion code {dynamic!r}"
        for name, (oracle, dynamic) in cross_check(report).items()
        if abs(oracle - dynamic) > TWO_ROUTE_ATOL
    ]
    if (report.q, report.r1, report.r2) == PUBLISHED_ARGUMENTS:
        for name, value, published in (("P_FF", report.P_FF, PUBLISHED_P_FF), ("P_CI", report.P_CI, PUBLISHED_P_CI)):
            if abs(value - published) > PUBLISHED_ATOL:
                failures.append(f"{name}: {value!r} differs from the published {published}")
    for failure in failures:
        print(f"check failed: {failure}", file=sys.stderr)
    if failures:
        return 1
    print("check passed")
    return 0


# ------------------------------------------ simulate ------------------------------------------


def apply_overrides(
    scenario: Scenario,
    seed: typing.Optional[int] = None,
    mc_runs: typing.Optional[int] = None,
    dt: typing.Optional[float] = None,
) -> Scenario:
    changes = {key: value for key, value in (("seed", seed), ("mc_runs", mc_runs), ("dt", dt)) if value is not None}
    if not changes:
        return scenario
    scenario = dataclasses.replace(scenario, **changes)
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioValidationError(violations)
    return scenario


def cmd_simulate(
    scenario: Scenario,
    methods: typing.Sequence[str],
    out_dir: pathlib.Path,
    config: SimulationConfig = SimulationConfig(),
    filter_config: FilterConfig = FilterConfig(),
) -> int:
    out_dir = csvio.ensure_directory(out_dir)
    series = monte_carlo_mse(scenario, methods, config, filter_config)
    for method in series.methods:
        csvio.write_mse(out_dir, series, method)
        csvio.write_consistency(out_dir, series, method)
        if method in series.weights:
            csvio.write_weights(out_dir, method, series.times, series.weights[method])
    print(f"{series.runs} runs, final epoch t = {series.times[-1]:.6g}")
    for method in series.methods:
        final = ", ".join(f"{value:.6g}" for value in series.mse[method][-1])
        print(f"{method:>8}: mse = [{final}], anees = {series.anees[method][-1]:.4f}")
    return 0


# ------------------------------------------ bench ------------------------------------------


@dataclasses.dataclass(frozen=True)
class TimingReport:
    """
    Median wall times of one fusion method over repeated full filtering passes.

    :param median_seconds: Fusion specific work only: the cross-covariance bank (FF) and the
        weights and fused means at every epoch.
    :param median_total_seconds: The whole pass, local filters included.
    :param ode_props: Cross-covariance Lyapunov propagations per epoch interval.
    """

    method: str
    N: int
    median_seconds: float
    median_total_seconds: float
    ode_props: int
    epochs: int


def fusion_pass(scenario: Scenario, method: str, filter_config: FilterConfig = FilterConfig()) -> TimingReport:
    """
    One timed filtering pass over a single simulated run.  Measurement synthesis is not timed.
    """
    rule = get_fusion_rule(method)
    measurements = simulate_batch(scenario, range(1)).measurements
    epochs = scenario.epochs.size

    start = time.perf_counter()
    schedules = [covariance_schedule(scenario, i, filter_config) for i in range(1, scenario.sensor_count + 1)]
    means = [filter_means(scenario, schedule, y)[:, :, 0] for schedule, y in zip(schedules, measurements)]
    fusion_start = time.perf_counter()
    with counting(CROSS) as counter:
        banks = None
        if rule.needs_cross_covariance:
            banks = run_cross_bank(scenario, [[s.gains[k] for s in schedules] for k in range(epochs)])
        for k in range(epochs):
            local_covs = [schedule.posterior_covs[k] for schedule in schedules]
            joint = assemble_joint_covariance(local_covs, banks[k]) if banks is not None else None
            weightset: WeightSet = rule.weights(local_covs, joint)
            fuse(weightset, [mean[k] for mean in means])
    end = time.perf_counter()

    intervals = epochs - 1
    return TimingReport(
        method=rule.name,
        N=scenario.sensor_count,
        median_seconds=end - fusion_start,
        median_total_seconds=end - start,
        ode_props=counter[CROSS] // intervals if intervals else 0,
        epochs=epochs,
    )


def time_fusion(
    scenario: Scenario, method: str, repeats: int, filter_config: FilterConfig = FilterConfig()
) -> TimingReport:
    if repeats < 1:
        raise DomainError("repeats must be positive")
    passes = [fusion_pass(scenario, method, filter_config) for _ in range(repeats)]
    return dataclasses.replace(
        passes[0],
        median_seconds=statistics.median(p.median_seconds for p in passes),
        median_total_seconds=statistics.median(p.median_total_seconds for p in passes),
    )


def cmd_bench(
    scenario: Scenario,
    sensor_counts: typing.Sequence[int],
    repeats: int,
    out_dir: typing.Optional[pathlib.Path] = None,
    methods: typing.Sequence[str] = ("ff", "ci"),
    filter_config: FilterConfig = FilterConfig(),
) -> typing.List[TimingReport]:
    reports = []
    for N in sensor_counts:
        expanded = expand_sensors(scenario, N)
        for method in methods:
            report = time_fusion(expanded, method, repeats, filter_config)
            logger.info(
                "N=%d %s: %.6f s fusion, %.6f s total", N, method, report.median_seconds, report.median_total_seconds
            )
            reports.append(report)
    print(f"{'N':>3} {'method':>6} {'fusion [s]':>12} {'total [s]':>12} {'ode_props':>9}")
    for report in reports:
        print(
            f"{report.N:>3} {report.method:>6} {report.median_seconds:>12.6f} "
            f"{report.median_total_seconds:>12.6f} {report.ode_props:>9}"
        )
    if out_dir is not None:
        path = csvio.ensure_directory(out_dir) / "bench.csv"
        csvio.write_csv(path, BENCH_FIELDS, ([getattr(r, field) for field in BENCH_FIELDS] for r in reports))
    return reports


# ------------------------------------------ validate ------------------------------------------


def cmd_validate(scenario_path: pathlib.Path) -> int:
    scenario = load_scenario(scenario_path, validate=False)
    violations = validate_scenario(scenario)
    for violation in violations:
        print(f"{violation}: {violation.message}")
    if violations:
        return 1
    print(f"{scenario_path}: valid (n={scenario.n}, N={scenario.sensor_count}, {scenario.epochs.size} epochs)")
    return 0


# ------------------------------------------ argument parsing ------------------------------------------


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {raw}")
    return value


def _finite_float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {raw}")
    return value


def _method_list(raw: str) -> typing.List[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def _add_scenario_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", type=pathlib.Path, default=None, help="JSON scenario (default: the oscillator)")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario's root seed")
    parser.add_argument("--mc-runs", type=int, default=None, help="override the scenario's Monte Carlo run count")
    parser.add_argument("--dt", type=_finite_float, default=None, help="override the integrator step")
    parser.add_argument("--joseph", action="store_true", help="use the Joseph form covariance update")


def _scenario_from(args: argparse.Namespace) -> Scenario:
    scenario = load_scenario(args.scenario or bundled_scenario())
    return apply_overrides(scenario, seed=args.seed, mc_runs=args.mc_runs, dt=args.dt)


def _run_steady_state(args: argparse.Namespace) -> int:
    return cmd_steady_state(args.q, args.r1, args.r2, check=args.check, out_dir=args.out)


def _run_simulate(args: argparse.Namespace) -> int:
    overrides = {"truth_method": args.truth}
    if args.workers is not None:
        overrides["workers"] = args.workers
    config = SimulationConfig.from_env(**overrides)
    return cmd_simulate(_scenario_from(args), args.methods, args.out, config, FilterConfig(joseph_form=args.joseph))


def _run_bench(args: argparse.Namespace) -> int:
    cmd_bench(_scenario_from(args), args.sensor_counts, args.repeats, args.out, args.methods, FilterConfig(args.joseph))
    return 0


def _run_validate(args: argparse.Namespace) -> int:
    return cmd_validate(args.scenario or bundled_scenario())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuselab", description="Multisensor fusion filtering toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    steady = sub.add_parser("steady-state", help="Closed form steady state of the scalar two-sensor system")
    steady.add_argument("--q", type=float, required=True, help="process noise intensity")
    steady.add_argument("--r1", type=float, required=True, help="sensor 1 measurement noise variance")
    steady.add_argument("--r2", type=float, required=True, help="sensor 2 measurement noise variance")
    steady.add_argument("--check", action="store_true", help="cross check against the fusion code (and 0.3896/0.3925)")
    steady.add_argument("--out", type=pathlib.Path, default=pathlib.Path("."), help="directory for steady_state.csv")
    steady.set_defaults(func=_run_steady_state)

    simulate = sub.add_parser("simulate", help="Monte Carlo mean square errors of local and fused estimates")
    _add_scenario_options(simulate)
    simulate.add_argument("--methods", type=_method_list, default=["ff", "ci", "local"], help="e.g. ff,ci,local")
    simulate.add_argument("--out", type=pathlib.Path, default=pathlib.Path("."), help="output directory")
    simulate.add_argument("--workers", type=_positive_int, default=None, help="threads (default: $FUSELAB_THREADS)")
    simulate.add_argument("--truth", choices=TRUTH_METHODS, default="euler-maruyama", help="truth discretization")
    simulate.set_defaults(func=_run_simulate)

    bench = sub.add_parser("bench", help="Time FF against CI over a range of sensor counts")
    _add_scenario_options(bench)
    bench.add_argument("--sensor-counts", type=_positive_int, nargs="+", default=[1, 3, 6])
    bench.add_argument("--repeats", type=_positive_int, default=5)
    bench.add_argument("--methods", type=_method_list, default=["ff", "ci"], help="fusion rules to time")
    bench.add_argument("--out", type=pathlib.Path, default=None, help="directory for bench.csv")
    bench.set_defaults(func=_run_bench)

    validate = sub.add_parser("validate", help="List every invariant a scenario file violates")
    validate.add_argument("--scenario", type=pathlib.Path, default=None)
    validate.set_defaults(func=_run_validate)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.DEBUG if verbosity >= 2 else logging.INFO if verbosity == 1 else logging.WARNING
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("fuselab").setLevel(level)


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except FuselabError as exc:
        print(f"fuselab: error: {exc}", file=sys.stderr)
        return exc.exit_code
