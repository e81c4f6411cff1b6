"""
The continuous-discrete multisensor system model.

A state evolves in continuous time under a linear stochastic differential equation

    dx/dt = F(t) x + G w,    w white with intensity Q,

and N sensors observe it only at discrete epochs t_0 < t_1 < ... through

    y_i = H_i x + v_i,    v_i ~ N(0, R_i), independent across sensors and epochs.

A `Scenario` bundles the model with everything needed to run it: the initial belief,
the measurement epochs, the integrator step and the Monte Carlo settings.  Scenarios are
immutable once built; they can be checked with `validate_scenario` (violations are
returned as data) and read from / written to the JSON scenario format.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import pathlib
import typing

import numpy as np

from fuselab.exceptions import (
    DomainError,
    ScenarioIOError,
    ScenarioParseError,
    ScenarioValidationError,
)
from fuselab.linalg import is_pd, is_psd, symmetrize

logger = logging.getLogger(__name__)

Drift = typing.Callable[[float], np.ndarray]

U64_MAX = 2**64 - 1


def _frozen_array(value: typing.Any, ndmin: int) -> np.ndarray:
    array = np.array(value, dtype=float, ndmin=ndmin)
    array.setflags(write=False)
    return array


def _arrays_equal(a: typing.Optional[np.ndarray], b: typing.Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is b
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclasses.dataclass(frozen=True, eq=False)
class StateModel:
    """
    Linear continuous-time dynamics.  `drift` evaluates F at any time; models built with
    `StateModel.constant` also keep the constant matrix so they can be serialized and
    discretized exactly.
    """

    drift: Drift
    G: np.ndarray
    Q: np.ndarray
    dim: int
    constant_drift: typing.Optional[np.ndarray] = None

    @classmethod
    def constant(cls, F: typing.Any, G: typing.Any, Q: typing.Any) -> StateModel:
        matrix = _frozen_array(F, ndmin=2)
        return cls(
            drift=lambda t: matrix,
            G=_frozen_array(G, ndmin=2),
            Q=_frozen_array(Q, ndmin=2),
            dim=matrix.shape[0],
            constant_drift=matrix,
        )

    @classmethod
    def time_varying(cls, drift: Drift, G: typing.Any, Q: typing.Any) -> StateModel:
        gain = _frozen_array(G, ndmin=2)
        return cls(drift=drift, G=gain, Q=_frozen_array(Q, ndmin=2), dim=gain.shape[0])

    @property
    def is_time_invariant(self) -> bool:
        return self.constant_drift is not None

    def F(self, t: float) -> np.ndarray:
        return np.asarray(self.drift(t), dtype=float)

    def noise_covariance(self) -> np.ndarray:
        """
        The diffusion term G Q Gᵀ that drives every covariance ODE.

        >>> StateModel.constant([[0, 1], [-4, -0.4]], [[0], [1]], [[2]]).noise_covariance()
        array([[0., 0.],
               [0., 2.]])
        """
        return symmetrize(self.G @ self.Q @ self.G.T)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateModel):
            return NotImplemented
        same_drift = (
            _arrays_equal(self.constant_drift, other.constant_drift)
            if self.is_time_invariant or other.is_time_invariant
            else self.drift is other.drift
        )
        return same_drift and _arrays_equal(self.G, other.G) and _arrays_equal(self.Q, other.Q)

    __hash__ = None  # type: ignore


@dataclasses.dataclass(frozen=True, eq=False)
class SensorModel:
    index: int
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "H", _frozen_array(self.H, ndmin=2))
        object.__setattr__(self, "R", _frozen_array(self.R, ndmin=2))

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensorModel):
            return NotImplemented
        return self.index == other.index and _arrays_equal(self.H, other.H) and _arrays_equal(self.R, other.R)

    __hash__ = None  # type: ignore


@dataclasses.dataclass(frozen=True, eq=False)
class InitialBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen_array(self.mean, ndmin=1))
        object.__setattr__(self, "cov", _frozen_array(self.cov, ndmin=2))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InitialBelief):
            return NotImplemented
        return _arrays_equal(self.mean, other.mean) and _arrays_equal(self.cov, other.cov)

    __hash__ = None  # type: ignore


@dataclasses.dataclass(frozen=True)
class GaussianBelief:
    """
    An estimate and its error covariance at one time instant.
    """

    t: float
    mean: np.ndarray
    cov: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class Scenario:
    state: StateModel
    sensors: typing.Tuple[SensorModel, ...]
    initial: InitialBelief
    epochs: np.ndarray
    dt: float
    mc_runs: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "epochs", _frozen_array(self.epochs, ndmin=1))

    @property
    def n(self) -> int:
        return self.state.dim

    @property
    def sensor_count(self) -> int:
        return len(self.sensors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.state == other.state
            and self.sensors == other.sensors
            and self.initial == other.initial
            and _arrays_equal(self.epochs, other.epochs)
            and self.dt == other.dt
            and self.mc_runs == other.mc_runs
            and self.seed == other.seed
        )

    __hash__ = None  # type: ignore


@dataclasses.dataclass(frozen=True)
class Violation:
    """
    One broken scenario invariant: a machine readable `code`, optional `context` (for
    example which sensor) and a message for humans.
    """

    code: str
    message: str
    context: typing.Tuple[typing.Tuple[str, typing.Any], ...] = ()

    def __str__(self) -> str:
        if not self.context:
            return self.code
        args = ",".join(f"{key}={value}" for key, value in self.context)
        return f"{self.code}({args})"


# ------------------------------------------ Validation ------------------------------------------


def _check_state(state: StateModel, epochs: np.ndarray) -> typing.List[Violation]:
    violations: typing.List[Violation] = []
    n = state.dim
    if n < 1:
        violations.append(Violation("n_not_positive", "state dimension must be a positive integer"))
        return violations
    horizon_ends = [float(epochs[0]), float(epochs[-1])] if epochs.size else [0.0]
    for t in horizon_ends:
        F = np.atleast_2d(state.F(t))
        if F.shape != (n, n):
            violations.append(Violation("F_shape_mismatch", f"F({t}) has shape {F.shape}, expected {(n, n)}"))
            break
        if not np.all(np.isfinite(F)):
            violations.append(Violation("F_not_finite", f"F({t}) contains non-finite entries"))
            break
    if state.G.shape[0] != n:
        violations.append(Violation("G_shape_mismatch", f"G has {state.G.shape[0]} rows, expected {n}"))
    elif not np.all(np.isfinite(state.G)):
        violations.append(Violation("G_not_finite", "G contains non-finite entries"))
    p = state.G.shape[1]
    if state.Q.shape != (p, p):
        violations.append(Violation("Q_shape_mismatch", f"Q has shape {state.Q.shape}, expected {(p, p)}"))
    elif not np.all(np.isfinite(state.Q)) or not is_psd(state.Q):
        violations.append(Violation("Q_not_psd", "Q must be symmetric positive semidefinite"))
    return violations


def _check_sensor(sensor: SensorModel, n: int) -> typing.List[Violation]:
    where = (("sensor", sensor.index),)
    violations: typing.List[Violation] = []
    if sensor.H.shape[1] != n:
        violations.append(
            Violation("H_shape_mismatch", f"H has {sensor.H.shape[1]} columns, expected {n}", where)
        )
    elif not np.all(np.isfinite(sensor.H)):
        violations.append(Violation("H_not_finite", "H contains non-finite entries", where))
    m = sensor.H.shape[0]
    if sensor.R.shape != (m, m):
        violations.append(Violation("R_shape_mismatch", f"R has shape {sensor.R.shape}, expected {(m, m)}", where))
    elif not np.all(np.isfinite(sensor.R)) or not is_pd(sensor.R):
        violations.append(Violation("R_not_positive_definite", "R must be symmetric positive definite", where))
    return violations


def validate_scenario(s: Scenario) -> typing.List[Violation]:
    """
    Collect every invariant violation of a scenario; an empty list means it is valid.
    Never raises for bad values.
    """
    violations = _check_state(s.state, s.epochs)
    n = s.state.dim

    if s.initial.mean.shape != (n,):
        violations.append(Violation("x0_shape_mismatch", f"x0 has shape {s.initial.mean.shape}, expected {(n,)}"))
    elif not np.all(np.isfinite(s.initial.mean)):
        violations.append(Violation("x0_not_finite", "x0 contains non-finite entries"))
    if s.initial.cov.shape != (n, n):
        violations.append(Violation("P0_shape_mismatch", f"P0 has shape {s.initial.cov.shape}, expected {(n, n)}"))
    elif not is_psd(s.initial.cov):
        violations.append(Violation("P0_not_psd", "P0 must be symmetric positive semidefinite"))

    if not s.sensors:
        violations.append(Violation("no_sensors", "a scenario needs at least one sensor"))
    for position, sensor in enumerate(s.sensors, start=1):
        violations.extend(_check_sensor(sensor, n))
        if sensor.index != position:
            violations.append(
                Violation(
                    "index_mismatch",
                    f"sensor {position} carries index {sensor.index}; indices must number the sensors 1..N in order",
                    (("sensor", position),),
                )
            )

    epochs = s.epochs
    if epochs.size == 0:
        violations.append(Violation("epochs_empty", "at least one measurement epoch is required"))
    for index in range(1, epochs.size):
        if not epochs[index] > epochs[index - 1]:
            violations.append(
                Violation(
                    "epochs_not_strictly_increasing",
                    f"epoch {index} ({epochs[index]}) does not follow {epochs[index - 1]}",
                    (("index", index),),
                )
            )

    if not (math.isfinite(s.dt) and s.dt > 0):
        violations.append(Violation("dt_not_positive", "dt must be a positive finite step"))
    elif epochs.size > 1:
        gaps = np.diff(epochs)
        min_gap = float(np.min(gaps))
        if min_gap > 0 and s.dt > min_gap * (1 + 1e-12):
            violations.append(Violation("dt_exceeds_epoch_gap", f"dt={s.dt} is larger than the epoch gap {min_gap}"))

    if s.mc_runs < 1:
        violations.append(Violation("mc_runs_not_positive", "mc_runs must be a positive integer"))
    if not 0 <= s.seed <= U64_MAX:
        violations.append(Violation("seed_out_of_range", "seed must be an unsigned 64-bit integer"))
    return violations


# ------------------------------------------ Scenario files ------------------------------------------

_TOP_LEVEL_KEYS = ("n", "F", "G", "Q", "x0", "P0", "dt", "seed", "mc_runs", "epochs", "sensors")
_SENSOR_KEYS = ("H", "R")
_EPOCH_KEYS = ("t0", "step", "count")


def _reject_unknown(section: typing.Mapping[str, typing.Any], allowed: typing.Sequence[str], where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ScenarioParseError(f"unknown key {key!r} in {where}", key=key)


def _require(section: typing.Mapping[str, typing.Any], keys: typing.Sequence[str], where: str) -> None:
    for key in keys:
        if key not in section:
            raise ScenarioParseError(f"missing required key {key!r} in {where}", key=key)


def _number(value: typing.Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"key {key!r} must be a number", key=key)
    return float(value)


def _integer(value: typing.Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioParseError(f"key {key!r} must be an integer", key=key)
    return value


def _matrix(value: typing.Any, key: str) -> np.ndarray:
    """
    Scalars become 1x1 matrices and a flat list becomes a single row.
    """
    try:
        array = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"key {key!r} must be a number or a rectangular array of numbers", key=key) from exc
    if array.ndim > 2:
        raise ScenarioParseError(f"key {key!r} must be at most two dimensional", key=key)
    return np.atleast_2d(array)


def _vector(value: typing.Any, key: str) -> np.ndarray:
    try:
        array = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"key {key!r} must be a number or an array of numbers", key=key) from exc
    if array.ndim > 1:
        raise ScenarioParseError(f"key {key!r} must be a vector", key=key)
    return np.atleast_1d(array)


def _epochs(value: typing.Any) -> np.ndarray:
    if isinstance(value, typing.Mapping):
        _reject_unknown(value, _EPOCH_KEYS, "epochs")
        _require(value, _EPOCH_KEYS, "epochs")
        count = _integer(value["count"], "count")
        if count < 0:
            raise ScenarioParseError("key 'count' must not be negative", key="count")
        return _number(value["t0"], "t0") + _number(value["step"], "step") * np.arange(count)
    return _vector(value, "epochs")


def parse_scenario(document: typing.Mapping[str, typing.Any]) -> Scenario:
    """
    Build a `Scenario` from an already decoded scenario document without validating
    its values.
    """
    if not isinstance(document, typing.Mapping):
        raise ScenarioParseError("a scenario document must be a JSON object")
    _reject_unknown(document, _TOP_LEVEL_KEYS, "scenario")
    _require(document, _TOP_LEVEL_KEYS, "scenario")

    n = _integer(document["n"], "n")
    F = _matrix(document["F"], "F")
    if F.shape != (n, n):
        raise ScenarioParseError(f"key 'F' must be a {n}x{n} matrix", key="F")
    state = StateModel.constant(F, _matrix(document["G"], "G"), _matrix(document["Q"], "Q"))

    raw_sensors = document["sensors"]
    if not isinstance(raw_sensors, list):
        raise ScenarioParseError("key 'sensors' must be an array", key="sensors")
    sensors = []
    for position, raw in enumerate(raw_sensors, start=1):
        if not isinstance(raw, typing.Mapping):
            raise ScenarioParseError(f"sensor {position} must be an object", key="sensors")
        _reject_unknown(raw, _SENSOR_KEYS, f"sensor {position}")
        _require(raw, _SENSOR_KEYS, f"sensor {position}")
        sensors.append(SensorModel(index=position, H=_matrix(raw["H"], "H"), R=_matrix(raw["R"], "R")))

    return Scenario(
        state=state,
        sensors=tuple(sensors),
        initial=InitialBelief(mean=_vector(document["x0"], "x0"), cov=_matrix(document["P0"], "P0")),
        epochs=_epochs(document["epochs"]),
        dt=_number(document["dt"], "dt"),
        mc_runs=_integer(document["mc_runs"], "mc_runs"),
        seed=_integer(document["seed"], "seed"),
    )


def load_scenario(path: typing.Union[str, pathlib.Path], validate: bool = True) -> Scenario:
    """
    Read and parse a JSON scenario file.  Unless `validate` is False the scenario is also
    checked and any violation raises `ScenarioValidationError`.
    """
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioIOError(f"cannot read scenario {path}: {exc.strerror or exc}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"malformed scenario {path}: {exc}") from exc
    scenario = parse_scenario(document)
    violations = validate_scenario(scenario) if validate else []
    if violations:
        raise ScenarioValidationError(violations)
    logger.info(
        "loaded scenario %s: n=%d, N=%d, %d epochs", path, scenario.n, scenario.sensor_count, scenario.epochs.size
    )
    return scenario


def _serialize_epochs(epochs: np.ndarray) -> typing.Any:
    if epochs.size >= 2:
        t0, step = float(epochs[0]), float(epochs[1] - epochs[0])
        if np.array_equal(t0 + step * np.arange(epochs.size), epochs):
            return {"t0": t0, "step": step, "count": int(epochs.size)}
    return epochs.tolist()


def serialize_scenario(s: Scenario) -> typing.Dict[str, typing.Any]:
    if not s.state.is_time_invariant:
        raise DomainError("only scenarios with a constant F can be serialized")
    assert s.state.constant_drift is not None
    return {
        "n": s.n,
        "F": s.state.constant_drift.tolist(),
        "G": s.state.G.tolist(),
        "Q": s.state.Q.tolist(),
        "x0": s.initial.mean.tolist(),
        "P0": s.initial.cov.tolist(),
        "dt": s.dt,
        "seed": s.seed,
        "mc_runs": s.mc_runs,
        "epochs": _serialize_epochs(s.epochs),
        "sensors": [{"H": sensor.H.tolist(), "R": sensor.R.tolist()} for sensor in s.sensors],
    }


def dump_scenario(s: Scenario, path: typing.Union[str, pathlib.Path]) -> None:
    path = pathlib.Path(path)
    try:
        path.write_text(json.dumps(serialize_scenario(s), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ScenarioIOError(f"cannot write scenario {path}: {exc.strerror or exc}") from exc


def expand_sensors(s: Scenario, count: int) -> Scenario:
    """
    Replicate the scenario's sensors cyclically until there are `count` of them.  Every
    replica gets its own index and therefore its own noise stream.
    """
    if count < 1:
        raise DomainError("sensor count must be positive")
    sensors = tuple(
        dataclasses.replace(s.sensors[k % len(s.sensors)], index=k + 1) for k in range(count)
    )
    return dataclasses.replace(s, sensors=sensors)
