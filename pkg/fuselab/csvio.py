"""
CSV output for plotting tools.

Every file has a header row, uses '.' as the decimal separator and '\\n' line endings, and
writes floats with 17 significant digits so they read back bit for bit.
"""
from __future__ import annotations

import csv
import logging
import pathlib
import typing

import numpy as np

from fuselab.exceptions import ScenarioIOError

if typing.TYPE_CHECKING:
    from fuselab.fusion import WeightSet
    from fuselab.simulator import MseSeries
    from fuselab.steady_state import SteadyStateReport

logger = logging.getLogger(__name__)

PathLike = typing.Union[str, pathlib.Path]


def format_value(value: typing.Any) -> str:
    """
    >>> format_value(0.1), format_value(3), format_value("ff")
    ('0.10000000000000001', '3', 'ff')
    """
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: PathLike, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
    path = pathlib.Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(value) for value in row])
    except OSError as exc:
        raise ScenarioIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    logger.info("wrote %s", path)


def ensure_directory(path: PathLike) -> pathlib.Path:
    path = pathlib.Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenarioIOError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    return path


def write_mse(out_dir: PathLike, series: MseSeries, method: str) -> pathlib.Path:
    """
    `mse_<method>.csv`: t, then one mean square error column per state component.
    """
    mse = series.mse[method]
    path = pathlib.Path(out_dir) / f"mse_{method}.csv"
    header = ["t"] + [f"x{c}" for c in range(1, mse.shape[1] + 1)]
    write_csv(path, header, ([t, *row] for t, row in zip(series.times, mse)))
    return path


def weight_columns(N: int, n: int) -> typing.List[str]:
    """
    >>> weight_columns(2, 1)
    ['w1_1_1', 'w2_1_1']
    """
    return [f"w{i}_{r}_{c}" for i in range(1, N + 1) for r in range(1, n + 1) for c in range(1, n + 1)]


def write_weights(
    out_dir: PathLike, method: str, times: np.ndarray, weightsets: typing.Sequence[WeightSet]
) -> pathlib.Path:
    """
    `weights_<method>.csv`: t, then every weight matrix flattened row-major, sensor by sensor.
    """
    first = weightsets[0].weights
    path = pathlib.Path(out_dir) / f"weights_{method}.csv"
    header = ["t"] + weight_columns(len(first), first[0].shape[0])
    rows = ([t, *np.concatenate([W.ravel() for W in ws.weights])] for t, ws in zip(times, weightsets))
    write_csv(path, header, rows)
    return path


def write_consistency(out_dir: PathLike, series: MseSeries, method: str) -> pathlib.Path:
    path = pathlib.Path(out_dir) / f"consistency_{method}.csv"
    rows = zip(series.times, series.anees[method], series.reported_traces[method], series.actual_traces[method])
    write_csv(path, ["t", "anees", "trace_reported", "trace_actual"], rows)
    return path


STEADY_STATE_FIELDS = ("q", "r1", "r2", "P11", "P22", "P12", "C1", "C2", "W1", "W2", "P_FF", "P_CI")


def write_steady_state(path: PathLike, report: SteadyStateReport, excess: float) -> pathlib.Path:
    path = pathlib.Path(path)
    row = [getattr(report, field) for field in STEADY_STATE_FIELDS] + [excess]
    write_csv(path, [*STEADY_STATE_FIELDS, "ci_relative_excess"], [row])
    return path
