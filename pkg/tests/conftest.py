import json
import typing

import numpy as np
import pytest

from fuselab.cli import bundled_scenario
from fuselab.model import InitialBelief, Scenario, SensorModel, StateModel, load_scenario


@pytest.fixture
def oscillator() -> Scenario:
    return load_scenario(bundled_scenario("oscillator"))


@pytest.fixture
def scalar_pair() -> Scenario:
    return load_scenario(bundled_scenario("scalar_two_sensor"))


@pytest.fixture
def oscillator_document() -> typing.Dict[str, typing.Any]:
    return json.loads(bundled_scenario("oscillator").read_text(encoding="utf-8"))


@pytest.fixture
def write_scenario(tmp_path):
    def write(document: typing.Any, name: str = "scenario.json"):
        path = tmp_path / name
        path.write_text(document if isinstance(document, str) else json.dumps(document), encoding="utf-8")
        return path

    return write


@pytest.fixture
def make_scalar():
    """
    The scalar system dx/dt = -x + w observed by one sensor per entry of `r`.
    """

    def make(
        gap: float = 0.1,
        count: int = 51,
        r: typing.Sequence[float] = (5.0, 2.0),
        q: float = 1.0,
        P0: float = 0.5,
        dt: float = 0.01,
        mc_runs: int = 1000,
        seed: int = 1,
    ) -> Scenario:
        return Scenario(
            state=StateModel.constant([[-1.0]], [[1.0]], [[q]]),
            sensors=tuple(SensorModel(index=i, H=[[1.0]], R=[[value]]) for i, value in enumerate(r, start=1)),
            initial=InitialBelief(mean=[0.0], cov=[[P0]]),
            epochs=gap * np.arange(count),
            dt=dt,
            mc_runs=mc_runs,
            seed=seed,
        )

    return make
