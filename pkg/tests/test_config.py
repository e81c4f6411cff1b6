import pytest

from fuselab.config import THREADS_ENV, FilterConfig, SimulationConfig, workers_from_env
from fuselab.exceptions import DomainError


@pytest.mark.parametrize("environ, expected", [({}, 1), ({THREADS_ENV: "6"}, 6), ({THREADS_ENV: "0"}, 1)])
def test_workers_from_env(environ, expected):
    assert workers_from_env(environ) == expected


def test_from_env_reads_the_thread_cap(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert SimulationConfig.from_env().workers == 3
    assert SimulationConfig.from_env(workers=2).workers == 2


def test_defaults():
    config = SimulationConfig()
    assert (config.truth_method, config.chunk_size, config.workers) == ("euler-maruyama", 128, 1)
    assert not FilterConfig().joseph_form


def test_chunk_size_must_be_positive():
    with pytest.raises(DomainError):
        SimulationConfig(chunk_size=0)
