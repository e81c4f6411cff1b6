"""
Multisensor fusion filtering for linear continuous-time systems observed by discrete-time sensors.
"""
from fuselab.exceptions import FuselabError
from fuselab.fusion import ci_weights, ff_weights, fuse, get_fusion_rule
from fuselab.model import Scenario, load_scenario, validate_scenario
from fuselab.steady_state import steady_state

__version__ = "0.1.0"

__all__ = [
    "FuselabError",
    "Scenario",
    "ci_weights",
    "ff_weights",
    "fuse",
    "get_fusion_rule",
    "load_scenario",
    "steady_state",
    "validate_scenario",
]
