"""
Closed-form steady state of the scalar two-sensor system

    dx/dt = -x + w,  w ~ (0, q);    y_i = x + v_i,  v_i ~ N(0, r_i),  i = 1, 2

used as an analytic ground truth for both fusion rules.  With P_i = q r_i / (q + 2 r_i) and
P_12 = 2 r_1 r_2 q / ((q + 2 r_1)(q + 2 r_2)) the fusion weights and fused variances follow in
closed form.  These are the values the local filters reach when epochs are far enough apart
for the prior to relax to the stationary variance q/2 before every measurement.

This module deliberately shares no code with the filters or the fusion rules: it is the
independent second route to the same numbers.
"""
from __future__ import annotations

import dataclasses
import math

from fuselab.exceptions import DomainError


@dataclasses.dataclass(frozen=True)
class SteadyStateReport:
    q: float
    r1: float
    r2: float
    P11: float
    P22: float
    P12: float
    C1: float
    C2: float
    W1: float
    W2: float
    P_FF: float
    P_CI: float


def _require_positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive")
    return value


def steady_state(q: float, r1: float, r2: float) -> SteadyStateReport:
    """
    >>> report = steady_state(1, 5, 2)
    >>> round(report.P_FF, 4), round(report.P_CI, 4)
    (0.3896, 0.3925)
    """
    q, r1, r2 = (_require_positive(name, value) for name, value in (("q", q), ("r1", r1), ("r2", r2)))

    P11 = q * r1 / (q + 2 * r1)
    P22 = q * r2 / (q + 2 * r2)
    P12 = 2 * r1 * r2 * q / ((q + 2 * r1) * (q + 2 * r2))

    denominator = P11 + P22 - 2 * P12
    C1 = (P22 - P12) / denominator
    C2 = (P11 - P12) / denominator
    W1 = P22**2 / (P11**2 + P22**2)
    W2 = P11**2 / (P11**2 + P22**2)

    P_FF = C1 * C1 * P11 + 2 * C1 * C2 * P12 + C2 * C2 * P22
    P_CI = W1 * W1 * P11 + 2 * W1 * W2 * P12 + W2 * W2 * P22
    return SteadyStateReport(q, r1, r2, P11, P22, P12, C1, C2, W1, W2, P_FF, P_CI)


def ci_relative_excess(report: SteadyStateReport) -> float:
    """
    How much larger CI's fused variance is than the optimum, relative to the optimum.
    """
    return (report.P_CI - report.P_FF) / report.P_FF
