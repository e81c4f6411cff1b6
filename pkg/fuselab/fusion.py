"""
Combining N local estimates of the same state into one.

Both rules produce a weighted sum x = Σ W_i x_i with n×n matrix weights summing to the
identity, so the fused estimate is unbiased whenever the local ones are:

    * `ff` - the optimal matrix weights C = (Dᵀ P̂⁻¹ D)⁻¹ Dᵀ P̂⁻¹, D = [I ... I]ᵀ.  They need the
      full joint error covariance P̂, cross-covariances included.
    * `ci` - covariance intersection.  Weights W_i = M ω_i P_i⁻¹ with M = (Σ ω_i P_i⁻¹)⁻¹ and
      ω_i proportional to det(P_i⁻¹).  Only the local covariances are needed.

Whatever produced the weights, `actual_fused_covariance` evaluates the true error covariance
Σ W_i P^(ij) W_jᵀ of the fused estimate against the exact joint covariance.

Rules register themselves by name when subclassed, so `get_fusion_rule("ci")` finds them
without a central lookup table.
"""
from __future__ import annotations

import dataclasses
import logging
import typing
import warnings
from abc import ABC, abstractmethod

import numpy as np
from scipy import linalg

from fuselab.exceptions import DomainError, FusionSingularityError
from fuselab.linalg import min_eigenvalue, spd_factor, spd_inverse, spd_logdet, symmetrize, symmetry_tolerance

logger = logging.getLogger(__name__)

UNBIASED_ATOL = 1e-8
JITTER_SCALE = 1e-9


@dataclasses.dataclass(frozen=True)
class WeightSet:
    """
    :param method: Registry name of the rule that produced the weights.
    :param weights: N matrices of shape n×n summing to the identity.
    :param reported_cov: What the rule claims the fused covariance is (FF: Σ C P C ᵀ, CI: M).
    :param omegas: CI's scalar mixing coefficients, None for FF.
    :param jitter: Tikhonov shift that had to be added to P̂ (0.0 when none).
    """

    method: str
    weights: typing.Tuple[np.ndarray, ...]
    reported_cov: np.ndarray
    omegas: typing.Optional[np.ndarray] = None
    jitter: float = 0.0

    @property
    def stacked(self) -> np.ndarray:
        return np.hstack(self.weights)


@dataclasses.dataclass(frozen=True)
class FusionResult:
    """
    A fused estimate.  `actual_cov` is the weights' true error covariance against the exact
    joint covariance; it is None when no joint covariance was available (CI on its own).
    """

    t: float
    mean: np.ndarray
    weightset: WeightSet
    actual_cov: typing.Optional[np.ndarray] = None


class _NotSolvable(Exception):
    pass


def _split(stacked: np.ndarray, n: int, N: int) -> typing.Tuple[np.ndarray, ...]:
    return tuple(np.array(stacked[:, i * n : (i + 1) * n]) for i in range(N))


def _solve_sym(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            x = linalg.solve(a, b, assume_a="sym")
        except (linalg.LinAlgError, linalg.LinAlgWarning) as exc:
            raise _NotSolvable(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise _NotSolvable("non-finite solution")
    return x


def _optimal_weights(joint: np.ndarray, n: int, N: int) -> np.ndarray:
    if not np.all(np.isfinite(joint)):
        raise _NotSolvable("joint covariance is not finite")
    if min_eigenvalue(joint) < -symmetry_tolerance(joint):
        raise _NotSolvable("joint covariance is indefinite")
    D = np.tile(np.eye(n), (N, 1))
    X = _solve_sym(joint, D)
    A = symmetrize(D.T @ X)
    C = _solve_sym(A, X.T)
    if np.max(np.abs(C @ D - np.eye(n))) > UNBIASED_ATOL:
        raise _NotSolvable("weights violate the unbiasedness constraint")
    return C


def ff_weights(joint_cov: np.ndarray, n: int, N: int) -> WeightSet:
    """
    Optimal matrix weights for N local estimates with joint error covariance `joint_cov`.
    A singular or numerically indefinite P̂ is retried once with a small Tikhonov shift.

    >>> ws = ff_weights(np.eye(2), 1, 2)
    >>> [float(w[0, 0]) for w in ws.weights]
    [0.5, 0.5]
    """
    joint = symmetrize(np.atleast_2d(np.asarray(joint_cov, dtype=float)))
    if joint.shape != (n * N, n * N):
        raise DomainError(f"joint covariance has shape {joint.shape}, expected {(n * N, n * N)}")
    jitter = 0.0
    try:
        C = _optimal_weights(joint, n, N)
    except _NotSolvable as first:
        jitter = JITTER_SCALE * (1.0 + float(np.trace(joint)) / (n * N))
        logger.warning("joint covariance not solvable (%s); retrying with jitter %.3g", first, jitter)
        try:
            C = _optimal_weights(joint + jitter * np.eye(n * N), n, N)
        except _NotSolvable as second:
            raise FusionSingularityError(f"optimal fusion weights undefined: {second}") from second
    return WeightSet(method="ff", weights=_split(C, n, N), reported_cov=symmetrize(C @ joint @ C.T), jitter=jitter)


def ci_weights(local_covs: typing.Sequence[np.ndarray]) -> WeightSet:
    """
    Covariance intersection weights.  ω comes from log-determinants so it cannot overflow.

    >>> ws = ci_weights([np.eye(2)] * 2)
    >>> np.allclose(ws.weights[0], 0.5 * np.eye(2)), np.allclose(ws.reported_cov, np.eye(2))
    (True, True)
    """
    if not local_covs:
        raise DomainError("at least one local covariance is required")
    factors = [spd_factor(P, sensor=i) for i, P in enumerate(local_covs, start=1)]
    exponents = -np.array([spd_logdet(f) for f in factors])
    omegas = np.exp(exponents - np.max(exponents))
    omegas /= np.sum(omegas)
    informations = [omega * spd_inverse(f) for omega, f in zip(omegas, factors)]
    M = spd_inverse(spd_factor(sum(informations)))
    return WeightSet(
        method="ci",
        weights=tuple(M @ info for info in informations),
        reported_cov=M,
        omegas=omegas,
    )


def fuse(weightset: WeightSet, estimates: typing.Sequence[np.ndarray]) -> np.ndarray:
    """
    Σ W_i x_i.  Estimates may be n-vectors or n×R stacks of Monte Carlo runs.

    >>> fuse(ci_weights([np.eye(1)] * 2), [np.array([1.0]), np.array([3.0])])
    array([2.])
    """
    if len(estimates) != len(weightset.weights):
        raise DomainError(f"{len(weightset.weights)} weights for {len(estimates)} estimates")
    return sum(W @ np.asarray(x, dtype=float) for W, x in zip(weightset.weights, estimates))


def actual_fused_covariance(weightset: WeightSet, joint_cov: np.ndarray) -> np.ndarray:
    W = weightset.stacked
    joint = np.atleast_2d(joint_cov)
    if joint.shape != (W.shape[1], W.shape[1]):
        raise DomainError(f"joint covariance has shape {joint.shape}, expected {(W.shape[1], W.shape[1])}")
    return symmetrize(W @ joint @ W.T)


# ------------------------------------------ Rule registry ------------------------------------------


class FusionRule(ABC):
    """
    A way of turning local covariances (and, if it needs them, the exact joint covariance)
    into weights.  Subclasses that name a `method` are recorded in the registry.
    """

    registry: typing.Dict[str, typing.Type[FusionRule]] = {}
    name: str = ""
    needs_cross_covariance: bool = False

    def __init_subclass__(cls, method: typing.Optional[str] = None, **kwargs: typing.Any) -> None:
        super().__init_subclass__(**kwargs)
        if method is not None:
            cls.name = method.lower()
            cls.registry[cls.name] = cls

    @abstractmethod
    def weights(
        self, local_covs: typing.Sequence[np.ndarray], joint_cov: typing.Optional[np.ndarray] = None
    ) -> WeightSet:
        raise NotImplementedError


class OptimalFusion(FusionRule, method="ff"):
    needs_cross_covariance = True

    def weights(
        self, local_covs: typing.Sequence[np.ndarray], joint_cov: typing.Optional[np.ndarray] = None
    ) -> WeightSet:
        if joint_cov is None:
            raise DomainError("optimal fusion needs the joint covariance including cross-covariances")
        n = np.atleast_2d(local_covs[0]).shape[0]
        return ff_weights(joint_cov, n, len(local_covs))


class CovarianceIntersection(FusionRule, method="ci"):
    def weights(
        self, local_covs: typing.Sequence[np.ndarray], joint_cov: typing.Optional[np.ndarray] = None
    ) -> WeightSet:
        return ci_weights(local_covs)


def get_fusion_rule(method: str) -> FusionRule:
    try:
        return FusionRule.registry[method.lower()]()
    except KeyError:
        known = ", ".join(sorted(FusionRule.registry))
        raise DomainError(f"unknown fusion method {method!r}; known: {known}") from None


def fuse_beliefs(
    rule: FusionRule,
    t: float,
    means: typing.Sequence[np.ndarray],
    local_covs: typing.Sequence[np.ndarray],
    joint_cov: typing.Optional[np.ndarray] = None,
) -> FusionResult:
    weightset = rule.weights(local_covs, joint_cov)
    actual = actual_fused_covariance(weightset, joint_cov) if joint_cov is not None else None
    return FusionResult(t=t, mean=fuse(weightset, means), weightset=weightset, actual_cov=actual)
