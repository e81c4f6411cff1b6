"""
Exact cross-covariances between the estimation errors of every pair of local filters.

Optimal matrix-weight fusion needs the full joint covariance of the local errors.  Its
diagonal blocks are the local filters' own covariances; the off-diagonal blocks P^(ij)
follow the same Lyapunov ODE between epochs and, at an epoch, are corrected on both
sides with the gains the local filters already computed:

    P^(ij) <- (I - K_i H_i) P^(ij) (I - K_j H_j)ᵀ

Only pairs with i < j are stored; P^(ji) is the transpose.  Cross blocks are not symmetric
and are never symmetrized; symmetry is imposed on the assembled joint matrix only.
"""
from __future__ import annotations

import dataclasses
import itertools
import typing

import numpy as np

from fuselab.exceptions import DomainError
from fuselab.instrumentation import CROSS
from fuselab.integrator import MomentKind, MomentOde, propagate_interval
from fuselab.linalg import symmetrize
from fuselab.model import Scenario, StateModel

Pair = typing.Tuple[int, int]


@dataclasses.dataclass(frozen=True)
class CrossCovBank:
    """
    All P^(ij), i < j (1-based sensor indices), at one time.
    """

    t: float
    N: int
    blocks: typing.Mapping[Pair, np.ndarray]

    def block(self, i: int, j: int) -> np.ndarray:
        if i == j:
            raise DomainError("diagonal blocks belong to the local filters, not the cross bank")
        if i < j:
            return self.blocks[(i, j)]
        return self.blocks[(j, i)].T


def sensor_pairs(N: int) -> typing.List[Pair]:
    """
    >>> sensor_pairs(3)
    [(1, 2), (1, 3), (2, 3)]
    """
    return list(itertools.combinations(range(1, N + 1), 2))


def cross_measurement_update(
    P_ij_pred: np.ndarray, K_i: np.ndarray, H_i: np.ndarray, K_j: np.ndarray, H_j: np.ndarray
) -> np.ndarray:
    """
    >>> cross_measurement_update(np.array([[0.5]]), np.array([[0.5]]), np.array([[1.0]]),
    ...                          np.array([[0.75]]), np.array([[1.0]]))
    array([[0.0625]])
    """
    P_ij_pred = np.atleast_2d(P_ij_pred)
    n = P_ij_pred.shape[0]
    KH_i = np.atleast_2d(K_i) @ np.atleast_2d(H_i)
    KH_j = np.atleast_2d(K_j) @ np.atleast_2d(H_j)
    if KH_i.shape != (n, n) or KH_j.shape != (n, n):
        raise DomainError("gain / observation dimensions do not match the cross-covariance")
    return (np.eye(n) - KH_i) @ P_ij_pred @ (np.eye(n) - KH_j).T


def cross_time_update(model: StateModel, P_ij: np.ndarray, t0: float, t1: float, dt: float) -> np.ndarray:
    ode = MomentOde(model, MomentKind.LYAPUNOV)
    return propagate_interval(ode, P_ij, t0, t1, dt, symmetrize=False, topic=CROSS)


def run_cross_bank(
    scenario: Scenario, local_gains: typing.Sequence[typing.Sequence[np.ndarray]]
) -> typing.List[CrossCovBank]:
    """
    Propagate every pairwise cross-covariance over the scenario's epochs.
    :param local_gains: `local_gains[k][i]` is the gain sensor i + 1 used at epoch k.
    :return: One bank per epoch, holding the post-update cross-covariances.
    """
    epochs = scenario.epochs
    N = scenario.sensor_count
    if len(local_gains) != epochs.size or any(len(gains) != N for gains in local_gains):
        raise DomainError("a gain is required for every sensor at every epoch")
    pairs = sensor_pairs(N)
    current = {pair: np.array(scenario.initial.cov) for pair in pairs}
    banks: typing.List[CrossCovBank] = []
    for k, t in enumerate(epochs):
        updated = {}
        for i, j in pairs:
            P_ij = current[(i, j)]
            if k > 0:
                P_ij = cross_time_update(scenario.state, P_ij, float(epochs[k - 1]), float(t), scenario.dt)
            sensor_i, sensor_j = scenario.sensors[i - 1], scenario.sensors[j - 1]
            updated[(i, j)] = cross_measurement_update(
                P_ij, local_gains[k][i - 1], sensor_i.H, local_gains[k][j - 1], sensor_j.H
            )
        current = updated
        banks.append(CrossCovBank(t=float(t), N=N, blocks=updated))
    return banks


def assemble_joint_covariance(local_covs: typing.Sequence[np.ndarray], bank: CrossCovBank) -> np.ndarray:
    """
    The symmetrized (nN)x(nN) joint error covariance [P^(ij)].
    """
    N = len(local_covs)
    if bank.N != N:
        raise DomainError(f"bank holds {bank.N} sensors, got {N} local covariances")
    n = np.atleast_2d(local_covs[0]).shape[0]
    joint = np.zeros((n * N, n * N))
    for i in range(1, N + 1):
        for j in range(1, N + 1):
            block = np.atleast_2d(local_covs[i - 1]) if i == j else bank.block(i, j)
            joint[(i - 1) * n : i * n, (j - 1) * n : j * n] = block
    return symmetrize(joint)
