"""Multi-observation position fix from bearing rays.

Each observation is a (UAV position, direction, weight) triple; the fused
position minimizes the weighted squared point-to-line distance over all
rays, solved in closed form through the 3x3 normal system built from
orthogonal projectors I - u u^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, TooFewObservations
from .localization import gcc_phat
from .scene import MultiChannelClip

_EIG_RATIO = 1e-8


@dataclass(frozen=True)
class Observation:
    """One hover's bearing toward the source."""

    position: np.ndarray = field(repr=False)   # UAV position (3,)
    direction: np.ndarray = field(repr=False)  # unit vector (3,)
    weight: float = 1.0
    timestamp: float = 0.0

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("direction must be unit-norm")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")

    def projector(self) -> np.ndarray:
        u = self.direction
        return np.eye(3) - np.outer(u, u)


@dataclass(frozen=True)
class FusedEstimate:
    """Weighted least-squares cross-point of the observation rays."""

    position: np.ndarray = field(repr=False)
    condition: float
    n_observations: int
    above_uav: bool = False  # diagnostic: fused point above every hover


def observation_weight(clip: MultiChannelClip, max_lag: float | None = None) -> float:
    """Mean GCC-PHAT peak magnitude of the ring channels against channel 0.

    Coherent multi-channel content scores near 1, independent noise near 0.
    """
    if max_lag is None:
        max_lag = (clip.n_samples // 2 - 1) / clip.fs
    ref = clip.channel(0)
    peaks = [gcc_phat(clip.channel(m), ref, max_lag)[1]
             for m in range(1, clip.n_channels)]
    return float(np.mean(peaks))


def fuse(observations) -> FusedEstimate:
    """Solve for the point minimizing sum_k w_k ||Proj_k (s - p_k)||^2.

    Raises:
        TooFewObservations: fewer than two rays.
        DegenerateGeometry: rays near-parallel (or no weight), so the
            normal matrix is numerically singular.
    """
    obs = list(observations)
    if len(obs) < 2:
        raise TooFewObservations(f"need >= 2 observations, got {len(obs)}")
    total_weight = sum(o.weight for o in obs)
    if total_weight <= 0:
        raise DegenerateGeometry("all observation weights are zero")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for o in obs:
        proj = o.weight * o.projector()
        a += proj
        b += proj @ o.position
    eigvals = np.linalg.eigvalsh(a)
    if eigvals[0] < _EIG_RATIO * eigvals[-1]:
        raise DegenerateGeometry(
            f"normal matrix nearly singular (eig ratio {eigvals[0] / eigvals[-1]:.2e})")
    position = np.linalg.solve(a, b)
    max_z = max(o.position[2] for o in obs)
    return FusedEstimate(position=position,
                         condition=float(eigvals[-1] / eigvals[0]),
                         n_observations=len(obs),
                         above_uav=bool(position[2] > max_z))
