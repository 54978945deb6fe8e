"""Circular microphone array geometry and its placement in world coordinates.

The array is a center microphone (index 0) plus a uniform horizontal ring.
Positions are immutable after construction; the UAV pose is a pure
translation (the array plane stays horizontal).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientMics, NonPositiveRadius


@dataclass(frozen=True)
class MicArray:
    """Body-frame microphone layout: mic 0 at the origin, M-1 mics on a ring.

    Attributes:
        count: total number of microphones M (>= 4).
        radius: ring radius in meters.
        positions: (M, 3) body-frame coordinates in meters; row 0 is the center.
    """

    count: int
    radius: float
    positions: np.ndarray = field(repr=False)

    @property
    def ring_offsets(self) -> np.ndarray:
        """(M-1, 3) offsets of the ring mics relative to the center mic."""
        return self.positions[1:] - self.positions[0]


@dataclass(frozen=True)
class PosedArray:
    """A MicArray translated to a UAV position in world coordinates."""

    array: MicArray
    uav_position: np.ndarray = field(repr=False)

    @property
    def world_positions(self) -> np.ndarray:
        """(M, 3) world coordinates of every microphone."""
        return self.uav_position[None, :] + self.array.positions


def build_circular_array(count: int, radius: float) -> MicArray:
    """Build the center-plus-ring array.

    Ring mic m (m >= 1) sits at angle 2*pi*(m-1)/(count-1) from the +x axis,
    at `radius` meters, z = 0.

    Raises:
        InsufficientMics: count < 4 (the planar solver needs 3 ring mics).
        NonPositiveRadius: radius <= 0.
    """
    if count < 4:
        raise InsufficientMics(f"need at least 4 microphones, got {count}")
    if radius <= 0:
        raise NonPositiveRadius(f"ring radius must be > 0, got {radius}")
    angles = 2.0 * np.pi * np.arange(count - 1) / (count - 1)
    positions = np.zeros((count, 3))
    positions[1:, 0] = radius * np.cos(angles)
    positions[1:, 1] = radius * np.sin(angles)
    return MicArray(count=count, radius=float(radius), positions=positions)


def pose_at(array: MicArray, uav_position) -> PosedArray:
    """Place the array at a world position (translation only, no rotation)."""
    p = np.asarray(uav_position, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError(f"uav_position must be a finite 3-vector, got {uav_position!r}")
    return PosedArray(array=array, uav_position=p)
