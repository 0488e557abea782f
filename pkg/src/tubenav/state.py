"""Swarm state containers.

Kept in a leaf module so geometry, density, controller and engine code can
all depend on them without import cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RobotState:
    id: int
    position: np.ndarray  # (2,) m
    velocity: np.ndarray  # (2,) m/s
    active: bool = True
    exit_time: float | None = None

    def copy(self) -> "RobotState":
        return RobotState(
            id=self.id,
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            active=self.active,
            exit_time=self.exit_time,
        )


@dataclass
class SwarmState:
    """Timestamped set of robot states.

    Robot entries are never removed; exited robots are flagged inactive and
    excluded from density samples, neighbor sets and metrics.
    """

    time: float
    robots: list[RobotState] = field(default_factory=list)

    def copy(self) -> "SwarmState":
        return SwarmState(time=self.time, robots=[r.copy() for r in self.robots])

    def active_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.robots) if r.active]

    def active_positions(self) -> np.ndarray:
        """Positions of active robots, shape (M, 2)."""
        pts = [r.position for r in self.robots if r.active]
        if not pts:
            return np.zeros((0, 2))
        return np.array(pts, dtype=float)

    def positions(self) -> np.ndarray:
        """Positions of all robots (active or not), shape (N, 2)."""
        if not self.robots:
            return np.zeros((0, 2))
        return np.array([r.position for r in self.robots], dtype=float)


def make_swarm(positions, time=0.0) -> SwarmState:
    """Build a swarm at rest from an (N, 2) position array."""
    positions = np.asarray(positions, dtype=float)
    robots = [
        RobotState(id=i, position=positions[i].copy(), velocity=np.zeros(2))
        for i in range(len(positions))
    ]
    return SwarmState(time=float(time), robots=robots)
