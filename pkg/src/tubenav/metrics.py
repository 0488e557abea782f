"""Evaluation quantities: dispersion, safety margins, throughput, and the
regulation-term norm audit."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import VirtualTube
from .state import SwarmState

COND23_TOL = 1e-12


@dataclass
class MetricsRecord:
    time: float
    min_pairwise_distance: float   # m; NaN with < 2 active robots
    min_boundary_distance: float   # m; NaN with no active robots
    amd: float                     # m, average nearest-neighbor distance
    exited_count: int
    density_error_l2: float        # 1/m; NaN with no active robots
    condition23_ok: bool
    max_command_norm: float        # m/s


def _pairwise_distances(pts):
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def min_pairwise_from_positions(pts):
    d = _pairwise_distances(pts)
    np.fill_diagonal(d, np.inf)
    return float(np.min(d))


def amd_from_positions(pts):
    d = _pairwise_distances(pts)
    np.fill_diagonal(d, np.inf)
    return float(np.mean(np.min(d, axis=1)))


def amd(swarm: SwarmState):
    """Average over active robots of the distance to their nearest active
    neighbor; the swarm's dispersion measure."""
    pts = swarm.active_positions()
    if len(pts) < 2:
        raise ValueError("average minimum distance needs at least two active robots")
    return amd_from_positions(pts)


def min_pairwise_distance(swarm: SwarmState):
    pts = swarm.active_positions()
    if len(pts) < 2:
        raise ValueError("pairwise distance needs at least two active robots")
    return min_pairwise_from_positions(pts)


def min_boundary_distance(swarm: SwarmState, tube: VirtualTube):
    """Smallest lateral boundary distance among active robots."""
    pts = swarm.active_positions()
    if len(pts) == 0:
        raise ValueError("boundary distance needs at least one active robot")
    d, _ = tube.boundary_distance_many(pts)
    return float(np.min(d))


def throughput(log, t):
    """Number of robots that exited at or before time t."""
    if not log.records:
        raise ValueError("empty log")
    t_last = log.records[-1].time
    if t < 0 or t > t_last + 1e-12:
        raise ValueError(f"time {t} outside the log range [0, {t_last}]")
    return sum(1 for exit_t in log.exit_times.values() if exit_t <= t + 1e-12)


@dataclass
class Condition23Report:
    ok: bool
    violations: list  # (time, robot_id, |u4|, |u123|)


def audit_condition23(log, tol=COND23_TOL) -> Condition23Report:
    """Re-verify from the logged command components that the regulation term
    never exceeded the safe-navigation term in norm."""
    violations = []
    for rec in log.records:
        u123 = rec.u1 + rec.u2 + rec.u3
        n123 = np.linalg.norm(u123, axis=1)
        n4 = np.linalg.norm(rec.u4, axis=1)
        bad = np.flatnonzero(rec.active & (n4 > n123 + tol))
        for i in bad:
            violations.append((rec.time, int(i), float(n4[i]), float(n123[i])))
    return Condition23Report(ok=not violations, violations=violations)
