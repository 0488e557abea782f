"""Per-robot saturated velocity command.

The command composes four terms:

  u1  constant-speed approach along the spine tangent (with an optional
      distance-scheduled variant that decays near the end of the extended
      spine),
  u2  inter-robot repulsion from a rational barrier active on the band
      (2 r_s, r_s + r_a],
  u3  tube keeping, the same barrier shape on boundary distance over
      (r_s, r_s + r_t],
  u4  density-feedback regulation, rescaled pointwise so it never exceeds
      the safe-navigation term in norm,

then saturates the sum at v_max.  The baseline mode drops u4 and is used as
the comparison arm in paired runs.

Barriers are ((outer - d)/(d - inner))^2 on (inner, outer]: zero value and
zero slope at the outer edge, unbounded at the inner edge, so repulsion
dominates any bounded term before the forbidden distance is reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import DensityView, DesiredDensity
from .errors import OutsideTubeError, SafetyViolation
from .geometry import VirtualTube
from .state import SwarmState


@dataclass
class ControllerParams:
    k1: float = 1.0            # m/s, approach speed
    k2: float = 0.02           # robot-avoidance gain
    k3: float = 0.02           # tube-keeping gain
    v_max: float = 2.0         # m/s, saturation speed
    r_s: float = 0.5           # m, safety radius
    r_a: float = 0.8           # m, avoidance radius (> r_s)
    r_t: float = 0.3           # m, tube-keeping activation margin
    eta_min: float = 1.0       # 1/s, approach scaling lower bound
    eta_max: float = 1.0       # 1/s, approach scaling upper bound
    alpha0: float = 1.0        # m^2/s, nominal diffusion coefficient
    h: float | None = None     # m, KDE bandwidth; None = rule of thumb
    rho_floor: float = 1e-6    # 1/m^2, density positivity floor
    u1_mode: str = "modified"  # "modified" (constant speed) | "original"

    def validate(self):
        problems = []
        if not (self.r_s > 0):
            problems.append("r_s must be positive")
        if not (self.r_a > self.r_s):
            problems.append("r_a must exceed r_s")
        if not (self.k1 > 0):
            problems.append("k1 must be positive")
        if not (self.v_max >= self.k1):
            problems.append("v_max must be at least k1")
        if not (self.k2 > 0 and self.k3 > 0):
            problems.append("k2 and k3 must be positive")
        if self.alpha0 < 0:
            # zero switches regulation off entirely (degenerate but legal)
            problems.append("alpha0 must be nonnegative")
        if not (0 < self.eta_min <= self.eta_max):
            problems.append("need 0 < eta_min <= eta_max")
        if not (self.r_t > 0):
            problems.append("r_t must be positive")
        if self.h is not None and not (self.h > 0):
            problems.append("bandwidth must be positive when given")
        if not (self.rho_floor > 0):
            problems.append("rho_floor must be positive")
        if self.u1_mode not in ("modified", "original"):
            problems.append("u1_mode must be 'modified' or 'original'")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def avoidance_reach(self):
        """Neighbor-set radius: pairs farther than this never interact."""
        return self.r_s + self.r_a


@dataclass
class VelocityCommand:
    v: np.ndarray        # applied velocity, norm <= v_max
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    u4: np.ndarray       # after the norm cap; zero in baseline mode
    kappa_m: float       # saturation factor in (0, 1]

    def u123(self):
        return self.u1 + self.u2 + self.u3


def _barrier_slope(d, inner, outer):
    """d/dd of ((outer - d)/(d - inner))^2 on (inner, outer]; 0 above outer.

    Negative on the active band (the barrier grows as d shrinks), diverging
    to -inf as d -> inner+.
    """
    if d >= outer:
        return 0.0
    return -2.0 * (outer - d) * (outer - inner) / (d - inner) ** 3


# ---------------------------------------------------------------------------
# individual terms
# ---------------------------------------------------------------------------

def approach_at_arclength(tube: VirtualTube, params: ControllerParams, l):
    """Approach velocity as a function of arc length.

    The modified mode moves at constant speed k1 along the tangent.  The
    original mode scales with remaining distance to the end of the extended
    spine and saturates at k1; inside the tube proper (l <= L) a valid
    extension makes the two modes coincide.  Past the physical end the
    tangent continues straight.
    """
    L = tube.length
    if l <= L:
        _, t, _ = tube.curve_frame(l)
    else:
        _, t, _ = tube.curve_frame(L)
    if params.u1_mode == "modified" or tube.closed:
        return params.k1 * t
    l_end = tube.extension_length if tube.extension_length is not None else L + params.k1 / params.eta_min
    speed = max(l_end - l, 0.0) * params.eta_min
    return min(speed, params.k1) * t


def line_approach(tube: VirtualTube, params: ControllerParams, p, seed_l=None):
    """Approach term at an in-tube point."""
    if seed_l is not None:
        pr, inside = tube.locate(p, seed_l=seed_l)
        if not inside:
            raise OutsideTubeError("approach term queried outside the tube")
        l = pr.l
    else:
        l = tube.to_curvilinear(p).l
    return approach_at_arclength(tube, params, l)


def robot_avoidance(params: ControllerParams, i: int, swarm: SwarmState):
    """Repulsion from all neighbors within r_s + r_a of robot i."""
    robot = swarm.robots[i]
    if not robot.active:
        raise ValueError(f"robot {i} is not active")
    positions = [(j, r.position) for j, r in enumerate(swarm.robots) if r.active and j != i]
    if not positions:
        return np.zeros(2)
    others = np.array([p for _, p in positions])
    ids = [j for j, _ in positions]
    return _avoidance_from_neighbors(params, robot.position, others, i, ids, swarm.time)


def _avoidance_from_neighbors(params, p, others, i=None, ids=None, time=None):
    rel = p[None, :] - others
    dists = np.hypot(rel[:, 0], rel[:, 1])
    reach = params.avoidance_reach
    u2 = np.zeros(2)
    for k in range(len(others)):
        d = float(dists[k])
        if d > reach:
            continue
        if d <= 2.0 * params.r_s:
            raise SafetyViolation(
                f"robots {i} and {ids[k] if ids else '?'} at distance {d:.6f}"
                f" <= 2 r_s = {2 * params.r_s}",
                kind="robot-robot",
                details={"i": i, "j": ids[k] if ids else None, "distance": d, "time": time},
            )
        slope = _barrier_slope(d, 2.0 * params.r_s, reach)
        u2 += (-params.k2 * slope / d) * rel[k]
    return u2


def avoidance_batch(params: ControllerParams, positions, ids=None, time=None):
    """Repulsion terms for a whole snapshot at once, shape (M, 2).

    One pairwise-distance pass shared by every robot; raises on the first
    pair at or below the forbidden distance.
    """
    pts = np.asarray(positions, dtype=float)
    m = len(pts)
    if m <= 1:
        return np.zeros((m, 2))
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dy = pts[:, 1][:, None] - pts[:, 1][None, :]
    d = np.sqrt(dx * dx + dy * dy)
    np.fill_diagonal(d, np.inf)
    dmin = float(np.min(d))
    if dmin <= 2.0 * params.r_s:
        a, b = np.unravel_index(int(np.argmin(d)), d.shape)
        ia = ids[a] if ids else int(a)
        ib = ids[b] if ids else int(b)
        raise SafetyViolation(
            f"robots {ia} and {ib} at distance {dmin:.6f} <= 2 r_s = {2 * params.r_s}",
            kind="robot-robot",
            details={"i": ia, "j": ib, "distance": dmin, "time": time},
        )
    inner = 2.0 * params.r_s
    outer = params.avoidance_reach
    active = d <= outer
    gap = np.where(active, d - inner, 1.0)
    slope = np.where(active, -2.0 * (outer - d) * (outer - inner) / gap**3, 0.0)
    w = np.where(active, -params.k2 * slope / d, 0.0)
    return np.stack([(w * dx).sum(axis=1), (w * dy).sum(axis=1)], axis=1)


def tube_keeping(tube: VirtualTube, params: ControllerParams, p, boundary=None):
    """Inward push when the lateral boundary is closer than r_s + r_t."""
    if boundary is None:
        b, direction = tube.boundary_distance(p)
    else:
        b, direction = boundary
    if b <= params.r_s:
        raise SafetyViolation(
            f"boundary distance {b:.6f} <= r_s = {params.r_s}",
            kind="boundary",
            details={"distance": float(b)},
        )
    slope = _barrier_slope(b, params.r_s, params.r_s + params.r_t)
    return (-params.k3 * slope) * np.asarray(direction, dtype=float)


def distribution_regulation(view: DensityView, dd: DesiredDensity,
                            params: ControllerParams, p, seed_l=None):
    """Raw density-feedback velocity and its diagnostic pieces."""
    rho = view.estimate(p)
    grad_hat = view.gradient(p)
    grad_d = dd.gradient(p, seed_l=seed_l)
    denom = max(rho, params.rho_floor)
    u4_raw = -params.alpha0 * (grad_hat - grad_d) / denom
    diag = {"rho_hat": rho, "grad_rho_hat": grad_hat, "grad_rho_d": grad_d}
    return u4_raw, diag


def enforce_condition23(u123, u4_raw):
    """Cap the regulation term so its norm never exceeds the safe-navigation
    term's.  Equivalent to a pointwise rescaling of the free diffusion
    coefficient, so the capped term is still a valid regulation velocity."""
    n123 = math.hypot(float(u123[0]), float(u123[1]))
    n4 = math.hypot(float(u4_raw[0]), float(u4_raw[1]))
    if n4 == 0.0 or n123 == 0.0:
        return np.zeros(2)
    scale = min(1.0, n123 / n4)
    return u4_raw * scale


def saturate(u, v_max):
    """Clip a velocity to norm v_max, returning the applied velocity and the
    scaling factor actually used."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    u = np.asarray(u, dtype=float)
    norm = math.hypot(float(u[0]), float(u[1]))
    if norm <= v_max:
        return u.copy(), 1.0
    kappa = v_max / norm
    return u * kappa, kappa


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def regulation_from_parts(params: ControllerParams, rho_hat, grad_hat, grad_d):
    """Raw regulation velocity from precomputed density quantities."""
    denom = max(float(rho_hat), params.rho_floor)
    return -params.alpha0 * (np.asarray(grad_hat) - np.asarray(grad_d)) / denom


def compose_velocity(tube: VirtualTube, params: ControllerParams, i: int,
                     swarm: SwarmState, view: DensityView | None,
                     dd: DesiredDensity | None, mode="full",
                     coord=None, boundary=None, density_parts=None,
                     u2=None) -> VelocityCommand:
    """Full command for robot i from the current snapshot.

    ``coord``, ``boundary``, ``u2`` and ``density_parts`` (rho_hat, grad
    rho_hat, grad rho_d at the robot) are optional precomputed values the
    engine shares across its per-step batch; tests may omit them.
    """
    if mode not in ("full", "baseline"):
        raise ValueError("mode must be 'full' or 'baseline'")
    robot = swarm.robots[i]
    if not robot.active:
        raise ValueError(f"robot {i} is not active")
    p = robot.position
    if coord is None:
        coord = tube.to_curvilinear(p)
    u1 = approach_at_arclength(tube, params, coord.l)
    if u2 is None:
        u2 = robot_avoidance(params, i, swarm)
    u3 = tube_keeping(tube, params, p, boundary=boundary)
    u123 = u1 + u2 + u3
    if mode == "full":
        if density_parts is not None:
            u4_raw = regulation_from_parts(params, *density_parts)
        else:
            if view is None or dd is None:
                raise ValueError("full mode needs a density view and target density")
            u4_raw, _ = distribution_regulation(view, dd, params, p, seed_l=coord.l)
        u4 = enforce_condition23(u123, u4_raw)
    else:
        u4 = np.zeros(2)
    v, kappa = saturate(u123 + u4, params.v_max)
    return VelocityCommand(v=v, u1=u1, u2=u2, u3=u3, u4=u4, kappa_m=kappa)
