import math

import numpy as np
import pytest

from tubenav.control import (
    ControllerParams,
    approach_at_arclength,
    compose_velocity,
    distribution_regulation,
    enforce_condition23,
    line_approach,
    robot_avoidance,
    saturate,
    tube_keeping,
)
from tubenav.density import DensityView, DesiredDensity, occupied_region_from_arclengths
from tubenav.errors import SafetyViolation
from tubenav.geometry import GeneratingCurve, LineSegment, VirtualTube, WidthProfile
from tubenav.state import make_swarm


def straight_tube(length=20.0, half_width=2.0, extension=None):
    curve = GeneratingCurve([LineSegment((0.0, 0.0), (length, 0.0))])
    widths = WidthProfile([(0.0, half_width, half_width), (length, half_width, half_width)])
    return VirtualTube(curve, widths, extension_length=extension)


def default_params(**over):
    base = dict(k1=1.0, k2=0.02, k3=0.02, v_max=2.0, r_s=0.5, r_a=0.8, r_t=0.3,
                alpha0=1.0, h=0.8)
    base.update(over)
    return ControllerParams(**base).validate()


class TestParams:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ControllerParams(r_a=0.4, r_s=0.5).validate()
        with pytest.raises(ValueError):
            ControllerParams(k1=3.0, v_max=2.0).validate()
        with pytest.raises(ValueError):
            ControllerParams(eta_min=2.0, eta_max=1.0).validate()
        with pytest.raises(ValueError):
            ControllerParams(r_t=0.0).validate()
        default_params()  # valid set passes


class TestLineApproach:
    def test_modified_mode_constant(self):
        tube = straight_tube()
        params = default_params()
        for x in (1.0, 8.0, 19.5):
            u1 = line_approach(tube, params, (x, 0.3))
            assert np.allclose(u1, [params.k1, 0.0])

    def test_original_mode_saturated_inside(self):
        # with a valid extension the distance-scheduled mode saturates at k1
        # everywhere inside the tube and equals the modified mode
        tube = straight_tube(length=20.0, extension=21.5)
        params = default_params(u1_mode="original", eta_min=1.0, eta_max=1.0)
        for x in (0.0, 10.0, 20.0):
            u = approach_at_arclength(tube, params, x)
            assert np.allclose(u, [params.k1, 0.0])

    def test_original_mode_decays_near_extension_end(self):
        tube = straight_tube(length=20.0, extension=21.5)
        params = default_params(u1_mode="original", eta_min=1.0, eta_max=1.0)
        # in the extension the magnitude decreases linearly to 0 at l = L'
        u_a = approach_at_arclength(tube, params, 20.9)
        u_b = approach_at_arclength(tube, params, 21.2)
        assert abs(np.linalg.norm(u_a) - 0.6) < 1e-12
        assert abs(np.linalg.norm(u_b) - 0.3) < 1e-12


class TestRobotAvoidance:
    def test_no_neighbors_in_reach(self):
        params = default_params()
        swarm = make_swarm([(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)])
        assert np.allclose(robot_avoidance(params, 0, swarm), 0.0)

    def test_pair_repulsion_and_mirror_symmetry(self):
        params = default_params()
        d = 1.1  # inside (2 r_s, r_s + r_a] = (1.0, 1.3]
        swarm = make_swarm([(0.0, 0.0), (d, 0.0)])
        u_left = robot_avoidance(params, 0, swarm)
        u_right = robot_avoidance(params, 1, swarm)
        assert u_left[0] < 0.0 and abs(u_left[1]) < 1e-15
        assert np.allclose(u_left, -u_right)

    def test_magnitude_monotone_in_distance(self):
        params = default_params()
        mags = []
        for d in np.linspace(1.29, 1.01, 25):
            swarm = make_swarm([(0.0, 0.0), (d, 0.0)])
            mags.append(np.linalg.norm(robot_avoidance(params, 0, swarm)))
        assert all(b > a for a, b in zip(mags, mags[1:]))

    def test_smooth_activation_at_outer_edge(self):
        params = default_params()
        swarm = make_swarm([(0.0, 0.0), (params.r_s + params.r_a, 0.0)])
        assert np.allclose(robot_avoidance(params, 0, swarm), 0.0)

    def test_overlap_is_a_fault(self):
        params = default_params()
        swarm = make_swarm([(0.0, 0.0), (0.9, 0.0)])
        with pytest.raises(SafetyViolation) as exc:
            robot_avoidance(params, 0, swarm)
        assert exc.value.kind == "robot-robot"

    def test_reciprocity_three_robots(self):
        params = default_params()
        swarm = make_swarm([(0.0, 0.0), (1.15, 0.1), (0.4, 1.05)])
        total = np.zeros(2)
        for i in range(3):
            total += robot_avoidance(params, i, swarm)
        assert np.allclose(total, 0.0, atol=1e-12)  # pairwise action-reaction


class TestTubeKeeping:
    def test_zero_far_from_walls(self):
        tube = straight_tube(half_width=2.0)
        params = default_params()
        assert np.allclose(tube_keeping(tube, params, (5.0, 0.0)), 0.0)

    def test_pushes_inward_near_upper_wall(self):
        tube = straight_tube(half_width=2.0)
        params = default_params()
        # boundary distance 0.6 is inside the band (0.5, 0.8]
        u3 = tube_keeping(tube, params, (5.0, 1.4))
        assert u3[1] < 0.0 and abs(u3[0]) < 1e-12

    def test_magnitude_matches_barrier_derivative(self):
        # oracle: finite difference of the barrier potential in b
        tube = straight_tube(half_width=2.0)
        params = default_params()
        inner, outer = params.r_s, params.r_s + params.r_t

        def barrier(b):
            if b >= outer:
                return 0.0
            return ((outer - b) / (b - inner)) ** 2

        eps = 1e-7
        for b in (0.55, 0.62, 0.71, 0.79):
            p = (5.0, 2.0 - b)
            u3 = tube_keeping(tube, params, p)
            slope_fd = (barrier(b + eps) - barrier(b - eps)) / (2 * eps)
            assert abs(np.linalg.norm(u3) - params.k3 * abs(slope_fd)) < 1e-6 * max(
                1.0, abs(slope_fd)
            )

    def test_wall_contact_is_a_fault(self):
        tube = straight_tube(half_width=2.0)
        params = default_params()
        with pytest.raises(SafetyViolation) as exc:
            tube_keeping(tube, params, (5.0, 1.6))
        assert exc.value.kind == "boundary"


class TestDistributionRegulation:
    def _setup(self):
        tube = straight_tube()
        region = occupied_region_from_arclengths([2.0, 18.0], tube)
        dd = DesiredDensity(tube, region, delta_l=0.8)
        return tube, dd

    def test_points_away_from_cluster(self):
        tube, dd = self._setup()
        params = default_params()
        cluster = np.array([[4.0, 0.0], [4.3, 0.4], [4.2, -0.3], [4.6, 0.1]])
        view = DensityView(cluster, bandwidth=0.8)
        u4, diag = distribution_regulation(view, dd, params, (6.0, 0.0), seed_l=6.0)
        assert u4[0] > 0.0  # cluster behind, command pushes forward
        assert diag["rho_hat"] > 0

    def test_linear_in_alpha(self):
        tube, dd = self._setup()
        view = DensityView(np.array([[4.0, 0.0], [5.0, 0.5]]), bandwidth=0.8)
        p = (6.0, 0.2)
        u_a, _ = distribution_regulation(view, dd, default_params(alpha0=1.0), p)
        u_b, _ = distribution_regulation(view, dd, default_params(alpha0=2.0), p)
        assert np.allclose(u_b, 2.0 * u_a)

    def test_zero_when_gradients_cancel(self):
        tube, dd = self._setup()
        params = default_params()
        # two symmetric samples make the estimate gradient vanish midway; in
        # the flat target interior the target gradient is ~0 there too
        view = DensityView(np.array([[9.0, 0.6], [11.0, -0.6]]), bandwidth=0.9)
        u4, _ = distribution_regulation(view, dd, params, (10.0, 0.0), seed_l=10.0)
        assert np.linalg.norm(u4) < 1e-6


class TestCondition23:
    def test_oversized_term_rescaled_to_equality(self):
        u123 = np.array([1.0, 0.0])
        u4 = np.array([0.0, 2.0])
        capped = enforce_condition23(u123, u4)
        assert abs(np.linalg.norm(capped) - np.linalg.norm(u123)) < 1e-15
        assert np.allclose(capped, [0.0, 1.0])

    def test_small_term_unchanged(self):
        u123 = np.array([1.0, 1.0])
        u4 = np.array([0.3, -0.2])
        assert np.allclose(enforce_condition23(u123, u4), u4)

    def test_zero_navigation_forces_zero(self):
        assert np.allclose(enforce_condition23(np.zeros(2), np.array([5.0, 1.0])), 0.0)
        assert np.allclose(enforce_condition23(np.array([1.0, 0.0]), np.zeros(2)), 0.0)


class TestSaturate:
    def test_below_limit_unchanged(self):
        v, kappa = saturate(np.array([0.3, 0.4]), 1.0)
        assert np.allclose(v, [0.3, 0.4]) and kappa == 1.0

    def test_above_limit_rescaled(self):
        v, kappa = saturate(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(v, [0.6, 0.8])
        assert abs(kappa - 0.2) < 1e-15

    def test_norm_bound_random_sweep(self):
        rng = np.random.default_rng(33)
        for _ in range(1000):
            u = rng.normal(0, 5, 2)
            v, kappa = saturate(u, 1.3)
            assert np.linalg.norm(v) <= 1.3 + 1e-12
            assert 0 < kappa <= 1.0
            assert np.allclose(v, kappa * u)

    def test_zero_input(self):
        v, kappa = saturate(np.zeros(2), 1.0)
        assert np.allclose(v, 0.0) and kappa == 1.0


class TestComposeVelocity:
    def _scene(self):
        tube = straight_tube()
        params = default_params()
        swarm = make_swarm([(10.0, 0.0), (3.0, 0.5), (3.0, -0.8)])
        view = DensityView(swarm.active_positions(), bandwidth=params.h)
        region = occupied_region_from_arclengths([3.0, 10.0], tube)
        dd = DesiredDensity(tube, region, delta_l=0.8)
        return tube, params, swarm, view, dd

    def test_isolated_robot_runs_at_approach_speed_baseline(self):
        tube, params, swarm, view, dd = self._scene()
        cmd = compose_velocity(tube, params, 0, swarm, view, dd, mode="baseline")
        assert np.allclose(cmd.u2, 0.0) and np.allclose(cmd.u3, 0.0)
        assert np.allclose(cmd.v, [params.k1, 0.0])
        assert cmd.kappa_m == 1.0

    def test_exact_decomposition_and_norm_bound(self):
        tube, params, swarm, view, dd = self._scene()
        for mode in ("full", "baseline"):
            for i in range(3):
                cmd = compose_velocity(tube, params, i, swarm, view, dd, mode=mode)
                recomposed = cmd.kappa_m * (cmd.u1 + cmd.u2 + cmd.u3 + cmd.u4)
                assert np.allclose(cmd.v, recomposed, atol=0)
                assert np.linalg.norm(cmd.v) <= params.v_max + 1e-12
                assert np.linalg.norm(cmd.u4) <= np.linalg.norm(cmd.u123()) + 1e-15

    def test_baseline_ignores_density(self):
        tube, params, swarm, view, dd = self._scene()
        cmd1 = compose_velocity(tube, params, 0, swarm, view, dd, mode="baseline")
        # moving a far-away robot (outside r_s + r_a) changes nothing
        swarm2 = swarm.copy()
        swarm2.robots[1].position = np.array([5.0, 0.9])
        view2 = DensityView(swarm2.active_positions(), bandwidth=params.h)
        region2 = occupied_region_from_arclengths([5.0, 10.0], tube)
        dd2 = DesiredDensity(tube, region2, delta_l=0.8)
        cmd2 = compose_velocity(tube, params, 0, swarm2, view2, dd2, mode="baseline")
        assert np.array_equal(cmd1.v, cmd2.v)

    def test_matched_density_reduces_to_baseline(self):
        # when the estimate and target gradients agree at the query point the
        # regulation term vanishes and full mode equals baseline there
        tube, params, swarm, view, dd = self._scene()
        u4, _ = distribution_regulation(view, dd, params, swarm.robots[0].position)
        full = compose_velocity(tube, params, 0, swarm, view, dd, mode="full")
        base = compose_velocity(tube, params, 0, swarm, view, dd, mode="baseline")
        gap = np.linalg.norm(full.v - base.v)
        assert gap <= np.linalg.norm(u4) + 1e-12

    def test_locality_of_barriers(self):
        tube, params, swarm, view, dd = self._scene()
        cmd = compose_velocity(tube, params, 0, swarm, view, dd, mode="full")
        # robot 0 has no neighbor within reach and is far from walls
        assert np.allclose(cmd.u2, 0.0)
        assert np.allclose(cmd.u3, 0.0)


class TestZeroErrorFixedPoint:
    def test_full_equals_baseline_when_gradients_cancel(self):
        # flat target interior (zero target gradient) and a query point midway
        # between two symmetric samples (zero estimate gradient): the
        # regulation term vanishes exactly and full mode equals baseline
        tube = straight_tube()
        params = default_params()
        region = occupied_region_from_arclengths([2.0, 18.0], tube)
        dd = DesiredDensity(tube, region, delta_l=0.8)
        swarm = make_swarm([(10.0, 0.0), (8.5, 0.0), (11.5, 0.0)])
        view = DensityView(swarm.active_positions(), bandwidth=params.h)
        u4, _ = distribution_regulation(view, dd, params, (10.0, 0.0), seed_l=10.0)
        assert np.array_equal(u4, np.zeros(2))
        full = compose_velocity(tube, params, 0, swarm, view, dd, mode="full")
        base = compose_velocity(tube, params, 0, swarm, view, dd, mode="baseline")
        assert np.array_equal(full.v, base.v)
        assert np.array_equal(full.u4, np.zeros(2))
