import math

import numpy as np
import pytest

from cellplace.errors import InvalidScene
from cellplace.geometry import Pose
from cellplace.nlp import (BuildOptions, SolveSettings, build_problem,
                           make_pinned_solver, solve_placement)
from cellplace.oracle import minimin_enumerate, verify_solution
from cellplace.scene import PlacementBounds, Scene, synthesize_scene

DEG = math.radians


@pytest.fixture(scope="module")
def scene_k1():
    return synthesize_scene(count=1, seed=101)


@pytest.fixture(scope="module")
def scene_k2():
    return synthesize_scene(count=2, seed=102)


@pytest.fixture(scope="module")
def scene_k3_one_segment():
    return synthesize_scene(count=3, seed=103, segment_size=3)


class TestLayout:
    def test_k1_squared_counts(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="squared"))
        assert p.n_vars == 6 + 8 + 8 == 22
        assert p.n_eq == 1
        assert p.n_ineq == 96

    def test_abs_mode_adds_split_variables(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="abs"))
        assert p.n_vars == 22 + 16
        assert p.n_eq == 1 + 8

    def test_shared_segment_shrinks_slack_block(self, scene_k3_one_segment):
        p = build_problem(scene_k3_one_segment, BuildOptions(mode="squared"))
        # one declared segment for all three points: slack block is 8, not 24
        assert p.n_segments == 1
        assert p.n_vars == 6 + 24 + 8
        assert p.n_ineq == 96 * 3

    def test_every_point_gets_one_simplex_row(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        j_eq, _ = p.eval_jacobians(z)
        for k in range(2):
            row = j_eq[k]
            assert np.count_nonzero(row) == 8
            assert np.all(row[p.off_w + 8 * k:p.off_w + 8 * (k + 1)] == 1.0)

    def test_empty_scene_rejected(self, scene_k1):
        empty = Scene(robot=scene_k1.robot, points=(),
                      bounds=scene_k1.bounds)
        with pytest.raises(InvalidScene):
            build_problem(empty, BuildOptions())

    def test_bad_bounds_rejected(self, scene_k1):
        bad = Scene(robot=scene_k1.robot, points=scene_k1.points,
                    bounds=PlacementBounds(np.full(6, 1.0), np.full(6, -1.0)))
        with pytest.raises(InvalidScene):
            build_problem(bad, BuildOptions())


class TestObjective:
    def test_zero_at_reachable_placement_with_zero_slacks(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="squared"))
        gt = scene_k1.metadata["ground_truth"]
        x = Pose.from_degrees(gt["x"], gt["y"], gt["z"], gt["a"], gt["b"],
                              gt["c"]).as_array()
        z = np.zeros(p.n_vars)
        z[:6] = x
        z[p.off_w:p.off_w + 8] = 1.0 / 8.0
        theta, v = p.kinematic_values(x)
        if np.all(v == 0.0):  # fully reachable both families: objective 0
            assert p.eval_objective(z) == pytest.approx(0.0, abs=1e-12)

    def test_unit_weight_squared_value(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        x = z[:6]
        _, v = p.kinematic_values(x)
        config = 3
        z[p.off_w:p.off_w + 8] = 0.0
        z[p.off_w + config] = 1.0
        z[p.off_m:p.off_m + 8] = 0.0
        assert p.eval_objective(z) == pytest.approx(v[0, config] ** 2, rel=1e-12)

    def test_abs_mode_uses_split_sum(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="abs"))
        z = np.zeros(p.n_vars)
        z[:6] = p.x0
        config = 2
        z[p.off_w + config] = 1.0
        z[p.off_vp + config] = 10.0  # v+ = 10, v- = 0 -> contribution 10
        assert p.eval_objective(z) == pytest.approx(10.0, rel=1e-12)


class TestConstraints:
    def test_uniform_weights_satisfy_simplex(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        eq, _ = p.eval_constraints(z)
        assert np.max(np.abs(eq[:2])) < 1e-15

    def test_hinge_value_for_axis2_at_50deg(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        theta, _ = p.kinematic_values(z[:6])
        # hand-build the expected row values for point 0, config 0, axis 2
        t = p._wrap_representative(theta)[0, 0, 1]
        z[p.off_m:p.off_m + 8] = 0.0
        _, ineq = p.eval_constraints(z)
        hi_row = ineq[(0 * 8 + 0) * 12 + 1 * 2 + 1]
        assert hi_row == pytest.approx(t - DEG(45), abs=1e-12)
        z[p.off_m + 0] = DEG(5)
        _, ineq = p.eval_constraints(z)
        assert ineq[(0 * 8 + 0) * 12 + 1 * 2 + 1] == pytest.approx(
            t - DEG(45) - DEG(5), abs=1e-12)

    def test_initial_point_satisfies_all_inequalities(self, scene_k2):
        for mode in ("squared", "abs"):
            p = build_problem(scene_k2, BuildOptions(mode=mode))
            z = p.initial_point("scene")
            eq, ineq = p.eval_constraints(z)
            assert ineq.max() <= 1e-12
            assert np.max(np.abs(eq)) <= 1e-12  # abs split exact at start

    def test_abs_split_is_complementary_at_start(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="abs"))
        z = p.initial_point("scene")
        vp, vm = p.vplus_of(z), p.vminus_of(z)
        assert np.all(vp * vm == 0.0)
        assert np.all(vp >= 0.0) and np.all(vm >= 0.0)


class TestJacobians:
    def test_analytic_blocks_match_fd(self, scene_k2):
        # w/m/v blocks of objective gradient and constraint Jacobians are
        # analytic; verify them against a full finite difference of the
        # assembled functions.
        for mode in ("squared", "abs"):
            p = build_problem(scene_k2, BuildOptions(mode=mode))
            rng = np.random.default_rng(5)
            z = p.initial_point("scene")
            z[6:] += rng.uniform(0.01, 0.2, size=p.n_vars - 6)
            grad = p.eval_gradient(z)
            h = 1e-7
            for col in range(6, p.n_vars):
                zp, zm = z.copy(), z.copy()
                zp[col] += h
                zm[col] -= h
                fd = (p.eval_objective(zp) - p.eval_objective(zm)) / (2 * h)
                assert grad[col] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_constraint_jacobian_x_block_matches_fd(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        _, j_in = p.eval_jacobians(z)
        h = 1e-5
        rng = np.random.default_rng(9)
        rows = rng.integers(0, p.n_ineq, size=20)
        for col in range(6):
            zp, zm = z.copy(), z.copy()
            zp[col] += h * max(1.0, abs(z[col]))
            zm[col] -= h * max(1.0, abs(z[col]))
            _, ip = p.eval_constraints(zp)
            _, im = p.eval_constraints(zm)
            fd = (ip - im) / (2 * h * max(1.0, abs(z[col])))
            for row in rows:
                assert j_in[row, col] == pytest.approx(fd[row], rel=2e-3,
                                                       abs=2e-4)

    def test_simplex_rows_have_no_x_dependence(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        j_eq, _ = p.eval_jacobians(z)
        assert np.all(j_eq[:2, :6] == 0.0)

    def test_richardson_step_halving(self, scene_k1):
        # central differences: halving the step shrinks the truncation error
        # by 4; the ratio of successive difference norms must sit near 4 and
        # the two estimates agree to about the truncation level.
        p = build_problem(scene_k1, BuildOptions(mode="squared"))
        rng = np.random.default_rng(17)
        checked = 0
        for _ in range(20):
            x = rng.uniform(scene_k1.bounds.lower, scene_k1.bounds.upper)
            base = 1e-3
            j1 = np.concatenate([a.ravel() for a in
                                 p.fd_kinematic_jacobians(x, base)])
            j2 = np.concatenate([a.ravel() for a in
                                 p.fd_kinematic_jacobians(x, base / 2)])
            j4 = np.concatenate([a.ravel() for a in
                                 p.fd_kinematic_jacobians(x, base / 4)])
            rel = np.abs(j1 - j2) / np.maximum(np.abs(j2), 1e-3)
            assert np.median(rel) <= 1e-4  # typical-entry consistency
            num = np.abs(j1 - j2)
            den = np.abs(j2 - j4)
            mask = (den > 1e-10) & (num > 4e-10)
            if mask.sum() < 10:
                continue
            ratio = np.median(num[mask] / den[mask])
            assert 3.5 <= ratio <= 4.5
            checked += 1
        assert checked >= 10


class TestInitialPoint:
    def test_scene_strategy_uses_scene_x0(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions())
        z = p.initial_point("scene")
        assert np.allclose(z[:6], scene_k1.initial.as_array(), atol=0)

    def test_random_strategy_respects_bounds(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions())
        rng = np.random.default_rng(3)
        for _ in range(20):
            z = p.initial_point("random", rng)
            assert np.all(z[:6] >= scene_k1.bounds.lower)
            assert np.all(z[:6] <= scene_k1.bounds.upper)

    def test_unknown_strategy_rejected(self, scene_k1):
        p = build_problem(scene_k1, BuildOptions())
        with pytest.raises(ValueError):
            p.initial_point("warmstart")


class TestExtractSolution:
    def test_argmax_and_tie_break(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="squared"))
        z = p.initial_point("scene")
        w = p.w_of(z)
        w[0] = 0.0
        w[0, 3] = 1.0
        w[1] = 0.0
        w[1, 0] = 0.5
        w[1, 1] = 0.5  # tie: smallest index wins
        configs = p.chosen_configurations(z)
        assert configs[0] == 3
        assert configs[1] == 0

    def test_feasible_solve_verdict(self, scene_k2):
        report = solve_placement(scene_k2, SolveSettings(
            mode="squared", multistart=4, seed=0, early_stop_objective=1e-12))
        assert report.objective <= 1e-8
        assert report.verdict == "feasible"
        ok, diffs = verify_solution(scene_k2, report)
        assert ok and diffs == []


class TestLemmaEquivalenceSmall:
    def test_free_w_equals_pinned_enumeration(self, scene_k1):
        # both directions of the equivalence, on a K = 1 instance:
        free = solve_placement(scene_k1, SolveSettings(
            mode="squared", multistart=4, seed=1, early_stop_objective=1e-14))
        pinned = make_pinned_solver(mode="squared", multistart=2, seed=1,
                                    early_stop_objective=1e-14)
        best, assignment, payload = minimin_enumerate(scene_k1, pinned)
        # (a) a unit-weight point achieves the free optimum
        assert free.objective <= best + 1e-6
        # (b) no admissible pair beats the best fixed assignment
        assert best <= free.objective + 1e-6

    def test_pinned_layout(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="squared",
                                                 pinned=(2, 5)))
        assert p.n_vars == 6 + 2
        assert p.n_ineq == 24
        assert p.n_eq == 0
        z = p.initial_point("scene")
        eq, ineq = p.eval_constraints(z)
        assert ineq.max() <= 1e-12

    def test_pinned_abs_layout(self, scene_k2):
        p = build_problem(scene_k2, BuildOptions(mode="abs", pinned=(2, 5)))
        assert p.n_vars == 6 + 2 + 4
        assert p.n_eq == 2


class TestSegmentSemantics:
    def test_selected_branch_feasible_for_whole_segment(self, robot):
        # The shared slack makes every positively weighted branch absorb the
        # worst violation across its segment, so at a zero objective each
        # chosen configuration must be in-limits for every point of its
        # segment, not just its own.
        from cellplace.oracle import IN_LIMITS, check_placement
        from cellplace.geometry import frame_from_pose
        for seed in (61, 62, 63):
            scene = synthesize_scene(robot, count=4, seed=seed, segment_size=2)
            report = solve_placement(scene, SolveSettings(
                mode="squared", multistart=4, seed=0,
                early_stop_objective=1e-12))
            assert report.objective <= 1e-8
            table = check_placement(scene, frame_from_pose(report.placement))
            _, seg_of = scene.segment_map()
            for k, point_result in enumerate(report.points):
                mates = [j for j in range(scene.K) if seg_of[j] == seg_of[k]]
                for j in mates:
                    branch = table.rows[j][point_result.config]
                    assert branch.outcome == IN_LIMITS, (seed, k, j)

    def test_solve_defaults_from_scene_options(self, robot):
        scene = synthesize_scene(robot, count=1, seed=64)
        report = solve_placement(scene)  # settings from scene.solve_options
        assert report.mode == scene.solve_options["mode"]
        assert report.verdict == "feasible"


class TestOptions:
    def test_regularization_adds_pullback_term(self, scene_k1):
        plain = build_problem(scene_k1, BuildOptions(mode="squared"))
        pulled = build_problem(scene_k1, BuildOptions(mode="squared",
                                                      regularization=2.0))
        z = plain.initial_point("scene")
        z[:3] += 5.0
        delta = pulled.eval_objective(z) - plain.eval_objective(z)
        assert delta == pytest.approx(2.0 * 3 * 25.0, rel=1e-12)
        grad_delta = pulled.eval_gradient(z)[:6] - plain.eval_gradient(z)[:6]
        assert grad_delta[:3] == pytest.approx([20.0] * 3, rel=1e-12)

    def test_degenerate_target_retried_with_shift(self, robot):
        # place a point whose wrist centre lands exactly on the axis-1 line
        # at the initial placement; the evaluator must log-and-retry with a
        # 1e-9 shift instead of failing
        from cellplace.geometry import pose_from_frame, rot_x
        from cellplace.scene import PlacementBounds, ProcessPoint, Scene
        target = np.eye(4)
        target[:3, 3] = (0.0, 0.0, 80.0 - 400.0)  # wrist centre on the line
        target = rot_x(math.pi) @ target
        scene = Scene(robot=robot,
                      points=(ProcessPoint("p1", pose_from_frame(target)),),
                      bounds=PlacementBounds(np.full(6, -10.0),
                                             np.full(6, 10.0)),
                      initial=Pose())
        p = build_problem(scene, BuildOptions(mode="squared"))
        theta, v = p.kinematic_values(np.zeros(6))
        assert p.degenerate_retries == 1
        assert np.all(np.isfinite(theta)) and np.all(np.isfinite(v))
