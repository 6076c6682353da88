"""Brute-force ground truth for reachability and placement quality.

Everything here re-derives its answers from the kinematics alone: no shared
caches, no finite differences, no solver state. The optimizer is validated
against this module, never the other way around. All functions are pure
and deterministic; cells and (point, configuration) pairs are independent.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTarget, GridTooLarge
from .geometry import Pose, frame_from_pose
from .kinematics import (RobotModel, axis_violation, backward7_all,
                         _limit_representative)

IN_LIMITS = "in_limits"
OUT_OF_LIMITS = "out_of_limits"
OUT_OF_WORKSPACE = "out_of_workspace"

_TWO_PI = 2.0 * math.pi


@dataclass
class BranchResult:
    outcome: str
    joints: np.ndarray | None  # in-limit representatives when available
    v: float


@dataclass
class ReachabilityTable:
    """Per (point, configuration) classification of one placement."""

    rows: list[list[BranchResult]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(any(b.outcome == IN_LIMITS for b in row) for row in self.rows)

    def best_config(self, k: int) -> int | None:
        for c, branch in enumerate(self.rows[k]):
            if branch.outcome == IN_LIMITS:
                return c
        return None


def _classify_joint_row(robot: RobotModel, q: np.ndarray) -> BranchResult:
    v = float(q[3])
    theta = q[[0, 1, 2, 4, 5, 6]]
    if v != 0.0:
        return BranchResult(OUT_OF_WORKSPACE, None, v)
    lo, hi = robot.limits
    reps = np.empty(6)
    for i in range(6):
        rep = _limit_representative(float(theta[i]), lo[i], hi[i])
        if rep is None:
            return BranchResult(OUT_OF_LIMITS, None, 0.0)
        reps[i] = rep
    return BranchResult(IN_LIMITS, reps, 0.0)


def classify_target(robot: RobotModel, target: np.ndarray, config: int):
    """(outcome, joints-or-None, v) for one target frame and configuration."""
    try:
        q = backward7_all(robot, target)[config]
    except DegenerateTarget:
        return OUT_OF_WORKSPACE, None, math.inf
    branch = _classify_joint_row(robot, q)
    return branch.outcome, branch.joints, branch.v


def axis_margins(robot: RobotModel, target: np.ndarray, config: int) -> list[float]:
    """Signed per-axis limit margins (rad) of the best 2pi-representative.

    Positive means inside the range with that much room, negative is the
    distance by which every representative misses the range.
    """
    try:
        q = backward7_all(robot, target)[config]
    except DegenerateTarget:
        return [-math.inf] * 6
    theta = q[[0, 1, 2, 4, 5, 6]]
    lo, hi = robot.limits
    margins = []
    for i in range(6):
        best = -math.inf
        for shift in (-_TWO_PI, 0.0, _TWO_PI):
            t = float(theta[i]) + shift
            best = max(best, min(t - lo[i], hi[i] - t))
        margins.append(best)
    return margins


def check_placement(scene, placement: np.ndarray) -> ReachabilityTable:
    """Classify every (point, configuration) pair at a candidate placement."""
    table = ReachabilityTable()
    for target in scene.target_frames():
        world = placement @ target
        try:
            q_all = backward7_all(scene.robot, world)
        except DegenerateTarget:
            table.rows.append([BranchResult(OUT_OF_WORKSPACE, None, math.inf)
                               for _ in range(8)])
            continue
        table.rows.append([_classify_joint_row(scene.robot, q_all[c])
                           for c in range(8)])
    return table


# ---------------------------------------------------------------------------
# placement grid search
# ---------------------------------------------------------------------------

@dataclass
class GridSpec:
    """Axis-aligned grid over the six placement components.

    Each component is (lo, hi, count); count == 1 pins the component at lo.
    """

    axes: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        if len(self.axes) != 6:
            raise ValueError("grid needs exactly 6 components")
        for lo, hi, count in self.axes:
            if count < 1:
                raise ValueError("grid step count must be >= 1")
            if hi < lo:
                raise ValueError("grid range must have hi >= lo")

    @property
    def total_cells(self) -> int:
        return int(np.prod([count for _, _, count in self.axes]))

    def component_values(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, count) if count > 1 else np.array([lo])
                for lo, hi, count in self.axes]


@dataclass
class GridCell:
    pose: np.ndarray  # 6 placement components
    score: float
    feasible: bool


def placement_score(scene, placement: np.ndarray) -> float:
    """Sum over points of the best-configuration penalty v^2 + violation^2."""
    total = 0.0
    for target in scene.target_frames():
        world = placement @ target
        try:
            q_all = backward7_all(scene.robot, world)
        except DegenerateTarget:
            total += math.inf
            continue
        lo, hi = scene.robot.limits
        best = math.inf
        for c in range(8):
            v = float(q_all[c, 3])
            theta = q_all[c, [0, 1, 2, 4, 5, 6]]
            worst = max(axis_violation(float(theta[i]), lo[i], hi[i])
                        for i in range(6))
            best = min(best, v * v + worst * worst)
        total += best
    return total


def grid_search(scene, grid: GridSpec, cell_cap: int = 1_000_000
                ) -> list[GridCell]:
    """Exhaustive placement scan, sorted by ascending score (ties by order)."""
    if grid.total_cells > cell_cap:
        raise GridTooLarge(
            f"{grid.total_cells} cells exceed the cap of {cell_cap}")
    cells = []
    for combo in itertools.product(*grid.component_values()):
        pose = np.array(combo)
        score = placement_score(scene, frame_from_pose(Pose.from_array(pose)))
        cells.append(GridCell(pose=pose, score=score, feasible=score == 0.0))
    order = sorted(range(len(cells)), key=lambda i: (cells[i].score, i))
    return [cells[i] for i in order]


# ---------------------------------------------------------------------------
# exhaustive configuration enumeration
# ---------------------------------------------------------------------------

def minimin_enumerate(scene, solve_pinned, stop_at: float | None = None):
    """Best fixed-configuration value over all per-segment assignments.

    ``solve_pinned(scene, assignment) -> (value, payload)`` solves the smooth
    problem with the weights pinned to that assignment. Returns
    (best value, best assignment, payload of the best solve).

    The placement objective is nonnegative by construction, so a caller that
    only needs the minimum may pass ``stop_at=0.0`` to skip the remaining
    assignments once that bound is reached; enumeration order is fixed, so
    the result stays deterministic.
    """
    n_segments, _ = scene.segment_map()
    if 8 ** n_segments > 512:
        raise ValueError("enumeration limited to 8^3 = 512 assignments")
    best_value, best_assignment, best_payload = math.inf, None, None
    for assignment in itertools.product(range(8), repeat=n_segments):
        value, payload = solve_pinned(scene, assignment)
        if value < best_value:
            best_value, best_assignment, best_payload = value, assignment, payload
        if stop_at is not None and best_value <= stop_at:
            break
    return best_value, best_assignment, best_payload


# ---------------------------------------------------------------------------
# report verification
# ---------------------------------------------------------------------------

def verify_solution(scene, report):
    """Re-derive the report's claims from scratch.

    Returns (feasible, diffs); each diff names the point, its configuration
    and the per-axis violations (rad) or virtual excursion that disqualify it.
    """
    placement = frame_from_pose(report.placement)
    targets = scene.target_frames()
    diffs = []
    for k, point_result in enumerate(report.points):
        config = point_result.config
        outcome, joints, v = classify_target(scene.robot, placement @ targets[k],
                                             config)
        if outcome == IN_LIMITS:
            continue
        violations = [0.0] * 6
        if outcome == OUT_OF_LIMITS:
            q = backward7_all(scene.robot, placement @ targets[k])[config]
            theta = q[[0, 1, 2, 4, 5, 6]]
            lo, hi = scene.robot.limits
            violations = [axis_violation(float(theta[i]), lo[i], hi[i])
                          for i in range(6)]
        diffs.append({
            "point": point_result.id, "config": config, "outcome": outcome,
            "v_mm": v, "axis_violations_rad": violations,
        })
    return len(diffs) == 0, diffs
