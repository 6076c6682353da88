"""Scene data model, file ingestion, report serialization, scene synthesis.

Scene files are strict JSON: angles in degrees, lengths in millimetres,
unknown keys rejected so that typos in option names fail loudly. See
docs/file_formats.md in the repository root for the annotated schema. Inside
the process everything is radians and millimetres.

Report files also use JSON. Angle fields are written twice: a `_rad` field
holding the exact binary value (these round-trip losslessly through JSON's
shortest-repr float rendering) and a `_deg` rendering for human readers.
Loading uses only the `_rad` fields.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .errors import ParseError, SynthesisFailed, ValidationError
from .geometry import Pose, frame_from_pose, invert, pose_from_frame
from .kinematics import (JointRow, RobotModel, backward7_all, builtin_kr6r900,
                         config_label, forward6)

FORMAT_VERSION = 1

_BUILTIN_ROBOTS = {"kr6r900": builtin_kr6r900}

_POSE_KEYS = ("x", "y", "z", "a", "b", "c")
_DEFAULT_BOUNDS = {
    "x": (-1500.0, 1500.0), "y": (-1500.0, 1500.0), "z": (-1500.0, 1500.0),
    "a": (-180.0, 180.0), "b": (-180.0, 180.0), "c": (-180.0, 180.0),
}
_SOLVE_KEYS = {"mode", "multistart", "seed", "max_iterations",
               "kkt_tolerance", "constraint_tolerance"}


@dataclass(frozen=True)
class ProcessPoint:
    id: str
    pose: Pose  # relative to the workpiece frame
    segment: str | None = None


@dataclass(frozen=True)
class PlacementBounds:
    lower: np.ndarray  # (6,) mm / rad
    upper: np.ndarray

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass
class Scene:
    robot: RobotModel
    points: tuple[ProcessPoint, ...]
    bounds: PlacementBounds
    tool: Pose = field(default_factory=Pose)
    initial: Pose | None = None
    solve_options: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    robot_name: str | None = None

    @property
    def K(self) -> int:
        return len(self.points)

    def target_frames(self) -> list[np.ndarray]:
        return [frame_from_pose(p.pose) for p in self.points]

    def segment_map(self) -> tuple[int, np.ndarray]:
        """(segment count, segment index per point).

        Points without a segment id each form their own segment; declared ids
        group by value in order of first appearance.
        """
        ids = {}
        seg_of = np.empty(self.K, dtype=int)
        for k, point in enumerate(self.points):
            key = ("#anon", k) if point.segment is None else ("seg", point.segment)
            if key not in ids:
                ids[key] = len(ids)
            seg_of[k] = ids[key]
        return len(ids), seg_of

    def solve_defaults(self) -> dict:
        defaults = {"mode": "squared", "multistart": 1, "seed": 0}
        defaults.update(self.solve_options)
        return defaults


@dataclass
class PointResult:
    id: str
    config: int
    v_mm: float
    joints: list[float] | None  # radians, in-limit representatives
    axis_margins: list[float]  # radians, positive inside the range
    outcome: str

    @property
    def config_bits(self) -> str:
        return config_label(self.config)


@dataclass
class SolutionReport:
    placement: Pose
    points: list[PointResult]
    objective: float
    mode: str
    verdict: str  # "feasible" | "infeasible"
    diagnostics: dict = field(default_factory=dict)
    elapsed_s: float = 0.0


# ---------------------------------------------------------------------------
# strict-JSON helpers
# ---------------------------------------------------------------------------

def _expect_keys(obj: dict, where: str, required: set, optional: set, errors: list):
    unknown = set(obj) - required - optional
    for key in sorted(unknown):
        errors.append(f"{where}: unknown field {key!r}")
    for key in sorted(required - set(obj)):
        errors.append(f"{where}: missing field {key!r}")


def _parse_pose_deg(obj, where: str, errors: list, wrap: bool = True) -> Pose | None:
    if not isinstance(obj, dict):
        errors.append(f"{where}: pose must be an object with keys x..c")
        return None
    _expect_keys(obj, where, set(), set(_POSE_KEYS), errors)
    values = []
    for key in _POSE_KEYS:
        raw = obj.get(key, 0.0)
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            errors.append(f"{where}.{key}: expected a number")
            return None
        values.append(float(raw))
    pose = Pose.from_degrees(*values)
    return pose.wrapped() if wrap else pose


def _pose_to_deg_dict(pose: Pose) -> dict:
    a, b, c = pose.angles_deg()
    return {"x": pose.x, "y": pose.y, "z": pose.z, "a": a, "b": b, "c": c}


def _parse_bounds(obj, errors: list) -> PlacementBounds:
    lower = np.empty(6)
    upper = np.empty(6)
    obj = obj if obj is not None else {}
    if not isinstance(obj, dict):
        errors.append("placement_bounds: must be an object")
        obj = {}
    _expect_keys(obj, "placement_bounds", set(), set(_POSE_KEYS), errors)
    for i, key in enumerate(_POSE_KEYS):
        raw = obj.get(key, list(_DEFAULT_BOUNDS[key]))
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            lo = hi = float(raw)
        elif (isinstance(raw, list) and len(raw) == 2
              and all(isinstance(r, (int, float)) and not isinstance(r, bool)
                      for r in raw)):
            lo, hi = float(raw[0]), float(raw[1])
        else:
            errors.append(f"placement_bounds.{key}: expected number or [lo, hi]")
            continue
        if lo > hi:
            errors.append(f"placement_bounds.{key}: lo {lo} exceeds hi {hi}")
        if not (math.isfinite(lo) and math.isfinite(hi)):
            errors.append(f"placement_bounds.{key}: bounds must be finite")
        if i >= 3:  # angular components arrive in degrees
            lo, hi = math.radians(lo), math.radians(hi)
        lower[i], upper[i] = lo, hi
    return PlacementBounds(lower, upper)


def _parse_robot(obj, errors: list) -> tuple[RobotModel | None, str | None]:
    if isinstance(obj, str):
        maker = _BUILTIN_ROBOTS.get(obj)
        if maker is None:
            errors.append(f"robot: unknown builtin {obj!r} "
                          f"(have: {sorted(_BUILTIN_ROBOTS)})")
            return None, None
        return maker(), obj
    if not isinstance(obj, dict):
        errors.append("robot: expected a builtin name or an inline DH table")
        return None, None
    _expect_keys(obj, "robot", {"name", "rows"}, {"base"}, errors)
    rows_raw = obj.get("rows")
    if not isinstance(rows_raw, list) or len(rows_raw) != 7:
        errors.append("robot.rows: expected 7 rows (6 rotational + virtual axis)")
        return None, None
    rows = []
    row_keys = {"type", "d", "a", "alpha", "phi", "theta_min", "theta_max"}
    for i, raw in enumerate(rows_raw):
        where = f"robot.rows[{i}]"
        if not isinstance(raw, dict):
            errors.append(f"{where}: expected an object")
            return None, None
        _expect_keys(raw, where, {"type"}, row_keys - {"type"}, errors)
        kind = raw.get("type")
        if kind == "P":
            rows.append(JointRow("prism"))
            continue
        if kind != "R":
            errors.append(f"{where}.type: expected 'R' or 'P'")
            return None, None
        try:
            rows.append(JointRow(
                "rot", d=float(raw.get("d", 0.0)), a=float(raw.get("a", 0.0)),
                alpha=math.radians(float(raw.get("alpha", 0.0))),
                phi=math.radians(float(raw.get("phi", 0.0))),
                lo=math.radians(float(raw.get("theta_min", -180.0))),
                hi=math.radians(float(raw.get("theta_max", 180.0)))))
        except (TypeError, ValueError):
            errors.append(f"{where}: malformed numeric field")
            return None, None
    base_pose = _parse_pose_deg(obj.get("base", {}), "robot.base", errors)
    if base_pose is None:
        return None, None
    try:
        model = RobotModel(name=str(obj.get("name", "inline")), rows=tuple(rows),
                           base=frame_from_pose(base_pose), tool=np.eye(4))
    except ValueError as exc:
        errors.append(f"robot: {exc}")
        return None, None
    return model, None


def load_scene(path) -> Scene:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scene_from_dict(raw)


def scene_from_dict(raw: dict) -> Scene:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ValidationError(["top level: expected a JSON object"])
    _expect_keys(raw, "top level", {"format_version", "robot", "points"},
                 {"tool", "placement_bounds", "initial_placement", "solve",
                  "metadata"}, errors)
    if raw.get("format_version") != FORMAT_VERSION:
        errors.append(f"format_version: expected {FORMAT_VERSION}")

    robot, robot_name = _parse_robot(raw.get("robot"), errors)

    tool = _parse_pose_deg(raw.get("tool", {}), "tool", errors) or Pose()
    if robot is not None and raw.get("tool"):
        robot = dataclasses.replace(robot, tool=frame_from_pose(tool))

    points = []
    seen_ids = set()
    raw_points = raw.get("points", [])
    if not isinstance(raw_points, list) or not raw_points:
        errors.append("points: expected a non-empty list")
        raw_points = []
    for i, raw_point in enumerate(raw_points):
        where = f"points[{i}]"
        if not isinstance(raw_point, dict):
            errors.append(f"{where}: expected an object")
            continue
        _expect_keys(raw_point, where, {"id", "pose"}, {"segment"}, errors)
        pid = raw_point.get("id")
        if not isinstance(pid, str) or not pid:
            errors.append(f"{where}.id: expected a non-empty string")
            pid = f"#{i}"
        if pid in seen_ids:
            errors.append(f"{where}.id: duplicate id {pid!r}")
        seen_ids.add(pid)
        pose = _parse_pose_deg(raw_point.get("pose", {}), f"{where}.pose", errors)
        segment = raw_point.get("segment")
        if segment is not None and not isinstance(segment, str):
            errors.append(f"{where}.segment: expected a string")
            segment = None
        if pose is not None:
            points.append(ProcessPoint(id=pid, pose=pose, segment=segment))

    bounds = _parse_bounds(raw.get("placement_bounds"), errors)

    initial = None
    if "initial_placement" in raw:
        initial = _parse_pose_deg(raw["initial_placement"], "initial_placement",
                                  errors, wrap=False)
    if initial is not None:
        inside = np.all(initial.as_array() >= bounds.lower - 1e-12) and \
            np.all(initial.as_array() <= bounds.upper + 1e-12)
        if not inside:
            errors.append("initial_placement: outside placement_bounds")

    solve_options = raw.get("solve", {})
    if not isinstance(solve_options, dict):
        errors.append("solve: expected an object")
        solve_options = {}
    _expect_keys(solve_options, "solve", set(), _SOLVE_KEYS, errors)
    if "mode" in solve_options and solve_options["mode"] not in ("squared", "abs"):
        errors.append("solve.mode: expected 'squared' or 'abs'")

    metadata = raw.get("metadata", {})
    if not isinstance(metadata, dict):
        errors.append("metadata: expected an object")
        metadata = {}

    if errors:
        raise ValidationError(errors)
    return Scene(robot=robot, points=tuple(points), bounds=bounds, tool=tool,
                 initial=initial, solve_options=dict(solve_options),
                 metadata=dict(metadata), robot_name=robot_name)


def scene_to_dict(scene: Scene) -> dict:
    raw: dict = {"format_version": FORMAT_VERSION}
    if scene.robot_name is not None:
        raw["robot"] = scene.robot_name
    else:
        base = pose_from_frame(scene.robot.base)
        raw["robot"] = {
            "name": scene.robot.name,
            "base": _pose_to_deg_dict(base),
            "rows": [
                {"type": "P"} if row.kind == "prism" else {
                    "type": "R", "d": row.d, "a": row.a,
                    "alpha": math.degrees(row.alpha),
                    "phi": math.degrees(row.phi),
                    "theta_min": math.degrees(row.lo),
                    "theta_max": math.degrees(row.hi),
                }
                for row in scene.robot.rows
            ],
        }
    raw["tool"] = _pose_to_deg_dict(scene.tool)
    raw["points"] = []
    for point in scene.points:
        entry = {"id": point.id, "pose": _pose_to_deg_dict(point.pose)}
        if point.segment is not None:
            entry["segment"] = point.segment
        raw["points"].append(entry)
    bounds = {}
    for i, key in enumerate(_POSE_KEYS):
        lo, hi = scene.bounds.lower[i], scene.bounds.upper[i]
        if i >= 3:
            lo, hi = math.degrees(lo), math.degrees(hi)
        bounds[key] = lo if lo == hi else [lo, hi]
    raw["placement_bounds"] = bounds
    if scene.initial is not None:
        raw["initial_placement"] = _pose_to_deg_dict(scene.initial)
    if scene.solve_options:
        raw["solve"] = scene.solve_options
    if scene.metadata:
        raw["metadata"] = scene.metadata
    return raw


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(scene_to_dict(scene), handle, indent=2)
        handle.write("\n")


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

def _pose_to_report_dict(pose: Pose) -> dict:
    a_deg, b_deg, c_deg = pose.angles_deg()
    return {"x": pose.x, "y": pose.y, "z": pose.z,
            "a_rad": pose.a, "b_rad": pose.b, "c_rad": pose.c,
            "a_deg": a_deg, "b_deg": b_deg, "c_deg": c_deg}


def save_report(report: SolutionReport, path) -> None:
    raw = {
        "format_version": FORMAT_VERSION,
        "verdict": report.verdict,
        "mode": report.mode,
        "objective": report.objective,
        "elapsed_s": report.elapsed_s,
        "placement": _pose_to_report_dict(report.placement),
        "diagnostics": report.diagnostics,
        "points": [
            {
                "id": p.id,
                "config": p.config,
                "config_bits": p.config_bits,
                "outcome": p.outcome,
                "v_mm": p.v_mm,
                "joints_rad": p.joints,
                "joints_deg": None if p.joints is None else
                    [math.degrees(j) for j in p.joints],
                "axis_margins_rad": p.axis_margins,
                "axis_margins_deg": [math.degrees(m) for m in p.axis_margins],
            }
            for p in report.points
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(raw, handle, indent=2)
        handle.write("\n")


def load_report(path) -> SolutionReport:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if raw.get("format_version") != FORMAT_VERSION:
        raise ValidationError([f"format_version: expected {FORMAT_VERSION}"])
    placement_raw = raw["placement"]
    placement = Pose(placement_raw["x"], placement_raw["y"], placement_raw["z"],
                     placement_raw["a_rad"], placement_raw["b_rad"],
                     placement_raw["c_rad"])
    points = [
        PointResult(id=p["id"], config=int(p["config"]), v_mm=p["v_mm"],
                    joints=p["joints_rad"], axis_margins=p["axis_margins_rad"],
                    outcome=p["outcome"])
        for p in raw["points"]
    ]
    return SolutionReport(placement=placement, points=points,
                          objective=raw["objective"], mode=raw["mode"],
                          verdict=raw["verdict"],
                          diagnostics=raw.get("diagnostics", {}),
                          elapsed_s=raw.get("elapsed_s", 0.0))


# ---------------------------------------------------------------------------
# scene synthesis
# ---------------------------------------------------------------------------

def _sample_joints(robot: RobotModel, rng: np.random.Generator,
                   limit_margin: float = 0.15) -> np.ndarray:
    """In-limit, canonically wrapped, branch-robust joint vector.

    Keeps a margin to the limits, to the wrist singularity and to the
    shoulder/elbow branch boundaries so that small placement perturbations
    cannot flip the configuration.
    """
    lo, hi = robot.limits
    lo = np.maximum(lo + limit_margin, -math.pi + 1e-6)
    hi = np.minimum(hi - limit_margin, math.pi)
    arm = robot._arm
    while True:
        theta = rng.uniform(lo, hi)
        if abs(theta[4]) < 0.2:
            continue
        psi = theta + arm["phi"]
        c3, s3 = math.cos(psi[2]), math.sin(psi[2])
        ex = arm["a3"] * c3 + arm["d4"] * s3
        ey = arm["a3"] * s3 - arm["d4"] * c3
        c2, s2 = math.cos(psi[1]), math.sin(psi[1])
        u = c2 * (arm["a2"] + ex) - s2 * ey
        w = s2 * (arm["a2"] + ex) + c2 * ey
        radial = u + arm["a1"]
        if abs(radial) < 60.0:
            continue  # too close to the shoulder branch boundary
        # cross / a2 is the wrist centre's distance from the elbow line (mm)
        cross = arm["a2"] * (c2 * w - s2 * u)
        if abs(cross) < 20.0 * arm["a2"]:
            continue  # too close to the elbow branch boundary
        return theta


def _config_sets(scene_robot, targets, placement, margin_rad, margin_mm):
    """Per-target sets of robustly-in-limit configurations.

    Returns (robust_in, loose_in): configurations whose worst margin clears
    +margin, and configurations not ruled out by at least the same margin.
    Any configuration in loose_in \\ robust_in is borderline.
    """
    robust, loose = [], []
    for target in targets:
        world = placement @ target
        q_all = backward7_all(scene_robot, world)
        r_set, l_set = set(), set()
        for c in range(8):
            v = abs(float(q_all[c, 3]))
            margins = []
            theta = q_all[c, [0, 1, 2, 4, 5, 6]]
            lo, hi = scene_robot.limits
            for i in range(6):
                best = -math.inf
                for shift in (-2.0 * math.pi, 0.0, 2.0 * math.pi):
                    t = float(theta[i]) + shift
                    best = max(best, min(t - lo[i], hi[i] - t))
                margins.append(best)
            worst = min(margins)
            if v == 0.0 and worst >= margin_rad:
                r_set.add(c)
            if v <= margin_mm and worst >= -margin_rad:
                l_set.add(c)
        robust.append(r_set)
        loose.append(l_set)
    return robust, loose


def synthesize_scene(robot: RobotModel | None = None, count: int = 1,
                     seed: int = 0, mixed_config: bool = False,
                     segment_size: int | None = None) -> Scene:
    """Generate a scene with a known-feasible placement embedded as metadata.

    Process points come from forward kinematics of sampled in-limit joint
    vectors, expressed relative to a sampled workpiece frame; the placement
    bounds box contains that frame off-centre. With mixed_config=True the
    first two points are forced to admit in-limit solutions only in disjoint
    configuration sets at the ground-truth placement (verified before
    emission), so any feasible assignment must mix configurations.
    """
    robot = robot or builtin_kr6r900()
    if count < 1:
        raise ValueError("count must be >= 1")
    if mixed_config and count < 2:
        raise ValueError("mixed_config needs at least 2 points")
    if mixed_config and segment_size is not None and segment_size > 1:
        raise ValueError("mixed_config requires per-point segments")
    rng = np.random.default_rng(seed)

    for _ in range(400):
        placement_pose = Pose(
            x=rng.uniform(250.0, 550.0), y=rng.uniform(-300.0, 300.0),
            z=rng.uniform(150.0, 500.0), a=rng.uniform(-math.pi, math.pi),
            b=rng.uniform(-0.3, 0.3), c=rng.uniform(-0.3, 0.3))
        placement = frame_from_pose(placement_pose)
        placement_inv = invert(placement)

        tcps = []
        if mixed_config:
            pair = _sample_mixed_pair(robot, placement, rng)
            if pair is None:
                continue
            tcps.extend(pair)
        while len(tcps) < count:
            frame, _ = forward6(robot, _sample_joints(robot, rng))
            tcps.append(frame)

        points = []
        for k, tcp in enumerate(tcps):
            pose = pose_from_frame(placement_inv @ tcp)
            segment = None
            if segment_size is not None and segment_size > 1:
                segment = f"s{k // segment_size}"
            points.append(ProcessPoint(id=f"p{k + 1}", pose=pose, segment=segment))

        span = np.array([60.0, 60.0, 40.0, math.radians(8), math.radians(5),
                         math.radians(5)]) if mixed_config else \
            np.array([300.0, 300.0, 200.0, math.radians(40), math.radians(20),
                      math.radians(20)])
        offset = rng.uniform(0.3, 0.7, size=6)
        lower = placement_pose.as_array() - offset * span
        upper = lower + span
        bounds = PlacementBounds(lower, upper)

        scene = Scene(
            robot=robot, points=tuple(points), bounds=bounds,
            initial=Pose.from_array(bounds.midpoint()),
            solve_options={"mode": "squared", "multistart": 4, "seed": seed},
            metadata={
                "generator": "synthesize_scene",
                "seed": seed,
                "mixed_config": mixed_config,
                "ground_truth": _pose_to_deg_dict(placement_pose),
            },
            robot_name=robot.name if robot.name in _BUILTIN_ROBOTS else None)

        if not oracle.check_placement(scene, placement).feasible:
            continue
        if mixed_config:
            robust, loose = _config_sets(robot, scene.target_frames()[:2],
                                         placement, math.radians(5), 5.0)
            if not robust[0] or not robust[1] or (loose[0] & loose[1]):
                continue
        return scene
    raise SynthesisFailed(f"no valid scene after 400 attempts (seed {seed})")


def _sample_mixed_pair(robot, placement, rng, attempts: int = 400):
    """Two TCPs whose robust in-limit configuration sets are disjoint."""
    targets_a = []
    sets_a = []
    for _ in range(attempts):
        frame, _ = forward6(robot, _sample_joints(robot, rng))
        robust, loose = _config_sets(
            robot, [invert(placement) @ frame], placement,
            math.radians(5), 5.0)
        if not robust[0]:
            continue
        if targets_a:
            for frame_a, loose_a in zip(targets_a, sets_a):
                if not (loose_a & loose[0]):
                    return [frame_a, frame]
        if len(loose[0]) <= 4:  # keep candidates with few viable branches
            targets_a.append(frame)
            sets_a.append(loose[0])
    return None
