"""Forward and analytic backward transforms for 6R spherical-wrist robots.

The supported robot class is the KR6R900-style chain: six rotational joints
with twists alpha = (pi/2, 0, pi/2, -pi/2, pi/2, pi), a shoulder offset a1,
upper arm a2, elbow offset a3 and forearm d4, plus a flange offset d6. A
virtual prismatic joint sits between axes 3 and 4; its excursion v is the
minimal elongation (in absolute value) of the forearm that brings a target
wrist centre into the positional workspace, so v == 0 exactly on reachable
targets. Backward transforms are indexed by a 3-bit configuration:

    bit 0  wrist centre behind axis 1 (negative radial coordinate in the
           shoulder-azimuth frame),
    bit 1  wrist centre below the line through the axis-2 and axis-3 origins
           (negative planar cross product),
    bit 2  axis 5 negative.

Robot models are immutable after construction and all operations are pure,
so concurrent use needs no coordination.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateTarget, SingularConfiguration
from .geometry import dh_transform, invert, rot_x, wrap_angle

# Branch boundaries thinner than this count as singular.
SINGULARITY_EPS = 1e-8

_TWO_PI = 2.0 * math.pi

_ALPHA_PATTERN = (math.pi / 2, 0.0, math.pi / 2, -math.pi / 2, math.pi / 2, math.pi)


@dataclass(frozen=True)
class JointRow:
    """One Denavit-Hartenberg row; limits apply to rotational rows only."""

    kind: str  # "rot" or "prism"
    d: float = 0.0
    a: float = 0.0
    alpha: float = 0.0
    phi: float = 0.0
    lo: float = 0.0
    hi: float = 0.0


@dataclass(frozen=True, eq=False)
class RobotModel:
    """DH table (7 rows, virtual prismatic row at index 3) plus base and tool."""

    name: str
    rows: tuple[JointRow, ...]
    base: np.ndarray
    tool: np.ndarray

    def __post_init__(self):
        if len(self.rows) != 7:
            raise ValueError("expected 7 joint rows (6 rotational + virtual axis)")
        kinds = [r.kind for r in self.rows]
        if kinds != ["rot", "rot", "rot", "prism", "rot", "rot", "rot"]:
            raise ValueError("virtual prismatic row must sit between axes 3 and 4")
        prism = self.rows[3]
        if (prism.d, prism.a, prism.alpha, prism.phi) != (0.0, 0.0, 0.0, 0.0):
            raise ValueError("virtual row must have all DH constants zero")
        rot_rows = self.rotational_rows
        for i, row in enumerate(rot_rows):
            if abs(row.alpha - _ALPHA_PATTERN[i]) > 1e-9:
                raise ValueError(
                    f"axis {i + 1}: twist {row.alpha} outside the supported class")
            if row.lo >= row.hi:
                raise ValueError(f"axis {i + 1}: empty limit range")
        # Zero pattern required by the closed-form solution.
        if any(rot_rows[i].d != 0.0 for i in (1, 2, 4)):
            raise ValueError("d2, d3, d5 must be zero in the supported class")
        if any(rot_rows[i].a != 0.0 for i in (3, 4, 5)):
            raise ValueError("a4, a5, a6 must be zero in the supported class")
        if rot_rows[3].phi != 0.0 or rot_rows[4].phi != 0.0:
            raise ValueError("phi4 and phi5 must be zero in the supported class")
        if rot_rows[1].a <= 0.0:
            raise ValueError("upper-arm length a2 must be positive")

    @property
    def virtual_axis_index(self) -> int:
        return 3

    @cached_property
    def rotational_rows(self) -> tuple[JointRow, ...]:
        return tuple(r for r in self.rows if r.kind == "rot")

    @cached_property
    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        rows = self.rotational_rows
        return (np.array([r.lo for r in rows]), np.array([r.hi for r in rows]))

    @cached_property
    def _arm(self) -> dict:
        rows = self.rotational_rows
        d4 = rows[3].d
        consts = {
            "a1": rows[0].a, "d1": rows[0].d, "a2": rows[1].a,
            "a3": rows[2].a, "d4": d4, "d6": rows[5].d,
            "phi": np.array([r.phi for r in rows]),
            "l3_zero": math.hypot(rows[2].a, d4),
            "d4_sign": -1.0 if d4 < 0.0 else 1.0,
            "base_inv": invert(self.base),
            "tool_inv": invert(self.tool),
        }
        # Offset from flange origin back to the wrist centre, in flange axes.
        consts["wrist_offset"] = (rot_x(-rows[5].alpha)[:3, :3] @
                                  np.array([0.0, 0.0, rows[5].d]))
        return consts


def builtin_kr6r900() -> RobotModel:
    """KUKA KR6 R900 data-sheet model; axis 1 points down, hence the Rx(pi) base."""
    deg = math.radians
    rows = (
        JointRow("rot", d=-400.0, a=25.0, alpha=math.pi / 2, phi=0.0,
                 lo=deg(-170), hi=deg(170)),
        JointRow("rot", d=0.0, a=455.0, alpha=0.0, phi=0.0,
                 lo=deg(-190), hi=deg(45)),
        JointRow("rot", d=0.0, a=35.0, alpha=math.pi / 2, phi=-math.pi / 2,
                 lo=deg(-120), hi=deg(156)),
        JointRow("prism"),
        JointRow("rot", d=-420.0, a=0.0, alpha=-math.pi / 2, phi=0.0,
                 lo=deg(-185), hi=deg(185)),
        JointRow("rot", d=0.0, a=0.0, alpha=math.pi / 2, phi=0.0,
                 lo=deg(-120), hi=deg(120)),
        JointRow("rot", d=-80.0, a=0.0, alpha=math.pi, phi=0.0,
                 lo=deg(-350), hi=deg(350)),
    )
    return RobotModel(name="kr6r900", rows=rows, base=rot_x(math.pi), tool=np.eye(4))


# ---------------------------------------------------------------------------
# configuration bits
# ---------------------------------------------------------------------------

def config_bits(config: int) -> tuple[int, int, int]:
    """(bit0, bit1, bit2) of a configuration code in {0..7}."""
    if not 0 <= config <= 7:
        raise ValueError(f"configuration {config} outside 0..7")
    return (config & 1, (config >> 1) & 1, (config >> 2) & 1)


def config_from_bits(bit0: int, bit1: int, bit2: int) -> int:
    return bit0 + 2 * bit1 + 4 * bit2


def config_label(config: int) -> str:
    """KRL-style status string, e.g. 5 -> 'B101'."""
    if not 0 <= config <= 7:
        raise ValueError(f"configuration {config} outside 0..7")
    return f"B{config:03b}"


def config_of(robot: RobotModel, theta, strict: bool = False) -> int:
    """Configuration code of a joint vector.

    The three predicates are evaluated from the arm geometry, not from joint
    signs: the shoulder offset a1 and elbow offset a3 shift the boundaries away
    from zero angles. With strict=True the call refuses joint vectors on a
    branch boundary (wrist centre on the axis-1 line, or axis 5 at zero);
    otherwise ties resolve to the 0 bit.
    """
    arm = robot._arm
    theta = np.asarray(theta, dtype=float)
    psi = theta + arm["phi"]
    # Wrist centre in the azimuth plane of axis 1: u radial, w along base z.
    c3, s3 = math.cos(psi[2]), math.sin(psi[2])
    ex = arm["a3"] * c3 + arm["d4"] * s3
    ey = arm["a3"] * s3 - arm["d4"] * c3
    c2, s2 = math.cos(psi[1]), math.sin(psi[1])
    u = c2 * (arm["a2"] + ex) - s2 * ey
    w = s2 * (arm["a2"] + ex) + c2 * ey
    radial = u + arm["a1"]
    cross = arm["a2"] * (c2 * w - s2 * u)
    theta5 = wrap_angle(theta[4])
    if strict:
        if abs(radial) <= SINGULARITY_EPS:
            raise SingularConfiguration("wrist centre on the axis-1 line")
        if abs(theta5) <= SINGULARITY_EPS:
            raise SingularConfiguration("axis 5 at zero (wrist singularity)")
    return config_from_bits(int(radial < 0.0), int(cross < 0.0), int(theta5 < 0.0))


# ---------------------------------------------------------------------------
# forward transforms
# ---------------------------------------------------------------------------

def forward7(robot: RobotModel, q) -> np.ndarray:
    """Tool frame of the 7-axis virtual robot for q = (t1, t2, t3, v, t4, t5, t6)."""
    q = np.asarray(q, dtype=float)
    frame = robot.base
    for row, value in zip(robot.rows, q):
        if row.kind == "rot":
            frame = frame @ dh_transform(value, row.d, row.a, row.alpha, row.phi)
        else:
            frame = frame @ dh_transform(0.0, value, 0.0, 0.0)
    return frame @ robot.tool


def forward6(robot: RobotModel, theta) -> tuple[np.ndarray, int]:
    """Tool frame and configuration code of the 6R robot."""
    theta = np.asarray(theta, dtype=float)
    q = np.insert(theta, 3, 0.0)
    return forward7(robot, q), config_of(robot, theta)


def wrist_center(tcp: np.ndarray, robot: RobotModel) -> np.ndarray:
    """World position of the spherical-wrist centre for a TCP frame.

    Removes the tool transform, then walks back from the flange by the d6
    offset. Invariant under changes of the three wrist joints.
    """
    arm = robot._arm
    flange = tcp @ arm["tool_inv"]
    return flange[:3, 3] - flange[:3, :3] @ arm["wrist_offset"]


# ---------------------------------------------------------------------------
# backward transforms
# ---------------------------------------------------------------------------

def _wrist_zyz(n: np.ndarray, sign: float, phi4: float, phi6: float):
    """Angles of N = Rz(p4) Ry(p5) Rz(p6) with sin(p5) carrying the given sign."""
    s5 = math.hypot(n[0, 2], n[1, 2])
    if s5 > SINGULARITY_EPS:
        psi5 = math.atan2(s5, n[2, 2]) * sign
        psi4 = math.atan2(sign * n[1, 2], sign * n[0, 2])
        psi6 = math.atan2(sign * n[2, 1], -sign * n[2, 0])
        return wrap_angle(psi4 - phi4), psi5, wrap_angle(psi6 - phi6)
    # Wrist singularity: fold the whole rotation into axis 6.
    if n[2, 2] > 0.0:
        return 0.0, 0.0, wrap_angle(math.atan2(n[1, 0], n[0, 0]) - phi6)
    return 0.0, math.pi, wrap_angle(math.atan2(n[0, 1], n[1, 1]) - phi6)


def backward7_all(robot: RobotModel, target: np.ndarray) -> np.ndarray:
    """All eight virtual-robot solutions for a target TCP frame, as an (8, 7) array.

    Row c holds (t1, t2, t3, v, t4, t5, t6) for configuration c. The virtual
    excursion v is zero exactly when the wrist centre is positionally reachable
    for the shoulder branch of c; otherwise it is the minimal |v| restoring the
    planar triangle. Axis limits are deliberately not applied here.

    Raises DegenerateTarget when the wrist centre lies on the axis-1 line (both
    shoulder branches undefined) or collapses onto the shoulder point.
    """
    return _backward7_subset(robot, target, (0, 1), (0, 1), (0, 1))


def _backward7_subset(robot, target, bits0, bits1, bits2) -> np.ndarray:
    """Shared branch machinery; only the requested bit combinations are solved.

    Returns the full (8, 7) array with unsolved rows left unset.
    """
    arm = robot._arm
    flange = arm["base_inv"] @ target @ arm["tool_inv"]
    rot_f = flange[:3, :3]
    pw = flange[:3, 3] - rot_f @ arm["wrist_offset"]

    rho = math.hypot(pw[0], pw[1])
    if rho <= SINGULARITY_EPS:
        raise DegenerateTarget("wrist centre on the axis-1 line")
    azimuth = math.atan2(pw[1], pw[0])

    a1, a2, a3, d4 = arm["a1"], arm["a2"], arm["a3"], arm["d4"]
    phi = arm["phi"]
    out = np.empty((8, 7))

    for bit0 in bits0:
        psi1 = azimuth if bit0 == 0 else wrap_angle(azimuth + math.pi)
        theta1 = wrap_angle(psi1 - phi[0])
        u = (rho if bit0 == 0 else -rho) - a1
        w = pw[2] - arm["d1"]
        dist = math.hypot(u, w)
        if dist <= SINGULARITY_EPS:
            raise DegenerateTarget("wrist centre coincides with the shoulder")

        # Minimal-|v| forearm stretch: clamp the natural link-3 length into
        # the interval where the planar triangle (dist, a2, l3) closes.
        l3_lo = max(a3, abs(dist - a2))
        l3_hi = dist + a2
        if l3_lo <= arm["l3_zero"] <= l3_hi:
            l3, g, v = arm["l3_zero"], d4, 0.0
        else:
            l3 = min(max(arm["l3_zero"], l3_lo), l3_hi)
            g = arm["d4_sign"] * math.sqrt(max(l3 * l3 - a3 * a3, 0.0))
            v = g - d4

        sin_elbow = (dist * dist - a2 * a2 - l3 * l3) / (2.0 * a2 * l3)
        sin_elbow = min(1.0, max(-1.0, sin_elbow))
        cos_mag = math.sqrt(max(1.0 - sin_elbow * sin_elbow, 0.0))
        delta = math.atan2(a3, g)
        azim_uw = math.atan2(w, u)

        for bit1 in bits1:
            cos_elbow = cos_mag if bit1 == 1 else -cos_mag
            psi3 = wrap_angle(math.atan2(sin_elbow, cos_elbow) - delta)
            theta3 = wrap_angle(psi3 - phi[2])
            ex = a3 * math.cos(psi3) + g * math.sin(psi3)
            ey = a3 * math.sin(psi3) - g * math.cos(psi3)
            psi2 = wrap_angle(azim_uw - math.atan2(ey, a2 + ex))
            theta2 = wrap_angle(psi2 - phi[1])

            # Orientation remainder N = R3^T R_flange Rx(-alpha6) is a plain
            # Z-Y-Z rotation in the wrist angles.
            c1, s1 = math.cos(psi1), math.sin(psi1)
            c23 = math.cos(psi2 + psi3)
            s23 = math.sin(psi2 + psi3)
            # R3 columns in root coordinates (alpha1 = alpha3 = pi/2 exactly).
            r3 = np.array([
                [c1 * c23, s1, c1 * s23],
                [s1 * c23, -c1, s1 * s23],
                [s23, 0.0, -c23],
            ])
            n = r3.T @ rot_f @ rot_x(-robot.rotational_rows[5].alpha)[:3, :3]
            for bit2 in bits2:
                theta4, theta5, theta6 = _wrist_zyz(
                    n, 1.0 if bit2 == 0 else -1.0, phi[3], phi[5])
                out[config_from_bits(bit0, bit1, bit2)] = (
                    theta1, theta2, theta3, v, theta4, theta5, theta6)
    return out


def backward7(robot: RobotModel, target: np.ndarray, config: int) -> np.ndarray:
    """Virtual-robot solution for one configuration; see backward7_all."""
    bit0, bit1, bit2 = config_bits(config)
    return _backward7_subset(robot, target, (bit0,), (bit1,), (bit2,))[config]


def _limit_representative(theta: float, lo: float, hi: float) -> float | None:
    """In-limit 2pi-representative of theta, preferring the canonical one."""
    for k in (0.0, -1.0, 1.0):
        candidate = theta + k * _TWO_PI
        if lo <= candidate <= hi:
            return candidate
    return None


def backward6(robot: RobotModel, target: np.ndarray, config: int,
              ignore_limits: bool = False):
    """6R backward transform for one configuration.

    Returns the joint vector, or None when the target is unreachable with this
    configuration: either the wrist centre is outside the positional workspace
    (the virtual axis would have to stretch) or no 2pi-representative of some
    joint fits its limit range. With ignore_limits=True only the workspace
    test applies and joints come back canonically wrapped.
    """
    q = backward7(robot, target, config)
    if q[3] != 0.0:
        return None
    theta = q[[0, 1, 2, 4, 5, 6]]
    if ignore_limits:
        return theta
    lo, hi = robot.limits
    out = np.empty(6)
    for i in range(6):
        rep = _limit_representative(theta[i], lo[i], hi[i])
        if rep is None:
            return None
        out[i] = rep
    return out


def axis_violation(theta: float, theta_min: float, theta_max: float) -> float:
    """Distance (rad) from the nearest in-limit 2pi-representative of theta."""
    best = math.inf
    for k in (-1.0, 0.0, 1.0):
        candidate = theta + k * _TWO_PI
        hinge = max(theta_min - candidate, candidate - theta_max, 0.0)
        best = min(best, hinge)
    return best


def axis_violations(robot: RobotModel, theta) -> np.ndarray:
    """Per-axis limit violations of a 6R joint vector."""
    lo, hi = robot.limits
    return np.array([axis_violation(float(t), lo[i], hi[i])
                     for i, t in enumerate(theta)])
