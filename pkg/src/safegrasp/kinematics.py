"""Forward/inverse kinematics and joint-speed checking for a 6-DOF serial arm.

The arm is described by standard DH parameters; the default geometry is the
published table for a UR5-class manipulator.  Inverse kinematics is a
position-only damped-least-squares iteration with iterates projected onto the
joint limits; failure is reported as a status, never raised, because command
rejection is a normal runtime event for the environment's safety shield.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels

TWO_PI = 2.0 * np.pi

# Published DH table (a, d, alpha, theta_offset) for a UR5-class arm.
UR5_DH = (
    (0.0, 0.089159, np.pi / 2.0, 0.0),
    (-0.425, 0.0, 0.0, 0.0),
    (-0.39225, 0.0, 0.0, 0.0),
    (0.0, 0.10915, np.pi / 2.0, 0.0),
    (0.0, 0.09465, -np.pi / 2.0, 0.0),
    (0.0, 0.0823, 0.0, 0.0),
)

DEFAULT_MAX_JOINT_SPEED = 2.97  # rad/s, per-joint command rejection threshold
DEFAULT_IK_DAMPING = 0.05
DEFAULT_IK_TOLERANCE = 1.0e-4
DEFAULT_IK_MAX_ITERATIONS = 200


class IkStatus(Enum):
    CONVERGED = "converged"
    UNREACHABLE = "unreachable"
    LIMIT_VIOLATION = "limit_violation"


@dataclass(frozen=True)
class ArmModel:
    """Serial-arm description: DH rows, joint limits and the speed limit."""

    dh: np.ndarray  # (6, 4) rows of a, d, alpha, theta_offset
    joint_limits: np.ndarray  # (6, 2) min/max in rad
    max_joint_speed: float = DEFAULT_MAX_JOINT_SPEED
    ik_damping: float = DEFAULT_IK_DAMPING
    ik_tolerance: float = DEFAULT_IK_TOLERANCE
    ik_max_iterations: int = DEFAULT_IK_MAX_ITERATIONS

    def __post_init__(self):
        dh = np.ascontiguousarray(np.asarray(self.dh, dtype=np.float64))
        limits = np.ascontiguousarray(
            np.asarray(self.joint_limits, dtype=np.float64)
        )
        if dh.shape != (6, 4):
            raise ValueError(f"dh must have shape (6, 4), got {dh.shape}")
        if limits.shape != (6, 2):
            raise ValueError(
                f"joint_limits must have shape (6, 2), got {limits.shape}"
            )
        if not np.all(np.isfinite(dh)) or not np.all(np.isfinite(limits)):
            raise ValueError("arm model parameters must be finite")
        if not np.all(limits[:, 0] < limits[:, 1]):
            raise ValueError("each joint limit must satisfy min < max")
        if not self.max_joint_speed > 0.0:
            raise ValueError("max_joint_speed must be positive")
        if not self.ik_damping > 0.0:
            raise ValueError("ik_damping must be positive")
        if self.ik_max_iterations < 1:
            raise ValueError("ik_max_iterations must be >= 1")
        object.__setattr__(self, "dh", dh)
        object.__setattr__(self, "joint_limits", limits)

    @classmethod
    def default_ur5(cls, **overrides) -> "ArmModel":
        # continuous joints are bounded to +-2*pi to keep IK iterates bounded
        limits = np.tile((-TWO_PI, TWO_PI), (6, 1))
        return cls(dh=np.array(UR5_DH), joint_limits=limits, **overrides)

    def clamp_to_limits(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def within_limits(self, q: np.ndarray) -> bool:
        return bool(
            np.all(q >= self.joint_limits[:, 0])
            and np.all(q <= self.joint_limits[:, 1])
        )


@dataclass(frozen=True)
class Pose:
    """Position plus unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0])
    )

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        quat = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > 1.0e-9:
            if norm == 0.0:
                raise ValueError("orientation quaternion must be nonzero")
            quat = quat / norm
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat)


@dataclass(frozen=True)
class IkResult:
    status: IkStatus
    solution: np.ndarray | None
    residual: float
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status is IkStatus.CONVERGED


@dataclass(frozen=True)
class SpeedCheck:
    ok: bool
    max_rate: float  # rad/s, largest per-joint rate of the command


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to a (w, x, y, z) unit quaternion."""
    m = np.asarray(rot, dtype=np.float64)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = np.sqrt(trace + 1.0) * 2.0
        quat = np.array(
            [
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            ]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        quat = np.array(
            [
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            ]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        quat = np.array(
            [
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            ]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        quat = np.array(
            [
                (m[1, 0] - m[0, 1]) / s,
                (m[0, 2] + m[2, 0]) / s,
                (m[1, 2] + m[2, 1]) / s,
                0.25 * s,
            ]
        )
    return quat / np.linalg.norm(quat)


def forward_kinematics(model: ArmModel, q: np.ndarray) -> Pose:
    """End-effector pose from the DH chain product."""
    q = np.ascontiguousarray(np.asarray(q, dtype=np.float64).reshape(6))
    if not np.all(np.isfinite(q)):
        raise ValueError("joint vector must be finite")
    rot, origins, _ = kernels.fk_frames(model.dh, q)
    return Pose(position=origins[6].copy(), orientation=rotation_to_quaternion(rot))


def eef_position(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """End-effector position only (cheaper path used by the environment)."""
    q = np.ascontiguousarray(np.asarray(q, dtype=np.float64).reshape(6))
    _, origins, _ = kernels.fk_frames(model.dh, q)
    return origins[6].copy()


def inverse_kinematics(model: ArmModel, target: Pose, seed: np.ndarray) -> IkResult:
    """Damped-least-squares IK for the target position.

    Orientation is not part of the objective: the arm commands the grasp tool
    point in position only, so the solver drives the 3-dim position error
    with the geometric position Jacobian.  A failure to converge is reported
    as ``UNREACHABLE``, or ``LIMIT_VIOLATION`` when the best iterate was
    pinned at a joint limit.
    """
    seed = np.ascontiguousarray(np.asarray(seed, dtype=np.float64).reshape(6))
    if not model.within_limits(seed):
        raise ValueError("IK seed must lie within joint limits")
    target_pos = np.ascontiguousarray(target.position)
    q_best, residual, iterations, clamped, converged = kernels.ik_dls(
        model.dh,
        model.joint_limits,
        seed,
        target_pos,
        model.ik_damping,
        model.ik_tolerance,
        model.ik_max_iterations,
    )
    if converged:
        return IkResult(
            status=IkStatus.CONVERGED,
            solution=q_best,
            residual=float(residual),
            iterations=int(iterations),
        )
    status = IkStatus.LIMIT_VIOLATION if clamped else IkStatus.UNREACHABLE
    return IkResult(
        status=status, solution=None, residual=float(residual), iterations=int(iterations)
    )


def check_speed(
    prev: np.ndarray, next_q: np.ndarray, dt: float, model: ArmModel
) -> SpeedCheck:
    """Per-joint rate check against the arm's speed limit."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    prev = np.asarray(prev, dtype=np.float64).reshape(6)
    next_q = np.asarray(next_q, dtype=np.float64).reshape(6)
    max_rate = float(np.max(np.abs(next_q - prev)) / dt)
    return SpeedCheck(ok=max_rate <= model.max_joint_speed, max_rate=max_rate)
