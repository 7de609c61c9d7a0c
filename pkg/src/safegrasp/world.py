"""Scene geometry, end-effector collision detection and disturbance injection.

The end effector is modelled as a single sphere at the tool point; contacts
against the table plane, the cube, the optional bar obstacle and the inner
walls of the workspace box are analytic signed-distance tests.  A contact at
zero penetration (touching) counts as contact so the boundary case is
deterministic.

The impact pseudo-force is linear in the approach speed along the contact
normal.  With the default workcell stiffness of 400 N*s/m the safety-rated
reduced speed of 0.25 m/s maps exactly onto the 100 N hard-failure threshold,
which keeps the two runtime limits mutually consistent.  The manipulated cube
is a light object and carries its own, much softer stiffness: pushing it
around is penalised, not force-lethal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import kernels

DEFAULT_CONTACT_STIFFNESS = 400.0  # N*s/m, chosen so 0.25 m/s -> 100 N
DEFAULT_CUBE_STIFFNESS = 40.0  # N*s/m, light object: contact cannot reach 100 N
DEFAULT_EEF_RADIUS = 0.02


class Body(Enum):
    TABLE = "table"
    CUBE = "cube"
    OBSTACLE = "obstacle"
    WORKSPACE_BOUND = "workspace_bound"


# detection order is fixed so reports are order-stable
_BODY_ORDER = (Body.TABLE, Body.CUBE, Body.OBSTACLE, Body.WORKSPACE_BOUND)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and half extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        half = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if not np.all(half > 0.0):
            raise ValueError("box half extents must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extents", half)

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.half_extents


@dataclass(frozen=True)
class ContactReport:
    body: Body
    penetration: float  # m, >= 0; zero for a touching contact
    impact_speed: float  # m/s, approach speed along the contact normal
    force: float  # N, stiffness * impact_speed


@dataclass(frozen=True)
class DisturbanceSpec:
    """Assessment perturbation: raise the surface, enlarge the object."""

    surface_height_delta: float = 0.0
    object_size_delta: float = 0.0

    def __post_init__(self):
        if not (
            np.isfinite(self.surface_height_delta)
            and np.isfinite(self.object_size_delta)
        ):
            raise ValueError("disturbance deltas must be finite")

    def negated(self) -> "DisturbanceSpec":
        return DisturbanceSpec(-self.surface_height_delta, -self.object_size_delta)


@dataclass(frozen=True)
class Scene:
    """Immutable scene value.

    Geometry is stored as nominal values plus accumulated disturbance
    offsets, so applying a disturbance followed by its negation restores the
    original scene exactly, field by field.
    """

    nominal_table_height: float
    workspace_min: np.ndarray
    workspace_max: np.ndarray
    cube_center: np.ndarray
    nominal_cube_half_extents: np.ndarray
    obstacle_center: np.ndarray | None = None
    obstacle_half_extents: np.ndarray | None = None
    surface_offset: float = 0.0
    cube_size_offset: float = 0.0
    contact_stiffness: float = DEFAULT_CONTACT_STIFFNESS
    cube_stiffness: float = DEFAULT_CUBE_STIFFNESS

    def __post_init__(self):
        ws_min = np.asarray(self.workspace_min, dtype=np.float64).reshape(3)
        ws_max = np.asarray(self.workspace_max, dtype=np.float64).reshape(3)
        if not np.all(ws_min < ws_max):
            raise ValueError("workspace bounds must satisfy min < max")
        cube_center = np.asarray(self.cube_center, dtype=np.float64).reshape(3)
        cube_half = np.asarray(
            self.nominal_cube_half_extents, dtype=np.float64
        ).reshape(3)
        if not np.all(cube_half > 0.0):
            raise ValueError("cube half extents must be positive")
        if not self.contact_stiffness > 0.0 or not self.cube_stiffness > 0.0:
            raise ValueError("contact stiffnesses must be positive")
        object.__setattr__(self, "workspace_min", ws_min)
        object.__setattr__(self, "workspace_max", ws_max)
        object.__setattr__(self, "cube_center", cube_center)
        object.__setattr__(self, "nominal_cube_half_extents", cube_half)
        if (self.obstacle_center is None) != (self.obstacle_half_extents is None):
            raise ValueError("obstacle center and half extents must come together")
        if self.obstacle_center is not None:
            oc = np.asarray(self.obstacle_center, dtype=np.float64).reshape(3)
            oh = np.asarray(self.obstacle_half_extents, dtype=np.float64).reshape(3)
            if not np.all(oh > 0.0):
                raise ValueError("obstacle half extents must be positive")
            object.__setattr__(self, "obstacle_center", oc)
            object.__setattr__(self, "obstacle_half_extents", oh)

    def validate_containment(self) -> "Scene":
        """Check the resting geometry fits the workspace.

        This is a reset/disturbance-time invariant: a cube carried by the
        tool point may travel anywhere the tool does.
        """
        for box in filter(None, (self.cube, self.obstacle)):
            if np.any(box.min_corner < self.workspace_min) or np.any(
                box.max_corner > self.workspace_max
            ):
                raise ValueError("scene object escapes the workspace bounds")
        if not (
            self.workspace_min[2] <= self.table_height <= self.workspace_max[2]
        ):
            raise ValueError("table height escapes the workspace bounds")
        return self

    @property
    def table_height(self) -> float:
        return self.nominal_table_height + self.surface_offset

    @property
    def cube_half_extents(self) -> np.ndarray:
        return self.nominal_cube_half_extents + 0.5 * self.cube_size_offset

    @property
    def cube(self) -> Box:
        return Box(center=self.cube_center, half_extents=self.cube_half_extents)

    @property
    def obstacle(self) -> Box | None:
        if self.obstacle_center is None:
            return None
        return Box(center=self.obstacle_center, half_extents=self.obstacle_half_extents)

    @property
    def obstacle_present(self) -> bool:
        return self.obstacle_center is not None

    def cube_rest_height(self) -> float:
        """Cube center z when the cube rests on the table."""
        return self.table_height + self.cube_half_extents[2]

    def with_cube_center(self, center: np.ndarray) -> "Scene":
        return replace(self, cube_center=np.asarray(center, dtype=np.float64).reshape(3))


def contact_force(impact_speed: float, stiffness: float) -> float:
    """Linear impact model: force = stiffness * approach speed."""
    if impact_speed < 0.0:
        raise ValueError("impact_speed must be >= 0")
    if not stiffness > 0.0:
        raise ValueError("stiffness must be positive")
    return stiffness * impact_speed


def _approach_speed(velocity: np.ndarray, normal: np.ndarray) -> float:
    # component of the velocity driving into the surface, clamped at zero
    return max(0.0, -float(np.dot(velocity, normal)))


def detect_collisions(
    scene: Scene,
    eef_center: np.ndarray,
    eef_radius: float,
    eef_velocity: np.ndarray,
) -> list[ContactReport]:
    """One report per penetrated (or touching) body, in fixed body order."""
    if not eef_radius > 0.0:
        raise ValueError("eef_radius must be positive")
    center = np.asarray(eef_center, dtype=np.float64).reshape(3)
    velocity = np.asarray(eef_velocity, dtype=np.float64).reshape(3)
    reports: list[ContactReport] = []
    for body in _BODY_ORDER:
        if body is Body.TABLE:
            clearance = float(center[2] - scene.table_height)
            if clearance > eef_radius:
                continue
            normal = np.array([0.0, 0.0, 1.0])
            penetration = eef_radius - clearance
        elif body in (Body.CUBE, Body.OBSTACLE):
            box = scene.cube if body is Body.CUBE else scene.obstacle
            if box is None:
                continue
            sd, nx, ny, nz = kernels.sphere_box_signed_distance(
                center, box.center, box.half_extents
            )
            if sd > eef_radius:
                continue
            normal = np.array([nx, ny, nz])
            penetration = eef_radius - float(sd)
        else:  # workspace bound: sphere touching the box walls from inside
            pen_best = -np.inf
            normal = None
            for axis in range(3):
                low_pen = scene.workspace_min[axis] - (center[axis] - eef_radius)
                if low_pen >= 0.0 and low_pen > pen_best:
                    pen_best = low_pen
                    normal = np.zeros(3)
                    normal[axis] = 1.0  # wall pushes back inward (+axis)
                high_pen = (center[axis] + eef_radius) - scene.workspace_max[axis]
                if high_pen >= 0.0 and high_pen > pen_best:
                    pen_best = high_pen
                    normal = np.zeros(3)
                    normal[axis] = -1.0
            if normal is None:
                continue
            penetration = float(pen_best)
        impact = _approach_speed(velocity, normal)
        stiffness = (
            scene.cube_stiffness if body is Body.CUBE else scene.contact_stiffness
        )
        reports.append(
            ContactReport(
                body=body,
                penetration=penetration,
                impact_speed=impact,
                force=contact_force(impact, stiffness),
            )
        )
    return reports


def signed_clearances(
    scene: Scene, eef_center: np.ndarray, eef_radius: float
) -> dict[Body, float]:
    """Distance from the sphere surface to each body (negative inside)."""
    center = np.asarray(eef_center, dtype=np.float64).reshape(3)
    out = {Body.TABLE: float(center[2] - scene.table_height) - eef_radius}
    sd, _, _, _ = kernels.sphere_box_signed_distance(
        center, scene.cube_center, scene.cube_half_extents
    )
    out[Body.CUBE] = float(sd) - eef_radius
    if scene.obstacle_present:
        sd, _, _, _ = kernels.sphere_box_signed_distance(
            center, scene.obstacle_center, scene.obstacle_half_extents
        )
        out[Body.OBSTACLE] = float(sd) - eef_radius
    return out


def apply_disturbance(scene: Scene, spec: DisturbanceSpec) -> Scene:
    """Raise the surface and enlarge the cube; the cube is re-seated.

    The obstacle is deliberately left untouched: the disturbance protocol
    perturbs the work surface and the manipulated object only.
    """
    disturbed = replace(
        scene,
        surface_offset=scene.surface_offset + spec.surface_height_delta,
        cube_size_offset=scene.cube_size_offset + spec.object_size_delta,
    )
    new_center = disturbed.cube_center.copy()
    new_center[2] = disturbed.cube_rest_height()
    return disturbed.with_cube_center(new_center).validate_containment()
