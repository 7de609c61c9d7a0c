"""Episodic grasp environment: shielded stepping, rewards, termination.

Each step runs the command pipeline: clamp the action, solve IK for the
commanded tool position, reject the command when IK fails or the joint-space
speed limit would be exceeded (soft constraints: the joints hold), otherwise
move; then detect contacts, process the gripper, and score the transition.

Hard constraints terminate the episode: any contact with the workcell (table
or workspace wall) or a contact force above the failure threshold.  Success
(cube lifted clear of the surface) also terminates; running out of the step
budget truncates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum

import numpy as np

from .kinematics import (
    ArmModel,
    IkStatus,
    Pose,
    check_speed,
    eef_position,
    inverse_kinematics,
)
from .world import (
    Body,
    DisturbanceSpec,
    Scene,
    apply_disturbance,
    detect_collisions,
    signed_clearances,
)

OBSERVATION_DIM = 17
ACTION_DIM = 4

# fixed downward-facing grasp orientation commanded to IK (position-only
# objective; the value documents the tool convention)
DOWN_QUAT = (0.0, 1.0, 0.0, 0.0)

# seed configuration from which the home joint vector is solved
READY_SEED = (0.0, -np.pi / 2.0, np.pi / 2.0, -np.pi / 2.0, -np.pi / 2.0, 0.0)


class RewardMode(Enum):
    DRL = "drl"
    SD_DRL = "sd-drl"


class Scenario(Enum):
    NORMAL = "normal"
    STATIC_OBSTACLE = "obstacle"


def _as_scenario(value) -> Scenario:
    if isinstance(value, Scenario):
        return value
    try:
        return Scenario(str(value).strip().lower())
    except ValueError:
        raise ValueError(
            f"unknown scenario {value!r}; expected 'normal' or 'obstacle'"
        ) from None


def _as_reward_mode(value) -> RewardMode:
    if isinstance(value, RewardMode):
        return value
    try:
        return RewardMode(str(value).strip().lower())
    except ValueError:
        raise ValueError(
            f"unknown reward mode {value!r}; expected 'drl' or 'sd-drl'"
        ) from None


@dataclass(frozen=True)
class RewardConfig:
    """Dense reward coefficients and runtime safety thresholds.

    Costs are stored as the negative values they contribute; each one is
    added once per step when its triggering event fires.
    """

    mode: RewardMode = RewardMode.SD_DRL
    speed_cost: float = -0.5
    coll_cost: float = -5.0
    cube_coll_cost: float = -0.01
    obstacle_coll_cost: float = -0.5
    coll_vel_cost: float = -0.5
    gripper_cost: float = -0.01
    grip_rew: float = 5.0
    grip_prop_rew: float = 10.0
    ik_cost: float = -0.5
    collision_velocity_threshold: float = 0.25  # m/s, safety-rated reduced speed
    force_failure_threshold: float = 100.0  # N, hard-failure limit

    def __post_init__(self):
        object.__setattr__(self, "mode", _as_reward_mode(self.mode))
        for name in (
            "speed_cost",
            "coll_cost",
            "cube_coll_cost",
            "obstacle_coll_cost",
            "coll_vel_cost",
            "gripper_cost",
            "ik_cost",
        ):
            if getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be <= 0")
        for name in ("grip_rew", "grip_prop_rew"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("collision_velocity_threshold", "force_failure_threshold"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["mode"] = self.mode.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown reward config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EnvConfig:
    action_scale: float = 0.02  # m per step per axis at full deflection
    dt: float = 0.05  # s per control step
    max_steps: int = 200
    grasp_radius: float = 0.01  # m, secure-grasp distance to the cube center
    lift_height: float = 0.05  # m above rest height for task success
    proximity_threshold: float = 0.10  # m, "near a body" for the speed counter

    def __post_init__(self):
        if not (
            self.action_scale > 0.0
            and self.dt > 0.0
            and self.max_steps >= 1
            and self.grasp_radius > 0.0
            and self.lift_height > 0.0
            and self.proximity_threshold > 0.0
        ):
            raise ValueError("invalid environment configuration")


@dataclass(frozen=True)
class SceneConfig:
    """Nominal scene geometry and reset sampling regions."""

    table_height: float = -0.1
    workspace_min: tuple = (0.10, -0.38, -0.18)
    workspace_max: tuple = (0.78, 0.38, 0.45)
    cube_half_extent: float = 0.025
    cube_region_min: tuple = (0.45, -0.15)
    cube_region_max: tuple = (0.62, 0.15)
    obstacle_half_extents: tuple = (0.025, 0.20, 0.025)
    obstacle_region_min: tuple = (0.34, -0.05)
    obstacle_region_max: tuple = (0.40, 0.05)
    contact_stiffness: float = 400.0
    cube_stiffness: float = 40.0
    eef_radius: float = 0.02
    home_position: tuple = (0.30, 0.0, 0.15)

    def __post_init__(self):
        if not self.cube_half_extent > 0.0:
            raise ValueError("cube_half_extent must be positive")
        if not self.eef_radius > 0.0:
            raise ValueError("eef_radius must be positive")
        if not self.contact_stiffness > 0.0 or not self.cube_stiffness > 0.0:
            raise ValueError("contact stiffnesses must be positive")


@dataclass(frozen=True)
class Action:
    """4-dim end-effector command; components are clamped to [-1, 1].

    ``gripper >= 0`` commands the gripper closed, ``< 0`` open.
    """

    delta_position: np.ndarray
    gripper: float

    def __post_init__(self):
        delta = np.asarray(self.delta_position, dtype=np.float64).reshape(3)
        object.__setattr__(self, "delta_position", delta)
        object.__setattr__(self, "gripper", float(self.gripper))

    def clamped(self) -> "Action":
        return Action(
            delta_position=np.clip(self.delta_position, -1.0, 1.0),
            gripper=min(1.0, max(-1.0, self.gripper)),
        )

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.delta_position, [self.gripper]])

    @classmethod
    def from_array(cls, arr) -> "Action":
        arr = np.asarray(arr, dtype=np.float64).reshape(ACTION_DIM)
        return cls(delta_position=arr[:3], gripper=float(arr[3]))


def as_action(value) -> Action:
    if isinstance(value, Action):
        return value
    return Action.from_array(value)


@dataclass(frozen=True)
class Observation:
    eef_position: np.ndarray
    eef_velocity: np.ndarray
    gripper_aperture: float  # 0 closed .. 1 open
    cube_position: np.ndarray
    cube_relative: np.ndarray  # cube - eef, exactly
    obstacle_position: np.ndarray  # zeros when no obstacle is present
    grasped: bool

    @property
    def vector(self) -> np.ndarray:
        out = np.empty(OBSERVATION_DIM)
        out[0:3] = self.eef_position
        out[3:6] = self.eef_velocity
        out[6] = self.gripper_aperture
        out[7:10] = self.cube_position
        out[10:13] = self.cube_relative
        out[13:16] = self.obstacle_position
        out[16] = 1.0 if self.grasped else 0.0
        return out


@dataclass
class TransitionEvents:
    """Per-step events that drive the reward terms and violation counters."""

    distance_d: float = 0.0
    grasp_success: bool = False  # secure grasp contact made this step
    lift_success: bool = False  # grasped cube raised clear: task success
    grasp_attempt_failed: bool = False
    speed_violation: bool = False
    ik_failure: bool = False
    collision_env: bool = False  # table or workspace wall contact
    collision_cube: bool = False
    collision_obstacle: bool = False
    collision_velocity_exceeded: bool = False
    velocity_violation: bool = False  # over the reduced speed near a body
    collision_force: float = 0.0
    collision_impact_speed: float = 0.0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TransitionEvents":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown event fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    terminated: bool
    truncated: bool
    events: TransitionEvents


def check_grasp(
    eef_position: np.ndarray,
    gripper_closing: bool,
    gripper_was_open: bool,
    already_grasped: bool,
    cube_center: np.ndarray,
    cube_rest_height: float,
    grasp_radius: float,
    lift_height: float,
):
    """Grasp-state transition for one step.

    Fingers commanded shut enclose the cube whenever the tool point is within
    ``grasp_radius`` of its center; a miss is penalised only on the
    open->closed transition.  A held cube follows the tool point, so the lift
    test reads the prospective cube height.

    Returns ``(grasp_success, grasp_attempt_failed, lifted, now_grasped)``.
    """
    grasp_success = False
    grasp_attempt_failed = False
    now_grasped = already_grasped
    if gripper_closing and not already_grasped:
        distance = float(np.linalg.norm(np.asarray(cube_center) - eef_position))
        if distance <= grasp_radius:
            grasp_success = True
            now_grasped = True
        elif gripper_was_open:
            grasp_attempt_failed = True
    elif not gripper_closing:
        now_grasped = False
    held_height = eef_position[2] if now_grasped else cube_center[2]
    lifted = now_grasped and (held_height - cube_rest_height >= lift_height)
    return grasp_success, grasp_attempt_failed, lifted, now_grasped


def compute_reward(events: TransitionEvents, config: RewardConfig) -> float:
    """Score one transition.

    Both modes share the distance drive, the grasp rewards and the
    failed-grasp penalty; the safety-driven mode additionally adds each
    stored (negative) safety cost once per triggering event.
    """
    reward = -events.distance_d
    if events.grasp_success:
        reward += config.grip_rew
    if events.lift_success:
        reward += config.grip_prop_rew
    if config.mode is RewardMode.SD_DRL:
        if events.speed_violation:
            reward += config.speed_cost
        if events.collision_env:
            reward += config.coll_cost
        if events.collision_cube:
            reward += config.cube_coll_cost
    if events.grasp_attempt_failed:
        reward += config.gripper_cost
    if config.mode is RewardMode.SD_DRL:
        if events.collision_velocity_exceeded:
            reward += config.coll_vel_cost
        if events.collision_obstacle:
            reward += config.obstacle_coll_cost
        if events.ik_failure:
            reward += config.ik_cost
    return reward


class GraspEnv:
    """Single-threaded episodic environment instance."""

    def __init__(
        self,
        arm: ArmModel | None = None,
        scene_config: SceneConfig | None = None,
        env_config: EnvConfig | None = None,
        reward_config: RewardConfig | None = None,
    ):
        self.arm = arm if arm is not None else ArmModel.default_ur5()
        self.scene_config = scene_config if scene_config is not None else SceneConfig()
        self.env_config = env_config if env_config is not None else EnvConfig()
        self.reward_config = (
            reward_config if reward_config is not None else RewardConfig()
        )
        self._home_q: np.ndarray | None = None
        self._log_writer = None
        self._episode_index = -1
        self._done = True
        self._scene: Scene | None = None

    # -- setup ------------------------------------------------------------

    def set_log_writer(self, writer) -> None:
        """Attach an object with a ``write_step(record: dict)`` method."""
        self._log_writer = writer

    def _resolve_home(self) -> np.ndarray:
        if self._home_q is None:
            target = Pose(
                position=np.asarray(self.scene_config.home_position),
                orientation=np.asarray(DOWN_QUAT),
            )
            result = inverse_kinematics(
                self.arm, target, np.asarray(READY_SEED, dtype=np.float64)
            )
            if not result.converged:
                raise ValueError(
                    "home position is not reachable with the configured arm: "
                    f"status={result.status.value}, residual={result.residual:.4g}"
                )
            self._home_q = result.solution
        return self._home_q

    def _sample_scene(self, rng: np.random.Generator, scenario: Scenario) -> Scene:
        cfg = self.scene_config
        half = float(cfg.cube_half_extent)
        obstacle_center = None
        obstacle_half = None
        if scenario is Scenario.STATIC_OBSTACLE:
            obstacle_half = np.asarray(cfg.obstacle_half_extents, dtype=np.float64)
            oxy = rng.uniform(cfg.obstacle_region_min, cfg.obstacle_region_max)
            obstacle_center = np.array(
                [oxy[0], oxy[1], cfg.table_height + obstacle_half[2]]
            )
        for _ in range(100):
            cxy = rng.uniform(cfg.cube_region_min, cfg.cube_region_max)
            cube_center = np.array([cxy[0], cxy[1], cfg.table_height + half])
            if obstacle_center is None:
                break
            gap = np.abs(cube_center - obstacle_center) - (half + obstacle_half)
            if np.any(gap > 0.0):
                break
        else:
            raise ValueError(
                "could not place the cube clear of the obstacle; check the "
                "configured sampling regions"
            )
        return Scene(
            nominal_table_height=cfg.table_height,
            workspace_min=np.asarray(cfg.workspace_min),
            workspace_max=np.asarray(cfg.workspace_max),
            cube_center=cube_center,
            nominal_cube_half_extents=np.full(3, half),
            obstacle_center=obstacle_center,
            obstacle_half_extents=obstacle_half,
            contact_stiffness=cfg.contact_stiffness,
            cube_stiffness=cfg.cube_stiffness,
        ).validate_containment()

    # -- episode API -------------------------------------------------------

    def reset(
        self,
        seed: int | None = None,
        scenario: Scenario | str = Scenario.NORMAL,
        disturbance: DisturbanceSpec | None = None,
    ) -> Observation:
        scenario = _as_scenario(scenario)
        rng = np.random.default_rng(seed)
        scene = self._sample_scene(rng, scenario)
        if disturbance is not None:
            scene = apply_disturbance(scene, disturbance)
        self._scene = scene
        self._scenario = scenario
        self._q = self._resolve_home().copy()
        self._eef = eef_position(self.arm, self._q)
        self._eef_velocity = np.zeros(3)
        self._aperture = 1.0
        self._grasped = False
        self._step_count = 0
        self._episode_index += 1
        self._done = False
        return self._observation()

    def step(self, action) -> StepResult:
        if self._scene is None:
            raise RuntimeError("step() called before reset()")
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        act = as_action(action).clamped()
        cfg = self.env_config
        events = TransitionEvents()
        prev_eef = self._eef

        # 1-3: command shield -- IK then joint-speed check; rejected commands
        # leave the joint vector untouched
        target = prev_eef + act.delta_position * cfg.action_scale
        ik = inverse_kinematics(
            self.arm,
            Pose(position=target, orientation=np.asarray(DOWN_QUAT)),
            seed=self._q,
        )
        if ik.status is not IkStatus.CONVERGED:
            events.ik_failure = True
            velocity = np.zeros(3)
        else:
            speed = check_speed(self._q, ik.solution, cfg.dt, self.arm)
            if not speed.ok:
                events.speed_violation = True
                velocity = np.zeros(3)
            else:
                self._q = ik.solution
                new_eef = eef_position(self.arm, self._q)
                velocity = (new_eef - prev_eef) / cfg.dt
                self._eef = new_eef
        self._eef_velocity = velocity

        scene = self._scene
        if self._grasped:
            scene = scene.with_cube_center(self._eef)

        # 4: contacts at the (possibly unmoved) tool position
        reports = detect_collisions(
            scene, self._eef, self.scene_config.eef_radius, velocity
        )
        for report in reports:
            if report.body in (Body.TABLE, Body.WORKSPACE_BOUND):
                events.collision_env = True
            elif report.body is Body.CUBE:
                events.collision_cube = True
            else:
                events.collision_obstacle = True
            if report.impact_speed > self.reward_config.collision_velocity_threshold:
                events.collision_velocity_exceeded = True
            if report.force > events.collision_force:
                events.collision_force = report.force
                events.collision_impact_speed = report.impact_speed

        # near-body overspeed counter (no contact required)
        eef_speed = float(np.linalg.norm(velocity))
        if eef_speed > self.reward_config.collision_velocity_threshold:
            clearances = signed_clearances(
                scene, self._eef, self.scene_config.eef_radius
            )
            if min(clearances.values()) <= cfg.proximity_threshold:
                events.velocity_violation = True

        # 5: gripper and grasp-state transition
        closing = act.gripper >= 0.0
        was_grasped = self._grasped
        (
            events.grasp_success,
            events.grasp_attempt_failed,
            events.lift_success,
            self._grasped,
        ) = check_grasp(
            self._eef,
            gripper_closing=closing,
            gripper_was_open=self._aperture > 0.5,
            already_grasped=was_grasped,
            cube_center=scene.cube_center,
            cube_rest_height=scene.cube_rest_height(),
            grasp_radius=cfg.grasp_radius,
            lift_height=cfg.lift_height,
        )
        if self._grasped:
            scene = scene.with_cube_center(self._eef)
        elif was_grasped:  # released: the cube drops back onto the surface
            dropped = scene.cube_center.copy()
            dropped[2] = scene.cube_rest_height()
            scene = scene.with_cube_center(dropped)
        self._aperture = 0.0 if closing else 1.0
        self._scene = scene

        # 6-7: score and terminate
        events.distance_d = float(np.linalg.norm(scene.cube_center - self._eef))
        reward = compute_reward(events, self.reward_config)
        terminated = (
            events.lift_success
            or events.collision_env
            or events.collision_force > self.reward_config.force_failure_threshold
        )
        self._step_count += 1
        truncated = not terminated and self._step_count >= cfg.max_steps
        self._done = terminated or truncated

        result = StepResult(
            observation=self._observation(),
            reward=reward,
            terminated=terminated,
            truncated=truncated,
            events=events,
        )
        if self._log_writer is not None:
            self._log_writer.write_step(self._step_record(act, result))
        return result

    # -- views -------------------------------------------------------------

    @property
    def scene(self) -> Scene | None:
        return self._scene

    @property
    def joints(self) -> np.ndarray:
        return self._q.copy()

    @property
    def episode_index(self) -> int:
        return self._episode_index

    @property
    def done(self) -> bool:
        return self._done

    def _observation(self) -> Observation:
        scene = self._scene
        obstacle = (
            scene.obstacle_center if scene.obstacle_present else np.zeros(3)
        )
        return Observation(
            eef_position=self._eef.copy(),
            eef_velocity=self._eef_velocity.copy(),
            gripper_aperture=self._aperture,
            cube_position=scene.cube_center.copy(),
            cube_relative=scene.cube_center - self._eef,
            obstacle_position=np.asarray(obstacle, dtype=np.float64).copy(),
            grasped=self._grasped,
        )

    def _step_record(self, act: Action, result: StepResult) -> dict:
        return {
            "episode": self._episode_index,
            "step": self._step_count,
            "action": [float(v) for v in act.as_array()],
            "reward": result.reward,
            "terminated": result.terminated,
            "truncated": result.truncated,
            "events": result.events.as_dict(),
            "eef": [float(v) for v in self._eef],
            "cube": [float(v) for v in self._scene.cube_center],
        }
