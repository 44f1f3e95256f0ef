"""
Toy, fully parameterizable environments and the held-out target world.

Three dynamics stand in for the robot tasks:

* ``sprint_cart``: 1-D cart that should cruise at 2 m/s (forward locomotion);
  the body pitches with acceleration and the episode ends past 0.6 rad.
* ``spin_disk``: torque-driven disk that should spin at 0.25 rad/s without
  the object slipping off the pad (in-hand rotation).
* ``globe_balance``: inverted pendulum riding a rolling ball; the episode
  ends when the robot tips past 0.4 rad (walking globe, a survival task).

All dynamics integrate with semi-implicit Euler. Velocity-proportional drag
terms are integrated implicitly so that any in-range parameter value keeps
the state finite.

sprint_cart single-step update (drag implicit)::

    u'  = clip(u + min(g, 2) * (a - u), -1, 1)        g = action_latency_gain
    F   = motor_strength * 10 N * u'
    m   = max(2.0 + payload_mass, 0.1)
    vx' = (vx + dt * (F / m - gravity_slope)) / (1 + dt * 0.5 * friction)

so from rest with a = 1 and default actuator: ``vx = dt*F/m / (1 + dt*0.5*friction)``.
"""
import json
import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, List, Literal, Optional, Sequence, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from drlab.core.physics import (
    PhysicsAssignment,
    PhysicsParameterSpec,
    defaults_assignment,
    validate_assignment,
)
from drlab.core.seeding import derive_rng
from drlab.errors import (
    DimensionMismatch,
    EnvironmentNotReset,
    SteppedAfterTermination,
    UnknownEnv,
    ValidationError,
)

EnvId = Literal["sprint_cart", "spin_disk", "globe_balance"]

ACTION_FEATURES = ("act_abs", "act_diff_l1", "act_diff_sq")


class ToyDynamics:
    """Physics of one environment; the instance wrapper owns actions and randomness."""

    env_id: str = ""
    obs_dim: int = 0
    action_dim: int = 1
    # Features produced by ``advance``; the wrapper appends ACTION_FEATURES.
    dynamic_features: Tuple[str, ...] = ()

    def __init__(self, params: Dict[str, float], dt: float):
        self.p = params
        self.dt = dt

    @classmethod
    def feature_catalog(cls) -> List[str]:
        return list(cls.dynamic_features) + list(ACTION_FEATURES)

    def reset(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def advance(self, action: np.ndarray, scale: float, push: float) -> Tuple[Dict[str, float], bool]:
        raise NotImplementedError


class SprintCartDynamics(ToyDynamics):
    env_id = "sprint_cart"
    obs_dim = 4
    dynamic_features = (
        "vx", "x", "wz", "vz", "pitch", "w_norm", "w_xy_sq", "height",
        "grav_xy_sq", "torque_sq_sum", "act_accel_sq",
    )

    BASE_MASS = 2.0
    MAX_FORCE = 10.0
    DRAG = 0.5
    BUMPER = -1.0
    PITCH_STIFFNESS = 100.0
    PITCH_DAMPING = 10.0
    PITCH_COUPLING = 2.0
    BODY_HEIGHT = 0.3
    TIP_PITCH = 0.6

    def reset(self, rng):
        self.x = 0.0
        self.vx = 0.0
        self.u = 0.0
        self.pitch = 0.0
        self.pitch_rate = 0.0
        self.height = self.BODY_HEIGHT

    def observe(self):
        return np.array([self.vx, self.u, self.pitch, self.pitch_rate])

    def advance(self, action, scale, push):
        p, dt = self.p, self.dt
        mass = max(self.BASE_MASS + p["payload_mass"], 0.1)
        gain = min(max(p["action_latency_gain"], 0.0), 2.0)

        u_prev = self.u
        self.u = float(np.clip(self.u + gain * (action[0] - self.u), -1.0, 1.0))
        force = p["motor_strength"] * self.MAX_FORCE * self.u * scale

        v_prev = self.vx
        self.vx = (self.vx + dt * (force / mass - p["gravity_slope"])) / (1.0 + dt * self.DRAG * p["friction"])
        self.vx += push
        self.x += dt * self.vx
        if self.x < self.BUMPER:
            self.x = self.BUMPER
            if self.vx < 0.0:
                self.vx = -p["restitution"] * self.vx

        accel = (self.vx - v_prev) / dt
        pitch_acc = (
            -self.PITCH_STIFFNESS * self.pitch
            - self.PITCH_DAMPING * self.pitch_rate
            - self.PITCH_COUPLING * accel
        )
        self.pitch_rate += dt * pitch_acc
        self.pitch += dt * self.pitch_rate

        height_prev = self.height
        self.height = self.BODY_HEIGHT * math.cos(self.pitch)
        features = {
            "vx": self.vx,
            "x": self.x,
            "wz": 0.0,  # the cart cannot yaw
            "vz": (self.height - height_prev) / dt,
            "pitch": self.pitch,
            "w_norm": abs(self.pitch_rate),
            "w_xy_sq": self.pitch_rate ** 2,
            "height": self.height,
            "grav_xy_sq": math.sin(self.pitch) ** 2,
            "torque_sq_sum": force ** 2,
            "act_accel_sq": ((self.u - u_prev) / dt) ** 2,
        }
        return features, abs(self.pitch) > self.TIP_PITCH


class SpinDiskDynamics(ToyDynamics):
    env_id = "spin_disk"
    obs_dim = 4
    dynamic_features = (
        "wz", "theta", "slip", "v_norm", "v_l1", "pose_diff", "torque_sq_sum", "work", "obj_z",
    )

    MAX_TORQUE = 0.1
    INERTIA_BASE = 0.02
    INERTIA_PER_KG = 0.02
    BIAS_TORQUE = 0.005
    SLIP_DRIVE = 2.0
    SLIP_STIFFNESS = 20.0
    SLIP_DAMPING = 2.0
    MAX_GRIP = 10.0
    SLIP_LIMIT = 0.08
    OBJECT_HEIGHT = 0.1

    def reset(self, rng):
        self.theta = 0.0
        self.omega = 0.0
        self.slip = 0.0
        self.slip_rate = 0.0
        self.u = 0.0

    def observe(self):
        return np.array([self.omega, self.slip, self.slip_rate, self.u])

    def advance(self, action, scale, push):
        p, dt = self.p, self.dt
        self.u = float(action[0])
        torque = p["motor_strength"] * self.MAX_TORQUE * self.u * scale
        inertia = self.INERTIA_BASE + self.INERTIA_PER_KG * max(p["object_mass"], 0.0)
        bias = self.BIAS_TORQUE * p["com_offset"] * math.sin(self.theta)

        self.omega = (self.omega + dt * (torque + bias) / inertia) / (1.0 + dt * p["damping"] / inertia)
        self.omega += push
        self.theta += dt * self.omega

        grip = min(p["object_friction"], self.MAX_GRIP)
        drive = self.SLIP_DRIVE * abs(p["motor_strength"] * self.u * scale)
        self.slip_rate = (self.slip_rate + dt * (drive - self.SLIP_STIFFNESS * grip * self.slip)) / (
            1.0 + dt * self.SLIP_DAMPING * (1.0 + grip)
        )
        self.slip += dt * self.slip_rate

        obj_z = max(self.OBJECT_HEIGHT - 5.0 * max(0.0, abs(self.slip) - self.SLIP_LIMIT), 0.0)
        features = {
            "wz": self.omega,
            "theta": self.theta,
            "slip": self.slip,
            "v_norm": abs(self.slip_rate),
            "v_l1": abs(self.slip_rate),
            "pose_diff": abs(self.u),
            "torque_sq_sum": torque ** 2,
            "work": abs(torque * self.omega) * dt,
            "obj_z": obj_z,
        }
        return features, False


class GlobeBalanceDynamics(ToyDynamics):
    env_id = "globe_balance"
    obs_dim = 4
    dynamic_features = (
        "tilt", "tilt_rate", "xb", "vb", "height", "foot_ball_dist", "torque_sq_sum",
    )

    ROBOT_MASS = 1.0
    HALF_LENGTH = 0.5
    MAX_FORCE = 10.0
    GRAVITY = 9.81
    WALL = 5.0
    FALL_TILT = 0.4
    INITIAL_TILT = 0.05
    BALL_TOP = 1.0

    def reset(self, rng):
        self.tilt = float(rng.uniform(-self.INITIAL_TILT, self.INITIAL_TILT))
        self.tilt_rate = 0.0
        self.xb = 0.0
        self.vb = 0.0

    def observe(self):
        return np.array([self.tilt, self.tilt_rate, self.xb, self.vb])

    def advance(self, action, scale, push):
        p, dt = self.p, self.dt
        ball = max(p["ball_mass"], 0.1)
        robot = max(self.ROBOT_MASS + p["robot_payload_mass"], 0.1)
        total = ball + robot
        length = self.HALF_LENGTH
        gravity = self.GRAVITY + p["gravity_offset"]

        drive = p["motor_strength"] * self.MAX_FORCE * float(action[0]) * scale
        force = drive - p["ball_drag"] * self.vb
        sin_t, cos_t = math.sin(self.tilt), math.cos(self.tilt)
        temp = (force + robot * length * self.tilt_rate ** 2 * sin_t) / total
        tilt_acc = (gravity * sin_t - cos_t * temp) / (length * (4.0 / 3.0 - robot * cos_t ** 2 / total))
        ball_acc = temp - robot * length * tilt_acc * cos_t / total

        self.vb += dt * ball_acc + push
        self.tilt_rate += dt * tilt_acc
        self.xb += dt * self.vb
        self.tilt += dt * self.tilt_rate
        if abs(self.xb) > self.WALL:
            self.xb = math.copysign(self.WALL, self.xb)
            self.vb = -p["ball_restitution"] * self.vb

        features = {
            "tilt": self.tilt,
            "tilt_rate": self.tilt_rate,
            "xb": self.xb,
            "vb": self.vb,
            "height": self.BALL_TOP + length * math.cos(self.tilt),
            "foot_ball_dist": abs(length * math.sin(self.tilt)),
            "torque_sq_sum": drive ** 2,
        }
        return features, abs(self.tilt) > self.FALL_TILT


DYNAMICS: Dict[str, Type[ToyDynamics]] = {
    cls.env_id: cls for cls in (SprintCartDynamics, SpinDiskDynamics, GlobeBalanceDynamics)
}


def dynamics_for(env_id: str) -> Type[ToyDynamics]:
    try:
        return DYNAMICS[env_id]
    except KeyError:
        raise UnknownEnv(f"unknown environment '{env_id}'") from None


class EnvironmentSpec(BaseModel):
    """Static description of an environment; JSON key for parameters is ``params``."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    env_id: EnvId
    horizon: int = Field(ge=1)
    dt: float = Field(gt=0)
    param_specs: List[PhysicsParameterSpec] = Field(alias="params")
    feature_catalog: List[str] = Field(default_factory=list)
    action_dim: int = 0
    obs_dim: int = 0

    @model_validator(mode="before")
    @classmethod
    def _fill_from_dynamics(cls, data):
        if isinstance(data, dict) and data.get("env_id") in DYNAMICS:
            dyn = DYNAMICS[data["env_id"]]
            data = dict(data)
            data.setdefault("feature_catalog", dyn.feature_catalog())
            data.setdefault("action_dim", dyn.action_dim)
            data.setdefault("obs_dim", dyn.obs_dim)
        return data

    @model_validator(mode="after")
    def _consistent(self):
        dyn = DYNAMICS[self.env_id]
        if len(set(self.feature_catalog)) != len(self.feature_catalog):
            raise ValueError("feature names must be unique")
        if self.feature_catalog != dyn.feature_catalog():
            raise ValueError(f"{self.env_id}: feature catalog must be {dyn.feature_catalog()}")
        if (self.action_dim, self.obs_dim) != (dyn.action_dim, dyn.obs_dim):
            raise ValueError(f"{self.env_id}: dims must be action={dyn.action_dim}, obs={dyn.obs_dim}")
        names = [s.name for s in self.param_specs]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        return self

    @property
    def param_names(self) -> List[str]:
        return [s.name for s in self.param_specs]

    def param(self, name: str) -> PhysicsParameterSpec:
        for spec in self.param_specs:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def defaults(self) -> PhysicsAssignment:
        return defaults_assignment(self.param_specs)


class TargetWorldSpec(BaseModel):
    """The stand-in for the real robot: shifted physics plus unmodeled effects."""

    model_config = ConfigDict(frozen=True)

    base_env_id: EnvId
    target_assignment: PhysicsAssignment
    obs_noise_std: float = Field(default=0.0, ge=0)
    action_delay_steps: int = Field(default=0, ge=0)
    torque_ripple_amp: float = Field(default=0.0, ge=0, le=1)


@dataclass
class StepResult:
    observation: np.ndarray
    features: Dict[str, float]
    terminated: bool
    step_index: int
    truncated: bool = False


def _param(name, default, valid_min, valid_max, grid_kind, unit=""):
    return PhysicsParameterSpec(
        name=name, default=default, valid_min=valid_min, valid_max=valid_max, grid_kind=grid_kind, unit=unit
    )


_BUILTIN_PARAMS: Dict[str, List[PhysicsParameterSpec]] = {
    "sprint_cart": [
        _param("friction", 1.0, 0.0, None, "zero_to_inf", "1/s per unit"),
        _param("payload_mass", 0.0, None, None, "centered_zero", "kg"),
        _param("motor_strength", 1.0, 0.0, None, "centered_one", "x nominal"),
        _param("restitution", 0.5, 0.0, 1.0, "zero_to_one"),
        _param("gravity_slope", 0.0, None, None, "centered_zero", "m/s^2"),
        _param("push_velocity", 0.0, 0.0, None, "zero_to_inf", "m/s"),
        _param("action_latency_gain", 1.0, 0.0, None, "centered_one"),
    ],
    "spin_disk": [
        _param("object_mass", 0.3, 0.0, None, "zero_to_inf", "kg"),
        _param("damping", 0.1, 0.0, None, "zero_to_inf", "N m s"),
        _param("motor_strength", 1.0, 0.0, None, "centered_one", "x nominal"),
        _param("object_friction", 1.0, 0.0, None, "zero_to_inf"),
        _param("com_offset", 0.0, None, None, "centered_zero", "cm"),
        _param("push_velocity", 0.0, 0.0, None, "zero_to_inf", "rad/s"),
    ],
    "globe_balance": [
        _param("ball_mass", 1.0, 0.0, None, "zero_to_inf", "kg"),
        _param("ball_drag", 0.1, 0.0, None, "zero_to_inf", "N s/m"),
        _param("robot_payload_mass", 0.0, None, None, "centered_zero", "kg"),
        _param("motor_strength", 1.0, 0.0, None, "centered_one", "x nominal"),
        _param("ball_restitution", 0.5, 0.0, 1.0, "zero_to_one"),
        _param("gravity_offset", 0.0, None, None, "centered_zero", "m/s^2"),
        _param("push_velocity", 0.0, 0.0, None, "zero_to_inf", "m/s"),
    ],
}

_HORIZONS = {"sprint_cart": 200, "spin_disk": 200, "globe_balance": 500}

_TARGET_SHIFTS = {
    "sprint_cart": ({"friction": 2.5, "payload_mass": 1.0, "motor_strength": 0.85}, 0.01),
    "spin_disk": ({"object_mass": 0.8, "damping": 0.15, "motor_strength": 0.9}, 0.01),
    "globe_balance": ({"ball_mass": 1.5, "ball_drag": 0.2, "robot_payload_mass": 0.5}, 0.005),
}


def builtin_environment_spec(env_id: str) -> EnvironmentSpec:
    dynamics_for(env_id)
    return EnvironmentSpec(
        env_id=env_id, horizon=_HORIZONS[env_id], dt=0.02, params=list(_BUILTIN_PARAMS[env_id])
    )


def default_target_world(env_id: str) -> TargetWorldSpec:
    """Shipped target worlds; the values are a deliberate, documented sim-to-real gap."""
    spec = builtin_environment_spec(env_id)
    shift, noise = _TARGET_SHIFTS[env_id]
    return TargetWorldSpec(
        base_env_id=env_id,
        target_assignment=spec.defaults().with_values(shift),
        obs_noise_std=noise,
        action_delay_steps=1,
        torque_ripple_amp=0.05,
    )


class EnvironmentInstance:
    """Single-owner episode runner around one dynamics object.

    Randomness comes from three streams split off ``seed``: physics (initial
    state, push schedule), observation noise and torque ripple. With all
    target effects at zero the latter two are never drawn from.
    """

    def __init__(
        self,
        spec: EnvironmentSpec,
        assignment: PhysicsAssignment,
        seed: int,
        target: Optional[TargetWorldSpec] = None,
    ):
        validate_assignment(spec.param_specs, assignment)
        self.spec = spec
        self.assignment = assignment
        self.seed = int(seed)
        self.target = target
        self.logger = logging.getLogger(__name__)

        self._dynamics = dynamics_for(spec.env_id)(dict(assignment.values), spec.dt)
        self._physics_rng = derive_rng(self.seed, "physics")
        self._noise_rng = derive_rng(self.seed, "obs_noise")
        self._ripple_rng = derive_rng(self.seed, "torque_ripple")

        self._obs_noise = target.obs_noise_std if target else 0.0
        self._delay = target.action_delay_steps if target else 0
        self._ripple = target.torque_ripple_amp if target else 0.0

        self._status = "reset_pending"
        self._step_index = 0
        self._prev_action = np.zeros(spec.action_dim)
        self._delay_queue: Deque[np.ndarray] = deque()
        self._push_step = -1
        self._push = 0.0

    @property
    def status(self) -> str:
        return self._status

    def reset(self) -> np.ndarray:
        self._dynamics.reset(self._physics_rng)
        push_velocity = self.assignment.values.get("push_velocity", 0.0)
        if push_velocity > 0.0:
            self._push_step = int(self._physics_rng.integers(0, self.spec.horizon))
            self._push = push_velocity * (1.0 if self._physics_rng.random() < 0.5 else -1.0)
        else:
            self._push_step, self._push = -1, 0.0
        zero = np.zeros(self.spec.action_dim)
        self._prev_action = zero
        self._delay_queue = deque([zero.copy() for _ in range(self._delay)])
        self._step_index = 0
        self._status = "running"
        return self._observe()

    def _observe(self) -> np.ndarray:
        obs = self._dynamics.observe().astype(np.float64)
        if self._obs_noise > 0.0:
            obs = obs + self._noise_rng.normal(0.0, self._obs_noise, size=obs.shape)
        return obs

    def step(self, action) -> StepResult:
        if self._status == "reset_pending":
            raise EnvironmentNotReset(f"{self.spec.env_id}: call reset() before step()")
        if self._status == "done":
            raise SteppedAfterTermination(f"{self.spec.env_id}: episode already finished")

        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != self.spec.action_dim:
            raise DimensionMismatch(
                f"{self.spec.env_id}: expected action of size {self.spec.action_dim}, got {action.shape[0]}"
            )
        commanded = np.clip(np.nan_to_num(action, nan=0.0), -1.0, 1.0)

        if self._delay > 0:
            self._delay_queue.append(commanded)
            applied = self._delay_queue.popleft()
        else:
            applied = commanded
        scale = 1.0
        if self._ripple > 0.0:
            scale = 1.0 + float(self._ripple_rng.uniform(-self._ripple, self._ripple))
        push = self._push if self._step_index == self._push_step else 0.0

        features, terminated = self._dynamics.advance(applied, scale, push)
        features["act_abs"] = float(np.mean(np.abs(commanded)))
        diff = commanded - self._prev_action
        features["act_diff_l1"] = float(np.sum(np.abs(diff)))
        features["act_diff_sq"] = float(np.sum(diff ** 2))
        self._prev_action = commanded

        index = self._step_index
        self._step_index += 1
        truncated = self._step_index >= self.spec.horizon
        if terminated or truncated:
            self._status = "done"
        return StepResult(
            observation=self._observe(),
            features={k: float(v) for k, v in features.items()},
            terminated=bool(terminated),
            step_index=index,
            truncated=bool(truncated and not terminated),
        )


def make_environment(spec: EnvironmentSpec, assignment: PhysicsAssignment, seed: int) -> EnvironmentInstance:
    return EnvironmentInstance(spec, assignment, seed)


def make_target_world(spec: EnvironmentSpec, target: TargetWorldSpec, seed: int) -> EnvironmentInstance:
    if target.base_env_id != spec.env_id:
        raise ValidationError(f"target world is for '{target.base_env_id}', not '{spec.env_id}'")
    return EnvironmentInstance(spec, target.target_assignment, seed, target=target)


# --- JSON documents ------------------------------------------------------

def environment_document(spec: EnvironmentSpec, target: Optional[TargetWorldSpec] = None) -> Dict:
    doc = {
        "env_id": spec.env_id,
        "horizon": spec.horizon,
        "dt": spec.dt,
        "params": [
            {
                "name": s.name,
                "default": s.default,
                "valid_min": s.valid_min,
                "valid_max": s.valid_max,
                "grid_kind": s.grid_kind,
            }
            for s in spec.param_specs
        ],
    }
    if target is not None:
        doc["target"] = {
            "assignment": dict(target.target_assignment.values),
            "obs_noise_std": target.obs_noise_std,
            "action_delay_steps": target.action_delay_steps,
            "torque_ripple_amp": target.torque_ripple_amp,
        }
    return doc


def parse_environment_document(doc: Dict) -> Tuple[EnvironmentSpec, Optional[TargetWorldSpec]]:
    """Inverse of ``environment_document``; a partial target assignment is filled from defaults."""
    try:
        spec = EnvironmentSpec(
            env_id=doc["env_id"], horizon=doc["horizon"], dt=doc["dt"], params=doc["params"]
        )
        target = None
        if doc.get("target") is not None:
            t = doc["target"]
            assignment = spec.defaults().with_values(t.get("assignment", {}))
            target = TargetWorldSpec(
                base_env_id=spec.env_id,
                target_assignment=assignment,
                obs_noise_std=t.get("obs_noise_std", 0.0),
                action_delay_steps=t.get("action_delay_steps", 0),
                torque_ripple_amp=t.get("torque_ripple_amp", 0.0),
            )
    except KeyError as e:
        raise ValidationError(f"environment document missing key {e}") from None
    except ValueError as e:
        raise ValidationError(f"invalid environment document: {e}") from None
    if target is not None:
        validate_assignment(spec.param_specs, target.target_assignment)
    return spec, target


def load_environment_document(path: Path) -> Tuple[EnvironmentSpec, Optional[TargetWorldSpec]]:
    with open(path) as f:
        return parse_environment_document(json.load(f))
