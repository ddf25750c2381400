"""Simplified deterministic hexapod walker on a heightmap.

Rigid-body physics is replaced by a kinematic stance-leg model: feet in
contact with the ground are pinned, so sweeping them backward propels the
torso forward. Torso height follows the terrain, and uphill slopes slow the
body down (steep ones make it slip). The observation / action / reward /
termination contract is the real interface: 53-dim observations, 18 target
joint positions in [-1, 1] under a gain-40 servo, the shaped velocity +
heading-correction reward, and the three episode-ending rules.

Observation layout (53 entries):
    [0, 18)   joint angles
    [18, 36)  joint velocities
    [36, 42)  leg contacts (binary)
    [42, 46)  torso quaternion (w, x, y, z)
    [46, 53)  terrain heights sampled at the torso and under the six hips
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .terrain import Heightmap, TerrainSpec, compose_heightmap

N_JOINTS = 18
N_LEGS = 6
OBS_DIM = 53
ACT_DIM = 18

DT = 0.02
SERVO_GAIN = 40.0
MAX_JOINT_SPEED = 4.0  # rad/s
JOINT_RANGE = 0.8  # action 1.0 targets this angle

SWEEP_LEN = 0.25
LIFT_GAIN = 0.25
KNEE_GAIN = 0.15
CONTACT_TOL = 0.02
STAND_HEIGHT = 0.35
HALF_TRACK = 0.2
SLOPE_DRAG = 2.0
SLOPE_PROBE = 0.1

V_TARGET = 0.4
W_VELOCITY = 6.0
W_HEADING = 10.0
DEFAULT_FINISH_BONUS = 100.0
DEFAULT_TRAJECTORY_LENGTH = 2000
BACKWARD_LIMIT = 500
DEFAULT_WORLD_SIZE = 10.0
START_X = 0.5

# hip anchor points in the body frame: legs 0-2 left, 3-5 right
HIP_OFFSETS = np.array([
    [0.25, HALF_TRACK], [0.0, HALF_TRACK], [-0.25, HALF_TRACK],
    [0.25, -HALF_TRACK], [0.0, -HALF_TRACK], [-0.25, -HALF_TRACK],
])
LEFT_LEGS = (0, 1, 2)
RIGHT_LEGS = (3, 4, 5)


class NumericError(Exception):
    """Non-finite value fed to the environment."""


@dataclass
class PenaltyWeights:
    torso_angle: float = 0.01
    acceleration: float = 0.01
    y_axis: float = 0.01
    z_velocity: float = 0.01
    control: float = 0.001


@dataclass
class PenaltyInputs:
    torso_angle: float = 0.0
    acceleration: float = 0.0
    y_offset: float = 0.0
    z_velocity: float = 0.0
    control_cost: float = 0.0


def velocity_reward(x_vel: float, y_vel: float, v_target: float = V_TARGET) -> float:
    forward = 1.0 / (abs(x_vel - v_target) + 1.0) - 1.0 / (v_target + 1.0)
    return forward / (1.0 + 30.0 * y_vel * y_vel)


def heading_reward(prev_dev: tuple[float, float], cur_dev: tuple[float, float]) -> float:
    return ((abs(prev_dev[0]) - abs(cur_dev[0]))
            + (abs(prev_dev[1]) - abs(cur_dev[1])))


def reward_fn(x_vel: float, y_vel: float,
              prev_dev: tuple[float, float], cur_dev: tuple[float, float],
              penalties: PenaltyInputs,
              weights: PenaltyWeights | None = None,
              v_target: float = V_TARGET) -> float:
    w = weights or PenaltyWeights()
    cost = (w.torso_angle * penalties.torso_angle
            + w.acceleration * penalties.acceleration
            + w.y_axis * penalties.y_offset
            + w.z_velocity * penalties.z_velocity
            + w.control * penalties.control_cost)
    return (W_VELOCITY * velocity_reward(x_vel, y_vel, v_target)
            + W_HEADING * heading_reward(prev_dev, cur_dev)
            - cost)


def _yaw_pitch_roll_quat(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    q = np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])
    return q / np.linalg.norm(q)


@dataclass
class WalkerState:
    x: float
    y: float
    z: float
    yaw: float
    pitch: float
    roll: float
    joints: np.ndarray  # (18,)
    joint_vels: np.ndarray  # (18,)
    contacts: np.ndarray  # (6,) binary
    foot_x: np.ndarray  # (6,) body-frame foot x positions
    x_vel: float = 0.0
    y_vel: float = 0.0
    z_prev: float = 0.0
    steps: int = 0
    backward_steps: int = 0
    prev_dev: tuple[float, float] = (0.0, 0.0)
    y_start: float = 0.0

    def quaternion(self) -> np.ndarray:
        return _yaw_pitch_roll_quat(self.yaw, self.pitch, self.roll)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    finished: bool
    x_velocity: float
    y_velocity: float


@dataclass
class RolloutResult:
    episode_return: float
    steps: int
    finished: bool
    transitions: list


class WalkerEnv:
    """One walker on one heightmap. Instances are independent; a single
    instance must not be stepped concurrently."""

    def __init__(self, heightmap: Heightmap, world_size: float = DEFAULT_WORLD_SIZE,
                 trajectory_length: int = DEFAULT_TRAJECTORY_LENGTH,
                 finish_bonus: float = DEFAULT_FINISH_BONUS,
                 penalty_weights: PenaltyWeights | None = None,
                 v_target: float = V_TARGET):
        self.heightmap = heightmap
        self.world_size = world_size
        self.trajectory_length = trajectory_length
        self.finish_bonus = finish_bonus
        self.penalty_weights = penalty_weights or PenaltyWeights()
        self.v_target = v_target
        self.state: WalkerState | None = None

    # -- terrain queries ----------------------------------------------------

    def terrain_height(self, x: float, y: float) -> float:
        grid = self.heightmap.grid
        res = self.heightmap.resolution
        scale = (res - 1) / self.world_size
        gx = min(max(x * scale, 0.0), res - 1.0)
        gy = min(max(y * scale, 0.0), res - 1.0)
        i0, j0 = int(gx), int(gy)
        i1, j1 = min(i0 + 1, res - 1), min(j0 + 1, res - 1)
        fx, fy = gx - i0, gy - j0
        h = (grid[i0, j0] * (1 - fx) * (1 - fy) + grid[i1, j0] * fx * (1 - fy)
             + grid[i0, j1] * (1 - fx) * fy + grid[i1, j1] * fx * fy)
        return float(h) * self.heightmap.elevation_z

    def _slopes(self, x: float, y: float, yaw: float) -> tuple[float, float]:
        dx, dy = math.cos(yaw), math.sin(yaw)
        h0 = self.terrain_height(x, y)
        ahead = self.terrain_height(x + SLOPE_PROBE * dx, y + SLOPE_PROBE * dy)
        side = self.terrain_height(x - SLOPE_PROBE * dy, y + SLOPE_PROBE * dx)
        return (ahead - h0) / SLOPE_PROBE, (side - h0) / SLOPE_PROBE

    # -- kinematics ---------------------------------------------------------

    @staticmethod
    def _foot_geometry(joints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Body-frame foot x positions and foot lifts for all six legs."""
        swing = joints[0::3]
        lift_j = joints[1::3]
        knee_j = joints[2::3]
        foot_x = HIP_OFFSETS[:, 0] + SWEEP_LEN * np.sin(swing)
        lift = LIFT_GAIN * (1.0 - np.cos(lift_j)) + KNEE_GAIN * (1.0 - np.cos(knee_j))
        return foot_x, lift

    def reset(self, rng_seed: int = 0) -> np.ndarray:
        # rng_seed is kept for interface stability; the start pose is a fixed
        # neutral stance so the environment stays a pure function of actions
        del rng_seed
        joints = np.zeros(N_JOINTS)
        foot_x, lift = self._foot_geometry(joints)
        contacts = (lift <= CONTACT_TOL).astype(float)
        x, y = START_X, self.world_size / 2.0
        slope_f, slope_s = self._slopes(x, y, 0.0)
        z = self.terrain_height(x, y) + STAND_HEIGHT
        self.state = WalkerState(
            x=x, y=y, z=z, yaw=0.0,
            pitch=math.atan(slope_f), roll=math.atan(slope_s),
            joints=joints, joint_vels=np.zeros(N_JOINTS), contacts=contacts,
            foot_x=foot_x, z_prev=z, y_start=y,
        )
        return self.observe()

    def observe(self) -> np.ndarray:
        s = self.state
        obs = np.empty(OBS_DIM)
        obs[0:18] = s.joints
        obs[18:36] = s.joint_vels
        obs[36:42] = s.contacts
        obs[42:46] = s.quaternion()
        obs[46] = self.terrain_height(s.x, s.y)
        cos_y, sin_y = math.cos(s.yaw), math.sin(s.yaw)
        for k in range(N_LEGS):
            hx, hy = HIP_OFFSETS[k]
            wx = s.x + cos_y * hx - sin_y * hy
            wy = s.y + sin_y * hx + cos_y * hy
            obs[47 + k] = self.terrain_height(wx, wy)
        return obs

    def step(self, action: np.ndarray) -> StepResult:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        action = np.asarray(action, dtype=float)
        if action.shape != (ACT_DIM,):
            raise ValueError(f"action must have shape ({ACT_DIM},), got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise NumericError("non-finite action entries")
        action = np.clip(action, -1.0, 1.0)
        s = self.state

        # first-order servo toward target joint positions
        targets = action * JOINT_RANGE
        vel_cmd = np.clip(SERVO_GAIN * (targets - s.joints),
                          -MAX_JOINT_SPEED, MAX_JOINT_SPEED)
        new_joints = s.joints + vel_cmd * DT
        joint_vels = (new_joints - s.joints) / DT

        foot_x, lift = self._foot_geometry(new_joints)
        contacts = (lift <= CONTACT_TOL).astype(float)
        stance = (contacts > 0) & (s.contacts > 0)

        # pinned stance feet: body advances opposite to the mean foot sweep
        dfoot = foot_x - s.foot_x
        forward = -float(dfoot[stance].mean()) if stance.any() else 0.0
        left = [k for k in LEFT_LEGS if stance[k]]
        right = [k for k in RIGHT_LEGS if stance[k]]
        fwd_left = -float(dfoot[left].mean()) if left else 0.0
        fwd_right = -float(dfoot[right].mean()) if right else 0.0
        dyaw = (fwd_right - fwd_left) / (2.0 * HALF_TRACK)

        slope_f, slope_s = self._slopes(s.x, s.y, s.yaw)
        speed_scale = 1.0 - SLOPE_DRAG * max(slope_f, 0.0) if forward >= 0 else 1.0
        speed_scale = min(max(speed_scale, -0.5), 1.0)
        dist = forward * speed_scale

        yaw = s.yaw + dyaw
        x = max(s.x + math.cos(yaw) * dist, 0.0)
        y = min(max(s.y + math.sin(yaw) * dist, 0.0), self.world_size)
        z = self.terrain_height(x, y) + STAND_HEIGHT

        x_vel = (x - s.x) / DT
        y_vel = (y - s.y) / DT
        z_vel = (z - s.z) / DT
        accel = math.hypot(x_vel - s.x_vel, y_vel - s.y_vel)
        pitch = math.atan(slope_f)
        roll = math.atan(slope_s)

        cur_dev = (yaw, y - s.y_start)
        penalties = PenaltyInputs(
            torso_angle=abs(pitch) + abs(roll),
            acceleration=accel,
            y_offset=abs(y - s.y_start),
            z_velocity=abs(z_vel),
            control_cost=float(np.sum(action * action)),
        )
        reward = reward_fn(x_vel, y_vel, s.prev_dev, cur_dev, penalties,
                           self.penalty_weights, self.v_target)

        steps = s.steps + 1
        if x_vel < 0.0:
            backward = s.backward_steps + 1
        elif x_vel > 0.0:
            backward = 0
        else:
            backward = s.backward_steps

        finished = x >= self.world_size
        if finished:
            reward += self.finish_bonus
        done = finished or steps >= self.trajectory_length or backward > BACKWARD_LIMIT

        self.state = WalkerState(
            x=x, y=y, z=z, yaw=yaw, pitch=pitch, roll=roll,
            joints=new_joints, joint_vels=joint_vels, contacts=contacts,
            foot_x=foot_x, x_vel=x_vel, y_vel=y_vel, z_prev=s.z,
            steps=steps, backward_steps=backward, prev_dev=cur_dev,
            y_start=s.y_start,
        )
        return StepResult(observation=self.observe(), reward=reward, done=done,
                          finished=finished, x_velocity=x_vel, y_velocity=y_vel)


def rollout(policy: nets.MlpParams, terrain_spec: TerrainSpec, rng_seed: int,
            world_size: float = DEFAULT_WORLD_SIZE,
            trajectory_length: int = DEFAULT_TRAJECTORY_LENGTH,
            finish_bonus: float = DEFAULT_FINISH_BONUS,
            collect_transitions: bool = False,
            v_target: float = V_TARGET,
            penalty_weights: PenaltyWeights | None = None) -> RolloutResult:
    """Run one episode with a deterministic policy; optionally collect
    (s, a, r, s', d) transitions for the shared replay buffer."""
    heightmap = compose_heightmap(terrain_spec)
    env = WalkerEnv(heightmap, world_size=world_size,
                    trajectory_length=trajectory_length, finish_bonus=finish_bonus,
                    penalty_weights=penalty_weights, v_target=v_target)
    obs = env.reset(rng_seed)
    total = 0.0
    transitions = []
    finished = False
    steps = 0
    while True:
        action = nets.forward(policy, obs)
        if policy.output_activation != "tanh":
            action = np.tanh(action)
        result = env.step(action)
        total += result.reward
        steps += 1
        if collect_transitions:
            transitions.append((obs.copy(), np.asarray(action, dtype=float),
                                result.reward, result.observation.copy(),
                                float(result.done)))
        obs = result.observation
        if result.done:
            finished = result.finished
            break
    return RolloutResult(episode_return=total, steps=steps, finished=finished,
                         transitions=transitions)


def export_trajectory(path: str, rows: list[tuple]) -> None:
    """rows: (step, x, y, z, reward, 18 actions) per line."""
    with open(path, "w") as fh:
        header = ["step", "x", "y", "z", "reward"] + [f"a{i}" for i in range(ACT_DIM)]
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.9g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def record_trajectory(policy: nets.MlpParams, terrain_spec: TerrainSpec, rng_seed: int,
                      path: str, **rollout_kwargs) -> RolloutResult:
    """Rollout with per-step CSV export for external behavior analysis."""
    heightmap = compose_heightmap(terrain_spec)
    env = WalkerEnv(heightmap,
                    world_size=rollout_kwargs.get("world_size", DEFAULT_WORLD_SIZE),
                    trajectory_length=rollout_kwargs.get("trajectory_length",
                                                         DEFAULT_TRAJECTORY_LENGTH),
                    finish_bonus=rollout_kwargs.get("finish_bonus", DEFAULT_FINISH_BONUS))
    obs = env.reset(rng_seed)
    rows = []
    total = 0.0
    steps = 0
    finished = False
    while True:
        action = nets.forward(policy, obs)
        if policy.output_activation != "tanh":
            action = np.tanh(action)
        result = env.step(action)
        s = env.state
        rows.append((steps, s.x, s.y, s.z, result.reward, *[float(a) for a in action]))
        total += result.reward
        steps += 1
        obs = result.observation
        if result.done:
            finished = result.finished
            break
    export_trajectory(path, rows)
    return RolloutResult(episode_return=total, steps=steps, finished=finished,
                         transitions=[])
