"""Vectorized locomotion MDP: action scaling, observations, reward, episode
logic, and the 100 Hz policy / 1 kHz physics loop nesting.

The environment owns N independent (SimState, OscillatorState) pairs and
steps them data-parallel.  Each policy step scales the raw action once and
runs 10 inner substeps, each substep integrating the oscillators, mapping
their states to foot targets, solving leg IK and stepping the physics.
"""

from dataclasses import dataclass, field

import numpy as np

from .kinematics import (CLEARANCE_RANGE, HEIGHT_RANGE, PdGains,
                         RobotGeometry, TrajectoryShape, all_legs_ik,
                         foot_target_from_cpg, stance_offsets)
from .oscillators import (GAIT_PHASE_OFFSETS, CouplingConfig, CpgCommand,
                          OscillatorState, step_oscillators)
from .physics import (PhysicalParams, RandomizationConfig, SimState,
                      has_fallen, physics_step, reset_sim,
                      sample_push_direction)
from .rotation import gravity_in_body, quat_rotate_inverse
from .terrain import Terrain

POLICY_DT = 0.01
PHYSICS_DT = 0.001
SUBSTEPS = 10
EPISODE_SECONDS = 20.0
COMMAND_RESAMPLE_SECONDS = 5.0

FORWARD_VX_RANGE = (0.2, 1.0)
OMNI_RANGE = (-1.0, 1.0)
FIXED_TASK_VX = 0.5

OBS_MODES = ("full", "med", "min", "min_nocontact")

# observation layout blocks: (name, dimension)
_BLOCKS = {
    "cmd": 3, "gravity": 3, "lin_vel": 3, "ang_vel": 3, "q": 12, "q_dot": 12,
    "contacts": 4, "last_action": 12, "r": 4, "r_dot": 4, "theta": 4,
    "theta_dot": 4, "phi": 4, "phi_dot": 4,
}
_CPG_BLOCKS = ("r", "r_dot", "theta", "theta_dot", "phi", "phi_dot")
_LAYOUTS = {
    "full": ("cmd", "gravity", "lin_vel", "ang_vel", "q", "q_dot", "contacts",
             "last_action") + _CPG_BLOCKS,
    "med": ("cmd", "gravity", "lin_vel", "ang_vel", "contacts") + _CPG_BLOCKS,
    "min": ("contacts", "r", "r_dot", "theta", "theta_dot"),
    "min_nocontact": ("r", "r_dot", "theta", "theta_dot"),
}


@dataclass
class BodyCommand:
    """Desired body velocities (arrays shaped (n,))."""

    vx: np.ndarray
    vy: np.ndarray
    yaw_rate: np.ndarray

    def as_array(self):
        return np.stack([self.vx, self.vy, self.yaw_rate], axis=-1)


@dataclass
class ObservationSpec:
    """Ordered field layout for one observation mode."""

    mode: str

    def __post_init__(self):
        if self.mode not in OBS_MODES:
            raise ValueError(f"unknown observation mode {self.mode!r}")

    @property
    def layout(self):
        return tuple((name, _BLOCKS[name]) for name in _LAYOUTS[self.mode])

    @property
    def dim(self):
        return sum(d for _, d in self.layout)

    def offsets(self):
        """Field name -> (start, stop) slice bounds in the flat vector."""
        out, pos = {}, 0
        for name, d in self.layout:
            out[name] = (pos, pos + d)
            pos += d
        return out


@dataclass
class RewardWeights:
    """Per-step reward weights; dt is the policy period baked into each."""

    dt: float = POLICY_DT
    vx: float = 0.75
    vy: float = 0.75
    yaw: float = 0.5
    vz: float = 2.0
    rollpitch: float = 0.05
    work: float = 0.001

    def scaled(self, name):
        return getattr(self, name) * self.dt


def tracking_kernel(err_sq):
    """f(x) = exp(-|x|^2 / 0.25) on squared errors."""
    return np.exp(-err_sq / 0.25)


def scale_action(raw):
    """Map clipped raw actions in [-1, 1]^12 onto the CPG command limits.

    Layout: raw[0:4] -> mu in [1, 2]; raw[4:8] -> frequency in [0, 4.5] Hz;
    raw[8:12] -> direction frequency in [-1.5, 1.5] Hz.
    """
    raw = np.clip(raw, -1.0, 1.0)
    return CpgCommand(
        mu=1.5 + 0.5 * raw[..., 0:4],
        freq=2.25 + 2.25 * raw[..., 4:8],
        psi=1.5 * raw[..., 8:12],
    )


def compute_reward_terms(cmd, v_body, omega_body, tau, qd_t, qd_prev, weights):
    """Reward decomposition per environment; velocities in the body frame."""
    f_vx = tracking_kernel((cmd.vx - v_body[:, 0]) ** 2)
    f_vy = tracking_kernel((cmd.vy - v_body[:, 1]) ** 2)
    f_yaw = tracking_kernel((cmd.yaw_rate - omega_body[:, 2]) ** 2)
    work = np.abs(np.sum(tau * (qd_t - qd_prev), axis=-1))
    return {
        "track_vx": weights.scaled("vx") * f_vx,
        "track_vy": weights.scaled("vy") * f_vy,
        "track_yaw": weights.scaled("yaw") * f_yaw,
        "pen_vz": -weights.scaled("vz") * v_body[:, 2] ** 2,
        "pen_rollpitch": -weights.scaled("rollpitch")
        * (omega_body[:, 0] ** 2 + omega_body[:, 1] ** 2),
        "pen_work": -weights.scaled("work") * work,
    }


def compute_reward(cmd, v_body, omega_body, tau, qd_t, qd_prev, weights):
    terms = compute_reward_terms(cmd, v_body, omega_body, tau, qd_t, qd_prev, weights)
    return sum(terms.values())


def sample_commands(rng, task, forward_range=FORWARD_VX_RANGE):
    """Draw one velocity command for the given task."""
    if task == "forward":
        return np.array([rng.uniform(*forward_range), 0.0, 0.0])
    if task == "omni":
        return np.array([
            rng.uniform(*OMNI_RANGE), rng.uniform(*OMNI_RANGE), rng.uniform(*OMNI_RANGE),
        ])
    if task == "fixed":
        return np.array([FIXED_TASK_VX, 0.0, 0.0])
    raise ValueError(f"unknown task {task!r}")


def build_observation(spec, cmd, sim, osc, last_action):
    """Assemble the observation batch in the fixed layout order."""
    n = sim.n
    blocks = {
        "cmd": cmd.as_array(),
        "gravity": gravity_in_body(sim.quat),
        "lin_vel": quat_rotate_inverse(sim.quat, sim.vel),
        "ang_vel": sim.omega,
        "q": sim.q,
        "q_dot": sim.q_dot,
        "contacts": sim.contact.astype(float),
        "last_action": last_action,
        "r": osc.r, "r_dot": osc.r_dot, "theta": osc.theta,
        "theta_dot": osc.theta_dot, "phi": osc.phi, "phi_dot": osc.phi_dot,
    }
    parts = [blocks[name] for name, _ in spec.layout]
    obs = np.concatenate(parts, axis=-1)
    assert obs.shape == (n, spec.dim), (obs.shape, spec.dim)
    return obs


@dataclass
class EnvConfig:
    n_envs: int = 64
    task: str = "forward"               # forward | omni | fixed
    obs_mode: str = "full"
    seed: int = 0
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    contact_backend: str = "spring"
    d_step: float = 0.10
    g_p: float = 0.01
    h_range: tuple = HEIGHT_RANGE
    g_c_range: tuple = CLEARANCE_RANGE
    friction_nominal: float = 0.8
    episode_seconds: float = EPISODE_SECONDS
    use_fast_path: bool = True

    def __post_init__(self):
        if self.task not in ("forward", "omni", "fixed"):
            raise ValueError(f"unknown task {self.task!r}")
        ObservationSpec(self.obs_mode)
        if self.obs_mode in ("min", "min_nocontact") and self.task != "fixed":
            self.task = "fixed"


class VectorEnv:
    """N simulated quadrupeds stepped in lockstep at 100 Hz."""

    def __init__(self, cfg, terrain=None, geometry=None):
        self.cfg = cfg
        self.spec = ObservationSpec(cfg.obs_mode)
        self.geometry = geometry or RobotGeometry()
        self.geometry.validate_workspace()
        self.terrain = terrain or Terrain()
        self.gains = PdGains()
        self.weights = RewardWeights()
        self.coupling = CouplingConfig.uncoupled()
        self._stance_offsets = stance_offsets(self.geometry)
        n = cfg.n_envs

        self.rngs = [np.random.default_rng(cfg.seed * 1_000_003 + i) for i in range(n)]
        self.sim = SimState.zeros(n)
        self.params = PhysicalParams.nominal(n, friction=cfg.friction_nominal)
        self.osc = OscillatorState.initial((n,))
        self.shape_h = np.full(n, 0.30)
        self.shape_gc = np.full(n, 0.05)
        self.cmd = BodyCommand(np.zeros(n), np.zeros(n), np.zeros(n))
        self.last_action = np.zeros((n, 12))
        self.prev_qd = np.zeros((n, 12))
        self.last_tau = np.zeros((n, 12))
        self.step_count = np.zeros(n, dtype=int)
        self.max_steps = int(round(cfg.episode_seconds / POLICY_DT))
        self.noise_scale = 0.0   # observation noise hook, off by default
        self.forward_range = FORWARD_VX_RANGE  # curriculum hook; final range
        self._fast = None
        if cfg.use_fast_path and self.terrain.kind == "flat":
            from . import fastpath
            if fastpath.AVAILABLE:
                self._fast = fastpath
        self.reset_all()

    @property
    def n_envs(self):
        return self.cfg.n_envs

    @property
    def obs_dim(self):
        return self.spec.dim

    @property
    def act_dim(self):
        return 12

    def _shape_batch(self):
        return TrajectoryShape(
            d_step=self.cfg.d_step, h=self.shape_h[:, None],
            g_c=self.shape_gc[:, None], g_p=self.cfg.g_p)

    def set_shape(self, h=None, g_c=None, env_ids=None):
        """Online trajectory-shape modulation (clamped to the training ranges)."""
        ids = np.arange(self.n_envs) if env_ids is None else np.atleast_1d(env_ids)
        if h is not None:
            self.shape_h[ids] = np.clip(h, *self.cfg.h_range)
        if g_c is not None:
            self.shape_gc[ids] = np.clip(g_c, *self.cfg.g_c_range)

    def reset_env(self, i):
        rng = self.rngs[i]
        state1, params1, shape = reset_sim(
            self.cfg.randomization,
            {"h": self.cfg.h_range, "g_c": self.cfg.g_c_range},
            rng, geometry=self.geometry, terrain=self.terrain,
            d_step=self.cfg.d_step, g_p=self.cfg.g_p,
            friction_nominal=self.cfg.friction_nominal)
        self.sim.write_slice(i, state1)
        self.params.mass[i] = params1.mass[0]
        self.params.inertia[i] = params1.inertia[0]
        self.params.friction[i] = params1.friction[0]
        self.params.payload[i] = params1.payload[0]
        self.shape_h[i] = np.asarray(shape.h).item()
        self.shape_gc[i] = np.asarray(shape.g_c).item()
        self.osc.r[i] = 1.0
        self.osc.r_dot[i] = 0.0
        # trot-pattern phases with a random global offset: episodes start from
        # a coherent stance so early stepping is not a guaranteed stumble
        self.osc.theta[i] = (GAIT_PHASE_OFFSETS["trot"]
                             + rng.uniform(0.0, 2.0 * np.pi)) % (2.0 * np.pi)
        self.osc.theta_dot[i] = 0.0
        self.osc.phi[i] = 0.0
        self.osc.phi_dot[i] = 0.0
        cmd = sample_commands(rng, self.cfg.task, self.forward_range)
        self.cmd.vx[i], self.cmd.vy[i], self.cmd.yaw_rate[i] = cmd
        self.last_action[i] = 0.0
        self.prev_qd[i] = 0.0
        self.last_tau[i] = 0.0
        self.step_count[i] = 0

    def reset_all(self):
        for i in range(self.n_envs):
            self.reset_env(i)
        return self.observe()

    def observe(self):
        obs = build_observation(self.spec, self.cmd, self.sim, self.osc,
                                self.last_action)
        if self.noise_scale > 0.0:
            noise = np.stack([rng.normal(0.0, self.noise_scale, self.spec.dim)
                              for rng in self.rngs])
            obs = obs + noise
        return obs

    def _inner_loop(self, command):
        if self._fast is not None:
            self._fast.control_step(
                self.sim, self.osc, command, self.params, self.geometry,
                self._stance_offsets, self.shape_h, self.shape_gc,
                self.cfg.d_step, self.cfg.g_p, self.gains, self.last_tau,
                backend=self.cfg.contact_backend)
            return
        shape = self._shape_batch()
        for sub in range(SUBSTEPS):
            self.osc = step_oscillators(self.osc, command, self.coupling, PHYSICS_DT)
            targets = foot_target_from_cpg(
                self.osc.r, self.osc.theta, self.osc.phi, shape)
            targets = targets + self._stance_offsets
            q_des, _ = all_legs_ik(targets, self.geometry)
            q_des = q_des.reshape(self.n_envs, 12)
            if sub == SUBSTEPS - 1:
                # torque applied during the final substep, used by the reward
                self.last_tau = np.clip(
                    self.gains.kp * (q_des - self.sim.q)
                    - self.gains.kd * self.sim.q_dot, -33.5, 33.5)
            physics_step(self.sim, q_des, self.params,
                         PHYSICS_DT, geometry=self.geometry, terrain=self.terrain,
                         gains=self.gains, backend=self.cfg.contact_backend)

    def step(self, raw_action):
        """One 100 Hz policy step.  Returns (obs, reward, done, info)."""
        n = self.n_envs
        raw_action = np.clip(np.asarray(raw_action, dtype=float), -1.0, 1.0)
        command = scale_action(raw_action)
        self._inner_loop(command)
        self.last_action = raw_action.copy()
        self.step_count += 1

        v_body = quat_rotate_inverse(self.sim.quat, self.sim.vel)
        qd_t = self.sim.q_dot
        terms = compute_reward_terms(self.cmd, v_body, self.sim.omega,
                                     self.last_tau, qd_t, self.prev_qd, self.weights)
        reward = sum(terms.values())
        self.prev_qd = qd_t.copy()

        fallen = has_fallen(self.sim, self.terrain)
        timeout = self.step_count >= self.max_steps
        done = fallen | timeout

        info = {
            "fallen": fallen.copy(),
            "time_limit": (timeout & ~fallen),
            "ik_clamped": self.sim.ik_clamped.any(axis=1).copy(),
            "reward_terms": terms,
            "v_body": v_body.copy(),
            "episode_time": self.step_count * POLICY_DT,
        }
        if done.any():
            info["terminal_obs"] = self.observe()

        # scheduled events for continuing episodes
        resample = (self.step_count % int(COMMAND_RESAMPLE_SECONDS / POLICY_DT) == 0)
        push_every = int(self.cfg.randomization.push_interval / POLICY_DT)
        push_due = (self.step_count % push_every == 0) & self.cfg.randomization.enabled
        for i in range(n):
            if done[i]:
                self.reset_env(i)
            else:
                if resample[i] and self.cfg.task != "fixed":
                    cmd = sample_commands(self.rngs[i], self.cfg.task,
                                          self.forward_range)
                    self.cmd.vx[i], self.cmd.vy[i], self.cmd.yaw_rate[i] = cmd
                if push_due[i]:
                    direction = sample_push_direction(self.rngs[i])
                    mag = self.rngs[i].uniform(0.0, self.cfg.randomization.push_magnitude)
                    self.sim.vel[i, 0] += mag * direction[0]
                    self.sim.vel[i, 1] += mag * direction[1]

        return self.observe(), reward, done, info

    def telemetry_row(self, i, reward_terms=None):
        """Flat per-env telemetry record (CSV-compatible dict)."""
        v_body = quat_rotate_inverse(self.sim.quat[i:i + 1], self.sim.vel[i:i + 1])[0]
        feet = self.sim.feet_in_hip_frame(self.geometry)[i]
        row = {
            "time": float(self.step_count[i] * POLICY_DT),
            "cmd_vx": float(self.cmd.vx[i]), "cmd_vy": float(self.cmd.vy[i]),
            "cmd_yaw": float(self.cmd.yaw_rate[i]),
            "vx": float(v_body[0]), "vy": float(v_body[1]), "vz": float(v_body[2]),
            "wz": float(self.sim.omega[i, 2]),
            "trunk_z": float(self.sim.pos[i, 2]),
        }
        for l, name in enumerate(("fl", "fr", "hl", "hr")):
            row[f"contact_{name}"] = int(self.sim.contact[i, l])
            row[f"r_{name}"] = float(self.osc.r[i, l])
            row[f"theta_{name}"] = float(self.osc.theta[i, l])
            row[f"phi_{name}"] = float(self.osc.phi[i, l])
            row[f"foot_x_{name}"] = float(feet[l, 0])
            row[f"foot_y_{name}"] = float(feet[l, 1])
            row[f"foot_z_{name}"] = float(feet[l, 2])
        if reward_terms is not None:
            for k, v in reward_terms.items():
                row[k] = float(v[i])
        row["shape_h"] = float(self.shape_h[i])
        row["shape_gc"] = float(self.shape_gc[i])
        row["shape_gp"] = float(self.cfg.g_p)
        row["shape_dstep"] = float(self.cfg.d_step)
        return row
