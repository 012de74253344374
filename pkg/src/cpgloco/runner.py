"""Run orchestration: training runs, evaluation scenarios, open-loop
baselines, and trace collection.  The CLI wires user config into these.
"""

import os

import numpy as np

from .analysis import GaitMetrics, GaitTrace, export_traces, gait_metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import save_config
from .env import (FIXED_TASK_VX, POLICY_DT, EnvConfig, ObservationSpec,
                  VectorEnv)
from .kinematics import TrajectoryShape, stance_offsets, all_legs_ik, foot_target_from_cpg
from .oscillators import open_loop_gait, step_oscillators, phase_differences
from .physics import PhysicalParams, RandomizationConfig, SimState, reset_sim, has_fallen, physics_step
from .ppo import PpoConfig, RunningNormalizer, train
from .rotation import quat_rotate_inverse


def run_train(cfg, callback=None):
    """Train per config; writes config snapshot, log CSV and checkpoints.

    Returns (TrainResult, checkpoint_path).
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "config.txt"))
    env = VectorEnv(cfg.env_config(), terrain=cfg.terrain())
    ppo_cfg = PpoConfig(
        n_envs=cfg.n_envs, horizon=cfg.horizon, hidden=cfg.hidden_sizes(),
        seed=cfg.seed, lr_init=cfg.lr_init, entropy_coef=cfg.entropy_coef,
        log_std_init=cfg.log_std_init,
        value_warmup_updates=cfg.value_warmup_updates,
        curriculum_updates=cfg.curriculum_updates)
    ckpt_path = os.path.join(cfg.out_dir, "policy.ckpt")
    state = {"best_return": -np.inf}

    def periodic(update, policy, normalizer, row):
        if update % cfg.checkpoint_every == 0 or update == cfg.updates:
            save_checkpoint(ckpt_path, policy, normalizer, training_step=row["steps"])
            if row["return_mean"] >= state["best_return"]:
                state["best_return"] = row["return_mean"]
                save_checkpoint(os.path.join(cfg.out_dir, "policy_best.ckpt"),
                                policy, normalizer, training_step=row["steps"])
        if callback is not None:
            return callback(update, policy, normalizer, row)
        return False

    result = train(env, ppo_cfg, cfg.updates, log_every=cfg.log_every,
                   callback=periodic, log_path=os.path.join(cfg.out_dir, "train_log.csv"))
    save_checkpoint(ckpt_path, result.policy, result.normalizer,
                    training_step=result.updates_done * ppo_cfg.batch_size)
    return result, ckpt_path


def _check_obs_compat(policy, env):
    if policy.obs_dim != env.obs_dim:
        spec = ObservationSpec(env.cfg.obs_mode)
        raise SystemExit(
            f"checkpoint expects {policy.obs_dim}-dim observations but mode "
            f"'{env.cfg.obs_mode}' produces {env.obs_dim}: {spec.layout}")


def rollout_episode(env, policy, normalizer, *, command=None, max_steps=None,
                    collect=True, shape_schedule=None, payload=None):
    """Run one deterministic episode on env slot 0 of a fresh environment.

    shape_schedule: list of (time_s, h or None, g_c or None) applied online.
    Returns (GaitTrace or None, fell, mean_vx_after_transient).
    """
    env.reset_all()
    if payload is not None:
        env.params.payload[:] = payload
    if command is not None:
        env.cmd.vx[:], env.cmd.vy[:], env.cmd.yaw_rate[:] = command
    obs = env.observe()
    rows = []
    fell = False
    steps = max_steps or env.max_steps
    schedule = sorted(shape_schedule or [], key=lambda s: s[0])
    next_change = 0
    vxs = []
    for t in range(steps):
        while next_change < len(schedule) and schedule[next_change][0] <= t * POLICY_DT:
            _, h, g_c = schedule[next_change]
            env.set_shape(h=h, g_c=g_c)
            next_change += 1
        mean, _, _ = policy.forward(normalizer.normalize(obs))
        obs, reward, done, info = env.step(np.clip(mean, -1.0, 1.0))
        if command is not None:
            env.cmd.vx[:], env.cmd.vy[:], env.cmd.yaw_rate[:] = command
        if collect:
            rows.append(env.telemetry_row(0, info["reward_terms"]))
            rows[-1]["time"] = (t + 1) * POLICY_DT
            rows[-1]["trunk_z"] = float(env.sim.pos[0, 2])
        if t > 100:
            vxs.append(float(info["v_body"][0, 0]))
        if info["fallen"][0]:
            fell = True
            break
        if bool(done[0]):
            break
    trace = GaitTrace.from_rows(rows, fell=fell) if collect and rows else None
    return trace, fell, float(np.mean(vxs)) if vxs else 0.0


def _eval_env(cfg, n_envs=1, backend=None, randomization=False):
    env_cfg = cfg.env_config()
    env_cfg.n_envs = n_envs
    env_cfg.randomization = RandomizationConfig(
        friction_range=(cfg.friction_lo, cfg.friction_hi),
        limb_mass_scale=cfg.limb_mass_scale,
        added_mass_range=(0.0, 0.0), push_magnitude=0.0,
        push_interval=cfg.push_interval, enabled=randomization)
    if backend:
        env_cfg.contact_backend = backend
    env_cfg.seed = cfg.seed + 9999
    return VectorEnv(env_cfg, terrain=cfg.terrain())


def run_eval(cfg, checkpoint, scenario="track"):
    """Evaluation scenarios; returns a list of result-row dicts."""
    policy, normalizer, _ = load_checkpoint(checkpoint)
    rows = []
    if scenario == "track":
        env = _eval_env(cfg)
        _check_obs_compat(policy, env)
        metrics = evaluate_tracking(env, policy, normalizer,
                                    command=(cfg.eval_command_vx, 0.0, 0.0),
                                    episodes=cfg.eval_episodes)
        rows.append({"scenario": "track", "vx_cmd": cfg.eval_command_vx,
                     **metrics})
    elif scenario == "mass_sweep":
        env = _eval_env(cfg)
        _check_obs_compat(policy, env)
        for payload in np.arange(0.0, cfg.payload_max + 1e-9, cfg.payload_step):
            metrics = evaluate_tracking(
                env, policy, normalizer, command=(cfg.eval_command_vx, 0.0, 0.0),
                episodes=cfg.eval_episodes, payload=float(payload))
            rows.append({"scenario": "mass_sweep", "payload": float(payload),
                         "vx_cmd": cfg.eval_command_vx, **metrics})
        # flag non-monotone speed-vs-payload beyond a noise allowance
        speeds = [row["mean_vx"] for row in rows]
        for i, row in enumerate(rows):
            row["trend_violation"] = bool(
                i > 0 and speeds[i] > speeds[i - 1] + 0.05)
    elif scenario == "omni":
        env = _eval_env(cfg)
        _check_obs_compat(policy, env)
        grid = [("vx", (0.5, 0.0, 0.0)), ("vy", (0.0, 0.5, 0.0)),
                ("vx+vy", (0.5, 0.5, 0.0)), ("yaw", (0.0, 0.0, 0.6))]
        for name, command in grid:
            metrics = evaluate_tracking(env, policy, normalizer,
                                        command=command, episodes=cfg.eval_episodes)
            rows.append({"scenario": f"omni:{name}", "command": command, **metrics})
    elif scenario == "terrain":
        env = _eval_env(cfg)
        _check_obs_compat(policy, env)
        metrics = evaluate_tracking(env, policy, normalizer,
                                    command=(cfg.eval_command_vx, 0.0, 0.0),
                                    episodes=cfg.eval_episodes)
        rows.append({"scenario": "terrain", "terrain": cfg.terrain_file or "flat",
                     **metrics})
    else:
        raise SystemExit(f"unknown eval scenario {scenario!r}")
    return rows


def evaluate_tracking(env, policy, normalizer, command, episodes=10, payload=None):
    """Mean tracking statistics over deterministic episodes."""
    vxs, vys, wzs, falls = [], [], [], 0
    duties, periods = [], []
    for _ in range(episodes):
        trace, fell, mean_vx = rollout_episode(
            env, policy, normalizer, command=command, payload=payload)
        falls += int(fell)
        vxs.append(mean_vx)
        if trace is not None:
            m = gait_metrics(trace)
            vys.append(m.mean_velocity[1])
            wzs.append(float(np.mean(trace.body_velocity[:, 2])))
            if m.available:
                duties.append(m.duty_ratio)
                periods.append(m.period)
    return {
        "mean_vx": float(np.mean(vxs)),
        "mean_vy": float(np.mean(vys)) if vys else float("nan"),
        "duty_ratio": float(np.mean(duties)) if duties else float("nan"),
        "period": float(np.mean(periods)) if periods else float("nan"),
        "falls": falls,
        "episodes": episodes,
    }


def run_openloop(gait, f=2.0, duration=8.0, mu=1.5, backend="spring",
                 out_dir=None, h=0.28, g_c=0.05, g_p=0.01, d_step=0.10,
                 coupling_weight=1.0, seed=1):
    """Coupled open-loop gait through the full kinematics+physics stack.

    Returns (GaitTrace, GaitMetrics, final OscillatorState).
    """
    from .kinematics import RobotGeometry
    geometry = RobotGeometry()
    offs = stance_offsets(geometry)
    shape = TrajectoryShape(d_step=d_step, h=h, g_c=g_c, g_p=g_p)
    rand = RandomizationConfig(enabled=False)
    state, params, _ = reset_sim(rand, rng=seed,
                                 shape_ranges={"h": (h, h), "g_c": (g_c, g_c)},
                                 d_step=d_step, g_p=g_p)
    coupling, cmd, osc = open_loop_gait(gait, f=f, mu=mu,
                                        coupling_weight=coupling_weight)
    n_steps = int(round(duration / POLICY_DT))
    rows = []
    fell = False
    for step_i in range(n_steps):
        for _ in range(10):
            osc = step_oscillators(osc, cmd, coupling)
            targets = foot_target_from_cpg(osc.r, osc.theta, osc.phi, shape) + offs
            q_des, _ = all_legs_ik(targets[None, :, :], geometry)
            physics_step(state, q_des.reshape(1, 12), params, backend=backend)
        v_body = quat_rotate_inverse(state.quat, state.vel)[0]
        feet = state.feet_in_hip_frame(geometry)[0]
        row = {"time": (step_i + 1) * POLICY_DT,
               "cmd_vx": 0.0, "cmd_vy": 0.0, "cmd_yaw": 0.0,
               "vx": float(v_body[0]), "vy": float(v_body[1]), "vz": float(v_body[2]),
               "wz": float(state.omega[0, 2]), "trunk_z": float(state.pos[0, 2])}
        for l, name in enumerate(("fl", "fr", "hl", "hr")):
            row[f"contact_{name}"] = int(state.contact[0, l])
            row[f"r_{name}"] = float(osc.r[l])
            row[f"theta_{name}"] = float(osc.theta[l])
            row[f"phi_{name}"] = float(osc.phi[l])
            row[f"foot_x_{name}"] = float(feet[l, 0])
            row[f"foot_y_{name}"] = float(feet[l, 1])
            row[f"foot_z_{name}"] = float(feet[l, 2])
        row.update({"shape_h": h, "shape_gc": g_c, "shape_gp": g_p,
                    "shape_dstep": d_step})
        rows.append(row)
        if bool(has_fallen(state)[0]):
            fell = True
            break
    trace = GaitTrace.from_rows(rows, fell=fell)
    metrics = gait_metrics(trace)
    if out_dir:
        export_traces(trace, "all", out_dir)
    return trace, metrics, osc
