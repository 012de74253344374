"""cpgloco: oscillator-driven quadruped locomotion lab.

Per-limb amplitude-controlled phase oscillators modulated by a learned
policy, mapped through task-space foot trajectories and inverse kinematics
to joint-PD torques, simulated with a reduced-order rigid-trunk physics
model, trained with PPO, analyzed with gait metrics, and driven live over
a teleoperation socket.
"""

from .analysis import GaitMetrics, GaitTrace, export_traces, gait_metrics, segment_contacts
from .checkpoint import load_checkpoint, save_checkpoint
from .env import (BodyCommand, EnvConfig, ObservationSpec, RewardWeights,
                  VectorEnv, build_observation, compute_reward, sample_commands,
                  scale_action)
from .kinematics import (JointState, LegGeometry, PdGains, RobotGeometry,
                         TrajectoryShape, foot_target_from_cpg,
                         forward_kinematics, inverse_kinematics, leg_jacobian,
                         pd_torques)
from .networks import ActorCritic
from .oscillators import (CouplingConfig, CpgCommand, OscillatorState,
                          open_loop_gait, step_oscillators)
from .physics import (PhysicalParams, RandomizationConfig, SimState,
                      apply_push, physics_step, reset_sim)
from .ppo import PpoConfig, RolloutBatch, compute_gae, ppo_update, train
from .terrain import Heightfield, Terrain, load_heightfield, terrain_height

__version__ = "0.1.0"
