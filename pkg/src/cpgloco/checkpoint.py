"""Portable binary checkpoints for policy, optimizer-free.

Layout (little-endian):
  magic "CPGC" | version u32 | obs_dim u32 | act_dim u32
  | n_actor_dims u32, actor dims u32... | n_critic_dims u32, critic dims u32...
  | training_step u64
  | float64 blocks: per actor layer W (row-major) then b; per critic layer
    W then b; log_std; normalizer mean; normalizer var; normalizer count.

Version 1 is current; version 2 is reserved with an identical layout and
loads with a warning.
"""

import struct
import warnings

import numpy as np

from .networks import ActorCritic
from .ppo import RunningNormalizer

MAGIC = b"CPGC"
VERSION = 1
COMPATIBLE_VERSIONS = (1, 2)


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, policy, normalizer, training_step=0):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<II", policy.obs_dim, policy.act_dim))
        actor_dims = policy.actor.dims
        critic_dims = policy.critic.dims
        fh.write(struct.pack("<I", len(actor_dims)))
        fh.write(struct.pack(f"<{len(actor_dims)}I", *actor_dims))
        fh.write(struct.pack("<I", len(critic_dims)))
        fh.write(struct.pack(f"<{len(critic_dims)}I", *critic_dims))
        fh.write(struct.pack("<Q", training_step))
        for net in (policy.actor, policy.critic):
            for w, b in zip(net.weights, net.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(policy.log_std, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(normalizer.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(normalizer.var, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", normalizer.count))


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_array(fh, shape, what):
    n = int(np.prod(shape)) * 8
    return np.frombuffer(_read(fh, n, what), dtype="<f8").reshape(shape).copy()


def load_checkpoint(path):
    """Returns (policy, normalizer, training_step).  Validates magic and dims."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a policy checkpoint")
        version = struct.unpack("<I", _read(fh, 4, "version"))[0]
        if version not in COMPATIBLE_VERSIONS:
            raise CheckpointError(f"{path}: unsupported version {version}")
        if version != VERSION:
            warnings.warn(f"{path}: checkpoint version {version} newer than "
                          f"{VERSION}, layout assumed compatible")
        obs_dim, act_dim = struct.unpack("<II", _read(fh, 8, "dims"))
        n_a = struct.unpack("<I", _read(fh, 4, "actor rank"))[0]
        if n_a < 2 or n_a > 64:
            raise CheckpointError(f"{path}: implausible actor layer count {n_a}")
        actor_dims = list(struct.unpack(f"<{n_a}I", _read(fh, 4 * n_a, "actor dims")))
        n_c = struct.unpack("<I", _read(fh, 4, "critic rank"))[0]
        if n_c < 2 or n_c > 64:
            raise CheckpointError(f"{path}: implausible critic layer count {n_c}")
        critic_dims = list(struct.unpack(f"<{n_c}I", _read(fh, 4 * n_c, "critic dims")))
        if actor_dims[0] != obs_dim or actor_dims[-1] != act_dim:
            raise CheckpointError(
                f"{path}: actor dims {actor_dims} mismatch header "
                f"obs={obs_dim} act={act_dim}")
        if critic_dims[0] != obs_dim or critic_dims[-1] != 1:
            raise CheckpointError(f"{path}: critic dims {critic_dims} invalid")
        if actor_dims[1:-1] != critic_dims[1:-1]:
            raise CheckpointError(f"{path}: actor/critic hidden sizes differ")
        training_step = struct.unpack("<Q", _read(fh, 8, "training step"))[0]

        policy = ActorCritic(obs_dim, act_dim, hidden=tuple(actor_dims[1:-1]))
        for net, dims in ((policy.actor, actor_dims), (policy.critic, critic_dims)):
            for i in range(len(dims) - 1):
                net.weights[i] = _read_array(fh, (dims[i], dims[i + 1]), f"W{i}")
                net.biases[i] = _read_array(fh, (dims[i + 1],), f"b{i}")
        policy.log_std = _read_array(fh, (act_dim,), "log_std")
        normalizer = RunningNormalizer(obs_dim)
        normalizer.mean = _read_array(fh, (obs_dim,), "normalizer mean")
        normalizer.var = _read_array(fh, (obs_dim,), "normalizer var")
        normalizer.count = struct.unpack("<d", _read(fh, 8, "normalizer count"))[0]
        normalizer.frozen = True
    return policy, normalizer, training_step


def checkpoint_io(params, cfg, normalizer, path, direction):
    """Spec-shaped wrapper: direction 'save' stores, 'load' restores."""
    if direction == "save":
        save_checkpoint(path, params, normalizer,
                        training_step=getattr(cfg, "training_step", 0))
        return "saved"
    if direction == "load":
        return load_checkpoint(path)
    raise ValueError(f"direction must be save or load, got {direction!r}")
