import struct

import numpy as np
import pytest

from cpgloco.checkpoint import (CheckpointError, checkpoint_io,
                                load_checkpoint, save_checkpoint, MAGIC,
                                VERSION)
from cpgloco.networks import ActorCritic
from cpgloco.ppo import RunningNormalizer


def make_policy(seed=0):
    policy = ActorCritic(20, 12, hidden=(16, 8), seed=seed)
    norm = RunningNormalizer(20)
    norm.update(np.random.default_rng(seed).normal(2.0, 3.0, (50, 20)))
    return policy, norm


def test_save_load_bit_identical(tmp_path):
    policy, norm = make_policy()
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, policy, norm, training_step=12345)
    loaded, norm2, step = load_checkpoint(path)
    assert step == 12345
    for a, b in zip(policy.params(), loaded.params()):
        assert np.array_equal(a, b)
    assert np.array_equal(norm.mean, norm2.mean)
    assert np.array_equal(norm.var, norm2.var)
    assert norm2.count == norm.count
    assert norm2.frozen
    obs = np.random.default_rng(1).normal(0, 1, (3, 20))
    for x, y in zip(policy.forward(obs), loaded.forward(obs)):
        assert np.array_equal(x, y)


def test_truncated_file_rejected(tmp_path):
    policy, norm = make_policy()
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, policy, norm)
    data = path.read_bytes()
    for cut in (3, 10, 40, len(data) // 2, len(data) - 4):
        bad = tmp_path / f"cut{cut}.ckpt"
        bad.write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 100)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_version_bump_warns_but_loads(tmp_path):
    policy, norm = make_policy()
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, policy, norm)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", VERSION + 1)
    newer = tmp_path / "newer.ckpt"
    newer.write_bytes(bytes(data))
    with pytest.warns(UserWarning, match="version"):
        loaded, _, _ = load_checkpoint(newer)
    for a, b in zip(policy.params(), loaded.params()):
        assert np.array_equal(a, b)


def test_unsupported_version_rejected(tmp_path):
    policy, norm = make_policy()
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, policy, norm)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)


def test_dim_mismatch_reported(tmp_path):
    policy, norm = make_policy()
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, policy, norm)
    data = bytearray(path.read_bytes())
    # corrupt the header obs_dim
    data[8:12] = struct.pack("<I", 77)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(bad)


def test_checkpoint_io_wrapper(tmp_path):
    policy, norm = make_policy()
    path = tmp_path / "p.ckpt"
    assert checkpoint_io(policy, None, norm, path, "save") == "saved"
    loaded, _, _ = checkpoint_io(None, None, None, path, "load")
    assert loaded.obs_dim == 20
    with pytest.raises(ValueError):
        checkpoint_io(policy, None, norm, path, "sideways")


def test_magic_constant():
    assert MAGIC == b"CPGC" and len(MAGIC) == 4
