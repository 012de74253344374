"""Flat key=value run configuration with typed defaults and strict parsing.

Files hold one `key = value` pair per line; `#` starts a comment.  Unknown
keys are rejected.  Every run serializes its fully resolved config into the
output directory so results can be reproduced from the snapshot alone.
"""

import os
from dataclasses import dataclass, fields

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    # task / environment
    task: str = "forward"                 # forward | omni | fixed
    obs_mode: str = "full"                # full | med | min | min_nocontact
    n_envs: int = 64
    seed: int = 0
    randomization: bool = True
    contact_backend: str = "spring"       # spring | impulse
    friction_lo: float = 0.3
    friction_hi: float = 1.0
    limb_mass_scale: float = 0.20
    added_mass_lo: float = 0.0
    added_mass_hi: float = 5.0
    push_magnitude: float = 0.5
    push_interval: float = 15.0
    d_step: float = 0.10
    g_p: float = 0.01
    episode_seconds: float = 20.0
    terrain_file: str = ""                # empty = flat
    use_fast_path: bool = True
    # training
    updates: int = 3000
    horizon: int = 24
    hidden: str = "128,64"
    lr_init: float = 1e-3
    entropy_coef: float = 0.01
    log_std_init: float = 0.0
    value_warmup_updates: int = 0
    curriculum_updates: int = 0
    log_every: int = 1
    checkpoint_every: int = 500
    # evaluation
    eval_episodes: int = 10
    eval_command_vx: float = 0.5
    payload_max: float = 6.0
    payload_step: float = 1.0
    # io
    out_dir: str = "runs/latest"
    checkpoint: str = ""

    def hidden_sizes(self):
        return tuple(int(tok) for tok in self.hidden.split(",") if tok.strip())

    def randomization_config(self):
        from .physics import RandomizationConfig
        return RandomizationConfig(
            friction_range=(self.friction_lo, self.friction_hi),
            limb_mass_scale=self.limb_mass_scale,
            added_mass_range=(self.added_mass_lo, self.added_mass_hi),
            push_magnitude=self.push_magnitude,
            push_interval=self.push_interval,
            enabled=self.randomization)

    def env_config(self):
        from .env import EnvConfig
        return EnvConfig(
            n_envs=self.n_envs, task=self.task, obs_mode=self.obs_mode,
            seed=self.seed, randomization=self.randomization_config(),
            contact_backend=self.contact_backend, d_step=self.d_step,
            g_p=self.g_p, episode_seconds=self.episode_seconds,
            use_fast_path=self.use_fast_path)

    def terrain(self):
        from .terrain import Terrain, load_heightfield
        if self.terrain_file:
            return load_heightfield(self.terrain_file)
        return Terrain()


class ConfigError(ValueError):
    pass


def _coerce(value, target_type, key):
    value = value.strip()
    if target_type is bool:
        low = value.lower()
        if low in TRUE_WORDS:
            return True
        if low in FALSE_WORDS:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if target_type is int:
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from exc
    if target_type is float:
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from exc
    return value


def parse_assignments(pairs, base=None):
    """Apply `key=value` strings on top of a RunConfig."""
    cfg = base or RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    py_types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(value, py_types[key], key))
    return cfg


def load_config(path, base=None):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            pairs.append(line)
    return parse_assignments(pairs, base)


def save_config(cfg, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")
