"""Strict key-value experiment configuration.

Files are UTF-8 lines of ``section.key = value``; ``#`` starts a full-line
comment. Every key has a documented default, unknown keys are rejected,
and value errors carry the offending key path. An empty file is the
reference configuration.
"""

from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(Exception):
    """Configuration file is malformed or violates an invariant."""


def _as_int(raw: str) -> int:
    return int(raw, 10)


def _as_float(raw: str) -> float:
    return float(raw)


def _as_int_tuple(raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p, 10) for p in parts)


def _as_str(raw: str) -> str:
    return raw


_CONVERTERS = {int: _as_int, float: _as_float, tuple: _as_int_tuple, str: _as_str}


def _positive(v, key):
    if v <= 0:
        raise ConfigError(f"{key}: must be positive, got {v}")


def _non_negative(v, key):
    if v < 0:
        raise ConfigError(f"{key}: must be >= 0, got {v}")


def _probability(v, key):
    if not 0.0 <= v < 1.0:
        raise ConfigError(f"{key}: must be in [0, 1), got {v}")


def _choice(options):
    def check(v, key):
        if v not in options:
            raise ConfigError(f"{key}: must be one of {sorted(options)}, got {v!r}")

    return check


# key -> (python type, default, validator-or-None)
SCHEMA = {
    "world.pixels": (int, 32, _positive),
    "world.frames_per_chunk": (int, 4, _positive),
    "world.conditions": (int, 2, _positive),
    "world.sigma_px": (float, 1.5, _positive),
    "world.v_max": (float, 0.25, _positive),
    "data.train_episodes": (int, 96, _positive),
    "data.chunks_per_episode": (int, 6, _positive),
    "schedule.steps": (int, 100, _positive),
    "schedule.beta_min": (float, 1e-4, _positive),
    "schedule.beta_max": (float, 0.15, _positive),
    "denoiser.hidden": (tuple, (192, 192), None),
    "denoiser.cond_embed_dim": (int, 8, _positive),
    "denoiser.epochs": (int, 600, _non_negative),
    "denoiser.batch_size": (int, 32, _positive),
    "denoiser.learning_rate": (float, 1e-3, _positive),
    "denoiser.dropout_ctx": (float, 0.1, _probability),
    "denoiser.dropout_txt": (float, 0.1, _probability),
    "denoiser.ctx_noise": (float, 0.1, _non_negative),
    "denoiser.seed": (int, 7001, None),
    "jepa.embed_dim": (int, 16, _positive),
    "jepa.encoder_hidden": (tuple, (64,), None),
    "jepa.predictor_hidden": (tuple, (32,), None),
    "jepa.momentum": (float, 0.99, None),
    "jepa.epochs": (int, 150, _non_negative),
    "jepa.batch_size": (int, 8, _positive),
    "jepa.learning_rate": (float, 1e-3, _positive),
    "jepa.seed": (int, 7002, None),
    # Gaussian-noised episode replicas in the JEPA training diet: keeps the
    # embedding informative on the imperfect chunks the sampler feeds back
    "jepa.noise_aug": (float, 0.25, _non_negative),
    "jepa.aug_copies": (int, 2, _non_negative),
    "guidance.omega_ctx": (float, 1.5, None),
    "guidance.omega_txt": (float, 2.0, None),
    "guidance.omega_s": (float, 0.5, _non_negative),
    "guidance.surprise_input": (str, "x0hat", _choice({"x0hat", "xt"})),
    # surprise guidance is active for t <= start_step; 0 means every step
    "guidance.start_step": (int, 0, _non_negative),
    "bon.n": (int, 16, _positive),
    "eval.conditions": (int, 50, _positive),
    "eval.horizon_chunks": (int, 3, _positive),
    "run.base_seed": (int, 1234, None),
    "run.cache_dir": (str, "cache", None),
    "oracle.dimension": (int, 2, _positive),
    "oracle.coupling": (float, 0.5, None),
    "oracle.sigma": (float, 1.0, _positive),
    "oracle.mu0": (float, 0.0, None),
    "oracle.sigma0": (float, 0.2, _positive),
    "oracle.shift": (float, 0.0, None),
    "oracle.mu_surprise": (float, 2.0, None),
    "oracle.tilt": (float, 1.0, _non_negative),
    "oracle.context": (float, 1.0, None),
    "oracle.samples": (int, 20000, _positive),
    "oracle.steps": (int, 200, _positive),
    "oracle.beta_min": (float, 1e-4, _positive),
    "oracle.beta_max": (float, 0.1, _positive),
    "oracle.surprise_input": (str, "x0hat", _choice({"x0hat", "xt"})),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration; ``values`` maps every schema key."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> dict:
        """All keys with resolved values, in schema order."""
        return {k: _echo_value(self.values[k]) for k in SCHEMA}


def _echo_value(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key}")
        typ, _, validator = SCHEMA[key]
        try:
            value = _CONVERTERS[typ](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: bad value {raw!r} ({exc})") from exc
        if validator is not None:
            validator(value, key)
        values[key] = value
    for key, (_, default, _) in SCHEMA.items():
        values.setdefault(key, default)
    _cross_validate(values)
    return ExperimentConfig(values)


def default_config() -> ExperimentConfig:
    values = {key: default for key, (_, default, _) in SCHEMA.items()}
    _cross_validate(values)
    return ExperimentConfig(values)


def _cross_validate(values):
    if not values["schedule.beta_min"] <= values["schedule.beta_max"] < 1.0:
        raise ConfigError(
            "schedule.beta_min: need beta_min <= beta_max < 1, got "
            f"({values['schedule.beta_min']}, {values['schedule.beta_max']})"
        )
    if not values["oracle.beta_min"] <= values["oracle.beta_max"] < 1.0:
        raise ConfigError(
            "oracle.beta_min: need beta_min <= beta_max < 1, got "
            f"({values['oracle.beta_min']}, {values['oracle.beta_max']})"
        )
    if not 0.0 <= values["jepa.momentum"] <= 1.0:
        raise ConfigError(
            f"jepa.momentum: must be in [0, 1], got {values['jepa.momentum']}"
        )
    if values["guidance.start_step"] > values["schedule.steps"]:
        raise ConfigError(
            "guidance.start_step: must be <= schedule.steps "
            f"({values['schedule.steps']}), got {values['guidance.start_step']}"
        )
    if values["data.chunks_per_episode"] < 2:
        raise ConfigError(
            "data.chunks_per_episode: need >= 2 chunks for training pairs, "
            f"got {values['data.chunks_per_episode']}"
        )
