"""Plain-text run configuration: `[section]` headers over `key = value` lines.

Files hold raw strings; typing happens at the point of use. Saving writes
sections and keys in registry order so save -> load -> save is byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

# every key a config file may set, in canonical output order
KNOWN_KEYS = {
    "global": ("seed", "output_dir", "log_every", "strict", "figures"),
    "trainer": (
        "method",
        "iterations",
        "batch_size",
        "hidden",
        "eta_theta",
        "eta_psi",
        "beta1",
        "beta2",
        "ladder",
        "train_t",
        "t_min",
        "truncation",
        "lambda",
        "sid_alpha",
        "fake_updates",
        "dmd_normalize",
        "cfg_scale",
        "conditional_components",
        "init_steps",
        "init_batch",
        "init_lr",
        "eval_samples",
        "snapshot_every",
        "checkpoint_every",
    ),
    "teacher": ("weights", "means", "stds"),
    "toy1d": (
        "objective",
        "steps",
        "lr",
        "beta1",
        "beta2",
        "grid_lo",
        "grid_hi",
        "grid_points",
        "init_m",
        "init_s",
        "target_weights",
        "target_means",
        "target_stds",
    ),
    "recursion": (
        "eta_theta",
        "eta_psi",
        "lambda",
        "A",
        "B",
        "r0",
        "drive",
        "steps",
        "lambda_sweep",
        "draws",
        "burn_in",
    ),
    "identity": ("tuples", "dim", "alphas"),
    "cost": ("t_fwd", "t_short_bwd", "t_long_bwd", "K", "unroll_factor"),
    "gradcheck": ("points", "dim", "batch", "hidden"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # section -> {key: raw string}

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value):
        if section not in KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        if key not in KNOWN_KEYS[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        self.values.setdefault(section, {})[key] = str(value)

    def section(self, name: str) -> dict:
        return dict(self.values.get(name, {}))


def load_config(path) -> RunConfig:
    """Parse a config file; report unknown sections/keys and syntax errors with
    their line numbers."""
    cfg = RunConfig()
    section = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
            cfg.values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS[section]:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in section [{section}]")
        cfg.values[section][key] = value.strip()
    return cfg


def save_resolved(cfg: RunConfig, path) -> Path:
    """Write in canonical section/key order; output re-loads to the same config."""
    lines = []
    for section in KNOWN_KEYS:
        if section not in cfg.values or not cfg.values[section]:
            continue
        lines.append(f"[{section}]")
        for key in KNOWN_KEYS[section]:
            if key in cfg.values[section]:
                lines.append(f"{key} = {cfg.values[section][key]}")
        lines.append("")
    path = Path(path)
    path.write_text("\n".join(lines))
    return path


def parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def parse_floats(raw: str) -> tuple:
    items = [s for s in raw.replace(" ", "").split(",") if s]
    if not items:
        raise ConfigError(f"expected a comma-separated float list, got {raw!r}")
    return tuple(float(s) for s in items)


def parse_ints(raw: str) -> tuple:
    return tuple(int(s) for s in raw.replace(" ", "").split(",") if s)


def parse_per_dim(raw: str) -> list:
    """Semicolon-separated dims, comma-separated values: '0.5,0.5; 1.0'."""
    dims = [d for d in raw.split(";") if d.strip()]
    if not dims:
        raise ConfigError(f"expected per-dimension lists, got {raw!r}")
    return [parse_floats(d) for d in dims]
