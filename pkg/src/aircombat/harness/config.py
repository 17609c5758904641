"""Run configuration and the flat ``section.key=value`` file format.

Example::

    task=NoWeapon1v1
    protocol=HierarchySelfplay
    algo=happo
    seeds=1,2,3
    env.max_decision_steps=500
    reward.safe_altitude=4000
    happo.clip_eps=0.2

``reward.``, ``missile.`` and ``airframe.`` are shorthands for the matching
``env.`` subsections. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..arena.config import EnvConfig, TaskKind
from ..errors import ConfigError
from ..happo import HappoConfig
from ..hasac import HasacConfig


class ProtocolKind(str, enum.Enum):
    SelfPlay = "SelfPlay"
    HierarchySelfplay = "HierarchySelfplay"
    VsBaseline = "VsBaseline"
    HierarchyVsBaseline = "HierarchyVsBaseline"

    @property
    def hierarchical(self) -> bool:
        return self.value.startswith("Hierarchy")

    @property
    def vs_baseline(self) -> bool:
        return self.value.endswith("VsBaseline")


class Algorithm(str, enum.Enum):
    happo = "happo"
    hasac = "hasac"


@dataclass
class RunConfig:
    task: TaskKind = TaskKind.NoWeapon1v1
    protocol: ProtocolKind = ProtocolKind.HierarchySelfplay
    algo: Algorithm = Algorithm.happo
    seeds: tuple[int, ...] = (1,)
    total_timesteps: int = 100_000
    eval_interval: int = 25_000
    eval_episodes: int = 32
    metrics_interval: int = 1000
    checkpoint_interval: int = 0
    hidden: tuple[int, ...] = (128, 128)
    shoot_head: str = "auto"
    out_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    happo: HappoConfig = field(default_factory=HappoConfig)
    hasac: HasacConfig = field(default_factory=HasacConfig)

    def __post_init__(self):
        self.task = TaskKind(self.task)
        self.protocol = ProtocolKind(self.protocol)
        self.algo = Algorithm(self.algo)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.env.task is not self.task:
            self.env = dataclasses.replace(self.env, task=self.task)

    def validate(self) -> RunConfig:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.total_timesteps < 0:
            raise ConfigError("total_timesteps must be >= 0")
        if self.eval_interval <= 0 or self.eval_episodes <= 0 or self.metrics_interval <= 0:
            raise ConfigError("eval_interval, eval_episodes and metrics_interval must be positive")
        if self.task is TaskKind.SingleControlHeading and self.protocol.vs_baseline:
            raise ConfigError("SingleControlHeading has no opponent; use a self-play protocol")
        if self.shoot_head not in ("auto", "true", "false"):
            raise ConfigError("shoot_head must be auto, true or false")
        if self.shoot_head == "true" and not self.task.learned_shooting:
            raise ConfigError(f"task {self.task.value} has no learned firing; a shoot head is not allowed")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")
        return self

    @property
    def with_shoot(self) -> bool:
        return self.task.learned_shooting and self.shoot_head != "false"


SECTION_ALIASES = {"reward": "env.reward", "missile": "env.missile", "airframe": "env.airframe"}
RUN_LOCAL_KEYS = {"total_timesteps", "out_dir", "seeds", "eval_interval", "eval_episodes", "checkpoint_interval"}


def _parse_value(kind, text: str):
    origin = typing.get_origin(kind)
    if origin in (tuple, list):
        items = [t for t in text.replace(" ", "").split(",") if t]
        (inner, *_) = typing.get_args(kind) or (str,)
        return tuple(_parse_value(inner, t) for t in items)
    if kind is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if isinstance(kind, type) and issubclass(kind, enum.Enum):
        return kind(text.strip())
    return text.strip()


def _render_value(value) -> str:
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_render_value(v) for v in value)
    return str(value)


def set_dotted(obj, key: str, text: str):
    """Return a copy of dataclass ``obj`` with dotted ``key`` set from ``text``."""
    head, _, rest = key.partition(".")
    hints = typing.get_type_hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    if head not in names:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(obj, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"{head!r} has no subkeys (got {key!r})")
        value = set_dotted(current, rest, text)
    else:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{key!r} is a section, not a value")
        try:
            value = _parse_value(hints[head], text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None
    try:
        return dataclasses.replace(obj, **{head: value})
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {exc}") from None


def canonical_key(key: str) -> str:
    head, dot, rest = key.partition(".")
    if head in SECTION_ALIASES and dot:
        return f"{SECTION_ALIASES[head]}.{rest}"
    if head == "run" and dot:
        return rest
    return key


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    for key, text in overrides.items():
        key = canonical_key(key.strip())
        if key == "task":
            cfg = set_dotted(cfg, "env.task", text)
        cfg = set_dotted(cfg, key, text)
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = apply_overrides(cfg, parse_config_text(text))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def flatten_config(obj, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten_config(value, key + "."))
        else:
            out[key] = _render_value(value)
    return out


RUN_LENGTH_KEYS = {"total_timesteps", "out_dir"}


def dump_config(cfg: RunConfig, include_run_length: bool = True) -> str:
    """Render as loadable ``key=value`` lines.

    Without ``include_run_length`` the budget and output directory are
    omitted, which is how checkpoints store their config.
    """
    skip = {"env.task"} | (set() if include_run_length else RUN_LENGTH_KEYS)
    return "".join(f"{k}={v}\n" for k, v in flatten_config(cfg).items() if k not in skip)


def config_digest(cfg: RunConfig, seed: int) -> str:
    """SHA-256 over every setting that shapes parameters and metrics for ``seed``.

    Run-length and output settings are excluded so a run can be resumed with
    a larger budget.
    """
    flat = {k: v for k, v in flatten_config(cfg).items() if k not in RUN_LOCAL_KEYS}
    flat["seed"] = str(seed)
    text = "".join(f"{k}={flat[k]}\n" for k in sorted(flat))
    return hashlib.sha256(text.encode()).hexdigest()
