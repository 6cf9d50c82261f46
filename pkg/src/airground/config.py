"""Run configuration: a flat ``section.key = value`` text format.

Grammar (one statement per line)::

    line     := blank | comment | assign
    comment  := "#" anything
    assign   := key "=" value [comment]
    key      := section "." name          e.g.  uav.learning_rate
    value    := number | "true" | "false" | word | list
    list     := number ("," number)*

Keys not listed by ``config --print-defaults`` are rejected, with the closest
known key suggested.  Environment variables ``AIRGROUND_<SECTION>_<NAME>``
(upper case) override the file, e.g. ``AIRGROUND_UAV_EPSILON=0.25``.
"""

from __future__ import annotations

import dataclasses
import difflib
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

from . import world as W
from .env import EnvConfig, RewardParams
from .errors import ConfigError
from .icm import IcmConfig
from .nn import LrSchedule
from .ppo import PpoConfig

ENV_PREFIX = "AIRGROUND"
AUTO = "auto"


@dataclass(frozen=True)
class EnvSection:
    variant: str = "original"
    corridor_width: float | None = None
    fork_half_angle: float | None = None
    obstacle_layout_id: int | None = None
    target_branch_angle: float | None = None
    corridor_length: float = 60.0
    fork: bool = True
    obstacle_xs: tuple[float, ...] = (8.0, 16.0, 24.0, 32.0, 40.0, 48.0)
    step_limit: int = 1500
    uav_mode: str = "planar"
    dt: float = 0.05


@dataclass(frozen=True)
class AgentSection:
    learning_rate: float = 3e-4
    learning_rate_schedule: str = "linear"
    beta: float = 0.03
    epsilon: float = 0.2
    lambd: float = 0.95
    extrinsic_gamma: float = 0.99
    extrinsic_strength: float = 1.0
    curiosity_strength: float = 0.02
    curiosity_gamma: float = 0.99
    curiosity_learning_rate: float = 3e-4
    forward_weight: float = 0.2
    epochs: int = 3
    minibatch_size: int = 1024
    value_coef: float = 0.5
    value_scale: float = 1000.0

    def ppo(self, horizon: int) -> PpoConfig:
        return PpoConfig(
            epsilon=self.epsilon,
            entropy_coef=self.beta,
            gamma=self.extrinsic_gamma,
            lam=self.lambd,
            epochs=self.epochs,
            minibatch_size=self.minibatch_size,
            horizon=horizon,
            value_coef=self.value_coef,
            extrinsic_strength=self.extrinsic_strength,
        )

    def icm(self) -> IcmConfig:
        return IcmConfig(
            strength=self.curiosity_strength,
            curiosity_gamma=self.curiosity_gamma,
            learning_rate=self.curiosity_learning_rate,
            forward_weight=self.forward_weight,
        )

    def schedule(self, total_steps: int) -> LrSchedule:
        return LrSchedule(self.learning_rate, int(total_steps), self.learning_rate_schedule)


def _ugv_defaults() -> AgentSection:
    return AgentSection(learning_rate=2e-4, epsilon=0.3, curiosity_strength=0.05)


@dataclass(frozen=True)
class GateSection:
    window_steps: int = 10000
    threshold: float = 5000.0
    required_consecutive: int = 50
    stage1_ceiling: int = 20_000_000


@dataclass(frozen=True)
class TrainSection:
    num_instances: int = 30
    horizon: int = 512
    max_step: int = 10_000_000
    seed: int = 0
    mode: str = "staged"
    checkpoint_every: int = 10
    workers: int = 1


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 1000
    deterministic: bool = True


@dataclass(frozen=True)
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    rewards: RewardParams = field(default_factory=RewardParams)
    uav: AgentSection = field(default_factory=AgentSection)
    ugv: AgentSection = field(default_factory=_ugv_defaults)
    gate: GateSection = field(default_factory=GateSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def env_config(self, variant: str | None = None) -> EnvConfig:
        e = self.env
        base = W.EnvVariant.by_name(variant or e.variant)
        over = {
            k: getattr(e, k)
            for k in ("corridor_width", "fork_half_angle", "obstacle_layout_id", "target_branch_angle")
            if getattr(e, k) is not None and variant is None
        }
        v = dataclasses.replace(base, **over)
        layout = W.Layout(corridor_length=e.corridor_length, fork=e.fork, obstacle_xs=tuple(e.obstacle_xs))
        v.validate()
        layout.for_variant(v).validate()
        return EnvConfig(
            variant=v,
            layout=layout,
            rewards=self.rewards,
            uav_mode=e.uav_mode,
            dt=e.dt,
            step_limit=e.step_limit,
        )

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        return from_flat({**to_flat(self), **overrides})


SECTIONS = ("env", "rewards", "uav", "ugv", "gate", "train", "eval")


# ----------------------------------------------------------------------------
# flat view


def to_flat(cfg: RunConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            out[f"{sec}.{f.name}"] = getattr(obj, f.name)
    return out


def _kinds() -> dict[str, str]:
    """Value kind for every key, from the dataclass annotations."""
    kinds = {}
    defaults = RunConfig()
    for sec in SECTIONS:
        obj = getattr(defaults, sec)
        for f in dataclasses.fields(obj):
            t = str(f.type)
            if "tuple" in t:
                kind = "floats"
            elif "None" in t:
                kind = "int?" if "int" in t else "float?"
            elif t == "bool":
                kind = "bool"
            elif t == "int":
                kind = "int"
            elif t == "float":
                kind = "float"
            else:
                kind = "str"
            kinds[f"{sec}.{f.name}"] = kind
    return kinds


KINDS = _kinds()

_CHOICES = {
    "env.variant": ("original", "complex"),
    "env.uav_mode": ("planar", "rigid"),
    "uav.learning_rate_schedule": ("linear", "constant"),
    "ugv.learning_rate_schedule": ("linear", "constant"),
    "train.mode": ("staged", "simultaneous"),
}


def _check_range(key: str, v: Any, line: int | None) -> None:
    name = key.split(".", 1)[1]

    def bad(msg):
        raise ConfigError(f"{msg}, got {v!r}", key, line)

    if key in _CHOICES and v not in _CHOICES[key]:
        bad(f"must be one of {', '.join(_CHOICES[key])}")
    if isinstance(v, float) and not math.isfinite(v):
        bad("must be finite")
    if name in ("epsilon", "forward_weight") and not 0.0 < v < 1.0:
        bad("must lie in (0, 1)")
    if name in ("lambd", "extrinsic_gamma", "curiosity_gamma") and not 0.0 < v <= 1.0:
        bad("must lie in (0, 1]")
    if name in ("learning_rate", "curiosity_learning_rate", "dt", "value_scale") and not v > 0.0:
        bad("must be > 0")
    if name in ("beta", "extrinsic_strength", "curiosity_strength", "value_coef") and v < 0.0:
        bad("must be >= 0")
    if KINDS[key] == "int" and name not in ("seed",) and v < 1:
        bad("must be >= 1")
    if key == "train.seed" and v < 0:
        bad("must be >= 0")


def _parse_value(key: str, text: str, line: int | None) -> Any:
    kind = KINDS[key]
    s = text.strip()
    try:
        if kind == "bool":
            if s.lower() not in ("true", "false"):
                raise ValueError
            return s.lower() == "true"
        if kind in ("int", "int?"):
            if kind == "int?" and s.lower() == AUTO:
                return None
            f = float(s)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind in ("float", "float?"):
            if kind == "float?" and s.lower() == AUTO:
                return None
            return float(s)
        if kind == "floats":
            return tuple(float(p) for p in s.split(",") if p.strip())
        return s
    except ValueError:
        expect = {"int?": "an integer or auto", "float?": "a number or auto", "floats": "a comma-separated list of numbers"}
        raise ConfigError(f"expected {expect.get(kind, 'a ' + kind)}, got {s!r}", key, line) from None


def _format_value(v: Any) -> str:
    if v is None:
        return AUTO
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _unknown(key: str, line: int | None) -> ConfigError:
    near = difflib.get_close_matches(key, list(KINDS), n=1, cutoff=0.5)
    if not near:
        # try within the section, by the name part only
        sec, _, name = key.partition(".")
        names = [k.split(".", 1)[1] for k in KINDS if k.startswith(sec + ".")]
        m = difflib.get_close_matches(name, names, n=1, cutoff=0.5)
        near = [f"{sec}.{m[0]}"] if m else []
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return ConfigError(f"unknown key{hint}", key, line)


def from_flat(values: Mapping[str, Any], lines: Mapping[str, int] | None = None) -> RunConfig:
    lines = lines or {}
    defaults = RunConfig()
    sections: dict[str, dict[str, Any]] = {sec: {} for sec in SECTIONS}
    for key, v in values.items():
        if key not in KINDS:
            raise _unknown(key, lines.get(key))
        if isinstance(v, str) and KINDS[key] != "str":
            v = _parse_value(key, v, lines.get(key))
        if v is not None:
            _check_range(key, v, lines.get(key))
        sec, name = key.split(".", 1)
        sections[sec][name] = v
    built = {sec: dataclasses.replace(getattr(defaults, sec), **kv) for sec, kv in sections.items()}
    cfg = RunConfig(**built)
    try:
        cfg.env_config()
    except ConfigError as exc:
        raise ConfigError(str(exc), None, None) from None
    return cfg


def parse_config(source: str = "", env: Mapping[str, str] | None = None) -> RunConfig:
    """Parse config text (or a path to a config file) into a validated :class:`RunConfig`.

    ``env`` defaults to ``os.environ`` for the ``AIRGROUND_*`` overrides;
    pass ``{}`` to ignore the process environment.
    """
    text = source
    if source and "\n" not in source and "=" not in source:
        try:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {source!r}: {exc}") from None
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", None, n)
        key, _, val = body.partition("=")
        key = key.strip()
        if key not in KINDS:
            raise _unknown(key, n)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key, n)
        values[key] = _parse_value(key, val, n)
        lines[key] = n
    for var, val in (os.environ if env is None else env).items():
        if not var.startswith(ENV_PREFIX + "_"):
            continue
        rest = var[len(ENV_PREFIX) + 1 :].lower()
        sec, _, name = rest.partition("_")
        key = f"{sec}.{name}"
        if key not in KINDS:
            raise ConfigError(f"unknown key from environment variable {var}", key)
        values[key] = _parse_value(key, val, None)
    return from_flat(values, lines)


def format_config(cfg: RunConfig) -> str:
    out = []
    current = None
    for key, v in to_flat(cfg).items():
        sec = key.split(".", 1)[0]
        if sec != current:
            if current is not None:
                out.append("")
            out.append(f"# {sec}")
            current = sec
        out.append(f"{key} = {_format_value(v)}")
    return "\n".join(out) + "\n"


# Scaled-down runs used by the acceptance experiments.  Each is plain config
# text, so ``train --preset NAME`` is equivalent to ``train --config FILE``.
PRESETS = {
    "desk-ablation": """\
env.corridor_length = 20
env.fork = false
env.obstacle_xs = 8, 14
env.step_limit = 400
train.num_instances = 16
train.horizon = 128
train.max_step = 300000
uav.minibatch_size = 512
gate.stage1_ceiling = 300000
""",
    # gate threshold: about half the per-step mean of a scripted policy that
    # flies the branch centreline to the target on this map (892)
    "desk-fork": """\
env.corridor_length = 20
env.obstacle_xs = 8, 14
env.step_limit = 600
train.num_instances = 16
train.horizon = 128
train.max_step = 1000000
uav.minibatch_size = 512
ugv.minibatch_size = 512
gate.window_steps = 10000
gate.threshold = 450
gate.required_consecutive = 5
""",
}


def preset(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name]


def default_text() -> str:
    return format_config(RunConfig())


def describe(cfg: RunConfig) -> dict[str, Any]:
    """JSON-friendly flat mapping (used for hashing and manifests)."""
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in to_flat(cfg).items()}
