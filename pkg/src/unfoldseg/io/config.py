"""``key = value`` run configuration.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines are
ignored, dotted keys address sections (``solver.alpha = 0.1``).  Unknown and
duplicate keys are errors; missing keys keep their defaults.

=========================  =========  ==========================================
key                        default    meaning
=========================  =========  ==========================================
mode                       solve      solve | train | eval | synth
solver.alpha               0.1        residual sparsity weight
solver.mu                  1.0        mask proximal weight
solver.lambda              1.0        background proximal weight
solver.lipschitz           1.0        Lipschitz constant of the Taylor surrogate
solver.eps_l1              0.001      smoothing of the l1 gradient
solver.stages              4          number of stages K
solver.paper_literal_qa    false      drop alpha from the w^2 term of Q_a
solver.mask_prox           clamp      clamp | clamp+tv
solver.background_prox     clamp      clamp | gaussian
solver.tv_weight           0.1        step of the TV sweep (clamp+tv)
solver.threshold           0.5        binarisation threshold for output masks
training.steps             2000       optimiser steps
training.lr                0.0001     Adam learning rate
training.batch_size        4          scenes per step
training.seed              0          batch sampling / init seed
paths.input                ""         input image or manifest
paths.output               ""         output mask / checkpoint / directory
paths.checkpoint           ""         trained parameters for unfolded inference
paths.manifest             ""         scene manifest
=========================  =========  ==========================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from ..cos_model import SolverConfig
from ..errors import ConfigError, InvalidArgumentError
from ..unfolded.train import TrainConfig

MODES = ("solve", "train", "eval", "synth")


@dataclass(frozen=True)
class PathsConfig:
    input: str = ""
    output: str = ""
    checkpoint: str = ""
    manifest: str = ""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "solve"
    solver: SolverConfig = field(default_factory=SolverConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


# (section, config key) -> (dataclass field, type)
_SOLVER_KEYS = {
    "alpha": ("alpha", float),
    "mu": ("mu", float),
    "lambda": ("lam", float),
    "lipschitz": ("lipschitz", float),
    "eps_l1": ("eps_l1", float),
    "stages": ("stages", int),
    "paper_literal_qa": ("paper_literal_qa", bool),
    "mask_prox": ("mask_prox", str),
    "background_prox": ("background_prox", str),
    "tv_weight": ("tv_weight", float),
    "threshold": ("threshold", float),
}
_TRAINING_KEYS = {
    "steps": ("steps", int),
    "lr": ("lr", float),
    "batch_size": ("batch_size", int),
    "seed": ("seed", int),
}
_PATH_KEYS = {f.name: (f.name, str) for f in fields(PathsConfig)}
_SECTIONS = {"solver": _SOLVER_KEYS, "training": _TRAINING_KEYS, "paths": _PATH_KEYS}


def _convert(key, raw, kind):
    try:
        if kind is bool:
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
    except ValueError:
        raise ConfigError(f"type mismatch for {key}: expected {kind.__name__}, got {raw!r}", key) from None
    return raw


def parse_config(text: str) -> RunConfig:
    seen = set()
    top = {}
    sections = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"duplicate key {key}", key)
        seen.add(key)
        if key == "mode":
            if raw not in MODES:
                raise ConfigError(f"mode must be one of {MODES}, got {raw!r}", key)
            top["mode"] = raw
            continue
        section, _, name = key.partition(".")
        table = _SECTIONS.get(section)
        if table is None or name not in table:
            raise ConfigError(f"unknown key {key}", key)
        attr, kind = table[name]
        sections[section][attr] = _convert(key, raw, kind)
    try:
        return RunConfig(
            mode=top.get("mode", "solve"),
            solver=SolverConfig(**sections["solver"]),
            training=replace(TrainConfig(), **sections["training"]),
            paths=PathsConfig(**sections["paths"]),
        )
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(render_config(cfg)) == cfg``."""
    lines = [f"mode = {cfg.mode}"]
    for section, table in _SECTIONS.items():
        obj = getattr(cfg, section)
        for key, (attr, _) in table.items():
            lines.append(f"{section}.{key} = {_format(getattr(obj, attr))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
