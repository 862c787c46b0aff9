"""Line-oriented ``key = value`` configuration files with section headers.

Unknown sections or keys are errors; omitted keys take documented
defaults, some of which depend on the shot count (tasks per batch and
queries per task). ``load_config`` returns the fully resolved
configuration so callers can echo it.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from typing import Optional, Tuple

from .data import SynthConfig
from .embedding import ExtractorConfig
from .metric import KINDS, ScaledMetricHead
from .training import SHOT_DEFAULTS, TrainConfig


class ConfigError(ValueError):
    """Unparseable, unknown, or out-of-range configuration entry."""


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")


def _parse_int_tuple(raw: str, key: str) -> Tuple[int, ...]:
    try:
        return tuple(int(p) for p in raw.replace(",", " ").split())
    except ValueError as err:
        raise ConfigError(f"key {key!r}: expected integers, got {raw!r}") from err


_SCHEMA = {
    "train": {
        "ways": int, "shots": int, "tasks_per_batch": int,
        "queries_per_task": int, "episodes": int, "learning_rate": float,
        "momentum": float, "aux": bool, "aux_p0": float,
        "aux_decay_steps": int, "eval_every": int, "eval_tasks": int,
        "patience": int, "seed": int,
    },
    "model": {
        "extractor": str, "distance": str, "alpha": float,
        "alpha_trainable": bool, "use_ten": bool, "blocks": int, "depth": int,
        "base_filters": int, "hidden": tuple, "out_dim": int,
        "weight_decay": float, "ten_l2": float, "seed": int,
    },
    "data": {
        "source": str, "path": str, "downsample": int, "classes": int,
        "superclasses": int, "dim": int, "samples_per_class": int,
        "within_scale": float, "mean_scale": float, "pre_scale": float,
        "seed": int,
    },
}


@dataclass
class DataConfig:
    source: str = "synth"
    path: str = ""
    downsample: int = 8
    synth: Optional[SynthConfig] = None


@dataclass
class RunConfig:
    train: TrainConfig
    extractor: ExtractorConfig
    head: ScaledMetricHead
    use_ten: bool
    ten_l2: float
    model_seed: int
    data: DataConfig

    def echo(self) -> str:
        lines = ["[train]"]
        t = self.train
        for key, value in (("ways", t.k_ways), ("shots", t.m_shots),
                           ("tasks_per_batch", t.tasks_per_batch),
                           ("queries_per_task", t.queries_per_task),
                           ("episodes", t.total_episodes),
                           ("learning_rate", t.learning_rate),
                           ("momentum", t.momentum), ("aux", t.aux_enabled),
                           ("aux_p0", t.aux_p0),
                           ("aux_decay_steps", t.aux_decay_steps),
                           ("eval_every", t.eval_every),
                           ("eval_tasks", t.eval_tasks),
                           ("patience", t.patience), ("seed", t.seed)):
            lines.append(f"{key} = {value}")
        lines.append("[model]")
        e = self.extractor
        for key, value in (("extractor", e.kind), ("distance", self.head.kind),
                           ("alpha", self.head.alpha),
                           ("alpha_trainable", self.head.trainable),
                           ("use_ten", self.use_ten), ("blocks", e.blocks),
                           ("depth", e.depth), ("base_filters", e.base_filters),
                           ("hidden", ",".join(map(str, e.hidden))),
                           ("out_dim", e.out_dim),
                           ("weight_decay", e.weight_decay),
                           ("ten_l2", self.ten_l2), ("seed", self.model_seed)):
            lines.append(f"{key} = {value}")
        lines.append("[data]")
        d = self.data
        lines.append(f"source = {d.source}")
        lines.append(f"path = {d.path}")
        lines.append(f"downsample = {d.downsample}")
        if d.synth is not None:
            s = d.synth
            for key, value in (("classes", s.n_classes),
                               ("superclasses", s.n_superclasses),
                               ("dim", s.d_x),
                               ("samples_per_class", s.samples_per_class),
                               ("within_scale", s.within_scale),
                               ("mean_scale", s.mean_scale),
                               ("pre_scale", s.pre_scale), ("seed", s.seed)):
                lines.append(f"{key} = {value}")
        return "\n".join(lines)


def _read_sections(path: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.ParsingError as err:
        line = err.errors[0][0] if err.errors else "?"
        raise ConfigError(f"{path}: parse error at line {line}: "
                          f"{err.errors[0][1].strip()!r}") from err
    except configparser.Error as err:
        line = getattr(err, "lineno", "?")
        raise ConfigError(f"{path}: parse error at line {line}: {err}") from err
    out = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            kind = schema[key]
            try:
                if kind is bool:
                    values[key] = _parse_bool(raw, key)
                elif kind is tuple:
                    values[key] = _parse_int_tuple(raw, key)
                else:
                    values[key] = kind(raw)
            except ConfigError:
                raise
            except ValueError as err:
                raise ConfigError(
                    f"{path}: key {key!r}: expected {kind.__name__}, "
                    f"got {raw!r}") from err
        out[section] = values
    return out


def load_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    sections = _read_sections(path)
    tr = sections.get("train", {})
    mo = sections.get("model", {})
    da = sections.get("data", {})

    shots = tr.get("shots", 5)
    default_tasks, default_queries = SHOT_DEFAULTS.get(shots, (2, 32))
    try:
        train_cfg = TrainConfig(
            k_ways=tr.get("ways", 5),
            m_shots=shots,
            tasks_per_batch=tr.get("tasks_per_batch", default_tasks),
            queries_per_task=tr.get("queries_per_task", default_queries),
            total_episodes=tr.get("episodes", 10000),
            learning_rate=tr.get("learning_rate", 0.1),
            momentum=tr.get("momentum", 0.9),
            aux_enabled=tr.get("aux", False),
            aux_p0=tr.get("aux_p0", 0.9),
            aux_decay_steps=tr.get("aux_decay_steps", 20),
            eval_every=tr.get("eval_every", 200),
            eval_tasks=tr.get("eval_tasks", 50),
            patience=tr.get("patience", 0),
            seed=tr.get("seed", 0),
        )
    except ValueError as err:
        raise ConfigError(f"[train]: {err}") from err

    alpha = mo.get("alpha", 1.0)
    if alpha <= 0:
        raise ConfigError("key 'alpha': must be positive")
    try:
        head = ScaledMetricHead(kind=mo.get("distance", "squared-euclidean"),
                                alpha=alpha,
                                trainable=mo.get("alpha_trainable", False))
    except ValueError as err:
        raise ConfigError(f"key 'distance': {err}") from err
    if head.kind not in KINDS:
        raise ConfigError(f"key 'distance': unknown kind {head.kind!r}")

    source = da.get("source", "synth")
    if source not in ("synth", "cifar100"):
        raise ConfigError(f"key 'source': unknown source {source!r}")
    downsample = da.get("downsample", 8)
    synth = None
    if source == "synth":
        try:
            synth = SynthConfig(
                n_classes=da.get("classes", 20),
                n_superclasses=da.get("superclasses", 4),
                d_x=da.get("dim", 16),
                mean_scale=da.get("mean_scale", 1.0),
                within_scale=da.get("within_scale", 0.5),
                samples_per_class=da.get("samples_per_class", 50),
                pre_scale=da.get("pre_scale", 1.0),
                seed=da.get("seed", 0),
            )
        except ValueError as err:
            raise ConfigError(f"[data]: {err}") from err
    data_cfg = DataConfig(source=source, path=da.get("path", ""),
                          downsample=downsample, synth=synth)

    kind = mo.get("extractor", "linear" if source == "synth" else "mini-resnet")
    if source == "synth":
        input_shape = (data_cfg.synth.d_x,)
    else:
        side = downsample if downsample else 32
        input_shape = (3, side, side)
    try:
        extractor = ExtractorConfig(
            kind=kind,
            input_shape=input_shape,
            out_dim=mo.get("out_dim", 8),
            hidden=mo.get("hidden", (16,)),
            blocks=mo.get("blocks", 2),
            depth=mo.get("depth", 3),
            base_filters=mo.get("base_filters", 8),
            weight_decay=mo.get("weight_decay", 5e-4),
        )
    except ValueError as err:
        raise ConfigError(f"[model]: {err}") from err

    return RunConfig(train=train_cfg, extractor=extractor, head=head,
                     use_ten=mo.get("use_ten", False),
                     ten_l2=mo.get("ten_l2", 0.01),
                     model_seed=mo.get("seed", 0), data=data_cfg)
