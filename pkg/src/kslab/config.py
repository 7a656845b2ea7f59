"""Experiment configuration: defaults, INI files and command-line overrides.

Precedence is command line > config file > built-in defaults. The file format
is INI with the sections below; every key is optional::

    [data]       height, width, n_coils, noise_std, slices_per_volume,
                 split (train, val, test volume counts), split_scale
    [sampling]   schemes, accelerations
    [recon]      methods, map_lambda, map_iters, map_tol, sensitivities
    [rim]        time_steps, hidden_channels, kernel_sizes, normalize_inputs
    [train]      iterations, batch_size, lr, warmup, decay_every, decay_ratio,
                 validate_every, validation_slices
    [seeds]      data, noise, mask, init, train

Overrides use ``section.key=value`` strings with the same value syntax as the
file. Relative output paths are resolved against ``$KSLAB_OUTPUT_ROOT`` when it
is set.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from kslab.errors import InvalidArgumentError
from kslab.rim import RimConfig, Schedule
from kslab.sampling import Scheme

OUTPUT_ROOT_ENV = "KSLAB_OUTPUT_ROOT"
METHODS = ("zero-filled", "map-cg", "rim")
SENSITIVITY_SOURCES = ("acs", "true")


@dataclass(frozen=True)
class ExperimentConfig:
    height: int = 64
    width: int = 64
    n_coils: int = 4
    noise_std: float = 0.005
    slices_per_volume: int = 4
    split: tuple = (40, 14, 13)
    split_scale: float = 0.25
    schemes: tuple = ("rectilinear", "radial")
    accelerations: tuple = (5, 10)
    methods: tuple = METHODS
    map_lambda: float = 1e-3
    map_iters: int = 50
    map_tol: float = 1e-6
    sensitivities: str = "acs"
    rim: RimConfig = field(default_factory=RimConfig)
    iterations: int = 2000
    batch_size: int = 1
    lr: float = 1e-4
    warmup: int = 100
    decay_every: int = 1000
    decay_ratio: float = 5.0
    validate_every: int = 50
    validation_slices: int = 4
    data_seed: int = 0
    noise_seed: int = 1
    mask_seed: int = 2
    init_seed: int = 3
    train_seed: int = 4

    def __post_init__(self):
        positive = ("height", "width", "n_coils", "slices_per_volume", "batch_size", "map_iters")
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise InvalidArgumentError(f"noise_std must be nonnegative, got {self.noise_std}")
        if len(self.split) != 3 or min(self.split) < 1 or self.split_scale <= 0:
            raise InvalidArgumentError(f"split must be three positive counts with a positive scale, got {self.split}")
        if not self.schemes:
            raise InvalidArgumentError("at least one scheme is required")
        for scheme in self.schemes:
            if scheme not in (Scheme.RECTILINEAR.value, Scheme.RADIAL.value):
                raise InvalidArgumentError(f"unknown scheme {scheme!r}")
        if not self.accelerations or min(self.accelerations) < 1:
            raise InvalidArgumentError(f"accelerations must be >= 1, got {self.accelerations}")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise InvalidArgumentError(f"methods must be a non-empty subset of {METHODS}")
        if self.sensitivities not in SENSITIVITY_SOURCES:
            raise InvalidArgumentError(f"sensitivities must be one of {SENSITIVITY_SOURCES}")
        if self.iterations < 0 or self.validate_every < 0 or self.validation_slices < 0:
            raise InvalidArgumentError("iterations, validate_every and validation_slices must be nonnegative")

    def split_counts(self):
        """(train, val, test) volume counts after scaling; each at least 1."""
        return tuple(max(1, int(round(n * self.split_scale))) for n in self.split)

    def schedule(self):
        return Schedule(
            iterations=self.iterations,
            batch_size=self.batch_size,
            lr=self.lr,
            warmup=self.warmup,
            decay_every=self.decay_every,
            decay_ratio=self.decay_ratio,
            accelerations=tuple(self.accelerations),
            seed=self.train_seed,
        )


# (section, key) -> (field name, parser)
def _ints(text):
    return tuple(int(v) for v in _items(text))


def _floats(text):
    return tuple(float(v) for v in _items(text))


def _items(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _acceleration_list(text):
    values = _floats(text)
    return tuple(int(v) if float(v).is_integer() else v for v in values)


_KEYS = {
    ("data", "height"): ("height", int),
    ("data", "width"): ("width", int),
    ("data", "n_coils"): ("n_coils", int),
    ("data", "noise_std"): ("noise_std", float),
    ("data", "slices_per_volume"): ("slices_per_volume", int),
    ("data", "split"): ("split", _ints),
    ("data", "split_scale"): ("split_scale", float),
    ("sampling", "schemes"): ("schemes", _items),
    ("sampling", "accelerations"): ("accelerations", _acceleration_list),
    ("recon", "methods"): ("methods", _items),
    ("recon", "map_lambda"): ("map_lambda", float),
    ("recon", "map_iters"): ("map_iters", int),
    ("recon", "map_tol"): ("map_tol", float),
    ("recon", "sensitivities"): ("sensitivities", str.strip),
    ("rim", "time_steps"): ("rim.time_steps", int),
    ("rim", "hidden_channels"): ("rim.hidden_channels", int),
    ("rim", "kernel_sizes"): ("rim.kernel_sizes", _ints),
    ("rim", "normalize_inputs"): ("rim.normalize_inputs", _bool),
    ("train", "iterations"): ("iterations", int),
    ("train", "batch_size"): ("batch_size", int),
    ("train", "lr"): ("lr", float),
    ("train", "warmup"): ("warmup", int),
    ("train", "decay_every"): ("decay_every", int),
    ("train", "decay_ratio"): ("decay_ratio", float),
    ("train", "validate_every"): ("validate_every", int),
    ("train", "validation_slices"): ("validation_slices", int),
    ("seeds", "data"): ("data_seed", int),
    ("seeds", "noise"): ("noise_seed", int),
    ("seeds", "mask"): ("mask_seed", int),
    ("seeds", "init"): ("init_seed", int),
    ("seeds", "train"): ("train_seed", int),
}


def _apply(values, assignments):
    """Parse ``{(section, key): text}`` into ``values`` (field name -> value)."""
    for (section, key), text in assignments.items():
        if (section, key) not in _KEYS:
            raise InvalidArgumentError(f"unknown config key {section}.{key}")
        name, parse = _KEYS[(section, key)]
        try:
            values[name] = parse(text)
        except ValueError as exc:
            raise InvalidArgumentError(f"bad value for {section}.{key}: {text!r} ({exc})") from exc


def _build(values):
    rim_fields = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("rim.")}
    top = {k: v for k, v in values.items() if not k.startswith("rim.")}
    rim = dataclasses.replace(RimConfig(), **rim_fields)
    return ExperimentConfig(rim=rim, **top)


def parse_ini(text):
    """``{(section, key): value text}`` from INI source."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgumentError(f"malformed config file: {exc}") from exc
    return {(section, key): parser[section][key] for section in parser.sections() for key in parser[section]}


def parse_overrides(items):
    """Turn ``["section.key=value", ...]`` into ``{(section, key): value}``."""
    out = {}
    for item in items or ():
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            raise InvalidArgumentError(f"override must look like section.key=value, got {item!r}")
        out[(section.strip(), key.strip())] = value
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the INI file at ``path`` (if any), then ``overrides``.

    ``overrides`` maps ``(section, key)`` to value text, as produced by
    :func:`parse_overrides`.
    """
    values = {}
    if path is not None:
        _apply(values, parse_ini(Path(path).read_text(encoding="utf-8")))
    _apply(values, overrides or {})
    return _build(values)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_ini(cfg):
    """Serialize every setting; ``load_config`` of the result reproduces ``cfg``."""
    sections = {}
    for (section, key), (name, _) in _KEYS.items():
        if name.startswith("rim."):
            value = getattr(cfg.rim, name.split(".", 1)[1])
        else:
            value = getattr(cfg, name)
        sections.setdefault(section, []).append(f"{key} = {_format(value)}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


def output_path(path):
    """Resolve a relative output path against ``$KSLAB_OUTPUT_ROOT`` if set."""
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path
