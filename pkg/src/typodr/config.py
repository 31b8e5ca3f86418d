"""Run configuration files.

INI-style key/value text with four sections: [method], [train],
[encoder], [augment].  Every key maps onto a field of the corresponding
dataclass; unknown keys are rejected, missing keys take the documented
defaults.  `render_resolved` serializes the fully resolved configuration
so every run directory records exactly which values were in effect.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass

from .encoder import EncoderConfig
from .errors import DataError, InputError
from .losses import Method, MethodConfig
from .trainer import TrainConfig
from .typos import AugmentationPolicy


@dataclass
class RunConfig:
    method: MethodConfig
    train: TrainConfig
    encoder: EncoderConfig
    augment: AugmentationPolicy

    def with_method(self, method: Method) -> "RunConfig":
        return RunConfig(
            dataclasses.replace(self.method, method=method),
            self.train,
            self.encoder,
            self.augment,
        )


def default_run_config(method: Method = Method.DR, k: int = 8) -> RunConfig:
    mcfg = MethodConfig(method=method, k=k)
    return RunConfig(
        method=mcfg,
        train=TrainConfig(),
        encoder=EncoderConfig(),
        augment=AugmentationPolicy(k=k),
    )


def _coerce(raw: str, target_type, key: str):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise DataError(f"config key {key!r}: cannot parse {raw!r} as a boolean")
    if target_type is Method:
        try:
            return Method(raw.strip().lower())
        except ValueError:
            raise DataError(
                f"config key {key!r}: unknown method {raw!r} "
                f"(expected one of {[m.value for m in Method]})"
            ) from None
    try:
        return target_type(raw)
    except ValueError:
        raise DataError(
            f"config key {key!r}: cannot parse {raw!r} as {target_type.__name__}"
        ) from None


_FIELD_TYPES = {
    "method": {
        "method": Method, "w1": float, "w2": float, "w": float,
        "beta": float, "gamma": float, "sigma": float, "k": int,
    },
    "train": {
        "batch_size": int, "hard_negatives_per_query": int,
        "learning_rate": float, "warmup_steps": int, "total_steps": int,
        "weight_decay": float, "adam_beta1": float, "adam_beta2": float,
        "adam_epsilon": float, "seed": int, "freeze_typos": bool,
    },
    "encoder": {
        "ngram_n": int, "num_buckets": int, "embed_dim": int,
        "shared_weights": bool,
    },
    "augment": {
        "min_word_len": int, "transforms_per_variant": int, "seed": int,
    },
}

_SECTION_CLASSES = {
    "method": MethodConfig,
    "train": TrainConfig,
    "encoder": EncoderConfig,
    "augment": AugmentationPolicy,
}


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise DataError(f"{source}: {e}") from None

    values: dict[str, dict] = {s: {} for s in _FIELD_TYPES}
    for section in parser.sections():
        if section not in _FIELD_TYPES:
            raise DataError(
                f"{source}: unknown section [{section}] "
                f"(expected one of {sorted(_FIELD_TYPES)})"
            )
        for key, raw in parser.items(section):
            if key not in _FIELD_TYPES[section]:
                raise DataError(f"{source}: unknown key {key!r} in section [{section}]")
            values[section][key] = _coerce(raw, _FIELD_TYPES[section][key], key)

    k = values["method"].get("k", 8)
    values["augment"]["k"] = k
    try:
        return RunConfig(
            method=MethodConfig(**values["method"]) if "method" in values["method"]
            else MethodConfig(method=Method.DR, **values["method"]),
            train=TrainConfig(**values["train"]),
            encoder=EncoderConfig(**values["encoder"]),
            augment=AugmentationPolicy(**values["augment"]),
        )
    except InputError as e:
        raise DataError(f"{source}: {e}") from None


def load_run_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            return parse_run_config(f.read(), source=str(path))
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from None


def render_resolved(config: RunConfig) -> str:
    """Serialize the fully resolved configuration, defaults included."""
    parser = configparser.ConfigParser()
    sections = {
        "method": config.method,
        "train": config.train,
        "encoder": config.encoder,
        "augment": config.augment,
    }
    for section, obj in sections.items():
        parser[section] = {}
        for key in _FIELD_TYPES[section]:
            value = getattr(obj, key)
            if isinstance(value, Method):
                value = value.value
            elif isinstance(value, bool):
                value = str(value).lower()
            parser[section][key] = str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
