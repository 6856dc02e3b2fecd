"""
SPDX-License-Identifier: BSD-2
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    CONFIG_ENV,
    DEFAULT_PRESET,
    PRESETS,
    InterpMode,
    LossMode,
    Strategy,
)
from .hypernet import HyperConfig
from .IFLOW_Exception import IFLOW_Exception
from .nn import OptimizerSettings
from .siren import SirenConfig
from .types import IFLOW_LAYER, IFLOW_RC

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.PIPELINE


def _config_error(detail, field=None, line=None):
    return IFLOW_Exception(
        IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG), detail, field=field, line=line
    )


@dataclass(frozen=True)
class EncodeConfig(object):
    """Everything one encode run depends on besides its input flows."""

    strategy: Strategy = Strategy.HYPERNET
    siren: SirenConfig = field(default_factory=SirenConfig)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    iterations: int = PRESETS[DEFAULT_PRESET]["iterations"]
    lr: float = PRESETS[DEFAULT_PRESET]["lr"]
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    seed: int = 0
    loss_mode: LossMode = LossMode.SQUARED
    batch_size: Optional[int] = None
    interp_mode: InterpMode = InterpMode.DIRECT
    log_every: int = 100

    def __post_init__(self):
        for name, enum in (
            ("strategy", Strategy),
            ("loss_mode", LossMode),
            ("interp_mode", InterpMode),
        ):
            try:
                object.__setattr__(self, name, enum(getattr(self, name)))
            except ValueError:
                raise _config_error(f"bad value {getattr(self, name)!r}", field=name)
        if isinstance(self.siren, dict):
            object.__setattr__(self, "siren", SirenConfig.from_dict(self.siren))
        if isinstance(self.hyper, dict):
            object.__setattr__(self, "hyper", HyperConfig.from_dict(self.hyper))
        if self.iterations < 1:
            raise _config_error("must be >= 1", field="iterations")
        if not self.lr > 0:
            raise _config_error("must be > 0", field="lr")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise _config_error("betas must lie in [0, 1)", field="beta1")
        if not self.eps > 0:
            raise _config_error("must be > 0", field="eps")
        if self.batch_size is not None and self.batch_size < 1:
            raise _config_error("must be >= 1", field="batch_size")

    @property
    def t0(self):
        return self.hyper.t0

    @property
    def t1(self):
        return self.hyper.t1

    def siren_for_strategy(self) -> SirenConfig:
        """The SIREN shape the strategy trains, 3 inputs for a space-time net."""
        dims = 3 if self.strategy == Strategy.SINGLE_SIREN else 2
        if self.siren.input_dims == dims:
            return self.siren
        return replace(self.siren, input_dims=dims)

    def optimizer_settings(self, seed_offset=0) -> OptimizerSettings:
        return OptimizerSettings(
            iterations=self.iterations,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            loss_mode=self.loss_mode,
            batch_size=self.batch_size,
            seed=self.seed + seed_offset,
            log_every=self.log_every,
        )

    def to_dict(self):
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "to_dict"):
                value = value.to_dict()
            elif hasattr(value, "value"):
                value = value.value
            d[f.name] = value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise _config_error(f"unknown key {key!r}", field=key)
        try:
            return cls(**d)
        except TypeError as e:
            raise _config_error(str(e))

    @classmethod
    def from_preset(cls, name=DEFAULT_PRESET, **overrides):
        return load_encode_config(preset=name, **overrides)


def _merge(base, update, path=""):
    out = dict(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise _config_error(f"unknown key {where!r}", field=where)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise _config_error("expected an object", field=where)
            out[key] = _merge(base[key], value, f"{where}.")
        else:
            out[key] = value
    return out


def load_encode_config(preset=None, path=None, overrides=None, **kwargs):
    """Build an EncodeConfig, later sources overriding earlier ones.

    The layers are, in order:
    * the named ``preset`` (``desk`` if not given)
    * the JSON file ``path``, or the file named by the ``IFLOW_CONFIG``
      environment variable
    * ``overrides`` and keyword arguments; ``None`` values are skipped

    Nested ``siren`` and ``hyper`` objects may be given partially.

    Raises:
        IFLOW_Exception: BAD_CONFIG naming the key for unknown keys, unknown
            presets, unreadable files or invalid values.
    """
    if preset is None:
        preset = DEFAULT_PRESET
    if preset not in PRESETS:
        raise _config_error(f"unknown preset {preset!r}", field="preset")
    merged = _merge(EncodeConfig().to_dict(), PRESETS[preset])

    if path is None:
        path = os.environ.get(CONFIG_ENV, None)
    if path is not None:
        try:
            with open(path) as file:
                data = json.load(file)
        except OSError as e:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.IO_ERROR), f"{path}: {e.strerror}"
            )
        except json.JSONDecodeError as e:
            raise _config_error(f"{path}: {e.msg}", line=e.lineno)
        if not isinstance(data, dict):
            raise _config_error(f"{path}: expected a JSON object")
        merged = _merge(merged, data)

    extra = dict(overrides or {})
    extra.update(kwargs)
    merged = _merge(merged, {k: v for k, v in extra.items() if v is not None})
    logger.debug(f"effective encode config:\n{json.dumps(merged, indent=4, sort_keys=True)}")
    try:
        return EncodeConfig.from_dict(merged)
    except IFLOW_Exception as e:
        if e.error in (IFLOW_RC.BAD_CONFIG, IFLOW_RC.DEGENERATE_INTERVAL):
            raise _config_error(e.detail, field=e.field)
        raise
