"""
SPDX-License-Identifier: BSD-2
"""

from enum import Enum


class ActivationKind(Enum):
    """Pointwise nonlinearities understood by the dense substrate."""

    SINE = "sine"
    RELU = "relu"
    IDENTITY = "identity"


class Strategy(Enum):
    """How the two input flows are encoded into network weights."""

    HYPERNET = "hypernet"
    SINGLE_SIREN = "single_siren"
    TWO_SIRENS = "two_sirens"


class LossMode(Enum):
    SQUARED = "squared"
    NORM = "norm"


class InterpMode(Enum):
    """How hypernet weights at an intermediate time are produced."""

    DIRECT = "direct"
    LERP = "lerp"


class SceneKind(Enum):
    TRANSLATION = "translation"
    CIRCLE = "circle"
    ROTATION = "rotation"


class SweepKind(Enum):
    OMEGA = "omega"
    COORD_DISTANCE = "coord_distance"
    STRATEGY = "strategy"


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

NORM_LOSS_EPS = 1e-8

GRADCHECK_STEP = 1e-5
GRADCHECK_FLOOR = 1e-8

T_SWEEP = (0.125, 0.25, 0.5, 0.75, 0.875)

PRESETS = {
    "desk": {"lr": 1e-4, "iterations": 2000},
    "paper": {"lr": 1e-6, "iterations": 10000},
}

DEFAULT_PRESET = "desk"

CONFIG_ENV = "IFLOW_CONFIG"
LOG_LEVEL_ENV = "IFLOW_LOG_LEVEL"

REPORT_COLUMNS = (
    "strategy",
    "omega",
    "coord_distance",
    "t",
    "epe",
    "centroid_err",
    "final_loss",
    "seconds",
)

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_TRIALS = 20
