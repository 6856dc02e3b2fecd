"""
SPDX-License-Identifier: BSD-2
"""

import logging
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .IFLOW_Exception import IFLOW_Exception
from .nn import (
    Activation,
    FitResult,
    OptimizerSettings,
    ParamVector,
    _backprop,
    batch_indices,
    layout_size,
    network_forward,
    optimize,
    regression_loss,
)
from .types import IFLOW_LAYER, IFLOW_RC
from .utils import as_float64

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.SIREN

SIREN_MAGIC = b"IFSN"
SIREN_VERSION = 1

# magic, version, hidden_layers, width, omega, input_dims, output_dims
_HEADER = struct.Struct("<4sHIIdBB")
_COUNT = struct.Struct("<Q")


@dataclass(frozen=True)
class SirenConfig(object):
    hidden_layers: int = 5
    width: int = 128
    omega: float = 10.0
    input_dims: int = 2
    output_dims: int = 2

    def __post_init__(self):
        for name in ("hidden_layers", "width"):
            if getattr(self, name) < 1:
                raise IFLOW_Exception(
                    IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                    f"{name} must be >= 1",
                    field=name,
                )
        if not self.omega > 0:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "omega must be > 0",
                field="omega",
            )
        if self.input_dims not in (2, 3):
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "input_dims must be 2 or 3",
                field="input_dims",
            )
        if self.output_dims != 2:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "output_dims must be 2",
                field="output_dims",
            )

    @property
    def layout(self):
        shapes = [(self.width, self.input_dims)]
        shapes += [(self.width, self.width)] * (self.hidden_layers - 1)
        shapes.append((self.output_dims, self.width))
        return shapes

    @property
    def activations(self):
        return [Activation.sine(self.omega)] * self.hidden_layers + [
            Activation.identity()
        ]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_count(config: SirenConfig) -> int:
    return layout_size(config.layout)


class SirenParams(ParamVector):
    """Coordinate network weights in the frozen flat layout."""

    def __init__(self, values, config: SirenConfig):
        if not isinstance(config, SirenConfig):
            raise TypeError(f"expected SirenConfig, got {type(config)}")
        self.config = config
        try:
            super().__init__(values, config.layout)
        except IFLOW_Exception as e:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE), "siren parameters", shapes=e.shapes
            )

    def with_values(self, values):
        return SirenParams(values, self.config)

    def layers(self):
        return list(zip(self.to_layers(), self.config.activations))

    def Marshal(self):
        c = self.config
        header = _HEADER.pack(
            SIREN_MAGIC,
            SIREN_VERSION,
            c.hidden_layers,
            c.width,
            c.omega,
            c.input_dims,
            c.output_dims,
        )
        return (
            header
            + _COUNT.pack(len(self))
            + self.values.astype("<f8", copy=False).tobytes()
        )

    @classmethod
    def Unmarshal(cls, buf):
        config, offset = _unpack_header(buf, SIREN_MAGIC)
        values, offset = _unpack_values(buf, offset, param_count(config))
        return cls(values, config), offset


def _truncated(what, layer=_L):
    return IFLOW_Exception(IFLOW_RC.make(layer, IFLOW_RC.TRUNCATED), what)


def _unpack_header(buf, magic, offset=0, layer=_L):
    buf = bytes(buf)
    if len(buf) - offset < _HEADER.size:
        if buf[offset : offset + 4] != magic[: len(buf) - offset]:
            raise IFLOW_Exception(IFLOW_RC.make(layer, IFLOW_RC.BAD_MAGIC))
        raise _truncated("header", layer)
    m, version, hidden, width, omega, ind, outd = _HEADER.unpack_from(buf, offset)
    if m != magic:
        raise IFLOW_Exception(
            IFLOW_RC.make(layer, IFLOW_RC.BAD_MAGIC), f"expected {magic!r}, got {m!r}"
        )
    if version != SIREN_VERSION:
        raise IFLOW_Exception(
            IFLOW_RC.make(layer, IFLOW_RC.BAD_VERSION), values=(version,)
        )
    try:
        config = SirenConfig(hidden, width, omega, ind, outd)
    except IFLOW_Exception as e:
        raise IFLOW_Exception(
            IFLOW_RC.make(layer, IFLOW_RC.BAD_VALUE), "header", field=e.field
        )
    return config, offset + _HEADER.size


def _unpack_values(buf, offset, expected, layer=_L):
    if len(buf) - offset < _COUNT.size:
        raise _truncated("parameter count", layer)
    (count,) = _COUNT.unpack_from(buf, offset)
    offset += _COUNT.size
    if count != expected:
        raise IFLOW_Exception(
            IFLOW_RC.make(layer, IFLOW_RC.BAD_SHAPE),
            "parameter count",
            shapes=((count,), (expected,)),
        )
    end = offset + 8 * count
    if len(buf) < end:
        raise _truncated("parameter values", layer)
    values = np.frombuffer(bytes(buf[offset:end]), dtype="<f8").astype(np.float64)
    return values, end


def siren_init(config: SirenConfig, seed: int) -> SirenParams:
    """Draw SIREN weights.

    The first layer is uniform in ``[-1/in, 1/in]`` and later layers in
    ``[-sqrt(6/in)/omega, sqrt(6/in)/omega]``. Biases start at zero.
    """
    rng = np.random.default_rng(seed)
    arrays = []
    for k, (o, i) in enumerate(config.layout):
        bound = 1.0 / i if k == 0 else np.sqrt(6.0 / i) / config.omega
        arrays.append((rng.uniform(-bound, bound, size=(o, i)), np.zeros(o)))
    return SirenParams(ParamVector.from_arrays(arrays).values, config)


def init_bounds(config: SirenConfig) -> np.ndarray:
    """Per-entry magnitude bound of a ``siren_init`` draw, in the flat layout."""
    parts = []
    for k, (o, i) in enumerate(config.layout):
        bound = 1.0 / i if k == 0 else np.sqrt(6.0 / i) / config.omega
        parts.append(np.full(o * i, bound))
        parts.append(np.zeros(o))
    return np.concatenate(parts)


def _check_coords(params, coords):
    x = as_float64(coords)
    if x.ndim not in (1, 2) or x.shape[-1] != params.config.input_dims:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
            "coordinates",
            shapes=(x.shape, (params.config.input_dims,)),
        )
    return x


def siren_forward(params: SirenParams, coords) -> np.ndarray:
    """Evaluate the coordinate network at one coordinate or at N×d rows."""
    x = _check_coords(params, coords)
    out, _ = network_forward(params.layers(), x)
    return out


def siren_backward(params: SirenParams, coords, upstream):
    """Gradients of ``<upstream, siren_forward(params, coords)>``.

    Returns:
        A ``(SirenParams, grad_coords)`` pair.
    """
    x = _check_coords(params, coords)
    layers = params.layers()
    out, cache = network_forward(layers, x)
    grads, gx = _backprop(layers, cache, out, upstream)
    return params.with_values(grads.values), gx


def siren_value_and_grad(params: SirenParams, coords, targets, loss_mode):
    """Regression loss of the network against ``targets`` and its gradient."""
    x = _check_coords(params, coords)
    layers = params.layers()
    out, cache = network_forward(layers, x)
    loss, upstream = regression_loss(out, targets, loss_mode)
    grads, _ = _backprop(layers, cache, out, upstream)
    return loss, params.with_values(grads.values)


def grid_coords(width: int, height: int, t=None) -> np.ndarray:
    """Normalized pixel-center coordinates of a grid, row-major.

    Pixel column ``x`` maps to ``2x/(W-1) - 1`` so the outermost centers sit
    on -1 and 1. A single-pixel axis maps to 0. With ``t`` a third column
    holding ``t`` is appended.
    """
    if width < 1 or height < 1:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_DIMENSIONS), values=(width, height)
        )
    xs = np.zeros(1) if width == 1 else 2.0 * np.arange(width) / (width - 1) - 1.0
    ys = np.zeros(1) if height == 1 else 2.0 * np.arange(height) / (height - 1) - 1.0
    gx, gy = np.meshgrid(xs, ys)
    cols = [gx.reshape(-1), gy.reshape(-1)]
    if t is not None:
        cols.append(np.full(width * height, float(t)))
    return np.stack(cols, axis=1)


def _split_targets(targets):
    if (
        isinstance(targets, tuple)
        and len(targets) == 2
        and isinstance(targets[0], np.ndarray)
        and targets[0].ndim == 2
    ):
        coords, flows = targets
    else:
        targets = list(targets)
        if not targets:
            coords, flows = np.zeros((0, 2)), np.zeros((0, 2))
        else:
            coords = np.stack([as_float64(c) for c, _ in targets])
            flows = np.stack([as_float64(f) for _, f in targets])
    coords = as_float64(coords)
    flows = as_float64(flows)
    if coords.shape[0] == 0:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "empty target set"
        )
    if flows.shape != (coords.shape[0], 2):
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
            "targets",
            shapes=(flows.shape, (coords.shape[0], 2)),
        )
    return coords, flows


def siren_fit(
    targets,
    config: SirenConfig,
    settings: OptimizerSettings = None,
    seed: int = 0,
    init: SirenParams = None,
) -> FitResult:
    """Fit the coordinate network to (coordinate, flow) samples with Adam.

    Args:
        targets: a list of ``(coords, flow2)`` pairs or a ``(coords, flows)``
            tuple of N×d and N×2 arrays.
        config (SirenConfig): network shape.
        settings (OptimizerSettings, optional): Adam settings. Defaults to the
            desk preset.
        seed (int): initialization seed, ignored when ``init`` is given.
        init (SirenParams, optional): starting parameters.

    Raises:
        IFLOW_Exception: BAD_VALUE on an empty target set, DIVERGED with the
            iteration index once the loss stops being finite.

    Returns:
        FitResult: fitted parameters, the final loss and the loss history.
    """
    if settings is None:
        settings = OptimizerSettings()
    coords, flows = _split_targets(targets)
    params = init if init is not None else siren_init(config, seed)
    pick = batch_indices(settings, coords.shape[0])

    def objective(p, step):
        rows = pick(step)
        if rows is None:
            return siren_value_and_grad(p, coords, flows, settings.loss_mode)
        return siren_value_and_grad(p, coords[rows], flows[rows], settings.loss_mode)

    logger.debug(
        f"fitting siren {config.hidden_layers}x{config.width} omega={config.omega} "
        f"to {coords.shape[0]} samples"
    )
    return optimize(params, objective, settings)
