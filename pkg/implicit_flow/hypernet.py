"""
SPDX-License-Identifier: BSD-2
"""

import logging
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .IFLOW_Exception import IFLOW_Exception
from .nn import Activation, ParamVector, _backprop, network_forward
from .siren import (
    SirenConfig,
    SirenParams,
    _COUNT,
    _HEADER,
    SIREN_VERSION,
    _unpack_header,
    _unpack_values,
    _truncated,
    param_count,
    siren_init,
)
from .types import IFLOW_LAYER, IFLOW_RC
from .utils import as_float64

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.HYPER

HYPER_MAGIC = b"IFHN"

# hidden_width, t0, t1
_HYPER_HEADER = struct.Struct("<Idd")


@dataclass(frozen=True)
class HyperConfig(object):
    hidden_width: int = 128
    t0: float = 0.0
    t1: float = 0.1

    def __post_init__(self):
        if self.hidden_width < 1:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "hidden_width must be >= 1",
                field="hidden_width",
            )
        if not (math.isfinite(self.t0) and math.isfinite(self.t1)):
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "time coordinates must be finite",
                values=(self.t0, self.t1),
            )
        if self.t0 == self.t1:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.DEGENERATE_INTERVAL),
                f"t0 == t1 == {self.t0}",
                values=(self.t0, self.t1),
            )

    def tau(self, t):
        """Position of ``t`` inside the interval, 0 at t0 and 1 at t1."""
        return (t - self.t0) / (self.t1 - self.t0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def hyper_layout(hyper_config: HyperConfig, siren_config: SirenConfig):
    """Two layers per SIREN layer: ``1 -> H`` then ``H -> P_l``."""
    layout = []
    h = hyper_config.hidden_width
    for o, i in siren_config.layout:
        layout.append((h, 1))
        layout.append((o * i + o, h))
    return layout


class HyperParams(ParamVector):
    """Weights of the per-layer hyper-MLPs, two dense layers each."""

    def __init__(self, values, hyper_config: HyperConfig, siren_config: SirenConfig):
        self.hyper_config = hyper_config
        self.siren_config = siren_config
        try:
            super().__init__(values, hyper_layout(hyper_config, siren_config))
        except IFLOW_Exception as e:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
                "hypernetwork parameters",
                shapes=e.shapes,
            )

    def with_values(self, values):
        return HyperParams(values, self.hyper_config, self.siren_config)

    def mlps(self):
        """Per SIREN layer, the hyper-MLP as a list of (DenseLayer, Activation)."""
        layers = self.to_layers()
        relu = Activation.relu()
        ident = Activation.identity()
        return [
            [(layers[k], relu), (layers[k + 1], ident)]
            for k in range(0, len(layers), 2)
        ]

    def Marshal(self):
        c = self.siren_config
        h = self.hyper_config
        return (
            _HEADER.pack(
                HYPER_MAGIC,
                SIREN_VERSION,
                c.hidden_layers,
                c.width,
                c.omega,
                c.input_dims,
                c.output_dims,
            )
            + _HYPER_HEADER.pack(h.hidden_width, h.t0, h.t1)
            + _COUNT.pack(len(self))
            + self.values.astype("<f8", copy=False).tobytes()
        )

    @classmethod
    def Unmarshal(cls, buf):
        buf = bytes(buf)
        siren_config, offset = _unpack_header(buf, HYPER_MAGIC, layer=_L)
        if len(buf) - offset < _HYPER_HEADER.size:
            raise _truncated("hypernetwork header", _L)
        width, t0, t1 = _HYPER_HEADER.unpack_from(buf, offset)
        offset += _HYPER_HEADER.size
        try:
            hyper_config = HyperConfig(width, t0, t1)
        except IFLOW_Exception:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "header", values=(width, t0, t1)
            )
        expected = sum(o * i + o for o, i in hyper_layout(hyper_config, siren_config))
        values, offset = _unpack_values(buf, offset, expected, layer=_L)
        return cls(values, hyper_config, siren_config), offset


def hyper_init(
    hyper_config: HyperConfig, siren_config: SirenConfig, seed: int
) -> HyperParams:
    """Initialize the hypernetwork around a regular SIREN draw.

    The first layer of each hyper-MLP has weights uniform in [-1, 1] and biases
    uniform in [0, 1], so hidden units are active around the input times. The
    output layer weights are uniform in ``[-1e-2, 1e-2] / hidden_width`` and its
    biases hold a ``siren_init`` draw for the matching SIREN layer, making
    ``f_phi(t)`` a standard SIREN initialization plus a small time-dependent
    perturbation.
    """
    rng = np.random.default_rng(seed)
    theta = siren_init(siren_config, int(rng.integers(0, 2 ** 32)))
    h = hyper_config.hidden_width
    bound = 1e-2 / h
    arrays = []
    for (o, i), (w, b) in zip(siren_config.layout, theta.arrays()):
        p = o * i + o
        arrays.append((rng.uniform(-1.0, 1.0, size=(h, 1)), rng.uniform(0.0, 1.0, h)))
        arrays.append(
            (rng.uniform(-bound, bound, size=(p, h)), np.concatenate([w.ravel(), b]))
        )
    return HyperParams(
        ParamVector.from_arrays(arrays).values, hyper_config, siren_config
    )


def _chktime(t):
    if not math.isfinite(t):
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.NON_FINITE), "time coordinate", values=(t,)
        )
    return np.array([float(t)])


def hyper_forward(phi: HyperParams, t: float) -> SirenParams:
    """SIREN weights ``theta = f_phi(t)``."""
    x = _chktime(t)
    parts = []
    for mlp in phi.mlps():
        out, _ = network_forward(mlp, x)
        parts.append(out)
    return SirenParams(np.concatenate(parts), phi.siren_config)


def hyper_backward(phi: HyperParams, t: float, grad_theta) -> HyperParams:
    """Gradient of ``<grad_theta, f_phi(t)>`` with respect to ``phi``.

    Raises:
        IFLOW_Exception: BAD_SHAPE if ``grad_theta`` does not have one entry per
            SIREN parameter.
    """
    x = _chktime(t)
    g = grad_theta.values if isinstance(grad_theta, ParamVector) else as_float64(grad_theta)
    expected = param_count(phi.siren_config)
    if g.shape != (expected,):
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
            "theta gradient",
            shapes=(g.shape, (expected,)),
        )
    parts = []
    offset = 0
    for mlp in phi.mlps():
        out, cache = network_forward(mlp, x)
        n = out.shape[0]
        grads, _ = _backprop(mlp, cache, out, g[offset : offset + n])
        offset += n
        parts.append(grads.values)
    return phi.with_values(np.concatenate(parts))


def lerp_params(theta0: SirenParams, theta1: SirenParams, tau: float) -> SirenParams:
    """Blend two parameter vectors, exact at ``tau`` 0 and 1."""
    if theta0.layout != theta1.layout:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
            "blended parameters",
            shapes=((len(theta0),), (len(theta1),)),
        )
    if tau == 0.0:
        return theta0.copy()
    if tau == 1.0:
        return theta1.copy()
    return theta0.with_values((1.0 - tau) * theta0.values + tau * theta1.values)


def hyper_lerp(phi: HyperParams, t: float) -> SirenParams:
    """Weights at ``t`` blended from ``f_phi(t0)`` and ``f_phi(t1)``."""
    hc = phi.hyper_config
    return lerp_params(
        hyper_forward(phi, hc.t0), hyper_forward(phi, hc.t1), hc.tau(float(t))
    )


def interpolation_consistency(phi: HyperParams, t: float = None) -> float:
    """How far ``f_phi(t)`` is from the straight line between the endpoints.

    Returns ``|f_phi(t) - lerp(f_phi(t0), f_phi(t1), tau)| / |f_phi(t1) -
    f_phi(t0)|``, with ``t`` defaulting to the midpoint.
    """
    hc = phi.hyper_config
    if t is None:
        t = 0.5 * (hc.t0 + hc.t1)
    theta0 = hyper_forward(phi, hc.t0)
    theta1 = hyper_forward(phi, hc.t1)
    direct = hyper_forward(phi, t)
    blended = lerp_params(theta0, theta1, hc.tau(float(t)))
    num = float(np.linalg.norm(direct.values - blended.values))
    den = float(np.linalg.norm(theta1.values - theta0.values))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    ratio = num / den
    logger.debug(f"interpolation consistency at t={t}: {ratio:.3e}")
    return ratio
