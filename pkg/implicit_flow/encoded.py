"""
SPDX-License-Identifier: BSD-2
"""

import json
import logging

import numpy as np
from asn1crypto import pem
from asn1crypto.core import Integer, OctetString, Sequence, SequenceOf, UTF8String

from .constants import InterpMode, Strategy
from .flow import NormalizedFlowField
from .hypernet import HyperParams, hyper_forward, hyper_lerp, lerp_params
from .IFLOW_Exception import IFLOW_Exception
from .siren import SirenParams, grid_coords, siren_forward
from .types import IFLOW_LAYER, IFLOW_RC

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.PIPELINE

ENCODED_SCENE_VERSION = 1
ENCODED_SCENE_PEM = "IFLOW ENCODED SCENE"


class _ParamBlobs(SequenceOf):
    _child_spec = OctetString


class _ImageRefs(SequenceOf):
    _child_spec = UTF8String


def _chkrange(t0, t1, times):
    lo, hi = min(t0, t1), max(t0, t1)
    bad = [t for t in times if not lo <= t <= hi]
    if bad:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.OUT_OF_RANGE),
            f"extrapolation outside [{t0}, {t1}] refused",
            values=tuple(bad),
        )


class EncodedScene(object):
    """Learned representation of a bidirectional flow pair.

    ``params`` holds ``[phi]`` for the hypernet strategy, ``[theta]`` for a
    single space-time SIREN and ``[theta0, theta1]`` for two SIRENs.
    Flows are evaluated on the ``width`` x ``height`` grid, in pixels per unit
    of coordinate time after multiplying by ``flow_scale``.
    """

    class _encodedscene_der(Sequence):
        _fields = [
            ("version", Integer),
            ("strategy", UTF8String),
            ("interpMode", UTF8String),
            ("width", Integer),
            ("height", Integer),
            ("t0", UTF8String),
            ("t1", UTF8String),
            ("flowScale", UTF8String),
            ("finalLoss", UTF8String),
            ("params", _ParamBlobs),
            ("images", _ImageRefs, {"explicit": 0, "optional": True}),
            ("config", UTF8String, {"explicit": 1, "optional": True}),
        ]

    def __init__(
        self,
        strategy,
        params,
        t0,
        t1,
        width,
        height,
        flow_scale,
        final_loss,
        interp_mode=InterpMode.DIRECT,
        images=None,
        config=None,
    ):
        self._strategy = Strategy(strategy)
        self._interp_mode = InterpMode(interp_mode)
        self._params = list(params)
        self._t0 = float(t0)
        self._t1 = float(t1)
        self._width = int(width)
        self._height = int(height)
        self._flow_scale = float(flow_scale)
        self._final_loss = float(final_loss)
        self._images = tuple(images) if images else None
        self._config = config
        self._check()

    def _check(self):
        expected = {Strategy.HYPERNET: 1, Strategy.SINGLE_SIREN: 1, Strategy.TWO_SIRENS: 2}
        if len(self._params) != expected[self._strategy]:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE),
                f"{self._strategy.value} needs {expected[self._strategy]} parameter sets",
            )
        for k, p in enumerate(self._params):
            if not np.all(np.isfinite(p.values)):
                raise IFLOW_Exception(
                    IFLOW_RC.make(_L, IFLOW_RC.NON_FINITE), "encoded parameters", index=k
                )
        if self._strategy == Strategy.HYPERNET:
            hc = self._params[0].hyper_config
            if (hc.t0, hc.t1) != (self._t0, self._t1):
                raise IFLOW_Exception(
                    IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE),
                    "interval differs from the hypernetwork's",
                    values=(self._t0, self._t1, hc.t0, hc.t1),
                )

    @property
    def strategy(self):
        return self._strategy

    @property
    def interp_mode(self):
        return self._interp_mode

    @property
    def params(self):
        return list(self._params)

    @property
    def t0(self):
        return self._t0

    @property
    def t1(self):
        return self._t1

    @property
    def width(self):
        return self._width

    @property
    def height(self):
        return self._height

    @property
    def flow_scale(self):
        return self._flow_scale

    @property
    def final_loss(self):
        return self._final_loss

    @property
    def images(self):
        return self._images

    @property
    def config(self):
        return self._config

    @property
    def omega(self):
        p = self._params[0]
        return p.siren_config.omega if isinstance(p, HyperParams) else p.config.omega

    def tau(self, t):
        return (t - self._t0) / (self._t1 - self._t0)

    def theta_at(self, t) -> SirenParams:
        """SIREN weights producing the flow at ``t``."""
        _chkrange(self._t0, self._t1, [t])
        if self._strategy == Strategy.HYPERNET:
            if self._interp_mode == InterpMode.LERP:
                return hyper_lerp(self._params[0], t)
            return hyper_forward(self._params[0], t)
        if self._strategy == Strategy.TWO_SIRENS:
            return lerp_params(self._params[0], self._params[1], self.tau(t))
        return self._params[0]

    def normalized_flow(self, t) -> NormalizedFlowField:
        """Normalized flow on the full grid at coordinate time ``t``.

        Raises:
            IFLOW_Exception: OUT_OF_RANGE if ``t`` lies outside ``[t0, t1]``.
        """
        theta = self.theta_at(t)
        if self._strategy == Strategy.SINGLE_SIREN:
            coords = grid_coords(self._width, self._height, t)
        else:
            coords = grid_coords(self._width, self._height)
        pred = siren_forward(theta, coords).reshape(self._height, self._width, 2)
        return NormalizedFlowField(pred * self._flow_scale, self._t0, self._t1, anchor=t)

    def toDER(self):
        seq = self._encodedscene_der()
        seq["version"] = ENCODED_SCENE_VERSION
        seq["strategy"] = self._strategy.value
        seq["interpMode"] = self._interp_mode.value
        seq["width"] = self._width
        seq["height"] = self._height
        seq["t0"] = self._t0.hex()
        seq["t1"] = self._t1.hex()
        seq["flowScale"] = self._flow_scale.hex()
        seq["finalLoss"] = self._final_loss.hex()
        seq["params"] = [p.Marshal() for p in self._params]
        if self._images:
            seq["images"] = list(self._images)
        if self._config is not None:
            seq["config"] = json.dumps(self._config, sort_keys=True)
        return seq.dump()

    def toPEM(self):
        der = self.toDER()
        return pem.armor(ENCODED_SCENE_PEM, der)

    @classmethod
    def fromDER(cls, data):
        try:
            seq = cls._encodedscene_der.load(bytes(data))
            native = seq.native
        except (ValueError, TypeError) as e:
            raise IFLOW_Exception(IFLOW_RC.make(_L, IFLOW_RC.BAD_MAGIC), str(e))
        if native["version"] != ENCODED_SCENE_VERSION:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_VERSION), values=(native["version"],)
            )
        try:
            strategy = Strategy(native["strategy"])
            interp_mode = InterpMode(native["interpMode"])
            t0, t1, flow_scale, final_loss = (
                float.fromhex(native[k]) for k in ("t0", "t1", "flowScale", "finalLoss")
            )
            config = native["config"]
            config = json.loads(config) if config is not None else None
        except ValueError as e:
            raise IFLOW_Exception(IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), str(e))
        blobs = native["params"]
        if strategy == Strategy.HYPERNET:
            params = [HyperParams.Unmarshal(b)[0] for b in blobs]
        else:
            params = [SirenParams.Unmarshal(b)[0] for b in blobs]
        return cls(
            strategy,
            params,
            t0,
            t1,
            native["width"],
            native["height"],
            flow_scale,
            final_loss,
            interp_mode=interp_mode,
            images=native["images"],
            config=config,
        )

    @classmethod
    def fromPEM(cls, data):
        pem_type, _, der = pem.unarmor(data)
        if pem_type != ENCODED_SCENE_PEM:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_MAGIC), f"unsupported PEM type {pem_type!r}"
            )
        return cls.fromDER(der)

    @classmethod
    def load(cls, data):
        """Accept either encoding."""
        if pem.detect(data):
            return cls.fromPEM(data)
        return cls.fromDER(data)

    def __eq__(self, other):
        return isinstance(other, EncodedScene) and self.toDER() == other.toDER()

    def __repr__(self):
        return (
            f"EncodedScene({self._strategy.value}, {self._width}x{self._height}, "
            f"t0={self._t0}, t1={self._t1}, loss={self._final_loss:.3e})"
        )
