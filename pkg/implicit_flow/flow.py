"""
SPDX-License-Identifier: BSD-2
"""

import logging
import re
import struct

import numpy as np

from .IFLOW_Exception import IFLOW_Exception
from .types import IFLOW_LAYER, IFLOW_RC
from .utils import _chkfinite, _chkinterval, _chkshape, as_float64

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.FLOW

FLO_MAGIC = 202021.25
_FLO_HEADER = struct.Struct("<fii")


def _chkdims(width, height):
    if width < 1 or height < 1:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_DIMENSIONS), values=(width, height)
        )


class FlowField(object):
    """A dense H×W grid of (u, v) pixel displacements."""

    def __init__(self, data):
        data = as_float64(data)
        if data.ndim != 3 or data.shape[2] != 2:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
                "flow data",
                shapes=(data.shape, ("H", "W", 2)),
            )
        _chkdims(data.shape[1], data.shape[0])
        _chkfinite(_L, data, "flow data")
        self.data = data

    @classmethod
    def zeros(cls, width, height):
        _chkdims(width, height)
        return cls(np.zeros((height, width, 2)))

    @classmethod
    def constant(cls, width, height, vector):
        _chkdims(width, height)
        data = np.empty((height, width, 2))
        data[...] = as_float64(vector)
        return cls(data)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def size(self):
        return (self.width, self.height)

    @property
    def u(self):
        return self.data[..., 0]

    @property
    def v(self):
        return self.data[..., 1]

    def magnitude(self):
        return np.sqrt(self.u * self.u + self.v * self.v)

    def scaled(self, factor):
        return FlowField(self.data * factor)

    def __eq__(self, other):
        return isinstance(other, FlowField) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"{type(self).__name__}({self.width}x{self.height})"


class NormalizedFlowField(FlowField):
    """Flow in pixels per unit time, tagged with the interval it came from.

    ``anchor`` is the time at which the grid positions live, ``t0`` for the
    normalized forward flow and ``t1`` for the normalized backward flow.
    """

    def __init__(self, data, t0, t1, anchor):
        super().__init__(data)
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.anchor = float(anchor)

    def denormalize(self) -> FlowField:
        """Undo the normalization, exact when ``t1 - t0`` is a power of two."""
        if self.anchor == self.t0:
            return FlowField(self.data * (self.t1 - self.t0))
        return FlowField(self.data * (self.t0 - self.t1))


class Image(object):
    """An H×W image with 1 or 3 channels and values clamped to [0, 1]."""

    def __init__(self, data):
        data = as_float64(data)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
                "image data",
                shapes=(data.shape, ("H", "W", "1|3")),
            )
        _chkdims(data.shape[1], data.shape[0])
        _chkfinite(_L, data, "image data")
        self.data = np.clip(data, 0.0, 1.0)

    @classmethod
    def from_gray(cls, values):
        return cls(as_float64(values)[..., None])

    def to_rgb(self):
        if self.channels == 3:
            return self
        return Image(np.repeat(self.data, 3, axis=2))

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[2]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"


def _chksame(a, b, what):
    _chkshape(_L, (a.height, a.width), (b.height, b.width), what)


def normalize_pair(fwd: FlowField, bwd: FlowField, t0, t1):
    """Divide the forward and backward flows by their signed time gaps.

    ``fwd / (t1 - t0)`` and ``bwd / (t0 - t1)`` are both velocities pointing
    along the motion.

    Raises:
        IFLOW_Exception: DEGENERATE_INTERVAL if ``t0 == t1``, BAD_SHAPE if the
            flows differ in size.
    """
    _chkinterval(_L, t0, t1)
    _chksame(fwd, bwd, "flow pair")
    n0 = NormalizedFlowField(fwd.data / (t1 - t0), t0, t1, anchor=t0)
    n1 = NormalizedFlowField(bwd.data / (t0 - t1), t0, t1, anchor=t1)
    return n0, n1


def epe(a: FlowField, b: FlowField) -> float:
    """Average end-point error."""
    _chksame(a, b, "end-point error operands")
    d = a.data - b.data
    return float(np.mean(np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])))


def _bilinear(values, xs, ys):
    """Sample ``values`` (H×W×C) at float positions, clamping to the border.

    Interpolation is written ``v0 + a (v1 - v0)`` so constant regions are
    reproduced exactly.
    """
    h, w = values.shape[:2]
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (xs - x0)[..., None]
    ay = (ys - y0)[..., None]
    v00 = values[y0, x0]
    v01 = values[y0, x1]
    v10 = values[y1, x0]
    v11 = values[y1, x1]
    top = v00 + ax * (v01 - v00)
    bottom = v10 + ax * (v11 - v10)
    return top + ay * (bottom - top)


def downsample_flow(f: FlowField, factor: int) -> FlowField:
    """Bilinearly resample to ``ceil(dim / factor)`` and divide vectors by factor.

    Output pixel ``j`` samples the input at ``(j + 0.5) * factor - 0.5``, the
    position of its center in input pixel units.
    """
    if int(factor) != factor or factor < 2:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE),
            "factor must be an integer >= 2",
            values=(factor,),
        )
    factor = int(factor)
    ow = -(-f.width // factor)
    oh = -(-f.height // factor)
    xs = (np.arange(ow) + 0.5) * factor - 0.5
    ys = (np.arange(oh) + 0.5) * factor - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return FlowField(_bilinear(f.data, gx, gy) / factor)


def max_pyramid_levels(width, height) -> int:
    levels = 1
    while 2 ** levels <= min(width, height):
        levels += 1
    return levels


def build_pyramid(f: FlowField, levels: int):
    """``[f, downsample_flow(f, 2), downsample_flow(f, 4), ...]``.

    Raises:
        IFLOW_Exception: BAD_VALUE if ``levels < 1``, BAD_DIMENSIONS if the
            coarsest level would be smaller than one pixel.
    """
    if levels < 1:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "levels must be >= 1", values=(levels,)
        )
    limit = max_pyramid_levels(f.width, f.height)
    if levels > limit:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_DIMENSIONS),
            f"{f.width}x{f.height} supports at most {limit} levels",
            values=(levels,),
        )
    return [f] + [downsample_flow(f, 2 ** k) for k in range(1, levels)]


def backward_warp(src: Image, f: FlowField) -> Image:
    """``output(p) = src(p - f(p))`` with bilinear sampling.

    Samples falling outside the image take the nearest border pixel.
    """
    _chksame(src, f, "warp operands")
    gx, gy = np.meshgrid(
        np.arange(src.width, dtype=np.float64), np.arange(src.height, dtype=np.float64)
    )
    return Image(_bilinear(src.data, gx - f.u, gy - f.v))


def read_flo(buf) -> FlowField:
    """Parse a Middlebury ``.flo`` buffer.

    Raises:
        IFLOW_Exception: BAD_MAGIC, TRUNCATED or BAD_DIMENSIONS.
    """
    buf = bytes(buf)
    if len(buf) >= 4:
        (magic,) = struct.unpack_from("<f", buf, 0)
        if magic != FLO_MAGIC:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_MAGIC), f"got {magic!r}"
            )
    if len(buf) < _FLO_HEADER.size:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.TRUNCATED), "header", values=(len(buf),)
        )
    _, width, height = _FLO_HEADER.unpack_from(buf, 0)
    _chkdims(width, height)
    end = _FLO_HEADER.size + 8 * width * height
    if len(buf) < end:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.TRUNCATED),
            f"need {end} bytes",
            values=(len(buf),),
        )
    data = np.frombuffer(buf, dtype="<f4", count=2 * width * height, offset=_FLO_HEADER.size)
    return FlowField(data.astype(np.float64).reshape(height, width, 2))


def write_flo(f: FlowField) -> bytes:
    header = _FLO_HEADER.pack(FLO_MAGIC, f.width, f.height)
    return header + f.data.astype("<f4").tobytes()


# Middlebury color wheel segment lengths
_RY, _YG, _GC, _CB, _BM, _MR = 15, 6, 4, 11, 13, 6


def color_wheel() -> np.ndarray:
    """The 55-entry Middlebury color wheel, RGB in 0..255."""
    ncols = _RY + _YG + _GC + _CB + _BM + _MR
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[0:_RY, 0] = 255
    wheel[0:_RY, 1] = np.floor(255 * np.arange(_RY) / _RY)
    col += _RY
    wheel[col : col + _YG, 0] = 255 - np.floor(255 * np.arange(_YG) / _YG)
    wheel[col : col + _YG, 1] = 255
    col += _YG
    wheel[col : col + _GC, 1] = 255
    wheel[col : col + _GC, 2] = np.floor(255 * np.arange(_GC) / _GC)
    col += _GC
    wheel[col : col + _CB, 1] = 255 - np.floor(255 * np.arange(_CB) / _CB)
    wheel[col : col + _CB, 2] = 255
    col += _CB
    wheel[col : col + _BM, 2] = 255
    wheel[col : col + _BM, 0] = np.floor(255 * np.arange(_BM) / _BM)
    col += _BM
    wheel[col : col + _MR, 2] = 255 - np.floor(255 * np.arange(_MR) / _MR)
    wheel[col : col + _MR, 0] = 255
    return wheel


def flow_to_color(f: FlowField, max_magnitude=None) -> Image:
    """Middlebury visualization: hue from the angle, saturation from magnitude.

    Magnitudes are divided by ``max_magnitude``, the field maximum by default.
    Zero flow renders white and vectors beyond the maximum are darkened.
    """
    if max_magnitude is None:
        max_magnitude = float(np.max(f.magnitude()))
    if not max_magnitude > 0:
        max_magnitude = 1.0
    u = f.u / max_magnitude
    v = f.v / max_magnitude
    rad = np.sqrt(u * u + v * v)

    wheel = color_wheel() / 255.0
    ncols = wheel.shape[0]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.intp)
    k1 = k0 + 1
    k1[k1 == ncols] = 0
    frac = (fk - k0)[..., None]
    col = (1.0 - frac) * wheel[k0] + frac * wheel[k1]

    inside = (rad <= 1.0)[..., None]
    col = np.where(inside, 1.0 - rad[..., None] * (1.0 - col), col * 0.75)
    return Image(col)


def write_image(img: Image) -> bytes:
    """Binary 8-bit PPM (P6). Single-channel images are written as gray RGB."""
    rgb = img.to_rgb().data
    payload = np.rint(rgb * 255.0).astype(np.uint8).tobytes()
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + payload


_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_image(buf) -> Image:
    """Parse a binary PPM (P6) or PGM (P5) with maxval below 256."""
    buf = bytes(buf)
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PNM_TOKEN.match(buf, pos)
        if m is None:
            raise IFLOW_Exception(IFLOW_RC.make(_L, IFLOW_RC.TRUNCATED), "image header")
        tokens.append(m.group(1))
        pos = m.end()
        if len(tokens) == 1 and tokens[0] not in (b"P5", b"P6"):
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_MAGIC), f"got {tokens[0]!r}"
            )
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise IFLOW_Exception(IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "image header")
    _chkdims(width, height)
    if not 0 < maxval < 256:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "maxval", values=(maxval,)
        )
    # a single whitespace byte ends the header
    pos += 1
    channels = 3 if tokens[0] == b"P6" else 1
    n = width * height * channels
    if len(buf) - pos < n:
        raise IFLOW_Exception(IFLOW_RC.make(_L, IFLOW_RC.TRUNCATED), "image payload")
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return Image(data.reshape(height, width, channels) / float(maxval))


def pyramid_colors(f: FlowField, levels: int, max_magnitude=None):
    """Color images of each pyramid level, sharing one normalization."""
    pyramid = build_pyramid(f, levels)
    if max_magnitude is None:
        max_magnitude = float(np.max(f.magnitude()))
    out = []
    for k, level in enumerate(pyramid):
        out.append(flow_to_color(level, max_magnitude / 2 ** k if max_magnitude else None))
    return out
