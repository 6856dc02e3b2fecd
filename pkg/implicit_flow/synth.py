"""
SPDX-License-Identifier: BSD-2
"""

import logging
import math
from dataclasses import dataclass, asdict, fields
from typing import Tuple

import numpy as np

from .constants import SceneKind
from .flow import FlowField, Image, NormalizedFlowField
from .IFLOW_Exception import IFLOW_Exception
from .types import IFLOW_LAYER, IFLOW_RC

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.SYNTH

# sample offsets of the 4x4 supersampling pattern, relative to the pixel center
_SUBSAMPLES = (np.arange(4) + 0.5) / 4.0 - 0.5


def _spec_error(detail, field=None, line=None, error=IFLOW_RC.BAD_SPEC):
    return IFLOW_Exception(IFLOW_RC.make(_L, error), detail, field=field, line=line)


@dataclass(frozen=True)
class SceneSpec(object):
    """A synthetic scene: a disk of ``radius`` moving over a flat background.

    ``center`` is the disk center at scene time 0. For ``translation`` and
    ``circle`` scenes it moves by ``velocity`` pixels per unit time; a
    translation scene moves the whole canvas, a circle scene only the disk.
    For ``rotation`` scenes the canvas rotates about ``pivot`` at
    ``angular_rate`` radians per unit time. Intensities are scaled by a gain
    going linearly from ``gain_start`` to ``gain_end`` over the interval.
    """

    kind: SceneKind = SceneKind.CIRCLE
    width: int = 64
    height: int = 64
    radius: float = 8.0
    center: Tuple[float, float] = (16.0, 32.0)
    velocity: Tuple[float, float] = (32.0, 0.0)
    pivot: Tuple[float, float] = (32.0, 32.0)
    angular_rate: float = 0.0
    background: float = 0.0
    foreground: float = 1.0
    t_start: float = 0.0
    t_end: float = 1.0
    gain_start: float = 1.0
    gain_end: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", SceneKind(self.kind))
        except ValueError:
            raise _spec_error(f"unknown scene kind {self.kind!r}", field="kind")
        for name in ("center", "velocity", "pivot"):
            value = tuple(float(c) for c in getattr(self, name))
            if len(value) != 2 or not all(math.isfinite(c) for c in value):
                raise _spec_error("expected two finite numbers", field=name)
            object.__setattr__(self, name, value)
        for name in ("width", "height"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise _spec_error("must be a positive integer", field=name)
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise _spec_error("must be finite", field=f.name)
        if not self.radius > 0:
            raise _spec_error("must be > 0", field="radius")
        for name in ("background", "foreground"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise _spec_error("must lie in [0, 1]", field=name)
        for name in ("gain_start", "gain_end"):
            if getattr(self, name) < 0:
                raise _spec_error("must be >= 0", field=name)
        if not self.t_start < self.t_end:
            raise _spec_error("t_start must be below t_end", field="t_end")
        self._check_inside()

    def _check_inside(self):
        r = self.radius
        if self.kind == SceneKind.ROTATION:
            orbit = math.hypot(
                self.center[0] - self.pivot[0], self.center[1] - self.pivot[1]
            )
            swept = abs(self.angular_rate) * (self.t_end - self.t_start)
            if swept == 0.0:
                positions = [self.center]
            else:
                # the disk center stays on this circle; test the whole orbit
                positions = [
                    (self.pivot[0] + orbit * c, self.pivot[1] + orbit * s)
                    for c, s in ((1, 0), (-1, 0), (0, 1), (0, -1))
                ]
                positions += [self.center_at(self.t_start), self.center_at(self.t_end)]
        else:
            positions = [self.center_at(self.t_start), self.center_at(self.t_end)]
        for cx, cy in positions:
            if (
                cx - r < -0.5
                or cy - r < -0.5
                or cx + r > self.width - 0.5
                or cy + r > self.height - 0.5
            ):
                raise _spec_error(
                    f"disk leaves the {self.width}x{self.height} canvas",
                    field="center",
                )

    def center_at(self, s):
        """Disk center at scene time ``s``."""
        if self.kind == SceneKind.ROTATION:
            a = self.angular_rate * s
            dx = self.center[0] - self.pivot[0]
            dy = self.center[1] - self.pivot[1]
            c, n = math.cos(a), math.sin(a)
            return (self.pivot[0] + c * dx - n * dy, self.pivot[1] + n * dx + c * dy)
        return (self.center[0] + s * self.velocity[0], self.center[1] + s * self.velocity[1])

    def gain_at(self, s):
        if self.gain_start == self.gain_end:
            return self.gain_start
        tau = (s - self.t_start) / (self.t_end - self.t_start)
        return self.gain_start + tau * (self.gain_end - self.gain_start)

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        for name in ("center", "velocity", "pivot"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise _spec_error(f"unknown key {key!r}", field=key)
        return cls(**d)

    def to_text(self):
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ", ".join(repr(float(c)) for c in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text):
        """Read ``key = value`` lines; ``#`` starts a comment.

        Raises:
            IFLOW_Exception: BAD_SPEC naming the offending field and line.
        """
        known = {f.name for f in fields(cls)}
        values = {}
        where = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _spec_error("expected key = value", line=lineno)
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise _spec_error(f"unknown key {key!r}", field=key, line=lineno)
            if key in values:
                raise _spec_error("duplicate key", field=key, line=lineno)
            try:
                values[key] = _parse_value(key, value)
            except ValueError:
                raise _spec_error(f"bad value {value!r}", field=key, line=lineno)
            where[key] = lineno
        try:
            return cls(**values)
        except IFLOW_Exception as e:
            raise _spec_error(e.detail, field=e.field, line=where.get(e.field))


def _parse_value(key, text):
    if key == "kind":
        return text
    if key in ("center", "velocity", "pivot"):
        parts = [p for p in text.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise ValueError(text)
        return (float(parts[0]), float(parts[1]))
    if key in ("width", "height"):
        return int(text)
    return float(text)


def _chktime(spec: SceneSpec, s):
    if not spec.t_start <= s <= spec.t_end:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.OUT_OF_RANGE),
            f"scene time outside [{spec.t_start}, {spec.t_end}]",
            values=(s,),
        )


def _pixel_grid(spec: SceneSpec):
    return np.meshgrid(
        np.arange(spec.width, dtype=np.float64), np.arange(spec.height, dtype=np.float64)
    )


def object_center(spec: SceneSpec, s):
    """Disk center ``(x, y)`` at scene time ``s``, in pixels."""
    _chktime(spec, s)
    return spec.center_at(s)


def disk_mask(spec: SceneSpec, s) -> np.ndarray:
    """Pixels whose center lies inside the disk at scene time ``s``."""
    cx, cy = spec.center_at(s)
    gx, gy = _pixel_grid(spec)
    return (gx - cx) ** 2 + (gy - cy) ** 2 <= spec.radius ** 2


def _rotation_field(spec: SceneSpec):
    gx, gy = _pixel_grid(spec)
    w = spec.angular_rate
    return np.stack([-w * (gy - spec.pivot[1]), w * (gx - spec.pivot[0])], axis=-1)


def scene_flow(spec: SceneSpec, s) -> NormalizedFlowField:
    """Closed-form velocity field at scene time ``s``, per unit time.

    Raises:
        IFLOW_Exception: OUT_OF_RANGE if ``s`` is outside the scene interval.
    """
    _chktime(spec, s)
    data = np.zeros((spec.height, spec.width, 2))
    if spec.kind == SceneKind.TRANSLATION:
        data[...] = spec.velocity
    elif spec.kind == SceneKind.CIRCLE:
        data[disk_mask(spec, s)] = spec.velocity
    else:
        data = _rotation_field(spec)
    return NormalizedFlowField(data, spec.t_start, spec.t_end, anchor=s)


def scene_image(spec: SceneSpec, s) -> Image:
    """Render the scene at time ``s`` with 4x4 supersampling."""
    _chktime(spec, s)
    cx, cy = spec.center_at(s)
    gx, gy = _pixel_grid(spec)
    ox, oy = np.meshgrid(_SUBSAMPLES, _SUBSAMPLES)
    sx = gx[..., None] + ox.reshape(-1) - cx
    sy = gy[..., None] + oy.reshape(-1) - cy
    coverage = np.mean(sx * sx + sy * sy <= spec.radius ** 2, axis=-1)
    values = spec.background + coverage * (spec.foreground - spec.background)
    gain = spec.gain_at(s)
    if gain != 1.0:
        values = values * gain
    return Image.from_gray(values)


def scene_bidirectional(spec: SceneSpec, s0, s1):
    """Forward flow anchored at ``s0`` and backward flow anchored at ``s1``.

    Raises:
        IFLOW_Exception: OUT_OF_RANGE for times outside the scene interval,
            DEGENERATE_INTERVAL if ``s0 == s1``.
    """
    _chktime(spec, s0)
    _chktime(spec, s1)
    if s0 == s1:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.DEGENERATE_INTERVAL), values=(s0, s1)
        )
    dt = s1 - s0
    fwd = np.zeros((spec.height, spec.width, 2))
    bwd = np.zeros((spec.height, spec.width, 2))
    disp = (spec.velocity[0] * dt, spec.velocity[1] * dt)
    back = (-spec.velocity[0] * dt, -spec.velocity[1] * dt)
    if spec.kind == SceneKind.TRANSLATION:
        fwd[...] = disp
        bwd[...] = back
    elif spec.kind == SceneKind.CIRCLE:
        fwd[disk_mask(spec, s0)] = disp
        bwd[disk_mask(spec, s1)] = back
    else:
        gx, gy = _pixel_grid(spec)
        rx = gx - spec.pivot[0]
        ry = gy - spec.pivot[1]
        for out, angle in ((fwd, spec.angular_rate * dt), (bwd, -spec.angular_rate * dt)):
            c, n = math.cos(angle), math.sin(angle)
            out[..., 0] = (c - 1.0) * rx - n * ry
            out[..., 1] = n * rx + (c - 1.0) * ry
    return FlowField(fwd), FlowField(bwd)


def support_centroid(f: FlowField, threshold=None):
    """Mean pixel position where the flow magnitude exceeds ``threshold``.

    The threshold defaults to half the largest magnitude. Returns ``None`` for
    an empty support.
    """
    mag = f.magnitude()
    if threshold is None:
        threshold = 0.5 * float(np.max(mag))
    mask = mag > threshold
    if not mask.any():
        return None
    ys, xs = np.nonzero(mask)
    return (float(np.mean(xs)), float(np.mean(ys)))


