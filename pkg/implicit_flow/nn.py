"""
SPDX-License-Identifier: BSD-2
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import (
    ActivationKind,
    LossMode,
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    NORM_LOSS_EPS,
    GRADCHECK_FLOOR,
)
from .IFLOW_Exception import IFLOW_Exception
from .types import IFLOW_LAYER, IFLOW_RC
from .utils import _chkshape, _chkfinite, as_float64

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.NN


class DenseLayer(object):
    """An affine map ``y = W x + b`` with ``W`` of shape (out, in)."""

    __slots__ = ("_weights", "_biases")

    def __init__(self, weights, biases):
        weights = as_float64(weights)
        biases = as_float64(biases)
        if weights.ndim != 2:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
                "weights must be a matrix",
                shapes=(weights.shape, ("out", "in")),
            )
        _chkshape(_L, biases.shape, (weights.shape[0],), "biases")
        _chkfinite(_L, weights, "weights")
        _chkfinite(_L, biases, "biases")
        self._weights = weights
        self._biases = biases

    @property
    def weights(self):
        return self._weights

    @property
    def biases(self):
        return self._biases

    @property
    def in_size(self):
        return self._weights.shape[1]

    @property
    def out_size(self):
        return self._weights.shape[0]

    @property
    def shape(self):
        return (self.out_size, self.in_size)

    def __repr__(self):
        return f"DenseLayer(out={self.out_size}, in={self.in_size})"


class Activation(object):
    __slots__ = ("kind", "omega")

    def __init__(self, kind, omega=None):
        self.kind = ActivationKind(kind)
        if self.kind == ActivationKind.SINE:
            if omega is None or not omega > 0:
                raise IFLOW_Exception(
                    IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE),
                    "sine activation needs omega > 0",
                    values=(omega,),
                )
            omega = float(omega)
        self.omega = omega

    @classmethod
    def sine(cls, omega):
        return cls(ActivationKind.SINE, omega)

    @classmethod
    def relu(cls):
        return cls(ActivationKind.RELU)

    @classmethod
    def identity(cls):
        return cls(ActivationKind.IDENTITY)

    def forward(self, pre):
        if self.kind == ActivationKind.SINE:
            return np.sin(self.omega * pre)
        if self.kind == ActivationKind.RELU:
            return np.maximum(pre, 0.0)
        return pre

    def derivative(self, pre):
        if self.kind == ActivationKind.SINE:
            return self.omega * np.cos(self.omega * pre)
        if self.kind == ActivationKind.RELU:
            return (pre > 0.0).astype(np.float64)
        return np.ones_like(pre)

    def __eq__(self, other):
        return (
            isinstance(other, Activation)
            and self.kind == other.kind
            and self.omega == other.omega
        )

    def __repr__(self):
        if self.kind == ActivationKind.SINE:
            return f"Activation.sine({self.omega})"
        return f"Activation.{self.kind.value}()"


def dense_forward(layer: DenseLayer, input) -> np.ndarray:
    """Apply ``layer`` to a single vector or to the rows of an N×in matrix.

    Raises:
        IFLOW_Exception: BAD_SHAPE with both shapes if the input width does not
            match the layer's in-size.
    """
    x = as_float64(input)
    if x.ndim not in (1, 2) or x.shape[-1] != layer.in_size:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_SHAPE),
            "dense input",
            shapes=(x.shape, (layer.in_size,)),
        )
    return x @ layer.weights.T + layer.biases


def activation_forward(kind, pre, omega=None) -> np.ndarray:
    if not isinstance(kind, Activation):
        kind = Activation(kind, omega)
    return kind.forward(as_float64(pre))


def network_forward(layers: Sequence[Tuple[DenseLayer, Activation]], input):
    """Run ``input`` through ``layers`` keeping what backward needs.

    Returns:
        A tuple of the network output and the cache, a list of
        (layer input, pre-activation) pairs.
    """
    a = as_float64(input)
    cache = []
    for layer, act in layers:
        z = dense_forward(layer, a)
        cache.append((a, z))
        a = act.forward(z)
    return a, cache


def network_backward(layers, input, upstream):
    """Reverse-mode gradients of ``<upstream, network(input)>``.

    With a batched input the parameter gradients are summed over rows in row
    order.

    Returns:
        A ``(ParamVector, grad_input)`` pair.
    """
    out, cache = network_forward(layers, input)
    return _backprop(layers, cache, out, upstream)


def _backprop(layers, cache, out, upstream):
    g = as_float64(upstream)
    _chkshape(_L, g.shape, out.shape, "upstream")

    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer, act = layers[i]
        a, z = cache[i]
        delta = g * act.derivative(z)
        if delta.ndim == 1:
            gw = np.outer(delta, a)
            gb = delta
        else:
            gw = delta.T @ a
            gb = delta.sum(axis=0)
        grads[i] = (gw, gb)
        g = delta @ layer.weights

    return ParamVector.from_arrays(grads), g


class ParamVector(object):
    """Flat parameter storage with a frozen per-layer layout.

    The layout is a list of (out, in) shapes. Values are stored as
    layer 0 weights row-major, layer 0 biases, layer 1 weights, ...
    """

    def __init__(self, values, layout):
        self.layout = [(int(o), int(i)) for o, i in layout]
        values = as_float64(values).reshape(-1)
        _chkshape(_L, values.shape, (layout_size(self.layout),), "parameter vector")
        self.values = values

    @classmethod
    def from_arrays(cls, arrays):
        layout = [np.shape(w) for w, _ in arrays]
        parts = []
        for w, b in arrays:
            parts.append(np.ravel(w))
            parts.append(np.ravel(b))
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values, layout)

    @classmethod
    def from_layers(cls, layers):
        return cls.from_arrays([(l.weights, l.biases) for l in layers])

    @classmethod
    def zeros(cls, layout):
        return cls(np.zeros(layout_size(layout)), layout)

    def arrays(self):
        """Split into (weights, biases) copies per layer."""
        out = []
        offset = 0
        for o, i in self.layout:
            w = self.values[offset : offset + o * i].reshape(o, i).copy()
            offset += o * i
            b = self.values[offset : offset + o].copy()
            offset += o
            out.append((w, b))
        return out

    def to_layers(self):
        return [DenseLayer(w, b) for w, b in self.arrays()]

    def layer_slices(self):
        """(start, stop) of each layer's weights+biases block."""
        slices = []
        offset = 0
        for o, i in self.layout:
            slices.append((offset, offset + o * i + o))
            offset += o * i + o
        return slices

    def with_values(self, values):
        return type(self)(values, self.layout)

    def copy(self):
        return self.with_values(self.values.copy())

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, ParamVector)
            and self.layout == other.layout
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"{type(self).__name__}(layout={self.layout}, size={len(self)})"


def layout_size(layout) -> int:
    return int(sum(o * i + o for o, i in layout))


@dataclass
class AdamState(object):
    size: int
    lr: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)
        if self.step < 0:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "negative step", values=(self.step,)
            )


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update.

    ``state`` is updated in place. ``params`` is left untouched and the
    updated parameters are returned along with the state.

    Raises:
        IFLOW_Exception: BAD_SHAPE if the vectors differ in length, NON_FINITE
            with the offending index if a gradient entry is not finite.
    """
    p = params.values if isinstance(params, ParamVector) else as_float64(params)
    g = grads.values if isinstance(grads, ParamVector) else as_float64(grads)
    _chkshape(_L, g.shape, p.shape, "gradient")
    _chkshape(_L, state.m.shape, p.shape, "adam state")
    _chkfinite(_L, g, "gradient")

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    new = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)

    if isinstance(params, ParamVector):
        return params.with_values(new), state
    return new, state


def finite_diff_grad(f: Callable, params, h: float = 1e-5):
    """Central-difference gradient of the scalar function ``f``.

    Raises:
        IFLOW_Exception: BAD_VALUE if ``h`` is not positive, NON_FINITE naming
            the coordinate whose evaluation produced a non-finite value.
    """
    if not h > 0:
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "step must be positive", values=(h,)
        )
    is_pv = isinstance(params, ParamVector)
    base = params.values if is_pv else as_float64(params).reshape(-1)
    wrap = params.with_values if is_pv else (lambda v: v)

    grad = np.zeros_like(base)
    point = base.copy()
    for i in range(base.shape[0]):
        orig = point[i]
        point[i] = orig + h
        fp = f(wrap(point.copy()))
        point[i] = orig - h
        fm = f(wrap(point.copy()))
        point[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.NON_FINITE), "objective", index=i
            )
        grad[i] = (fp - fm) / (2.0 * h)

    if is_pv:
        return params.with_values(grad)
    return grad


def relative_error(analytic, numeric, floor=GRADCHECK_FLOOR, elementwise=False):
    """Gradient-check discrepancy between two gradient vectors.

    Elementwise mode returns ``max |a-n| / max(|a|, |n|, floor)``. The default
    scales the worst absolute deviation by the largest entry of either vector,
    which does not blow up on entries that are zero up to rounding.
    """
    a = analytic.values if isinstance(analytic, ParamVector) else as_float64(analytic)
    n = numeric.values if isinstance(numeric, ParamVector) else as_float64(numeric)
    diff = np.abs(a - n)
    if diff.size == 0:
        return 0.0
    if elementwise:
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        return float(np.max(diff / denom))
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), floor)
    return float(np.max(diff) / scale)


def regression_loss(pred, target, mode=LossMode.SQUARED):
    """Mean flow regression loss over rows of N×2 arrays.

    ``squared`` averages ``|r|^2``. ``norm`` averages ``sqrt(|r|^2 + eps)``.

    Returns:
        A ``(loss, d loss / d pred)`` pair.
    """
    mode = LossMode(mode)
    pred = as_float64(pred)
    target = as_float64(target)
    _chkshape(_L, pred.shape, target.shape, "loss operands")
    r = pred - target
    n = r.shape[0] if r.ndim > 1 else 1
    sq = np.sum(r * r, axis=-1)
    if mode == LossMode.SQUARED:
        return float(np.sum(sq) / n), (2.0 / n) * r
    s = np.sqrt(sq + NORM_LOSS_EPS)
    return float(np.sum(s) / n), r / (n * s[..., None])


@dataclass
class OptimizerSettings(object):
    iterations: int = 2000
    lr: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    loss_mode: LossMode = LossMode.SQUARED
    batch_size: Optional[int] = None
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        self.loss_mode = LossMode(self.loss_mode)
        if self.iterations < 1:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "iterations must be >= 1",
                field="iterations",
            )
        if not self.lr > 0:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "lr must be > 0",
                field="lr",
            )
        if self.batch_size is not None and self.batch_size < 1:
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.BAD_CONFIG),
                "batch_size must be >= 1",
                field="batch_size",
            )


@dataclass
class FitResult(object):
    params: ParamVector
    final_loss: float
    history: List[float] = field(default_factory=list)


def optimize(params: ParamVector, objective: Callable, settings: OptimizerSettings):
    """Minimize ``objective`` with Adam.

    ``objective(params, step)`` returns ``(loss, grads)`` for the current
    parameters. The reported final loss is evaluated on the returned
    parameters.

    Raises:
        IFLOW_Exception: DIVERGED with the iteration index once the loss or a
            gradient stops being finite.
    """
    state = AdamState(
        size=len(params),
        lr=settings.lr,
        beta1=settings.beta1,
        beta2=settings.beta2,
        eps=settings.eps,
    )
    history = []
    for it in range(settings.iterations):
        try:
            loss, grads = objective(params, it)
        except IFLOW_Exception as e:
            if e.error != IFLOW_RC.NON_FINITE:
                raise
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.DIVERGED), e.detail, iteration=it
            )
        if not np.isfinite(loss):
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.DIVERGED), "non-finite loss", iteration=it
            )
        history.append(loss)
        try:
            params, state = adam_step(state, params, grads)
        except IFLOW_Exception as e:
            if e.error != IFLOW_RC.NON_FINITE:
                raise
            raise IFLOW_Exception(
                IFLOW_RC.make(_L, IFLOW_RC.DIVERGED),
                "non-finite gradient",
                index=e.index,
                iteration=it,
            )
        if settings.log_every and it % settings.log_every == 0:
            logger.debug(f"iteration {it}: loss {loss:.6e}")

    final, _ = objective(params, None)
    if not np.isfinite(final):
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.DIVERGED),
            "non-finite loss",
            iteration=settings.iterations,
        )
    logger.info(f"optimization finished after {settings.iterations} iterations, loss {final:.6e}")
    return FitResult(params=params, final_loss=float(final), history=history)


def batch_indices(settings: OptimizerSettings, total: int):
    """Return a function mapping an iteration to the sample rows it uses.

    ``None`` selects every row, as does a final-loss evaluation.
    """
    if settings.batch_size is None or settings.batch_size >= total:
        return lambda step: None
    rng = np.random.default_rng(settings.seed)
    draws = {}

    def pick(step):
        if step is None:
            return None
        if step not in draws:
            draws.clear()
            draws[step] = np.sort(
                rng.choice(total, size=settings.batch_size, replace=False)
            )
        return draws[step]

    return pick
