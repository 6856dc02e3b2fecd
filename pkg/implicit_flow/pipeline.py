"""
SPDX-License-Identifier: BSD-2
"""

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .config import EncodeConfig
from .constants import (
    GRADCHECK_STEP,
    GRADCHECK_TRIALS,
    REPORT_COLUMNS,
    SceneKind,
    Strategy,
    SweepKind,
    T_SWEEP,
)
from .encoded import EncodedScene, _chkrange
from .flow import (
    FlowField,
    Image,
    NormalizedFlowField,
    backward_warp,
    epe,
    flow_to_color,
    normalize_pair,
    pyramid_colors,
)
from .hypernet import HyperConfig, HyperParams, hyper_backward, hyper_forward, hyper_init
from .IFLOW_Exception import IFLOW_Exception
from .nn import batch_indices, finite_diff_grad, optimize, regression_loss, relative_error
from .siren import SirenConfig, grid_coords, siren_fit, siren_forward, siren_value_and_grad
from .synth import (
    SceneSpec,
    object_center,
    scene_bidirectional,
    scene_flow,
    support_centroid,
)
from .types import IFLOW_LAYER, IFLOW_RC
from .utils import _chkinterval, _chkshape

logger = logging.getLogger(__name__)

_L = IFLOW_LAYER.PIPELINE


def sweep_times(t0, t1, taus=T_SWEEP):
    """Coordinate times at the given fractions of ``[t0, t1]``."""
    return [t0 + tau * (t1 - t0) for tau in taus]


def _flow_targets(flow: FlowField, flow_scale):
    return flow.data.reshape(-1, 2) / flow_scale


def hypernet_value_and_grad(phi: HyperParams, coords, targets0, targets1, t0, t1, mode):
    """Loss averaged over both input times and its gradient with respect to phi."""
    total = 0.0
    grad = None
    for t, targets in ((t0, targets0), (t1, targets1)):
        theta = hyper_forward(phi, t)
        loss, g_theta = siren_value_and_grad(theta, coords, targets, mode)
        g_phi = hyper_backward(phi, t, g_theta)
        total += 0.5 * loss
        grad = 0.5 * g_phi.values if grad is None else grad + 0.5 * g_phi.values
    return total, phi.with_values(grad)


def _hypernet_loss(phi, coords, targets0, targets1, t0, t1, mode):
    total = 0.0
    for t, targets in ((t0, targets0), (t1, targets1)):
        pred = siren_forward(hyper_forward(phi, t), coords)
        total += 0.5 * regression_loss(pred, targets, mode)[0]
    return total


def encode(fwd: FlowField, bwd: FlowField, cfg: EncodeConfig) -> EncodedScene:
    """Fit the configured strategy to a bidirectional flow pair.

    Raises:
        IFLOW_Exception: BAD_SHAPE for mismatched flows, DEGENERATE_INTERVAL
            for ``t0 == t1`` and DIVERGED with the iteration index when the
            optimization blows up.
    """
    t0, t1 = cfg.t0, cfg.t1
    n0, n1 = normalize_pair(fwd, bwd, t0, t1)
    width, height = fwd.width, fwd.height
    flow_scale = float(max(width, height))
    targets0 = _flow_targets(n0, flow_scale)
    targets1 = _flow_targets(n1, flow_scale)
    coords = grid_coords(width, height)
    siren_cfg = cfg.siren_for_strategy()
    settings = cfg.optimizer_settings()
    logger.info(
        f"encoding {width}x{height} flows with {cfg.strategy.value}, "
        f"{cfg.iterations} iterations at lr {cfg.lr}"
    )

    try:
        if cfg.strategy == Strategy.HYPERNET:
            phi = hyper_init(cfg.hyper, siren_cfg, cfg.seed)
            pick = batch_indices(settings, coords.shape[0])

            def objective(p, step):
                rows = pick(step)
                if rows is None:
                    return hypernet_value_and_grad(
                        p, coords, targets0, targets1, t0, t1, cfg.loss_mode
                    )
                return hypernet_value_and_grad(
                    p, coords[rows], targets0[rows], targets1[rows], t0, t1, cfg.loss_mode
                )

            fit = optimize(phi, objective, settings)
            params = [fit.params]
            final_loss = fit.final_loss
        elif cfg.strategy == Strategy.SINGLE_SIREN:
            samples = (
                np.concatenate(
                    [grid_coords(width, height, t0), grid_coords(width, height, t1)]
                ),
                np.concatenate([targets0, targets1]),
            )
            fit = siren_fit(samples, siren_cfg, settings, seed=cfg.seed)
            params = [fit.params]
            final_loss = fit.final_loss
        else:
            fit0 = siren_fit((coords, targets0), siren_cfg, settings, seed=cfg.seed)
            fit1 = siren_fit(
                (coords, targets1),
                siren_cfg,
                cfg.optimizer_settings(seed_offset=1),
                seed=cfg.seed + 1,
            )
            params = [fit0.params, fit1.params]
            final_loss = 0.5 * (fit0.final_loss + fit1.final_loss)
    except IFLOW_Exception as e:
        if e.error != IFLOW_RC.DIVERGED:
            raise
        raise IFLOW_Exception(
            IFLOW_RC.make(_L, IFLOW_RC.DIVERGED),
            f"{cfg.strategy.value} encode: {e.detail}",
            iteration=e.iteration,
            index=e.index,
        )

    logger.info(f"{cfg.strategy.value} encode finished, final loss {final_loss:.6e}")
    return EncodedScene(
        cfg.strategy,
        params,
        t0,
        t1,
        width,
        height,
        flow_scale,
        final_loss,
        interp_mode=cfg.interp_mode,
        config=cfg.to_dict(),
    )


class AnalyticFlowSource(object):
    """Closed-form stand-in for an EncodedScene built from a SceneSpec.

    Coordinate time ``t`` in ``[t0, t1]`` maps linearly to scene time in
    ``[s0, s1]``, which defaults to the scene interval.
    """

    strategy = None
    omega = None
    final_loss = None

    def __init__(self, spec: SceneSpec, t0, t1, s0=None, s1=None):
        _chkinterval(_L, t0, t1)
        self.spec = spec
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.s0 = spec.t_start if s0 is None else float(s0)
        self.s1 = spec.t_end if s1 is None else float(s1)
        self.width = spec.width
        self.height = spec.height

    def tau(self, t):
        return (t - self.t0) / (self.t1 - self.t0)

    def scene_time(self, t):
        tau = self.tau(t)
        if tau == 0.0:
            return self.s0
        if tau == 1.0:
            return self.s1
        return self.s0 + tau * (self.s1 - self.s0)

    def normalized_flow(self, t) -> NormalizedFlowField:
        _chkrange(self.t0, self.t1, [t])
        rate = (self.s1 - self.s0) / (self.t1 - self.t0)
        data = scene_flow(self.spec, self.scene_time(t)).data * rate
        return NormalizedFlowField(data, self.t0, self.t1, anchor=t)

    def object_center(self, t):
        return object_center(self.spec, self.scene_time(t))


def reconstruct_inputs(scene):
    """The forward and backward flows as the representation reproduces them."""
    n0 = scene.normalized_flow(scene.t0)
    n1 = scene.normalized_flow(scene.t1)
    return (
        FlowField(n0.data * (scene.t1 - scene.t0)),
        FlowField(n1.data * (scene.t0 - scene.t1)),
    )


def interpolate_flows(scene, t):
    """``F_{t->t0} = (t - t0) f(t)`` and ``F_{t->t1} = (t - t1) f(t)``.

    Raises:
        IFLOW_Exception: OUT_OF_RANGE if ``t`` lies outside ``[t0, t1]``.
    """
    _chkrange(scene.t0, scene.t1, [t])
    f = scene.normalized_flow(t).data
    # adding zero clears the sign of -0.0 at the endpoints
    to0 = (t - scene.t0) * f + 0.0
    to1 = (t - scene.t1) * f + 0.0
    return FlowField(to0), FlowField(to1)


def render_intermediate(scene, images, t) -> Image:
    """Warp both inputs to ``t`` and cross-fade them linearly.

    ``(1 - tau) * warp(I0, F_{t->t0}) + tau * warp(I1, F_{t->t1})``, which
    returns the inputs unchanged at the endpoints.
    """
    i0, i1 = images
    _chkrange(scene.t0, scene.t1, [t])
    _chkshape(_L, i0.data.shape, i1.data.shape, "input images")
    _chkshape(_L, (i0.height, i0.width), (scene.height, scene.width), "image vs flow")
    tau = (t - scene.t0) / (scene.t1 - scene.t0)
    to0, to1 = interpolate_flows(scene, t)
    w0 = backward_warp(i0, to0)
    w1 = backward_warp(i1, to1)
    return Image((1.0 - tau) * w0.data + tau * w1.data)


@dataclass
class ReportRow(object):
    strategy: str
    omega: Optional[float]
    coord_distance: float
    t: float
    epe: float
    centroid_err: Optional[float]
    final_loss: Optional[float]
    seconds: Optional[float] = None

    def cells(self, timings=False):
        out = []
        for name in REPORT_COLUMNS:
            value = getattr(self, name)
            if name == "seconds" and not timings:
                value = None
            out.append("" if value is None else repr(value) if isinstance(value, float) else str(value))
        return out


@dataclass
class Report(object):
    rows: List[ReportRow] = field(default_factory=list)
    failures: List[tuple] = field(default_factory=list)
    images: List[tuple] = field(default_factory=list)

    def to_csv(self, timings=False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow(row.cells(timings))
        return buf.getvalue()


def evaluate(scene, oracle: SceneSpec, t_list, s0=None, s1=None) -> Report:
    """Compare interpolated flows against the scene's closed-form flows.

    ``epe`` averages the end-point errors of both intermediate flows. For
    circle scenes ``centroid_err`` is the distance between the centroid of
    the thresholded predicted flow and the analytic disk center.
    """
    _chkshape(
        _L, (scene.height, scene.width), (oracle.height, oracle.width), "oracle geometry"
    )
    _chkrange(scene.t0, scene.t1, t_list)
    reference = AnalyticFlowSource(oracle, scene.t0, scene.t1, s0, s1)
    speed = math.hypot(*oracle.velocity) * abs(
        (reference.s1 - reference.s0) / (scene.t1 - scene.t0)
    )
    report = Report()
    for t in t_list:
        pred0, pred1 = interpolate_flows(scene, t)
        ref0, ref1 = interpolate_flows(reference, t)
        err = 0.5 * (epe(pred0, ref0) + epe(pred1, ref1))

        centroid_err = None
        if oracle.kind == SceneKind.CIRCLE and speed > 0:
            found = support_centroid(scene.normalized_flow(t), 0.5 * speed)
            if found is None:
                centroid_err = math.nan
            else:
                cx, cy = reference.object_center(t)
                centroid_err = math.hypot(found[0] - cx, found[1] - cy)

        report.rows.append(
            ReportRow(
                strategy=scene.strategy.value if scene.strategy else "analytic",
                omega=scene.omega,
                coord_distance=scene.t1 - scene.t0,
                t=float(t),
                epe=err,
                centroid_err=centroid_err,
                final_loss=scene.final_loss,
            )
        )
        logger.debug(f"t={t}: epe {err:.4f}, centroid error {centroid_err}")
    return report


def _sweep_configs(kind: SweepKind, values, cfg: EncodeConfig):
    if kind == SweepKind.OMEGA:
        for w in sorted(float(v) for v in values):
            yield w, replace(cfg, siren=replace(cfg.siren, omega=w))
    elif kind == SweepKind.COORD_DISTANCE:
        for d in sorted(float(v) for v in values):
            hyper = HyperConfig(cfg.hyper.hidden_width, cfg.t0, cfg.t0 + d)
            yield d, replace(cfg, hyper=hyper)
    else:
        for s in values:
            yield Strategy(s).value, replace(cfg, strategy=Strategy(s))


def ablate(
    kind,
    values,
    spec: SceneSpec,
    cfg: EncodeConfig,
    taus=(0.5,),
    s0=None,
    s1=None,
    timings=False,
    pyramid_levels=1,
) -> Report:
    """Encode and evaluate once per sweep setting.

    A setting that fails is logged, recorded in ``failures`` with a row of
    ``nan`` metrics, and the sweep carries on. ``images`` collects a color
    rendering of ``F_{t->t0}`` per setting and time, one per level of its
    flow pyramid when ``pyramid_levels`` is above 1.

    Raises:
        IFLOW_Exception: BAD_VALUE for an empty sweep.
    """
    kind = SweepKind(kind)
    values = list(values)
    if kind == SweepKind.STRATEGY and not values:
        values = list(Strategy)
    if not values:
        raise IFLOW_Exception(IFLOW_RC.make(_L, IFLOW_RC.BAD_VALUE), "empty sweep")

    s0 = spec.t_start if s0 is None else s0
    s1 = spec.t_end if s1 is None else s1
    fwd, bwd = scene_bidirectional(spec, s0, s1)
    report = Report()
    for value, run_cfg in _sweep_configs(kind, values, cfg):
        t_list = sweep_times(run_cfg.t0, run_cfg.t1, taus)
        start = time.perf_counter()
        try:
            scene = encode(fwd, bwd, run_cfg)
            part = evaluate(scene, spec, t_list, s0, s1)
            for t in t_list:
                to0, _ = interpolate_flows(scene, t)
                name = f"{kind.value}_{value}_t{t!r}"
                if pyramid_levels > 1:
                    for k, img in enumerate(pyramid_colors(to0, pyramid_levels)):
                        report.images.append((f"{name}_l{k}", img))
                else:
                    report.images.append((name, flow_to_color(to0)))
        except IFLOW_Exception as e:
            logger.warning(f"{kind.value}={value} failed: {e}")
            report.failures.append((value, str(e)))
            part = Report(
                rows=[
                    ReportRow(
                        strategy=run_cfg.strategy.value,
                        omega=run_cfg.siren.omega,
                        coord_distance=run_cfg.t1 - run_cfg.t0,
                        t=float(t),
                        epe=math.nan,
                        centroid_err=math.nan if spec.kind == SceneKind.CIRCLE else None,
                        final_loss=math.nan,
                    )
                    for t in t_list
                ]
            )
        seconds = time.perf_counter() - start
        if timings:
            for row in part.rows:
                row.seconds = seconds
        report.rows.extend(part.rows)
    return report


def gradcheck(
    trials=GRADCHECK_TRIALS, seed=0, h=GRADCHECK_STEP, width=4, height=4, elementwise=True
):
    """Check the end-to-end hypernetwork loss gradient on random tiny networks.

    Each trial draws a SIREN of at most 2 hidden layers of 8 units, a
    hypernetwork of width at most 8, random targets and a random interval,
    and compares the analytic gradient against central differences. Errors
    are elementwise relative errors with an absolute floor of
    ``GRADCHECK_FLOOR`` unless ``elementwise`` is false.

    Returns:
        The list of per-trial relative errors.
    """
    rng = np.random.default_rng(seed)
    coords = grid_coords(width, height)
    errors = []
    for trial in range(trials):
        siren_cfg = SirenConfig(
            hidden_layers=int(rng.integers(1, 3)),
            width=int(rng.integers(2, 9)),
            omega=float(rng.uniform(1.0, 10.0)),
        )
        t0 = float(rng.uniform(0.0, 0.5))
        t1 = t0 + float(rng.uniform(0.05, 0.5))
        hyper_cfg = HyperConfig(int(rng.integers(2, 9)), t0, t1)
        phi = hyper_init(hyper_cfg, siren_cfg, int(rng.integers(0, 2 ** 31)))
        phi = phi.with_values(phi.values + rng.normal(0.0, 0.05, len(phi)))
        targets0 = rng.normal(0.0, 0.5, (width * height, 2))
        targets1 = rng.normal(0.0, 0.5, (width * height, 2))
        mode = "squared"

        _, analytic = hypernet_value_and_grad(
            phi, coords, targets0, targets1, t0, t1, mode
        )
        numeric = finite_diff_grad(
            lambda p: _hypernet_loss(p, coords, targets0, targets1, t0, t1, mode),
            phi,
            h,
        )
        err = relative_error(analytic, numeric, elementwise=elementwise)
        logger.debug(f"gradcheck trial {trial}: {siren_cfg}, {hyper_cfg}: {err:.3e}")
        errors.append(err)
    return errors
