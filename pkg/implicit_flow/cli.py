"""
SPDX-License-Identifier: BSD-2
"""

import argparse
import datetime
import json
import logging
import os
import sys
import tempfile
from importlib import metadata

from .config import load_encode_config
from .constants import (
    GRADCHECK_TOLERANCE,
    GRADCHECK_TRIALS,
    LOG_LEVEL_ENV,
    PRESETS,
    InterpMode,
    LossMode,
    Strategy,
    SweepKind,
    T_SWEEP,
)
from .digest import digest_bytes, digest_file
from .encoded import EncodedScene, _chkrange
from .flow import (
    flow_to_color,
    pyramid_colors,
    read_flo,
    read_image,
    write_flo,
    write_image,
)
from .IFLOW_Exception import IFLOW_Exception
from .pipeline import (
    ablate,
    encode,
    evaluate,
    gradcheck,
    interpolate_flows,
    render_intermediate,
    sweep_times,
)
from .synth import SceneSpec, scene_bidirectional, scene_image
from .types import IFLOW_LAYER, IFLOW_RC

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

SOURCE_DATE_EPOCH_ENV = "SOURCE_DATE_EPOCH"


def _version():
    try:
        return metadata.version("implicit-flow")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now():
    """UTC timestamp for manifests, pinned by $SOURCE_DATE_EPOCH when set."""
    epoch = os.environ.get(SOURCE_DATE_EPOCH_ENV)
    if epoch is not None:
        try:
            when = datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc)
        except (ValueError, OverflowError, OSError):
            raise _UsageError(
                f"${SOURCE_DATE_EPOCH_ENV} is not a unix timestamp: {epoch!r}"
            )
        return when.isoformat()
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _io_error(path, e):
    return IFLOW_Exception(
        IFLOW_RC.make(IFLOW_LAYER.CLI, IFLOW_RC.IO_ERROR), f"{path}: {e.strerror}"
    )


def _read(path):
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise _io_error(path, e)


def _atomic_write(path, data):
    """Write ``data`` to a temporary file next to ``path`` and rename it."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".iflow-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise _io_error(path, e)
    logger.debug(f"wrote {len(data)} bytes to {path}")


class _Run(object):
    """Bookkeeping for one command: its inputs, outputs and manifest."""

    def __init__(self, command, argv, seed=None):
        self.command = command
        self.argv = list(argv)
        self.seed = seed
        self.config = None
        self.inputs = {}
        self.outputs = {}
        self.started = _now()

    def read(self, path):
        data = _read(path)
        self.inputs[path] = digest_bytes(data)
        return data

    def write(self, path, data):
        _atomic_write(path, data)
        self.outputs[path] = digest_bytes(data)

    def manifest(self):
        return {
            "manifest_version": MANIFEST_VERSION,
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": _now(),
            "version": _version(),
        }

    def write_manifest(self, path):
        text = json.dumps(self.manifest(), indent=4, sort_keys=True) + "\n"
        _atomic_write(path, text.encode("utf-8"))
        logger.info(f"manifest written to {path}")


def _add_encode_flags(p):
    p.add_argument("--config", help="JSON file of encode settings")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--width", type=int, help="SIREN hidden width")
    p.add_argument("--hyper-width", type=int)
    p.add_argument("--t0", type=float, help="first input time coordinate")
    p.add_argument("--t1", type=float, help="second input time coordinate")
    p.add_argument("--loss-mode", choices=[m.value for m in LossMode])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--interp-mode", choices=[m.value for m in InterpMode])


def _encode_config(args):
    siren = {
        k: v
        for k, v in (
            ("omega", args.omega),
            ("hidden_layers", args.hidden_layers),
            ("width", args.width),
        )
        if v is not None
    }
    hyper = {
        k: v
        for k, v in (
            ("hidden_width", args.hyper_width),
            ("t0", args.t0),
            ("t1", args.t1),
        )
        if v is not None
    }
    overrides = {
        "strategy": args.strategy,
        "iterations": args.iterations,
        "lr": args.lr,
        "seed": args.seed,
        "loss_mode": args.loss_mode,
        "batch_size": args.batch_size,
        "interp_mode": args.interp_mode,
    }
    if siren:
        overrides["siren"] = siren
    if hyper:
        overrides["hyper"] = hyper
    return load_encode_config(preset=args.preset, path=args.config, overrides=overrides)


def _load_spec(run, path):
    try:
        text = run.read(path).decode("utf-8")
    except UnicodeDecodeError as e:
        raise IFLOW_Exception(
            IFLOW_RC.make(IFLOW_LAYER.SYNTH, IFLOW_RC.BAD_SPEC), f"{path}: {e.reason}"
        )
    return SceneSpec.parse(text)


def _tname(t):
    return f"t_{t!r}"


def cmd_synth(args, run):
    spec = _load_spec(run, args.spec)
    s0 = spec.t_start if args.t0 is None else args.t0
    s1 = spec.t_end if args.t1 is None else args.t1
    run.config = {"scene": spec.to_dict(), "t0": s0, "t1": s1}
    fwd, bwd = scene_bidirectional(spec, s0, s1)
    out = args.out_dir
    run.write(os.path.join(out, "I_t0.ppm"), write_image(scene_image(spec, s0)))
    run.write(os.path.join(out, "I_t1.ppm"), write_image(scene_image(spec, s1)))
    run.write(os.path.join(out, "fwd.flo"), write_flo(fwd))
    run.write(os.path.join(out, "bwd.flo"), write_flo(bwd))
    run.write_manifest(os.path.join(out, MANIFEST_NAME))


def cmd_encode(args, run):
    cfg = _encode_config(args)
    run.config = cfg.to_dict()
    fwd = read_flo(run.read(args.fwd))
    bwd = read_flo(run.read(args.bwd))
    scene = encode(fwd, bwd, cfg)
    run.write(args.out, scene.toPEM() if args.pem else scene.toDER())
    run.write_manifest(args.out + "." + MANIFEST_NAME)
    print(f"final loss {scene.final_loss!r}")


def _times(args, scene):
    if args.t:
        return list(args.t)
    return sweep_times(scene.t0, scene.t1, T_SWEEP)


def cmd_interp(args, run):
    scene = EncodedScene.load(run.read(args.scene))
    run.config = scene.config
    times = _times(args, scene)
    _chkrange(scene.t0, scene.t1, times)
    images = None
    if args.images:
        images = tuple(read_image(run.read(p)) for p in args.images)
    for t in times:
        to0, to1 = interpolate_flows(scene, t)
        out = os.path.join(args.out_dir, _tname(t))
        run.write(os.path.join(out, "F_to_t0.flo"), write_flo(to0))
        run.write(os.path.join(out, "F_to_t1.flo"), write_flo(to1))
        run.write(os.path.join(out, "F_to_t0.ppm"), write_image(flow_to_color(to0)))
        run.write(os.path.join(out, "F_to_t1.ppm"), write_image(flow_to_color(to1)))
        if images is not None:
            frame = render_intermediate(scene, images, t)
            run.write(os.path.join(out, "frame.ppm"), write_image(frame))
    run.write_manifest(os.path.join(args.out_dir, MANIFEST_NAME))


def cmd_eval(args, run):
    scene = EncodedScene.load(run.read(args.scene))
    spec = _load_spec(run, args.spec)
    run.config = {"scene": spec.to_dict(), "encode": scene.config}
    report = evaluate(scene, spec, _times(args, scene), args.s0, args.s1)
    run.write(args.out, report.to_csv(args.timings).encode("utf-8"))
    run.write_manifest(args.out + "." + MANIFEST_NAME)


def cmd_ablate(args, run):
    kind = SweepKind(args.sweep)
    if not args.values and kind != SweepKind.STRATEGY:
        raise _UsageError(f"--values is required for a {kind.value} sweep")
    spec = _load_spec(run, args.spec)
    cfg = _encode_config(args)
    run.config = {"scene": spec.to_dict(), "encode": cfg.to_dict()}
    try:
        if kind == SweepKind.STRATEGY:
            values = [Strategy(v) for v in args.values or []]
        else:
            values = [float(v) for v in args.values]
    except ValueError as e:
        raise _UsageError(f"bad --values: {e}")
    report = ablate(
        kind,
        values,
        spec,
        cfg,
        taus=args.taus,
        s0=args.s0,
        s1=args.s1,
        timings=args.timings,
        pyramid_levels=args.pyramid_levels,
    )
    run.write(
        os.path.join(args.out_dir, "report.csv"), report.to_csv(args.timings).encode("utf-8")
    )
    for name, img in report.images:
        run.write(os.path.join(args.out_dir, f"{name}.ppm"), write_image(img))
    run.write_manifest(os.path.join(args.out_dir, MANIFEST_NAME))
    for value, reason in report.failures:
        print(f"{kind.value}={value} failed: {reason}", file=sys.stderr)


def cmd_gradcheck(args, run):
    if args.trials < 1:
        raise _UsageError("--trials must be >= 1")
    errors = gradcheck(trials=args.trials, seed=args.seed)
    worst = max(errors)
    print(f"{len(errors)} trials, max relative error {worst:.3e}")
    if worst > args.tolerance:
        print(f"tolerance {args.tolerance:.1e} exceeded", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_viz(args, run):
    f = read_flo(run.read(args.flo))
    if args.pyramid > 1:
        base, ext = os.path.splitext(args.out)
        for k, img in enumerate(pyramid_colors(f, args.pyramid, args.max_magnitude)):
            path = args.out if k == 0 else f"{base}_l{k}{ext or '.ppm'}"
            run.write(path, write_image(img))
    else:
        run.write(args.out, write_image(flow_to_color(f, args.max_magnitude)))


def cmd_replay(args, run):
    try:
        manifest = json.loads(run.read(args.manifest).decode("utf-8"))
        argv = manifest["argv"]
        recorded = manifest["outputs"]
    except (ValueError, KeyError, TypeError) as e:
        raise IFLOW_Exception(
            IFLOW_RC.make(IFLOW_LAYER.CLI, IFLOW_RC.BAD_CONFIG),
            f"{args.manifest}: not a run manifest ({e})",
        )
    if argv and argv[0] == "replay":
        raise _UsageError("refusing to replay a replay")
    logger.info(f"replaying {' '.join(argv)}")
    rc = main(argv)
    if rc != EXIT_OK:
        return rc
    differ = [p for p, d in sorted(recorded.items()) if digest_file(p) != d]
    for path in differ:
        print(f"{path}: output differs from the recorded run", file=sys.stderr)
    return EXIT_ERROR if differ else EXIT_OK


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    parser = _Parser(
        prog="iflow",
        description="Encode bidirectional optical flows into an implicit "
        "representation and interpolate intermediate flows from it.",
    )
    parser.add_argument(
        "--log-level",
        default=None,
        help=f"logging level, defaults to ${LOG_LEVEL_ENV} or warning",
    )
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="render a synthetic scene and its flows")
    p.add_argument("spec", help="scene file of key = value lines")
    p.add_argument("--t0", type=float, help="first scene time")
    p.add_argument("--t1", type=float, help="second scene time")
    p.add_argument("-o", "--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="fit an implicit representation to a flow pair")
    p.add_argument("fwd")
    p.add_argument("bwd")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--pem", action="store_true", help="write PEM instead of DER")
    _add_encode_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("interp", help="write intermediate flows")
    p.add_argument("scene", help="encoded scene")
    p.add_argument("-t", type=float, nargs="+", help="time coordinates")
    p.add_argument("--images", nargs=2, metavar=("I0", "I1"))
    p.add_argument("-o", "--out-dir", required=True)
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("eval", help="compare interpolated flows with a scene")
    p.add_argument("scene", help="encoded scene")
    p.add_argument("spec", help="scene file the flows were rendered from")
    p.add_argument("-t", type=float, nargs="+")
    p.add_argument("--s0", type=float, help="scene time of the first input")
    p.add_argument("--s1", type=float, help="scene time of the second input")
    p.add_argument("--timings", action="store_true")
    p.add_argument("-o", "--out", required=True, help="CSV report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one setting over encode and eval")
    p.add_argument("spec")
    p.add_argument("--sweep", choices=[k.value for k in SweepKind], required=True)
    p.add_argument("--values", nargs="*")
    p.add_argument("--taus", type=float, nargs="+", default=[0.5])
    p.add_argument("--s0", type=float)
    p.add_argument("--s1", type=float)
    p.add_argument("--timings", action="store_true")
    p.add_argument("--pyramid-levels", type=int, default=1)
    p.add_argument("-o", "--out-dir", required=True)
    _add_encode_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="check gradients on random tiny networks")
    p.add_argument("--trials", type=int, default=GRADCHECK_TRIALS)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("viz", help="render a .flo file with the color wheel")
    p.add_argument("flo")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--pyramid", type=int, default=1, help="pyramid levels")
    p.add_argument("--max-magnitude", type=float)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)

    return parser


def _setup_logging(level):
    if level is None:
        level = os.environ.get(LOG_LEVEL_ENV, "warning")
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise _UsageError(f"unknown log level {level!r}")
    logging.basicConfig(
        level=numeric, format="%(levelname)s:%(name)s:%(message)s", stream=sys.stderr
    )
    logging.getLogger("implicit_flow").setLevel(numeric)


def main(argv=None):
    """Entry point of ``iflow``; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.log_level)
        run = _Run(args.command, argv, seed=args.seed)
        rc = args.func(args, run)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"iflow: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IFLOW_Exception as e:
        print(f"iflow: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
