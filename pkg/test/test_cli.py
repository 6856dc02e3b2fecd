"""
SPDX-License-Identifier: BSD-2
"""

import contextlib
import io
import json
import os
import unittest
from unittest import mock

import numpy as np

from implicit_flow import *
from implicit_flow.cli import MANIFEST_NAME, build_parser, main
from implicit_flow.digest import digest_bytes, digest_file

from .IFLOW_BaseTest import IFLOW_BaseTest

TRANSLATION = """\
kind = translation
width = 8
height = 8
radius = 2
center = 3, 4
velocity = 0.8, 0
"""

TINY_FLAGS = [
    "--iterations",
    "10",
    "--lr",
    "0.01",
    "--hidden-layers",
    "1",
    "--width",
    "8",
    "--hyper-width",
    "4",
]


class CLITest(IFLOW_BaseTest):
    def setUp(self):
        super().setUp()
        self.spec = self.path("scene.txt")
        with open(self.spec, "w") as f:
            f.write(TRANSLATION)

    def run_cli(self, *argv):
        out = io.StringIO()
        err = io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            rc = main(list(argv))
        return rc, out.getvalue(), err.getvalue()

    def synth(self):
        rc, _, err = self.run_cli("synth", self.spec, "-o", self.path("in"))
        self.assertEqual(rc, 0, err)
        return self.path("in")

    def encoded(self, *extra):
        d = self.synth()
        out = self.path("scene.der")
        rc, stdout, err = self.run_cli(
            "encode",
            os.path.join(d, "fwd.flo"),
            os.path.join(d, "bwd.flo"),
            "-o",
            out,
            *TINY_FLAGS,
            *extra,
        )
        self.assertEqual(rc, 0, err)
        self.assertTrue(stdout.startswith("final loss "))
        return out

    def test_synth(self):
        d = self.synth()
        for name in ("I_t0.ppm", "I_t1.ppm", "fwd.flo", "bwd.flo", MANIFEST_NAME):
            self.assertTrue(os.path.exists(os.path.join(d, name)), name)
        with open(os.path.join(d, "fwd.flo"), "rb") as f:
            fwd = read_flo(f.read())
        np.testing.assert_allclose(fwd.data[..., 0], np.full((8, 8), 0.8), rtol=1e-7)
        with open(os.path.join(d, MANIFEST_NAME)) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["command"], "synth")
        self.assertEqual(manifest["seed"], 0)
        self.assertEqual(manifest["config"]["scene"]["kind"], "translation")
        self.assertIn(self.spec, manifest["inputs"])
        fwd_path = os.path.join(d, "fwd.flo")
        self.assertEqual(manifest["outputs"][fwd_path], digest_file(fwd_path))

    def test_synth_bad_kind(self):
        with open(self.spec, "w") as f:
            f.write("kind = square\n")
        rc, _, err = self.run_cli("synth", self.spec, "-o", self.path("in"))
        self.assertEqual(rc, 1)
        self.assertIn("line 1", err)
        self.assertFalse(os.path.exists(self.path("in", MANIFEST_NAME)))

    def test_missing_file(self):
        rc, _, err = self.run_cli("synth", self.path("absent.txt"), "-o", self.path("in"))
        self.assertEqual(rc, 1)
        self.assertIn("input/output error", err)
        self.assertIn("absent.txt", err)

    def test_usage(self):
        rc, _, err = self.run_cli("frobnicate")
        self.assertEqual(rc, 2)
        self.assertIn("usage:", err)
        rc, _, _ = self.run_cli("encode", "a.flo")
        self.assertEqual(rc, 2)
        rc, _, _ = self.run_cli("--log-level", "chatty", "gradcheck", "--trials", "1")
        self.assertEqual(rc, 2)

    def test_encode_and_interp(self):
        scene_path = self.encoded("--strategy", "two_sirens")
        with open(scene_path, "rb") as f:
            scene = EncodedScene.load(f.read())
        self.assertEqual(scene.strategy, Strategy.TWO_SIRENS)
        self.assertEqual(scene.config["iterations"], 10)
        self.assertTrue(os.path.exists(scene_path + "." + MANIFEST_NAME))

        out = self.path("interp")
        d = self.path("in")
        rc, _, err = self.run_cli(
            "interp",
            scene_path,
            "-t",
            "0.0",
            "0.05",
            "--images",
            os.path.join(d, "I_t0.ppm"),
            os.path.join(d, "I_t1.ppm"),
            "-o",
            out,
        )
        self.assertEqual(rc, 0, err)
        for t in ("t_0.0", "t_0.05"):
            for name in ("F_to_t0.flo", "F_to_t1.flo", "F_to_t0.ppm", "F_to_t1.ppm", "frame.ppm"):
                self.assertTrue(os.path.exists(os.path.join(out, t, name)), (t, name))
        with open(os.path.join(out, "t_0.0", "F_to_t0.flo"), "rb") as f:
            self.assertEqual(read_flo(f.read()), FlowField.zeros(8, 8))

    def test_pem(self):
        scene_path = self.encoded("--pem")
        with open(scene_path, "rb") as f:
            self.assertTrue(f.read().startswith(b"-----BEGIN"))

    def test_interp_default_sweep(self):
        scene_path = self.encoded()
        rc, _, err = self.run_cli("interp", scene_path, "-o", self.path("interp"))
        self.assertEqual(rc, 0, err)
        self.assertEqual(len([n for n in os.listdir(self.path("interp")) if n.startswith("t_")]), 5)

    def test_interp_out_of_range(self):
        scene_path = self.encoded()
        rc, _, err = self.run_cli("interp", scene_path, "-t", "0.05", "0.5", "-o", self.path("interp"))
        self.assertEqual(rc, 1)
        self.assertIn("0.5", err)
        self.assertFalse(os.path.exists(self.path("interp", "t_0.05")))

    def test_interp_missing_scene(self):
        rc, _, _ = self.run_cli("interp", self.path("absent.der"), "-o", self.path("interp"))
        self.assertEqual(rc, 1)

    def test_interp_unknown_strategy(self):
        scene_path = self.encoded()
        with open(scene_path, "rb") as f:
            seq = EncodedScene._encodedscene_der.load(f.read())
        seq["strategy"] = "three_sirens"
        with open(scene_path, "wb") as f:
            f.write(seq.dump(force=True))
        rc, _, err = self.run_cli("interp", scene_path, "-o", self.path("interp"))
        self.assertEqual(rc, 1)
        self.assertIn("bad value", err)

    def test_encode_paper_preset(self):
        d = self.synth()
        out = self.path("scene.der")
        rc, _, err = self.run_cli(
            "encode",
            os.path.join(d, "fwd.flo"),
            os.path.join(d, "bwd.flo"),
            "-o",
            out,
            "--preset",
            "paper",
            "--iterations",
            "2",
            "--hidden-layers",
            "1",
            "--width",
            "8",
            "--hyper-width",
            "4",
        )
        self.assertEqual(rc, 0, err)
        with open(out, "rb") as f:
            config = EncodedScene.load(f.read()).config
        self.assertEqual(config["lr"], 1e-6)
        self.assertEqual(config["iterations"], 2)
        self.assertEqual((config["beta1"], config["beta2"]), (0.9, 0.999))

    def test_encode_mismatched(self):
        d = self.synth()
        other = self.path("small.flo")
        with open(other, "wb") as f:
            f.write(write_flo(FlowField.zeros(4, 4)))
        rc, _, err = self.run_cli(
            "encode", os.path.join(d, "fwd.flo"), other, "-o", self.path("x.der"), *TINY_FLAGS
        )
        self.assertEqual(rc, 1)
        self.assertIn("dimension mismatch", err)

    def test_eval(self):
        scene_path = self.encoded()
        out = self.path("report.csv")
        rc, _, err = self.run_cli("eval", scene_path, self.spec, "-t", "0.05", "-o", out)
        self.assertEqual(rc, 0, err)
        with open(out) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], ",".join(REPORT_COLUMNS))
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[1].startswith("hypernet,10.0,0.1,0.05,"))

    def test_ablate(self):
        out = self.path("ablate")
        rc, _, err = self.run_cli(
            "ablate", self.spec, "--sweep", "omega", "--values", "20", "5", "-o", out, *TINY_FLAGS
        )
        self.assertEqual(rc, 0, err)
        with open(os.path.join(out, "report.csv")) as f:
            rows = f.read().splitlines()[1:]
        self.assertEqual([r.split(",")[1] for r in rows], ["5.0", "20.0"])
        self.assertTrue(os.path.exists(os.path.join(out, "omega_5.0_t0.05.ppm")))
        self.assertTrue(os.path.exists(os.path.join(out, MANIFEST_NAME)))

    def test_ablate_usage(self):
        out = self.path("ablate")
        rc, _, _ = self.run_cli("ablate", self.spec, "--sweep", "omega", "-o", out)
        self.assertEqual(rc, 2)
        rc, _, _ = self.run_cli(
            "ablate", self.spec, "--sweep", "coord_distance", "--values", "wide", "-o", out
        )
        self.assertEqual(rc, 2)

    def test_gradcheck(self):
        rc, out, _ = self.run_cli("gradcheck", "--trials", "2")
        self.assertEqual(rc, 0)
        self.assertIn("2 trials", out)
        rc, _, err = self.run_cli("gradcheck", "--trials", "1", "--tolerance", "-1")
        self.assertEqual(rc, 1)
        self.assertIn("exceeded", err)
        rc, _, _ = self.run_cli("gradcheck", "--trials", "0")
        self.assertEqual(rc, 2)

    def test_viz(self):
        d = self.synth()
        out = self.path("viz", "fwd.ppm")
        rc, _, err = self.run_cli("viz", os.path.join(d, "fwd.flo"), "-o", out, "--pyramid", "3")
        self.assertEqual(rc, 0, err)
        with open(out, "rb") as f:
            self.assertEqual(read_image(f.read()).width, 8)
        with open(self.path("viz", "fwd_l2.ppm"), "rb") as f:
            self.assertEqual(read_image(f.read()).width, 2)

    def test_replay(self):
        d = self.synth()
        manifest = os.path.join(d, MANIFEST_NAME)
        rc, _, err = self.run_cli("replay", manifest)
        self.assertEqual(rc, 0, err)

        with open(os.path.join(d, "fwd.flo"), "rb") as f:
            before = f.read()
        with open(manifest) as f:
            data = json.load(f)
        data["outputs"][os.path.join(d, "fwd.flo")] = digest_bytes(b"something else")
        with open(manifest, "w") as f:
            json.dump(data, f)
        rc, _, err = self.run_cli("replay", manifest)
        self.assertEqual(rc, 1)
        self.assertIn("differs", err)
        with open(os.path.join(d, "fwd.flo"), "rb") as f:
            self.assertEqual(f.read(), before)

    def test_manifest_reproducible(self):
        def snapshot():
            rc, _, err = self.run_cli("synth", self.spec, "-o", self.path("in"))
            self.assertEqual(rc, 0, err)
            out = {}
            for name in ("fwd.flo", "I_t0.ppm", MANIFEST_NAME):
                with open(self.path("in", name), "rb") as f:
                    out[name] = f.read()
            return out

        with mock.patch.dict(os.environ, {"SOURCE_DATE_EPOCH": "1600000000"}):
            first = snapshot()
            second = snapshot()
        self.assertEqual(first, second)
        manifest = json.loads(first[MANIFEST_NAME])
        self.assertEqual(manifest["started"], "2020-09-13T12:26:40+00:00")
        self.assertEqual(manifest["finished"], manifest["started"])

    def test_bad_source_date_epoch(self):
        with mock.patch.dict(os.environ, {"SOURCE_DATE_EPOCH": "yesterday"}):
            rc, _, err = self.run_cli("synth", self.spec, "-o", self.path("in"))
        self.assertEqual(rc, 2)
        self.assertIn("SOURCE_DATE_EPOCH", err)

    def test_replay_not_a_manifest(self):
        bogus = self.path("bogus.json")
        with open(bogus, "w") as f:
            f.write("[1, 2]")
        rc, _, _ = self.run_cli("replay", bogus)
        self.assertEqual(rc, 1)

    def test_parser_defaults(self):
        args = build_parser().parse_args(["gradcheck"])
        self.assertEqual((args.trials, args.tolerance, args.seed), (20, 1e-4, 0))
        args = build_parser().parse_args(["ablate", "s.txt", "--sweep", "strategy", "-o", "x"])
        self.assertEqual(args.taus, [0.5])
        self.assertIsNone(args.values)


class DigestTest(unittest.TestCase):
    def test_sha256(self):
        self.assertEqual(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
        )

    def test_unknown(self):
        with self.assertRaises(IFLOW_Exception) as e:
            digest_bytes(b"abc", "md4")
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_VALUE)


if __name__ == "__main__":
    unittest.main()
