import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from exaug.cli import main, parse_relative_transform
from exaug.cloud import read_exdm
from exaug.geometry import CameraModel, mount_transform
from exaug.scene import narrow_gap_scene
from exaug.viewsynth import read_ppm


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def gap_scene(tmp_path):
    path = tmp_path / "gap.json"
    path.write_text(narrow_gap_scene().to_json())
    return path


@pytest.fixture
def pinhole_json(tmp_path):
    cam = CameraModel.pinhole(48, 36, 30.0, mount=mount_transform((0.0, 0.0, 0.5)))
    path = tmp_path / "cam.json"
    path.write_text(cam.to_json())
    return path


def straight_suite(tmp_path):
    out = tmp_path / "suite"
    assert run("scene", "generate", "--count", 2, "--obstacle-free", "--seed", 3,
               "--out", out, "--no-figures") == 0
    return out


class TestBasics:
    def test_console_help(self):
        proc = subprocess.run([sys.executable, "-m", "exaug.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for name in ("warp", "optimize", "scene", "nav", "eval-suite", "selftest"):
            assert name in proc.stdout

    def test_missing_file_is_usage_error(self, tmp_path, capsys):
        code = run("nav", "--scene", tmp_path / "nope.json", "--out", tmp_path / "m.json")
        assert code == 2
        assert "exaug:" in capsys.readouterr().err

    def test_malformed_pose(self, tmp_path, gap_scene):
        code = run("scene", "render", "--scene", gap_scene, "--pose", "1,x",
                   "--out-color", tmp_path / "c.ppm")
        assert code == 2

    def test_bad_thread_env(self, tmp_path, gap_scene, monkeypatch):
        monkeypatch.setenv("EXAUG_THREADS", "many")
        assert run("selftest", "--quick") == 2

    def test_relative_pose_forms(self, tmp_path):
        a = parse_relative_transform("1,2,0.5")
        b = parse_relative_transform("1,2,0,0.5")
        np.testing.assert_allclose(a.as_matrix(), b.as_matrix())
        path = tmp_path / "rel.json"
        path.write_text(json.dumps({"x": 1, "y": 2, "theta": 0.5}))
        np.testing.assert_allclose(parse_relative_transform(str(path)).as_matrix(), a.as_matrix())


class TestScene:
    def test_generate_writes_suite(self, tmp_path):
        out = tmp_path / "s"
        assert run("scene", "generate", "--count", 2, "--seed", 1, "--out", out) == 0
        names = json.loads((out / "suite.json").read_text())["scenes"]
        assert len(names) == 2
        assert (out / "scene_000.json").exists() and (out / "graph_001.json").exists()
        assert (out / "scene_000.png").stat().st_size > 0

    def test_fixture(self, tmp_path):
        out = tmp_path / "f"
        assert run("scene", "generate", "--fixture", "narrow-gap", "--out", out,
                   "--no-figures") == 0
        assert json.loads((out / "scene_000.json").read_text())["name"] == "narrow_gap"
        assert not list(out.glob("*.png"))

    def test_render(self, tmp_path, gap_scene, pinhole_json):
        assert run("scene", "render", "--scene", gap_scene, "--cam", pinhole_json,
                   "--out-color", tmp_path / "c.ppm", "--out-depth", tmp_path / "d.exdm") == 0
        assert read_ppm(tmp_path / "c.ppm").rgb.shape == (36, 48, 3)
        assert read_exdm(tmp_path / "d.exdm").valid.any()


class TestWarp:
    def test_identity_pose_reproduces_input(self, tmp_path, gap_scene, pinhole_json):
        color, depth = tmp_path / "c.ppm", tmp_path / "d.exdm"
        run("scene", "render", "--scene", gap_scene, "--cam", pinhole_json,
            "--out-color", color, "--out-depth", depth)
        out = tmp_path / "w.ppm"
        assert run("warp", "--src-image", color, "--src-depth", depth, "--src-cam", pinhole_json,
                   "--dst-cam", pinhole_json, "--pose", "0,0,0", "--out", out) == 0
        valid = read_exdm(depth).valid
        np.testing.assert_array_equal(read_ppm(out).rgb[valid], read_ppm(color).rgb[valid])
        assert (tmp_path / "w.png").exists()

    def test_corrupt_depth(self, tmp_path, pinhole_json):
        (tmp_path / "bad.exdm").write_bytes(b"nope")
        (tmp_path / "c.ppm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        code = run("warp", "--src-image", tmp_path / "c.ppm", "--src-depth", tmp_path / "bad.exdm",
                   "--src-cam", pinhole_json, "--dst-cam", pinhole_json, "--pose", "0,0,0",
                   "--out", tmp_path / "w.ppm")
        assert code == 2
        assert not (tmp_path / "w.ppm").exists()


class TestOptimize:
    def test_report_and_csv(self, tmp_path, gap_scene):
        traj, report = tmp_path / "t.csv", tmp_path / "r.json"
        assert run("optimize", "--scene", gap_scene, "--iters", 60, "--restarts", 1,
                   "--out", traj, "--report", report) == 0
        rows = list(csv.reader(traj.open()))
        assert rows[0] == ["step", "v", "omega", "x", "y", "theta", "t"]
        assert len(rows) == 9
        d = json.loads(report.read_text())
        assert {"min_clearance", "peak_abs_omega", "final_position"} <= set(d)
        assert d["peak_abs_omega"] <= 1.0
        assert (tmp_path / "r.png").exists()

    def test_omega_limit_respected(self, tmp_path, gap_scene):
        report = tmp_path / "r.json"
        run("optimize", "--scene", gap_scene, "--goal", "1,1.5", "--omega-max", 0.3,
            "--iters", 40, "--restarts", 1, "--out", tmp_path / "t.csv", "--report", report,
            "--no-figures")
        assert json.loads(report.read_text())["peak_abs_omega"] <= 0.3


class TestNav:
    def test_success_exit_and_trace(self, tmp_path):
        suite = straight_suite(tmp_path)
        out, trace = tmp_path / "m.json", tmp_path / "t.csv"
        assert run("nav", "--scene", suite / "scene_000.json", "--graph", suite / "graph_000.json",
                   "--out", out, "--trace", trace, "--no-figures") == 0
        m = json.loads(out.read_text())["metrics"]
        assert m["goal_arrival"] and m["collision_free"]
        assert len(trace.read_text().splitlines()) == m["steps"] + 1

    def test_budget_exhaustion_exit_code(self, tmp_path):
        suite = straight_suite(tmp_path)
        code = run("nav", "--scene", suite / "scene_000.json", "--max-steps", 1,
                   "--out", tmp_path / "m.json", "--no-figures")
        assert code == 1


class TestEvalSuite:
    def test_grid_and_determinism(self, tmp_path, monkeypatch):
        suite = straight_suite(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run("eval-suite", "--suite", suite, "--rs", 0.2, 0.3, "--out", a,
                   "--no-figures") == 0
        monkeypatch.setenv("EXAUG_THREADS", "2")
        assert run("eval-suite", "--suite", suite, "--rs", 0.2, 0.3, "--out", b,
                   "--no-figures") == 0
        assert a.read_bytes() == b.read_bytes()
        report = json.loads(a.read_text())
        assert len(report["episodes"]) == 4
        assert len(report["aggregate"]) == 2
        for agg in report["aggregate"].values():
            assert agg["goal_arrival"] == 1.0

    def test_empty_grid(self, tmp_path):
        suite = straight_suite(tmp_path)
        out = tmp_path / "e.json"
        assert run("eval-suite", "--suite", suite, "--rs", "--out", out) == 0
        report = json.loads(out.read_text())
        assert report["episodes"] == [] and report["aggregate"] == {}

    def test_report_dir(self, tmp_path):
        suite = straight_suite(tmp_path)
        rdir = tmp_path / "rep"
        assert run("eval-suite", "--suite", suite / "scene_001.json", "--out", tmp_path / "o.json",
                   "--report-dir", rdir) == 0
        assert len(list(rdir.glob("*.csv"))) == 1
        assert len(list(rdir.glob("*.png"))) == 1
        assert (tmp_path / "o.png").exists()


class TestSelftest:
    def test_quick(self, capsys):
        assert run("selftest", "--quick") == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)


def test_thread_count_validated(tmp_path):
    assert run("selftest", "--quick", "--threads", 0) == 2
