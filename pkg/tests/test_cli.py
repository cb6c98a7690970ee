import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from vismine import cli, vislog

SCENARIO = ["click:album", "click:travel", "click:beach", "click:edit", "swipe:right", "click:adjust",
            "swipe:right", "click:contrast", "adjust:level:+", "click:tick", "click:save"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def analyzed(scenario_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("analyzed")
    assert cli.main(["analyze", str(scenario_dir), "--text-detector", "oracle", "--out", str(out)]) == 0
    return out / "interactions.json"


# ---------------------------------------------------------------- synth

def test_synth_demo_loadable(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "demo:scenario", "--out", tmp_path / "log")
    assert code == 0 and "wrote" in out
    vlog = vislog.load_log(tmp_path / "log")
    truth = json.loads((tmp_path / "log" / "truth.json").read_text())
    assert len(vlog.frames) == len(truth["frames"]) and truth["tokens"] == SCENARIO


def test_synth_twice_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "synth", "demo:transitions", "--out", tmp_path / name)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_single_screen(tmp_path, capsys):
    spec = {"width": 1334, "height": 750, "elements": [{"name": "x", "type": "icon", "bbox": [10, 10, 40, 40]}]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert run(capsys, "synth", tmp_path / "s.json", "--out", tmp_path / "o")[0] == 0
    assert len(vislog.load_log(tmp_path / "o").frames) == 1


@pytest.mark.parametrize("body", [
    {"width": 1136, "height": 640, "elements": [{"name": "oob", "type": "icon", "bbox": [1130, 10, 40, 40]}]},
    {"version": 1, "screen": {"width": 1136, "height": 640}, "start": "nowhere", "screens": {}},
    "garbage",
])
def test_synth_invalid_spec(tmp_path, capsys, body):
    (tmp_path / "s.json").write_text(body if isinstance(body, str) else json.dumps(body))
    code, _, err = run(capsys, "synth", tmp_path / "s.json", "--out", tmp_path / "o")
    assert code == 2 and "error" in err


def test_synth_unknown_demo(tmp_path, capsys):
    assert run(capsys, "synth", "demo:nope", "--out", tmp_path)[0] == 2


# ---------------------------------------------------------------- detect

def test_detect_writes_per_sampled_frame(transitions_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "detect", transitions_dir, "--out", tmp_path, "--text-detector", "oracle")
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["sampled"]) == 10
    truth = json.loads((transitions_dir / "truth.json").read_text())
    for i in summary["sampled"]:
        d = json.loads((tmp_path / f"f{i:04d}" / "elements.json").read_text())
        assert d["frame"] == i
        texts = sorted((tuple(e["bbox"]), e["label"]) for e in d["elements"] if e["type"] == "text")
        expect = sorted((tuple(e["bbox"]), e["label"]) for e in truth["frames"][i]["elements"] if e["type"] == "text")
        assert texts == expect
        with Image.open(tmp_path / "annotated" / f"f{i:04d}.png") as im:
            assert im.mode == "RGB" and im.size == (1136, 640)


def test_annotation_colors(tmp_path):
    from vismine.detection import FrameDetection, GuiElement
    from vismine.imaging import Raster
    frame = vislog.Frame(0, 0, Raster(np.full((20, 30), 1.0)))
    det = FrameDetection(0, [GuiElement(0, "icon", (2, 3, 5, 4), "rectangle", "horizontal", 0.03)], [])
    cli.annotate(frame, det, tmp_path / "a.png")
    arr = np.asarray(Image.open(tmp_path / "a.png"))
    assert tuple(arr[3, 2]) == cli.TYPE_COLORS["icon"] and tuple(arr[6, 6]) == cli.TYPE_COLORS["icon"]
    assert tuple(arr[4, 4]) == (255, 255, 255)


def test_detect_missing_manifest(tmp_path, capsys):
    code, _, err = run(capsys, "detect", tmp_path / "absent", "--out", tmp_path / "o")
    assert code == 2 and str(tmp_path / "absent") in err


def test_detect_requires_out(transitions_dir, capsys):
    assert run(capsys, "detect", transitions_dir)[0] == 2


def test_external_detector_failure_is_pipeline_failure(transitions_dir, tmp_path, capsys):
    script = tmp_path / "ocr.py"
    script.write_text("import sys\nsys.stderr.write('engine exploded')\nsys.exit(1)\n")
    code, _, err = run(capsys, "detect", transitions_dir, "--out", tmp_path / "o",
                       "--text-detector", f"external:{sys.executable} {script}")
    assert code == 3 and "engine exploded" in err


def test_lenient_text_policy_continues(transitions_dir, tmp_path, capsys):
    script = tmp_path / "ocr.py"
    script.write_text("import sys\nsys.exit(1)\n")
    (tmp_path / "cfg.json").write_text(json.dumps({"detector": {"text_policy": "lenient"}}))
    code, _, _ = run(capsys, "detect", transitions_dir, "--out", tmp_path / "o", "--config", tmp_path / "cfg.json",
                     "--text-detector", f"external:{sys.executable} {script}")
    assert code == 0


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("cfg", [{"bogus": 1}, {"detector": {"nope": 1}}, {"mining": {"n": 9}},
                                 {"theta": 2}, {"workers": 0}, {"tracking": {"swipe_quorum": 1}}])
def test_bad_config(transitions_dir, tmp_path, capsys, cfg):
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "detect", transitions_dir, "--out", tmp_path / "o", "--config", tmp_path / "cfg.json")
    assert code == 2 and "error" in err


def test_config_round_trip():
    cfg = cli.PipelineConfig()
    assert cli.PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_bad_arguments(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "detect", "x", "--workers", "0", "--out", "y")[0] == 2
    assert run(capsys, "--help")[0] == 0


# ---------------------------------------------------------------- analyze

def test_analyze_scenario(analyzed, scenario_dir):
    seq = json.loads(analyzed.read_text())
    truth = json.loads((scenario_dir / "truth.json").read_text())
    from vismine import tracking
    assert tracking.tokenize(tracking.InteractionSequence.from_json(seq)) == truth["tokens"] == SCENARIO
    assert seq["log"] == scenario_dir.name


def test_analyze_prints_tokens(transitions_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "analyze", transitions_dir, "--out", tmp_path)
    assert code == 0 and out.split() == ["transition"] * 9


def test_analyze_single_frame(tmp_path, capsys):
    spec = {"width": 1136, "height": 640, "elements": [{"name": "x", "type": "icon", "bbox": [10, 10, 40, 40]}]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    run(capsys, "synth", tmp_path / "s.json", "--out", tmp_path / "log")
    assert run(capsys, "analyze", tmp_path / "log", "--out", tmp_path / "o")[0] == 0
    assert json.loads((tmp_path / "o" / "interactions.json").read_text())["events"] == []


def test_analyze_without_events(scenario_noevents_dir, tmp_path, capsys):
    code, _, _ = run(capsys, "analyze", scenario_noevents_dir, "--text-detector", "oracle", "--out", tmp_path)
    assert code == 0
    events = json.loads((tmp_path / "interactions.json").read_text())["events"]
    clicks = [e for e in events if e["action"] == "click"]
    assert clicks and all(e.get("low_confidence") for e in clicks)


# ---------------------------------------------------------------- mine / generate

def _copies(analyzed, tmp_path, n):
    paths = []
    for i in range(n):
        p = tmp_path / f"run{i}.json"
        shutil.copy(analyzed, p)
        paths.append(p)
    return paths


def test_mine_ten_copies(analyzed, tmp_path, capsys):
    files = _copies(analyzed, tmp_path, 10)
    code, out, _ = run(capsys, "mine", *files, "--out", tmp_path / "m")
    assert code == 0
    stats = json.loads(out)
    assert stats["sequences"] == 10 and stats["tokens"] == 110
    pats = json.loads((tmp_path / "m" / "patterns.json").read_text())
    assert pats[0]["tokens"] == SCENARIO and pats[0]["support"] == 10
    assert (tmp_path / "m" / "model.json").is_file()


def test_mine_one_file(analyzed, tmp_path, capsys):
    assert run(capsys, "mine", analyzed, "--out", tmp_path / "m")[0] == 0
    assert json.loads((tmp_path / "m" / "patterns.json").read_text()) == []


def test_mine_malformed_file(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run(capsys, "mine", tmp_path / "bad.json", "--out", tmp_path / "m")
    assert code == 2 and "bad.json" in err


def test_mine_empty_corpus(tmp_path, capsys):
    (tmp_path / "e.json").write_text(json.dumps({"log": "x", "events": []}))
    assert run(capsys, "mine", tmp_path / "e.json", "--out", tmp_path / "m")[0] == 2


def test_mine_flag_overrides(analyzed, tmp_path, capsys):
    assert run(capsys, "mine", analyzed, "--n", "2", "--k", "0.5", "--out", tmp_path / "m")[0] == 0
    model = json.loads((tmp_path / "m" / "model.json").read_text())
    assert model["n"] == 2 and model["k"] == 0.5
    assert run(capsys, "mine", analyzed, "--n", "7", "--out", tmp_path / "m")[0] == 2


@pytest.fixture()
def model_file(analyzed, tmp_path, capsys):
    run(capsys, "mine", analyzed, "--out", tmp_path / "m")
    return tmp_path / "m" / "model.json"


def test_generate_greedy_verbatim(model_file, capsys):
    code, out, _ = run(capsys, "generate", model_file)
    assert code == 0 and out.split("\n")[0].split() == SCENARIO


def test_generate_sample_deterministic(model_file, capsys):
    a = run(capsys, "generate", model_file, "--mode", "sample", "--seed", "4", "--count", "5")[1]
    b = run(capsys, "generate", model_file, "--mode", "sample", "--seed", "4", "--count", "5")[1]
    assert a == b


def test_generate_count(model_file, capsys):
    code, out, _ = run(capsys, "generate", model_file, "--mode", "sample", "--count", "100", "--max-len", "6")
    lines = out.rstrip("\n").split("\n")
    assert code == 0 and len(lines) == 100
    assert all(len(line.split()) <= 6 for line in lines)


def test_generate_bad_model(tmp_path, capsys):
    (tmp_path / "m.json").write_text("nope")
    assert run(capsys, "generate", tmp_path / "m.json")[0] == 2
    assert run(capsys, "generate", tmp_path / "missing.json")[0] == 2


def test_console_script(tmp_path):
    exe = shutil.which("vislog")
    argv = [exe] if exe else [sys.executable, "-m", "vismine.cli"]
    proc = subprocess.run(argv + ["synth", "demo:nope", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and "nope" in proc.stderr
