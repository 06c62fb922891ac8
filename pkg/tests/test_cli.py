import json

import numpy as np
import pytest

from oispec.cli import main
from oispec.io import load_stack
from oispec.pipeline import STAGES, PipelineConfig, StageError, run_pipeline
from oispec.unmix import AbundanceMap


@pytest.fixture(scope="module")
def cube(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "cube"
    assert main(["simulate", "--preset", "mockup4", "--size", "32", "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def piped(cube, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    rc = main(["pipeline", "--input", str(cube), "--output", str(out), "--dictionary", "builtin:pigments"])
    assert rc == 0
    return out


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_writes_every_stage_and_report(piped):
    report = json.loads((piped / "run_report.json").read_text())
    assert report["stages"] == list(STAGES)
    assert set(report["checksums"]) == set(STAGES) == set(report["timings_s"])
    assert report["parameters"]["k"] == 2
    for stage in STAGES:
        assert (piped / stage).is_dir()
    for kind in ("min", "max", "avg", "diff"):
        assert (piped / "render" / f"{kind}.png").is_file()
    assert (piped / "register" / "transforms.json").is_file()
    amap = AbundanceMap.load(piped / "unmix")
    assert amap.weights.shape == (6, 32, 32)


def test_stage_by_stage_matches_pipeline(cube, piped, tmp_path):
    s = tmp_path
    steps = [
        ["calibrate", "--stack", str(cube), "--out", str(s / "calibrate")],
        ["register", "--stack", str(s / "calibrate"), "--out", str(s / "register")],
        ["normals", "--stack", str(s / "register"), "--out", str(s / "normals")],
        ["flatten", "--stack", str(s / "register"), "--normals", str(s / "normals" / "normals.bin"),
         "--out", str(s / "flatten")],
        ["project", "--stack", str(s / "flatten"), "--out", str(s / "project")],
        ["render", "--projections", str(s / "project"), "--normals", str(s / "normals" / "normals.bin"),
         "--out", str(s / "render")],
        ["unmix", "--stack", str(s / "project" / "min"), "--dictionary", "builtin:pigments",
         "--out", str(s / "unmix")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    for stage in STAGES:
        assert tree_bytes(s / stage) == tree_bytes(piped / stage), stage


def test_rerun_is_byte_identical_across_thread_counts(cube, piped, tmp_path):
    assert main(["pipeline", "--input", str(cube), "--output", str(tmp_path / "a"),
                 "--dictionary", "builtin:pigments", "--threads", "1"]) == 0
    first = json.loads((piped / "run_report.json").read_text())
    again = json.loads((tmp_path / "a" / "run_report.json").read_text())
    assert first["checksums"] == again["checksums"]
    for stage in STAGES:
        assert tree_bytes(tmp_path / "a" / stage) == tree_bytes(piped / stage)


def test_config_file_with_overrides(cube, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(cube), "output": str(tmp_path / "o"),
                               "dictionary": "builtin:pigments", "k": 1}))
    assert main(["pipeline", "--config", str(cfg), "-k", "2", "--norm", "sum"]) == 0
    params = json.loads((tmp_path / "o" / "run_report.json").read_text())["parameters"]
    assert params["k"] == 2 and params["norm"] == "sum"


def test_missing_dictionary_fails_before_any_output(cube, tmp_path):
    out = tmp_path / "o"
    assert main(["pipeline", "--input", str(cube), "--output", str(out)]) == 2
    assert not out.exists()
    assert main(["pipeline", "--input", str(cube), "--output", str(out),
                 "--dictionary", str(tmp_path / "none.csv")]) == 2
    assert not out.exists()


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"k": 0}, {"norm": "l1"}, {"rank": 0}])
def test_invalid_config_exits_2(cube, tmp_path, doc):
    base = {"input": str(cube), "output": str(tmp_path / "o"), "dictionary": "builtin:pigments"}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**base, **doc}))
    assert main(["pipeline", "--config", str(cfg)]) == 2
    assert not (tmp_path / "o").exists()


def test_stage_failure_is_reported_and_non_destructive(cube, tmp_path):
    out = tmp_path / "o"
    cfg = PipelineConfig(input=str(cube), output=str(out), dictionary="builtin:pigments")
    run_pipeline(cfg)
    before = tree_bytes(out / "register")
    marks = tmp_path / "marks.json"
    marks.write_text("{}")  # no landmarks for any azimuth: registration cannot proceed
    bad = PipelineConfig(input=str(cube), output=str(out), dictionary="builtin:pigments",
                         register_mode="landmarks", landmarks=str(marks))
    with pytest.raises(StageError) as err:
        run_pipeline(bad)
    assert err.value.stage == "register"
    assert tree_bytes(out / "register") == before
    assert not (out / "register.partial").exists()
    assert main(["pipeline", "--input", str(cube), "--output", str(out), "--dictionary", "builtin:pigments",
                 "--register-mode", "landmarks", "--landmarks", str(marks)]) == 3


def test_invalid_inputs_exit_2(tmp_path, cube):
    assert main(["calibrate", "--stack", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--preset", "nope", "--out", str(tmp_path / "s")]) == 2
    assert main(["simulate", "--out", str(tmp_path / "s")]) == 2
    assert main(["render", "--stack", str(cube), "--angle", "10", "--out", str(tmp_path / "r.png")]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_render_and_spectra_commands(piped, tmp_path):
    png = tmp_path / "view.png"
    assert main(["render", "--stack", str(piped / "register"), "--angle", "108", "--out", str(png)]) == 0
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    csv = tmp_path / "spec.csv"
    assert main(["spectra", "--stack", str(piped / "project" / "min"), "--region", "4,2,12,6",
                 "--out", str(csv)]) == 0
    rows = csv.read_text().splitlines()
    assert len(rows) == 116
    stack = load_stack(piped / "project" / "min")
    first = [float(v) for v in rows[1].split(",")]
    assert first[0] == 430.0
    block, ok = stack.values[0, 0, 2:6, 4:12], stack.valid[0, 0, 2:6, 4:12]
    assert first[1] == pytest.approx(float(block[ok].mean()), rel=1e-5)
    assert main(["spectra", "--stack", str(piped / "project" / "min"), "--region", "4,2", "--out", str(csv)]) == 2
    assert main(["render", "--stack", str(piped / "register"), "--angle", "100", "--out", str(png)]) == 2


def test_declared_flag_forms(piped, tmp_path):
    """Single-file normals, one projection kind into --out, x,y centres and --dict/--k."""
    nb = tmp_path / "n" / "normals.bin"
    assert main(["normals", "--stack", str(piped / "register"), "--out", str(nb)]) == 0
    assert nb.is_file() and nb.with_suffix(".png").is_file()
    assert nb.read_bytes() == (piped / "normals" / "normals.bin").read_bytes()
    assert main(["project", "--stack", str(piped / "flatten"), "--kind", "min", "--out", str(tmp_path / "mn")]) == 0
    assert (tmp_path / "mn" / "manifest.json").is_file()
    assert main(["unmix", "--stack", str(tmp_path / "mn"), "--dict", "builtin:pigments", "--k", "2",
                 "--out", str(tmp_path / "ab")]) == 0
    assert (tmp_path / "ab" / "abundances.json").read_bytes() == (piped / "unmix" / "abundances.json").read_bytes()
    assert main(["register", "--stack", str(piped / "calibrate"), "--center", "15.5,15.5",
                 "--out", str(tmp_path / "rg")]) == 0
    with pytest.raises(SystemExit):
        main(["register", "--stack", str(piped / "calibrate"), "--center", "15.5", "--out", str(tmp_path / "rg2")])
    png = tmp_path / "min.png"
    assert main(["render", "--stack", str(piped / "flatten"), "--angle", "min", "--out", str(png)]) == 0
    mask = tmp_path / "mask.png"
    from oispec.io import save_png
    m = np.zeros((32, 32))
    m[2:6, 4:12] = 1
    save_png(mask, m)
    assert main(["spectra", "--stack", str(piped / "project" / "min"), "--region", str(mask),
                 "--out", str(tmp_path / "m.csv")]) == 0
    box = tmp_path / "box.csv"
    assert main(["spectra", "--stack", str(piped / "project" / "min"), "--region", "4,2,12,6", "--out", str(box)]) == 0
    assert (tmp_path / "m.csv").read_text() == box.read_text()
