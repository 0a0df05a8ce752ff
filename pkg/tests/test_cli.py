import json
import subprocess
import sys

import numpy as np
import pytest

from tsdmfb import cli, synth

from helpers import three_class_spec

CFG = {"schema_version": 1, "n_starts": 3, "j_range": [1, 2], "new_class_j_range": [1, 2]}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    spec = three_class_spec(seed=8, size=150, novelty_rate=0.1)
    (d / "train_spec.json").write_text(synth.SynthSpec(spec.classes, None, 1).to_json())
    (d / "novel_spec.json").write_text(spec.to_json())
    (d / "cfg.json").write_text(json.dumps(CFG))
    assert run("simulate", d / "train_spec.json", "--labeled", "--out", d / "tr") == 0
    assert run("simulate", d / "novel_spec.json", "--seed", 2, "--out", d / "un") == 0
    assert run("fit-tsdm", d / "tr/data.csv", "--config", d / "cfg.json", "--out", d / "m") == 0
    assert run("fit-fb", d / "m/tsdm.json", d / "un/data.csv", "--config", d / "cfg.json", "--out", d / "f") == 0
    assert run("classify", d / "f/fb.json", d / "un/data.csv", "--out", d / "c", "--svg") == 0
    assert run("evaluate", d / "c/assignments.csv", d / "un/hidden.csv", "--out", d / "e", "--svg") == 0
    return d


def test_artifacts(pipeline):
    d = pipeline
    for f in ["m/tsdm.json", "m/bic_table.csv", "f/fb.json", "f/fb_report.json", "c/assignments.csv",
              "c/signatures.csv", "c/signatures.svg", "e/confusion.csv", "e/metrics.json", "e/confusion.svg",
              "un/hidden.csv", "un/spec.json"]:
        assert (d / f).exists(), f
    model = json.loads((d / "m/tsdm.json").read_text())
    assert model["schema_version"] == 1 and len(model["classes"]) == 3
    header = (d / "un/data.csv").read_text().splitlines()[0]
    assert header == "id,y1,y2,y3,y4"  # labels stay in hidden.csv
    bic = (d / "m/bic_table.csv").read_text().splitlines()
    assert bic[0] == "class,J,bic,selected" and len(bic) == 1 + 3 * 2


def test_metrics_match_hidden_truth(pipeline):
    met = json.loads((pipeline / "e/metrics.json").read_text())
    assert met["schema_version"] == 1
    assert met["overall_accuracy"] >= 0.95
    assert met["new_class_sensitivity"] >= 0.9


def test_background_bytes_preserved(pipeline):
    fbdoc = json.loads((pipeline / "f/fb.json").read_text())
    assert json.dumps(fbdoc["background"], indent=1) + "\n" == (pipeline / "m/tsdm.json").read_text()


def test_full_determinism(pipeline, tmp_path):
    d = pipeline
    assert run("fit-tsdm", d / "tr/data.csv", "--config", d / "cfg.json", "--out", tmp_path / "m", "--workers", 4) == 0
    assert (tmp_path / "m/tsdm.json").read_bytes() == (d / "m/tsdm.json").read_bytes()
    assert run("fit-fb", d / "m/tsdm.json", d / "un/data.csv", "--config", d / "cfg.json", "--out", tmp_path / "f") == 0
    assert (tmp_path / "f/fb.json").read_bytes() == (d / "f/fb.json").read_bytes()
    assert run("classify", d / "f/fb.json", d / "un/data.csv", "--out", tmp_path / "c", "--svg") == 0
    assert (tmp_path / "c/assignments.csv").read_bytes() == (d / "c/assignments.csv").read_bytes()
    assert (tmp_path / "c/signatures.svg").read_bytes() == (d / "c/signatures.svg").read_bytes()
    assert run("simulate", d / "novel_spec.json", "--seed", 2, "--out", tmp_path / "un") == 0
    assert (tmp_path / "un/data.csv").read_bytes() == (d / "un/data.csv").read_bytes()


def test_model_files_round_trip(pipeline):
    from tsdmfb import fb, tsdm

    for name, cls in (("m/tsdm.json", tsdm.TSDMModel), ("f/fb.json", fb.FBModel)):
        text = (pipeline / name).read_text()
        assert cls.from_json(text).to_json() + "\n" == text


def test_evaluate_perfect(tmp_path):
    (tmp_path / "a.csv").write_text("id,predicted,is_new,posterior_background,p_a,p_b\n1,a,0,1,1,0\n2,NEW,1,0,1,0\n3,b,0,1,0,1\n")
    (tmp_path / "t.csv").write_text("id,label\n1,a\n2,NEW\n3,b\n")
    assert run("evaluate", tmp_path / "a.csv", tmp_path / "t.csv", "--out", tmp_path / "e") == 0
    met = json.loads((tmp_path / "e/metrics.json").read_text())
    assert met["overall_accuracy"] == met["new_class_sensitivity"] == met["new_class_specificity"] == 1.0
    (tmp_path / "t2.csv").write_text("id,label\n1,zzz\n2,NEW\n3,b\n")
    assert run("evaluate", tmp_path / "a.csv", tmp_path / "t2.csv", "--out", tmp_path / "e") == 2


def test_transform_round_trip(tmp_path, rng):
    raw = rng.normal(size=(30, 3))
    lines = ["id,a,label,b,c"] + [f"r{i},{float(raw[i, 0])!r},x,{float(raw[i, 1])!r},{float(raw[i, 2])!r}" for i in range(30)]
    (tmp_path / "raw.csv").write_text("\n".join(lines) + "\n")
    assert run("transform", tmp_path / "raw.csv", "--out", tmp_path / "t") == 0
    assert run("transform", tmp_path / "raw.csv", "--transform", tmp_path / "t/transform.json", "--out", tmp_path / "t2") == 0
    assert (tmp_path / "t/simplex.csv").read_bytes() == (tmp_path / "t2/simplex.csv").read_bytes()
    out = np.loadtxt(tmp_path / "t/simplex.csv", delimiter=",", skiprows=1, usecols=(2, 3, 4, 5))
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    # extrapolation rows
    (tmp_path / "new.csv").write_text("id,a,b,c\nx,100,-100,0.5\n")
    assert run("transform", tmp_path / "new.csv", "--transform", tmp_path / "t/transform.json", "--out", tmp_path / "t3") == 0
    # missing attribute column
    assert run("transform", tmp_path / "raw.csv", "--attributes", "a,zz", "--out", tmp_path / "t4") == 2


def test_toy_four_rows(tmp_path):
    (tmp_path / "raw.csv").write_text("id,a,b\n1,1,10\n2,2,30\n3,3,20\n4,4,40\n")
    with pytest.warns(UserWarning):
        assert run("transform", tmp_path / "raw.csv", "--out", tmp_path / "t") == 0
    out = np.loadtxt(tmp_path / "t/simplex.csv", delimiter=",", skiprows=1)[:, 1:]
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_exit_codes(tmp_path, pipeline):
    d = pipeline
    assert run("fit-fb", tmp_path / "missing.json", d / "un/data.csv", "--out", tmp_path / "x") == 4
    (tmp_path / "bad.json").write_text('{"nope": 1}')
    assert run("fit-tsdm", d / "tr/data.csv", "--config", tmp_path / "bad.json", "--out", tmp_path / "x") == 2
    (tmp_path / "bad2.json").write_text("{not json")
    assert run("fit-tsdm", d / "tr/data.csv", "--config", tmp_path / "bad2.json", "--out", tmp_path / "x") == 2
    # unlabeled input to fit-tsdm
    assert run("fit-tsdm", d / "un/data.csv", "--out", tmp_path / "x") == 2
    # class below n_min
    (tmp_path / "small.csv").write_text("id,label,y1,y2\n1,a,0.2,0.8\n2,a,0.3,0.7\n3,a,0.4,0.6\n4,b,0.5,0.5\n")
    assert run("fit-tsdm", tmp_path / "small.csv", "--out", tmp_path / "x") == 2
    # every candidate J fails on a class whose points coincide
    (tmp_path / "same.csv").write_text("id,label,y1,y2\n" + "".join(f"{i},a,0.25,0.75\n" for i in range(6)))
    assert run("fit-tsdm", tmp_path / "same.csv", "--out", tmp_path / "x") == 3
    assert run("fit-tsdm", d / "tr/data.csv", "--workers", 0, "--out", tmp_path / "x") == 2


def test_split_is_seeded_and_reported(pipeline, tmp_path):
    d = pipeline
    cfg = dict(CFG, split_fraction=0.7)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("fit-tsdm", d / "tr/data.csv", "--config", tmp_path / "cfg.json", "--out", tmp_path / "m") == 0
    rows = (tmp_path / "m/split.csv").read_text().splitlines()[1:]
    frac = sum(r.endswith("train") for r in rows) / len(rows)
    assert abs(frac - 0.7) < 0.01


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "tsdmfb.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("transform", "fit-tsdm", "fit-fb", "classify", "evaluate", "simulate"):
        assert cmd in out.stdout
