import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lineocr import cli, dbpost, imaging
from lineocr.nn import CONV_BLOCK, load_checkpoint

TINY = """\
alphabet_size = 10
width_div = 8
stage_steps = 3, 3
batch_size = 2
eval_words = 1, 2
eval_modes = none, salt
eval_count = 3
"""


def write_cfg(tmp_path, text=TINY, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def data_files(root):
    # the run manifest records wall-clock times, everything else is content
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file() and p.name != "run_manifest.json"}


def test_gen_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    for d in ("a", "b"):
        assert cli.main(["gen", "--config", cfg, "--out", str(tmp_path / d),
                         "--split", "train,test", "--count", "20"]) == 0
    a, b = data_files(tmp_path / "a"), data_files(tmp_path / "b")
    assert a == b and "train/000019.pgm" in a
    manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert "train/manifest.jsonl" in manifest["files"] and manifest["command"] == "gen"


def test_gen_rows_and_split_disjointness(tmp_path):
    out = tmp_path / "d"
    assert cli.main(["gen", "--out", str(out), "--split", "train,test", "--count", "100"]) == 0
    rows = {s: [json.loads(x) for x in (out / s / "manifest.jsonl").read_text().splitlines()]
            for s in ("train", "test")}
    assert len(rows["train"]) == 100 and all(r["words"] == 1 for r in rows["train"])
    assert not {r["transcript"] for r in rows["train"]} & {r["transcript"] for r in rows["test"]}
    info = json.loads((out / "train" / "dataset.json").read_text())
    assert info["count"] == 100 and len(info["alphabet"]) == 10
    img = imaging.read_pgm(out / "train" / rows["train"][0]["image"])
    assert img.shape[0] == 32


def test_gen_eval_grid(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "e"
    assert cli.main(["gen", "--config", cfg, "--out", str(out), "--split", "eval"]) == 0
    rows = [json.loads(x) for x in (out / "eval" / "manifest.jsonl").read_text().splitlines()]
    cells = [(r["words"], r["augment"]) for r in rows]
    assert cells == [(1, "none")] * 3 + [(1, "salt")] * 3 + [(2, "none")] * 3 + [(2, "salt")] * 3


def test_gen_refuses_non_empty_dir(tmp_path):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert cli.main(["gen", "--out", str(out), "--count", "2"]) == cli.EXIT_USAGE
    assert not (out / ".lock").exists()
    assert cli.main(["gen", "--out", str(out), "--count", "2", "--force"]) == 0


def test_bad_arguments_are_usage_errors(tmp_path):
    assert cli.main(["gen", "--out", str(tmp_path / "x"), "--split", "dev"]) == cli.EXIT_USAGE
    assert cli.main(["gen", "--out", str(tmp_path / "x"), "--count", "0"]) == cli.EXIT_USAGE
    assert cli.main(["nope"]) == cli.EXIT_USAGE
    assert cli.main(["gradcheck", "--scope", "nothing"]) == cli.EXIT_USAGE


@pytest.mark.parametrize("text,needle", [
    ("width_div = 3\n", "width_div"),
    ("colour = red\n", "colour"),
    ("lr = 0\n", "lr"),
    ("lr = 1\nlr = 2\n", "lr"),
    ("# header\njust words\n", "run.cfg:2:"),
])
def test_config_errors(tmp_path, capsys, text, needle):
    cfg = write_cfg(tmp_path, text)
    assert cli.main(["gen", "--config", cfg, "--out", str(tmp_path / "x")]) == cli.EXIT_USAGE
    assert needle in capsys.readouterr().err


def test_output_root_override(tmp_path, monkeypatch):
    monkeypatch.setenv("LINEOCR_OUT", str(tmp_path / "root"))
    assert cli.main(["gen", "--out", "rel", "--count", "2"]) == 0
    assert (tmp_path / "root" / "rel" / "train" / "000001.pgm").exists()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg = write_cfg(root)
    assert cli.main(["train", "--config", cfg, "--out", str(root / "full")]) == 0
    return root, cfg


def test_train_outputs_and_determinism(trained, tmp_path):
    root, cfg = trained
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    a, b = data_files(root / "full"), data_files(tmp_path / "again")
    assert a == b
    assert {"loss_stage0.csv", "loss_stage1.csv", "stage0.ckpt", "stage1.ckpt"} <= set(a)
    curve = a["loss_stage0.csv"].decode().splitlines()
    assert curve[0] == "step,loss" and len(curve) == 4
    ck0, ck1 = load_checkpoint(root / "full" / "stage0.ckpt"), load_checkpoint(root / "full" / "stage1.ckpt")
    assert ck0.stage == 0 and ck0.frozen == []
    assert ck1.stage == 1 and set(CONV_BLOCK) <= set(ck1.frozen)


def test_train_resume_matches_uninterrupted_run(trained, tmp_path):
    root, cfg = trained
    one = write_cfg(tmp_path, TINY.replace("stage_steps = 3, 3", "stage_steps = 3"), "one.cfg")
    assert cli.main(["train", "--config", one, "--out", str(tmp_path / "s0")]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "s1"),
                     "--resume", str(tmp_path / "s0" / "stage0.ckpt")]) == 0
    full = data_files(root / "full")
    resumed = data_files(tmp_path / "s1")
    assert resumed["stage1.ckpt"] == full["stage1.ckpt"]
    assert resumed["loss_stage1.csv"] == full["loss_stage1.csv"]
    # nothing left to do after the final stage
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "s2"),
                     "--resume", str(root / "full" / "stage1.ckpt")]) == cli.EXIT_USAGE


def test_train_resume_rejects_other_alphabet(trained, tmp_path):
    root, _ = trained
    other = write_cfg(tmp_path, TINY.replace("alphabet_size = 10", "alphabet_size = 12"), "o.cfg")
    assert cli.main(["train", "--config", other, "--out", str(tmp_path / "x"),
                     "--resume", str(root / "full" / "stage0.ckpt")]) == cli.EXIT_DATA


def test_eval_outputs(trained, tmp_path):
    root, cfg = trained
    assert cli.main(["gen", "--config", cfg, "--out", str(tmp_path / "data"), "--split", "eval"]) == 0
    ck = str(root / "full" / "stage1.ckpt")
    out = tmp_path / "ev"
    assert cli.main(["eval", "--config", cfg, "--out", str(out), "--checkpoint", ck,
                     "--dataset", str(tmp_path / "data" / "eval"), "--decoder", "beam",
                     "--beam-width", "3"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["decoder"] == "beam" and "greedy_crr" in rep["metadata"]
    assert len(rep["buckets"]) == 4 and 0.0 <= rep["crr"] <= 100.0
    assert (out / "report.csv").read_text().startswith("#,Num of Words,Solid CRR")
    assert (out / "crr_vs_words.svg").read_text().lstrip().startswith("<svg")
    assert len((out / "transcripts.jsonl").read_text().splitlines()) == 12
    assert cli.main(["report", "--out", str(tmp_path / "rep"), "--eval", str(out)]) == 0
    assert "Solid" in (tmp_path / "rep" / "summary.md").read_text()


def test_eval_data_errors(trained, tmp_path):
    root, cfg = trained
    ck = str(root / "full" / "stage1.ckpt")
    other = write_cfg(tmp_path, "alphabet_size = 12\n", "o.cfg")
    assert cli.main(["gen", "--config", other, "--out", str(tmp_path / "d12"), "--count", "2"]) == 0
    assert cli.main(["eval", "--out", str(tmp_path / "x"), "--checkpoint", ck,
                     "--dataset", str(tmp_path / "d12" / "train")]) == cli.EXIT_DATA
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "dataset.json").write_text(json.dumps({"alphabet": "".join(load_checkpoint(ck).meta["alphabet"])}))
    (empty / "manifest.jsonl").write_text("")
    assert cli.main(["eval", "--out", str(tmp_path / "y"), "--checkpoint", ck,
                     "--dataset", str(empty)]) == cli.EXIT_DATA
    assert not (tmp_path / "y" / "report.json").exists()
    assert cli.main(["eval", "--out", str(tmp_path / "z"), "--checkpoint", str(tmp_path / "no.ckpt"),
                     "--dataset", str(empty)]) == cli.EXIT_DATA


def _rect_map():
    m = np.zeros((30, 60))
    m[10:18, 15:45] = 1.0
    return m


def test_detect_post_and_eval(tmp_path):
    np.save(tmp_path / "p.npy", _rect_map())
    assert cli.main(["detect-post", "--out", str(tmp_path / "dp"), "--prob", str(tmp_path / "p.npy")]) == 0
    polys = dbpost.read_polygons(tmp_path / "dp" / "polygons.jsonl")
    assert len(polys) == 1
    d = 240 * 1.5 / 76
    want = dbpost.TextPolygon([[15 - d, 10 - d], [45 + d, 10 - d], [45 + d, 18 + d], [15 - d, 18 + d]])
    dbpost.write_polygons(tmp_path / "gt.jsonl", [want])
    assert cli.main(["detect-eval", "--out", str(tmp_path / "de"), "--gt", str(tmp_path / "gt.jsonl"),
                     "--pred", str(tmp_path / "dp" / "polygons.jsonl")]) == 0
    body = json.loads((tmp_path / "de" / "detection.json").read_text())
    assert (body["precision"], body["recall"], body["f_measure"]) == (100.0, 100.0, 100.0)
    assert (tmp_path / "de" / "detection.csv").read_text().splitlines()[1] == "Ours,100.00,100.00,100.00"


def test_detect_post_pgm_blank_and_approx(tmp_path):
    imaging.write_pgm(tmp_path / "blank.pgm", np.zeros((20, 20)))
    assert cli.main(["detect-post", "--out", str(tmp_path / "b"), "--prob", str(tmp_path / "blank.pgm")]) == 0
    assert (tmp_path / "b" / "polygons.jsonl").read_text() == ""
    np.save(tmp_path / "p.npy", np.full((12, 16), 0.4))
    assert cli.main(["detect-post", "--out", str(tmp_path / "c"), "--prob", str(tmp_path / "p.npy"),
                     "--mode", "approx"]) == cli.EXIT_USAGE
    # P == T makes the soft map a constant 0.5: one component covering everything
    outs = []
    for d in ("e", "f"):
        assert cli.main(["detect-post", "--out", str(tmp_path / d), "--prob", str(tmp_path / "p.npy"),
                         "--thresh", str(tmp_path / "p.npy"), "--mode", "approx"]) == 0
        outs.append((tmp_path / d / "polygons.jsonl").read_text())
    assert outs[0] == outs[1]
    polys = dbpost.read_polygons(tmp_path / "e" / "polygons.jsonl")
    assert len(polys) == 1 and polys[0].score == 0.5
    assert polys[0].rasterize(16, 12).all()
    # the raw map at 0.4 is above bin_thresh but below the box score threshold
    assert cli.main(["detect-post", "--out", str(tmp_path / "g"), "--prob", str(tmp_path / "p.npy")]) == 0
    assert (tmp_path / "g" / "polygons.jsonl").read_text() == ""
    np.save(tmp_path / "small.npy", np.zeros((5, 5)))
    assert cli.main(["detect-post", "--out", str(tmp_path / "h"), "--prob", str(tmp_path / "p.npy"),
                     "--thresh", str(tmp_path / "small.npy"), "--mode", "approx"]) == cli.EXIT_DATA


def test_detect_eval_threshold_and_bad_rows(tmp_path):
    r = [[0, 0], [20, 0], [20, 10], [0, 10]]
    s = [[1, 0], [21, 0], [21, 10], [1, 10]]
    dbpost.write_polygons(tmp_path / "gt.jsonl", [dbpost.TextPolygon(r)])
    dbpost.write_polygons(tmp_path / "pr.jsonl", [dbpost.TextPolygon(s)])
    assert cli.main(["detect-eval", "--out", str(tmp_path / "a"), "--gt", str(tmp_path / "gt.jsonl"),
                     "--pred", str(tmp_path / "pr.jsonl"), "--iou", "0.99"]) == 0
    body = json.loads((tmp_path / "a" / "detection.json").read_text())
    assert (body["precision"], body["recall"], body["f_measure"]) == (0.0, 0.0, 0.0)
    (tmp_path / "bad.jsonl").write_text('{"points": [[0, 0], [1, 0], [1, 1]]}\nnot json\n')
    assert cli.main(["detect-eval", "--out", str(tmp_path / "b"), "--gt", str(tmp_path / "bad.jsonl"),
                     "--pred", str(tmp_path / "pr.jsonl")]) == cli.EXIT_DATA
    assert cli.main(["detect-eval", "--out", str(tmp_path / "c"), "--gt", str(tmp_path / "gt.jsonl"),
                     "--pred", str(tmp_path / "pr.jsonl"), "--iou", "1.5"]) == cli.EXIT_USAGE


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--scope", "conv", "--seed", "1"]) == 0
    first = capsys.readouterr().out
    assert "conv" in first
    assert cli.main(["gradcheck", "--scope", "conv", "--seed", "1"]) == 0
    assert capsys.readouterr().out == first


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lineocr.cli", "config"], capture_output=True, text=True)
    assert proc.returncode == 0 and "width_div = 1" in proc.stdout
    (tmp_path / "c.cfg").write_text(proc.stdout)
    assert cli.main(["gen", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "o"),
                     "--count", "1"]) == 0
