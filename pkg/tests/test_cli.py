import csv
import io
import json

import numpy as np
import pytest

from conftest import TEST_DATA_SPEC
from gse.cli import main
from gse.harness import select_best_cell
from gse.metrics import MetricReport


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _attack(model_file, *extra):
    return ["attack", "--model", model_file, "--data", TEST_DATA_SPEC, "--preset", "toy",
            "--no-timing", "--iters", "80", *extra]


def test_count_zero_gives_header_only(capsys, model_file):
    code, out = _run(capsys, *_attack(model_file, "--count", "0"))
    assert code == 0
    assert out.out.strip().split(",")[0] == "attack"
    assert len(out.out.strip().splitlines()) == 1


def test_untargeted_summary_matches_rows(capsys, model_file, tmp_path):
    out_csv = tmp_path / "u.csv"
    code, _ = _run(capsys, *_attack(model_file, "--count", "4", "--out", str(out_csv)))
    assert code == 0
    rows = _rows(out_csv.read_text())
    images = [r for r in rows if r["case"].startswith("image=")]
    (summary,) = [r for r in rows if r["case"] == "all"]
    assert len(images) == 4
    ok = [r for r in images if r["asr"] == "1"]
    assert float(summary["asr"]) == pytest.approx(len(ok) / 4)
    for col in ("acp_count", "anc", "d20"):
        assert float(summary[col]) == pytest.approx(np.mean([float(r[col]) for r in ok]), rel=1e-5)
    manifest = json.loads((tmp_path / "u.csv.manifest.json").read_text())
    assert manifest["command"] == "attack" and len(manifest["images"]) == 4
    assert manifest["config"]["q"] == 0.25


def test_targeted_has_three_summaries(capsys, model_file):
    code, out = _run(capsys, *_attack(model_file, "--count", "2", "--mode", "targeted"))
    assert code == 0
    rows = _rows(out.out)
    assert [r["case"] for r in rows[-3:]] == ["best", "average", "worst"]
    assert sum(r["case"].startswith("image=") for r in rows) == 2 * 2
    best, avg, worst = (float(r["asr"]) for r in rows[-3:])
    assert best >= avg >= worst


def test_replay_reproduces(capsys, model_file, tmp_path):
    first = tmp_path / "a.csv"
    _run(capsys, *_attack(model_file, "--count", "3", "--out", str(first)))
    second = tmp_path / "b.csv"
    code, _ = _run(capsys, "replay", str(first) + ".manifest.json", "--out", str(second))
    assert code == 0
    assert first.read_bytes() == second.read_bytes()


def test_khat_at_least_iters_rejected(capsys, model_file):
    code, out = _run(capsys, *_attack(model_file, "--count", "1", "--khat", "80"))
    assert code == 2 and "khat" in out.err
    code, out = _run(capsys, "ablate-khat", "--model", model_file, "--data", TEST_DATA_SPEC,
                     "--iters", "50", "--khat-grid", "5,50")
    assert code == 2


def test_ablate_single_value_equals_attack(capsys, model_file):
    _, out = _run(capsys, *_attack(model_file, "--count", "3", "--khat", "20"))
    attack_summary = _rows(out.out)[-1]
    argv = _attack(model_file, "--count", "3", "--khat-grid", "20")
    argv[0] = "ablate-khat"
    code, out = _run(capsys, *argv)
    assert code == 0
    (row,) = _rows(out.out)
    assert row["case"] == "khat=20"
    for col in ("asr", "acp_count", "anc", "d20", "l2"):
        assert row[col] == attack_summary[col]


def test_gridsearch_single_cell(capsys, model_file):
    argv = _attack(model_file, "--count", "3", "--grid-q", "0.25", "--grid-sigma", "1.0",
                   "--grid-mu", "0.01", "--grid-khat", "30")
    argv[0] = "gridsearch"
    code, out = _run(capsys, *argv)
    rows = _rows(out.out)
    assert len(rows) == 1
    if rows[0]["asr"] == "1":
        assert code == 0
        assert json.loads(out.err.strip().splitlines()[-1]) == {
            "q": 0.25, "sigma": 1.0, "mu": 0.01, "khat": 30}
    else:
        assert code == 3


def test_gridsearch_recompute(capsys, model_file):
    argv = _attack(model_file, "--count", "2", "--grid-q", "0.25,0.9", "--grid-sigma", "0.5,1.0",
                   "--grid-mu", "0.01", "--grid-khat", "30")
    argv[0] = "gridsearch"
    code, out = _run(capsys, *argv)
    rows = _rows(out.out)
    assert len(rows) == 4
    ok = [r for r in rows if r["asr"] == "1"]
    if not ok:
        assert code == 3
        return
    best = min(ok, key=lambda r: float(r["objective"]))
    winner = json.loads(out.err.strip().splitlines()[-1])
    assert float(best["q"]) == winner["q"] and float(best["sigma"]) == winner["sigma"]


def _cell(asr, acp_count, anc_):
    return MetricReport(asr=asr, acp_count=acp_count, anc=anc_)


def test_select_best_cell_rules():
    with pytest.raises(ValueError):
        select_best_cell([])
    assert select_best_cell([("a", _cell(0.9, 1, 1))]) is None
    # a cheaper cell that misses full success never wins
    cells = [("cheap", _cell(0.98, 1, 1)), ("ok", _cell(1.0, 30, 2)), ("tie", _cell(1.0, 31, 1))]
    assert select_best_cell(cells)[0] == "ok"
    grid = [((i, j), _cell(1.0, 10 * i + j, 1)) for i in range(3) for j in range(3)]
    assert select_best_cell(grid)[0] == (0, 0)


def test_synth_and_train_commands(capsys, tmp_path):
    data = tmp_path / "d"
    code, _ = _run(capsys, "synth", "--classes", "2", "--per-class", "10", "--shape", "8,8,1",
                   "--seed", "3", "--out", str(data))
    assert code == 0
    model = tmp_path / "m.gsem"
    code, out = _run(capsys, "train", "--data", str(data), "--arch", "linear", "--epochs", "3",
                     "--out", str(model))
    assert code == 0 and out.out.startswith("train accuracy")
    code, out = _run(capsys, "attack", "--model", str(model), "--data", str(data), "--count", "2",
                     "--preset", "toy", "--iters", "40", "--no-timing")
    assert code == 0


def test_bad_data_is_a_clean_error(capsys, model_file, tmp_path):
    code, out = _run(capsys, "attack", "--model", model_file, "--data", str(tmp_path / "none.bin"))
    assert code == 2 and out.err.startswith("gse: error")
