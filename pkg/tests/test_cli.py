import csv
import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from quanvision import __version__
from quanvision.cli import build_parser, main
from quanvision.imaging import RegionPrediction, read_sidecar, write_sidecar
from quanvision.quanv import deserialize_tensor

GOLDEN = Path(__file__).parent / "golden"
SUBCOMMANDS = ("synth", "quanvolve", "train", "evaluate", "stage1", "stage2", "split", "stitch")

TINY = """\
stage = 1
output_dir = "out"
cache_dir = "cache"
seeds = [0]
[data]
train_counts = [12, 6]
test_count = 10
[synthetic]
seed = 5
[train]
epochs = 2
"""


def _help(argv):
    parser = build_parser()
    with pytest.raises(SystemExit) as exc:
        parser.parse_args(argv + ["--help"])
    assert exc.value.code == 0


@pytest.fixture
def tiny(tmp_path, monkeypatch):
    monkeypatch.delenv("QUANVISION_CACHE_DIR", raising=False)
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


@pytest.mark.parametrize("command", ("",) + SUBCOMMANDS)
def test_help_matches_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    _help([command] if command else [])
    text = capsys.readouterr().out
    golden = GOLDEN / f"help_{command or 'main'}.txt"
    if os.environ.get("QUANVISION_REGEN_GOLDEN"):
        golden.parent.mkdir(exist_ok=True)
        golden.write_text(text)
    assert text == golden.read_text()


def test_help_lists_every_flag(capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        _help([name])
        text = capsys.readouterr().out
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == f"quanvision {__version__}"


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["stage1", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "error" in capsys.readouterr().err


def test_malformed_config_exits_2(tmp_path):
    (tmp_path / "bad.toml").write_text("stage = 1\n[data]\ntrain_count = 5\n")
    assert main(["stage1", "--config", str(tmp_path / "bad.toml")]) == 2


def test_conflicting_flags_rejected(tiny):
    with pytest.raises(SystemExit) as exc:
        main(["stage1", "--config", str(tiny), "--seed", "1", "--seeds", "1", "2"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["stage1", "--bogus"])
    assert exc.value.code == 2


def test_stage_flags_checked(tiny):
    assert main(["train", "--config", str(tiny), "--split", "0.5"]) == 2
    with pytest.raises(SystemExit):
        main(["stage1", "--config", str(tiny), "--split", "0.5"])
    assert main(["stage2", "--config", str(tiny)]) == 2


def test_stage1_train_count_override(tiny, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["stage1", "--config", str(tiny), "--train-count", "8", "--epochs", "1", "--output-dir", str(out)])
    assert code == 0
    with (out / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["train_count"] for r in rows} == {"8"}
    assert {r["setting"] for r in rows} == {"n8"}
    assert (out / "curves.png").stat().st_size > 0
    assert "summary:" in capsys.readouterr().out
    assert (tmp_path / "cache").is_dir()  # cache dir from the file, relative to it


def test_cache_flag_beats_env_and_file(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("QUANVISION_CACHE_DIR", str(tmp_path / "env"))
    argv = ["stage1", "--config", str(tiny), "--train-count", "4", "--epochs", "1", "--output-dir", str(tmp_path / "o")]
    assert main(argv + ["--cache-dir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag").is_dir() and not (tmp_path / "env").exists()
    assert main(argv) == 0
    assert (tmp_path / "env").is_dir() and not (tmp_path / "cache").exists()


def test_train_then_evaluate(tiny, tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["train", "--config", str(tiny), "--model", "cnn", "--setting", "n6", "--output-dir", str(out)]) == 0
    checkpoint = Path(capsys.readouterr().out.strip())
    assert checkpoint.exists() and checkpoint.name == "cnn-n6-seed0.qnnm"
    assert main(["evaluate", "--config", str(tiny), str(checkpoint), "--output-dir", str(out)]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["model", "setting", "test_count", "test_loss", "test_acc"]
    assert rows[1][:3] == ["cnn", "n12", "10"]
    assert 0.0 <= float(rows[1][4]) <= 1.0


def test_unknown_setting(tiny, tmp_path):
    assert main(["train", "--config", str(tiny), "--setting", "n99", "--output-dir", str(tmp_path)]) == 2


def test_synth_then_quanvolve(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["synth", "--count", "4", "--output-dir", str(corpus), "--seed", "2"]) == 0
    files = sorted((corpus / "positive").glob("*.png")) + sorted((corpus / "negative").glob("*.png"))
    assert len(files) == 4
    out = tmp_path / "tensors"
    args = ["quanvolve", str(corpus / "positive"), "--output-dir", str(out), "--cache-dir", str(tmp_path / "c")]
    assert main(args) == 0
    tensors = sorted(out.glob("*.qtns"))
    assert len(tensors) == len(list((corpus / "positive").glob("*.png")))
    assert deserialize_tensor(tensors[0]).values.shape == (16, 16, 4)
    assert main(["quanvolve", str(tmp_path / "absent"), "--output-dir", str(out)]) == 2


def test_split_and_stitch(tmp_path, capsys):
    image = np.random.default_rng(0).integers(0, 256, (40, 50), dtype=np.uint8)
    mask = np.zeros((40, 50), np.uint8)
    mask[:5, :6] = 255
    Image.fromarray(image).save(tmp_path / "img.png")
    Image.fromarray(mask).save(tmp_path / "mask.png")
    out = tmp_path / "regions"
    assert main(["split", str(tmp_path / "img.png"), "--mask", str(tmp_path / "mask.png"), "--output-dir", str(out)]) == 0
    with (out / "regions.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 81 and len(list(out.glob("r*c*.png"))) == 81
    assert rows[0]["label"] == "1" and rows[-1]["label"] == "0"

    records = [RegionPrediction(r, c, int(r == c), 0.9) for r in range(9) for c in range(9)]
    write_sidecar(records, tmp_path / "pred.csv")
    annotated = tmp_path / "ann" / "img.png"
    assert main(["stitch", str(tmp_path / "img.png"), "--predictions", str(tmp_path / "pred.csv"), "--output", str(annotated)]) == 0
    with Image.open(annotated) as img:
        assert img.size == (50, 40) and img.mode == "RGB"
    write_sidecar(records[:80], tmp_path / "short.csv")
    assert main(["stitch", str(tmp_path / "img.png"), "--predictions", str(tmp_path / "short.csv"), "--output", str(annotated)]) == 2
    assert len(read_sidecar(tmp_path / "pred.csv")) == 81
