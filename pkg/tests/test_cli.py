import json

import pytest
from click.testing import CliRunner

from main import __version__, cli
from models.config import AttackMode, TaskKind


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path, make_experiment):
    def write(name="config.json", **kwargs):
        path = tmp_path / name
        path.write_text(make_experiment(**kwargs).model_dump_json(indent=2))
        return path

    return write


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_presets_lists_every_preset(runner):
    result = runner.invoke(cli, ["presets"])
    assert result.exit_code == 0
    for name in ("toy-mlm-pretrain", "motif-finetune", "motif-baseline", "tagging-finetune", "motif-grid"):
        assert name in result.output


def test_train_on_dumped_dataset_matches_generated_run(runner, tmp_path, config_file):
    path = config_file(mode="AT", steps=3)
    runner.invoke(cli, ["dataset", "--config", str(path), "--out", str(tmp_path / "data")])
    generated = runner.invoke(cli, ["--quiet", "train", "--config", str(path), "--out", str(tmp_path / "a")])
    loaded = runner.invoke(cli, [
        "--quiet", "train", "--config", str(path), "--out", str(tmp_path / "b"), "--data", str(tmp_path / "data"),
    ])
    assert generated.exit_code == 0, generated.output
    assert loaded.exit_code == 0, loaded.output
    metrics = [(tmp_path / run / "AT_seed0" / "metrics.csv").read_bytes() for run in ("a", "b")]
    assert metrics[0] == metrics[1]


def test_train_rejects_data_of_another_task_kind(runner, tmp_path, config_file, tiny_task):
    path = config_file(steps=2)
    tagging = tiny_task.model_copy(update={"kind": TaskKind.TOKEN_CLASSIFICATION})
    other = config_file(name="tagging.json", steps=2, task=tagging)
    runner.invoke(cli, ["dataset", "--config", str(other), "--out", str(tmp_path / "data")])
    result = runner.invoke(cli, ["train", "--config", str(path), "--data", str(tmp_path / "data")])
    assert result.exit_code != 0
    assert "config expects sequence_classification" in result.output


def test_presets_by_category(runner):
    result = runner.invoke(cli, ["presets", "--category", "fine-tuning"])
    assert result.exit_code == 0
    assert "motif-baseline" in result.output
    assert "motif-grid" not in result.output
    result = runner.invoke(cli, ["presets", "--category", "nope"])
    assert result.exit_code != 0
    assert "no presets in category" in result.output


def test_train_writes_artifacts(runner, tmp_path, config_file):
    path = config_file(mode="CreAT", steps=3)
    result = runner.invoke(cli, ["--quiet", "train", "--config", str(path), "--out", str(tmp_path / "runs")])
    assert result.exit_code == 0, result.output
    run_dir = tmp_path / "runs" / "CreAT_seed0"
    for name in ("metrics.csv", "summary.json", "checkpoint.bin"):
        assert (run_dir / name).is_file()
    assert "mode=CreAT" in result.output


def test_train_is_byte_identical_on_rerun(runner, tmp_path, config_file):
    path = config_file(mode="AT", steps=3)
    for out in ("a", "b"):
        result = runner.invoke(cli, ["--quiet", "train", "--config", str(path), "--out", str(tmp_path / out)])
        assert result.exit_code == 0, result.output
    for name in ("metrics.csv", "summary.json", "checkpoint.bin"):
        assert (tmp_path / "a" / "AT_seed0" / name).read_bytes() == (tmp_path / "b" / "AT_seed0" / name).read_bytes()


def test_train_seed_override(runner, tmp_path, config_file):
    path = config_file(mode="RPT", steps=2)
    result = runner.invoke(cli, ["--quiet", "train", "--config", str(path), "--out", str(tmp_path), "--seed", "4"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "RPT_seed4" / "summary.json").is_file()


def test_invalid_config_names_the_field(runner, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"mix_lambda": 2.0, "attack": {"mode": "AT", "radius": 1}}}))
    result = runner.invoke(cli, ["train", "--config", str(path)])
    assert result.exit_code != 0
    assert "train.mix_lambda" in result.output
    assert "train.attack.radius" in result.output


def test_config_and_preset_are_exclusive(runner, config_file):
    result = runner.invoke(cli, ["train", "--config", str(config_file()), "--preset", "motif-finetune"])
    assert result.exit_code != 0
    result = runner.invoke(cli, ["train"])
    assert result.exit_code != 0


def test_unknown_preset(runner):
    result = runner.invoke(cli, ["train", "--preset", "nope"])
    assert result.exit_code != 0
    assert "unknown preset" in result.output


def test_compare(runner, tmp_path, make_experiment):
    config = make_experiment(steps=2).model_copy(update={"modes": [AttackMode.NONE, AttackMode.CREAT]})
    path = tmp_path / "grid.json"
    path.write_text(config.model_dump_json())
    result = runner.invoke(cli, ["--quiet", "compare", "--config", str(path), "--out", str(tmp_path / "grid")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "grid" / "compare_report.csv").is_file()
    assert "CreAT" in result.output


def test_compare_needs_two_modes(runner, tmp_path, config_file):
    result = runner.invoke(cli, ["compare", "--config", str(config_file()), "--out", str(tmp_path)])
    assert result.exit_code == 1


def test_probe(runner, tmp_path, config_file):
    path = config_file(steps=2)
    runner.invoke(cli, ["--quiet", "train", "--config", str(path), "--out", str(tmp_path)])
    result = runner.invoke(cli, [
        "--quiet", "probe", "--checkpoint", str(tmp_path / "none_seed0" / "checkpoint.bin"),
        "--config", str(path), "--out", str(tmp_path / "probe"), "--mode", "none", "--mode", "CreAT",
    ])
    assert result.exit_code == 0, result.output
    assert "none" in result.output and "CreAT" in result.output
    assert (tmp_path / "probe" / "probe_report.csv").is_file()


def test_dataset_dump(runner, tmp_path, config_file):
    result = runner.invoke(cli, ["dataset", "--config", str(config_file()), "--out", str(tmp_path / "data")])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "data" / "train.jsonl").read_text().splitlines()
    assert len(lines) == 32
    assert json.loads(lines[0])["kind"] == "sequence_classification"
    assert (tmp_path / "data" / "eval.jsonl").is_file()


@pytest.mark.slow
def test_gradcheck_command(runner):
    result = runner.invoke(cli, ["gradcheck", "--seed", "0"])
    assert result.exit_code == 0, result.output
    assert "model.task_loss" in result.output
    assert "FAIL" not in result.output
