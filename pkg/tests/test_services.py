import json

import numpy as np
import pandas as pd
import pytest

from encoder.checkpoint import save_checkpoint
from encoder.params import init_params
from metrics.writer import read_metrics, read_summary
from models.config import AttackMode
from services.chart_service import ChartService
from services.experiment_service import ExperimentService, grid_threads, run_name, with_mode
from utils.errors import ConfigurationError


@pytest.fixture
def service():
    return ExperimentService()


def test_run_training_writes_artifacts(tmp_path, service, make_experiment):
    response = service.run_training(make_experiment(mode="CreAT", steps=4), tmp_path)
    assert response.success
    run_dir = tmp_path / "CreAT_seed0"
    assert response.run_dir == str(run_dir)
    for name in ("metrics.csv", "summary.json", "checkpoint.bin", "config.json"):
        assert (run_dir / name).is_file()
    records = read_metrics(run_dir / "metrics.csv")
    assert [r.step for r in records] == [1, 2, 3, 4]
    assert read_summary(run_dir / "summary.json") == response.summary


def test_run_training_is_reproducible(tmp_path, service, make_experiment):
    config = make_experiment(mode="AT", steps=3)
    service.run_training(config, tmp_path / "a")
    service.run_training(config, tmp_path / "b")
    for name in ("metrics.csv", "summary.json", "checkpoint.bin"):
        assert (tmp_path / "a" / "AT_seed0" / name).read_bytes() == (tmp_path / "b" / "AT_seed0" / name).read_bytes()


def test_run_training_abort_writes_diagnostics(tmp_path, service, make_experiment, tiny_encoder, tiny_task):
    encoder = tiny_encoder.model_copy(update={"num_layers": 0})
    params = init_params(encoder, seed=0, task=tiny_task)
    params["embeddings.position"].data = np.full((8, 8), np.nan)
    checkpoint = save_checkpoint(tmp_path / "broken.bin", params)
    config = make_experiment(mode="none", steps=5, encoder=encoder, init_checkpoint=str(checkpoint))
    response = service.run_training(config, tmp_path)
    assert not response.success
    abort = json.loads((tmp_path / "none_seed0" / "abort.json").read_text())
    assert abort["mode"] == "none"
    assert abort["step"] == 1
    assert "non-finite" in abort["error"]
    assert (tmp_path / "none_seed0" / "metrics.csv").read_text().startswith("step,mode,")
    assert not (tmp_path / "none_seed0" / "checkpoint.bin").exists()


def test_run_name_and_with_mode(make_experiment):
    assert run_name("CreAT", 3) == "CreAT_seed3"
    config = make_experiment(mode="AT")
    switched = with_mode(config, AttackMode.RPT)
    assert switched.train.attack.mode == AttackMode.RPT
    assert config.train.attack.mode == AttackMode.AT


@pytest.mark.parametrize("raw, expected", [(None, 1), ("3", 3)])
def test_grid_threads(monkeypatch, raw, expected):
    if raw is None:
        monkeypatch.delenv("CREAT_THREADS", raising=False)
    else:
        monkeypatch.setenv("CREAT_THREADS", raw)
    assert grid_threads() == expected


@pytest.mark.parametrize("raw", ["0", "many"])
def test_grid_threads_rejects_bad_values(monkeypatch, raw):
    monkeypatch.setenv("CREAT_THREADS", raw)
    with pytest.raises(ConfigurationError):
        grid_threads()


def test_comparison_grid(tmp_path, service, make_experiment, monkeypatch):
    monkeypatch.setenv("CREAT_THREADS", "2")
    config = make_experiment(steps=3).model_copy(update={"modes": [AttackMode.NONE, AttackMode.CREAT], "seeds": [0, 1]})
    response = service.run_comparison(config, tmp_path)
    assert response.success, response.errors
    assert [row.mode for row in response.rows] == ["none", "CreAT"]
    assert all(row.runs == 2 and row.failed_runs == 0 for row in response.rows)
    report = pd.read_csv(tmp_path / "compare_report.csv")
    assert list(report["mode"]) == ["none", "CreAT"]
    scatter = pd.read_csv(tmp_path / "similarity_scatter.csv")
    assert len(scatter) == 4
    assert json.loads((tmp_path / "similarity_scatter.json").read_text())["data"]
    for mode in ("none", "CreAT"):
        for seed in (0, 1):
            assert (tmp_path / f"{mode}_seed{seed}" / "metrics.csv").is_file()


def test_comparison_is_thread_count_independent(tmp_path, service, make_experiment, monkeypatch):
    config = make_experiment(steps=2).model_copy(update={"modes": [AttackMode.AT, AttackMode.RPT], "seeds": [0, 1]})
    reports = []
    for threads in ("1", "3"):
        monkeypatch.setenv("CREAT_THREADS", threads)
        service.run_comparison(config, tmp_path / threads)
        reports.append((tmp_path / threads / "compare_report.csv").read_bytes())
    assert reports[0] == reports[1]


def test_comparison_needs_two_modes(service, make_experiment):
    config = make_experiment().model_copy(update={"modes": [AttackMode.AT]})
    response = service.run_comparison(config)
    assert not response.success


def test_comparison_variance_is_population_variance(service):
    from models.results import RunSummary

    def summary(seed, accuracy):
        return RunSummary(
            mode="AT", seed=seed, max_steps=5, early_window=1, early_benign_loss=1.0, early_adv_loss=1.0,
            early_sim_lb=0.5, early_sim_mean=0.5, early_delta_norm=0.1, early_layer_sim=[1.0], early_attn_kl=[],
            final_train_accuracy=1.0, final_eval_accuracy=accuracy, final_eval_loss=0.1,
        )

    rows = service.comparison_rows([AttackMode.AT, AttackMode.CREAT], [0, 1], [summary(0, 0.6), summary(1, 0.8)])
    assert rows[0].eval_accuracy_mean == pytest.approx(0.7)
    assert rows[0].eval_accuracy_var == pytest.approx(0.01)
    assert rows[1].runs == 0 and rows[1].failed_runs == 2
    assert rows[1].eval_accuracy_mean is None


def test_probe_without_attack_is_neutral(tmp_path, service, make_experiment):
    config = make_experiment(steps=2)
    trained = service.run_training(config, tmp_path)
    checkpoint = tmp_path / "none_seed0" / "checkpoint.bin"
    probe_config = config.model_copy(update={"modes": [AttackMode.NONE, AttackMode.AT]})
    response = service.run_probe(checkpoint, probe_config, tmp_path / "probe")
    assert trained.success and response.success
    neutral = response.rows[0]
    assert neutral.layer_sim == pytest.approx([1.0] * 3, abs=1e-12)
    assert neutral.attn_kl == pytest.approx([0.0] * 2, abs=1e-12)
    attacked = response.rows[1]
    assert attacked.layer_sim[0] < 1.0
    report = pd.read_csv(tmp_path / "probe" / "probe_report.csv")
    assert list(report.columns) == ["mode", "layer_sim_0", "layer_sim_1", "layer_sim_2", "attn_kl_1", "attn_kl_2"]
    assert (tmp_path / "probe" / "probe_hidden_similarity.json").is_file()
    assert (tmp_path / "probe" / "probe_attention_kl.json").is_file()


def test_probe_rejects_mismatched_checkpoint(tmp_path, service, make_experiment, tiny_encoder, tiny_task):
    other = tiny_encoder.model_copy(update={"intermediate_size": 12})
    path = save_checkpoint(tmp_path / "other.bin", init_params(other, seed=0, task=tiny_task))
    response = service.run_probe(path, make_experiment(), tmp_path)
    assert not response.success
    assert "layers.0.ffn.intermediate.weight" in response.errors[0]


def test_gradcheck_service_passes(service):
    response = service.run_gradcheck(seed=0)
    assert response.success, response.errors
    names = {entry.op for entry in response.entries}
    assert {"softmax", "layer_norm", "model.task_loss", "objective.CreAT.delta", "objective.CreAT.min.delta"} <= names


def test_chart_service_serializes_figures():
    charts = ChartService()
    scatter = charts.create_similarity_scatter([
        {"mode": "AT", "seed": 0, "early_sim_lb": 0.5, "early_benign_loss": 1.0, "early_adv_loss": 1.2},
        {"mode": "CreAT", "seed": 0, "early_sim_lb": 0.9, "early_benign_loss": 0.8, "early_adv_loss": 0.9},
    ])
    data = json.loads(charts.fig_to_json(scatter))
    assert len(data["data"]) == 4
    figures = charts.create_probe_figures({"AT": [1.0, 0.9, 0.8]}, {"AT": [0.1, 0.2]})
    assert json.loads(charts.fig_to_json(figures["attention_kl"]))["data"][0]["x"] == [1, 2]
