import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from attacks.attacker import PerturbationAttacker
from attacks.model_gradcheck import run_model_suite
from autodiff import ops
from autodiff.gradcheck import TOLERANCE, run_primitive_suite
from autodiff.tensor import Tensor
from encoder.checkpoint import load_checkpoint, save_checkpoint
from encoder.params import ModelParams, decoder_outputs, encoder_shapes, reinit_decoder
from encoder.transformer import DropoutMode, MiniTransformer
from metrics.representation import attention_divergence, layerwise_hidden_similarity
from metrics.writer import FLOAT_FORMAT, MetricsWriter, write_summary
from models.config import AttackConfig, AttackMode, ExperimentConfig
from models.results import (
    CompareResponse,
    ComparisonRow,
    GradcheckEntry,
    GradcheckResponse,
    ProbeResponse,
    ProbeRow,
    RunSummary,
    TrainRunResponse,
)
from services.chart_service import ChartService
from tasks.dataset import TaskSplits, iter_batches
from tasks.generators import generate_task
from training.trainer import train
from utils.errors import CheckpointError, ConfigurationError, LabError, NumericalError
from utils.seeding import EVAL_ATTACK, derive_seed

logger = logging.getLogger(__name__)

THREADS_ENV = "CREAT_THREADS"
PROBE_BATCHES = 4
ALL_MODES = [AttackMode.NONE, AttackMode.RPT, AttackMode.AT, AttackMode.CREAT, AttackMode.CREAT_MINUS]


def grid_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {threads}")
    return threads


def with_mode(config: ExperimentConfig, mode: AttackMode) -> ExperimentConfig:
    """Copy of `config` whose training attack uses `mode`"""
    data = config.model_dump(mode="json")
    data["train"]["attack"]["mode"] = mode.value
    return ExperimentConfig.model_validate(data)


def run_name(mode: str, seed: int) -> str:
    return f"{mode}_seed{seed}"


class ExperimentService:
    def __init__(self):
        self.chart_service = ChartService()

    def run_training(
        self,
        config: ExperimentConfig,
        out_dir: Optional[Union[str, Path]] = None,
        seed: Optional[int] = None,
        splits: Optional[TaskSplits] = None,
    ) -> TrainRunResponse:
        """Train one run and write its metrics CSV, summary JSON and checkpoint"""
        seed = config.train.seed if seed is None else seed
        mode = config.train.attack.mode.value
        run_dir = Path(out_dir if out_dir is not None else config.output_dir) / run_name(mode, seed)
        artifacts = {"metrics": str(run_dir / "metrics.csv")}
        try:
            writer = MetricsWriter(run_dir / "metrics.csv", config.encoder.num_layers)
            (run_dir / "config.json").write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
            run = train(config, seed=seed, on_record=writer, splits=splits)

            artifacts["summary"] = str(write_summary(run_dir / "summary.json", run.summary))
            artifacts["checkpoint"] = str(save_checkpoint(run_dir / "checkpoint.bin", run.params))
            return TrainRunResponse(success=True, run_dir=str(run_dir), summary=run.summary, artifacts=artifacts)
        except NumericalError as e:
            abort_path = run_dir / "abort.json"
            abort_path.write_text(json.dumps({"error": str(e), **e.diagnostics}, indent=2) + "\n", encoding="utf-8")
            artifacts["abort"] = str(abort_path)
            return TrainRunResponse(success=False, run_dir=str(run_dir), errors=[str(e)], artifacts=artifacts)
        except (LabError, OSError) as e:
            logger.error("run %s failed: %s", run_name(mode, seed), e)
            return TrainRunResponse(success=False, run_dir=str(run_dir), errors=[str(e)], artifacts=artifacts)

    def run_comparison(self, config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> CompareResponse:
        """Run the {mode x seed} grid and reduce it to one report row per mode"""
        if len(config.modes) < 2:
            return CompareResponse(success=False, errors=["compare needs at least two modes"])
        try:
            threads = grid_threads()
            # every cell trains on the same generated data
            splits = generate_task(config.train.task)
            cells = [(with_mode(config, mode), seed) for mode in config.modes for seed in config.seeds]
        except LabError as e:
            return CompareResponse(success=False, errors=[str(e)])
        out_dir = Path(out_dir if out_dir is not None else config.output_dir)

        def run_cell(cell: Tuple[ExperimentConfig, int]) -> TrainRunResponse:
            cell_config, seed = cell
            return self.run_training(cell_config, out_dir, seed=seed, splits=splits)

        logger.info("comparison grid: %d runs on %d thread(s)", len(cells), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            responses = list(pool.map(run_cell, cells))

        warnings, errors = [], []
        summaries: List[RunSummary] = []
        for (cell_config, seed), response in zip(cells, responses):
            if response.success:
                summaries.append(response.summary)
            else:
                name = run_name(cell_config.train.attack.mode.value, seed)
                logger.warning("grid run %s failed: %s", name, "; ".join(response.errors))
                errors.append(f"{name}: {'; '.join(response.errors)}")

        rows = self.comparison_rows(config.modes, config.seeds, summaries)
        report = pd.DataFrame([row.model_dump() for row in rows])
        report_path = out_dir / "compare_report.csv"
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(report_path, index=False, float_format=FLOAT_FORMAT)

        points = [
            {
                "mode": s.mode,
                "seed": s.seed,
                "early_sim_lb": s.early_sim_lb,
                "early_benign_loss": s.early_benign_loss,
                "early_adv_loss": s.early_adv_loss,
                "final_eval_accuracy": s.final_eval_accuracy,
            }
            for s in summaries
        ]
        scatter_path = out_dir / "similarity_scatter.csv"
        pd.DataFrame(points, columns=[
            "mode", "seed", "early_sim_lb", "early_benign_loss", "early_adv_loss", "final_eval_accuracy",
        ]).to_csv(scatter_path, index=False, float_format=FLOAT_FORMAT)
        chart_data = self.chart_service.fig_to_json(self.chart_service.create_similarity_scatter(points))
        (out_dir / "similarity_scatter.json").write_text(chart_data, encoding="utf-8")

        if errors:
            warnings.append(f"{len(errors)} of {len(cells)} runs failed")
        return CompareResponse(
            success=not errors,
            errors=errors,
            warnings=warnings,
            rows=rows,
            report_path=str(report_path),
            scatter_path=str(scatter_path),
            chart_data=chart_data,
        )

    def comparison_rows(
        self, modes: Sequence[AttackMode], seeds: Sequence[int], summaries: Sequence[RunSummary]
    ) -> List[ComparisonRow]:
        rows = []
        for mode in modes:
            runs = [s for s in summaries if s.mode == mode.value]
            row = ComparisonRow(mode=mode.value, runs=len(runs), failed_runs=len(seeds) - len(runs))
            if runs:
                frame = pd.DataFrame([s.model_dump() for s in runs])
                row.eval_accuracy_mean = float(frame["final_eval_accuracy"].mean())
                row.eval_accuracy_var = float(frame["final_eval_accuracy"].var(ddof=0))
                row.train_accuracy_mean = float(frame["final_train_accuracy"].mean())
                row.early_benign_loss = float(frame["early_benign_loss"].mean())
                row.early_adv_loss = float(frame["early_adv_loss"].mean())
                row.early_sim_lb = float(frame["early_sim_lb"].mean())
            rows.append(row)
        return rows

    def run_gradcheck(self, seed: int = 0) -> GradcheckResponse:
        """Finite-difference check of every primitive and of the full toy model"""
        outcomes = run_primitive_suite(seed) + run_model_suite(seed)
        entries = [
            GradcheckEntry(
                op=o.name,
                max_relative_error=o.max_relative_error,
                checked_coordinates=o.checked_coordinates,
                passed=o.passed,
                worst_input=o.worst_input or "",
            )
            for o in outcomes
        ]
        failed = [e.op for e in entries if not e.passed]
        return GradcheckResponse(
            success=not failed,
            errors=[f"{name} exceeds tolerance {TOLERANCE:g}" for name in failed],
            entries=entries,
            tolerance=TOLERANCE,
        )

    def probe_params(self, checkpoint: Union[str, Path], config: ExperimentConfig, seed: int) -> ModelParams:
        """Checkpoint weights checked tensor by tensor against the configured encoder"""
        params = load_checkpoint(checkpoint)
        for name, shape in encoder_shapes(config.encoder).items():
            if name not in params.encoder:
                raise CheckpointError(f"tensor {name} required by the config is missing from {checkpoint}")
            if params.encoder[name].shape != shape:
                raise CheckpointError(
                    f"tensor {name} has shape {params.encoder[name].shape} in {checkpoint}, config expects {shape}"
                )
        extra = sorted(set(params.encoder) - set(encoder_shapes(config.encoder)))
        if extra:
            raise CheckpointError(f"tensor {extra[0]} in {checkpoint} is not part of the configured encoder")
        task = config.train.task
        if params.decoder_kind != task.kind or params.num_outputs != decoder_outputs(task):
            logger.warning("checkpoint decoder does not fit task %s; re-initializing it", task.kind.value)
            reinit_decoder(params, seed, task)
        # encoder tensors match, so hyperparameters like dropout come from the config
        params.config = config.encoder
        return params

    def run_probe(
        self,
        checkpoint: Union[str, Path],
        config: ExperimentConfig,
        out_dir: Optional[Union[str, Path]] = None,
        seed: Optional[int] = None,
    ) -> ProbeResponse:
        """Attack a trained checkpoint on eval batches and report layer-wise similarity and attention KL"""
        seed = config.train.seed if seed is None else seed
        try:
            params = self.probe_params(checkpoint, config, seed)
            data = generate_task(config.train.task).eval
        except LabError as e:
            return ProbeResponse(success=False, errors=[str(e)])

        model = MiniTransformer(config.encoder)
        modes = config.modes or ALL_MODES
        batches = list(iter_batches(data, config.train.batch_size))[:PROBE_BATCHES]
        rows: List[ProbeRow] = []
        try:
            for mode in modes:
                attack = AttackConfig.model_validate({**config.train.attack.model_dump(), "mode": mode})
                attacker = PerturbationAttacker(model, attack)
                sims, kls = [], []
                for index, batch in enumerate(batches):
                    x = model.embed(batch.ids, params)
                    benign = model.encode(x, batch.mask, params, DropoutMode.disabled())
                    perturbation = attacker.run_attack(
                        batch, params, derive_seed(seed, index, EVAL_ATTACK), anchor=benign, x=x
                    )
                    adv = model.encode(ops.add(x, Tensor(perturbation.delta)), batch.mask, params, DropoutMode.disabled())
                    sims.append(layerwise_hidden_similarity(benign, adv))
                    kls.append(attention_divergence(benign, adv))
                rows.append(ProbeRow(
                    mode=attack.mode.value,
                    layer_sim=np.mean(sims, axis=0).tolist(),
                    attn_kl=np.mean(kls, axis=0).tolist() if config.encoder.num_layers else [],
                ))
        except LabError as e:
            return ProbeResponse(success=False, errors=[str(e)], rows=rows)

        out_dir = Path(out_dir if out_dir is not None else config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "probe_report.csv"
        self.probe_frame(rows).to_csv(report_path, index=False, float_format=FLOAT_FORMAT)

        figures = self.chart_service.create_probe_figures(
            {r.mode: r.layer_sim for r in rows}, {r.mode: r.attn_kl for r in rows}
        )
        for name, fig in figures.items():
            (out_dir / f"probe_{name}.json").write_text(self.chart_service.fig_to_json(fig), encoding="utf-8")
        return ProbeResponse(
            success=True,
            rows=rows,
            report_path=str(report_path),
            chart_data=self.chart_service.fig_to_json(figures["hidden_similarity"]),
        )

    def probe_frame(self, rows: Sequence[ProbeRow]) -> pd.DataFrame:
        records: List[Dict[str, object]] = []
        for row in rows:
            record = {"mode": row.mode}
            record.update({f"layer_sim_{i}": v for i, v in enumerate(row.layer_sim)})
            record.update({f"attn_kl_{i}": v for i, v in enumerate(row.attn_kl, start=1)})
            records.append(record)
        return pd.DataFrame(records)
