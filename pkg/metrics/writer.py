"""Per-step metrics CSV and run summary JSON"""
import json
import logging
from pathlib import Path
from typing import List, Union

import pandas as pd

from models.results import MetricsRecord, RunSummary
from utils.errors import InputError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
BASE_COLUMNS = ["step", "mode", "benign_loss", "adv_loss", "sim_lb", "sim_mean", "delta_norm"]
TRAILING_COLUMNS = ["total_loss", "batch_accuracy"]


def metric_columns(num_layers: int) -> List[str]:
    return (
        BASE_COLUMNS
        + [f"layer_sim_{i}" for i in range(num_layers + 1)]
        + [f"attn_kl_{i}" for i in range(1, num_layers + 1)]
        + TRAILING_COLUMNS
    )


def record_row(record: MetricsRecord) -> dict:
    row = {name: getattr(record, name) for name in BASE_COLUMNS + TRAILING_COLUMNS}
    row.update({f"layer_sim_{i}": v for i, v in enumerate(record.layer_sim)})
    row.update({f"attn_kl_{i}": v for i, v in enumerate(record.attn_kl, start=1)})
    return row


def records_frame(records: List[MetricsRecord], num_layers: int) -> pd.DataFrame:
    return pd.DataFrame([record_row(r) for r in records], columns=metric_columns(num_layers))


class MetricsWriter:
    """Appends one CSV row per step so a run that aborts keeps every finished step"""

    def __init__(self, path: Union[str, Path], num_layers: int):
        self.path = Path(path)
        self.columns = metric_columns(num_layers)
        self.num_layers = num_layers
        self.rows_written = 0
        self.last_step = None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=self.columns).to_csv(self.path, index=False)

    def append(self, record: MetricsRecord):
        if self.last_step is not None and record.step <= self.last_step:
            raise InputError(f"step {record.step} does not follow step {self.last_step}")
        frame = records_frame([record], self.num_layers)
        frame.to_csv(self.path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT)
        self.last_step = record.step
        self.rows_written += 1

    __call__ = append


def read_metrics(path: Union[str, Path]) -> List[MetricsRecord]:
    """Parse a metrics CSV back into records"""
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"mode": str})
    layer_cols = [c for c in frame.columns if c.startswith("layer_sim_")]
    kl_cols = [c for c in frame.columns if c.startswith("attn_kl_")]
    missing = [c for c in BASE_COLUMNS + TRAILING_COLUMNS if c not in frame.columns]
    if missing or not layer_cols:
        raise InputError(f"{path} is not a metrics table, missing columns {missing or ['layer_sim_0']}")
    records = []
    for row in frame.to_dict(orient="records"):
        records.append(MetricsRecord(
            **{name: row[name] for name in BASE_COLUMNS + TRAILING_COLUMNS},
            layer_sim=[row[c] for c in layer_cols],
            attn_kl=[row[c] for c in kl_cols],
        ))
    return records


def write_summary(path: Union[str, Path], summary: RunSummary) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_summary(path: Union[str, Path]) -> RunSummary:
    return RunSummary.model_validate_json(Path(path).read_text(encoding="utf-8"))
