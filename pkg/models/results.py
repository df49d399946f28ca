from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class BaseRunResponse(BaseModel):
    success: bool
    errors: List[str] = []
    warnings: List[str] = []


class MetricsRecord(BaseModel):
    step: int = Field(..., ge=0)
    mode: str
    benign_loss: float
    adv_loss: float
    sim_lb: float = Field(..., ge=-1, le=1)
    sim_mean: float = Field(..., ge=-1, le=1)
    delta_norm: float = Field(..., ge=0)
    layer_sim: List[float]
    attn_kl: List[float]
    total_loss: float
    batch_accuracy: float = Field(..., ge=0, le=1)


class EvaluationResult(BaseModel):
    accuracy: float = Field(..., ge=0, le=1)
    loss: float
    num_examples: int
    robust_accuracy: Optional[float] = None
    robust_loss: Optional[float] = None


class RunSummary(BaseModel):
    mode: str
    seed: int
    max_steps: int
    early_window: int = Field(..., ge=1)
    early_benign_loss: float
    early_adv_loss: float
    early_sim_lb: float
    early_sim_mean: float
    early_delta_norm: float
    early_layer_sim: List[float]
    early_attn_kl: List[float]
    final_train_accuracy: float
    final_eval_accuracy: float
    final_eval_loss: float
    robust_eval_accuracy: Optional[float] = None
    config: Dict[str, Any] = {}


class TrainRunResponse(BaseRunResponse):
    run_dir: Optional[str] = None
    summary: Optional[RunSummary] = None
    artifacts: Dict[str, str] = {}


class ComparisonRow(BaseModel):
    mode: str
    runs: int
    failed_runs: int
    eval_accuracy_mean: Optional[float] = None
    eval_accuracy_var: Optional[float] = None
    train_accuracy_mean: Optional[float] = None
    early_benign_loss: Optional[float] = None
    early_adv_loss: Optional[float] = None
    early_sim_lb: Optional[float] = None


class CompareResponse(BaseRunResponse):
    rows: List[ComparisonRow] = []
    report_path: Optional[str] = None
    scatter_path: Optional[str] = None
    chart_data: Optional[str] = None


class GradcheckEntry(BaseModel):
    op: str
    max_relative_error: float
    checked_coordinates: int
    passed: bool
    worst_input: str = ""


class GradcheckResponse(BaseRunResponse):
    entries: List[GradcheckEntry] = []
    tolerance: float


class ProbeRow(BaseModel):
    mode: str
    layer_sim: List[float]
    attn_kl: List[float]


class ProbeResponse(BaseRunResponse):
    rows: List[ProbeRow] = []
    report_path: Optional[str] = None
    chart_data: Optional[str] = None
