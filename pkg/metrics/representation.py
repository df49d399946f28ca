"""Representation diagnostics: output similarity before/after a perturbation,
layer-wise hidden-state similarity, attention divergence and early-phase averages.

All functions are pure over numpy snapshots. Cosine similarities here are
exact quotients (no smoothing) so an unperturbed forward gives 1 to within
rounding.
"""
import logging
import math
from typing import Dict, List, Sequence

import numpy as np

from encoder.transformer import EncodeOutput
from models.results import MetricsRecord
from utils.errors import InputError

logger = logging.getLogger(__name__)

EARLY_FRACTION = 0.2


def _values(t) -> np.ndarray:
    return np.asarray(getattr(t, "data", t), dtype=np.float64)


def _real_mask(mask, batch_shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(batch_shape):
        raise InputError(f"mask shape {mask.shape} does not match hidden states {tuple(batch_shape)}")
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        raise InputError(f"example {int(empty[0])} has no real tokens")
    return mask


def token_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity along the last axis; a zero vector scores 0"""
    a, b = _values(a), _values(b)
    norms = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    dots = (a * b).sum(axis=-1)
    zero = norms == 0
    if zero.any():
        logger.warning("%d zero-norm vector(s) in cosine similarity; scored as 0", int(zero.sum()))
    sims = np.divide(dots, norms, out=np.zeros_like(dots), where=~zero)
    return np.clip(sims, -1.0, 1.0)


def _check_pair(h_benign: np.ndarray, h_adv: np.ndarray):
    if h_benign.shape != h_adv.shape or h_benign.ndim != 3:
        raise InputError(f"hidden states must share a batch x seq x d shape, got {h_benign.shape} and {h_adv.shape}")


def sentence_similarity_lower_bound(h_benign, h_adv, mask) -> np.ndarray:
    """Per example, the minimum token cosine similarity over real tokens"""
    h_benign, h_adv = _values(h_benign), _values(h_adv)
    _check_pair(h_benign, h_adv)
    mask = _real_mask(mask, h_benign.shape[:2])
    sims = token_cosine(h_benign, h_adv)
    return np.where(mask, sims, np.inf).min(axis=1)


def sentence_similarity_mean(h_benign, h_adv, mask) -> np.ndarray:
    """Per example, the mean token cosine similarity over real tokens"""
    h_benign, h_adv = _values(h_benign), _values(h_adv)
    _check_pair(h_benign, h_adv)
    mask = _real_mask(mask, h_benign.shape[:2])
    sims = token_cosine(h_benign, h_adv)
    return (sims * mask).sum(axis=1) / mask.sum(axis=1)


def layerwise_hidden_similarity(benign: EncodeOutput, adv: EncodeOutput) -> List[float]:
    """Embedding output plus every layer: mean over examples of the masked token-mean cosine"""
    if len(benign.hidden_states) != len(adv.hidden_states):
        raise InputError(
            f"layer count mismatch: {len(benign.hidden_states)} vs {len(adv.hidden_states)} hidden states"
        )
    mask = benign.attention_mask
    return [
        float(sentence_similarity_mean(b, a, mask).mean())
        for b, a in zip(benign.hidden_states, adv.hidden_states)
    ]


def row_kl(p: np.ndarray, q: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    """KL(p || q) along the last axis restricted to real keys; p = 0 terms vanish"""
    tiny = np.finfo(np.float64).tiny
    key_mask = np.broadcast_to(key_mask, p.shape)
    live = key_mask & (p > 0)
    terms = np.zeros_like(p)
    terms[live] = p[live] * (np.log(p[live]) - np.log(np.maximum(q[live], tiny)))
    return terms.sum(axis=-1)


def attention_divergence(benign: EncodeOutput, adv: EncodeOutput) -> List[float]:
    """Per layer, KL(benign || adversarial) attention rows averaged over heads and real queries"""
    if len(benign.attentions) != len(adv.attentions):
        raise InputError(f"layer count mismatch: {len(benign.attentions)} vs {len(adv.attentions)} attention maps")
    mask = np.asarray(benign.attention_mask, dtype=bool)
    divergences = []
    for layer, (p, q) in enumerate(zip(benign.attentions, adv.attentions)):
        p, q = _values(p), _values(q)
        if p.shape != q.shape:
            raise InputError(f"attention shape mismatch in layer {layer + 1}: {p.shape} vs {q.shape}")
        kl = row_kl(p, q, mask[:, None, None, :])
        # batch x heads x queries, keep real queries only
        queries = np.broadcast_to(mask[:, None, :], kl.shape)
        divergences.append(float(kl[queries].mean()))
    return divergences


def early_phase_window(max_steps: int) -> int:
    return max(1, math.floor(EARLY_FRACTION * max_steps))


def early_phase_average(series: Sequence[float], max_steps: int) -> float:
    """Mean over the first floor(0.2 * max_steps) entries, at least one"""
    if len(series) == 0:
        raise InputError("cannot average an empty series")
    window = early_phase_window(max_steps)
    if len(series) < window:
        raise InputError(f"series has {len(series)} entries, early phase needs {window}")
    return float(np.mean(np.asarray(series[:window], dtype=np.float64)))


def build_record(
    step: int,
    mode: str,
    benign_loss: float,
    adv_loss: float,
    total_loss: float,
    batch_accuracy: float,
    benign: EncodeOutput,
    adv: EncodeOutput,
    delta: np.ndarray,
) -> MetricsRecord:
    """One metrics row from dropout-free benign and adversarial encoder passes"""
    mask = benign.attention_mask
    lower = sentence_similarity_lower_bound(benign.final_hidden, adv.final_hidden, mask)
    mean = sentence_similarity_mean(benign.final_hidden, adv.final_hidden, mask)
    norms = np.sqrt((np.asarray(delta).reshape(delta.shape[0], -1) ** 2).sum(axis=1))
    return MetricsRecord(
        step=step,
        mode=mode,
        benign_loss=benign_loss,
        adv_loss=adv_loss,
        sim_lb=float(lower.mean()),
        sim_mean=float(mean.mean()),
        delta_norm=float(norms.max()),
        layer_sim=layerwise_hidden_similarity(benign, adv),
        attn_kl=attention_divergence(benign, adv),
        total_loss=total_loss,
        batch_accuracy=batch_accuracy,
    )


def early_phase_summary(records: Sequence[MetricsRecord], max_steps: int) -> Dict[str, object]:
    """Early-phase means of every indicator, keyed like RunSummary fields"""
    if not records:
        raise InputError("no metrics records to summarize")
    window = early_phase_window(max_steps)
    head = records[:window]
    summary = {
        f"early_{column}": early_phase_average([getattr(r, column) for r in records], max_steps)
        for column in ("benign_loss", "adv_loss", "sim_lb", "sim_mean", "delta_norm")
    }
    summary["early_window"] = window
    summary["early_layer_sim"] = np.mean([r.layer_sim for r in head], axis=0).tolist()
    summary["early_attn_kl"] = (
        np.mean([r.attn_kl for r in head], axis=0).tolist() if head[0].attn_kl else []
    )
    return summary
