import logging
from typing import Dict, List, Sequence

import plotly.graph_objects as go
import plotly.io as pio

logger = logging.getLogger(__name__)

MODE_COLORS = {
    "none": "#7f7f7f",
    "RPT": "#2ca02c",
    "AT": "#1f77b4",
    "CreAT": "#d62728",
    "CreAT_minus": "#9467bd",
}
FALLBACK_COLORS = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd']


class ChartService:
    def __init__(self):
        # Set default template for consistent styling
        pio.templates.default = "plotly_white"

    def fig_to_json(self, fig: go.Figure) -> str:
        """Plotly figure as JSON text for any plotly front end"""
        try:
            return fig.to_json()
        except (ValueError, TypeError) as e:
            logger.warning("could not serialize figure: %s", e)
            return ""

    def _color(self, mode: str, index: int) -> str:
        return MODE_COLORS.get(mode, FALLBACK_COLORS[index % len(FALLBACK_COLORS)])

    def _layout(self, fig: go.Figure, title: str, x_title: str, y_title: str):
        fig.update_layout(
            title=title,
            xaxis_title=x_title,
            yaxis_title=y_title,
            showlegend=True,
            height=400,
            margin=dict(l=50, r=50, t=50, b=50)
        )

    def create_similarity_scatter(self, points: Sequence[Dict[str, object]]) -> go.Figure:
        """Early-phase similarity lower bound against early-phase losses, one marker per run"""
        fig = go.Figure()
        modes = list(dict.fromkeys(str(p["mode"]) for p in points))
        for i, mode in enumerate(modes):
            runs = [p for p in points if p["mode"] == mode]
            color = self._color(mode, i)
            fig.add_trace(go.Scatter(
                x=[p["early_sim_lb"] for p in runs],
                y=[p["early_adv_loss"] for p in runs],
                mode='markers',
                name=f'{mode} (adversarial)',
                marker=dict(color=color, size=9, symbol='circle'),
                text=[f"seed {p['seed']}" for p in runs],
            ))
            fig.add_trace(go.Scatter(
                x=[p["early_sim_lb"] for p in runs],
                y=[p["early_benign_loss"] for p in runs],
                mode='markers',
                name=f'{mode} (benign)',
                marker=dict(color=color, size=9, symbol='x'),
                text=[f"seed {p['seed']}" for p in runs],
            ))
        self._layout(fig, "Early-phase similarity vs. training loss", "similarity lower bound", "loss")
        return fig

    def create_layer_chart(self, series: Dict[str, List[float]], y_title: str, title: str, first_layer: int = 0) -> go.Figure:
        """One line per mode across encoder layers"""
        fig = go.Figure()
        for i, (mode, values) in enumerate(series.items()):
            fig.add_trace(go.Scatter(
                x=list(range(first_layer, first_layer + len(values))),
                y=values,
                mode='lines+markers',
                name=mode,
                line=dict(color=self._color(mode, i), width=2),
                marker=dict(size=6)
            ))
        self._layout(fig, title, "layer", y_title)
        return fig

    def create_probe_figures(self, layer_sim: Dict[str, List[float]], attn_kl: Dict[str, List[float]]) -> Dict[str, go.Figure]:
        return {
            "hidden_similarity": self.create_layer_chart(
                layer_sim, "cosine similarity", "Hidden-state similarity before/after perturbation"
            ),
            "attention_kl": self.create_layer_chart(
                attn_kl, "KL divergence", "Attention divergence under perturbation", first_layer=1
            ),
        }
