# core/plotting.py
"""Power timelines of a simulated run."""

from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from utils.logger import logger

DEFAULT_COLORWAY = px.colors.qualitative.Plotly
FIGURE_DIV_ID = "david-timeline"


def hex_to_rgba(color: str, alpha: float = 1.0) -> str:
    """
    Convert a hex or rgb color string to an RGBA string.

    Args:
        color: Hex color string (e.g. "#FF5733") or RGB string
            (e.g. "rgb(255, 87, 51)")
        alpha: Opacity value between 0.0 and 1.0

    Returns:
        RGBA string (e.g. "rgba(255, 87, 51, 0.8)")
    """
    color = color.strip()
    if color.startswith("rgb"):
        parts = color[color.index("(") + 1 : color.index(")")].split(",")
        r, g, b = int(parts[0]), int(parts[1]), int(parts[2])
    else:
        hex_color = color.lstrip("#")
        r, g, b = (int(hex_color[i : i + 2], 16) for i in (0, 2, 4))
    return f"rgba({r}, {g}, {b}, {alpha})"


def step_series(intervals: pd.DataFrame) -> Tuple[List[float], List[float]]:
    """Intervals of one device as a stepped power trace (x in s, y in mW)."""
    xs: List[float] = []
    ys: List[float] = []
    for row in intervals.sort_values("start_s").itertuples(index=False):
        if xs and xs[-1] < row.start_s:
            # gap: zero power
            xs += [xs[-1], row.start_s]
            ys += [0.0, 0.0]
        xs += [row.start_s, row.end_s]
        ys += [row.power_mw, row.power_mw]
    return xs, ys


class PlottingUtils:
    """Builds plotly figures from energy-ledger frames."""

    @staticmethod
    def power_timeline(
        intervals: pd.DataFrame,
        title: str = "",
        colorway: Optional[List[str]] = None,
        font_size: int = 12,
        line_width: int = 2,
    ) -> go.Figure:
        """
        One row per device with its power draw over time.

        Args:
            intervals: Frame with device, state, start_s, end_s, power_mw
            title: Figure title
            colorway: Colors per device, cycled

        Returns:
            Plotly figure (empty scatter when there is nothing to draw)
        """
        if intervals.empty:
            return px.scatter()
        colorway = colorway or DEFAULT_COLORWAY
        devices = sorted(intervals["device"].unique())
        fig = make_subplots(
            rows=len(devices),
            cols=1,
            shared_xaxes="all",  # type: ignore[arg-type]
            vertical_spacing=0.04,
            subplot_titles=devices,
        )
        for row, device in enumerate(devices, start=1):
            color = colorway[(row - 1) % len(colorway)]
            xs, ys = step_series(intervals[intervals["device"] == device])
            fig.add_trace(
                go.Scatter(
                    x=xs,
                    y=ys,
                    mode="lines",
                    name=device,
                    line=dict(color=color, width=line_width),
                    fill="tozeroy",
                    fillcolor=hex_to_rgba(color, 0.2),
                    hovertemplate=(
                        f"<b>{device}</b><br>%{{y:.3g}} mW at %{{x:.3f}} s"
                        "<extra></extra>"
                    ),
                ),
                row=row,
                col=1,
            )
            fig.update_yaxes(title_text="mW", row=row, col=1)
        fig.update_xaxes(title_text="Time [s]", row=len(devices), col=1)
        fig.update_layout(
            template="plotly_white",
            title=dict(text=title, xanchor="center", x=0.5) if title else None,
            height=max(300, 180 * len(devices)),
            margin=dict(l=60, r=40, t=60 if title else 30, b=60),
            showlegend=False,
            font=dict(size=font_size),
        )
        return fig

    @staticmethod
    def write_html(fig: go.Figure, filepath: Path, div_id: str = FIGURE_DIV_ID):
        """Standalone HTML; a fixed div id keeps repeated writes identical."""
        fig.write_html(
            str(filepath), include_plotlyjs="cdn", full_html=True, div_id=div_id
        )
        logger.info(f"Wrote plot to {filepath}")

