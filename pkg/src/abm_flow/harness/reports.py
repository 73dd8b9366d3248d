"""
Report Writers

Tables go to CSV, summaries to JSON, optional plots to SVG. Every file is
written atomically so an interrupted run leaves either the old artifact or
the new one.
"""

from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
import plotly.express as px
import structlog

from ..core.mgfi import write_mask, write_tensor
from ..utils.helpers import atomic_write_bytes, export_to_csv, export_to_json
from .studies import MgfiReport

logger = structlog.get_logger(__name__)


def rows_frame(rows: Sequence[Any]) -> pd.DataFrame:
    """DataFrame with one row per dataclass record, columns in field order"""
    return pd.DataFrame([asdict(row) for row in rows])


def write_plot(frame: pd.DataFrame, x: str, y: str, path: Path, title: str) -> Optional[Path]:
    """Log-log line plot of y against x as SVG; non-positive points are dropped"""
    data = frame[(frame[x] > 0) & (frame[y] > 0)]
    if data.empty:
        logger.warning("plot_skipped", path=str(path), reason="no plottable points")
        return None
    fig = px.line(data, x=x, y=y, markers=True, log_x=True, log_y=True, title=title)
    return atomic_write_bytes(path, fig.to_image(format="svg"))


def write_study(name: str, frame: pd.DataFrame, summary: Dict[str, Any], out_dir: Path,
                plot: Optional[Dict[str, Any]] = None) -> List[Path]:
    """<name>.csv, <name>_summary.json and, when plot is given, <name>.svg"""
    out_dir = Path(out_dir)
    written = [
        Path(export_to_csv(frame, out_dir / f"{name}.csv")),
        Path(export_to_json(summary, out_dir / f"{name}_summary.json")),
    ]
    if plot is not None:
        svg = write_plot(frame, path=out_dir / f"{name}.svg", **plot)
        if svg is not None:
            written.append(svg)
    logger.info("study_written", study=name, files=[str(path) for path in written])
    return written


def write_mgfi_artifacts(report: MgfiReport, out_dir: Path) -> List[Path]:
    """masks/<name>.txt and tensors/<name>.txt for every demo case"""
    out_dir = Path(out_dir)
    written = []
    for name in sorted(report.masks):
        written.append(write_mask(report.masks[name], out_dir / "masks" / f"{name}.txt"))
        written.append(write_tensor(report.tensors[name], out_dir / "tensors" / f"{name}.txt"))
    return written
