"""
Utility Functions

Common utility functions used throughout ABM-Flow.
"""

import asyncio
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar, Union

import numpy as np
import pandas as pd
import structlog

T = TypeVar("T")
R = TypeVar("R")
PathLike = Union[str, Path]


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """Setup stdlib handlers and route structlog through them"""
    log_level = getattr(logging, level.upper(), logging.INFO)

    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.processors.KeyValueRenderer(key_order=["event"], sort_keys=True),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write to a temp file in the target directory, then rename over path"""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=filepath.parent, prefix=f".{filepath.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, filepath)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return filepath


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=filepath.parent, prefix=f".{filepath.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, filepath)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return filepath


def export_to_csv(data: pd.DataFrame, filename: PathLike) -> str:
    """Export a table to CSV with a fixed float format"""
    if data.empty:
        raise ValueError("No data to export")
    text = data.to_csv(index=False, float_format="%.12e", lineterminator="\n")
    return str(atomic_write_text(filename, text))


def export_to_json(data: Dict[str, Any], filename: PathLike) -> str:
    """Export a summary document to JSON"""
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"
    return str(atomic_write_text(filename, text))


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    return str(value)


def psnr_proxy(reference: np.ndarray, estimate: np.ndarray) -> float:
    """10 log10(range^2 / MSE) over a state vector; inf when the MSE is zero"""
    reference = np.asarray(reference, dtype=float)
    mse = float(np.mean((np.asarray(estimate, dtype=float) - reference) ** 2))
    data_range = float(reference.max() - reference.min())
    if data_range == 0.0:
        data_range = max(float(np.abs(reference).max()), 1.0)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


async def _gather_in_threads(fn: Callable[[T], R], items: List[T], workers: int) -> List[R]:
    semaphore = asyncio.Semaphore(workers)

    async def run_one(item):
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    return await asyncio.gather(*(run_one(item) for item in items))


def run_points(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Evaluate independent study points, in parallel when workers > 1; results keep input order"""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return asyncio.run(_gather_in_threads(fn, items, workers))
