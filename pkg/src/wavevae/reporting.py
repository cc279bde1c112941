"""CSV tables and PPM image export."""

from __future__ import annotations

import csv
import io
import math
import re
from pathlib import Path

import numpy as np

from .metrics import MetricsReport

__all__ = [
    "METRICS_HEADER",
    "RESULTS_HEADER",
    "format_metrics",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_results_csv",
    "read_results_csv",
    "write_history_csv",
    "side_by_side",
    "write_ppm",
    "read_ppm",
]

METRICS_HEADER = (
    "method",
    "model",
    "asr",
    "score_fid",
    "score_lpips",
    "raw_fid",
    "raw_lpips",
    "eta",
    "epsilon",
    "steps",
    "seed",
)
RESULTS_HEADER = (
    "index",
    "method",
    "label",
    "prediction",
    "success",
    "steps",
    "final_loss",
    "linf",
    "latent_linf",
    "error",
)


def _fixed(value, digits: int) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{float(value):.{digits}f}"


def _table(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def format_metrics(reports) -> str:
    """Metrics table text; rows sorted by method, then model."""
    rows = [
        [
            r.method,
            r.model,
            _fixed(r.asr_percent, 2),
            _fixed(r.score_fid_percent, 2),
            _fixed(r.score_lpips_percent, 2),
            _fixed(r.raw_fid, 6),
            _fixed(r.raw_lpips, 6),
            _fixed(r.eta, 6),
            _fixed(r.epsilon, 6),
            str(int(r.steps)),
            str(int(r.seed)),
        ]
        for r in sorted(reports, key=lambda r: (r.method, r.model))
    ]
    return _table(METRICS_HEADER, rows)


def write_metrics_csv(reports, path) -> None:
    Path(path).write_text(format_metrics(reports), encoding="utf-8")


def _float_or_nan(text: str) -> float:
    return float(text) if text else float("nan")


def read_metrics_csv(path) -> list[MetricsReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            MetricsReport(
                method=row["method"],
                model=row["model"],
                asr_percent=float(row["asr"]),
                score_fid_percent=float(row["score_fid"]),
                score_lpips_percent=float(row["score_lpips"]),
                raw_fid=float(row["raw_fid"]),
                raw_lpips=float(row["raw_lpips"]),
                eta=_float_or_nan(row["eta"]),
                epsilon=_float_or_nan(row["epsilon"]),
                steps=int(row["steps"]),
                seed=int(row["seed"]),
            )
            for row in reader
        ]


def write_results_csv(results, path) -> None:
    rows = [
        [
            r.index,
            r.method,
            r.label,
            r.prediction,
            int(r.success),
            r.steps_run,
            _fixed(r.final_loss, 6),
            _fixed(r.linf, 6),
            _fixed(r.latent_linf, 6),
            r.error or "",
        ]
        for r in sorted(results, key=lambda r: r.index)
    ]
    Path(path).write_text(_table(RESULTS_HEADER, rows), encoding="utf-8")


def read_results_csv(path) -> list[dict]:
    """Rows as dicts with ``index``, ``label``, ``prediction`` and ``success`` converted."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for line, row in enumerate(reader, start=2):
            try:
                row["index"] = int(row["index"])
                row["label"] = int(row["label"])
                row["prediction"] = int(row["prediction"])
                row["success"] = row["success"] == "1"
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {line}: {exc}") from None
            rows.append(row)
        return rows


def write_history_csv(columns: dict[str, list], path) -> None:
    names = list(columns)
    length = len(next(iter(columns.values()))) if columns else 0
    rows = [
        [i] + [_fixed(columns[name][i], 6) for name in names] for i in range(length)
    ]
    Path(path).write_text(_table(["epoch"] + names, rows), encoding="utf-8")


# -- PPM ---------------------------------------------------------------------


def _to_u8(image: np.ndarray) -> np.ndarray:
    """[C, H, W] float in [0, 1] (or uint8 [H, W, C]) to uint8 [H, W, 3]."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.rint(np.clip(image.astype(np.float64), 0, 1) * 255).astype(np.uint8)
        image = np.transpose(image, (1, 2, 0))
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"cannot export an image of shape {image.shape}")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    return image


def side_by_side(original, adversarial, gap: int = 2) -> np.ndarray:
    a, b = _to_u8(original), _to_u8(adversarial)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    spacer = np.full((a.shape[0], gap, 3), 255, dtype=np.uint8)
    return np.concatenate([a, spacer, b], axis=1)


def write_ppm(pixels: np.ndarray, path) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", raw)
    if m is None:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    body = raw[m.end() :]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
