"""Run metrics and their CSV serialization.

Norm convention: ``mean_sum_sq_residual`` is the sum of squared residual
entries per sample averaged over samples; squared field errors follow the
same sum-then-average rule. Burgers RMSE is the per-slab root mean square
error averaged over samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

CSV_COLUMNS = [
    "run_id", "equation", "tau", "N", "M", "m", "r",
    "mean_sum_sq_residual", "excess_residual",
    "pressure_sq_error", "permeability_sq_error", "rmse",
    "score_evals", "residual_evals", "wall_time_s",
]


@dataclass
class MetricsRow:
    run_id: str = ""
    equation: str = ""
    tau: int = 0
    N: int = 0
    M: int = 0
    m: int = 0
    r: int = 0
    mean_sum_sq_residual: float = float("nan")
    excess_residual: float = float("nan")
    pressure_sq_error: float = float("nan")
    permeability_sq_error: float = float("nan")
    rmse: float = float("nan")
    score_evals: int = 0
    residual_evals: int = 0
    wall_time_s: float = 0.0

    def __post_init__(self):
        for name in ("tau", "N", "M", "m", "r", "score_evals", "residual_evals"):
            if getattr(self, name) < 0:
                raise ValueError(f"count {name} must be nonnegative")


def mean_sum_sq(residuals) -> float:
    """Mean over samples of the summed squared entries."""
    return float(np.mean([np.sum(np.square(r)) for r in residuals]))


def eval_metrics(residuals, dataset_baseline: float,
                 predictions: np.ndarray | None = None,
                 targets: np.ndarray | None = None,
                 codec=None, want_errors: bool = False,
                 **row_fields) -> MetricsRow:
    """Aggregate residuals (and optional prediction errors) into a row.

    `residuals` is an iterable of per-sample residual arrays. Squared
    reconstruction errors need (predictions, targets) as (count, d) state
    arrays plus a codec to split channels; asking for them without targets
    is an error.
    """
    row = MetricsRow(**row_fields)
    row.mean_sum_sq_residual = mean_sum_sq(residuals)
    row.excess_residual = row.mean_sum_sq_residual - dataset_baseline
    if want_errors or targets is not None:
        if targets is None or predictions is None:
            raise ValueError("error columns requested but predictions/targets missing")
        predictions = np.asarray(predictions, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if predictions.shape != targets.shape:
            raise ValueError("predictions and targets must have equal shapes")
        diff = predictions - targets
        if codec is not None and hasattr(codec, "pressure_mask") and hasattr(codec, "permeability"):
            mask = codec.pressure_mask()
            row.pressure_sq_error = float(np.mean(np.sum(diff[:, mask] ** 2, axis=1)))
            row.permeability_sq_error = float(np.mean(np.sum(diff[:, ~mask] ** 2, axis=1)))
        row.rmse = float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))
    return row


def write_metrics_csv(rows, path):
    """RFC-4180 CSV with the fixed column order in CSV_COLUMNS."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, c) for c in CSV_COLUMNS])


def read_metrics_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        out = []
        for rec in reader:
            kwargs = {}
            for name, value in zip(CSV_COLUMNS, rec):
                ftype = MetricsRow.__dataclass_fields__[name].type
                if ftype == "int":
                    kwargs[name] = int(value)
                elif ftype == "float":
                    kwargs[name] = float(value)
                else:
                    kwargs[name] = value
            out.append(MetricsRow(**kwargs))
        return out


assert [f.name for f in fields(MetricsRow)] == CSV_COLUMNS
