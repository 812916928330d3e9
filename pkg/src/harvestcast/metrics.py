"""Regression scores reported for yield forecasts."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, NumericError


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float
    rmse: float
    rmspe: float
    r2: float
    n: int
    excluded: int = 0  # rows with obs <= 0, left out of MAPE/RMSPE


def compute_metrics(pred, obs):
    """MAE, MAPE (%), RMSE, RMSPE (%) and R^2 = 1 - SS_res / SS_tot.

    Errors are ``obs - pred``. R^2 is not the squared correlation and goes
    negative for models worse than the mean.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    if pred.size == 0 or pred.size != obs.size:
        raise ContractError(f"need equal, non-zero lengths (got {pred.size} and {obs.size})")
    e = obs - pred
    pos = obs > 0
    excluded = int((~pos).sum())
    if pos.any():
        ratio = e[pos] / obs[pos]
        mape = 100.0 * float(np.mean(np.abs(ratio)))
        rmspe = 100.0 * math.sqrt(float(np.mean(ratio * ratio)))
    else:
        mape = rmspe = math.nan
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:
        raise NumericError("R^2 undefined: observations have zero variance")
    ss_res = float(np.sum(e * e))
    return Metrics(
        mae=float(np.mean(np.abs(e))),
        mape=mape,
        rmse=math.sqrt(float(np.mean(e * e))),
        rmspe=rmspe,
        r2=1.0 - ss_res / ss_tot,
        n=int(pred.size),
        excluded=excluded,
    )


ROWS = (("MAE", "mae", "{:.2f}"), ("MAPE", "mape", "{:.2f}%"), ("RMSE", "rmse", "{:.2f}"),
        ("RMSPE", "rmspe", "{:.2f}%"), ("R2", "r2", "{:.2f}"))


def format_report(scores):
    """Plain-text table: one row per score, one column per named model.

    ``scores`` maps a column label (e.g. ``"Brazil - Soybean"``) to Metrics.
    """
    names = list(scores)
    width = max([8] + [len(n) for n in names])
    lines = ["".ljust(8) + "".join(n.rjust(width + 2) for n in names)]
    for label, attr, fmt in ROWS:
        cells = "".join(fmt.format(getattr(scores[n], attr)).rjust(width + 2) for n in names)
        lines.append(label.ljust(8) + cells)
    return "\n".join(lines)


def report_csv(scores):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *asdict(next(iter(scores.values()))).keys()])
    for name, m in scores.items():
        w.writerow([name, *asdict(m).values()])
    return buf.getvalue()
