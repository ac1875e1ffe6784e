"""Error metrics, interval calibration and the load-vs-power scatter export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .dataset import Dataset
from .nn import GaussianPrediction, ModelParams, predict

DEFAULT_LEVELS = (0.5, 0.8, 0.9, 0.95)
SCATTER_COLUMNS = ("aau_id", "day", "hour", "group", "load", "true_power_w", "est_power_w",
                   "true_power_norm", "est_power_norm")


def _pair(preds, truths):
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("metrics need at least one sample")
    return p, t


def mae(preds, truths) -> float:
    p, t = _pair(preds, truths)
    return float(np.mean(np.abs(p - t)))


def mape(preds, truths) -> float:
    """Mean absolute percentage error, per sample, in percent."""
    p, t = _pair(preds, truths)
    if np.any(t <= 0):
        raise ValueError("MAPE requires strictly positive truths")
    return float(100.0 * np.mean(np.abs(p - t) / t))


def z_for_level(level: float) -> float:
    """Two-sided standard-normal quantile: P(|Z| <= z) = level."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


def calibration(preds: GaussianPrediction, truths, levels=DEFAULT_LEVELS) -> dict[float, float]:
    """Fraction of truths inside ``mu_w +/- z(level) * sigma_w`` for each level."""
    mu = np.asarray(preds.mu_w, dtype=np.float64).ravel()
    sigma = np.asarray(preds.sigma_w, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if np.any(sigma <= 0):
        raise ValueError("calibration requires sigma_w > 0")
    out = {}
    for level in levels:
        z = z_for_level(level)
        out[float(level)] = float(np.mean(np.abs(t - mu) <= z * sigma))
    return out


@dataclass
class MetricsReport:
    mae_w: float
    mape_pct: float
    n: int
    coverage: dict[float, float] = field(default_factory=dict)
    mean_sigma_w: float | None = None

    def to_dict(self) -> dict:
        d = {"mae_w": self.mae_w, "mape_pct": self.mape_pct, "n": self.n,
             "coverage": {f"{k:g}": v for k, v in self.coverage.items()}}
        if self.mean_sigma_w is not None:
            d["mean_sigma_w"] = self.mean_sigma_w
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(params: ModelParams, ds: Dataset, levels=DEFAULT_LEVELS) -> MetricsReport:
    """Score predictions against the measured power column."""
    pred = predict(params, ds)
    return MetricsReport(mae_w=mae(pred.mu_w, ds.power_w), mape_pct=mape(pred.mu_w, ds.power_w),
                         n=len(ds), coverage=calibration(pred, ds.power_w, levels),
                         mean_sigma_w=float(np.mean(pred.sigma_w)))


# ── scatter export ─────────────────────────────────────────────────────


def scatter_rows(params: ModelParams, ds: Dataset, group_by: str = "p_max") -> list[dict]:
    """One row per sample: total DL load vs true and estimated power.

    ``group_by`` is ``"type_id"`` or ``"p_max"``; the p_max group label is the
    carrier maximum powers of the row joined with ``+``. Normalized columns
    divide by the model's power scale.
    """
    if group_by not in ("type_id", "p_max"):
        raise ValueError("group_by must be 'type_id' or 'p_max'")
    pred = predict(params, ds) if len(ds) else None
    truth = np.where(np.isnan(ds.true_power_w), ds.power_w, ds.true_power_w)
    scale = params.power_max_w
    rows = []
    for i in range(len(ds)):
        if group_by == "type_id":
            group = str(ds.type_id[i])
        else:
            group = "+".join(f"{p:g}" for p in ds.pmax_w[i][ds.present[i]])
        load = float(np.mean(ds.load[i][ds.present[i]]))
        rows.append({
            "aau_id": int(ds.aau_id[i]), "day": int(ds.day[i]), "hour": int(ds.hour[i]),
            "group": group, "load": load, "true_power_w": float(truth[i]),
            "est_power_w": float(pred.mu_w[i]),
            "true_power_norm": float(truth[i]) / scale,
            "est_power_norm": float(pred.mu_w[i]) / scale,
        })
    return rows


def write_scatter_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SCATTER_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})


def group_slopes(rows: list[dict], column: str) -> dict[str, tuple[float, float, float]]:
    """Least-squares ``column ~ a + b * load`` per group: ``{group: (intercept, slope, r2)}``."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["group"], []).append(r)
    out = {}
    for g, rs in sorted(groups.items()):
        x = np.array([r["load"] for r in rs])
        y = np.array([r[column] for r in rs])
        A = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
        out[g] = (float(coef[0]), float(coef[1]), r2)
    return out
