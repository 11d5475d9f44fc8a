"""Detection metrics (tolerance-matched precision/recall/F1, localization MAE,
FP rate), F1-tolerance curves, and posterior calibration against stationary
trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import npe
from .dataset import PARAM_INDEX, StationaryRecord
from .errors import DataError
from .pipeline import DetectionConfig, estimate_trajectory


@dataclass
class MatchResult:
    """One-to-one greedy matching at tolerance delta."""

    pairs: list[tuple[int, int]]  # (prediction, truth)
    false_positives: list[int]
    false_negatives: list[int]
    delta: int


@dataclass
class MetricBundle:
    precision: float
    recall: float
    f1: float
    mae_steps: float
    fp_per_1000: float
    tp: int
    fp: int
    fn: int
    t: int

    def as_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "mae_steps": self.mae_steps, "fp_per_1000": self.fp_per_1000,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "t": self.t,
        }


def match(predictions, truths, delta: int) -> MatchResult:
    """Greedy one-to-one matching, globally nearest pair first.

    Candidate pairs with |p - t| <= delta are taken in ascending distance
    order; ties break on the earlier truth, then the earlier prediction.
    """
    preds = [int(p) for p in predictions]
    trs = [int(t) for t in truths]
    cand = sorted(
        (abs(p - t), t, p, i, j)
        for i, p in enumerate(preds)
        for j, t in enumerate(trs)
        if abs(p - t) <= delta
    )
    used_p, used_t = set(), set()
    pairs = []
    for _, t, p, i, j in cand:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        pairs.append((p, t))
    fps = [p for i, p in enumerate(preds) if i not in used_p]
    fns = [t for j, t in enumerate(trs) if j not in used_t]
    return MatchResult(pairs, fps, fns, int(delta))


def metrics(match_result: MatchResult, t: int) -> MetricBundle:
    """Precision/recall/F1 with zero-denominator conventions, matched-pair MAE,
    and FP per 1000 steps."""
    tp = len(match_result.pairs)
    fp = len(match_result.false_positives)
    fn = len(match_result.false_negatives)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    mae = (
        float(np.mean([abs(p - tr) for p, tr in match_result.pairs]))
        if match_result.pairs
        else float("nan")
    )
    return MetricBundle(
        precision=precision, recall=recall, f1=f1, mae_steps=mae,
        fp_per_1000=1000.0 * fp / t, tp=tp, fp=fp, fn=fn, t=int(t),
    )


def f1_delta_curve(predictions, truths, t: int, deltas) -> list[tuple[int, MetricBundle]]:
    """Metrics at each tolerance in ascending order."""
    out = []
    for delta in deltas:
        out.append((int(delta), metrics(match(predictions, truths, delta), t)))
    return out


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationReport:
    """Agreement of posterior point estimates with ground truth for one
    parameter kind: OLS of theta_hat on theta_true."""

    kind: str
    slope: float
    intercept: float
    r2: float
    mae: float
    points: np.ndarray  # (n, 2): theta_true, theta_hat

    def as_dict(self) -> dict:
        return {
            "kind": self.kind, "slope": self.slope, "intercept": self.intercept,
            "r2": self.r2, "mae": self.mae, "n": int(len(self.points)),
        }


def ols_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line y = slope*x + intercept plus R^2 of the fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    denom = float(np.sum(xc**2))
    slope = float(np.sum(xc * (y - y.mean())) / denom) if denom > 0 else 0.0
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-30 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def calibration_report(theta_true, theta_hat, kind: str) -> CalibrationReport:
    """Report from raw scatter points (used directly by injection tests)."""
    tt = np.asarray(theta_true, dtype=float)
    th = np.asarray(theta_hat, dtype=float)
    slope, intercept, r2 = ols_fit(tt, th)
    return CalibrationReport(
        kind=kind, slope=slope, intercept=intercept, r2=r2,
        mae=float(np.mean(np.abs(th - tt))), points=np.column_stack([tt, th]),
    )


def calibrate(
    corpus: list[StationaryRecord],
    model: npe.PosteriorModel,
    w: int = 100,
    s: int = 1,
    m_samples: int = 256,
    aggregator: str = "median",
    seed: int = 0,
) -> CalibrationReport:
    """Per trajectory: sliding-window point estimates over central windows only
    (the first and last floor(w/2) windows are dropped to avoid boundary
    effects), then the median across windows as the single estimate."""
    if not corpus:
        raise DataError("stationary corpus is empty")
    kind = corpus[0].kind
    dim = PARAM_INDEX[kind]
    edge = w // 2
    truths, hats = [], []
    for rec in corpus:
        config = DetectionConfig(
            w=w, s=s, m_samples=m_samples, aggregator=aggregator, varying_dim=kind, seed=seed,
        )
        child = int(np.random.SeedSequence([seed, rec.index]).generate_state(1)[0])
        pt = estimate_trajectory(rec.trajectory, model, config, seed=child)
        if len(pt) <= 2 * edge:
            raise DataError(
                f"trajectory {rec.index}: {len(pt)} windows, too short to exclude {edge} per side"
            )
        central = pt.estimates[edge : len(pt) - edge, dim]
        truths.append(rec.params.as_array()[dim])
        hats.append(float(np.median(central)))
    return calibration_report(truths, hats, kind)
