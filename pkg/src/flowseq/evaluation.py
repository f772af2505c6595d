"""Detection metrics, ROC/ECDF tables, compute cost and report rendering."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import AbstractLabel, N_CLASSES
from .model import ModelConfig

BENIGN = int(AbstractLabel.BENIGN)
DEFAULT_TARGET_FPR = 0.015


# ---------------------------------------------------------------------------
# counts

@dataclass
class BinaryMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: list[str] = field(default_factory=list)


def _binarize(classes) -> np.ndarray:
    a = np.asarray(classes)
    return a.astype(bool) if a.dtype == bool else a != BENIGN


def compute_metrics(predictions, truths) -> BinaryMetrics:
    """Malicious-vs-benign precision, recall and F1.

    Inputs are abstract class ids (anything but BENIGN is positive) or
    boolean malicious flags.
    """
    p, t = _binarize(predictions), _binarize(truths)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {t.shape} truths")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision undefined (no positive predictions)")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall undefined (no positive truths)")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        if not flags:
            flags.append("f1 undefined (precision + recall = 0)")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return BinaryMetrics(precision, recall, f1, tp, fp, fn, tn, flags)


def confusion(truths, predictions, n_classes: int = N_CLASSES, normalize: bool = False) -> np.ndarray:
    """Rows are true classes, columns predictions. Empty rows stay zero when normalized."""
    t = np.asarray(truths, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("length mismatch")
    cm = np.zeros((n_classes, n_classes), dtype=np.float64 if normalize else np.int64)
    np.add.at(cm, (t, p), 1)
    if normalize:
        rows = cm.sum(axis=1, keepdims=True)
        cm = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    return cm


def per_class_recall(truths, predictions, n_classes: int = N_CLASSES) -> list[Optional[float]]:
    cm = confusion(truths, predictions, n_classes)
    out: list[Optional[float]] = []
    for k in range(n_classes):
        n = cm[k].sum()
        out.append(float(cm[k, k] / n) if n else None)
    return out


# ---------------------------------------------------------------------------
# ROC

@dataclass
class ROC:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray        # point i uses "malicious iff score >= thresholds[i]"
    auc: Optional[float]
    flags: list[str] = field(default_factory=list)


def roc_curve(scores, truths) -> ROC:
    s = np.asarray(scores, dtype=np.float64)
    t = _binarize(truths)
    if s.shape != t.shape:
        raise ValueError("length mismatch")
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    thr = np.unique(s)[::-1]
    order = np.argsort(-s, kind="stable")
    s_sorted, t_sorted = s[order], t[order]
    # counts of positives/negatives with score >= each threshold
    idx = np.searchsorted(-s_sorted, -thr, side="right")
    tp = np.concatenate([[0], np.cumsum(t_sorted)])[idx]
    fp = np.concatenate([[0], np.cumsum(~t_sorted)])[idx]
    flags = []
    if n_pos == 0 or n_neg == 0:
        flags.append("single-class truth: AUC undefined")
        tpr = tp / n_pos if n_pos else np.zeros_like(tp, dtype=float)
        fpr = fp / n_neg if n_neg else np.zeros_like(fp, dtype=float)
        auc = None
    else:
        tpr, fpr = tp / n_pos, fp / n_neg
    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])
    thresholds = np.concatenate([[np.inf], thr])
    if not flags:
        auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return ROC(fpr, tpr, thresholds, auc, flags)


# ---------------------------------------------------------------------------
# ECDF at a target false-positive rate

@dataclass
class ECDFResult:
    threshold: float
    target_fpr: float
    achieved_fpr: float
    fnr_by_type: dict[str, float]
    tables: dict[str, tuple[np.ndarray, np.ndarray]]   # type -> (sorted scores, cumulative fraction)
    overall_fnr: float = 0.0
    flags: list[str] = field(default_factory=list)


def ecdf_threshold(benign_scores, target_fpr: float = DEFAULT_TARGET_FPR) -> tuple[float, float, list[str]]:
    """Smallest threshold whose benign false-positive rate is <= target.

    Malicious iff score >= threshold. Returns (threshold, achieved FPR, flags).
    """
    b = np.sort(np.asarray(benign_scores, dtype=np.float64))[::-1]
    n = b.size
    if n == 0:
        raise ValueError("no benign scores")
    if not 0 <= target_fpr < 1:
        raise ValueError("target FPR must be in [0, 1)")
    k = int(math.floor(target_fpr * n + 1e-9))      # benign samples allowed above threshold
    thr = float(np.nextafter(b[k], np.inf))
    achieved = float(np.count_nonzero(b >= thr)) / n
    flags = []
    if achieved < target_fpr - 1.0 / n:
        flags.append(f"ties in benign scores: nearest achievable FPR {achieved:.6f}")
    return thr, achieved, flags


def ecdf_by_type(scores, labels: Sequence[str], target_fpr: float = DEFAULT_TARGET_FPR,
                 benign_label: str = "benign") -> ECDFResult:
    s = np.asarray(scores, dtype=np.float64)
    labs = np.asarray(labels, dtype=object)
    if s.shape != labs.shape:
        raise ValueError("length mismatch")
    is_benign = labs == benign_label
    if not is_benign.any():
        raise ValueError("ECDF threshold needs benign samples")
    thr, achieved, flags = ecdf_threshold(s[is_benign], target_fpr)
    tables, fnr = {}, {}
    for typ in sorted(set(labs.tolist())):
        v = np.sort(s[labs == typ])
        tables[typ] = (v, np.arange(1, v.size + 1) / v.size)
        if typ != benign_label:
            fnr[typ] = float(np.count_nonzero(v < thr)) / v.size
    mal = ~is_benign
    overall = float(np.count_nonzero(s[mal] < thr)) / mal.sum() if mal.any() else 0.0
    return ECDFResult(thr, target_fpr, achieved, fnr, tables, overall, flags)


# ---------------------------------------------------------------------------
# compute cost

MAC_CONVENTION = ("1 MAC = one multiply-add; per flow (one timestep) of inference; "
                  "gate nonlinearities, normalization, pooling and bias adds not counted; "
                  "ConvLSTM counts both input and hidden convolutions over the full length")


@dataclass
class CostReport:
    macs: int
    parameters: int
    breakdown: dict[str, int]
    parameter_breakdown: dict[str, int]
    convention: str = MAC_CONVENTION

    def render(self) -> str:
        lines = [f"MACs per flow: {self.macs}", f"parameters: {self.parameters}",
                 f"convention: {self.convention}"]
        for name in self.breakdown:
            lines.append(f"  {name:<12} macs={self.breakdown[name]:>7} "
                         f"params={self.parameter_breakdown.get(name, 0):>7}")
        return "\n".join(lines)


def lstm_layer_macs(d: int, h: int) -> int:
    return 4 * h * (d + h)


def convlstm_layer_macs(length: int, k: int, c_in: int, c_out: int) -> int:
    return 4 * c_out * length * k * (c_in + c_out)


def count_macs(config: ModelConfig = ModelConfig()) -> CostReport:
    macs: dict[str, int] = {}
    params: dict[str, int] = {}
    d = config.n_features
    for i, h in enumerate(config.lstm_hidden):
        macs[f"lstm{i}"] = lstm_layer_macs(d, h)
        params[f"lstm{i}"] = 4 * h * (d + h) + 4 * h
        d = h
    c_in = 1
    for i, c in enumerate(config.conv_channels):
        macs[f"conv{i}"] = convlstm_layer_macs(config.n_features, config.kernel, c_in, c)
        params[f"conv{i}"] = 4 * c * config.kernel * (c_in + c) + 4 * c
        c_in = c
    n = config.fusion_dim
    macs["fusion"] = params["fusion"] = n * (config.conv_flat + config.lstm_hidden[-1])
    macs["head"] = n * config.n_classes
    params["head"] = n * config.n_classes + config.n_classes
    return CostReport(sum(macs.values()), sum(params.values()), macs, params)


def percentage_error_f1(f1_ij: float, f1_ii: float) -> float:
    """Relative F1 change (in percent) of test variant j against the matched baseline i."""
    if f1_ii <= 0:
        raise ValueError("PE undefined: baseline F1 is zero")
    return (f1_ij - f1_ii) / f1_ii * 100.0


# ---------------------------------------------------------------------------
# report

@dataclass
class EvaluationReport:
    name: str
    precision: float
    recall: float
    f1: float
    threshold: float
    n_flows: int
    per_class_recall: list[Optional[float]]
    confusion: list[list[int]]
    confusion_normalized: list[list[float]]
    auc: Optional[float]
    ecdf_threshold: Optional[float]
    ecdf_fpr: Optional[float]
    fnr_at_target: dict[str, float]
    macs: int
    parameters: int
    mac_convention: str = MAC_CONVENTION
    flags: list[str] = field(default_factory=list)
    roc: Optional[ROC] = field(default=None, repr=False)
    ecdf: Optional[ECDFResult] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("roc", "ecdf")}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        names = [lab.name for lab in AbstractLabel]
        lines = [
            f"report: {self.name}",
            f"flows: {self.n_flows}   threshold: {self.threshold:.4f}",
            f"precision {self.precision:.4f}  recall {self.recall:.4f}  f1 {self.f1:.4f}",
            f"auc: {'n/a' if self.auc is None else f'{self.auc:.4f}'}",
        ]
        if self.ecdf_threshold is not None:
            lines.append(f"threshold at target FPR: {self.ecdf_threshold:.6f} "
                         f"(achieved FPR {self.ecdf_fpr:.4f})")
            for typ, v in sorted(self.fnr_at_target.items()):
                lines.append(f"  miss rate {typ:<20} {v:.4f}")
        lines.append("per-class recall:")
        for nm, r in zip(names, self.per_class_recall):
            lines.append(f"  {nm:<16} {'n/a' if r is None else f'{r:.4f}'}")
        lines.append("confusion (rows = truth):")
        lines.append(" " * 18 + " ".join(f"{nm[:8]:>8}" for nm in names))
        for nm, row in zip(names, self.confusion):
            lines.append(f"  {nm:<16}" + " ".join(f"{v:>8}" for v in row))
        lines.append(f"MACs/flow {self.macs}  parameters {self.parameters}")
        lines.append(f"MAC convention: {self.mac_convention}")
        for f in self.flags:
            lines.append(f"note: {f}")
        return "\n".join(lines)

    def write_curves(self, prefix: str | os.PathLike) -> list[str]:
        """ROC and ECDF point lists as CSV; returns written paths."""
        written = []
        if self.roc is not None:
            p = f"{prefix}.roc.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["threshold", "fpr", "tpr"])
                for th, f, t in zip(self.roc.thresholds, self.roc.fpr, self.roc.tpr):
                    w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])
            written.append(p)
        if self.ecdf is not None:
            p = f"{prefix}.ecdf.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["type", "score", "cdf"])
                for typ, (v, c) in self.ecdf.tables.items():
                    for a, b in zip(v, c):
                        w.writerow([typ, repr(float(a)), repr(float(b))])
            written.append(p)
        return written


def build_report(name: str, true_class, pred_class, scores, labels: Sequence[str],
                 threshold: float, config: ModelConfig = ModelConfig(),
                 target_fpr: float = DEFAULT_TARGET_FPR) -> EvaluationReport:
    true_class = np.asarray(true_class, dtype=np.int64)
    pred_class = np.asarray(pred_class, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    flagged = scores >= threshold
    m = compute_metrics(flagged, true_class != BENIGN)
    roc = roc_curve(scores, true_class != BENIGN)
    flags = list(m.flags) + list(roc.flags)
    ecdf = None
    if np.any(np.asarray(labels) == "benign"):
        ecdf = ecdf_by_type(scores, list(labels), target_fpr)
        flags += ecdf.flags
    cost = count_macs(config)
    return EvaluationReport(
        name=name, precision=m.precision, recall=m.recall, f1=m.f1, threshold=threshold,
        n_flows=int(true_class.size),
        per_class_recall=per_class_recall(true_class, pred_class),
        confusion=confusion(true_class, pred_class).tolist(),
        confusion_normalized=confusion(true_class, pred_class, normalize=True).tolist(),
        auc=roc.auc,
        ecdf_threshold=ecdf.threshold if ecdf else None,
        ecdf_fpr=ecdf.achieved_fpr if ecdf else None,
        fnr_at_target=ecdf.fnr_by_type if ecdf else {},
        macs=cost.macs, parameters=cost.parameters, flags=flags, roc=roc, ecdf=ecdf)


def load_report(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# table layouts

def render_comparison_table(rows: dict[str, dict]) -> str:
    """Precision / recall / F1 per named run (one row each)."""
    out = [f"{'run':<32}{'precision':>10}{'recall':>10}{'f1':>10}"]
    for name, r in rows.items():
        out.append(f"{name:<32}{r['precision']:>10.4f}{r['recall']:>10.4f}{r['f1']:>10.4f}")
    return "\n".join(out)


def render_pe_table(multipliers: Sequence[int], pe: np.ndarray) -> str:
    """Percentage error matrix; rows = training variant, columns = test variant."""
    head = "train\\test" + "".join(f"{'m=' + str(m):>10}" for m in multipliers)
    out = [head]
    for i, mi in enumerate(multipliers):
        cells = "".join(f"{pe[i, j]:>9.2f}%" if np.isfinite(pe[i, j]) else f"{'invalid':>10}"
                        for j in range(len(multipliers)))
        out.append(f"{'m=' + str(mi):<10}{cells}")
    return "\n".join(out)
