"""Detection and localization metrics (numpy)."""

import numpy as np
from scipy.special import softmax
from scipy.stats import rankdata


def auc(scores, labels):
    """Mann-Whitney ROC AUC with ties counted as 1/2; ``None`` for single-class input."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fake_probability(logits):
    return softmax(np.asarray(logits, dtype=np.float64), axis=1)[:, 1]


def detection_metrics(logits, labels):
    """(ACC, AUC) from (N, 2) image logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if len(labels) == 0:
        raise ValueError("detection metrics need at least one sample")
    acc = float(np.mean(logits.argmax(axis=1) == labels))
    return acc, auc(fake_probability(logits), labels)


def localization_metrics(pred_masks, gt_masks, labels, average="micro"):
    """(F1-f, IoU-f) of the fake class over manipulated samples only.

    ``micro`` pools TP/FP/FN over all manipulated pixels; ``macro`` averages
    per-image scores. Returns ``(None, None)`` without manipulated samples.
    """
    pred = np.asarray(pred_masks).astype(bool)
    gt = np.asarray(gt_masks).astype(bool)
    keep = np.asarray(labels).astype(bool)
    if not keep.any():
        return None, None
    pred, gt = pred[keep], gt[keep]
    axes = tuple(range(1, pred.ndim))
    tp = np.sum(pred & gt, axis=axes).astype(np.float64)
    fp = np.sum(pred & ~gt, axis=axes).astype(np.float64)
    fn = np.sum(~pred & gt, axis=axes).astype(np.float64)
    if average == "micro":
        tp, fp, fn = tp.sum(), fp.sum(), fn.sum()
    elif average != "macro":
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    denom_f1 = 2 * tp + fp + fn
    denom_iou = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom_f1 > 0, 2 * tp / np.maximum(denom_f1, 1), 0.0)
        iou = np.where(denom_iou > 0, tp / np.maximum(denom_iou, 1), 0.0)
    return float(np.mean(f1)), float(np.mean(iou))


def evaluate_predictions(logits, pred_masks, gt_masks, labels, average="micro"):
    """Metric report dict with ``acc``, ``auc``, ``f1_f``, ``iou_f`` (``None`` when undefined)."""
    acc, auc_value = detection_metrics(logits, labels)
    f1, iou = localization_metrics(pred_masks, gt_masks, labels, average=average)
    return {"acc": acc, "auc": auc_value, "f1_f": f1, "iou_f": iou}


def format_report(report):
    """Render a flat ``key=value`` report, one field per line, absent values as ``absent``."""
    lines = []
    for key in sorted(report):
        value = report[key]
        if value is None:
            text = "absent"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"
