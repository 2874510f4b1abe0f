"""Challenge score and the multilabel classification metric suite.

The generalized confusion matrix splits each record's unit of mass over
|predicted union true| cells; the challenge score is the weight-matrix
contraction of that matrix, optionally normalized between an
always-predict-normal classifier (0) and the perfect classifier (1).
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation

BETA_DEFAULT = 2.0


def multilabel_confusion(pred_sets: list, true_sets: list, n_classes: int,
                         allow_empty_pred: bool = False) -> np.ndarray:
    """a[i, j] += 1/|pred U true| for every (i in pred, j in true).

    Empty predicted sets are rejected (the binarizer guarantees non-empty
    output); ``allow_empty_pred`` exists for the truth-replay anchor, where
    a record with no scored labels legitimately contributes zero mass.
    """
    if len(pred_sets) != len(true_sets):
        raise ContractViolation("prediction and truth lists must align")
    a = np.zeros((n_classes, n_classes))
    for pred, true in zip(pred_sets, true_sets):
        if not pred:
            if allow_empty_pred:
                continue
            raise ContractViolation("predicted sets must be non-empty")
        norm = len(set(pred) | set(true))
        for i in pred:
            for j in true:
                a[i, j] += 1.0 / norm
    return a


def challenge_score(a: np.ndarray, w: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    if a.shape != w.shape:
        raise ContractViolation("confusion and weight matrices must share a shape")
    return float(np.sum(w * a))


def normalized_challenge_score(
    pred_sets: list,
    true_sets: list,
    w: np.ndarray,
    normal_index: int,
) -> tuple[float, float | None]:
    """(raw, normalized) challenge metric; normalized is None when undefined.

    Anchors: the perfect classifier scores 1 and the inactive classifier
    (always predicting only the normal class) scores 0.
    """
    n = w.shape[0]
    raw = challenge_score(multilabel_confusion(pred_sets, true_sets, n), w)
    raw_true = challenge_score(
        multilabel_confusion(true_sets, true_sets, n, allow_empty_pred=True), w)
    inactive = [{normal_index}] * len(true_sets)
    raw_inactive = challenge_score(multilabel_confusion(inactive, true_sets, n), w)
    if raw_true == raw_inactive:
        return raw, None
    return raw, (raw - raw_inactive) / (raw_true - raw_inactive)


def fbeta_gbeta(tp: float, fp: float, fn: float, beta: float = BETA_DEFAULT) -> tuple[float, float]:
    """Generalized F-beta and the challenge's G-beta measure from raw counts."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ContractViolation("counts must be non-negative")
    if tp + fp + fn == 0:
        raise ContractViolation("at least one count must be positive")
    b2 = beta * beta
    f_den = (1.0 + b2) * tp + fp + b2 * fn
    g_den = tp + fp + beta * fn
    fbeta = (1.0 + b2) * tp / f_den if f_den > 0 else 0.0
    gbeta = tp / g_den if g_den > 0 else 0.0
    return fbeta, gbeta


def auroc(scores: np.ndarray, y: np.ndarray) -> float:
    """Mann-Whitney rank AUROC with average ranks for tied scores."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ContractViolation("AUROC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[y == 1]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores: np.ndarray, y: np.ndarray) -> float:
    """Step integration of the precision envelope over recall, ties grouped."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or np.sum(y == 0) == 0:
        raise ContractViolation("AUPRC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = y[order]
    recalls, precisions = [], []
    tp = fp = 0
    i = 0
    while i < y_sorted.size:
        j = i
        while j + 1 < y_sorted.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp += int(np.sum(y_sorted[i:j + 1] == 1))
        fp += (j - i + 1) - int(np.sum(y_sorted[i:j + 1] == 1))
        recalls.append(tp / n_pos)
        precisions.append(tp / (tp + fp))
        i = j + 1
    env = np.maximum.accumulate(np.asarray(precisions)[::-1])[::-1]
    area = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, env):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def label_f1_and_accuracy(pred_sets: list, true_sets: list, n_classes: int) -> dict:
    """Exact-match accuracy plus per-label F1 and its unweighted macro mean.

    Labels that never occur in either predictions or truth have undefined F1
    and are excluded from the macro average.
    """
    if not pred_sets or len(pred_sets) != len(true_sets):
        raise ContractViolation("need equal-length non-empty lists")
    tp = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    fn = np.zeros(n_classes)
    exact = 0
    for pred, true in zip(pred_sets, true_sets):
        pred, true = set(pred), set(true)
        if pred == true:
            exact += 1
        for c in pred & true:
            tp[c] += 1
        for c in pred - true:
            fp[c] += 1
        for c in true - pred:
            fn[c] += 1
    per_label = np.full(n_classes, np.nan)
    for c in range(n_classes):
        if tp[c] + fp[c] + fn[c] > 0:
            per_label[c], _ = fbeta_gbeta(tp[c], fp[c], fn[c], beta=1.0)
    evaluable = ~np.isnan(per_label)
    return {
        "accuracy": exact / len(pred_sets),
        "per_label_f1": per_label,
        "macro_f1": float(per_label[evaluable].mean()) if evaluable.any() else 0.0,
        "tp": tp, "fp": fp, "fn": fn,
    }


def pearson_with_permutation_p(
    x: np.ndarray,
    y: np.ndarray,
    n_perm: int = 10000,
    seed: int = 0,
) -> tuple[float, float]:
    """Pearson r with a two-sided permutation p-value (add-one smoothed)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise ContractViolation("need matched samples of length >= 3")
    if x.std() == 0 or y.std() == 0:
        raise ContractViolation("zero variance makes the correlation undefined")

    def corr(a, b):
        return float(np.mean((a - a.mean()) * (b - b.mean())) / (a.std() * b.std()))

    r = corr(x, y)
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(n_perm):
        if abs(corr(x, y[rng.permutation(y.size)])) >= abs(r):
            count += 1
    return r, (count + 1) / (n_perm + 1)
