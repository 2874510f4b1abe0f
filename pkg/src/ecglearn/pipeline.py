"""Two-phase training protocol with similarity-weighted samples.

Per run: split 85:15, train one binary classifier per label on all features
(phase one), average the per-label gain importances, keep the top-K features,
retrain on that subset (phase two), and score the validation split. Runs are
independent and seeded, so repeating the protocol is deterministic end to end.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sklearn.base import BaseEstimator

from .assemble import FeatureMatrix
from .boosting import GbdtParams, fit_boosted, importance_gain, predict_proba
from .errors import ContractViolation, PipelineError, PriorMismatch, SkippedLabel
from .features import manifest_hash
from .metrics import (
    auprc, auroc, fbeta_gbeta, label_f1_and_accuracy, normalized_challenge_score,
)

POSITIVE_SIMILARITY_THRESHOLD = 0.5
CROSS_CLASS_WEIGHT = 0.5


@dataclass(frozen=True)
class RunConfig:
    n_runs: int = 100
    split_ratio: float = 0.85
    top_k: int = 1000
    base_seed: int = 0
    gbdt: GbdtParams = field(default_factory=GbdtParams)
    threshold: float = 0.5
    n_jobs: int = 1
    normal_index: int | None = None  # anchor label for score normalization

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ContractViolation("split ratio must lie in (0, 1)")
        if self.top_k < 1:
            raise ContractViolation("top_k must be >= 1")
        if self.n_runs < 1:
            raise ContractViolation("n_runs must be >= 1")


def build_sample_weights(target: int, record_labels, w: np.ndarray) -> tuple[int, float]:
    """Label and weight of one record for one target classifier.

    Records carrying the target itself are positives with weight 1. Records
    whose best similarity to the target reaches 0.5 are positives with weight
    0.5. Everything else (including unlabeled records) is a negative with
    weight 1.
    """
    labels = set(record_labels)
    if target in labels:
        return 1, 1.0
    if labels:
        best = max(w[target, j] for j in labels)
        if best >= POSITIVE_SIMILARITY_THRESHOLD:
            return 1, CROSS_CLASS_WEIGHT
    return 0, 1.0


def batch_sample_weights(target: int, label_matrix: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`build_sample_weights` over a binary label matrix."""
    lm = np.asarray(label_matrix, dtype=bool)
    sim = np.where(lm, w[target][None, :], -np.inf).max(axis=1)
    own = lm[:, target]
    y = (own | (sim >= POSITIVE_SIMILARITY_THRESHOLD)).astype(int)
    weights = np.where(own, 1.0, np.where(y == 1, CROSS_CLASS_WEIGHT, 1.0))
    return y, weights


def scale_pos_weight(y: np.ndarray, w: np.ndarray) -> float:
    """Negative/positive count ratio; positives' weights get multiplied by it."""
    y = np.asarray(y)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0:
        raise SkippedLabel("no positive examples in the training split")
    if n_neg == 0:
        return 1.0  # one-class split; the trainer flags the degenerate model
    return n_neg / n_pos


def split_85_15(n: int, seed: int, ratio: float = 0.85) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform shuffle; first ceil(ratio*n) indices train, rest validate."""
    if n < 20:
        raise ContractViolation("need at least 20 records to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.ceil(ratio * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def binarize(scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold scores; an empty result falls back to the argmax label."""
    scores = np.asarray(scores, dtype=float)
    out = (scores >= threshold).astype(int)
    if out.sum() == 0:
        out[int(np.argmax(scores))] = 1
    return out


def select_top_k(importance: np.ndarray, k: int) -> np.ndarray:
    """Ascending indices of the k largest importances; ties keep lower indices."""
    importance = np.asarray(importance, dtype=float)
    if k > importance.size:
        raise ContractViolation("k exceeds the number of features")
    ranked = np.argsort(-importance, kind="stable")
    return np.sort(ranked[:k])


@dataclass
class PhaseResult:
    models: dict                      # label index -> BoostedModel or None (skipped)
    importance_mean: np.ndarray
    metrics: dict
    skipped: list
    manifest_hash: str
    feature_idx: np.ndarray           # columns (into the full matrix) this phase used


def _train_one_label(
    label: int,
    x_train: np.ndarray,
    x_valid: np.ndarray,
    label_matrix_train: np.ndarray,
    label_matrix_valid: np.ndarray,
    w_matrix: np.ndarray,
    gbdt: GbdtParams,
    seed: int,
):
    y_tr, wt_tr = batch_sample_weights(label, label_matrix_train, w_matrix)
    y_va, wt_va = batch_sample_weights(label, label_matrix_valid, w_matrix)
    try:
        factor = scale_pos_weight(y_tr, wt_tr)
    except SkippedLabel:
        return label, None, None
    wt_tr = np.where(y_tr == 1, wt_tr * factor, wt_tr)
    wt_va = np.where(y_va == 1, wt_va * factor, wt_va)
    label_seed = int(np.random.default_rng([seed, label]).integers(0, 2 ** 31 - 1))
    model = fit_boosted(x_train, y_tr.astype(float), wt_tr, gbdt, label_seed,
                        x_valid=x_valid, y_valid=y_va.astype(float), w_valid=wt_va)
    scores = predict_proba(model, x_valid)
    return label, model, scores


def _train_one_label_star(args):
    return _train_one_label(*args)


def _phase_metrics(
    score_matrix: np.ndarray,
    label_matrix_valid: np.ndarray,
    w_matrix: np.ndarray,
    normal_index: int,
    threshold: float,
) -> dict:
    n_labels = w_matrix.shape[0]
    pred_sets = [set(np.nonzero(binarize(row, threshold))[0]) for row in score_matrix]
    true_sets = [set(np.nonzero(row)[0]) for row in label_matrix_valid]
    f1 = label_f1_and_accuracy(pred_sets, true_sets, n_labels)
    raw, normalized = normalized_challenge_score(pred_sets, true_sets, w_matrix, normal_index)

    per_auroc = np.full(n_labels, np.nan)
    per_auprc = np.full(n_labels, np.nan)
    per_fbeta = np.full(n_labels, np.nan)
    per_gbeta = np.full(n_labels, np.nan)
    for c in range(n_labels):
        truth = label_matrix_valid[:, c].astype(int)
        if 0 < truth.sum() < truth.size:
            per_auroc[c] = auroc(score_matrix[:, c], truth)
            per_auprc[c] = auprc(score_matrix[:, c], truth)
        if f1["tp"][c] + f1["fp"][c] + f1["fn"][c] > 0:
            per_fbeta[c], per_gbeta[c] = fbeta_gbeta(f1["tp"][c], f1["fp"][c], f1["fn"][c])

    def nanmean(v):
        return float(np.nanmean(v)) if not np.isnan(v).all() else 0.0

    return {
        "accuracy": f1["accuracy"],
        "macro_f1": f1["macro_f1"],
        "per_label_f1": f1["per_label_f1"],
        "auroc_mean": nanmean(per_auroc),
        "auprc_mean": nanmean(per_auprc),
        "fbeta_mean": nanmean(per_fbeta),
        "gbeta_mean": nanmean(per_gbeta),
        "per_label_auroc": per_auroc,
        "per_label_auprc": per_auprc,
        "challenge_raw": raw,
        "challenge_normalized": normalized,
    }


def _run_phase(
    matrix: FeatureMatrix,
    label_matrix: np.ndarray,
    w_matrix: np.ndarray,
    config: RunConfig,
    seed: int,
    normal_index: int,
    feature_idx: np.ndarray,
) -> PhaseResult:
    n_labels = w_matrix.shape[0]
    train_idx, valid_idx = split_85_15(len(matrix.ids), seed, config.split_ratio)
    x_all = matrix.values[:, feature_idx]
    x_train, x_valid = x_all[train_idx], x_all[valid_idx]
    lm_train, lm_valid = label_matrix[train_idx], label_matrix[valid_idx]

    jobs = [(c, x_train, x_valid, lm_train, lm_valid, w_matrix, config.gbdt, seed)
            for c in range(n_labels)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_train_one_label_star, jobs))
    else:
        results = [_train_one_label(*job) for job in jobs]

    models: dict = {}
    skipped = []
    importances = []
    score_matrix = np.zeros((len(valid_idx), n_labels))
    phase_hash = manifest_hash([matrix.columns[i] for i in feature_idx])
    for label, model, scores in results:
        if model is None:
            models[label] = None
            skipped.append(label)
            continue
        model.manifest_hash = phase_hash
        models[label] = model
        importances.append(importance_gain(model, len(feature_idx)))
        score_matrix[:, label] = scores
    if not importances:
        raise PipelineError("every label was skipped; no models trained")
    return PhaseResult(
        models=models,
        importance_mean=np.mean(importances, axis=0),
        metrics=_phase_metrics(score_matrix, lm_valid, w_matrix, normal_index, config.threshold),
        skipped=skipped,
        manifest_hash=phase_hash,
        feature_idx=feature_idx,
    )


def phase_one(
    matrix: FeatureMatrix,
    label_matrix: np.ndarray,
    w_matrix: np.ndarray,
    config: RunConfig,
    seed: int,
    normal_index: int,
) -> PhaseResult:
    """All-feature training pass whose product is the mean gain importance."""
    return _run_phase(matrix, label_matrix, w_matrix, config, seed, normal_index,
                      np.arange(len(matrix.columns)))


def phase_two(
    matrix: FeatureMatrix,
    label_matrix: np.ndarray,
    w_matrix: np.ndarray,
    config: RunConfig,
    seed: int,
    normal_index: int,
    feature_idx: np.ndarray,
) -> PhaseResult:
    """Retraining pass on the distilled feature subset, same split as phase one."""
    return _run_phase(matrix, label_matrix, w_matrix, config, seed, normal_index,
                      np.asarray(feature_idx))


@dataclass
class RunResult:
    run_index: int
    seed: int
    phase1: PhaseResult
    phase2: PhaseResult
    top_k_idx: np.ndarray


def resolve_normal_index(config: RunConfig, n_labels: int) -> int:
    """Anchor label for normalization: configured, else SNR when the table fits, else 0."""
    if config.normal_index is not None:
        return config.normal_index
    from .labels import default_label_table
    table = default_label_table()
    return table.normal_index if n_labels == len(table) else 0


def run_once(
    matrix: FeatureMatrix,
    label_matrix: np.ndarray,
    w_matrix: np.ndarray,
    config: RunConfig,
    run_index: int,
) -> RunResult:
    seed = config.base_seed + run_index
    normal_index = resolve_normal_index(config, w_matrix.shape[0])
    p1 = phase_one(matrix, label_matrix, w_matrix, config, seed, normal_index)
    k = min(config.top_k, len(matrix.columns))
    top = select_top_k(p1.importance_mean, k)
    p2 = phase_two(matrix, label_matrix, w_matrix, config, seed, normal_index, top)
    return RunResult(run_index, seed, p1, p2, top)


@dataclass
class RunReport:
    results: list
    failures: list  # (run_index, message)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def run_repeated(
    matrix: FeatureMatrix,
    label_matrix: np.ndarray,
    w_matrix: np.ndarray,
    config: RunConfig,
) -> RunReport:
    """The repeated random-subsampling protocol; per-run seed = base_seed + index."""
    results = []
    failures = []
    for run_index in range(config.n_runs):
        try:
            results.append(run_once(matrix, label_matrix, w_matrix, config, run_index))
        except (PipelineError, ContractViolation) as exc:
            failures.append((run_index, str(exc)))
    if not results:
        raise PipelineError("all runs failed")
    return RunReport(results=results, failures=failures)


# --- importance prior (precomputed phase-one distillation) -------------------

@dataclass
class ImportancePrior:
    importance: np.ndarray
    manifest_hash: str


def build_importance_prior(importances: list, manifest_hash_value: str) -> ImportancePrior:
    """Average archived phase-one importance vectors into a reusable prior."""
    if not importances:
        raise ContractViolation("need at least one archived importance vector")
    stacked = np.vstack(importances)
    return ImportancePrior(importance=stacked.mean(axis=0), manifest_hash=manifest_hash_value)


def save_prior(path, prior: ImportancePrior, columns: list) -> None:
    with open(path, "w") as fh:
        fh.write(f"# manifest_hash={prior.manifest_hash}\n")
        fh.write("feature,mean_importance\n")
        for name, value in zip(columns, prior.importance):
            fh.write(f"{name},{value:.17g}\n")


def load_prior(path) -> ImportancePrior:
    values = []
    stored_hash = ""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# manifest_hash="):
                stored_hash = line.split("=", 1)[1]
            elif line and not line.startswith("#") and not line.startswith("feature,"):
                values.append(float(line.rsplit(",", 1)[1]))
    return ImportancePrior(importance=np.asarray(values), manifest_hash=stored_hash)


def train_with_prior(
    matrix: FeatureMatrix,
    label_matrix: np.ndarray,
    w_matrix: np.ndarray,
    prior: ImportancePrior,
    config: RunConfig,
    seed: int | None = None,
) -> PhaseResult:
    """Skip phase one entirely: distill from the prior, train phase two only."""
    if prior.manifest_hash != matrix.hash:
        raise PriorMismatch(
            f"prior was built for manifest {prior.manifest_hash!r}, data has {matrix.hash!r}")
    if prior.importance.size != len(matrix.columns):
        raise PriorMismatch("prior length does not match the feature matrix")
    seed = config.base_seed if seed is None else seed
    k = min(config.top_k, len(matrix.columns))
    top = select_top_k(prior.importance, k)
    return phase_two(matrix, label_matrix, w_matrix, config, seed,
                     resolve_normal_index(config, w_matrix.shape[0]), top)


def predict_scores(models: dict, x: np.ndarray, n_labels: int) -> np.ndarray:
    """Per-label probabilities; labels without a model score 0."""
    scores = np.zeros((x.shape[0], n_labels))
    for label, model in models.items():
        if model is not None:
            scores[:, label] = predict_proba(model, x)
    return scores


class TwoPhaseEcgClassifier(BaseEstimator):
    """One two-phase training cycle behind a fit/predict estimator surface.

    ``fit`` takes the feature matrix and a binary label matrix; predictions
    are per-label probabilities restricted to the distilled feature subset.
    """

    def __init__(self, weight_matrix=None, top_k=1000, threshold=0.5,
                 gbdt_params=None, random_state=0):
        self.weight_matrix = weight_matrix
        self.top_k = top_k
        self.threshold = threshold
        self.gbdt_params = gbdt_params
        self.random_state = random_state

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=bool)
        if X.shape[0] != Y.shape[0]:
            raise ContractViolation("X and Y must align")
        w = np.asarray(self.weight_matrix, dtype=float) if self.weight_matrix is not None \
            else np.eye(Y.shape[1])
        config = RunConfig(
            n_runs=1, top_k=min(self.top_k, X.shape[1]), threshold=self.threshold,
            gbdt=self.gbdt_params or GbdtParams(), base_seed=self.random_state,
        )
        matrix = FeatureMatrix(
            ids=[str(i) for i in range(X.shape[0])],
            columns=[f"f{i}" for i in range(X.shape[1])],
            values=X,
        )
        result = run_once(matrix, Y, w, config, 0)
        self.result_ = result
        self.feature_idx_ = result.top_k_idx
        self.n_labels_ = Y.shape[1]
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)[:, self.feature_idx_]
        return predict_scores(self.result_.phase2.models, X, self.n_labels_)

    def predict(self, X):
        scores = self.predict_proba(X)
        return np.vstack([binarize(row, self.threshold) for row in scores])
