"""Gradient-boosted regression trees with a second-order binary logistic objective.

Split finding is exact greedy: every midpoint between consecutive distinct
feature values is a candidate, scanned from presorted column order. Ties in
gain resolve to the lowest feature index, then the lowest threshold, so serial
and parallel callers agree bit-for-bit. Rows are drawn each round with
probability proportional to the regularized absolute gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ContractViolation, ManifestMismatch

MARGIN_CLAMP = 30.0
PROB_EPS = 1e-6


@dataclass(frozen=True)
class GbdtParams:
    max_depth: int = 6
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_hessian: float = 1.0
    n_rounds: int = 500
    early_stopping_rounds: int = 20
    sample_rate: float = 0.8
    sample_eps_frac: float = 0.01  # epsilon = frac * mean(|g|) per round


@dataclass
class Tree:
    """Flat array tree; ``feature[i] < 0`` marks node ``i`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        return _predict_tree(self.feature, self.threshold, self.left, self.right,
                             self.value, x)


@dataclass
class BoostedModel:
    trees: list
    learning_rate: float
    base_score: float
    best_iteration: int
    n_features: int
    params: GbdtParams
    manifest_hash: str = ""
    degenerate: bool = False
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)


def sigmoid(margin: np.ndarray) -> np.ndarray:
    clamped = np.clip(margin, -MARGIN_CLAMP, MARGIN_CLAMP)
    return 1.0 / (1.0 + np.exp(-clamped))


def logistic_grad_hess(margin: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted first/second derivatives of the binary logistic loss wrt the margin."""
    p = sigmoid(np.asarray(margin, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ContractViolation("instance weights must be non-negative")
    return w * (p - y), w * p * (1.0 - p)


def weighted_logloss(margin: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    p = sigmoid(margin)
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    ll = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(np.sum(w * ll) / np.sum(w))


def split_gain(g_l: float, h_l: float, g_r: float, h_r: float,
               reg_lambda: float, gamma: float) -> float:
    """Second-order structural gain of a candidate split, minus the gamma penalty."""
    if h_l < 0 or h_r < 0:
        raise ContractViolation("hessian sums must be non-negative")
    g_p, h_p = g_l + g_r, h_l + h_r
    return 0.5 * (g_l ** 2 / (h_l + reg_lambda)
                  + g_r ** 2 / (h_r + reg_lambda)
                  - g_p ** 2 / (h_p + reg_lambda)) - gamma


@numba.njit(cache=True)
def _grow_tree(x_t, order_t, g, h, node_of_row, max_depth, lam, gamma, min_child_h):
    n_feat, n = x_t.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feat_arr = np.full(max_nodes, -1, np.int32)
    thr_arr = np.zeros(max_nodes)
    left_arr = np.full(max_nodes, -1, np.int32)
    right_arr = np.full(max_nodes, -1, np.int32)
    val_arr = np.zeros(max_nodes)
    gain_arr = np.zeros(max_nodes)
    node_g = np.zeros(max_nodes)
    node_h = np.zeros(max_nodes)

    for i in range(n):
        if node_of_row[i] == 0:
            node_g[0] += g[i]
            node_h[0] += h[i]

    level_start = 0
    level_count = 1
    next_free = 1
    for _ in range(max_depth):
        if level_count == 0:
            break
        k = level_count
        best_gain = np.zeros(k)
        best_feat = np.full(k, -1, np.int32)
        best_thr = np.zeros(k)
        run_g = np.zeros(k)
        run_h = np.zeros(k)
        seen = np.zeros(k, np.int64)
        prev_val = np.zeros(k)
        for fi in range(n_feat):
            for s in range(k):
                run_g[s] = 0.0
                run_h[s] = 0.0
                seen[s] = 0
            col = order_t[fi]
            vals = x_t[fi]
            for ii in range(n):
                row = col[ii]
                nd = node_of_row[row]
                if nd < 0:
                    continue
                s = nd - level_start
                v = vals[row]
                if seen[s] > 0 and v > prev_val[s]:
                    gl = run_g[s]
                    hl = run_h[s]
                    gr = node_g[nd] - gl
                    hr = node_h[nd] - hl
                    if hl >= min_child_h and hr >= min_child_h:
                        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                                      - (gl + gr) * (gl + gr) / (hl + hr + lam)) - gamma
                        if gain > best_gain[s]:
                            best_gain[s] = gain
                            best_feat[s] = fi
                            thr = 0.5 * (prev_val[s] + v)
                            if thr <= prev_val[s]:  # adjacent floats: keep both sides non-empty
                                thr = v
                            best_thr[s] = thr
                run_g[s] += g[row]
                run_h[s] += h[row]
                seen[s] += 1
                prev_val[s] = v
        new_start = next_free
        for s in range(k):
            nd = level_start + s
            if best_feat[s] < 0:
                val_arr[nd] = -node_g[nd] / (node_h[nd] + lam)
            else:
                feat_arr[nd] = best_feat[s]
                thr_arr[nd] = best_thr[s]
                gain_arr[nd] = best_gain[s]
                left_arr[nd] = next_free
                right_arr[nd] = next_free + 1
                next_free += 2
        for row in range(n):
            nd = node_of_row[row]
            if nd < 0:
                continue
            fi = feat_arr[nd]
            if fi < 0:
                node_of_row[row] = -1
            else:
                if x_t[fi, row] < thr_arr[nd]:
                    child = left_arr[nd]
                else:
                    child = right_arr[nd]
                node_of_row[row] = child
                node_g[child] += g[row]
                node_h[child] += h[row]
        level_start = new_start
        level_count = next_free - new_start

    for s in range(level_count):
        nd = level_start + s
        val_arr[nd] = -node_g[nd] / (node_h[nd] + lam)
    return (feat_arr[:next_free], thr_arr[:next_free], left_arr[:next_free],
            right_arr[:next_free], val_arr[:next_free], gain_arr[:next_free])


@numba.njit(cache=True)
def _predict_tree(feat, thr, left, right, val, x):
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        nd = 0
        while feat[nd] >= 0:
            if x[i, feat[nd]] < thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = val[nd]
    return out


def _presort(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(features x rows) value matrix and stable per-feature row order."""
    x_t = np.ascontiguousarray(x.T, dtype=float)
    order_t = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T).astype(np.int32)
    return x_t, order_t


def fit_tree(
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    params: GbdtParams,
    active_rows: np.ndarray | None = None,
    _presorted: tuple | None = None,
) -> Tree:
    """Grow one exact-greedy tree on the given gradient/hessian vectors."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    node_of_row = np.zeros(n, dtype=np.int32)
    if active_rows is not None:
        node_of_row[:] = -1
        node_of_row[np.asarray(active_rows)] = 0
    if not np.any(node_of_row == 0):
        raise ContractViolation("fit_tree needs at least one active row")
    x_t, order_t = _presorted if _presorted is not None else _presort(x)
    arrays = _grow_tree(
        x_t, order_t,
        np.ascontiguousarray(g, dtype=float), np.ascontiguousarray(h, dtype=float),
        node_of_row,
        params.max_depth, params.reg_lambda, params.gamma, params.min_child_hessian,
    )
    return Tree(*arrays)


def gradient_sample(
    g: np.ndarray,
    rate: float,
    eps: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Sample rows without replacement, probability proportional to |g| + eps.

    Returns (sorted row indices, rescale factor). The factor restores the
    total regularized gradient mass, so the sampled sums are unbiased-ish
    stand-ins for the full-data sums; at rate 1 it is exactly 1.
    """
    g = np.asarray(g, dtype=float)
    n = g.size
    if not 0.0 < rate <= 1.0:
        raise ContractViolation("sample rate must lie in (0, 1]")
    k = int(np.ceil(rate * n))
    if k < 1:
        raise ContractViolation("rate * n must be at least 1")
    if k >= n:
        return np.arange(n), 1.0
    weights = np.abs(g) + eps
    total = weights.sum()
    if total == 0.0:  # all gradients zero and eps 0: uniform fallback
        return np.sort(rng.choice(n, size=k, replace=False)), 1.0
    positive = np.nonzero(weights > 0)[0]
    if positive.size <= k:
        zeros = np.nonzero(weights == 0)[0]
        fill = rng.choice(zeros, size=k - positive.size, replace=False)
        idx = np.sort(np.concatenate([positive, fill]))
    else:
        idx = np.sort(rng.choice(n, size=k, replace=False, p=weights / total))
    selected = weights[idx].sum()
    factor = total / selected if selected > 0 else 1.0
    return idx, factor


def _logit(p: float) -> float:
    p = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
    return float(np.log(p / (1.0 - p)))


def fit_boosted(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    params: GbdtParams,
    seed: int,
    x_valid: np.ndarray | None = None,
    y_valid: np.ndarray | None = None,
    w_valid: np.ndarray | None = None,
) -> BoostedModel:
    """Boosting loop: sample rows, fit a tree to (g, h), track validation loss.

    Stops once the weighted validation logloss has not improved for
    ``early_stopping_rounds`` consecutive rounds; ``best_iteration`` indexes
    the loss minimum and governs prediction and importance.
    """
    x = np.ascontiguousarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size or y.size != w.size:
        raise ContractViolation("x, y, w shapes disagree")
    if params.early_stopping_rounds > 0 and (x_valid is None or len(x_valid) == 0):
        raise ContractViolation("early stopping needs a non-empty validation set")
    rng = np.random.default_rng(seed)
    n = y.size

    pos_rate = float(np.sum(w * y) / np.sum(w))
    base = _logit(pos_rate)
    model = BoostedModel(
        trees=[], learning_rate=params.learning_rate, base_score=base,
        best_iteration=0, n_features=x.shape[1], params=params,
    )
    if len(np.unique(y)) < 2:
        model.degenerate = True
        return model

    have_valid = x_valid is not None and len(x_valid) > 0
    if have_valid:
        x_valid = np.ascontiguousarray(x_valid, dtype=float)
        y_valid = np.asarray(y_valid, dtype=float)
        w_valid = np.asarray(w_valid, dtype=float) if w_valid is not None else np.ones(y_valid.size)

    presorted = _presort(x)
    margin = np.full(n, base)
    margin_valid = np.full(len(x_valid), base) if have_valid else None
    best_loss = np.inf
    stale = 0
    for round_idx in range(params.n_rounds):
        g, h = logistic_grad_hess(margin, y, w)
        eps = params.sample_eps_frac * float(np.mean(np.abs(g)))
        idx, factor = gradient_sample(g, params.sample_rate, eps, rng)
        g_s = np.zeros(n)
        h_s = np.zeros(n)
        g_s[idx] = g[idx] * factor
        h_s[idx] = h[idx] * factor
        tree = fit_tree(x, g_s, h_s, params, active_rows=idx, _presorted=presorted)
        model.trees.append(tree)
        margin = margin + params.learning_rate * tree.predict(x)
        model.train_loss.append(weighted_logloss(margin, y, w))
        if have_valid:
            margin_valid = margin_valid + params.learning_rate * tree.predict(x_valid)
            loss = weighted_logloss(margin_valid, y_valid, w_valid)
            model.valid_loss.append(loss)
            if loss < best_loss:
                best_loss = loss
                model.best_iteration = round_idx + 1
                stale = 0
            else:
                stale += 1
                if params.early_stopping_rounds > 0 and stale >= params.early_stopping_rounds:
                    break
        else:
            model.best_iteration = round_idx + 1
    return model


def predict_margin(model: BoostedModel, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ContractViolation(
            f"expected {model.n_features} feature columns, got {x.shape}")
    margin = np.full(x.shape[0], model.base_score)
    for tree in model.trees[: model.best_iteration]:
        margin += model.learning_rate * tree.predict(x)
    return margin


def predict_proba(model: BoostedModel, x: np.ndarray) -> np.ndarray:
    """Probability of the positive class, always inside (0, 1)."""
    return sigmoid(predict_margin(model, x))


def importance_gain(model: BoostedModel, n_features: int | None = None) -> np.ndarray:
    """Per-feature total split gain over the trees up to ``best_iteration``."""
    n_features = n_features or model.n_features
    imp = np.zeros(n_features)
    for tree in model.trees[: model.best_iteration]:
        internal = tree.feature >= 0
        np.add.at(imp, tree.feature[internal], tree.gain[internal])
    return imp


# --- model persistence -------------------------------------------------------

_FORMAT_TAG = "ecglearn-model v1"


def _write_subtree(lines: list, tree: Tree, node: int) -> None:
    if tree.feature[node] < 0:
        lines.append(f"L {tree.value[node]:.17g}")
    else:
        lines.append(f"S {tree.feature[node]} {tree.threshold[node]:.17g} {tree.gain[node]:.17g}")
        _write_subtree(lines, tree, tree.left[node])
        _write_subtree(lines, tree, tree.right[node])


def save_model_text(model: BoostedModel) -> str:
    """Versioned text serialization: header lines, then one preorder block per tree."""
    lines = [
        _FORMAT_TAG,
        f"manifest_hash {model.manifest_hash}",
        f"n_features {model.n_features}",
        f"base_score {model.base_score:.17g}",
        f"learning_rate {model.learning_rate:.17g}",
        f"best_iteration {model.best_iteration}",
        f"degenerate {int(model.degenerate)}",
        f"n_trees {len(model.trees)}",
    ]
    for i, tree in enumerate(model.trees):
        lines.append(f"tree {i} {tree.n_nodes}")
        _write_subtree(lines, tree, 0)
    return "\n".join(lines) + "\n"


def _read_subtree(lines: list, pos: int, nodes: list) -> tuple[int, int]:
    token = lines[pos].split()
    me = len(nodes)
    if token[0] == "L":
        nodes.append([-1, 0.0, -1, -1, float(token[1]), 0.0])
        return me, pos + 1
    nodes.append([int(token[1]), float(token[2]), -1, -1, 0.0, float(token[3])])
    left, pos = _read_subtree(lines, pos + 1, nodes)
    right, pos = _read_subtree(lines, pos, nodes)
    nodes[me][2] = left
    nodes[me][3] = right
    return me, pos


def load_model_text(text: str, expected_manifest_hash: str | None = None) -> BoostedModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise ContractViolation("not an ecglearn model file")
    header = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tree "):
        key, _, value = lines[pos].partition(" ")
        header[key] = value
        pos += 1
    stored_hash = header.get("manifest_hash", "")
    if expected_manifest_hash is not None and stored_hash != expected_manifest_hash:
        raise ManifestMismatch(
            f"model built against manifest {stored_hash!r}, expected {expected_manifest_hash!r}")
    model = BoostedModel(
        trees=[],
        learning_rate=float(header["learning_rate"]),
        base_score=float(header["base_score"]),
        best_iteration=int(header["best_iteration"]),
        n_features=int(header["n_features"]),
        params=GbdtParams(),
        manifest_hash=stored_hash,
        degenerate=bool(int(header.get("degenerate", "0"))),
    )
    n_trees = int(header["n_trees"])
    for _ in range(n_trees):
        if not lines[pos].startswith("tree "):
            raise ContractViolation("malformed model file: missing tree block")
        pos += 1
        nodes: list = []
        _, pos = _read_subtree(lines, pos, nodes)
        model.trees.append(Tree(
            feature=np.array([r[0] for r in nodes], dtype=np.int32),
            threshold=np.array([r[1] for r in nodes]),
            left=np.array([r[2] for r in nodes], dtype=np.int32),
            right=np.array([r[3] for r in nodes], dtype=np.int32),
            value=np.array([r[4] for r in nodes]),
            gain=np.array([r[5] for r in nodes]),
        ))
    return model


class BoostedTreesClassifier(BaseEstimator, ClassifierMixin):
    """Scikit-learn style front end over :func:`fit_boosted` (binary labels)."""

    def __init__(self, max_depth=6, learning_rate=0.1, reg_lambda=1.0, gamma=0.0,
                 min_child_hessian=1.0, n_rounds=500, early_stopping_rounds=20,
                 sample_rate=0.8, sample_eps_frac=0.01, random_state=0):
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_hessian = min_child_hessian
        self.n_rounds = n_rounds
        self.early_stopping_rounds = early_stopping_rounds
        self.sample_rate = sample_rate
        self.sample_eps_frac = sample_eps_frac
        self.random_state = random_state

    def _params(self) -> GbdtParams:
        return GbdtParams(
            max_depth=self.max_depth, learning_rate=self.learning_rate,
            reg_lambda=self.reg_lambda, gamma=self.gamma,
            min_child_hessian=self.min_child_hessian, n_rounds=self.n_rounds,
            early_stopping_rounds=self.early_stopping_rounds,
            sample_rate=self.sample_rate, sample_eps_frac=self.sample_eps_frac,
        )

    def fit(self, X, y, sample_weight=None, eval_set=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ContractViolation("X must be 2-D with one row per label")
        if not np.isin(np.unique(y), (0, 1)).all():
            raise ContractViolation("labels must be binary 0/1")
        w = np.ones(y.size) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        params = self._params()
        if eval_set is None:
            params = GbdtParams(**{**params.__dict__, "early_stopping_rounds": 0})
            xv = yv = wv = None
        else:
            xv, yv = eval_set[0], eval_set[1]
            wv = eval_set[2] if len(eval_set) > 2 else None
        self.model_ = fit_boosted(X, y.astype(float), w, params, self.random_state,
                                  x_valid=xv, y_valid=yv, w_valid=wv)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        p = predict_proba(self.model_, np.asarray(X, dtype=float))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    @property
    def feature_importances_(self):
        return importance_gain(self.model_)
