"""Gradient-boosted trees: exact greedy splits, leaf-wise growth, JSON dump."""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn.autograd import stable_sigmoid
from .nn.losses import weighted_bce


class GbtError(Exception):
    pass


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    learning_rate: float = 0.03
    max_depth: int = 9
    colsample_bytree: float = 0.7
    max_leaves: int = 100
    objective: str = "logistic"  # or "squared"
    seed: int = 0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.learning_rate <= 1):
            raise GbtError("learning_rate must be in (0, 1]")
        if not (0 < self.colsample_bytree <= 1):
            raise GbtError("colsample_bytree must be in (0, 1]")
        if self.max_depth < 1:
            raise GbtError("max_depth must be >= 1")
        if self.max_leaves < 2:
            raise GbtError("max_leaves must be >= 2")
        if self.objective not in ("logistic", "squared"):
            raise GbtError(f"unknown objective {self.objective!r}")


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0


@dataclass
class Tree:
    nodes: list[TreeNode] = field(default_factory=list)
    columns: list[int] = field(default_factory=list)  # per-tree sampled column set

    def predict_row(self, x: np.ndarray) -> float:
        i = 0
        node = self.nodes[i]
        while node.feature >= 0:
            i = node.left if x[node.feature] < node.threshold else node.right
            node = self.nodes[i]
        return node.value

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.predict_row(row) for row in x])

    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.feature < 0)

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if node.feature < 0:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(0)

    def features_used(self) -> set[int]:
        return {n.feature for n in self.nodes if n.feature >= 0}


@dataclass
class GbtModel:
    params: GbtParams
    base_score: float
    trees: list[Tree]
    n_features: int
    train_losses: list[float] = field(default_factory=list)

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        x = _check_features(x, self.n_features)
        scores = np.full(len(x), self.base_score)
        for tree in self.trees:
            scores += self.params.learning_rate * tree.predict(x)
        return scores

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Probabilities under the logistic objective, raw scores otherwise."""
        raw = self.predict_raw(x)
        if self.params.objective == "logistic":
            return stable_sigmoid(raw)
        return raw


def _check_features(x: np.ndarray, n_features: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != n_features:
        raise GbtError(f"expected (n, {n_features}) features, got {x.shape}")
    if not np.isfinite(x).all():
        raise GbtError("missing/non-finite feature values are not supported")
    return x


def _best_split(x, g, h, rows, columns, reg_lambda, min_child_weight):
    """Exact greedy split over the sampled columns; None when no gain exists.

    Ties resolve to the lowest feature index, then the lowest threshold, which
    matches a brute-force scan in the same order.
    """
    g_total = g[rows].sum()
    h_total = h[rows].sum()
    parent_score = g_total * g_total / (h_total + reg_lambda)
    best = None
    for feat in columns:
        vals = x[rows, feat]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        if sv[0] == sv[-1]:
            continue
        cg = np.cumsum(g[rows][order])[:-1]
        ch = np.cumsum(h[rows][order])[:-1]
        valid = (sv[:-1] != sv[1:]) & (ch >= min_child_weight) & ((h_total - ch) >= min_child_weight)
        if not valid.any():
            continue
        gains = 0.5 * (
            cg * cg / (ch + reg_lambda)
            + (g_total - cg) ** 2 / (h_total - ch + reg_lambda)
            - parent_score
        )
        gains[~valid] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > 0 and (best is None or gains[i] > best[0]):
            best = (float(gains[i]), feat, float((sv[i] + sv[i + 1]) / 2.0))
    return best


def _leaf_value(g, h, rows, reg_lambda) -> float:
    return float(-g[rows].sum() / (h[rows].sum() + reg_lambda))


def _grow_tree(x, g, h, columns, params: GbtParams) -> Tree:
    """Leaf-wise (best-gain-first) growth under joint leaf and depth caps."""
    tree = Tree(columns=sorted(columns))
    all_rows = np.arange(len(x))
    tree.nodes.append(TreeNode(value=_leaf_value(g, h, all_rows, params.reg_lambda)))
    heap: list[tuple[float, int, int, int, np.ndarray, tuple]] = []
    counter = 0

    def consider(node_id: int, rows: np.ndarray, depth: int) -> None:
        nonlocal counter
        if depth >= params.max_depth or len(rows) < 2:
            return
        found = _best_split(x, g, h, rows, tree.columns, params.reg_lambda, params.min_child_weight)
        if found is not None:
            heapq.heappush(heap, (-found[0], counter, node_id, depth, rows, found))
            counter += 1

    consider(0, all_rows, 0)
    n_leaves = 1
    while heap and n_leaves < params.max_leaves:
        _, _, node_id, depth, rows, (gain, feat, thr) = heapq.heappop(heap)
        mask = x[rows, feat] < thr
        left_rows, right_rows = rows[mask], rows[~mask]
        left_id, right_id = len(tree.nodes), len(tree.nodes) + 1
        tree.nodes.append(TreeNode(value=_leaf_value(g, h, left_rows, params.reg_lambda)))
        tree.nodes.append(TreeNode(value=_leaf_value(g, h, right_rows, params.reg_lambda)))
        node = tree.nodes[node_id]
        node.feature, node.threshold, node.left, node.right = feat, thr, left_id, right_id
        n_leaves += 1
        consider(left_id, left_rows, depth + 1)
        consider(right_id, right_rows, depth + 1)
    return tree


def _objective_stats(objective: str, scores, y, w):
    if objective == "logistic":
        p = stable_sigmoid(scores)
        return (p - y) * w, p * (1.0 - p) * w
    return (scores - y) * w, w.copy()


def _objective_loss(objective: str, scores, y, w) -> float:
    if objective == "logistic":
        return weighted_bce(stable_sigmoid(scores), y, w)
    return float(np.mean(w * (scores - y) ** 2))


def fit(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None, params: GbtParams = GbtParams()) -> GbtModel:
    """Boost `n_estimators` exact-greedy trees on gradient/hessian statistics."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise GbtError("fit requires a non-empty 2-d feature matrix")
    x = _check_features(x, x.shape[1])
    y = np.asarray(y, dtype=np.float64)
    if len(y) != len(x):
        raise GbtError(f"row mismatch: {len(x)} features vs {len(y)} targets")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(y):
        raise GbtError("weights length mismatch")
    if params.objective == "logistic" and not np.isin(y, (0.0, 1.0)).all():
        raise GbtError("logistic targets must be 0/1")

    if params.objective == "logistic":
        prior = float(np.clip((w * y).sum() / w.sum(), 1e-6, 1 - 1e-6))
        base = float(np.log(prior / (1.0 - prior)))
    else:
        base = float((w * y).sum() / w.sum())

    rng = np.random.default_rng(params.seed)
    n_features = x.shape[1]
    n_cols = max(1, round(params.colsample_bytree * n_features))
    model = GbtModel(params, base, [], n_features)
    scores = np.full(len(x), base)
    for _ in range(params.n_estimators):
        g, h = _objective_stats(params.objective, scores, y, w)
        columns = rng.choice(n_features, size=n_cols, replace=False).tolist()
        tree = _grow_tree(x, g, h, columns, params)
        model.trees.append(tree)
        scores += params.learning_rate * tree.predict(x)
        model.train_losses.append(_objective_loss(params.objective, scores, y, w))
    return model


def predict(model: GbtModel, x: np.ndarray) -> np.ndarray:
    return model.predict(x)


# JSON model file -------------------------------------------------------------


def save_model(model: GbtModel, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": 1,
        "params": asdict(model.params),
        "base_score": model.base_score,
        "n_features": model.n_features,
        "trees": [
            {"columns": t.columns, "nodes": [asdict(n) for n in t.nodes]}
            for t in model.trees
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_model(path: Path | str) -> GbtModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise GbtError(f"{path}: unsupported model version {doc.get('version')}")
    params = GbtParams(**doc["params"])
    trees = [
        Tree(nodes=[TreeNode(**n) for n in t["nodes"]], columns=list(t["columns"]))
        for t in doc["trees"]
    ]
    return GbtModel(params, doc["base_score"], trees, doc["n_features"])
