"""Histogram features, nearest neighbours and a small random forest."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import AttackRecord

N_BYTES = 256
MODEL_FORMAT = "delpattrib-forest/1"


@dataclass(frozen=True)
class Vocab:
    """Instruction vocabulary fixed from training data (plus one OOV slot)."""

    instructions: tuple[str, ...]

    @property
    def index(self) -> dict[str, int]:
        return {m: i for i, m in enumerate(self.instructions)}

    @property
    def dim(self) -> int:
        return N_BYTES + len(self.instructions) + 1

    @property
    def oov_slot(self) -> int:
        return self.dim - 1


def build_vocab(records: Iterable[AttackRecord]) -> Vocab:
    seen: set[str] = set()
    for r in records:
        seen.update(r.inst_hist)
    return Vocab(tuple(sorted(seen)))


def featurize(record: AttackRecord, vocab: Vocab, _index: Mapping[str, int] | None = None) -> np.ndarray:
    index = _index if _index is not None else vocab.index
    v = np.zeros(vocab.dim)
    for b, c in record.byte_hist.items():
        v[b] += c
    for m, c in record.inst_hist.items():
        v[N_BYTES + index[m] if m in index else vocab.oov_slot] += c
    return v


def featurize_many(records: Sequence[AttackRecord], vocab: Vocab) -> np.ndarray:
    index = vocab.index
    if not records:
        return np.zeros((0, vocab.dim))
    return np.vstack([featurize(r, vocab, index) for r in records])


def nearest_neighbors(x: np.ndarray, train: np.ndarray, k: int = 3) -> list[tuple[int, float]]:
    """The ``k`` closest rows of ``train`` by Euclidean distance, ties by row index."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(train) == 0:
        return []
    d = np.sqrt(((np.asarray(train, float) - np.asarray(x, float)) ** 2).sum(axis=1))
    order = np.argsort(d, kind="stable")[:k]
    return [(int(i), float(d[i])) for i in order]


# ---------------------------------------------------------------------------
# random forest


@dataclass
class EnsembleConfig:
    n_trees: int = 100
    max_depth: int = 16
    max_features: int | None = None  # None means ceil(sqrt(d))
    min_samples_split: int = 2
    bootstrap: bool = True

    def n_features(self, d: int) -> int:
        if self.max_features is not None:
            return max(1, min(d, self.max_features))
        return max(1, math.ceil(math.sqrt(d)))


@dataclass
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) class counts

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            inner = self.left[node] >= 0
            if not inner.any():
                return node
            r, nd = rows[inner], node[inner]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        counts = self.value[self.apply(X)]
        tot = counts.sum(axis=1, keepdims=True)
        return counts / np.where(tot == 0, 1, tot)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> Tree:
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1),
        )


def _best_split(X: np.ndarray, Y: np.ndarray, feats: np.ndarray):
    """Best Gini split over ``feats``; returns (score, feature, threshold) or None.

    ``Y`` holds weighted one-hot rows (n, C).  The score is
    sum(L^2)/w_L + sum(R^2)/w_R, maximal exactly where weighted Gini
    impurity is minimal.
    """
    Xf = X[:, feats]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    valid = xs[1:] > xs[:-1]  # (n-1, m)
    if not valid.any():
        return None
    cum = np.cumsum(Y[order], axis=0)[:-1]  # (n-1, m, C)
    total = Y.sum(axis=0)
    right = total - cum
    w_left = cum.sum(axis=2)
    w_right = total.sum() - w_left
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (cum**2).sum(axis=2) / w_left + (right**2).sum(axis=2) / w_right
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score))
    i, j = divmod(flat, len(feats))
    return float(score[i, j]), int(feats[j]), float((xs[i, j] + xs[i + 1, j]) / 2.0)


def _grow_tree(X: np.ndarray, y: np.ndarray, w: np.ndarray, n_classes: int, cfg: EnsembleConfig, rng) -> Tree:
    """Grow one tree on rows ``X`` with labels ``y`` and integer weights ``w``."""
    d = X.shape[1]
    m = cfg.n_features(d)
    onehot = np.eye(n_classes)[y] * w[:, None]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(onehot[idx].sum(axis=0))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = value[node]
        weight = counts.sum()
        if depth >= cfg.max_depth or weight < cfg.min_samples_split or (counts > 0).sum() <= 1:
            continue
        Xn, Yn = X[idx], onehot[idx]
        parent = float((counts**2).sum() / weight)
        perm = rng.permutation(d)
        best = None
        # widen the search past m features only while nothing splits
        for start in range(0, d, m):
            best = _best_split(Xn, Yn, perm[start : start + m])
            if best is not None:
                break
        if best is None or best[0] <= parent + 1e-9:
            continue
        _, f, t = best
        mask = Xn[:, f] <= t
        li, ri = new_node(idx[mask]), new_node(idx[~mask])
        feature[node], threshold[node], left[node], right[node] = f, t, li, ri
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.vstack(value),
    )


@dataclass
class TreeEnsembleModel:
    classes: tuple[str, ...]
    trees: list[Tree]
    config: EnsembleConfig
    tree_seeds: list[int]
    n_features: int
    constant: bool = False

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.constant or not self.trees:
            out = np.zeros((len(X), len(self.classes)))
            out[:, 0] = 1.0
            return out
        return sum(t.predict_proba(X) for t in self.trees) / len(self.trees)

    def predict(self, X: np.ndarray) -> list[str]:
        return [self.classes[i] for i in np.argmax(self.predict_proba(X), axis=1)]

    def scores(self, x: np.ndarray) -> dict[str, float]:
        p = self.predict_proba(x)[0]
        return {c: float(v) for c, v in zip(self.classes, p)}

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "classes": list(self.classes),
            "config": asdict(self.config),
            "tree_seeds": list(self.tree_seeds),
            "n_features": self.n_features,
            "constant": self.constant,
            "trees": [t.to_json() for t in self.trees],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, d: Mapping) -> TreeEnsembleModel:
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        return cls(
            tuple(d["classes"]),
            [Tree.from_json(t) for t in d["trees"]],
            EnsembleConfig(**d["config"]),
            list(d["tree_seeds"]),
            int(d["n_features"]),
            bool(d["constant"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> TreeEnsembleModel:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_ensemble(
    X: np.ndarray, labels: Sequence[str], cfg: EnsembleConfig | None = None, seed: int = 0
) -> TreeEnsembleModel:
    """Fit a random forest.  Rows are canonically ordered first, so input order is irrelevant."""
    cfg = cfg or EnsembleConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) != len(labels):
        raise ValueError("X must be 2-D with one row per label")
    if len(X) == 0:
        raise ValueError("cannot train on an empty set")
    classes = tuple(sorted(set(labels)))
    rng = np.random.default_rng(seed)
    tree_seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=cfg.n_trees)]
    if len(classes) == 1:
        return TreeEnsembleModel(classes, [], cfg, tree_seeds, X.shape[1], constant=True)
    cls_index = {c: i for i, c in enumerate(classes)}
    y = np.array([cls_index[l] for l in labels], dtype=np.int64)
    # collapse repeated (row, label) pairs; a bootstrap over the original rows
    # is then a multinomial draw over the distinct ones
    rows, counts = np.unique(np.column_stack([X, y]), axis=0, return_counts=True)
    X, y = rows[:, :-1], rows[:, -1].astype(np.int64)
    n = int(counts.sum())
    trees = []
    for s in tree_seeds:
        trng = np.random.default_rng(s)
        w = trng.multinomial(n, counts / n) if cfg.bootstrap else counts
        keep = w > 0
        trees.append(_grow_tree(X[keep], y[keep], w[keep].astype(float), len(classes), cfg, trng))
    return TreeEnsembleModel(classes, trees, cfg, tree_seeds, X.shape[1])


@dataclass
class RestrictedPrediction:
    predicted_team: str
    scores: dict[str, float]
    allowed: frozenset[str]
    # predicted team was never a training class
    outside_classes: bool = False


def argmax_team(scores: Mapping[str, float], allowed: Iterable[str]) -> str:
    return min(allowed, key=lambda t: (-scores.get(t, 0.0), t))


def restrict_scores(scores: Mapping[str, float], allowed: Iterable[str]) -> RestrictedPrediction:
    """Argmax of precomputed class scores over ``allowed`` (ties lexicographic)."""
    allowed = frozenset(allowed)
    if not allowed:
        raise ValueError("allowed set is empty; apply the culprit fallback first")
    team = argmax_team(scores, allowed)
    return RestrictedPrediction(team, dict(scores), allowed, team not in scores)


def predict_restricted(model: TreeEnsembleModel, x: np.ndarray, allowed: Iterable[str]) -> RestrictedPrediction:
    return restrict_scores(model.scores(x), allowed)
