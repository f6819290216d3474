"""Mode classifier: labeling, CART training, prediction and the tree file format.

Classes are ``0`` (neutral, keep the current mode), ``1`` (NUMA-oblivious)
and ``2`` (NUMA-aware). Features, in this order, are the number of active
threads, the current queue size, the key range and the fraction of inserts.

Tree file format (UTF-8 text, one node per line, preorder, left child first)::

    adaptivepq-tree 1 nodes=<N> depth=<D>
    S <feature index> <threshold>      internal node, go left iff x[f] <= t
    L <class>                          leaf

Thresholds are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "NEUTRAL",
    "OBLIVIOUS",
    "AWARE",
    "CLASSES",
    "DEFAULT_THRESHOLD",
    "FEATURE_NAMES",
    "FeatureVector",
    "LabeledSample",
    "TrainConfig",
    "DecisionTree",
    "TreeFormatError",
    "label",
    "train",
    "predict",
    "serialize",
    "deserialize",
    "read_samples",
    "write_samples",
    "CSV_HEADER",
    "accuracy",
    "holdout_split",
    "majority_baseline",
    "save_tree",
    "load_tree",
]

NEUTRAL, OBLIVIOUS, AWARE = 0, 1, 2
CLASSES = (NEUTRAL, OBLIVIOUS, AWARE)
DEFAULT_THRESHOLD = 1.5e6  # ops/s
FEATURE_NAMES = ("n_threads", "size", "key_range", "insert_pct")
CSV_HEADER = ("n_threads", "size", "key_range", "insert_pct", "thr_obl", "thr_aware", "label")

FORMAT_MAGIC = "adaptivepq-tree"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    n_threads: int
    size: int
    key_range: int
    insert_pct: float

    def __post_init__(self) -> None:
        if self.n_threads < 0 or self.size < 0 or self.key_range < 0:
            raise ValueError(f"features must be non-negative: {self}")
        if not 0.0 <= self.insert_pct <= 1.0:
            raise ValueError(f"insert_pct must lie in [0, 1], got {self.insert_pct}")

    def as_tuple(self) -> tuple:
        return astuple(self)

    @classmethod
    def parse(cls, text: str) -> "FeatureVector":
        """Parse ``"threads,size,key_range,insert_pct"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated features, got {text!r}")
        return cls(int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]))


def label(t_obl: float, t_aware: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Class of a throughput pair: neutral when the gap is under ``threshold``."""
    if t_obl < 0 or t_aware < 0:
        raise ValueError(f"throughputs must be non-negative, got {t_obl}, {t_aware}")
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    diff = t_obl - t_aware
    if abs(diff) < threshold or diff == 0:
        return NEUTRAL
    return OBLIVIOUS if diff > 0 else AWARE


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    thr_obl: float
    thr_aware: float
    label: int

    @classmethod
    def from_throughputs(
        cls, features: FeatureVector, thr_obl: float, thr_aware: float, threshold: float = DEFAULT_THRESHOLD
    ) -> "LabeledSample":
        return cls(features, thr_obl, thr_aware, label(thr_obl, thr_aware, threshold))


@dataclass(frozen=True)
class TrainConfig:
    max_depth: int = 8
    min_leaf: int = 5
    criterion: str = "gini"

    def __post_init__(self) -> None:
        if self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError(f"invalid training config {self}")
        if self.criterion != "gini":
            raise ValueError(f"unsupported criterion {self.criterion!r}")


class TreeFormatError(ValueError):
    def __init__(self, lineno: int, msg: str) -> None:
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class DecisionTree:
    """Immutable binary tree stored as parallel arrays in preorder.

    ``feature[i] == -1`` marks a leaf whose class is ``value[i]``.
    """

    __slots__ = ("feature", "threshold", "left", "right", "value", "depth")

    def __init__(
        self,
        feature: Sequence[int],
        threshold: Sequence[float],
        left: Sequence[int],
        right: Sequence[int],
        value: Sequence[int],
    ) -> None:
        self.feature = tuple(feature)
        self.threshold = tuple(float(t) for t in threshold)
        self.left = tuple(left)
        self.right = tuple(right)
        self.value = tuple(value)
        self.depth = self._validate()

    def _validate(self) -> int:
        n = len(self.feature)
        if n == 0 or not (len(self.threshold) == len(self.left) == len(self.right) == len(self.value) == n):
            raise ValueError("malformed tree: empty or ragged node arrays")
        seen = [False] * n
        depth = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            if not 0 <= i < n or seen[i]:
                raise ValueError(f"malformed tree: node {i} missing or shared")
            seen[i] = True
            f = self.feature[i]
            if f == -1:
                if self.value[i] not in CLASSES:
                    raise ValueError(f"malformed tree: leaf {i} has class {self.value[i]}")
                depth = max(depth, d)
            elif 0 <= f < len(FEATURE_NAMES):
                if math.isnan(self.threshold[i]):
                    raise ValueError(f"malformed tree: node {i} has a NaN threshold")
                stack.append((self.right[i], d + 1))
                stack.append((self.left[i], d + 1))
            else:
                raise ValueError(f"malformed tree: node {i} splits on feature {f}")
        if not all(seen):
            raise ValueError("malformed tree: unreachable nodes")
        return depth

    @classmethod
    def leaf(cls, cls_label: int) -> "DecisionTree":
        return cls([-1], [0.0], [-1], [-1], [cls_label])

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f == -1)

    def predict(self, x: Union[FeatureVector, Sequence[float]]) -> int:
        if isinstance(x, FeatureVector):
            x = (x.n_threads, x.size, x.key_range, x.insert_pct)
        feature, threshold, left, right = self.feature, self.threshold, self.left, self.right
        i = 0
        f = feature[0]
        while f != -1:
            i = left[i] if x[f] <= threshold[i] else right[i]
            f = feature[i]
        return self.value[i]

    def leaves(self) -> list[tuple[int, list[tuple[float, float]], int]]:
        """Every leaf as ``(node, box, class)``; ``box[f] = (lo, hi]`` per feature."""
        out = []
        stack = [(0, [(-math.inf, math.inf)] * len(FEATURE_NAMES))]
        while stack:
            i, box = stack.pop()
            f = self.feature[i]
            if f == -1:
                out.append((i, box, self.value[i]))
                continue
            lo, hi = box[f]
            t = self.threshold[i]
            lbox = list(box)
            lbox[f] = (lo, min(hi, t))
            rbox = list(box)
            rbox[f] = (max(lo, t), hi)
            stack.append((self.right[i], rbox))
            stack.append((self.left[i], lbox))
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return (
            self.feature == other.feature
            and self.threshold == other.threshold
            and self.left == other.left
            and self.right == other.right
            and self.value == other.value
        )

    def __repr__(self) -> str:
        return f"DecisionTree(nodes={self.n_nodes}, leaves={self.n_leaves}, depth={self.depth})"


def predict(tree: Optional[DecisionTree], f: Union[FeatureVector, Sequence[float]]) -> int:
    if tree is None:
        raise ValueError("no decision tree installed")
    return tree.predict(f)


# -- training --------------------------------------------------------------


def _majority(counts: np.ndarray) -> int:
    # argmax returns the first maximum, so ties go to the lowest class.
    return int(np.argmax(counts))


def _best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, min_leaf: int):
    """Lowest weighted Gini split of ``idx``; ``None`` if no split is allowed.

    Candidates are scanned by feature index, then ascending threshold, and
    only a strictly better score replaces the incumbent.
    """
    n = len(idx)
    yi = y[idx]
    best = None
    best_score = -math.inf
    for f in range(X.shape[1]):
        order = np.argsort(X[idx, f], kind="mergesort")
        xs = X[idx[order], f]
        onehot = np.zeros((n, len(CLASSES)))
        onehot[np.arange(n), yi[order]] = 1.0
        cum = np.cumsum(onehot, axis=0)
        total = cum[-1]
        pos = np.nonzero(xs[:-1] != xs[1:])[0]  # split after position pos
        n_left = pos + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        pos = pos[ok]
        if len(pos) == 0:
            continue
        n_left = (pos + 1).astype(float)
        n_right = n - n_left
        lc = cum[pos]
        rc = total - lc
        # Maximising sum(c_l^2)/n_l + sum(c_r^2)/n_r minimises the weighted Gini.
        score = (lc**2).sum(axis=1) / n_left + (rc**2).sum(axis=1) / n_right
        k = int(np.argmax(score))
        if best is None or score[k] > best_score + 1e-9 * max(1.0, abs(best_score)):
            best_score = float(score[k])
            lo, hi = float(xs[pos[k]]), float(xs[pos[k] + 1])
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (f, thr)
    return best


def train(samples: Sequence[LabeledSample], config: TrainConfig = TrainConfig()) -> DecisionTree:
    """Greedy CART on Gini impurity over all four features."""
    if len(samples) == 0:
        raise ValueError("cannot train on an empty sample set")
    X = np.array([s.features.as_tuple() for s in samples], dtype=float)
    y = np.array([s.label for s in samples], dtype=int)
    return train_arrays(X, y, config)


def train_arrays(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig()) -> DecisionTree:
    if len(y) == 0:
        raise ValueError("cannot train on an empty sample set")
    if X.ndim != 2 or X.shape[1] != len(FEATURE_NAMES):
        raise ValueError(f"expected an (n, {len(FEATURE_NAMES)}) feature matrix, got {X.shape}")
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[int] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        counts = np.bincount(y[idx], minlength=len(CLASSES))
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_majority(counts))
        if depth >= config.max_depth or np.count_nonzero(counts) <= 1 or len(idx) < 2 * config.min_leaf:
            return node
        split = _best_split(X, y, idx, config.min_leaf)
        if split is None:
            return node
        f, t = split
        mask = X[idx, f] <= t
        value[node] = 0  # only leaves carry a class
        feature[node] = f
        threshold[node] = t
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return DecisionTree(feature, threshold, left, right, value)


# -- serialization ---------------------------------------------------------


def serialize(tree: DecisionTree) -> bytes:
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION} nodes={tree.n_nodes} depth={tree.depth}"]

    def emit(i: int) -> None:
        f = tree.feature[i]
        if f == -1:
            lines.append(f"L {tree.value[i]}")
        else:
            lines.append(f"S {f} {tree.threshold[i]!r}")
            emit(tree.left[i])
            emit(tree.right[i])

    emit(0)
    return ("\n".join(lines) + "\n").encode()


def _parse_header(line: str) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 4 or parts[0] != FORMAT_MAGIC:
        raise TreeFormatError(1, f"not a tree file header: {line!r}")
    try:
        version = int(parts[1])
    except ValueError:
        raise TreeFormatError(1, f"bad version field {parts[1]!r}") from None
    if version != FORMAT_VERSION:
        raise TreeFormatError(1, f"unsupported format version {version} (expected {FORMAT_VERSION})")
    fields = {}
    for part in parts[2:]:
        key, _, val = part.partition("=")
        try:
            fields[key] = int(val)
        except ValueError:
            raise TreeFormatError(1, f"bad header field {part!r}") from None
    if set(fields) != {"nodes", "depth"}:
        raise TreeFormatError(1, "header needs nodes= and depth=")
    return fields["nodes"], fields["depth"]


def deserialize(data: Union[bytes, str]) -> DecisionTree:
    text = data.decode() if isinstance(data, bytes) else data
    lines = text.splitlines()
    if not lines:
        raise TreeFormatError(1, "empty input")
    n_nodes, depth = _parse_header(lines[0])
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[int] = []
    pos = 1

    def parse(d: int) -> int:
        nonlocal pos
        if pos >= len(lines):
            raise TreeFormatError(pos + 1, "unexpected end of tree")
        lineno = pos + 1
        parts = lines[pos].split()
        pos += 1
        node = len(feature)
        try:
            if len(parts) == 2 and parts[0] == "L":
                cls_label = int(parts[1])
                if cls_label not in CLASSES:
                    raise TreeFormatError(lineno, f"unknown class {cls_label}")
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(cls_label)
                return node
            if len(parts) == 3 and parts[0] == "S":
                f = int(parts[1])
                t = float(parts[2])
            else:
                raise TreeFormatError(lineno, f"malformed node line {lines[lineno - 1]!r}")
        except ValueError as exc:
            if isinstance(exc, TreeFormatError):
                raise
            raise TreeFormatError(lineno, f"malformed node line {lines[lineno - 1]!r}") from None
        if not 0 <= f < len(FEATURE_NAMES) or math.isnan(t):
            raise TreeFormatError(lineno, f"invalid split {lines[lineno - 1]!r}")
        feature.append(f)
        threshold.append(t)
        left.append(-1)
        right.append(-1)
        value.append(0)
        left[node] = parse(d + 1)
        right[node] = parse(d + 1)
        return node

    parse(0)
    if pos != len(lines):
        raise TreeFormatError(pos + 1, "trailing data after the tree")
    tree = DecisionTree(feature, threshold, left, right, value)
    if tree.n_nodes != n_nodes:
        raise TreeFormatError(1, f"header says {n_nodes} nodes, body has {tree.n_nodes}")
    if tree.depth != depth:
        raise TreeFormatError(1, f"header says depth {depth}, body has {tree.depth}")
    return tree


def save_tree(tree: DecisionTree, path: Union[str, Path]) -> None:
    Path(path).write_bytes(serialize(tree))


def load_tree(path: Union[str, Path]) -> DecisionTree:
    return deserialize(Path(path).read_bytes())


# -- sample CSV ------------------------------------------------------------


def write_samples(samples: Iterable[LabeledSample], path: Union[str, Path], append: bool = False) -> int:
    path = Path(path)
    new = not append or not path.exists() or path.stat().st_size == 0
    n = 0
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        for s in samples:
            f = s.features
            w.writerow([f.n_threads, f.size, f.key_range, repr(f.insert_pct), repr(s.thr_obl), repr(s.thr_aware), s.label])
            n += 1
    return n


def read_samples(path: Union[str, Path]) -> list[LabeledSample]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: expected CSV header {','.join(CSV_HEADER)}")
        for row in reader:
            fv = FeatureVector(int(row["n_threads"]), int(row["size"]), int(row["key_range"]), float(row["insert_pct"]))
            out.append(LabeledSample(fv, float(row["thr_obl"]), float(row["thr_aware"]), int(row["label"])))
    return out


# -- evaluation ------------------------------------------------------------


def accuracy(tree: DecisionTree, samples: Sequence[LabeledSample]) -> float:
    if not samples:
        return float("nan")
    return sum(tree.predict(s.features) == s.label for s in samples) / len(samples)


def holdout_split(
    samples: Sequence[LabeledSample], test_frac: float = 0.25, seed: int = 0
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Shuffle with ``seed`` and cut off the last ``test_frac`` as the test set."""
    if not 0.0 < test_frac < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_frac}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_test = max(1, int(round(len(samples) * test_frac)))
    shuffled = [samples[i] for i in order]
    return shuffled[:-n_test], shuffled[-n_test:]


def majority_baseline(train_set: Sequence[LabeledSample], test_set: Sequence[LabeledSample]) -> float:
    """Test accuracy of always predicting the most common training label."""
    counts = np.bincount([s.label for s in train_set], minlength=len(CLASSES))
    guess = _majority(counts)
    return sum(s.label == guess for s in test_set) / len(test_set)
