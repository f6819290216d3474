import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptivepq import classify
from adaptivepq.classify import (
    AWARE,
    NEUTRAL,
    OBLIVIOUS,
    DecisionTree,
    FeatureVector,
    LabeledSample,
    TrainConfig,
    TreeFormatError,
    deserialize,
    label,
    predict,
    serialize,
    train,
    train_arrays,
)

from treegen import random_tree


def sample(f, cls):
    return LabeledSample(f, 0.0, 0.0, cls)


def random_features(rng):
    return FeatureVector(rng.randint(1, 64), rng.randint(0, 10**6), rng.randint(1, 10**8), rng.random())


# -- labelling ------------------------------------------------------------------


def test_label_examples():
    assert label(10.0e6, 9.0e6, 1.5e6) == NEUTRAL
    assert label(10.0e6, 3.0e6, 1.5e6) == OBLIVIOUS
    assert label(2.0e6, 4.0e6, 1.5e6) == AWARE
    assert label(5.0, 5.0) == NEUTRAL


def test_label_boundary_is_not_neutral():
    assert label(2.5e6, 1.0e6, 1.5e6) == OBLIVIOUS
    assert label(1.0e6, 2.5e6, 1.5e6) == AWARE


def test_label_rejects_negative():
    with pytest.raises(ValueError):
        label(-1.0, 2.0)
    with pytest.raises(ValueError):
        label(1.0, -2.0)


def test_label_grid_matches_rule():
    axis = np.linspace(0.0, 20.0e6, 100)
    for x in axis:
        for y in axis:
            expected = NEUTRAL if abs(x - y) < 1.5e6 else (OBLIVIOUS if x > y else AWARE)
            assert label(x, y, 1.5e6) == expected


@given(st.floats(0, 1e9), st.floats(0, 1e9), st.floats(1e-3, 1e8))
def test_label_swap_symmetry(x, y, theta):
    swap = {NEUTRAL: NEUTRAL, OBLIVIOUS: AWARE, AWARE: OBLIVIOUS}
    assert label(y, x, theta) == swap[label(x, y, theta)]
    assert label(x, x, theta) == NEUTRAL


# -- feature vectors ------------------------------------------------------------


def test_feature_parse():
    assert FeatureVector.parse("57,1000000,10000000,0.5") == FeatureVector(57, 10**6, 10**7, 0.5)
    with pytest.raises(ValueError):
        FeatureVector.parse("1,2,3")


@pytest.mark.parametrize("args", [(-1, 0, 0, 0.5), (1, 1, 1, 1.5), (1, 1, 1, -0.1)])
def test_feature_invariants(args):
    with pytest.raises(ValueError):
        FeatureVector(*args)


# -- training --------------------------------------------------------------------


def test_empty_training_set():
    with pytest.raises(ValueError):
        train([])


def test_single_label_gives_a_leaf():
    rng = random.Random(1)
    tree = train([sample(random_features(rng), AWARE) for _ in range(50)])
    assert tree == DecisionTree.leaf(AWARE)
    assert tree.depth == 0


def planted_insert_pct(n, seed=0):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        f = random_features(rng)
        # keep a margin around the boundary
        pct = rng.uniform(0.0, 0.45) if rng.random() < 0.5 else rng.uniform(0.55, 1.0)
        f = FeatureVector(f.n_threads, f.size, f.key_range, pct)
        out.append(sample(f, AWARE if pct <= 0.5 else OBLIVIOUS))
    return out


def test_planted_insert_pct_rule():
    data = planted_insert_pct(1000)
    tree = train(data)
    assert tree.n_nodes == 3
    assert tree.feature[0] == 3
    assert 0.45 <= tree.threshold[0] <= 0.55
    assert classify.accuracy(tree, data) == 1.0
    assert predict(tree, FeatureVector(8, 100, 100, 0.3)) == AWARE


def test_xor_needs_depth_two():
    # 100 samples at each of the four quadrant corners; the root split has zero gain
    data = []
    for t, pct in itertools.product((4, 24), (0.25, 0.75)):
        cls = AWARE if (t > 15) != (pct > 0.5) else OBLIVIOUS
        data += [sample(FeatureVector(t, 10, 10, pct), cls)] * 100
    assert classify.accuracy(train(data, TrainConfig(max_depth=1)), data) == 0.5
    tree = train(data, TrainConfig(max_depth=2))
    assert tree.depth == 2
    assert classify.accuracy(tree, data) == 1.0
    for t, pct in itertools.product((1, 30), (0.1, 0.9)):
        assert tree.predict(FeatureVector(t, 10, 10, pct)) == (AWARE if (t > 15) != (pct > 0.5) else OBLIVIOUS)


def test_three_class_planted_boxes():
    rng = random.Random(3)
    data = []
    for _ in range(900):
        t = rng.choice([rng.randint(1, 8), rng.randint(16, 64)])
        size = rng.choice([rng.randint(0, 900), rng.randint(2000, 10**6)])
        f = FeatureVector(t, size, 1000, rng.random())
        cls = NEUTRAL if t <= 8 else (AWARE if size <= 1000 else OBLIVIOUS)
        data.append(sample(f, cls))
    tree = train(data)
    assert classify.accuracy(tree, data) == 1.0


def _weighted_gini(y_left, y_right):
    def gini(ys):
        n = len(ys)
        return 1.0 - sum((ys.count(c) / n) ** 2 for c in set(ys))

    n = len(y_left) + len(y_right)
    return len(y_left) / n * gini(y_left) + len(y_right) / n * gini(y_right)


def test_root_split_is_gini_optimal():
    """Exhaustive scan over every feature and midpoint agrees with the trained root."""
    rng = random.Random(5)
    X = [[rng.randint(0, 6), rng.randint(0, 6), rng.randint(0, 3), rng.choice([0.0, 0.5, 1.0])] for _ in range(60)]
    y = [rng.choice((0, 1, 2)) if x[0] > 2 else 1 for x in X]
    best = math.inf
    for f in range(4):
        values = sorted(set(x[f] for x in X))
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            yl = [c for x, c in zip(X, y) if x[f] <= thr]
            yr = [c for x, c in zip(X, y) if x[f] > thr]
            if len(yl) >= 5 and len(yr) >= 5:
                best = min(best, _weighted_gini(yl, yr))
    tree = train_arrays(np.array(X, float), np.array(y), TrainConfig(max_depth=1))
    f, thr = tree.feature[0], tree.threshold[0]
    got = _weighted_gini([c for x, c in zip(X, y) if x[f] <= thr], [c for x, c in zip(X, y) if x[f] > thr])
    assert got == pytest.approx(best, abs=1e-12)


def test_min_leaf_respected():
    rng = random.Random(6)
    data = [sample(random_features(rng), rng.choice((0, 1, 2))) for _ in range(300)]
    tree = train(data, TrainConfig(min_leaf=20))
    counts = {}
    for s in data:
        i = 0
        while tree.feature[i] != -1:
            i = tree.left[i] if s.features.as_tuple()[tree.feature[i]] <= tree.threshold[i] else tree.right[i]
        counts[i] = counts.get(i, 0) + 1
    assert min(counts.values()) >= 20


def test_max_depth_respected():
    rng = random.Random(7)
    data = [sample(random_features(rng), rng.choice((0, 1, 2))) for _ in range(500)]
    assert train(data, TrainConfig(max_depth=3)).depth <= 3
    assert train(data, TrainConfig(max_depth=0)).n_nodes == 1


def test_training_is_deterministic():
    rng = random.Random(8)
    data = [sample(random_features(rng), rng.choice((0, 1, 2))) for _ in range(400)]
    assert serialize(train(data)) == serialize(train(list(data)))


def test_scale_invariance():
    rng = random.Random(9)
    data = [sample(random_features(rng), rng.choice((0, 1, 2))) for _ in range(300)]

    def scaled(f, k=7):
        return FeatureVector(f.n_threads, f.size, f.key_range * k, f.insert_pct)

    tree = train(data)
    tree_scaled = train([sample(scaled(s.features), s.label) for s in data])
    assert tree.feature == tree_scaled.feature
    for f, t, t_scaled in zip(tree.feature, tree.threshold, tree_scaled.threshold):
        assert t_scaled == pytest.approx(t * 7 if f == 2 else t)
    for _ in range(1000):
        q = random_features(rng)
        assert tree.predict(q) == tree_scaled.predict(scaled(q))


def test_invalid_config():
    with pytest.raises(ValueError):
        TrainConfig(min_leaf=0)
    with pytest.raises(ValueError):
        TrainConfig(criterion="entropy")


# -- prediction --------------------------------------------------------------------


def test_leaf_predicts_constant():
    tree = DecisionTree.leaf(OBLIVIOUS)
    rng = random.Random(0)
    assert all(tree.predict(random_features(rng)) == OBLIVIOUS for _ in range(100))


def test_predict_without_tree():
    with pytest.raises(ValueError):
        predict(None, FeatureVector(1, 1, 1, 0.5))


def _box_oracle(tree, x):
    hits = [cls for _, box, cls in tree.leaves() if all(lo < v <= hi for v, (lo, hi) in zip(x, box))]
    assert len(hits) == 1
    return hits[0]


def test_predict_matches_leaf_regions():
    rng = random.Random(10)
    tree = random_tree(90, 8, seed=3)
    for _ in range(10_000):
        x = (rng.randint(1, 64), rng.randint(0, 10**6), rng.randint(0, 10**6), rng.random())
        assert tree.predict(x) == _box_oracle(tree, x)


@pytest.mark.parametrize(
    "arrays",
    [
        ([], [], [], [], []),
        ([0], [1.0], [-1], [-1], [0]),  # split without children
        ([-1], [0.0], [-1], [-1], [7]),  # unknown class
        ([5, -1, -1], [1.0, 0, 0], [1, -1, -1], [2, -1, -1], [0, 1, 1]),  # bad feature
        ([0, -1, -1], [1.0, 0, 0], [1, -1, -1], [1, -1, -1], [0, 1, 1]),  # shared child
    ],
)
def test_malformed_trees(arrays):
    with pytest.raises(ValueError):
        DecisionTree(*arrays)


# -- serialization ------------------------------------------------------------------


def test_leaf_file_is_two_lines():
    text = serialize(DecisionTree.leaf(1)).decode()
    assert text.splitlines() == ["adaptivepq-tree 1 nodes=1 depth=0", "L 1"]


def test_paper_sized_tree_file():
    tree = random_tree(90, 8, seed=4)
    lines = serialize(tree).decode().splitlines()
    assert tree.n_nodes == 179
    assert len(lines) == 180
    assert lines[0] == "adaptivepq-tree 1 nodes=179 depth=8"


@pytest.mark.parametrize("seed", range(20))
def test_round_trip(seed):
    rng = random.Random(seed)
    data = [sample(random_features(rng), rng.choice((0, 1, 2))) for _ in range(200)]
    tree = train(data, TrainConfig(max_depth=rng.randint(1, 8), min_leaf=rng.randint(1, 10)))
    back = deserialize(serialize(tree))
    assert back == tree
    assert serialize(back) == serialize(tree)
    for _ in range(1000):
        f = random_features(rng)
        assert back.predict(f) == tree.predict(f)


def test_thresholds_round_trip_bit_exactly():
    t = DecisionTree([3, -1, -1], [0.1 + 0.2, 0, 0], [1, -1, -1], [2, -1, -1], [0, 1, 2])
    assert deserialize(serialize(t)).threshold[0] == 0.1 + 0.2


GOOD = "adaptivepq-tree 1 nodes=3 depth=1\nS 3 0.5\nL 2\nL 1\n"


@pytest.mark.parametrize(
    "text,lineno",
    [
        ("", 1),
        ("adaptivepq-tree 2 nodes=1 depth=0\nL 1\n", 1),
        ("other 1 nodes=1 depth=0\nL 1\n", 1),
        (GOOD.replace("L 2", "L x"), 3),
        (GOOD.replace("L 2", "L 9"), 3),
        (GOOD.replace("S 3 0.5", "S 3"), 2),
        (GOOD.replace("S 3 0.5", "S 8 0.5"), 2),
        (GOOD.replace("S 3 0.5", "Q 3 0.5"), 2),
        (GOOD + "L 1\n", 5),
        (GOOD.replace("\nL 1\n", "\n"), 4),
        (GOOD.replace("nodes=3", "nodes=4"), 1),
        (GOOD.replace("depth=1", "depth=2"), 1),
    ],
)
def test_corrupt_files_name_the_line(text, lineno):
    assert deserialize(GOOD).n_nodes == 3
    with pytest.raises(TreeFormatError) as err:
        deserialize(text)
    assert err.value.lineno == lineno
    assert f"line {lineno}" in str(err.value)


def test_save_and_load(tmp_path):
    tree = random_tree(20, 6, seed=1)
    classify.save_tree(tree, tmp_path / "t.txt")
    assert classify.load_tree(tmp_path / "t.txt") == tree


# -- sample CSV and evaluation -----------------------------------------------------------


def test_sample_csv_round_trip(tmp_path):
    rng = random.Random(11)
    rows = [LabeledSample.from_throughputs(random_features(rng), rng.random() * 1e6, rng.random() * 1e6, 1e5) for _ in range(30)]
    path = tmp_path / "s.csv"
    assert classify.write_samples(rows[:10], path) == 10
    classify.write_samples(rows[10:], path, append=True)
    assert path.read_text().splitlines()[0] == ",".join(classify.CSV_HEADER)
    assert classify.read_samples(path) == rows


def test_sample_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        classify.read_samples(path)


def test_holdout_and_baseline():
    rng = random.Random(12)
    data = [sample(random_features(rng), 1 if i % 4 else 2) for i in range(100)]
    tr, te = classify.holdout_split(data, 0.25, seed=0)
    assert (len(tr), len(te)) == (75, 25)
    assert sorted(map(id, tr + te)) == sorted(map(id, data))
    assert classify.holdout_split(data, 0.25, seed=0) == (tr, te)
    assert classify.majority_baseline(tr, te) == sum(s.label == 1 for s in te) / 25


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 64), st.integers(0, 100), st.floats(0, 1), st.integers(0, 2)), min_size=1, max_size=60))
def test_train_always_yields_valid_tree(rows):
    data = [sample(FeatureVector(t, s, 10, p), c) for t, s, p, c in rows]
    tree = train(data, TrainConfig(min_leaf=1))
    assert tree.depth <= 8
    assert deserialize(serialize(tree)) == tree
    # with min_leaf=1 and unlimited room, distinct feature vectors are fit exactly
    distinct = {}
    for s in data:
        distinct.setdefault(s.features, set()).add(s.label)
    if all(len(v) == 1 for v in distinct.values()) and len(distinct) <= 2**8:
        assert classify.accuracy(tree, data) == 1.0
