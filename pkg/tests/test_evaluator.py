import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwclfa.errors import ShapeMismatch, SingleClass, UncategorizedTask
from hwclfa.evaluator import (
    AUCMatrix,
    ScoredSet,
    category_aggregate,
    cross_task_matrix,
    diff_matrix,
    emit_report,
    heatmap_image,
    parse_matrix_csv,
    roc_auc,
    row_col_means,
    top_k_improvements,
)
from hwclfa.render import read_ppm
from hwclfa.tasks import ALL_TASKS

from oracles import brute_auc


def test_auc_cases():
    assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert roc_auc(ScoredSet(np.array([0.2, 0.6]), np.array([0, 1]), 3)) == 1.0
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = np.round(rng.uniform(0, 1, n), int(rng.integers(1, 3)))  # coarse grid forces ties
        assert abs(roc_auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_properties(pairs):
    # a grid on [0, 1] keeps x**3 strictly monotone (no underflow)
    scores = np.array([p[0] for p in pairs]) / 1000
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        return
    a = roc_auc(scores, labels)
    assert a + roc_auc(scores, 1 - labels) == 1.0
    assert roc_auc(scores**3, labels) == a


def test_row_col_means():
    m = AUCMatrix(np.full((3, 3), 70.0), (1, 2, 3), (1, 2, 3))
    r = row_col_means(m)
    assert np.all(r.rows == 70) and np.all(r.cols == 70) and r.grand == 70
    m = AUCMatrix([[100, 60], [40, 100]], (1, 2), (1, 2))
    r = row_col_means(m, include_diagonal=False)
    np.testing.assert_array_equal(r.rows, [60, 40])
    assert r.grand == 50
    np.testing.assert_array_equal(row_col_means(m, True).rows, [80, 70])


def test_grand_mean_matches_independent_sum():
    rng = np.random.default_rng(1)
    vals = rng.uniform(55, 85, (25, 25))
    m = AUCMatrix(vals, ALL_TASKS, ALL_TASKS)
    total, n = 0.0, 0
    for i in range(25):
        for j in range(25):
            if i != j:
                total += vals[i, j]
                n += 1
    assert abs(row_col_means(m).grand - total / n) <= 1e-9


def test_missing_cells_are_skipped():
    m = AUCMatrix([[100, math.nan], [40, 100]], (1, 2), (1, 2))
    r = row_col_means(m)
    assert r.grand == 40 and r.rows[0] == 100


def test_diff_and_top_k():
    rng = np.random.default_rng(2)
    a = AUCMatrix(rng.uniform(50, 90, (25, 25)), ALL_TASKS, ALL_TASKS)
    b = AUCMatrix(rng.uniform(50, 90, (25, 25)), ALL_TASKS, ALL_TASKS)
    d = diff_matrix(a, b)
    oracle = sorted(((s, t, a.values[s - 1, t - 1] - b.values[s - 1, t - 1])
                     for s in ALL_TASKS for t in ALL_TASKS if s != t), key=lambda c: (-c[2], c[0], c[1]))
    assert len(oracle) == 600
    assert top_k_improvements(d, 100) == oracle[:100]
    assert top_k_improvements(d, 600) == oracle
    assert top_k_improvements(d, 37) == top_k_improvements(d, 100)[:37]
    z = top_k_improvements(diff_matrix(a, a), 10)
    assert all(c[2] == 0 for c in z) and [c[:2] for c in z[:3]] == [(1, 2), (1, 3), (1, 4)]
    with pytest.raises(ShapeMismatch):
        diff_matrix(a, AUCMatrix(np.zeros((2, 2)), (1, 2), (1, 2)))


def test_category_aggregate():
    m = AUCMatrix(np.full((25, 25), 60.0), ALL_TASKS, ALL_TASKS)
    assert all(s.count == 0 for s in category_aggregate(m).values())
    vals = np.zeros((3, 3))
    vals[0, 1], vals[0, 2], vals[1, 2] = 66, 70, 74
    cats = {1: "G", 2: "C", 3: "C"}
    m = AUCMatrix(vals, (1, 2, 3), (1, 2, 3))
    stats = category_aggregate(m, cats)
    assert stats["G", "C"].count == 2 and stats["C", "C"].count == 1
    m = AUCMatrix(np.array([[0, 66, 70, 74], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]), (1, 2, 3, 4), (1, 2, 3, 4))
    s = category_aggregate(m, {1: "G", 2: "C", 3: "C", 4: "C"})["G", "C"]
    assert (s.median, s.q1, s.q3, s.min, s.max) == (70, 68, 72, 66, 74)
    rng = np.random.default_rng(3)
    full = AUCMatrix(rng.uniform(50, 90, (25, 25)), ALL_TASKS, ALL_TASKS)
    stats = category_aggregate(full)
    assert len(stats) == 9
    assert sum(s.count for s in stats.values()) == int(((full.values > 65) & full.off_diagonal()).sum())
    with pytest.raises(UncategorizedTask):
        category_aggregate(full, {1: "G"})


def test_report_files(tmp_path):
    rng = np.random.default_rng(4)
    m = AUCMatrix(rng.uniform(40, 100, (25, 25)), ALL_TASKS, ALL_TASKS)
    base = AUCMatrix(rng.uniform(40, 100, (25, 25)), ALL_TASKS, ALL_TASKS)
    a = emit_report(m, tmp_path / "a", diff=diff_matrix(m, base))
    b = emit_report(m, tmp_path / "b", diff=diff_matrix(m, base))
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    img = read_ppm((tmp_path / "a" / "heatmap.ppm").read_bytes())
    assert img.shape == (200, 200, 3)
    back = parse_matrix_csv((tmp_path / "a" / "matrix.csv").read_text())
    assert back.sources == m.sources and np.max(np.abs(back.values - m.values)) <= 0.005
    top = (tmp_path / "a" / "top_k.csv").read_text().splitlines()
    assert top[0] == "rank,source,target,delta" and len(top) == 101


def test_heatmap_colors():
    m = AUCMatrix([[0.0, 50.0], [100.0, math.nan]], (1, 2), (1, 2))
    img = heatmap_image(m, block=2)
    np.testing.assert_array_equal(img[0, 0], [0, 0, 1])
    np.testing.assert_array_equal(img[0, 2], [1, 1, 1])
    np.testing.assert_array_equal(img[2, 0], [1, 0, 0])
    np.testing.assert_array_equal(img[2, 2], [0.5, 0.5, 0.5])


def test_cross_task_matrix_small(desk_backbone):
    from hwclfa.experiment import synthetic_samples
    from hwclfa.prototypes import LexicalEncoder, build_all
    from hwclfa.tasks import task_meta
    from hwclfa.trainer import TrainConfig, train

    samples = synthetic_samples(desk_backbone, 2, 8, [2, 4, 9])
    protos = build_all(LexicalEncoder(0, 16), [task_meta(t) for t in (2, 4, 9)])
    stacks = {t: train(samples, t, TrainConfig(epochs=1), desk_backbone, protos[t].matrix).stack for t in (2, 4, 9)}
    m = cross_task_matrix(stacks, samples, protos, desk_backbone)
    assert m.shape == (3, 3) and np.all((m.values >= 0) & (m.values <= 100))
    assert np.all(m.counts == 8)
    shuffled = {t: list(reversed(v)) for t, v in samples.items()}
    np.testing.assert_array_equal(cross_task_matrix(stacks, shuffled, protos, desk_backbone).values, m.values)
    single = {t: [s for s in v if s.label == 1] for t, v in samples.items()}
    assert np.isnan(cross_task_matrix(stacks, single, protos, desk_backbone).values).all()
