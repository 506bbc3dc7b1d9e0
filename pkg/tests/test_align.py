import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradets import align, corpus as cp, ndtensor as nd
from gradets.encoder import aligned_prediction, init_encoder
from gradets.ndtensor import Node

from oracles import brute_dtw, monotone_paths


def matrices(max_n=6, max_m=7):
    return st.tuples(st.integers(1, max_n), st.integers(1, max_m), st.integers(0, 2**31 - 1)).map(
        lambda a: np.random.default_rng(a[2]).uniform(0.0, 1.0, (a[0], a[1])))


def test_cost_zero_diagonal_for_identical_frames():
    mel = np.random.default_rng(0).normal(size=(5, 4))
    c = align.build_cost_matrix(mel, np.zeros((5, 12)), mel, np.zeros(5, int), 0.0)
    assert np.all(np.diag(c) == 0.0) and c.min() >= 0.0


def test_cost_is_euclidean():
    pred, gt = np.zeros((1, 6)), np.array([[3.0, 4.0, 0, 0, 0, 0]])
    assert align.build_cost_matrix(pred, np.zeros((1, 12)), gt, [0], 0.0)[0, 0] == 5.0


def test_cost_uniform_phoneme_term():
    logp = np.full((4, 12), -math.log(12))
    mel = np.ones((4, 3))
    c = align.build_cost_matrix(mel, logp, np.ones((5, 3)), [0, 3, 11, 2, 2], 0.5)
    np.testing.assert_allclose(c, 0.5 * math.log(12), rtol=1e-15)


def test_cost_errors():
    logp = np.zeros((2, 12))
    with pytest.raises(ValueError, match="bin"):
        align.build_cost_matrix(np.zeros((2, 3)), logp, np.zeros((2, 4)), [0, 0])
    with pytest.raises(ValueError, match="inventory"):
        align.build_cost_matrix(np.zeros((2, 3)), logp, np.zeros((2, 3)), [0, 12])
    with pytest.raises(ValueError):
        align.build_cost_matrix(np.zeros((2, 3)), logp, np.zeros((2, 3)), [0, 1], -1.0)


def test_dtw_single_cell():
    path, total = align.dtw_align(np.array([[2.5]]))
    assert path == [(0, 0)] and total == 2.5


def test_dtw_two_by_two():
    path, total = align.dtw_align(np.array([[1.0, 3.0], [2.0, 1.0]]))
    assert path == [(0, 0), (1, 1)] and total == 2.0


def test_dtw_tie_rule():
    path, _ = align.dtw_align(np.zeros((3, 3)))
    assert path == [(0, 0), (1, 1), (2, 2)]
    # (2,1) and (1,2) reach the corner at equal cost; the column step wins
    c = np.array([[0.0, 0, 9], [0, 9, 0], [9, 0, 0]])
    path, total = align.dtw_align(c)
    assert total == 0.0 and path == [(0, 0), (1, 0), (2, 1), (2, 2)]


@settings(max_examples=80, deadline=None, derandomize=True)
@given(cost=matrices())
def test_dtw_equals_exhaustive_search(cost):
    path, total = align.dtw_align(cost)
    assert total == pytest.approx(brute_dtw(cost), abs=1e-12)
    align.validate_path(path, *cost.shape)
    assert align.path_cost(cost, path) == pytest.approx(total, abs=1e-12)


@settings(max_examples=40, deadline=None, derandomize=True)
@given(cost=matrices(), pick=st.integers(0, 10**6))
def test_dtw_beats_any_feasible_path(cost, pick):
    paths = list(monotone_paths(*cost.shape))
    other = paths[pick % len(paths)]
    assert align.dtw_align(cost)[1] <= align.path_cost(cost, other) + 1e-12


@settings(max_examples=40, deadline=None, derandomize=True)
@given(cost=matrices(), cell=st.integers(0, 10**6), bump=st.floats(0.0, 5.0))
def test_dtw_monotone_in_cells(cost, cell, bump):
    raised = cost.copy()
    raised.flat[cell % cost.size] += bump
    assert align.dtw_align(raised)[1] >= align.dtw_align(cost)[1]


@settings(max_examples=40, deadline=None, derandomize=True)
@given(cost=matrices(), shift=st.floats(0.0, 3.0))
def test_dtw_uniform_shift(cost, shift):
    path, total = align.dtw_align(cost + shift)
    # the shifted optimum is the best path of its own length in the original matrix, plus shift per cell
    best_of_len = min(align.path_cost(cost, p) for p in monotone_paths(*cost.shape) if len(p) == len(path))
    assert total == pytest.approx(best_of_len + shift * len(path), abs=1e-9)
    if 1 in cost.shape:
        assert path == align.dtw_align(cost)[0]


def test_uniform_shift_can_favour_shorter_paths():
    c = np.array([[0.0, 0, 9], [0, 5, 0], [9, 0, 0]])
    assert len(align.dtw_align(c)[0]) == 4
    assert align.dtw_align(c + 10.0)[0] == [(0, 0), (1, 1), (2, 2)]


def test_validate_path_errors():
    with pytest.raises(ValueError):
        align.validate_path([(0, 0), (2, 1)], 3, 2)
    with pytest.raises(ValueError):
        align.validate_path([(0, 0), (1, 1)], 3, 2)
    with pytest.raises(ValueError):
        align.validate_path([(0, 0), (0, 0), (1, 1)], 2, 2)


def test_silent_loss_zero_for_identical():
    mel = np.random.default_rng(1).normal(size=(6, 4))
    assert align.silent_alignment_loss(mel, np.zeros((6, 12)), mel, np.zeros(6, int), 0.0) == 0.0


def test_silent_loss_diagonal_forcing():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 12, 5)
    gt = 100.0 * np.arange(5)[:, None] * np.ones((5, 3))
    pred = gt + 0.01 * rng.normal(size=gt.shape)
    logp = nd.log_softmax(8.0 * np.eye(12)[labels] + 0.1 * rng.normal(size=(5, 12)))
    cost = align.build_cost_matrix(pred, logp, gt, labels, 0.5)
    off = ~np.eye(5, dtype=bool)
    assert cost[off].min() > np.trace(cost)
    diag = sum(np.linalg.norm(pred[i] - gt[i]) - 0.5 * logp[i, labels[i]] for i in range(5))
    assert align.silent_alignment_loss(pred, logp, gt, labels, 0.5) == pytest.approx(diag, rel=1e-12)
    # reindexing the target breaks the diagonal and can only cost more
    perm = np.array([1, 0, 2, 4, 3])
    assert align.silent_alignment_loss(pred, logp, gt[perm], labels[perm], 0.5) > diag


def test_silent_loss_node_matches_array_version():
    rng = np.random.default_rng(3)
    pred, gt = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    logits = rng.normal(size=(7, 12))
    labels = rng.integers(0, 12, 5)
    total, mel_sum, phone_sum, path = align.silent_alignment_loss_node(
        Node.leaf(pred), Node.leaf(logits), gt, labels, 0.5)
    ref = align.silent_alignment_loss(pred, nd.log_softmax(logits), gt, labels, 0.5)
    assert total.item() == pytest.approx(ref, rel=1e-12)
    assert total.item() == pytest.approx(mel_sum.item() + 0.5 * phone_sum.item(), rel=1e-15)


def test_silent_loss_gradient_with_fixed_path():
    rng = np.random.default_rng(4)
    pred, logits = Node.leaf(rng.normal(size=(6, 3)), "pred"), Node.leaf(rng.normal(size=(6, 12)), "logits")
    total, *_ = align.silent_alignment_loss_node(pred, logits, rng.normal(size=(4, 3)), rng.integers(0, 12, 4))
    report = nd.grad_check(total)
    assert report.passed, report.failures


def test_alignment_identity_and_mean_pooling():
    x = np.random.default_rng(5).normal(size=(4, 3))
    assert np.array_equal(align.apply_alignment(x, [(i, i) for i in range(4)], 4), x)
    out = align.apply_alignment(x[:3], [(0, 0), (1, 0), (2, 1)], 2)
    np.testing.assert_allclose(out[0], 0.5 * (x[0] + x[1]), rtol=1e-15)
    assert np.array_equal(out[1], x[2])
    with pytest.raises(ValueError):
        align.apply_alignment(x, [(i, i) for i in range(4)], 5)


def test_alignment_node_matches_array():
    x = np.random.default_rng(6).normal(size=(5, 2))
    path = [(0, 0), (1, 0), (2, 1), (3, 2), (4, 2)]
    node = align.apply_alignment_node(Node.leaf(x), path, 3)
    assert np.array_equal(node.value, align.apply_alignment(x, path, 3))


def test_warped_utterance_aligns_to_target_length():
    utts = [u for u in cp.synth_corpus(8, 0, 0.5, cp.SynthConfig(bins=20)) if u.mode == "silent"]
    model = init_encoder(8, 20, widths=(8,), seed=0)
    assert any(u.emg_features.shape[0] != u.mel.frames for u in utts)
    for u in utts:
        assert aligned_prediction(model, u).shape == u.mel.values.shape
