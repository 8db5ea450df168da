import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lineocr import ctc
from oracles import brute_ctc_nll, class_masses, numgrad, random_log_probs, rel_err


@pytest.mark.parametrize("seed", range(40))
def test_loss_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    T, C = rng.integers(1, 6), rng.integers(2, 5)
    lp = random_log_probs(rng, T, C)
    labels = list(rng.integers(0, C - 1, size=rng.integers(0, 4)))
    if ctc.min_frames(labels) > T:
        with pytest.raises(ValueError, match="too short"):
            ctc.ctc_loss(lp, labels)
        return
    nll, _ = ctc.ctc_loss(lp, labels)
    assert abs(nll - brute_ctc_nll(lp, labels)) < 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    T, C = 6, 4
    lp = random_log_probs(rng, T, C)
    labels = [0, 1, 1] if seed % 2 else [2, 0]
    _, g = ctc.ctc_loss(lp, labels)
    num = numgrad(lambda: ctc.ctc_loss(lp, labels)[0], lp)
    assert rel_err(g, num) < 1e-6


def test_single_frame_values():
    lp = np.log(np.array([[0.6, 0.4]]))
    assert ctc.ctc_loss(lp, [0])[0] == pytest.approx(-np.log(0.6), abs=1e-12)
    assert ctc.ctc_loss(lp, [])[0] == pytest.approx(-np.log(0.4), abs=1e-12)


def test_repeat_needs_blank_frame():
    assert ctc.min_frames([1, 1]) == 3
    assert ctc.min_frames([1, 2]) == 2
    lp = np.log(np.full((2, 3), 1 / 3))
    with pytest.raises(ValueError, match="too short"):
        ctc.ctc_loss(lp, [1, 1])


def test_rejects_blank_in_labels():
    with pytest.raises(ValueError):
        ctc.ctc_loss(np.log(np.full((3, 3), 1 / 3)), [2])


def test_uniform_two_frame_repeat_mass():
    # paths for "a a" in 3 frames: only a-blank-a
    lp = np.log(np.full((3, 2), 0.5))
    assert ctc.ctc_loss(lp, [0, 0])[0] == pytest.approx(3 * np.log(2), abs=1e-12)


def test_gradient_rows_sum_to_minus_one():
    # every frame is occupied by exactly one symbol on each path
    rng = np.random.default_rng(3)
    lp = random_log_probs(rng, 8, 5)
    _, g = ctc.ctc_loss(lp, [0, 1, 2])
    assert np.allclose(g.sum(axis=1), -1.0, atol=1e-12)


def test_extreme_log_probs_stay_finite():
    lp = np.full((5, 3), -800.0)
    lp[:, 2] = 0.0
    nll, g = ctc.ctc_loss(lp, [0])
    assert np.isfinite(nll) and np.all(np.isfinite(g))
    # dominated by the five single-frame placements of the symbol
    assert nll == pytest.approx(800.0 - np.log(5), rel=1e-12)


def test_batch_loss_is_mean_of_items():
    rng = np.random.default_rng(0)
    a, b = random_log_probs(rng, 6, 4), random_log_probs(rng, 6, 4)
    batch = np.stack([a, b])
    loss, grad = ctc.ctc_batch_loss(batch, [6, 4], [[0, 1], [2]])
    la, ga = ctc.ctc_loss(a, [0, 1])
    lb, gb = ctc.ctc_loss(b[:4], [2])
    assert loss == pytest.approx((la + lb) / 2)
    assert np.allclose(grad[0], ga / 2) and np.allclose(grad[1, :4], gb / 2)
    assert not grad[1, 4:].any()


def test_greedy_decode_merges_and_drops_blank():
    C = 4
    path = [0, 0, 3, 0, 1, 1, 3, 3, 2]
    lp = np.full((len(path), C), -5.0)
    lp[np.arange(len(path)), path] = 0.0
    assert ctc.greedy_decode(lp) == [0, 0, 1, 2]


@pytest.mark.parametrize("seed", range(30))
def test_beam_is_exact_with_unbounded_width(seed):
    rng = np.random.default_rng(500 + seed)
    T, C = rng.integers(1, 6), rng.integers(2, 5)
    lp = random_log_probs(rng, T, C, scale=2.0)
    masses = class_masses(lp)
    best = min(masses, key=lambda k: (-masses[k], k))
    labels, score = ctc.beam_decode(lp, beam_width=len(masses))
    assert tuple(labels) == best
    assert score == pytest.approx(masses[best], abs=1e-10)


def test_beam_beats_best_path_on_known_case():
    # best single path is blank-blank, yet "a" has more total mass
    p = np.array([[0.4, 0.6], [0.4, 0.6]])  # classes: a, blank
    lp = np.log(p)
    assert ctc.greedy_decode(lp) == []
    labels, score = ctc.beam_decode(lp, 4)
    assert labels == [0]
    assert score == pytest.approx(np.log(0.4 * 0.4 + 0.4 * 0.6 + 0.6 * 0.4))


def test_beam_width_one_is_valid():
    rng = np.random.default_rng(1)
    lp = random_log_probs(rng, 5, 4)
    labels, score = ctc.beam_decode(lp, 1)
    assert score <= 0.0
    with pytest.raises(ValueError):
        ctc.beam_decode(lp, 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(1, 5), C=st.integers(2, 4))
def test_beam_score_never_exceeds_true_class_mass(seed, T, C):
    lp = random_log_probs(np.random.default_rng(seed), T, C, scale=2.0)
    masses = class_masses(lp)
    for w in (1, 2, 3, 5):
        labels, score = ctc.beam_decode(lp, w)
        assert score <= masses[tuple(labels)] + 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(1, 6), C=st.integers(2, 5))
def test_label_likelihood_never_exceeds_one(seed, T, C):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, T, C)
    labels = list(rng.integers(0, C - 1, size=rng.integers(0, 3)))
    if ctc.min_frames(labels) <= T:
        assert ctc.ctc_loss(lp, labels)[0] >= -1e-12


@pytest.mark.parametrize("T,C", [(1, 2), (2, 3), (3, 3), (4, 3), (4, 2)])
def test_label_likelihoods_partition_unit_mass(T, C):
    lp = random_log_probs(np.random.default_rng(T * 10 + C), T, C)
    total = 0.0
    for n in range(T + 1):
        for labels in itertools.product(range(C - 1), repeat=n):
            if ctc.min_frames(labels) <= T:
                total += np.exp(-ctc.ctc_loss(lp, list(labels))[0])
    assert total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(2, 6), C=st.integers(3, 5))
def test_loss_is_covariant_under_relabeling(seed, T, C):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, T, C)
    perm = rng.permutation(C - 1)
    moved = lp.copy()
    moved[:, perm] = lp[:, :C - 1]
    labels = [int(v) for v in rng.integers(0, C - 1, size=2)]
    if ctc.min_frames(labels) > T:
        return
    a = ctc.ctc_loss(lp, labels)[0]
    b = ctc.ctc_loss(moved, [int(perm[v]) for v in labels])[0]
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), C=st.integers(2, 6))
def test_single_frame_beam_equals_greedy(seed, C):
    lp = random_log_probs(np.random.default_rng(seed), 1, C, scale=2.0)
    assert ctc.beam_decode(lp, 3)[0] == ctc.greedy_decode(lp)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(1, 7), C=st.integers(2, 5))
def test_decoders_never_emit_blank_and_wide_beam_beats_width_one(seed, T, C):
    lp = random_log_probs(np.random.default_rng(seed), T, C, scale=2.0)
    wide, narrow = ctc.beam_decode(lp, 8), ctc.beam_decode(lp, 1)
    assert C - 1 not in wide[0] and C - 1 not in ctc.greedy_decode(lp)
    assert wide[1] >= narrow[1] - 1e-12
