import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import softmax

from ctc import (best_path_decode, corpus_label_error_rate, ctc_logit_gradient, ctc_loss, edit_distance,
                 label_error_rate, required_frames)
from errors import ContractViolation, InfeasibleTargetError


def collapse(path, blank):
    out = []
    previous = None
    for label in path:
        if label != previous and label != blank:
            out.append(label)
        previous = label
    return tuple(out)


def brute_force_probability(posteriors, target):
    frames, labels = posteriors.shape
    total = 0.0
    for path in itertools.product(range(labels), repeat=frames):
        if collapse(path, labels - 1) == tuple(target):
            total += np.prod(posteriors[np.arange(frames), path])
    return total


def test_single_frame_single_label():
    loss, grad = ctc_loss([[0.6, 0.4]], [0])
    assert loss == pytest.approx(-math.log(0.6), rel=1e-12)
    assert_allclose(grad, [[-1.0 / 0.6, 0.0]])


def test_empty_target_is_all_blank():
    loss, _ = ctc_loss([[0.3, 0.7]], [])
    assert loss == pytest.approx(-math.log(0.7), rel=1e-12)
    loss, _ = ctc_loss([[0.3, 0.7], [0.2, 0.8]], ())
    assert loss == pytest.approx(-math.log(0.7 * 0.8), rel=1e-12)


def test_two_frames_one_label():
    p = np.array([[0.5, 0.2, 0.3], [0.1, 0.6, 0.3]])
    # a a, a -, - a
    expected = p[0, 0] * p[1, 0] + p[0, 0] * p[1, 2] + p[0, 2] * p[1, 0]
    loss, _ = ctc_loss(p, [0])
    assert loss == pytest.approx(-math.log(expected), rel=1e-12)


@settings(max_examples=60)
@given(st.integers(1, 6), st.integers(2, 4), st.data())
def test_loss_matches_path_enumeration(frames, labels, data):
    target = data.draw(st.lists(st.integers(0, labels - 2), max_size=3))
    if required_frames(target) > frames:
        return
    seed = data.draw(st.integers(0, 2 ** 32 - 1))
    posteriors = softmax(np.random.default_rng(seed).normal(size=(frames, labels)), axis=1)
    loss, _ = ctc_loss(posteriors, target)
    assert math.exp(-loss) == pytest.approx(brute_force_probability(posteriors, target), rel=1e-10)


def test_posterior_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    posteriors = softmax(rng.normal(size=(6, 4)), axis=1)
    target = (0, 2, 2)
    _, grad = ctc_loss(posteriors, target)
    step = 1e-6
    numeric = np.zeros_like(posteriors)
    for index in np.ndindex(posteriors.shape):
        up = posteriors.copy()
        down = posteriors.copy()
        up[index] += step
        down[index] -= step
        numeric[index] = (ctc_loss(up, target)[0] - ctc_loss(down, target)[0]) / (2 * step)
    assert_allclose(grad, numeric, rtol=1e-6, atol=1e-7)


def test_logit_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(7, 3))
    target = (1, 0, 1)
    loss, grad = ctc_logit_gradient(softmax(logits, axis=1), target)
    step = 1e-6
    numeric = np.zeros_like(logits)
    for index in np.ndindex(logits.shape):
        up = logits.copy()
        down = logits.copy()
        up[index] += step
        down[index] -= step
        numeric[index] = (ctc_loss(softmax(up, axis=1), target)[0]
                          - ctc_loss(softmax(down, axis=1), target)[0]) / (2 * step)
    assert loss == pytest.approx(ctc_loss(softmax(logits, axis=1), target)[0], rel=1e-12)
    assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)
    # each row of posterior minus occupancy sums to zero
    assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_required_frames():
    assert required_frames(()) == 0
    assert required_frames((0, 1, 2)) == 3
    assert required_frames((1, 1, 0, 0)) == 6


def test_infeasible_target():
    with pytest.raises(InfeasibleTargetError) as info:
        ctc_loss(np.full((2, 2), 0.5), [0, 0])
    assert info.value.loss == math.inf
    assert info.value.required_frames == 3


def test_zero_posterior_on_every_alignment_is_infeasible():
    with pytest.raises(InfeasibleTargetError):
        ctc_loss([[0.0, 1.0]], [0])


def test_bad_arguments():
    with pytest.raises(ContractViolation):
        ctc_loss([[1.0]], [])
    with pytest.raises(ContractViolation):
        ctc_loss([[0.5, 0.5]], [1])


def one_hot(path, labels):
    rows = np.full((len(path), labels), 0.1)
    rows[np.arange(len(path)), path] = 0.8
    return rows / rows.sum(axis=1, keepdims=True)


def test_best_path_decode_examples():
    assert best_path_decode(one_hot([0, 0, 2, 1], 3)) == (0, 1)
    assert best_path_decode(one_hot([2, 2, 2], 3)) == ()
    assert best_path_decode(one_hot([0, 2, 0], 3)) == (0, 0)


def test_edit_distance_and_rates():
    assert edit_distance((0, 1, 2), (0, 1, 2)) == 0
    assert label_error_rate((0, 1, 2), (0, 1, 2)) == 0.0
    assert label_error_rate((0, 1), (0, 1, 2)) == pytest.approx(1 / 3)
    assert label_error_rate((0, 2, 2), (0, 1, 2)) == pytest.approx(1 / 3)
    assert label_error_rate((1,), ()) == 1.0
    assert edit_distance((), (0, 1)) == 2


def test_corpus_label_error_rate():
    result = corpus_label_error_rate([((0, 1), (0, 1, 2)), ((0,), (0,))])
    assert result['distance'] == 1
    assert result['reference_length'] == 4
    assert result['micro'] == pytest.approx(0.25)
    assert result['macro'] == pytest.approx((1 / 3 + 0.0) / 2)
    assert corpus_label_error_rate([])['samples'] == 0
