import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfedsn.baselines import DenseClientState, hierarchical_average, local_sgd, topk_sparsify, weighted_average
from hfedsn.data import synthetic_blobs
from hfedsn.masknet import build_architecture, forward, init_frozen_weights
from oracles import flat_weighted_mean, sort_topk


def test_identical_weights_fixed_point():
    w = np.array([0.1, -2.0, 3.5])
    assert np.allclose(hierarchical_average([([w, w], [3, 5]), ([w], [2])]), w, rtol=0, atol=1e-15)


def test_equal_counts_mean():
    w1, w2 = np.array([1.0, 2.0]), np.array([3.0, -2.0])
    assert np.array_equal(weighted_average([w1, w2], [4, 4]), (w1 + w2) / 2)


def test_counts_weighting_single_edge():
    rng = np.random.default_rng(0)
    ws = [rng.normal(size=5) for _ in range(3)]
    expected = (ws[0] + ws[1] + 2 * ws[2]) / 4
    got = hierarchical_average([(ws, [1, 1, 2])])
    assert np.allclose(got, expected, rtol=0, atol=1e-12)
    assert np.allclose(got, flat_weighted_mean(ws, [1, 1, 2]), rtol=0, atol=1e-12)


def test_average_dimension_mismatch():
    with pytest.raises(ValueError):
        weighted_average([np.ones(2), np.ones(2)], [1])


def test_topk_examples():
    idx, vals = topk_sparsify([3.0, -5.0, 1.0], k=1)
    assert idx.tolist() == [1] and vals.tolist() == [-5.0]
    d = np.array([0.5, -0.1, 2.0])
    idx, vals = topk_sparsify(d, fraction=1.0)
    assert idx.tolist() == [0, 1, 2] and np.array_equal(vals, d)


def test_topk_ties_prefer_lower_index():
    idx, _ = topk_sparsify([1.0, -2.0, 2.0, 2.0, 0.0], k=2)
    assert idx.tolist() == [1, 2]


def test_topk_default_fraction():
    idx, _ = topk_sparsify(np.arange(1000.0))
    assert len(idx) == 32  # ceil(0.03125 * 1000)


def test_topk_matches_sort_oracle():
    delta = np.random.default_rng(1).normal(size=1000)
    idx, _ = topk_sparsify(delta, k=31)
    assert idx.tolist() == sort_topk(delta.tolist(), 31)


@settings(max_examples=60)
@given(st.lists(st.integers(-5, 5), min_size=2, max_size=30), st.data())
def test_topk_permutation_equivariance_and_monotonicity(vals, data):
    delta = np.array(vals, dtype=float)
    k = data.draw(st.integers(1, len(delta)))
    idx, _ = topk_sparsify(delta, k=k)
    sel = set(idx.tolist())
    # magnitude-monotone: growing a selected entry keeps it selected
    j = data.draw(st.sampled_from(sorted(sel)))
    bumped = delta.copy()
    bumped[j] = np.sign(bumped[j] or 1.0) * (abs(bumped[j]) + 1.0)
    assert j in set(topk_sparsify(bumped, k=k)[0].tolist())
    # permutation-equivariant when magnitudes are distinct
    distinct = delta + np.arange(len(delta)) * 1e-3
    perm = np.array(data.draw(st.permutations(range(len(delta)))))
    base = set(topk_sparsify(distinct, k=k)[0].tolist())
    permuted = set(topk_sparsify(distinct[perm], k=k)[0].tolist())
    assert {int(perm[i]) for i in permuted} == base


def test_local_sgd_lowers_loss():
    data = synthetic_blobs(3, (1, 2, 2), 40, 0.2, seed=0)
    arch = build_architecture((1, 2, 2), 3, mlp=True, hidden=(16,))
    w0 = np.array(init_frozen_weights(arch, 0))
    state = DenseClientState(0, 0, data, None, w0.copy(), rng_seed=1, tau=10, eta=0.1, batch_size=16)
    w, losses = local_sgd(state, w0, arch, 1)
    assert losses[-1] < losses[0]
    assert forward(arch, w, data.samples, data.labels)[1] < forward(arch, w0, data.samples, data.labels)[1]
