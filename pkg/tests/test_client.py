import numpy as np
import pytest

from hfedsn.client import (
    ClientHyper,
    ClientState,
    client_round,
    compose_probability_mask,
    evaluate,
    final_mask,
    finalize_model,
    split_mask,
)
from hfedsn.data import LabeledDataset, synthetic_blobs
from hfedsn.masknet import (
    ArchitectureSpec,
    Dense,
    Flatten,
    build_architecture,
    init_frozen_weights,
    logit,
    make_partition,
    sample_binary_mask,
    sigmoid,
)


def _three_param_partition():
    # shared Dense(1,1) then private Dense(1,1): s = p = 2
    arch = ArchitectureSpec((Flatten(), Dense(1, 1), Dense(1, 1)), (1, 1, 1), 1)
    part = make_partition(arch, private_layers=[2])
    return arch, part


@pytest.fixture
def mlp_setup():
    data = synthetic_blobs(2, (1, 4, 4), samples_per_class=4, spread=0.1, seed=0)
    arch = build_architecture((1, 4, 4), 2, mlp=True)
    part = make_partition(arch)
    w = init_frozen_weights(arch, 0)
    return data, arch, part, w


def test_compose_and_split_layout():
    arch, part = _three_param_partition()
    assert part.shared_dim == 2 and part.private_dim == 2
    theta = compose_probability_mask([0.7, 0.2], [0.9, 0.4], part)
    assert np.array_equal(theta, [0.7, 0.2, 0.9, 0.4])
    assert tuple(map(list, split_mask(np.array([1, 0, 1, 1]), part))) == ([1, 0], [1, 1])


def test_compose_without_private_layers():
    arch = build_architecture((1, 2, 2), 2, mlp=True, hidden=(3,))
    part = make_partition(arch, n_private_last=0)
    g = np.linspace(0, 1, arch.num_params)
    assert np.array_equal(compose_probability_mask(g, [], part), g)
    shared, private = split_mask(g, part)
    assert private.size == 0 and np.array_equal(shared, g)


def test_compose_split_round_trip():
    arch = build_architecture((1, 2, 2), 3, mlp=True, hidden=(4, 4))
    part = make_partition(arch, private_layers=[1, 3])  # non-contiguous private layers
    rng = np.random.default_rng(0)
    g, p = rng.random(part.shared_dim), rng.random(part.private_dim)
    g2, p2 = split_mask(compose_probability_mask(g, p, part), part)
    assert np.array_equal(g, g2) and np.array_equal(p, p2)


def test_length_errors():
    _, part = _three_param_partition()
    with pytest.raises(ValueError):
        compose_probability_mask([0.5], [0.5, 0.5], part)
    with pytest.raises(ValueError):
        split_mask(np.zeros(5), part)


def test_tau_zero_returns_sample_of_initial_scores(mlp_setup):
    data, arch, part, w = mlp_setup
    state = ClientState.create(0, 0, data, None, part, rng_seed=5, hyper=ClientHyper(tau=0, eta=1.0, batch_size=4))
    before = state.scores.copy()
    res = client_round(state, None, 1, arch, w, part)
    assert np.array_equal(state.scores, before)
    assert res.epoch_losses == []
    expected = sample_binary_mask(sigmoid(before), np.random.default_rng([5, 1, 1]))
    assert np.array_equal(res.shared_mask, expected[part.shared_idx])


def test_round_is_deterministic(mlp_setup):
    data, arch, part, w = mlp_setup
    outs = []
    for _ in range(2):
        state = ClientState.create(0, 0, data, None, part, rng_seed=9, hyper=ClientHyper(tau=1, eta=1.0, batch_size=4))
        outs.append(client_round(state, None, 1, arch, w, part))
    assert np.array_equal(outs[0].shared_mask, outs[1].shared_mask)
    assert outs[0].epoch_losses == outs[1].epoch_losses


def test_upload_is_shared_only_and_private_theta_kept(mlp_setup):
    data, arch, part, w = mlp_setup
    state = ClientState.create(0, 0, data, None, part, rng_seed=1, hyper=ClientHyper(tau=2, eta=5.0, batch_size=4))
    res = client_round(state, None, 1, arch, w, part)
    assert res.shared_mask.shape == (part.shared_dim,)
    assert np.array_equal(state.private_theta, sigmoid(state.scores)[part.private_idx])


def test_second_round_starts_from_broadcast(mlp_setup):
    data, arch, part, w = mlp_setup
    state = ClientState.create(0, 0, data, None, part, rng_seed=1, hyper=ClientHyper(tau=0, eta=1.0, batch_size=4))
    client_round(state, None, 1, arch, w, part)
    private_before = state.private_theta.copy()
    theta_g = np.random.default_rng(0).random(part.shared_dim)
    client_round(state, theta_g, 2, arch, w, part)
    theta = sigmoid(state.scores)
    assert np.allclose(theta[part.shared_idx], np.clip(theta_g, 1e-6, 1 - 1e-6), atol=1e-12)
    assert np.allclose(theta[part.private_idx], private_before, atol=1e-12)
    assert np.array_equal(state.scores, logit(compose_probability_mask(theta_g, private_before, part)))


def test_empty_dataset_rejected(mlp_setup):
    _, arch, part, _ = mlp_setup
    empty = LabeledDataset(np.zeros((0, 1, 4, 4)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError):
        ClientState.create(0, 0, empty, None, part, rng_seed=0)


def test_training_reduces_local_loss():
    data = synthetic_blobs(2, (1, 4, 4), samples_per_class=64, spread=0.2, seed=1)
    arch = build_architecture((1, 4, 4), 2, mlp=True)
    part = make_partition(arch)
    w = init_frozen_weights(arch, 2)
    state = ClientState.create(0, 0, data, None, part, rng_seed=3,
                               hyper=ClientHyper(tau=20, eta=50.0, batch_size=32))
    res = client_round(state, None, 1, arch, w, part)
    losses = res.epoch_losses
    assert losses[-1] < 0.5 * losses[0]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_finalize_full_keep_recovers_weights(mlp_setup):
    data, arch, part, w = mlp_setup
    state = ClientState.create(0, 0, data, None, part, rng_seed=0)
    state.private_theta = np.ones(part.private_dim)
    model, m = finalize_model(np.ones(part.shared_dim), state, w, part)
    assert np.array_equal(model, w) and m.all()


def test_finalize_zero_network_predicts_class_zero(mlp_setup):
    data, arch, part, w = mlp_setup
    state = ClientState.create(0, 0, data, None, part, rng_seed=0)
    state.private_theta = np.zeros(part.private_dim)
    model, _ = finalize_model(np.zeros(part.shared_dim), state, w, part)
    assert not model.any()
    assert evaluate(arch, model, data) == pytest.approx(np.mean(data.labels == 0))


def test_deterministic_threshold():
    _, part = _three_param_partition()

    class S:
        private_theta = np.array([0.4, 0.6])
        rng_seed = 0

    assert np.array_equal(final_mask(np.array([0.6, 0.4]), S, part, deterministic=True), [1, 0, 0, 1])


def test_evaluate_perfect_and_chance():
    arch = ArchitectureSpec((Flatten(), Dense(2, 2)), (1, 1, 2), 2)
    x = np.array([[1.0, 0.0], [0.0, 1.0]] * 5).reshape(10, 1, 1, 2)
    y = np.array([0, 1] * 5)
    identity = np.array([10.0, 0.0, 0.0, 10.0, 0.0, 0.0])
    assert evaluate(arch, identity, LabeledDataset(x, y, 2)) == 1.0


def test_random_masks_are_near_chance():
    rng = np.random.default_rng(0)
    c = 5
    arch = build_architecture((1, 4, 4), c, mlp=True)
    x = rng.normal(size=(2000, 1, 4, 4))
    y = rng.integers(0, c, size=2000)
    w = init_frozen_weights(arch, 0)
    m = sample_binary_mask(np.full(arch.num_params, 0.5), rng)
    acc = evaluate(arch, w * m, LabeledDataset(x, y, c))
    assert abs(acc - 1 / c) <= 0.1


def _e1c1_epoch_losses(rounds=30, tau=20, eta=50.0):
    from hfedsn.config import RunConfig
    from hfedsn.orchestrator import Simulation

    cfg = RunConfig(algorithm="hfedsn", topology="E1C1",
                    dataset={"kind": "blobs", "num_classes": 2, "shape": [1, 4, 4],
                             "samples_per_class": 100, "spread": 0.2},
                    arch="mlp", rounds=rounds, tau=tau, eta=eta, batch=32, n_classes_per_client=2,
                    seed=0, eval="final")
    sim = Simulation(cfg)
    out = []
    for t in range(1, rounds + 1):
        sim.run_round(t)
        out.append(sim.last_epoch_losses[0])
    return out


@pytest.mark.xfail(strict=True, reason="per-minibatch mask sampling makes plateaued epoch losses "
                                       "fluctuate; only about half of consecutive pairs decrease")
def test_e1c1_epoch_losses_strictly_decrease_mostly():
    flat = np.concatenate(_e1c1_epoch_losses())
    assert np.mean(np.diff(flat) < 0) >= 0.8


def test_e1c1_training_converges():
    per_round = _e1c1_epoch_losses()
    assert per_round[0][-1] < per_round[0][0]
    assert np.mean(per_round[-1]) < 0.5 * np.log(2)
