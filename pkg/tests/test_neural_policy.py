"""Neural traversal-time policy tests: backprop against finite differences,
training behaviour on synthetic data, dataset/parameter serialization, and
the closed-loop decision wrapper."""

import numpy as np
import pytest

from highmpc.dynamics import PendulumParams, QuadState, gate_pose
from highmpc.neural_policy import (Dataset, MlpParams, NeuralHighMpcPolicy,
                                   NeuralPolicyError, SearchConfig, TrainConfig,
                                   mlp_forward, mlp_loss_and_grads, mlp_predict,
                                   observation, train_mlp)


def test_observation_is_state_difference():
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0])
    gate = gate_pose(0.3, -0.2, pp)
    x = QuadState.hover([0.5, 0.1, 1.5]).as_array()
    o = observation(x, gate)
    np.testing.assert_allclose(o, x - gate.as_array(), atol=1e-14)
    with pytest.raises(NeuralPolicyError):
        observation(np.full(10, np.nan), gate)


def test_forward_output_positive():
    rng = np.random.default_rng(0)
    p = MlpParams.init(rng)
    for _ in range(50):
        o = rng.normal(size=10) * 5
        assert mlp_forward(p, o) > 0.0


def test_backprop_matches_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        p = MlpParams.init(rng)
        O = rng.normal(size=(4, 10))
        y = rng.uniform(0.5, 2.5, size=4)
        _, gW, gb = mlp_loss_and_grads(p, O, y)
        eps = 1e-6
        for layer in range(3):
            W = p.weights[layer]
            idx = (rng.integers(W.shape[0]), rng.integers(W.shape[1]))
            W[idx] += eps
            lp, _, _ = mlp_loss_and_grads(p, O, y)
            W[idx] -= 2 * eps
            lm, _, _ = mlp_loss_and_grads(p, O, y)
            W[idx] += eps
            fd = (lp - lm) / (2 * eps)
            rel = abs(fd - gW[layer][idx]) / max(1e-8, abs(fd), abs(gW[layer][idx]))
            worst = max(worst, rel)
            b = p.biases[layer]
            j = rng.integers(b.shape[0])
            b[j] += eps
            lp, _, _ = mlp_loss_and_grads(p, O, y)
            b[j] -= 2 * eps
            lm, _, _ = mlp_loss_and_grads(p, O, y)
            b[j] += eps
            fd = (lp - lm) / (2 * eps)
            rel = abs(fd - gb[layer][j]) / max(1e-8, abs(fd), abs(gb[layer][j]))
            worst = max(worst, rel)
    assert worst <= 1e-4


def synthetic_dataset(n=600, seed=0):
    rng = np.random.default_rng(seed)
    O = rng.normal(size=(n, 10))
    # smooth positive target built from a couple of observation features
    y = 1.2 + 0.4 * np.tanh(O[:, 0]) + 0.2 * np.sin(O[:, 2]) + 0.05 * O[:, 7]
    y = np.clip(y, 0.1, None)
    return Dataset(O, y, np.zeros(n, dtype=int), np.arange(n))


def test_train_mlp_learns_synthetic_function():
    data = synthetic_dataset(n=1500)
    params, curve = train_mlp(data, TrainConfig(epochs=300, seed=0, lr=1e-2,
                                                patience=30))
    assert min(curve["val_loss"]) < 0.01
    # prediction error on fresh samples from the same function
    fresh = synthetic_dataset(n=600, seed=99)
    pred = mlp_predict(params, fresh.obs)
    rmse = float(np.sqrt(np.mean((pred - fresh.t_tra) ** 2)))
    assert rmse < 0.15


def test_train_mlp_deterministic():
    data = synthetic_dataset(n=200)
    cfg = TrainConfig(epochs=10, seed=3)
    p1, c1 = train_mlp(data, cfg)
    p2, c2 = train_mlp(data, cfg)
    for W1, W2 in zip(p1.weights, p2.weights):
        np.testing.assert_array_equal(W1, W2)
    assert c1["val_loss"] == c2["val_loss"]


def test_train_mlp_rejects_empty():
    with pytest.raises(NeuralPolicyError):
        train_mlp(Dataset(np.zeros((0, 10)), np.zeros(0),
                          np.zeros(0, dtype=int), np.zeros(0, dtype=int)))


def test_params_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    p = MlpParams.init(rng)
    p.in_mean = rng.normal(size=10)
    p.in_std = np.abs(rng.normal(size=10)) + 0.5
    path = tmp_path / "mlp.json"
    p.save(path, seed=11)
    q = MlpParams.load(path)
    o = rng.normal(size=10)
    assert mlp_forward(q, o) == pytest.approx(mlp_forward(p, o), rel=1e-12)


def test_dataset_csv_round_trip(tmp_path):
    data = synthetic_dataset(n=50)
    path = tmp_path / "data.csv"
    data.write_csv(path)
    back = Dataset.read_csv(path)
    np.testing.assert_allclose(back.obs, data.obs, atol=1e-12)
    np.testing.assert_allclose(back.t_tra, data.t_tra, atol=1e-12)
    np.testing.assert_array_equal(back.episode, data.episode)
    assert len(back) == 50


def test_dataset_validation():
    with pytest.raises(NeuralPolicyError):
        Dataset(np.zeros((3, 10)), np.array([1.0, -0.5, 1.0]),
                np.zeros(3, dtype=int), np.arange(3))


def test_neural_policy_decide_valid():
    rng = np.random.default_rng(4)
    p = MlpParams.init(rng)
    pol = NeuralHighMpcPolicy(p)
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0])
    gate = gate_pose(0.5, 0.0, pp)
    x = QuadState.hover([0.0, 0.0, 1.5]).as_array()
    z = pol.decide(x, gate, dt=0.1, H=20)
    assert z.n_gates == 1
    assert 0.1 <= z.times[0] <= 2.0
    assert z.gammas[0] == 1.0
