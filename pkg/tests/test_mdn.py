import math

import numpy as np
import pytest

from koopcast.errors import ConfigError, DataError, NumericalError
from koopcast.mdn import (
    SIGMA_MIN,
    Adam,
    GoalMixture,
    MdnNetwork,
    TrainConfig,
    expected_goal,
    forward,
    forward_batch,
    loss_and_grad,
    mean_nll,
    nll,
    sample_goals,
    train,
)


def gaussian_pdf(g, mu, sigma):
    z = (np.asarray(g) - mu) / sigma
    return math.exp(-0.5 * float(z @ z)) / (2 * math.pi * float(np.prod(sigma)))


def numeric_gradients(net, X, G, eps=1e-5):
    out = {}
    for name, W in net.params.items():
        g = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + eps
            up = mean_nll(net, X, G)
            W[idx] = old - eps
            down = mean_nll(net, X, G)
            W[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


def test_zero_head_bias_gives_uniform_weights():
    net = MdnNetwork.create(3, mixtures=4, seed=1)
    net.params["W3"][:] = 0.0
    mix = forward(net, np.ones(3))
    assert np.allclose(mix.weights, 0.25)


def test_single_component_weight_one():
    mix = forward(MdnNetwork.create(3, mixtures=1, seed=2), np.arange(3.0))
    assert mix.weights.shape == (1,) and mix.weights[0] == 1.0


def test_weights_normalized_and_sigma_positive(rng):
    net = MdnNetwork.create(5, mixtures=6, seed=3)
    w, mu, sigma = forward_batch(net, rng.standard_normal((50, 5)) * 10)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(sigma >= SIGMA_MIN) and np.all(sigma <= 1e3)
    assert mu.shape == (50, 6, 2)


def test_nll_at_mean_closed_form():
    mix = GoalMixture(np.array([1.0]), np.array([[0.3, -0.2]]), np.ones((1, 2)))
    assert math.isclose(nll(mix, [0.3, -0.2]), math.log(2 * math.pi), rel_tol=1e-12)
    assert math.isclose(math.log(2 * math.pi), 1.8379, abs_tol=1e-4)


def test_duplicated_components_collapse(rng):
    mu, sd = rng.standard_normal((1, 2)), np.array([[0.5, 2.0]])
    one = GoalMixture(np.array([1.0]), mu, sd)
    two = GoalMixture(np.array([0.5, 0.5]), np.repeat(mu, 2, 0), np.repeat(sd, 2, 0))
    g = rng.standard_normal(2)
    assert math.isclose(nll(one, g), nll(two, g), rel_tol=1e-12)


def test_nll_against_density_oracle(rng):
    w = np.array([0.2, 0.8])
    mu = np.array([[0.0, 0.0], [1.0, -1.0]])
    sd = np.array([[1.0, 0.5], [2.0, 1.5]])
    mix = GoalMixture(w, mu, sd)
    for dist in (0.0, 1.0, 5.0, 20.0):
        g = np.array([dist, dist / 2])
        dens = sum(w[j] * gaussian_pdf(g, mu[j], sd[j]) for j in range(2))
        assert math.isclose(nll(mix, g), -math.log(dens), rel_tol=1e-9)


def test_nll_far_goal_quadratic_growth():
    mix = GoalMixture(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
    base = nll(mix, [0, 0])
    for r in (10.0, 100.0, 1000.0):
        assert math.isclose(nll(mix, [r, 0]) - base, r * r / 2, rel_tol=1e-12)


def test_nll_stable_far_from_all_components():
    mix = GoalMixture(np.array([0.5, 0.5]), np.zeros((2, 2)), np.full((2, 2), 1e-3))
    assert np.isfinite(nll(mix, [1e3, 1e3]))


def test_gradients_match_central_differences(rng):
    net = MdnNetwork.create(2, mixtures=2, hidden=(4, 4), seed=7)
    for k in net.params:
        if k.startswith("b"):
            net.params[k] = rng.standard_normal(net.params[k].shape) * 0.1
    X = rng.standard_normal((6, 2))
    G = rng.standard_normal((6, 2))
    _, grads = loss_and_grad(net, X, G)
    assert max_relative_error(grads, numeric_gradients(net, X, G)) < 1e-4


def test_sigma_clamp_masks_gradient():
    net = MdnNetwork.create(1, mixtures=1, hidden=(2, 2), seed=0)
    net.params["b3"][-2:] = -50.0  # raw log-sigma far below the clamp
    _, grads = loss_and_grad(net, np.ones((1, 1)), np.zeros((1, 2)))
    assert np.all(grads["b3"][-2:] == 0.0)
    mix = forward(net, np.ones(1))
    assert np.allclose(mix.stds, SIGMA_MIN)


def test_overfit_single_sample():
    net = MdnNetwork.create(3, mixtures=2, hidden=(16, 16), seed=4)
    x, g = np.array([[0.5, -1.0, 2.0]]), np.array([[1.5, -0.5]])
    res = train(net, x, g, TrainConfig(lr=3e-4, batch_size=1, epochs=500, mixtures=2),
                record_steps=True)
    steps = np.array(res.step_losses + [mean_nll(res.network, x, g)])
    assert np.mean(np.diff(steps) < 0) >= 0.95
    assert steps[0] - steps[-1] >= 2.0


def test_bimodal_clusters_recovered():
    r = np.random.default_rng(0)
    n = 1000
    side = r.choice([-1.0, 1.0], n)
    G = np.stack([5 * side, np.zeros(n)], 1) + 0.3 * r.standard_normal((n, 2))
    X = r.standard_normal((n, 2)) * 0.1
    net = MdnNetwork.create(2, mixtures=3, hidden=(32, 32), seed=0)
    res = train(net, X, G, TrainConfig(lr=3e-3, batch_size=64, epochs=80, mixtures=3))
    draws = sample_goals(forward(res.network, np.zeros(2)), 2000, seed=1)
    for c in (-5.0, 5.0):
        near = np.hypot(draws[:, 0] - c, draws[:, 1]) <= 1.0
        assert near.mean() >= 0.2


def test_goal_seeded_mean_biases(rng):
    G = rng.standard_normal((50, 2))
    net = MdnNetwork.create(3, mixtures=4, seed=2, goal_samples=G)
    means = net.params["b3"][4:12].reshape(4, 2)
    assert all(any(np.array_equal(m, g) for g in G) for m in means)
    assert len({m.tobytes() for m in means}) == 4
    assert np.all(net.params["b3"][:4] == 0) and np.all(net.params["b3"][12:] == 0)
    again = MdnNetwork.create(3, mixtures=4, seed=2, goal_samples=G)
    assert np.array_equal(again.params["b3"], net.params["b3"])


def test_adam_first_step_is_lr_sized():
    p = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1).step(p, {"w": np.array([3.0, -0.001])})
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-6)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_restores_checkpoint_on_divergence():
    net = MdnNetwork.create(2, mixtures=1, hidden=(4, 4), seed=0)
    X = np.array([[1.0, 1.0], [np.inf, 0.0]])
    G = np.zeros((2, 2))
    res = train(net, X, G, TrainConfig(batch_size=1, epochs=3, mixtures=1))
    assert res.diverged
    for k in net.params:
        assert np.all(np.isfinite(res.network.params[k]))


def test_train_input_checks():
    net = MdnNetwork.create(2, mixtures=1, hidden=(4, 4))
    with pytest.raises(DataError):
        train(net, np.zeros((0, 2)), np.zeros((0, 2)), TrainConfig())
    with pytest.raises(ConfigError):
        train(net, np.zeros((3, 2)), np.zeros((2, 2)), TrainConfig())
    with pytest.raises(ConfigError):
        forward(net, np.zeros(5))
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)


def test_nonfinite_params_raise():
    net = MdnNetwork.create(2, mixtures=1, hidden=(4, 4))
    net.params["W1"][0, 0] = np.nan
    with pytest.raises(NumericalError):
        forward(net, np.zeros(2))


def test_tiny_sigma_samples_concentrate():
    mix = GoalMixture(np.array([1.0]), np.array([[2.0, 3.0]]), np.full((1, 2), SIGMA_MIN))
    s = sample_goals(mix, 1000, seed=0)
    assert np.all(np.abs(s - [2.0, 3.0]) <= 5 * SIGMA_MIN)


def test_sampling_deterministic_under_seed():
    mix = GoalMixture(np.array([0.4, 0.6]), np.array([[0.0, 0.0], [1.0, 1.0]]), np.ones((2, 2)))
    assert np.array_equal(sample_goals(mix, 50, seed=9), sample_goals(mix, 50, seed=9))


def test_component_frequencies():
    # 1e5 draws: binomial std of the frequency is about 0.0014, so +-0.01 is ~7 sigma
    mix = GoalMixture(np.array([0.3, 0.7]), np.array([[-100.0, 0.0], [100.0, 0.0]]),
                      np.ones((2, 2)))
    s = sample_goals(mix, 100_000, seed=3)
    assert abs(np.mean(s[:, 0] < 0) - 0.3) <= 0.01


def test_expected_goal_examples(rng):
    assert np.allclose(expected_goal(GoalMixture(np.array([1.0]), np.array([[2.0, 5.0]]),
                                                 np.ones((1, 2)))), [2, 5])
    sym = GoalMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.0], [1.0, 0.0]]), np.ones((2, 2)))
    assert np.allclose(expected_goal(sym), [0, 0])
    w = rng.dirichlet(np.ones(4))
    mu = rng.standard_normal((4, 2))
    oracle = [sum(w[j] * mu[j, c] for j in range(4)) for c in range(2)]
    assert np.allclose(expected_goal(GoalMixture(w, mu, np.ones((4, 2)))), oracle)


def test_network_round_trip(tmp_path, rng):
    net = MdnNetwork.create(7, mixtures=3, seed=5, history_len=2, context_size=1,
                            context_radius=2.5)
    net.save(tmp_path / "g.json")
    back = MdnNetwork.load(tmp_path / "g.json")
    x = rng.standard_normal(7)
    a, b = forward(net, x), forward(back, x)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.means, b.means)
    assert back.context_size == 1 and back.context_radius == 2.5 and back.history_len == 2


def test_features_pad_context():
    net = MdnNetwork(4, context_size=2)
    f = net.features(np.ones((2, 2)), np.array([[0.5, 0.5]]))
    assert np.allclose(f, [1, 1, 1, 1, 0.5, 0.5, 1, 0, 0, 0])
