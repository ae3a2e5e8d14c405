import numpy as np
import pytest

from koopcast.data_io import split_dataset, synth_generate
from koopcast.edmd import KoopmanModel
from koopcast.errors import ConfigError, DataError
from koopcast.forecaster import ForecastConfig, fit_koopman, goal_training_set
from koopcast.geometry import Trajectory, fit_standardizer
from koopcast.mdn import MdnNetwork, TrainConfig, train
from koopcast.metrics import evaluate, time_inference, time_rollout
from koopcast.observables import DictionarySpec


def oracle_predictor(trajs, H, P, K, noise=0.0):
    """Candidates where candidate ``k`` is the truth shifted by ``k * noise`` along x."""
    futures = {}
    for t in trajs:
        for o in range(len(t) - H - P + 1):
            futures[t.positions[o:o + H].tobytes()] = t.positions[o + H:o + H + P]

    def predict(hist, seed, frames):
        out = []
        for h in hist:
            f = futures[np.ascontiguousarray(h).tobytes()]
            out.append([f + [k * noise, 0.0] for k in range(K)])
        return np.array(out)
    return predict


def test_perfect_oracle_zero_metrics():
    trajs = synth_generate("unicycle_sine", 6, seed=0, length=20)
    cfg = ForecastConfig(4, 5, 3)
    rep = evaluate(trajs, cfg=cfg, K_list=(1, 3), predictor=oracle_predictor(trajs, 4, 5, 3))
    s = rep.scenes["test"]
    assert all(v == 0 for v in (*s.min_ade.values(), *s.min_fde.values()))


def test_nested_monotonicity_per_scene():
    trajs = synth_generate("unicycle_sine", 8, seed=1, length=20)
    rng = np.random.default_rng(0)

    def noisy(hist, seed, frames):
        return rng.standard_normal((len(hist), 5, 5, 2)) * 3

    rep = evaluate({"a": trajs[:4], "b": trajs[4:]}, cfg=ForecastConfig(4, 5, 5), K_list=(5, 1),
                   predictor=noisy)
    assert rep.k_list == (1, 5)
    for s in rep.scenes.values():
        assert s.min_ade[5] <= s.min_ade[1] and s.min_fde[5] <= s.min_fde[1]


def test_two_window_hand_aggregation():
    # one trajectory of length 3 with H = P = 1 gives two windows
    t = Trajectory("a", np.arange(3), np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
    cands = np.array([
        [[[1.0, 3.0]], [[1.0, 1.0]]],    # window 0, truth (1,0): errors 3, 1
        [[[2.0, 0.5]], [[6.0, 3.0]]],    # window 1, truth (2,0): errors 0.5, 5
    ])
    rep = evaluate([t], cfg=ForecastConfig(1, 1, 2), K_list=(1, 2),
                   predictor=lambda h, s, f: cands)
    s = rep.scenes["test"]
    assert s.windows == 2
    assert np.isclose(s.min_ade[1], (3 + 0.5) / 2) and np.isclose(s.min_ade[2], (1 + 0.5) / 2)
    assert np.isclose(s.min_fde[2], s.min_ade[2])


def test_empty_test_set_raises():
    with pytest.raises(DataError, match="empty"):
        evaluate([Trajectory("a", np.arange(3), np.zeros((3, 2)))], cfg=ForecastConfig(4, 5, 1),
                 predictor=lambda h, s, f: None)


def test_bad_k_list_and_missing_models():
    with pytest.raises(ConfigError):
        evaluate([], cfg=ForecastConfig(4, 5, 1), K_list=(0,), predictor=lambda h, s, f: None)
    with pytest.raises(ConfigError):
        evaluate([], K_list=(1,))


@pytest.fixture(scope="module")
def models():
    trajs = synth_generate("unicycle_sine", 40, noise=0.01, seed=2, length=24)
    split = split_dataset(trajs, seed=0)
    std = fit_standardizer(split.train)
    km = fit_koopman(split.train, DictionarySpec(4), 6, std)
    X, G = goal_training_set(split.train, 4, 6, std)
    net = MdnNetwork.create(X.shape[1], 3, seed=0, hidden=(16, 16), history_len=4,
                            standardizer=std)
    net = train(net, X, G, TrainConfig(batch_size=32, epochs=3, mixtures=3)).network
    return split, km, net


def test_evaluate_deterministic_and_serializable(models):
    split, km, net = models
    cfg = ForecastConfig(4, 6, 5)
    a = evaluate(split, net, km, cfg, (1, 5), seed=3)
    b = evaluate(split, net, km, cfg, (1, 5), seed=3)
    assert a.to_dict() == b.to_dict() and a.csv_text() == b.csv_text()
    s = a.scenes["test"]
    assert s.min_ade[5] <= s.min_ade[1] and s.min_fde[5] <= s.min_fde[1]
    std = evaluate(split, net, km, cfg, (1, 5), seed=3, standardized=True)
    assert std.units == "standardized"
    assert a.csv_text().splitlines()[0] == "scene,windows,minADE_1,minFDE_1,minADE_5,minFDE_5"


def test_time_inference_stats(models):
    _, km, net = models
    cfg = ForecastConfig(4, 6, 5)
    one = time_inference((net, km), cfg, n_warmup=2, n_iter=1)
    assert one.median_ms == one.p95_ms and one.n_iter == 1
    st = time_inference((net, km), cfg, n_warmup=20, n_iter=200)
    assert all(v >= 0 for v in st.stages_ms.values())
    # medians of stages need not sum exactly; allow timer overhead
    assert sum(st.stages_ms.values()) <= st.median_ms * 1.05 + 0.005
    assert st.p95_ms >= st.median_ms
    with pytest.raises(ConfigError):
        time_inference((net, km), cfg, n_iter=0)


def test_rollout_timing_under_one_ms(rng):
    spec = DictionarySpec(12)
    model = KoopmanModel(rng.standard_normal((spec.lifted_dim,) * 2) * 0.1, spec)
    assert spec.lifted_dim == 50
    st = time_rollout(model, 12, n_warmup=50, n_iter=500)
    assert st.stages_ms["rollout"] < 1.0


@pytest.mark.slow
def test_rollout_time_linear_in_horizon(rng):
    spec = DictionarySpec(12)
    model = KoopmanModel(rng.standard_normal((spec.lifted_dim,) * 2) * 0.1, spec)
    t1 = time_rollout(model, 12, n_warmup=100, n_iter=2000).stages_ms["rollout"]
    t2 = time_rollout(model, 24, n_warmup=100, n_iter=2000).stages_ms["rollout"]
    assert 1.0 <= t2 / t1 <= 3.0
