import json

import numpy as np
import pytest

from conftest import quick_config
from hydro_oracle import Backend, OracleSource
from surrogate import (HISTORY_COLUMNS, ONE_BODY_QOIS, TWO_BODY_QOIS, BundleChecksumError,
                       BundleVersionError, Committee, Dataset, ExtrapolationWarning, NetSpec,
                       QbcConfig, QueryOracle, ShallowNetwork, SurrogateBundle, SurrogateSource,
                       admissible, candidate_pool, held_out_mse, init_committee, initial_design,
                       kmeans, load_bundle, predict, qbc_run, random_sampling_baseline,
                       ranking_variance, save_bundle, train)
from settings import DEFAULT_SETTINGS
from wec_types import FrequencyGrid, WecGeometry


def _constant_member(width: int, value: float) -> ShallowNetwork:
    return ShallowNetwork([np.ones((2, 3)), np.zeros((3, width))],
                          [np.zeros(3), np.full(width, value)])


def _committee(members, width=2) -> Committee:
    spec = NetSpec(2, width, hidden=(3,))
    return Committee("a", spec, members, np.zeros(2), np.ones(2), np.zeros(width),
                     np.ones(width))


def test_init_committee_determinism():
    spec = NetSpec(4, 6)
    a = init_committee(spec, 5, seed=3)
    b = init_committee(spec, 5, seed=3)
    c = init_committee(spec, 5, seed=4)
    assert a.n_members == 5
    assert a.members[0].weights[0].shape == (4, 32)
    for m, n in zip(a.members, b.members):
        for w, v in zip(m.weights, n.weights):
            assert np.array_equal(w, v)
    assert not np.array_equal(a.members[0].weights[0], c.members[0].weights[0])
    assert not np.array_equal(a.members[0].weights[0], a.members[1].weights[0])
    with pytest.raises(ValueError):
        init_committee(spec, 1, seed=0)


def test_net_spec_validation():
    with pytest.raises(ValueError):
        NetSpec(3, 5)
    with pytest.raises(ValueError):
        NetSpec(2, 5, hidden=())
    with pytest.raises(ValueError):
        NetSpec(2, 5, activation="relu")


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    net = ShallowNetwork.initialize(NetSpec(2, 3, hidden=(4,), activation="logistic"), rng)
    net.weights[-1] = rng.normal(size=net.weights[-1].shape)
    x, y = rng.normal(size=(6, 2)), rng.normal(size=(6, 3))
    _, grad_w, _ = net.gradients(x, y)
    h = 1e-6
    for layer in range(2):
        plus, minus = net.copy(), net.copy()
        plus.weights[layer][0, 0] += h
        minus.weights[layer][0, 0] -= h
        numeric = (plus.gradients(x, y)[0] - minus.gradients(x, y)[0]) / (2 * h)
        assert grad_w[layer][0, 0] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_dataset_splits():
    data = Dataset.build(np.arange(40.0).reshape(20, 2), np.zeros((20, 3)), seed=1)
    tags = list(data.splits)
    assert (tags.count("train"), tags.count("val"), tags.count("test")) == (14, 3, 3)
    grown = data.extended(np.ones((10, 2)), np.ones((10, 3)), seed=2)
    assert len(grown) == 30
    assert list(grown.splits[:20]) == tags
    assert data.extended(np.empty((0, 2)), np.empty((0, 3)), seed=2) is data
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros((2, 1)), np.array(["train"] * 3))


def test_constant_target_trains_exactly():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (30, 2))
    y = np.full((30, 4), 3.25)
    committee = init_committee(NetSpec(2, 4, hidden=(6,)), 3, seed=0, qoi="a")
    trained, metrics = train(committee, Dataset.build(x, y, 0), epochs=20, seed=0, n_jobs=1)
    assert held_out_mse(trained, x, y) <= 1e-8
    assert metrics.max_mse <= 1e-8


def test_zero_epochs_returns_committee_unchanged():
    committee = init_committee(NetSpec(2, 3), 2, seed=0)
    data = Dataset.build(np.random.default_rng(0).uniform(size=(10, 2)), np.ones((10, 3)), 0)
    same, metrics = train(committee, data, epochs=0)
    assert same is committee
    assert metrics.epochs_run == [0, 0]


def test_train_rejects_empty_dataset():
    committee = init_committee(NetSpec(2, 3), 2, seed=0)
    with pytest.raises(ValueError):
        train(committee, Dataset(np.empty((0, 2)), np.empty((0, 3)), np.empty(0)))


def test_training_reduces_error():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, (80, 2))
    y = np.column_stack([np.sin(x[:, 0]) + x[:, 1], x[:, 0] * x[:, 1]])
    data = Dataset.build(x, y, 0)
    committee = init_committee(NetSpec(2, 2, hidden=(16,)), 2, seed=1)
    before = held_out_mse(committee, x, y)
    trained, _ = train(committee, data, epochs=200, seed=1, n_jobs=1)
    assert held_out_mse(trained, x, y) < 0.5 * before


def test_duplicated_rows_train_like_the_original():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (30, 2))
    y = np.column_stack([np.sin(x[:, 0]) + x[:, 1], x[:, 0] * x[:, 1]])
    data = Dataset.build(x, y, 2)
    doubled = Dataset(np.repeat(data.inputs, 2, axis=0), np.repeat(data.targets, 2, axis=0),
                      np.repeat(data.splits, 2))
    committee = init_committee(NetSpec(2, 2, hidden=(8,)), 2, seed=3)
    # full batches over the whole training split make every epoch order-free
    options = dict(epochs=60, seed=4, batch_size=1000, subsample_fraction=1.0, n_jobs=1)
    _, once = train(committee, data, **options)
    _, twice = train(committee, doubled, **options)
    np.testing.assert_allclose(twice.val_mse, once.val_mse, rtol=1e-6)
    assert twice.test_mse == pytest.approx(once.test_mse, rel=1e-6)


def test_predict_identical_members_have_zero_variance():
    member = _constant_member(2, 1.5)
    mean, var = predict(_committee([member, member.copy(), member.copy()]), [[0.2, 0.3]])
    np.testing.assert_allclose(mean, [[1.5, 1.5]])
    assert np.all(var == 0)


def test_predict_two_members_variance():
    c, d = 2.0, 0.5
    committee = _committee([_constant_member(2, c + d), _constant_member(2, c - d)])
    mean, var = predict(committee, [[0.5, 0.5], [0.1, 0.9]])
    np.testing.assert_allclose(mean, c)
    np.testing.assert_allclose(var, d ** 2)
    np.testing.assert_allclose(ranking_variance(var), [d ** 2, d ** 2])


def test_predict_mean_is_member_average_and_order_free():
    rng = np.random.default_rng(3)
    committee = init_committee(NetSpec(2, 4), 4, seed=9)
    for m in committee.members:
        m.weights[-1] = rng.normal(size=m.weights[-1].shape)
    x = rng.uniform(-1, 1, (7, 2))
    mean, _ = predict(committee, x)
    np.testing.assert_allclose(mean, committee.member_outputs(x).mean(axis=0), rtol=1e-14)
    committee.members.reverse()
    reversed_mean, _ = predict(committee, x)
    np.testing.assert_allclose(reversed_mean, mean, rtol=1e-14, atol=1e-14)


def test_predict_outside_box_warns():
    committee = _committee([_constant_member(2, 1.0), _constant_member(2, 2.0)])
    with pytest.warns(ExtrapolationWarning):
        mean, _ = predict(committee, [[2.0, 0.5]])
    np.testing.assert_allclose(mean, 1.5)


def test_kmeans_examples():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [5.0, 5.0]])
    centroids = kmeans(points, 4, seed=0)
    np.testing.assert_allclose(np.array(sorted(map(tuple, centroids))),
                               np.array(sorted(map(tuple, points))))
    np.testing.assert_allclose(kmeans(points, 1, seed=0), [points.mean(axis=0)])
    with pytest.raises(ValueError):
        kmeans(points, 5, seed=0)


def test_kmeans_separated_blobs():
    rng = np.random.default_rng(1)
    a = rng.normal([0.0, 0.0], 0.3, (50, 2))
    b = rng.normal([10.0, 0.0], 0.3, (50, 2))
    centroids = kmeans(np.vstack([a, b]), 2, seed=3)
    centroids = centroids[np.argsort(centroids[:, 0])]
    assert np.linalg.norm(centroids[0] - a.mean(axis=0)) <= 1.0
    assert np.linalg.norm(centroids[1] - b.mean(axis=0)) <= 1.0


def test_kmeans_centroids_inside_bounding_box():
    points = candidate_pool(quick_config("two_body", pool_size=200), seed=4)
    centroids = kmeans(points, 12, seed=0)
    assert np.all(centroids >= points.min(axis=0) - 1e-12)
    assert np.all(centroids <= points.max(axis=0) + 1e-12)


def test_admissible_region():
    one = quick_config("one_body")
    assert list(admissible(np.array([[2.0, 1.0], [2.0, 10.0], [10.0, 0.2]]), one)) == \
        [True, False, False]
    two = quick_config("two_body")
    x = np.array([[2.0, 1.0, 14.0, 0.0], [2.0, 1.0, 13.9, 0.0]])
    assert list(admissible(x, two)) == [True, False]


def test_initial_design_and_pool_admissible():
    for kind, width in (("one_body", 2), ("two_body", 4)):
        config = quick_config(kind)
        design = initial_design(config, seed=0)
        pool = candidate_pool(config, seed=0)
        assert design.shape[1] == width
        assert len(design) >= config.interior_points + 2
        assert np.all(admissible(design, config))
        assert pool.shape == (config.pool_size, width)
        assert np.all(admissible(pool, config))
        assert np.array_equal(pool, candidate_pool(config, seed=0))


def test_qbc_config_from_settings():
    config = QbcConfig.from_settings(DEFAULT_SETTINGS, "two_body")
    assert config.input_width == 4
    assert config.committee_size == 5
    assert config.pool_size == 100000
    with pytest.raises(ValueError):
        QbcConfig.from_settings(DEFAULT_SETTINGS, "three_body")


def test_query_oracle_memoizes(small_grid, toy_source):
    oracle = QueryOracle(toy_source, small_grid, "one_body")
    first = oracle([2.0, 1.0])
    second = oracle(np.array([2.0, 1.0]))
    assert oracle.calls == 1
    assert first is second
    inputs, targets = oracle.measure(np.array([[2.0, 1.0], [3.0, 1.5]]), "b")
    assert oracle.calls == 2
    assert targets.shape == (2, len(small_grid))


def test_query_oracle_drops_failures(small_grid, toy_source):
    oracle = QueryOracle(toy_source, small_grid, "one_body")
    inputs, targets = oracle.measure(np.array([[2.0, 1.0], [25.0, 1.0]]), "a")
    assert len(inputs) == len(targets) == 1


def test_qbc_dataset_grows_by_batch(small_grid, toy_source):
    config = quick_config("one_body", k_max=2, var_tol=-1.0, mse_tol=-1.0, batch_size=3)
    oracle = QueryOracle(toy_source, small_grid, "one_body")
    committee, data = qbc_run("a", oracle, config, seed=0, n_jobs=1)
    history = committee.history_frame()
    assert list(history.columns) == HISTORY_COLUMNS
    assert list(history["round"]) == [0, 1, 2]
    n0 = history["n_samples"].iloc[0]
    assert list(history["n_samples"]) == [n0, n0 + 3, n0 + 6]
    assert len(data) == n0 + 6
    assert np.all(history["pool_var_max"] >= history["pool_var"])


def test_qbc_stops_when_tolerances_met(small_grid, toy_source):
    oracle = QueryOracle(toy_source, small_grid, "two_body")
    committee, data = qbc_run("b12", oracle, quick_config("two_body", k_max=5), seed=1, n_jobs=1)
    assert len(committee.history) == 1
    assert committee.history[0]["n_samples"] == len(data)


def test_qbc_rejects_wrong_kind(small_grid, toy_source):
    oracle = QueryOracle(toy_source, small_grid, "one_body")
    with pytest.raises(ValueError):
        qbc_run("a12", oracle, quick_config("one_body"), seed=0)


def test_qbc_is_deterministic(small_grid, toy_source):
    config = quick_config("one_body", k_max=1, var_tol=-1.0, mse_tol=-1.0)
    runs = [qbc_run("fe_re", QueryOracle(toy_source, small_grid, "one_body"), config, seed=3,
                    n_jobs=1) for _ in range(2)]
    assert np.array_equal(runs[0][1].inputs, runs[1][1].inputs)
    x = runs[0][1].inputs
    assert np.array_equal(predict(runs[0][0], x)[0], predict(runs[1][0], x)[0])


def test_bundle_requires_every_qoi(toy_bundle):
    partial = {q: c for q, c in toy_bundle.committees.items() if q != "b12"}
    with pytest.raises(ValueError):
        SurrogateBundle(toy_bundle.grid, partial)
    assert set(toy_bundle.committees) == set(ONE_BODY_QOIS + TWO_BODY_QOIS)
    assert toy_bundle.meta["oracle_calls"]["one_body"] > 0


def test_bundle_save_load_identity(tmp_path, toy_bundle):
    path = tmp_path / "bundle.json"
    save_bundle(toy_bundle, str(path), meta={"note": "test"})
    loaded = load_bundle(str(path))
    rng = np.random.default_rng(0)
    for qoi in ONE_BODY_QOIS + TWO_BODY_QOIS:
        original = toy_bundle.committees[qoi]
        restored = loaded.committees[qoi]
        for m, n in zip(original.members, restored.members):
            for w, v in zip(m.weights, n.weights):
                assert np.array_equal(w, v)
        x = rng.uniform(original.x_low, original.x_high, (100, original.spec.input_width))
        assert np.array_equal(predict(original, x)[0], predict(restored, x)[0])
    assert loaded.grid == toy_bundle.grid


def test_bundle_corruption_detected(tmp_path, toy_bundle):
    path = tmp_path / "bundle.json"
    save_bundle(toy_bundle, str(path))
    document = json.loads(path.read_text())
    document["payload"]["committees"]["a"]["y_mean"][0] += 1.0
    path.write_text(json.dumps(document))
    with pytest.raises(BundleChecksumError):
        load_bundle(str(path))
    path.write_text("{truncated")
    with pytest.raises(BundleChecksumError):
        load_bundle(str(path))


def test_bundle_version_checked(tmp_path, toy_bundle):
    path = tmp_path / "bundle.json"
    save_bundle(toy_bundle, str(path))
    document = json.loads(path.read_text())
    document["version"] = "2.0"
    path.write_text(json.dumps(document))
    with pytest.raises(BundleVersionError):
        load_bundle(str(path))


def test_surrogate_source_answers_queries(toy_bundle, small_grid):
    source = SurrogateSource(toy_bundle)
    geom = WecGeometry(3.0, 1.5)
    one = source.single(geom, small_grid)
    expected, _ = predict(toy_bundle.committees["b"], [[3.0, 1.5]])
    np.testing.assert_array_equal(one.b, expected[0])
    assert one.sigma is None
    pairs = source.pairs(geom, [30.0, 90.0], [0.0, 2.0], small_grid)
    assert len(pairs) == 2
    expected, _ = predict(toy_bundle.committees["a12"], [[3.0, 1.5, 90.0, 2.0]])
    np.testing.assert_allclose(pairs[1].a12, expected[0], rtol=1e-12)
    assert source.pairs(geom, [], [], small_grid) == []
    assert source.extrapolations == 0


def test_surrogate_source_grid_and_extrapolation(toy_bundle, small_grid):
    source = SurrogateSource(toy_bundle)
    with pytest.raises(ValueError):
        source.single(WecGeometry(2.0, 1.0), FrequencyGrid.uniform(6, 0.4, 1.6))
    with pytest.warns(ExtrapolationWarning):
        source.pairs(WecGeometry(2.0, 1.0), [5000.0], [0.5], small_grid)
    assert source.extrapolations == 1


@pytest.mark.slow
def test_qbc_beats_random_sampling(small_grid):
    oracle_source = OracleSource(Backend.TOY)
    rng = np.random.default_rng(99)
    config = quick_config("one_body", committee_size=4, pool_size=2000, batch_size=6, k_max=6,
                          var_tol=-1.0, mse_tol=-1.0, hidden=(16, 16), epochs=150, patience=20)
    low, high = config.box()
    held_out = rng.uniform(low, high, (4000, 2))
    held_out = held_out[admissible(held_out, config)][:500]
    oracle = QueryOracle(oracle_source, small_grid, "one_body")
    trials = 0
    for seed in range(10):
        wins = 0
        for qoi in ("a", "b", "fe_re"):
            committee, data = qbc_run(qoi, oracle, config, seed=seed)
            baseline, _ = random_sampling_baseline(qoi, oracle, config, len(data), seed=seed + 100)
            _, targets = oracle.measure(held_out, qoi)
            if held_out_mse(committee, held_out, targets) <= held_out_mse(baseline, held_out,
                                                                          targets):
                wins += 1
        trials += wins >= 2
    assert trials >= 7


@pytest.mark.slow
def test_pool_variance_decreases(small_grid, toy_source):
    config = quick_config("one_body", committee_size=4, pool_size=1000, batch_size=6, k_max=5,
                          var_tol=-1.0, mse_tol=-1.0, hidden=(16,), epochs=150)
    decreased = 0
    for seed in range(10):
        committee, _ = qbc_run("b", QueryOracle(toy_source, small_grid, "one_body"), config,
                               seed=seed)
        history = committee.history
        decreased += history[-1]["pool_var"] <= history[0]["pool_var"]
    assert decreased >= 8
