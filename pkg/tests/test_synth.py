import math

import numpy as np
import pytest

from gpaco.contrast import DegenerateFeatureError, class_priors_from_counts
from gpaco.losses import LossConfig
from gpaco.synth.data import (
    Dataset,
    DatasetSpec,
    augment_view,
    class_counts,
    dataset_from_json,
    dataset_to_json,
    make_longtailed_gaussians,
)
from gpaco.synth.encoder import MLP, EncoderSpec, Network
from gpaco.synth.evaluate import (
    classifier_grad_norms,
    decile_ratio,
    evaluate,
    frequency_splits,
    predict,
    split_accuracies,
)
from gpaco.synth.pixels import (
    pixel_auxiliary_loss,
    pixel_transform,
    sample_pixel_features,
    sample_positions,
    synthetic_feature_map,
)
from gpaco.synth.train import (
    TrainConfig,
    TrainingDivergedError,
    cosine_lr,
    fit,
    init_state,
    make_step_inputs,
    step_loss,
    train_step,
)

from helpers import central_diff, rel_err

SMALL_ENC = dict(hidden=12, embed_dim=8, transform_hidden=10, transform_dim=6)


# --- data ----------------------------------------------------------------

def test_class_count_formula():
    c = class_counts(DatasetSpec(n_classes=10, n_max=500, beta=100))
    assert c[0] == 500 and c[-1] == 5
    assert class_counts(DatasetSpec(n_classes=3, n_max=100, beta=100)).tolist() == [100, 10, 1]
    assert set(class_counts(DatasetSpec(beta=1)).tolist()) == {800}
    # independent evaluation of round(N_max * beta^(-k/(n-1)))
    expected = [math.floor(800 * 100 ** (-k / 9) + 0.5) for k in range(10)]
    assert class_counts(DatasetSpec()).tolist() == expected


def test_dataset_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(beta=0.5)
    with pytest.raises(ValueError):
        DatasetSpec(n_max=50, beta=100)
    with pytest.raises(KeyError):
        DatasetSpec.from_dict({"betta": 3})


def test_dataset_is_reproducible_and_separated():
    spec = DatasetSpec(n_classes=5, dim=8, n_max=40, beta=10, seed=3)
    (a, ta), (b, tb) = make_longtailed_gaussians(spec), make_longtailed_gaussians(spec)
    assert np.array_equal(a.x, b.x) and np.array_equal(ta.x, tb.x)
    assert a.counts.tolist() == class_counts(spec).tolist()
    assert set(ta.counts.tolist()) == {spec.n_test_per_class}
    means = np.array([a.x[a.y == k].mean(axis=0) for k in range(5)])
    assert not np.array_equal(a.x, make_longtailed_gaussians(DatasetSpec(n_classes=5, dim=8, n_max=40,
                                                                         beta=10, seed=4))[0].x)
    assert means.shape == (5, 8)


@pytest.mark.parametrize("dim", [2, 16])
def test_class_means_respect_separation(dim):
    spec = DatasetSpec(n_classes=6, dim=dim, n_max=20, beta=2, noise_sigma=0.0, class_separation=2.5)
    train, _ = make_longtailed_gaussians(spec)
    means = np.array([train.x[train.y == k][0] for k in range(6)])
    d = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert d[~np.eye(6, dtype=bool)].min() >= 2.5 - 1e-9


def test_dataset_json_round_trip(tmp_path):
    spec = DatasetSpec(n_classes=4, dim=3, n_max=20, beta=4, seed=2)
    train, test = make_longtailed_gaussians(spec)
    path = dataset_to_json(spec, train, tmp_path / "d.json")
    spec2, train2, test2 = dataset_from_json(path)
    assert spec2 == spec and np.array_equal(train2.x, train.x) and np.array_equal(test2.y, test.y)


def test_augment_view_examples():
    x = np.arange(6.0).reshape(2, 3)
    rng = np.random.default_rng(0)
    assert np.array_equal(augment_view(x, 0.0, 0.0, rng), x)
    a = augment_view(x, 0.5, 0.2, np.random.default_rng(5))
    b = augment_view(x, 0.5, 0.2, np.random.default_rng(5))
    assert np.array_equal(a, b)
    # with no noise each row is a scaled copy, s in [0.9, 1.1]
    out = augment_view(np.ones((50, 3)), 0.0, 0.1, np.random.default_rng(1))
    assert np.allclose(out, out[:, :1]) and out.min() >= 0.9 and out.max() <= 1.1
    s = np.random.default_rng(9).uniform(0.9, 1.1, size=(1, 1))[0, 0]
    assert np.allclose(augment_view(np.array([[2.0, -1.0]]), 0.0, 0.1, np.random.default_rng(9)),
                       s * np.array([2.0, -1.0]))
    with pytest.raises(ValueError):
        augment_view(x, -1.0, 0.0, rng)


# --- encoder -------------------------------------------------------------

def test_mlp_forward_matches_explicit_layers():
    mlp = MLP([3, 4, 2], "tanh")
    rng = np.random.default_rng(0)
    p = mlp.init(rng) + 0.1 * rng.standard_normal(mlp.n_params)
    X = rng.standard_normal((5, 3))
    (W1, b1), (W2, b2) = mlp.layers(p)
    out, _ = mlp.forward(p, X)
    np.testing.assert_allclose(out, np.tanh(X @ W1 + b1) @ W2 + b2, rtol=1e-14)
    assert mlp.n_params == 3 * 4 + 4 + 4 * 2 + 2


def test_identity_encoder_on_unit_input():
    net = Network(EncoderSpec(input_dim=4, hidden=4, embed_dim=4, transform_hidden=4, transform_dim=4,
                              activation="identity"))
    x = np.array([[0.6, 0.0, 0.8, 0.0]])
    f, g, _ = net.encode(net.identity_params(), x)
    np.testing.assert_array_equal(f, x)
    np.testing.assert_allclose(g, x)
    relu = Network(EncoderSpec(input_dim=4, hidden=4, embed_dim=4, transform_hidden=4, transform_dim=4))
    np.testing.assert_array_equal(relu.encode(relu.identity_params(), x)[0], x)
    with pytest.raises(ValueError):
        Network(EncoderSpec()).identity_params()


def test_zero_weights():
    net = Network(EncoderSpec(input_dim=3, **SMALL_ENC))
    zeros = np.zeros(net.n_params)
    f, g, _ = net.encode(zeros, np.ones((2, 3)), normalize=False)
    assert not np.any(f) and not np.any(g)
    with pytest.raises(DegenerateFeatureError):
        net.encode(zeros, np.ones((2, 3)), normalize=True)


def test_encode_rejects_bad_shapes():
    net = Network(EncoderSpec(input_dim=3, **SMALL_ENC))
    p = net.init(np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.encode(p, np.ones((2, 4)))
    with pytest.raises(ValueError):
        net.encode(p[:-1], np.ones((2, 3)))


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("normalize", [True, False])
def test_encode_backward_matches_finite_differences(activation, normalize):
    net = Network(EncoderSpec(input_dim=5, activation=activation, **SMALL_ENC))
    rng = np.random.default_rng(1)
    p = net.init(rng) + 0.05 * rng.standard_normal(net.n_params)
    X = rng.standard_normal((4, 5))
    wf, wg = rng.standard_normal((4, 8)), rng.standard_normal((4, 6))

    def objective(params):
        f, g, _ = net.encode(params, X, normalize)
        return float(np.sum(wf * f) + np.sum(wg * g))

    _, _, cache = net.encode(p, X, normalize)
    assert rel_err(net.backward(p, cache, wf, wg), central_diff(objective, p)).max() < 1e-5


# --- training ------------------------------------------------------------

def test_cosine_schedule_endpoints():
    assert cosine_lr(0.1, 0, 100) == 0.1
    assert cosine_lr(0.1, 100, 100) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(0.1, 50, 100) == pytest.approx(0.05, rel=1e-12)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=32, queue_size=48)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1, queue_size=4)
    with pytest.raises(KeyError):
        TrainConfig.from_dict({"lr": 0.1, "lerning_rate": 1})
    with pytest.raises(KeyError):
        TrainConfig.from_dict({"loss": {"alpah": 0.1}})
    merged = TrainConfig.from_dict({"loss": {"variant": "paco"}})
    assert merged.loss.variant == "paco" and not merged.loss.center_tau and merged.momentum_encoder
    assert not TrainConfig().momentum_encoder


def _toy(seed=0, n=60, dim=5, classes=3):
    spec = DatasetSpec(n_classes=classes, dim=dim, n_max=n, beta=4, seed=seed, n_test_per_class=20)
    return make_longtailed_gaussians(spec)


VARIANT_CONFIGS = [
    {"variant": "cross_entropy"},
    {"variant": "supcon", "tau": 0.2},
    {"variant": "info_nce", "tau": 0.2},
    {"variant": "paco", "alpha": 0.05, "tau": 0.2},
    {"variant": "paco_rebalanced", "alpha": 0.1, "tau": 0.5},
    {"variant": "gpaco", "alpha": 0.05, "tau": 0.2},
    {"variant": "gpaco", "alpha": 0.2, "tau": 0.1, "center_tau": True},
    {"variant": "multi_task", "tau": 0.3, "multi_task_weight": 0.5},
]


def test_single_step_descends_on_twenty_configs():
    rng = np.random.default_rng(42)
    train, _ = _toy()
    pri = class_priors_from_counts(train.counts)
    for trial in range(20):
        loss = dict(VARIANT_CONFIGS[trial % len(VARIANT_CONFIGS)])
        cfg = TrainConfig.from_dict({
            "loss": loss, "batch_size": 8, "queue_size": 16, "lr": 1e-3, "sgd_momentum": 0.0,
            "weight_decay": 0.0, "seed": trial, "two_views": bool(trial % 3) or loss["variant"] == "info_nce",
        })
        net = Network(EncoderSpec(input_dim=5, activation="tanh", **SMALL_ENC))
        state = init_state(net, 3, cfg)
        idx = rng.choice(len(train), 8, replace=False)
        # warm the queue so the contrast set includes queued keys
        train_step(net, state, train.x[idx], train.y[idx], cfg, 100, pri)
        inputs = make_step_inputs(state, train.x[idx], train.y[idx], cfg)
        before = step_loss(net, state, inputs, cfg, pri, with_grad=False)[0].value
        train_step(net, state, None, None, cfg, 100, pri, inputs=inputs)
        after = step_loss(net, state, inputs, cfg, pri, with_grad=False)[0].value
        assert after < before, (trial, loss)


@pytest.mark.parametrize("loss", VARIANT_CONFIGS, ids=lambda d: d["variant"])
def test_step_gradient_matches_finite_differences(loss):
    train, _ = _toy(seed=1)
    pri = class_priors_from_counts(train.counts)
    cfg = TrainConfig.from_dict({"loss": loss, "batch_size": 4, "queue_size": 8, "seed": 3})
    net = Network(EncoderSpec(input_dim=5, activation="tanh", **SMALL_ENC))
    state = init_state(net, 3, cfg)
    train_step(net, state, train.x[:4], train.y[:4], cfg, 10, pri)
    inputs = make_step_inputs(state, train.x[4:8], train.y[4:8], cfg)
    _, grad, _ = step_loss(net, state, inputs, cfg, pri)

    def value(p):
        s = state.copy()
        s.params = p
        return step_loss(net, s, inputs, cfg, pri, with_grad=False)[0].value
    assert rel_err(grad, central_diff(value, state.params)).max() < 1e-5


def test_training_is_deterministic():
    train, test = _toy()
    cfg = TrainConfig.from_dict({"epochs": 2, "batch_size": 8, "queue_size": 16, "probe_epochs": 2})
    enc = EncoderSpec(input_dim=5, **SMALL_ENC)
    _, a = fit(train, test, cfg, enc)
    _, b = fit(train, test, cfg, enc)
    assert np.array_equal(a.state.params, b.state.params)
    assert np.array_equal(a.state.centers, b.state.centers)
    assert a.history == b.history


def test_two_stage_keeps_centers_until_probe():
    train, test = _toy()
    cfg = TrainConfig.from_dict({"loss": {"variant": "supcon", "tau": 0.2}, "batch_size": 8, "queue_size": 16})
    net = Network(EncoderSpec(input_dim=5, **SMALL_ENC))
    state = init_state(net, 3, cfg)
    c0 = state.centers.copy()
    train_step(net, state, train.x[:8], train.y[:8], cfg, 10)
    assert np.array_equal(state.centers, c0)
    assert len(state.queue) == 8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_step():
    train, test = _toy()
    cfg = TrainConfig.from_dict({"loss": {"variant": "cross_entropy"}, "batch_size": 8, "queue_size": 8,
                                 "lr": 1e12, "epochs": 5})
    with pytest.raises(TrainingDivergedError) as err:
        fit(train, test, cfg, EncoderSpec(input_dim=5, **SMALL_ENC))
    assert err.value.step >= 0


def test_momentum_key_network_moves_slowly():
    train, _ = _toy()
    cfg = TrainConfig.from_dict({"loss": {"variant": "paco"}, "batch_size": 8, "queue_size": 16,
                                 "key_momentum": 0.9})
    net = Network(EncoderSpec(input_dim=5, **SMALL_ENC))
    state = init_state(net, 3, cfg)
    k0 = state.key_params.copy()
    train_step(net, state, train.x[:8], train.y[:8], cfg, 10, class_priors_from_counts(train.counts))
    np.testing.assert_allclose(state.key_params, 0.9 * k0 + 0.1 * state.params, rtol=1e-12)


# --- evaluation ----------------------------------------------------------

def test_frequency_splits_are_tertiles():
    many, medium, few = frequency_splits([5] * 10)
    assert max(map(len, (many, medium, few))) - min(map(len, (many, medium, few))) <= 1
    many, medium, few = frequency_splits([1, 50, 20, 30, 2, 40])
    assert many.tolist() == [1, 5] and medium.tolist() == [3, 2] and few.tolist() == [4, 0]


def test_predict_ties_go_to_lowest_index():
    assert predict(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]])).tolist() == [0]


def test_split_accuracies():
    y = np.array([0, 0, 1, 1, 2, 2])
    m = split_accuracies(np.array([0, 0, 1, 0, 0, 0]), y, [30, 20, 10])
    assert (m.acc_many, m.acc_medium, m.acc_few) == (1.0, 0.5, 0.0)
    assert m.acc_all == pytest.approx(0.5)


def test_separable_data_is_learned_and_untrained_is_chance():
    spec = DatasetSpec(n_classes=4, dim=6, n_max=60, beta=2, class_separation=12.0, noise_sigma=0.3,
                       n_test_per_class=500)
    train, test = make_longtailed_gaussians(spec)
    # inputs have norm ~8 here, so the step size is scaled down accordingly
    cfg = TrainConfig.from_dict({"epochs": 30, "batch_size": 8, "queue_size": 16, "aug_noise": 0.1, "lr": 0.01})
    net, res = fit(train, test, cfg, EncoderSpec(input_dim=6, **SMALL_ENC))
    assert res.final["acc_all"] == 1.0
    # random centers on random features: 1/n on average
    rng = np.random.default_rng(0)
    accs = [split_accuracies(predict(rng.standard_normal((4000, 8)), rng.standard_normal((4, 8))),
                             rng.integers(0, 4, 4000), [4, 3, 2, 1]).acc_all for _ in range(20)]
    assert abs(np.mean(accs) - 0.25) < 0.02


def test_grad_norms_are_equal_under_symmetry():
    # balanced data arranged symmetrically around symmetric centers
    C = np.eye(4)
    F = np.vstack([2 * C, 3 * C])
    y = np.tile(np.arange(4), 2)
    norms = classifier_grad_norms(F, y, C)
    assert np.ptp(norms) < 1e-6 and np.all(norms >= 0)


def test_grad_norm_matches_finite_differences():
    rng = np.random.default_rng(3)
    F, C = rng.standard_normal((12, 4)), rng.standard_normal((3, 4))
    y = rng.integers(0, 3, 12)
    pri = class_priors_from_counts([10, 5, 1])
    from gpaco.losses import cross_entropy
    norms = classifier_grad_norms(F, y, C, tau=0.5, priors=pri)
    for k in range(3):
        per = [np.linalg.norm(cross_entropy(F[i], C, k, 0.5, pri).grad_centers[k])
               for i in np.flatnonzero(y == k)]
        assert norms[k] == pytest.approx(np.mean(per), rel=1e-12)


def test_decile_ratio():
    assert decile_ratio(np.ones(10)) == 1.0
    assert decile_ratio(np.arange(1, 11, dtype=float)) == 10.0


# --- pixels --------------------------------------------------------------

def test_sample_positions_counts():
    rng = np.random.default_rng(0)
    pos = sample_positions(128, 128, 8192, rng)
    assert len(pos) == 8192 and len({tuple(p) for p in pos}) == 8192
    assert len(sample_positions(64, 64, 8192, rng)) == 4096
    with pytest.raises(ValueError):
        sample_positions(0, 5, 3, rng)


def test_pixel_features_and_labels_line_up():
    rng = np.random.default_rng(1)
    fm, labels = synthetic_feature_map(16, 16, 5, 3, rng, block=4)
    mlp = pixel_transform(5, (8, 8, 4))
    s = sample_pixel_features(fm, labels, 20, np.random.default_rng(2), mlp, mlp.init(rng))
    np.testing.assert_array_equal(s.features, fm[s.positions[:, 0], s.positions[:, 1]])
    np.testing.assert_array_equal(s.labels, labels[s.positions[:, 0], s.positions[:, 1]])
    np.testing.assert_allclose(np.linalg.norm(s.embeddings, axis=1), 1.0)
    with pytest.raises(ValueError):
        pixel_transform(5, (8, 8))


def test_pixel_loss_gradients():
    rng = np.random.default_rng(3)
    fm, labels = synthetic_feature_map(6, 6, 4, 3, rng, block=3)
    mlp = pixel_transform(4, (5, 5, 3), "tanh")
    params = mlp.init(rng)
    C = rng.standard_normal((3, 4))
    cfg = LossConfig(variant="gpaco", alpha=0.1, tau=0.3)

    def run(fm_=fm, p=params, c=C):
        return pixel_auxiliary_loss(fm_, labels, 10, np.random.default_rng(7), mlp, p, c, cfg)
    out = run()
    assert out.n_pixels == 10 and np.isfinite(out.value)
    assert rel_err(out.grad_params, central_diff(lambda p: run(p=p).value, params)).max() < 1e-5
    assert rel_err(out.grad_centers, central_diff(lambda c: run(c=c).value, C)).max() < 1e-5
    assert rel_err(out.grad_feature_map, central_diff(lambda f: run(fm_=f).value, fm)).max() < 1e-5


@pytest.mark.parametrize("loss", VARIANT_CONFIGS, ids=lambda d: f"{d['variant']}-{d.get('alpha', '')}")
def test_training_lowers_loss_on_average_over_twenty_seeds(loss):
    first, last = [], []
    for seed in range(20):
        spec = DatasetSpec(n_classes=4, dim=6, n_max=40, beta=10, seed=seed, n_test_per_class=5)
        train, test = make_longtailed_gaussians(spec)
        cfg = TrainConfig.from_dict({"loss": loss, "epochs": 4, "batch_size": 8, "queue_size": 16,
                                     "lr": 0.03, "probe_epochs": 1, "seed": seed})
        _, res = fit(train, test, cfg, EncoderSpec(input_dim=6, activation="tanh", **SMALL_ENC))
        first.append(res.initial_loss)
        last.append(res.history[-1].loss)
    assert np.mean(last) < np.mean(first)
