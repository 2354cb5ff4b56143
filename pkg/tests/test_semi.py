import numpy as np
import pytest

from noisylearn import credibility, data, numnet, semi
from noisylearn.errors import ConfigError


def identity_aug():
    return data.AugmentationSpec(jitter_sigma=0.0, scale_range=(1.0, 1.0),
                                 drop_prob=0.0)


def small_transfer(n_labeled, n_unlabeled, n_classes=3, label_of=None):
    entries = [credibility.TransferEntry(i, (label_of(i) if label_of else i % n_classes), "kept")
               for i in range(n_labeled)]
    unlabeled = list(range(n_labeled, n_labeled + n_unlabeled))
    return credibility.TransferredLabels(entries, unlabeled, 0.5, 0.5,
                                         n_classes)


# ---------------------------------------------------------------------------
# config


def test_mixmatch_config_defaults():
    config = semi.MixMatchConfig()
    assert config.T == 0.5
    assert config.alpha == 0.75
    assert config.lambda_u == 50.0
    assert config.K == 2
    assert config.lambda_lu == 0.01
    assert config.lambda_uu == 0.005
    assert config.tau_c == 0.5
    assert config.ema_decay == 0.999
    assert config.use_cbs and config.use_gsr


@pytest.mark.parametrize("kwargs", [
    dict(T=0.0), dict(alpha=0.0), dict(K=0), dict(batch_size=0),
    dict(lambda_u=-1.0), dict(tau_c=1.0), dict(ema_decay=1.5),
])
def test_mixmatch_config_validation(kwargs):
    with pytest.raises(ConfigError):
        semi.MixMatchConfig(**kwargs)


# ---------------------------------------------------------------------------
# mixup


def test_mixup_first_argument_dominates():
    rng = np.random.default_rng(0)
    x1 = np.zeros((200, 3))
    x2 = np.ones((200, 3))
    y1 = np.tile([1.0, 0.0], (200, 1))
    y2 = np.tile([0.0, 1.0], (200, 1))
    xm, ym = semi.mixup(x1, y1, x2, y2, 0.75, rng)
    assert np.all(ym[:, 0] >= 0.5)          # lam' = max(lam, 1-lam)
    assert np.all(xm >= 0.0) and np.all(xm <= 0.5 + 1e-12)


def test_mixup_lambda_override_hand_value():
    xm, ym = semi.mixup(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]),
                        np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]]),
                        0.75, np.random.default_rng(0), lam=0.25)
    # override is still folded through max(lam, 1-lam)
    assert np.allclose(xm, [[0.75, 0.25]])
    assert np.allclose(ym, [[0.75, 0.25]])


def test_mixup_rows_stay_convex():
    rng = np.random.default_rng(1)
    x1 = rng.normal(size=(50, 4))
    x2 = rng.normal(size=(50, 4))
    y1 = rng.dirichlet(np.ones(3), size=50)
    y2 = rng.dirichlet(np.ones(3), size=50)
    xm, ym = semi.mixup(x1, y1, x2, y2, 0.75, rng)
    assert np.all(xm <= np.maximum(x1, x2) + 1e-12)
    assert np.all(xm >= np.minimum(x1, x2) - 1e-12)
    assert np.allclose(ym.sum(axis=1), 1.0, atol=1e-12)


def test_mixup_validation():
    rng = np.random.default_rng(2)
    with pytest.raises(ConfigError):
        semi.mixup(np.ones((2, 2)), np.ones((2, 2)),
                   np.ones((3, 2)), np.ones((3, 2)), 0.75, rng)
    with pytest.raises(ConfigError):
        semi.mixup(np.ones((2, 2)), np.ones((2, 2)),
                   np.ones((2, 2)), np.ones((2, 2)), 0.0, rng)


# ---------------------------------------------------------------------------
# label guessing


def test_guess_labels_uniform_head_is_uniform():
    params = numnet.MlpParams(
        encoder=[numnet.Layer(np.eye(4), np.zeros(4))],
        classifier=[numnet.Layer(np.zeros((4, 3)), np.zeros(3))])
    q = semi.guess_labels(params, np.ones((5, 4)), K=2, T=1.0,
                          augmentation=identity_aug(),
                          rng=np.random.default_rng(3))
    assert np.allclose(q, 1.0 / 3.0, atol=1e-12)


def test_guess_labels_sharpens_below_unit_temperature():
    params = numnet.init_mlp([4, 8], [8, 3], seed=4)
    X = np.random.default_rng(5).normal(size=(6, 4))
    soft = semi.guess_labels(params, X, K=1, T=1.0,
                             augmentation=identity_aug(),
                             rng=np.random.default_rng(6))
    sharp = semi.guess_labels(params, X, K=1, T=0.5,
                              augmentation=identity_aug(),
                              rng=np.random.default_rng(6))
    assert np.allclose(sharp.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(sharp.argmax(axis=1), soft.argmax(axis=1))
    assert np.all(sharp.max(axis=1) >= soft.max(axis=1) - 1e-12)


def test_guess_labels_vector_input():
    params = numnet.init_mlp([4, 8], [8, 3], seed=7)
    q = semi.guess_labels(params, np.ones(4), K=3, T=0.5,
                          augmentation=identity_aug(),
                          rng=np.random.default_rng(8))
    assert q.shape == (3,)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)


def test_guess_labels_rejects_bad_k():
    params = numnet.init_mlp([4, 8], [8, 3], seed=9)
    with pytest.raises(ConfigError):
        semi.guess_labels(params, np.ones(4), K=0, T=0.5,
                          augmentation=identity_aug(),
                          rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# samplers


def test_balanced_sampler_equalizes_frequencies():
    transfer = small_transfer(1000, 0, n_classes=2,
                              label_of=lambda i: 0 if i < 900 else 1)
    state = semi.make_balanced_sampler(transfer)
    rng = np.random.default_rng(10)
    labels = []
    for _ in range(200):
        labels.extend(e.label for e in semi.balanced_sample_L(state, 100, rng))
    freq = np.mean(np.array(labels) == 1)
    assert abs(freq - 0.5) < 0.02


def test_balanced_sampler_skips_absent_classes():
    transfer = small_transfer(10, 0, n_classes=5, label_of=lambda i: i % 2)
    state = semi.make_balanced_sampler(transfer)
    batch = semi.balanced_sample_L(state, 50, np.random.default_rng(11))
    assert set(e.label for e in batch) == {0, 1}


def test_balanced_sampler_empty_L():
    transfer = credibility.TransferredLabels([], [0, 1], 0.5, 0.5, 2)
    with pytest.raises(ConfigError):
        semi.make_balanced_sampler(transfer)


def test_uniform_sampler_follows_imbalance():
    transfer = small_transfer(1000, 0, n_classes=2,
                              label_of=lambda i: 0 if i < 900 else 1)
    rng = np.random.default_rng(12)
    labels = []
    for _ in range(100):
        labels.extend(e.label for e in semi.uniform_sample_L(transfer, 100, rng))
    assert abs(np.mean(np.array(labels) == 1) - 0.1) < 0.02


def test_u_candidates_drawn_from_whole_dataset(tiny_blobs):
    rng = np.random.default_rng(13)
    rows = semi.sample_U_candidates(tiny_blobs, 500, rng)
    assert rows.shape == (500, tiny_blobs.n_features)
    # with 120 source rows and 500 draws nearly every row should appear
    matches = (rows[:, None, :] == tiny_blobs.X[None]).all(axis=2)
    assert matches.any(axis=1).all()
    seen = matches.argmax(axis=1)
    assert len(np.unique(seen)) > 100
    rows[0, 0] += 1.0  # a copy, not a view into the dataset
    assert tiny_blobs.X[seen[0], 0] != rows[0, 0]


# ---------------------------------------------------------------------------
# batch preparation and losses


def test_prepare_batch_shapes_and_targets():
    params = numnet.init_mlp([4, 8], [8, 3], seed=14)
    config = semi.MixMatchConfig(batch_size=6, K=2,
                                 augmentation=identity_aug())
    rng = np.random.default_rng(15)
    X_l = rng.normal(size=(6, 4))
    y_l = numnet.one_hot(rng.integers(0, 3, 6), 3)
    X_u = rng.normal(size=(6, 4))
    batch = semi.prepare_mixmatch_batch(params, X_l, y_l, X_u, config, rng)
    assert batch.X_sup.shape == (6, 4)
    assert batch.y_sup.shape == (6, 3)
    assert batch.X_unsup.shape == (12, 4)
    assert batch.q_unsup.shape == (12, 3)
    assert np.allclose(batch.y_sup.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(batch.q_unsup.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(batch.X_u_raw, X_u)
    assert np.array_equal(batch.y_l, y_l)


def test_prepare_batch_deterministic():
    params = numnet.init_mlp([4, 8], [8, 3], seed=16)
    config = semi.MixMatchConfig(batch_size=4, K=2)
    rng_inputs = np.random.default_rng(17)
    X_l = rng_inputs.normal(size=(4, 4))
    y_l = numnet.one_hot(rng_inputs.integers(0, 3, 4), 3)
    X_u = rng_inputs.normal(size=(4, 4))
    a = semi.prepare_mixmatch_batch(params, X_l, y_l, X_u, config,
                                    np.random.default_rng(18))
    b = semi.prepare_mixmatch_batch(params, X_l, y_l, X_u, config,
                                    np.random.default_rng(18))
    assert np.array_equal(a.X_sup, b.X_sup)
    assert np.array_equal(a.q_unsup, b.q_unsup)


def test_mixmatch_losses_finite_and_nonnegative():
    params = numnet.init_mlp([4, 8], [8, 3], seed=19)
    config = semi.MixMatchConfig(batch_size=4, K=2)
    rng = np.random.default_rng(20)
    X_l = rng.normal(size=(4, 4))
    y_l = numnet.one_hot(rng.integers(0, 3, 4), 3)
    X_u = rng.normal(size=(4, 4))
    l_sup, l_unsup = semi.mixmatch_losses(params, (X_l, y_l), X_u, config, rng)
    assert np.isfinite(l_sup) and l_sup > 0.0
    assert np.isfinite(l_unsup) and l_unsup >= 0.0


def test_mixmatch_losses_perfect_model_near_zero():
    # a model that already nails hard one-hot targets on identical inputs
    W = np.zeros((2, 2))
    W[0, 0] = 100.0
    W[1, 1] = 100.0
    params = numnet.MlpParams(
        encoder=[numnet.Layer(np.eye(2) * 10.0, np.zeros(2))],
        classifier=[numnet.Layer(W, np.zeros(2))])
    config = semi.MixMatchConfig(batch_size=2, K=1, T=1.0,
                                 augmentation=identity_aug())
    X_l = np.array([[1.0, 0.0], [1.0, 0.0]])
    y_l = np.array([[1.0, 0.0], [1.0, 0.0]])
    X_u = np.array([[1.0, 0.0], [1.0, 0.0]])
    l_sup, l_unsup = semi.mixmatch_losses(params, (X_l, y_l), X_u, config,
                                          np.random.default_rng(21))
    assert l_sup < 1e-6
    assert l_unsup < 1e-6


# ---------------------------------------------------------------------------
# stage-3 loop


def stage3_inputs(tiny_blobs, ratio=0.5):
    noisy = data.apply_noise(tiny_blobs,
                             data.NoiseSpec(kind="symmetric", ratio=ratio,
                                            seed=1))
    encoder = numnet.init_mlp([6, 16, 8], [8, 3], seed=22)
    classifier = numnet.MlpParams(
        encoder=[], classifier=numnet.init_layers(
            [8, 3], np.random.default_rng(23)))
    return noisy, encoder, classifier


def test_train_stage3_runs_and_logs(tiny_blobs):
    noisy, encoder, classifier = stage3_inputs(tiny_blobs)
    transfer = small_transfer(80, 40)
    config = semi.MixMatchConfig(batch_size=16, epochs=3, K=2)
    result = semi.train_stage3(encoder, classifier, transfer, noisy, config,
                               seed=24, test_dataset=tiny_blobs)
    assert len(result.history) == 3
    row = result.history[-1]
    for key in ("epoch", "l_sup", "l_unsup", "r_graph", "total",
                "test_acc", "test_acc_ema"):
        assert key in row
    assert row["epoch"] == 2
    assert np.isfinite(row["total"])


def test_train_stage3_deterministic(tiny_blobs):
    noisy, encoder, classifier = stage3_inputs(tiny_blobs)
    transfer = small_transfer(80, 40)
    config = semi.MixMatchConfig(batch_size=16, epochs=2, K=2)
    a = semi.train_stage3(encoder, classifier, transfer, noisy, config,
                          seed=25, test_dataset=tiny_blobs)
    b = semi.train_stage3(encoder, classifier, transfer, noisy, config,
                          seed=25, test_dataset=tiny_blobs)
    assert a.history == b.history
    for (na, wa), (_, wb) in zip(a.params.walk(), b.params.walk()):
        assert np.array_equal(wa, wb), na


def test_train_stage3_does_not_mutate_inputs(tiny_blobs):
    noisy, encoder, classifier = stage3_inputs(tiny_blobs)
    enc_before = [(n, a.copy()) for n, a in encoder.walk()]
    transfer = small_transfer(80, 40)
    config = semi.MixMatchConfig(batch_size=16, epochs=2)
    semi.train_stage3(encoder, classifier, transfer, noisy, config, seed=26)
    for (name, old), (_, new) in zip(enc_before, encoder.walk()):
        assert np.array_equal(old, new), name


def test_train_stage3_empty_unlabeled_branch(tiny_blobs):
    noisy, encoder, classifier = stage3_inputs(tiny_blobs)
    transfer = small_transfer(120, 0)
    config = semi.MixMatchConfig(batch_size=16, epochs=2)
    result = semi.train_stage3(encoder, classifier, transfer, noisy, config,
                               seed=27, test_dataset=tiny_blobs)
    assert all(row["l_unsup"] == 0.0 for row in result.history)
    assert all(row["r_graph"] == 0.0 for row in result.history)
    assert result.history[-1]["l_sup"] > 0.0


def test_train_stage3_gsr_off_zeroes_graph_term(tiny_blobs):
    noisy, encoder, classifier = stage3_inputs(tiny_blobs)
    transfer = small_transfer(80, 40)
    config = semi.MixMatchConfig(batch_size=16, epochs=2, use_gsr=False)
    result = semi.train_stage3(encoder, classifier, transfer, noisy, config,
                               seed=28)
    assert all(row["r_graph"] == 0.0 for row in result.history)


def test_train_stage3_improves_on_easy_data(tiny_blobs):
    # the loop expects pretrained weights: encoder from the contrastive
    # stage, head from the frozen probe
    from noisylearn import credibility as cred, ssrl
    noisy = data.apply_noise(tiny_blobs,
                             data.NoiseSpec(kind="symmetric", ratio=0.3,
                                            seed=1))
    enc = ssrl.train_encoder(tiny_blobs.X,
                             ssrl.ContrastiveConfig(epochs=8, batch_size=32),
                             seed=5)
    probe = cred.train_frozen_classifier(enc.encoder, noisy, epochs=20,
                                         seed=23, test_dataset=tiny_blobs)
    entries = [credibility.TransferEntry(i, int(tiny_blobs.y_clean[i]), "kept")
               for i in range(0, 120, 2)]
    transfer = credibility.TransferredLabels(
        entries, [i for i in range(1, 120, 2)], 0.5, 0.5, 3)
    config = semi.MixMatchConfig(batch_size=16, epochs=10)
    result = semi.train_stage3(enc.encoder, probe.classifier, transfer, noisy,
                               config, seed=29, test_dataset=tiny_blobs)
    accs = [row["test_acc"] for row in result.history]
    assert accs[-1] > 0.9
    assert accs[-1] >= probe.test_accuracy[-1]
