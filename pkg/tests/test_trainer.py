import numpy as np
import pytest

from lltk.trainer import (
    Layout,
    Optimizer,
    TrainConfig,
    Trajectory,
    TrainingDiverged,
    evaluate,
    init_params,
    loss_and_grad,
    make_dataset,
    train,
)


def fd_check(sizes, weight_decay, seed=0, h=1e-5):
    layout = Layout.from_sizes(sizes)
    rng = np.random.default_rng(seed)
    theta = rng.normal(scale=0.7, size=layout.size)
    X = rng.normal(size=(10, sizes[0]))
    y = rng.integers(0, sizes[-1], size=10)
    _, _, g = loss_and_grad(theta, layout, X, y, weight_decay)
    num = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        num[i] = (loss_and_grad(theta + e, layout, X, y, weight_decay)[0]
                  - loss_and_grad(theta - e, layout, X, y, weight_decay)[0]) / (2 * h)
    return np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-6))


@pytest.mark.parametrize("sizes", [(2, 8, 2), (2, 16, 16, 2), (3, 5, 4, 6, 3)])
@pytest.mark.parametrize("wd", [0.0, 1e-3])
def test_gradient_matches_finite_differences(sizes, wd):
    assert fd_check(sizes, wd) < 1e-5


def test_layout_partitions_vector():
    layout = Layout.from_sizes((2, 16, 16, 2))
    assert layout.size == 2 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2 == 354
    covered = np.zeros(layout.size, dtype=int)
    for s in layout.filter_slices():
        covered[s] += 1
    assert np.all(covered == 1)
    assert Layout.from_sizes((2, 16, 16, 2)) == layout


def test_layout_filter_count():
    # one filter per output unit of every layer plus one per bias vector
    layout = Layout.from_sizes((2, 8, 3))
    assert len(layout.filter_slices()) == 8 + 1 + 3 + 1


def test_layout_needs_hidden_layer():
    with pytest.raises(ValueError):
        Layout.from_sizes((2, 2))


def test_init_deterministic_and_seeded():
    a = init_params((2, 16, 16, 2), 3)
    assert np.array_equal(a, init_params((2, 16, 16, 2), 3))
    assert not np.array_equal(a, init_params((2, 16, 16, 2), 4))
    layout = Layout.from_sizes((2, 16, 16, 2))
    assert np.all(a[~layout.weight_mask()] == 0.0)
    W0 = layout.unpack(a)[0][0]
    assert np.all(np.abs(W0) <= np.sqrt(6 / 2))


def test_equal_logits_give_log2():
    layout = Layout.from_sizes((2, 4, 2))
    theta = np.zeros(layout.size)
    X = np.random.default_rng(0).normal(size=(7, 2))
    loss, acc, _ = loss_and_grad(theta, layout, X, np.array([0, 1, 0, 1, 1, 0, 1]))
    assert loss == pytest.approx(np.log(2), abs=1e-15)
    # ties go to class 0
    assert acc == pytest.approx(3 / 7)


def test_decay_term_is_half_lambda_weight_norm():
    layout = Layout.from_sizes((2, 8, 2))
    theta = init_params((2, 8, 2), 1) + 0.1
    X = np.random.default_rng(1).normal(size=(5, 2))
    y = np.array([0, 1, 1, 0, 1])
    base = loss_and_grad(theta, layout, X, y, 0.0)[0]
    w = theta[layout.weight_mask()]
    for lam in (1e-3, 2e-3):
        assert loss_and_grad(theta, layout, X, y, lam)[0] == pytest.approx(base + lam / 2 * w @ w, rel=1e-14)


def test_nonfinite_loss_names_layer():
    layout = Layout.from_sizes((2, 4, 2))
    theta = np.zeros(layout.size)
    theta[layout.entries[2][1]] = np.inf  # first entry of W1
    with pytest.raises(TrainingDiverged, match="W1"):
        loss_and_grad(theta, layout, np.ones((2, 2)), np.array([0, 1]))


def test_shape_mismatch():
    layout = Layout.from_sizes((2, 4, 2))
    with pytest.raises(ValueError):
        loss_and_grad(np.zeros(layout.size), layout, np.ones((3, 5)), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        loss_and_grad(np.zeros(layout.size), layout, np.ones((0, 2)), np.zeros(0, dtype=int))


# ---------------------------------------------------------------- optimisers


def test_sgd_step():
    opt = Optimizer("sgd", lr=0.1)
    out = opt.step(np.zeros(4), np.ones(4))
    np.testing.assert_allclose(out, -0.1 * np.ones(4))


def test_momentum_second_step():
    opt = Optimizer("sgd_momentum", lr=0.1, momentum=0.9)
    g = np.array([1.0, -2.0])
    a = opt.step(np.zeros(2), g)
    b = opt.step(a, g)
    np.testing.assert_allclose(b - a, -0.1 * 1.9 * g, rtol=1e-15)


def test_adam_first_step():
    opt = Optimizer("adam", lr=0.01)
    g = np.array([3.0, -0.5, 1e-3])
    out = opt.step(np.zeros(3), g)
    # at t = 1 the bias corrections give m_hat = g and v_hat = g^2
    np.testing.assert_allclose(out, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_optimizer_rejects_kind():
    with pytest.raises(ValueError):
        Optimizer("rmsprop")


def test_geometric_decay_without_data_gradient():
    layout = Layout.from_sizes((2, 4, 2))
    theta = init_params((2, 4, 2), 0)
    mask = layout.weight_mask()
    opt = Optimizer("sgd", lr=0.1)
    lam = 0.05
    for _ in range(5):
        grad = np.zeros_like(theta)
        grad[mask] = lam * theta[mask]
        new = opt.step(theta, grad)
        assert np.linalg.norm(new[mask]) == pytest.approx((1 - 0.1 * lam) * np.linalg.norm(theta[mask]), rel=1e-14)
        theta = new


# ---------------------------------------------------------------- data


def test_two_moons_balanced():
    d = make_dataset("two_moons", 200, 200, 0.15, 0)
    assert np.bincount(d.y_train).tolist() == [100, 100]
    np.testing.assert_allclose(d.x_train.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(d.x_train.std(axis=0), 1, atol=1e-12)


def test_randomized_labels_reproducible():
    a = make_dataset("two_moons", 100, 50, 0.1, 7, "randomized")
    b = make_dataset("two_moons", 100, 50, 0.1, 7, "randomized")
    t = make_dataset("two_moons", 100, 50, 0.1, 7)
    assert np.array_equal(a.y_train, b.y_train)
    assert np.array_equal(a.y_test, t.y_test)
    assert sorted(a.y_train) == sorted(t.y_train)
    assert not np.array_equal(a.y_train, t.y_train)


def test_dataset_errors():
    with pytest.raises(ValueError):
        make_dataset("two_moons", 100, 100, -0.1, 0)
    with pytest.raises(ValueError):
        make_dataset("spirals", 100, 100, 0.1, 0)
    with pytest.raises(ValueError):
        make_dataset("two_moons", 3, 100, 0.1, 0)


# ---------------------------------------------------------------- training


def test_zero_epochs_is_start():
    d = make_dataset("two_moons", 40, 40, 0.1, 0)
    start = init_params((2, 8, 2), 0)
    tr = train(TrainConfig(sizes=(2, 8, 2), epochs=0), d, start)
    assert len(tr) == 1 and tr.epochs.tolist() == [0]
    assert np.array_equal(tr.params[0], start)


def test_training_is_bitwise_deterministic():
    d = make_dataset("two_moons", 60, 40, 0.15, 1)
    cfg = TrainConfig(sizes=(2, 8, 8, 2), epochs=5, batch_size=7, input_noise=0.1, optimizer="adam", lr=0.01)
    a = train(cfg, d, init_params(cfg.sizes, 0))
    b = train(cfg, d, init_params(cfg.sizes, 0))
    assert np.array_equal(a.params, b.params)
    assert np.array_equal(a.train_loss, b.train_loss)


def test_two_moons_reaches_full_train_accuracy():
    d = make_dataset("two_moons", 200, 200, 0.15, 0)
    cfg = TrainConfig(sizes=(2, 16, 16, 2), optimizer="sgd_momentum", lr=0.1, epochs=200)
    tr = train(cfg, d, init_params(cfg.sizes, 0))
    assert tr.train_acc[-1] >= 0.99
    assert np.all(np.diff(tr.epochs) == 1)
    assert np.all((tr.train_acc >= 0) & (tr.train_acc <= 1))


def test_separable_gaussians():
    d = make_dataset("two_gaussians", 100, 100, 0.0, 0)
    cfg = TrainConfig(sizes=(2, 8, 2), epochs=20)
    assert train(cfg, d, init_params(cfg.sizes, 0)).train_acc[-1] == 1.0


def test_memorization_of_random_labels():
    d = make_dataset("two_moons", 200, 200, 0.15, 0, "randomized")
    cfg = TrainConfig(sizes=(2, 64, 64, 2), optimizer="adam", lr=0.01, epochs=1000, batch_size=200)
    tr = train(cfg, d, init_params(cfg.sizes, 0))
    assert tr.train_acc[-1] >= 0.95
    assert 0.35 <= tr.test_acc[-1] <= 0.65


def test_lr_schedule_step_decay():
    cfg = TrainConfig(lr=0.1, lr_decay=0.5, milestones=(3, 6))
    assert [cfg.lr_at(e) for e in (1, 3, 4, 6, 7)] == [0.1, 0.1, 0.05, 0.05, 0.025]


def test_recorded_loss_matches_recomputation(tmp_path):
    d = make_dataset("ring_vs_blob", 60, 40, 0.2, 2)
    cfg = TrainConfig(sizes=(2, 8, 2), epochs=3)
    tr = train(cfg, d, init_params(cfg.sizes, 1), provenance={"seed": 1, "step_size": 0.5})
    path = tmp_path / "run.lltk"
    tr.save(path)
    back = Trajectory.load(path)
    layout = Layout.from_sizes(cfg.sizes)
    for i in range(len(back)):
        loss, acc = evaluate(back.params[i], layout, d.x_train, d.y_train)
        assert abs(loss - back.train_loss[i]) <= 1e-12
        assert acc == back.train_acc[i]
    assert back.provenance["step_size"] == "0.5"
    assert back.provenance["config_hash"] == cfg.digest()


def test_start_size_checked():
    d = make_dataset("two_moons", 40, 40, 0.1, 0)
    with pytest.raises(ValueError, match="354"):
        train(TrainConfig(), d, np.zeros(10))
