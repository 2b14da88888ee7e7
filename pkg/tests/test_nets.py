import numpy as np
import pytest

from odsd.errors import ConfigError, ContractViolation
from odsd.gradcheck import central_diff, rel_error
from odsd.nets import (AugmentationSpec, LabeledDataset, MlpModel, SgdState, SynthSpec, accuracy, augment,
                       cosine_lr, cross_entropy, mlp_backward, mlp_forward, separable_spec, sgd_step,
                       synth_openworld, train_classifier)


def backward_fd(sizes, seed, tol):
    rng = np.random.default_rng(seed)
    model = MlpModel.init(sizes, seed)
    X = rng.standard_normal((6, sizes[0]))
    G = rng.standard_normal((6, sizes[-1]))
    _, cache = mlp_forward(model, X)
    grads = mlp_backward(model, cache, G)
    for p, g in zip(model.params(), grads):
        fd = central_diff(lambda: float((mlp_forward(model, X)[0] * G).sum()), p, 1e-6)
        assert rel_error(g, fd) <= tol


def test_init_bounds_and_determinism():
    a, b = MlpModel.init((8, 16, 4), 3), MlpModel.init((8, 16, 4), 3)
    assert a.checksum() == b.checksum()
    assert np.abs(a.weights[0]).max() <= np.sqrt(6 / 24)
    assert all(np.all(bias == 0) for bias in a.biases)
    with pytest.raises(ConfigError):
        MlpModel.init((8,))


def test_backward_4_2_3():
    backward_fd((4, 2, 3), 0, 1e-6)


@pytest.mark.parametrize("sizes", [(8, 64, 64, 4), (8, 16, 4), (8, 16, 2)])
def test_backward_acceptance_shapes(sizes):
    backward_fd(sizes, 1, 1e-5)


def test_backward_zero_and_linear(rng):
    model = MlpModel.init((3, 5, 2), 0)
    X = rng.standard_normal((4, 3))
    _, cache = mlp_forward(model, X)
    assert all(np.all(g == 0) for g in mlp_backward(model, cache, np.zeros((4, 2))))
    G = rng.standard_normal((4, 2))
    for a, b in zip(mlp_backward(model, cache, 2.5 * G), mlp_backward(model, cache, G)):
        np.testing.assert_allclose(a, 2.5 * b, rtol=1e-14)


def test_backward_stale_cache(rng):
    model = MlpModel.init((3, 5, 2), 0)
    _, cache = mlp_forward(model, rng.standard_normal((4, 3)))
    grads = mlp_backward(model, cache, np.ones((4, 2)))
    sgd_step(model, grads, SgdState.for_model(model))
    with pytest.raises(ContractViolation):
        mlp_backward(model, cache, np.ones((4, 2)))


def test_forward_width_check():
    with pytest.raises(ContractViolation):
        mlp_forward(MlpModel.init((3, 2), 0), np.zeros((1, 4)))


# sgd -------------------------------------------------------------------------


def one_param_model(theta):
    return MlpModel((1, 1), [np.array([[theta]])], [np.zeros(1)])


def test_sgd_lr_zero_and_plain_step():
    m = one_param_model(1.0)
    g = [np.array([[2.0]]), np.array([0.5])]
    sgd_step(m, g, SgdState.for_model(m, lr=0.0))
    assert m.weights[0][0, 0] == 1.0
    sgd_step(m, g, SgdState.for_model(m, lr=0.1, momentum=0.0, weight_decay=0.0))
    assert m.weights[0][0, 0] == pytest.approx(0.8)
    assert m.biases[0][0] == pytest.approx(-0.05)


def test_sgd_two_momentum_steps():
    m = one_param_model(0.0)
    state = SgdState.for_model(m, lr=0.1, momentum=0.9, weight_decay=0.0)
    g = [np.array([[1.0]]), np.array([0.0])]
    sgd_step(m, g, state)
    sgd_step(m, g, state)
    assert m.weights[0][0, 0] == pytest.approx(-0.1 * 1.0 * 2.9, abs=1e-15)


def test_sgd_shape_mismatch():
    m = one_param_model(0.0)
    with pytest.raises(ContractViolation):
        sgd_step(m, [np.zeros((2, 1)), np.zeros(1)], SgdState.for_model(m))


def test_cosine_lr():
    assert cosine_lr(0.1, 0, 10) == pytest.approx(0.1)
    assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert cosine_lr(0.1, 3, 0) == 0.1


def test_cross_entropy_gradient(rng):
    logits = rng.standard_normal((5, 3))
    y = np.array([0, 2, 1, 1, 0])
    _, g = cross_entropy(logits, y)
    fd = central_diff(lambda: cross_entropy(logits, y)[0], logits)
    assert rel_error(g, fd) <= 1e-7


# augmentation ----------------------------------------------------------------


def test_augment_contracts(rng):
    X = rng.standard_normal((5, 4))
    idx = np.arange(5)
    np.testing.assert_array_equal(augment(X, AugmentationSpec(sigma=0.0), 0, idx), X)
    assert np.all(augment(X, AugmentationSpec("feature-dropout", dropout=1.0), 0, idx) == 0)
    spec = AugmentationSpec(sigma=0.3, seed=4)
    a = augment(X, spec, 2, idx)
    np.testing.assert_array_equal(a, augment(X, spec, 2, idx))
    assert not np.array_equal(a, augment(X, spec, 3, idx))
    # a row depends on its dataset index, not its batch position
    np.testing.assert_array_equal(augment(X[::-1], spec, 2, idx[::-1]), a[::-1])


def test_augment_grid():
    X = np.arange(2 * 9, dtype=float).reshape(2, 9)
    out = augment(X, AugmentationSpec("shift-flip", grid=(3, 3), max_shift=0), 0, [0, 1])
    for r in range(2):
        img = X[r].reshape(3, 3)
        assert out[r].tolist() in (img.ravel().tolist(), img[:, ::-1].ravel().tolist())
    with pytest.raises(ConfigError):
        augment(np.zeros((1, 4)), AugmentationSpec("shift-flip"), 0, [0])
    with pytest.raises(ConfigError):
        AugmentationSpec("rotate")


# synthetic data --------------------------------------------------------------


def test_synth_determinism_and_ood_zero():
    spec = separable_spec(ood_fraction=0.0)
    a, b = synth_openworld(spec, 3), synth_openworld(spec, 3)
    np.testing.assert_array_equal(a[2].features, b[2].features)
    assert np.all(a[2].provenance == 0)
    c = synth_openworld(spec, 4)
    assert not np.array_equal(a[2].features, c[2].features)


def test_synth_pool_fraction():
    train, test, pool = synth_openworld(separable_spec(ood_fraction=0.3), 0)
    assert pool.ood_fraction == pytest.approx(0.3)
    assert np.all(pool.hidden_labels[pool.provenance == 1] == -1)
    assert len(train) == 1000 and len(test) == 1000


def test_synth_degenerate_covariance():
    with pytest.raises(ConfigError):
        SynthSpec(np.eye(2), np.zeros((1, 2)), 0.0)
    with pytest.raises(ConfigError):
        SynthSpec(np.eye(2), np.zeros((0, 2)), 1.0, ood_fraction=0.2)


def test_separable_teacher_is_accurate():
    train, test, _ = synth_openworld(separable_spec(), 0)
    model = MlpModel.init((8, 16, 2), 0)
    train_classifier(model, train, epochs=3)
    assert accuracy(model, test) >= 0.99


@pytest.mark.parametrize("seed", range(5))
def test_loss_decreases_after_one_epoch(seed):
    train, _, _ = synth_openworld(separable_spec(), seed)
    model = MlpModel.init((8, 16, 2), seed)
    init_loss = cross_entropy(model(train.features), train.labels)[0]
    train_classifier(model, train, epochs=1, seed=seed)
    assert cross_entropy(model(train.features), train.labels)[0] < init_loss


def test_training_is_deterministic():
    train, _, _ = synth_openworld(separable_spec(), 1)
    a, b = MlpModel.init((8, 16, 2), 2), MlpModel.init((8, 16, 2), 2)
    train_classifier(a, train, epochs=2, seed=5)
    train_classifier(b, train, epochs=2, seed=5)
    assert a.checksum() == b.checksum()


# accuracy --------------------------------------------------------------------


def constant_model(cls, C=3, d=2):
    m = MlpModel.init((d, C), 0)
    m.weights[0][:] = 0
    m.biases[0][:] = 0
    m.biases[0][cls] = 1
    return m


def test_accuracy_trivial():
    X = np.zeros((10, 2))
    assert accuracy(constant_model(1), LabeledDataset(X, np.ones(10, dtype=int))) == 1.0
    assert accuracy(constant_model(1), LabeledDataset(X, np.zeros(10, dtype=int))) == 0.0


def test_accuracy_ties_lowest_index():
    m = MlpModel.init((2, 3), 0)
    m.weights[0][:] = 0
    assert accuracy(m, LabeledDataset(np.zeros((4, 2)), np.zeros(4, dtype=int))) == 1.0


@pytest.mark.parametrize("seed,C", [(0, 2), (1, 3), (2, 4), (3, 6)])
def test_accuracy_chance_on_random_labels(seed, C):
    rng = np.random.default_rng(seed)
    n = 4000
    X = rng.standard_normal((n, 5))
    y = rng.integers(C, size=n)
    acc = accuracy(MlpModel.init((5, 8, C), seed), LabeledDataset(X, y))
    sigma = np.sqrt((1 / C) * (1 - 1 / C) / n)
    assert abs(acc - 1 / C) <= 3 * sigma + 1e-12
