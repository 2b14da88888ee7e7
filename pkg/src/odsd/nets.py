"""Small numpy MLPs, SGD with momentum, seeded augmentation and the synthetic open-world task."""
from dataclasses import dataclass, field
import hashlib
import math

import numpy as np

from .errors import ConfigError, ContractViolation
from .numerics import as_matrix, log_softmax, softmax


# ------------------------------------------------------------------------ model


@dataclass
class MlpModel:
    """ReLU MLP; ``weights[i]`` has shape ``(sizes[i], sizes[i + 1])``."""
    sizes: tuple
    weights: list
    biases: list
    seed: int = 0
    version: int = field(default=0, compare=False)

    @classmethod
    def init(cls, sizes, seed=0):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"layer sizes must be >= 1 and at least two entries, got {sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases, seed)

    @property
    def n_classes(self):
        return self.sizes[-1]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return MlpModel(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed)

    def checksum(self):
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def __call__(self, X):
        return mlp_forward(self, X)[0]


@dataclass(frozen=True)
class ForwardCache:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each hidden layer
    version: int
    model_id: int


def mlp_forward(model, X):
    X = as_matrix(X, "mlp input")
    if X.shape[1] != model.sizes[0]:
        raise ContractViolation(f"input width {X.shape[1]} does not match model input size {model.sizes[0]}")
    inputs, pre = [], []
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ W + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, ForwardCache(inputs, pre, model.version, id(model))


def mlp_backward(model, cache, grad_logits):
    """Reverse-mode gradients ``[dW0, db0, dW1, db1, ...]`` matching :meth:`MlpModel.params`."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise ContractViolation("stale forward cache: model changed since the forward pass")
    g = np.asarray(grad_logits, dtype=np.float64)
    n_layers = len(model.weights)
    if g.shape != (cache.inputs[0].shape[0], model.sizes[-1]):
        raise ContractViolation(f"grad_logits shape {g.shape} does not match forward output")
    grads = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ model.weights[i].T) * (cache.pre[i - 1] > 0)
    return grads


# -------------------------------------------------------------------- optimizer


@dataclass
class SgdState:
    lr: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: list = None

    @classmethod
    def for_model(cls, model, lr=0.025, momentum=0.9, weight_decay=5e-4):
        return cls(lr, momentum, weight_decay, [np.zeros_like(p) for p in model.params()])


def sgd_step(model, grads, state, lr=None):
    """In-place momentum SGD: ``v <- mu v + g + wd theta``; ``theta <- theta - lr v``."""
    lr = state.lr if lr is None else lr
    params = model.params()
    if state.velocity is None:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ContractViolation(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g, v in zip(params, grads, state.velocity):
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p
        p -= lr * v
    model.version += 1
    return model, state


def cosine_lr(base_lr, epoch, epochs):
    if epochs <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / epochs))


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    loss = -float(logp[np.arange(n), labels].mean())
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return loss, g / n


# ----------------------------------------------------------------- augmentation

AUG_KINDS = ("gaussian-noise", "feature-dropout", "shift-flip")


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str = "gaussian-noise"
    sigma: float = 0.1
    dropout: float = 0.1
    max_shift: int = 1
    grid: tuple | None = None  # (height, width) when features are a flattened image
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AUG_KINDS:
            raise ConfigError(f"augmentation kind must be one of {AUG_KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            raise ConfigError(f"augmentation sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1], got {self.dropout}")
        if self.max_shift < 0:
            raise ConfigError(f"max_shift must be >= 0, got {self.max_shift}")


def _shift2d(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def augment(X, spec, epoch, indices):
    """Augmented copy of ``X``; row ``r`` depends only on ``(spec.seed, epoch, indices[r])``."""
    X = as_matrix(X, "augment input")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != (X.shape[0],):
        raise ContractViolation(f"{indices.size} indices for {X.shape[0]} rows")
    if spec.kind == "shift-flip":
        if spec.grid is None or spec.grid[0] * spec.grid[1] != X.shape[1]:
            raise ConfigError(f"shift-flip needs features declared as a 2-D grid matching width {X.shape[1]}")
    out = np.empty_like(X)
    for r, idx in enumerate(indices):
        rng = np.random.default_rng([spec.seed, epoch, int(idx)])
        x = X[r]
        if spec.kind == "gaussian-noise":
            out[r] = x + spec.sigma * rng.standard_normal(x.size) if spec.sigma else x
        elif spec.kind == "feature-dropout":
            out[r] = x * (rng.random(x.size) >= spec.dropout)
        else:
            img = x.reshape(spec.grid)
            dy, dx = rng.integers(-spec.max_shift, spec.max_shift + 1, size=2)
            img = _shift2d(img, int(dy), int(dx))
            if rng.random() < 0.5:
                img = img[:, ::-1]
            out[r] = img.ravel()
    return out


# --------------------------------------------------------------------- datasets


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ContractViolation("features and labels differ in length")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class UnlabeledPool:
    features: np.ndarray
    provenance: np.ndarray  # 0 = in-dist, 1 = ood
    ids: tuple = None
    hidden_labels: np.ndarray = None  # ground truth of in-dist items, -1 for ood; never used for training

    def __post_init__(self):
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(range(len(self.features))))
        if len(self.provenance) != len(self.features) or len(self.ids) != len(self.features):
            raise ContractViolation("pool features, provenance and ids differ in length")

    def __len__(self):
        return len(self.features)

    @property
    def ood_fraction(self):
        return float(np.mean(self.provenance == 1)) if len(self) else 0.0


PROVENANCE = {0: "in-dist", 1: "ood"}


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian clusters: ``class_means`` are in-distribution classes, ``ood_means`` unlabeled extras.

    ``class_std`` / ``ood_std`` give diagonal covariances: a scalar, one
    value per cluster, or a ``(clusters, dim)`` array of per-axis deviations.
    """
    class_means: tuple
    ood_means: tuple
    class_std: object = 1.0
    ood_std: object = 1.0
    n_train: int = 1000
    n_test: int = 1000
    n_pool: int = 4000
    ood_fraction: float = 0.3
    pool_class_weights: tuple | None = None  # class mix of the in-dist part of the pool; None = uniform

    def __post_init__(self):
        cm = np.asarray(self.class_means, dtype=np.float64)
        if cm.ndim != 2 or cm.shape[0] < 2:
            raise ConfigError("class_means must be a (C >= 2, dim) array")
        om = np.asarray(self.ood_means, dtype=np.float64).reshape(-1, cm.shape[1])
        if not 0.0 <= self.ood_fraction <= 1.0:
            raise ConfigError(f"ood_fraction must be in [0, 1], got {self.ood_fraction}")
        if self.pool_class_weights is not None:
            w = np.asarray(self.pool_class_weights, dtype=np.float64)
            if w.shape != (cm.shape[0],) or np.any(w < 0) or w.sum() <= 0:
                raise ConfigError("pool_class_weights must be C non-negative weights with a positive sum")
        if self.ood_fraction > 0 and om.shape[0] == 0:
            raise ConfigError("ood_fraction > 0 needs at least one OOD cluster")
        for name, std, k in (("class_std", self.class_std, cm.shape[0]), ("ood_std", self.ood_std, om.shape[0])):
            try:
                s = _std_matrix(std, k, cm.shape[1])
            except ValueError:
                raise ConfigError(f"{name} must be a scalar, {k} values or a ({k}, {cm.shape[1]}) array") from None
            if np.any(~np.isfinite(s)) or np.any(s <= 0):
                raise ConfigError(f"{name} must be finite and > 0 (degenerate covariance)")

    @property
    def dim(self):
        return np.asarray(self.class_means).shape[1]

    @property
    def n_classes(self):
        return np.asarray(self.class_means).shape[0]


def _std_matrix(std, k, d):
    s = np.asarray(std, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    return np.broadcast_to(s, (k, d))


def _draw(rng, means, stds, labels):
    means = np.asarray(means, dtype=np.float64)
    stds = _std_matrix(stds, means.shape[0], means.shape[1])
    return means[labels] + stds[labels] * rng.standard_normal((labels.size, means.shape[1]))


def benchmark_spec(dim=8, ood_fraction=0.3):
    """Four classes on two axes with unequal spacing, two OOD clusters sitting between class pairs.

    The unequal spacing keeps the batch Gram spectrum non-degenerate; the
    OOD clusters are near-domain (the teacher is unsure on them) rather than
    far off-manifold.
    """
    cm = np.zeros((4, dim))
    cm[0, 0], cm[1, 0], cm[2, 1], cm[3, 1] = 4.0, -4.0, 1.5, -1.5
    cs = np.ones((4, dim))
    cs[:, 1] = 0.6
    om = np.zeros((2, dim))
    om[0, :2] = (2.0, 0.75)
    om[1, :2] = (-2.0, -0.75)
    return SynthSpec(cm, om, cs, 0.5, n_train=2000, n_test=2000, n_pool=4000, ood_fraction=ood_fraction)


def separable_spec(dim=8, ood_fraction=0.3):
    """Two tight classes at +-(5, ..., 5) plus one OOD blob at the origin."""
    cm = np.stack([np.full(dim, 5.0), np.full(dim, -5.0)])
    return SynthSpec(cm, np.zeros((1, dim)), 0.1, 1.0, n_train=1000, n_test=1000, n_pool=4000,
                     ood_fraction=ood_fraction)


SYNTH_PRESETS = {"benchmark": benchmark_spec, "separable": separable_spec}


def synth_openworld(spec, seed=0):
    """Draw ``(train, test, pool)`` from the cluster layout in ``spec``."""
    rng = np.random.default_rng([seed, 0x0D5D])
    C = spec.n_classes
    cm = np.asarray(spec.class_means, dtype=np.float64)
    om = np.asarray(spec.ood_means, dtype=np.float64).reshape(-1, cm.shape[1])

    def labeled(n):
        y = rng.integers(C, size=n)
        return LabeledDataset(_draw(rng, cm, spec.class_std, y), y)

    train = labeled(spec.n_train)
    test = labeled(spec.n_test)
    n_ood = int(round(spec.ood_fraction * spec.n_pool))
    if spec.pool_class_weights is None:
        y_in = rng.integers(C, size=spec.n_pool - n_ood)
    else:
        w = np.asarray(spec.pool_class_weights, dtype=np.float64)
        y_in = rng.choice(C, size=spec.n_pool - n_ood, p=w / w.sum())
    x_in = _draw(rng, cm, spec.class_std, y_in)
    if n_ood:
        y_ood = rng.integers(om.shape[0], size=n_ood)
        x_ood = _draw(rng, om, spec.ood_std, y_ood)
    else:
        x_ood = np.zeros((0, cm.shape[1]))
    X = np.vstack([x_in, x_ood])
    prov = np.concatenate([np.zeros(len(y_in), dtype=np.int64), np.ones(n_ood, dtype=np.int64)])
    hidden = np.concatenate([y_in, -np.ones(n_ood, dtype=np.int64)])
    perm = rng.permutation(spec.n_pool)
    pool = UnlabeledPool(X[perm], prov[perm], tuple(range(spec.n_pool)), hidden[perm])
    return train, test, pool


# -------------------------------------------------------------------- training


def predict(model, X, batch=4096):
    X = np.asarray(X, dtype=np.float64)
    return np.vstack([model(X[i:i + batch]) for i in range(0, len(X), batch)]) if len(X) else np.zeros((0, model.n_classes))


def accuracy(model, dataset):
    if len(dataset) == 0:
        return 0.0
    pred = np.argmax(predict(model, dataset.features), axis=1)
    return float(np.mean(pred == dataset.labels))


def train_classifier(model, dataset, epochs=20, batch_size=64, lr=0.025, momentum=0.9,
                     weight_decay=5e-4, seed=0, schedule="constant", on_epoch=None):
    """Supervised cross-entropy training with seeded shuffling; returns the per-epoch mean loss."""
    state = SgdState.for_model(model, lr, momentum, weight_decay)
    X, y = dataset.features, dataset.labels
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch, 1]).permutation(len(y))
        step_lr = cosine_lr(lr, epoch, epochs) if schedule == "cosine" else lr
        losses = []
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            logits, cache = mlp_forward(model, X[idx])
            loss, g = cross_entropy(logits, y[idx])
            sgd_step(model, mlp_backward(model, cache, g), state, lr=step_lr)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return history


def softmax_predictions(model, X):
    return softmax(predict(model, X), axis=1)
