"""Small tanh MLPs with exact gradients, SGD/momentum/Adam, and trajectory recording."""

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import io as lio
from .numkit import seeded_rng

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")
DATASETS = ("two_moons", "two_gaussians", "ring_vs_blob")

# stream ids for the counter-based generator, one per consumer
STREAM_DATA = 0
STREAM_LABELS = 1
STREAM_INIT = 2
STREAM_SHUFFLE = 3
STREAM_NOISE = 4


class TrainingDiverged(FloatingPointError):
    pass


# ----------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class Layout:
    """Where each layer lives inside the flat parameter vector.

    ``entries`` holds ``(name, offset, shape)``; weights are stored
    row-major with shape (fan_out, fan_in), so each output unit's incoming
    row is one contiguous filter. A bias vector is a single filter.
    """

    sizes: tuple
    entries: tuple

    @classmethod
    def from_sizes(cls, sizes):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 3:
            raise ValueError("need at least one hidden layer: sizes like (2, 16, 2)")
        if min(sizes) < 1:
            raise ValueError("layer sizes must be positive")
        entries, off = [], 0
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            entries.append((f"W{i}", off, (fan_out, fan_in)))
            off += fan_in * fan_out
            entries.append((f"b{i}", off, (fan_out,)))
            off += fan_out
        return cls(sizes=sizes, entries=tuple(entries))

    @property
    def size(self) -> int:
        name, off, shape = self.entries[-1]
        return off + int(np.prod(shape))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def unpack(self, theta):
        """List of (W, b) views into ``theta``."""
        theta = np.asarray(theta)
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector has shape {theta.shape}, layout expects ({self.size},)")
        out = []
        for i in range(self.n_layers):
            _, ow, sw = self.entries[2 * i]
            _, ob, sb = self.entries[2 * i + 1]
            W = theta[ow:ow + sw[0] * sw[1]].reshape(sw)
            b = theta[ob:ob + sb[0]]
            out.append((W, b))
        return out

    def filter_slices(self):
        """Contiguous slices, one per filter (weight row or whole bias vector)."""
        slices = []
        for name, off, shape in self.entries:
            if name.startswith("W"):
                rows, cols = shape
                slices.extend(slice(off + r * cols, off + (r + 1) * cols) for r in range(rows))
            else:
                slices.append(slice(off, off + shape[0]))
        return slices

    def weight_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for name, off, shape in self.entries:
            if name.startswith("W"):
                mask[off:off + shape[0] * shape[1]] = True
        return mask

    def describe(self) -> str:
        return ";".join(f"{n}:{o}:{'x'.join(map(str, s))}" for n, o, s in self.entries)


def init_params(sizes, seed: int) -> np.ndarray:
    """Uniform fan-in scaled weights (He-style bound sqrt(6/fan_in)), zero biases."""
    layout = Layout.from_sizes(sizes)
    rng = seeded_rng(seed, STREAM_INIT)
    theta = np.zeros(layout.size)
    for name, off, shape in layout.entries:
        if name.startswith("W"):
            bound = np.sqrt(6.0 / shape[1])
            theta[off:off + shape[0] * shape[1]] = rng.uniform(-bound, bound, size=shape[0] * shape[1])
    return theta


# ----------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int = 2
    label_mode: str = "true"
    kind: str = ""
    seed: int = 0
    noise: float = 0.0


def _class_counts(n, n_classes=2):
    base = [n // n_classes] * n_classes
    for i in range(n % n_classes):
        base[i] += 1
    return base


def _draw(kind, counts, noise, rng):
    xs, ys = [], []
    for label, m in enumerate(counts):
        if kind == "two_moons":
            angle = rng.uniform(0.0, np.pi, size=m)
            if label == 0:
                pts = np.column_stack([np.cos(angle), np.sin(angle)])
            else:
                pts = np.column_stack([1.0 - np.cos(angle), 0.5 - np.sin(angle)])
        elif kind == "two_gaussians":
            centre = np.array([-2.0, -2.0]) if label == 0 else np.array([2.0, 2.0])
            pts = np.tile(centre, (m, 1))
        elif kind == "ring_vs_blob":
            if label == 0:
                pts = np.zeros((m, 2))
            else:
                angle = rng.uniform(0.0, 2 * np.pi, size=m)
                pts = 2.0 * np.column_stack([np.cos(angle), np.sin(angle)])
        else:
            raise ValueError(f"unknown dataset {kind!r}; expected one of {DATASETS}")
        pts = pts + noise * rng.standard_normal(size=pts.shape)
        xs.append(pts)
        ys.append(np.full(m, label, dtype=np.int64))
    return np.vstack(xs), np.concatenate(ys)


def make_dataset(kind, n_train, n_test, noise, seed, label_mode="true") -> Dataset:
    """Balanced two-class synthetic data, standardised with train statistics.

    ``label_mode="randomized"`` permutes the training labels with a
    generator derived from ``seed``; test labels are left untouched.
    """
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if label_mode not in ("true", "randomized"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    if min(_class_counts(n_train) + _class_counts(n_test)) < 2:
        raise ValueError("need at least 2 samples per class in both splits")
    rng = seeded_rng(seed, STREAM_DATA)
    x_tr, y_tr = _draw(kind, _class_counts(n_train), noise, rng)
    x_te, y_te = _draw(kind, _class_counts(n_test), noise, rng)
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    x_tr = (x_tr - mu) / sd
    x_te = (x_te - mu) / sd
    if label_mode == "randomized":
        y_tr = seeded_rng(seed, STREAM_LABELS).permutation(y_tr)
    return Dataset(x_tr, y_tr, x_te, y_te, 2, label_mode, kind, int(seed), float(noise))


# ----------------------------------------------------------------------------
# network


def forward(theta, layout: Layout, X):
    """Logits of the tanh MLP plus the activations needed for backprop."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layout.sizes[0]:
        raise ValueError(f"inputs have shape {X.shape}, network expects (n, {layout.sizes[0]})")
    layers = layout.unpack(theta)
    acts = [X]
    h = X
    # non-finite values are reported by the caller with the layer name
    with np.errstate(invalid="ignore", over="ignore"):
        for i, (W, b) in enumerate(layers):
            z = h @ W.T + b
            h = np.tanh(z) if i < len(layers) - 1 else z
            acts.append(h)
    return h, acts


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _first_bad_layer(theta, layout, acts):
    for name, off, shape in layout.entries:
        if not np.all(np.isfinite(theta[off:off + int(np.prod(shape))])):
            return name
    for i, a in enumerate(acts[1:]):
        if not np.all(np.isfinite(a)):
            return f"layer {i} output"
    return "loss"


def loss_and_grad(theta, layout: Layout, X, y, weight_decay: float = 0.0):
    """Mean cross-entropy plus ``weight_decay/2 * |weights|^2``, its accuracy and exact gradient.

    Biases are not decayed. Accuracy uses argmax with ties going to the
    lower class index.
    """
    y = np.asarray(y)
    n = y.size
    if n == 0:
        raise ValueError("empty batch")
    logits, acts = forward(theta, layout, X)
    with np.errstate(invalid="ignore", over="ignore"):
        logp = _log_softmax(logits)
    data_loss = -logp[np.arange(n), y].mean()
    mask = layout.weight_mask()
    w = theta[mask]
    loss = data_loss + 0.5 * weight_decay * float(w @ w)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss (first offending: {_first_bad_layer(theta, layout, acts)})")
    acc = float((np.argmax(logits, axis=1) == y).mean())

    grad = np.zeros_like(theta)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    layers = layout.unpack(theta)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        _, ow, sw = layout.entries[2 * i]
        _, ob, sb = layout.entries[2 * i + 1]
        grad[ow:ow + sw[0] * sw[1]] = (delta.T @ acts[i]).ravel()
        grad[ob:ob + sb[0]] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W) * (1.0 - acts[i] ** 2)
    if weight_decay:
        grad[mask] += weight_decay * w
    return float(loss), acc, grad


def evaluate(theta, layout: Layout, X, y):
    """Plain cross-entropy and accuracy (no decay term, no gradient)."""
    y = np.asarray(y)
    logits, acts = forward(theta, layout, X)
    with np.errstate(invalid="ignore", over="ignore"):
        logp = _log_softmax(logits)
    loss = float(-logp[np.arange(y.size), y].mean())
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss (first offending: {_first_bad_layer(theta, layout, acts)})")
    return loss, float((np.argmax(logits, axis=1) == y).mean())


# ----------------------------------------------------------------------------
# optimisers


@dataclass
class Optimizer:
    kind: str = "sgd_momentum"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")

    def reset(self, dim):
        self.t = 0
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)

    def step(self, theta, grad, lr=None):
        """Return the updated parameters; moment buffers are updated in place."""
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.reset(theta.size)
        if self.m.shape != theta.shape:
            raise ValueError("optimizer buffers do not match the parameter vector")
        self.t += 1
        if self.kind == "sgd":
            return theta - lr * grad
        if self.kind == "sgd_momentum":
            self.m = self.momentum * self.m + grad
            return theta - lr * self.m
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    sizes: tuple = (2, 16, 16, 2)
    optimizer: str = "sgd_momentum"
    lr: float = 0.1
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 20
    shuffle_seed: int = 0
    weight_decay: float = 0.0
    lr_decay: float = 0.1
    milestones: tuple = ()
    input_noise: float = 0.0

    def make_optimizer(self) -> Optimizer:
        return Optimizer(kind=self.optimizer, lr=self.lr, momentum=self.momentum,
                         weight_decay=self.weight_decay)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for the ``epoch``-th pass (1-based)."""
        drops = sum(1 for m in self.milestones if m < epoch)
        return self.lr * self.lr_decay ** drops

    def digest(self) -> str:
        text = repr(sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    epochs: np.ndarray
    params: np.ndarray
    train_loss: np.ndarray
    train_acc: np.ndarray
    test_loss: np.ndarray
    test_acc: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.epochs.size

    @property
    def final(self) -> np.ndarray:
        return self.params[-1]

    def save(self, path):
        lio.write_trajectory(path, self.epochs, self.params, self.train_loss, self.train_acc,
                             self.test_loss, self.test_acc, meta=self.provenance)

    @classmethod
    def load(cls, path):
        d = lio.read_trajectory(path)
        return cls(d["epochs"], d["params"], d["train_loss"], d["train_acc"],
                   d["test_loss"], d["test_acc"], d["meta"])


def metrics(theta, layout, data: Dataset):
    tl, ta = evaluate(theta, layout, data.x_train, data.y_train)
    vl, va = evaluate(theta, layout, data.x_test, data.y_test)
    return tl, ta, vl, va


def train(cfg: TrainConfig, data: Dataset, start, provenance=None) -> Trajectory:
    """Run ``cfg.epochs`` passes of minibatch training from ``start``.

    Record 0 is ``start`` itself; one record follows every epoch. Train and
    test metrics are the plain cross-entropy over the full splits.
    Shuffling and input noise come from counter-based streams keyed on
    ``cfg.shuffle_seed``, so identical inputs give identical trajectories.
    """
    layout = Layout.from_sizes(cfg.sizes)
    theta = np.array(start, dtype=np.float64, copy=True)
    if theta.shape != (layout.size,):
        raise ValueError(f"start vector has {theta.size} entries, architecture needs {layout.size}")
    if cfg.batch_size < 1:
        raise ValueError("batch size must be >= 1")
    opt = cfg.make_optimizer()
    opt.reset(theta.size)
    shuffle = seeded_rng(cfg.shuffle_seed, STREAM_SHUFFLE)
    noise = seeded_rng(cfg.shuffle_seed, STREAM_NOISE)
    n = data.y_train.size

    records = [(0, theta.copy(), *metrics(theta, layout, data))]
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = shuffle.permutation(n)
        for start_idx in range(0, n, cfg.batch_size):
            idx = order[start_idx:start_idx + cfg.batch_size]
            xb = data.x_train[idx]
            if cfg.input_noise > 0:
                xb = xb + cfg.input_noise * noise.standard_normal(size=xb.shape)
            _, _, g = loss_and_grad(theta, layout, xb, data.y_train[idx], cfg.weight_decay)
            theta = opt.step(theta, g, lr)
        records.append((epoch, theta.copy(), *metrics(theta, layout, data)))

    prov = {
        "optimizer": cfg.optimizer, "lr": cfg.lr, "epochs": cfg.epochs,
        "batch_size": cfg.batch_size, "weight_decay": cfg.weight_decay,
        "input_noise": cfg.input_noise, "shuffle_seed": cfg.shuffle_seed,
        "arch": "-".join(map(str, cfg.sizes)), "config_hash": cfg.digest(),
    }
    prov.update(provenance or {})
    cols = list(zip(*records))
    return Trajectory(
        epochs=np.array(cols[0], dtype=np.int64), params=np.array(cols[1]),
        train_loss=np.array(cols[2]), train_acc=np.array(cols[3]),
        test_loss=np.array(cols[4]), test_acc=np.array(cols[5]), provenance=prov,
    )
