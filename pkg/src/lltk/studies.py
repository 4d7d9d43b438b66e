"""Desk-scale versions of the quantitative experiments.

A sweep trains one network per combination of hyperparameters. Each optimum
is sampled with the three samplers, the sampled train losses and
accuracies become features, and small classifiers try to recover the
generalisation class, the weight decay and the augmentation flag under
stratified cross-validation. J&R samples are also embedded with PHATE and
summarised by total persistence of the loss filtration.
"""

import csv
import io
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .numkit import knn, pairwise_distances, seeded_rng
from .trainer import Dataset, Layout, TrainConfig, TrainingDiverged, init_params, train

log = logging.getLogger(__name__)

CLASSIFIERS = ("knn", "softmax_regression", "gaussian_naive_bayes")
TASKS = ("generalization", "weight_decay", "augmentation")
SAMPLERS = ("jr", "grid", "naive")


# ----------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepSpec:
    batch_sizes: tuple = (10, 25, 50)
    weight_decays: tuple = (0.0, 1e-4, 1e-3)
    augmentation: tuple = (0.0, 0.1)  # input-noise std; 0 means off
    widths: tuple = (16,)
    seeds: tuple = (0, 1)

    def cells(self):
        for values in itertools.product(self.batch_sizes, self.weight_decays, self.augmentation,
                                        self.widths, self.seeds):
            yield dict(zip(("batch_size", "weight_decay", "input_noise", "width", "seed"), values))

    def __len__(self):
        return (len(self.batch_sizes) * len(self.weight_decays) * len(self.augmentation)
                * len(self.widths) * len(self.seeds))


@dataclass
class Cell:
    index: int
    factors: dict
    cfg: TrainConfig
    theta: np.ndarray = None
    train_loss: float = np.nan
    test_loss: float = np.nan
    test_acc: float = np.nan
    diverged: bool = False

    @property
    def name(self) -> str:
        return f"cell{self.index:03d}"

    @property
    def weight_norm(self) -> float:
        mask = Layout.from_sizes(self.cfg.sizes).weight_mask()
        return float(np.linalg.norm(self.theta[mask]))


def cell_config(base: TrainConfig, factors: dict, depth: int = 2) -> TrainConfig:
    sizes = (base.sizes[0],) + (factors["width"],) * depth + (base.sizes[-1],)
    return replace(base, sizes=sizes, batch_size=factors["batch_size"],
                   weight_decay=factors["weight_decay"], input_noise=factors["input_noise"],
                   shuffle_seed=factors["seed"])


def train_cell(cell: Cell, data: Dataset) -> Cell:
    start = init_params(cell.cfg.sizes, cell.factors["seed"])
    try:
        tr = train(cell.cfg, data, start)
    except TrainingDiverged as exc:
        log.warning("%s diverged: %s", cell.name, exc)
        cell.diverged = True
        return cell
    cell.theta = tr.final.copy()
    cell.train_loss = float(tr.train_loss[-1])
    cell.test_loss = float(tr.test_loss[-1])
    cell.test_acc = float(tr.test_acc[-1])
    return cell


def run_sweep(spec: SweepSpec, base: TrainConfig, data: Dataset, threads: int = 1):
    """Train every cell of the grid; diverged cells are flagged and kept."""
    depth = len(base.sizes) - 2
    cells = [Cell(i, f, cell_config(base, f, depth)) for i, f in enumerate(spec.cells())]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda c: train_cell(c, data), cells))
    return [train_cell(c, data) for c in cells]


# ----------------------------------------------------------------------------
# labels


def assign_classes(test_losses, n_classes: int) -> np.ndarray:
    """Quantile classes: 0 holds the lowest test losses; ties keep network order."""
    losses = np.asarray(test_losses, dtype=np.float64)
    n = losses.size
    if n_classes < 1 or n_classes > n:
        raise ValueError("need 1 <= n_classes <= number of networks")
    order = np.lexsort((np.arange(n), losses))
    labels = np.empty(n, dtype=np.int64)
    labels[order] = (np.arange(n) * n_classes) // n
    return labels


def factor_labels(values) -> np.ndarray:
    levels = sorted(set(values))
    return np.array([levels.index(v) for v in values], dtype=np.int64)


# ----------------------------------------------------------------------------
# classifiers


def _standardize(train_x, test_x):
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd == 0] = 1.0
    return (train_x - mu) / sd, (test_x - mu) / sd


def _predict_knn(xtr, ytr, xte, n_classes, k=5):
    k = min(k, ytr.size)
    preds = []
    for x in xte:
        d = np.sqrt(((xtr - x) ** 2).sum(axis=1))
        nn = np.argsort(d, kind="stable")[:k]
        votes = np.bincount(ytr[nn], minlength=n_classes)
        best = np.flatnonzero(votes == votes.max())
        if best.size > 1:
            # tied vote: smallest summed distance wins, then the lower label
            sums = [d[nn][ytr[nn] == c].sum() for c in best]
            best = best[[int(np.argmin(sums))]]
        preds.append(int(best[0]))
    return np.array(preds)


def _predict_softmax(xtr, ytr, xte, n_classes, steps=500, lr=0.1):
    n, dim = xtr.shape
    W = np.zeros((dim, n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[ytr]
    for _ in range(steps):
        z = xtr @ W + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        W -= lr * (xtr.T @ g)
        b -= lr * g.sum(axis=0)
    return np.argmax(xte @ W + b, axis=1)


def _predict_gnb(xtr, ytr, xte, n_classes, var_smoothing=1e-9):
    eps = var_smoothing * max(float(xtr.var(axis=0).max()), 1.0)
    scores = np.zeros((xte.shape[0], n_classes))
    for c in range(n_classes):
        xc = xtr[ytr == c]
        mu = xc.mean(axis=0)
        var = xc.var(axis=0) + eps
        ll = -0.5 * (np.log(2 * np.pi * var) + (xte - mu) ** 2 / var).sum(axis=1)
        scores[:, c] = ll + np.log(xc.shape[0] / ytr.size)
    return np.argmax(scores, axis=1)


_PREDICTORS = {
    "knn": _predict_knn,
    "softmax_regression": _predict_softmax,
    "gaussian_naive_bayes": _predict_gnb,
}


def _canonical_order(features, labels):
    """Order samples by (label, feature bytes) so folds do not depend on input order."""
    keys = [(int(y), x.tobytes()) for x, y in zip(features, labels)]
    return np.array(sorted(range(len(keys)), key=lambda i: keys[i]), dtype=np.int64)


def stratified_folds(labels, folds: int, seed: int):
    """Fold id per sample: each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    rng = seeded_rng(seed, 7)
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (offset + np.arange(idx.size)) % folds
        offset += idx.size
    return fold_of


def cross_validate(features, labels, classifier: str = "knn", folds: int = 10, seed: int = 0):
    """Stratified k-fold accuracy.

    Returns ``(mean accuracy, standard error, per-fold accuracies)``.
    Features are standardised with train-fold statistics only.
    """
    if classifier not in _PREDICTORS:
        raise ValueError(f"unknown classifier {classifier!r}; expected one of {CLASSIFIERS}")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim == 1:
        X = X[:, None]
    if folds < 2 or folds > y.size:
        raise ValueError(f"need 2 <= folds <= {y.size}")
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    n_classes = int(y.max()) + 1
    fold_of = stratified_folds(y, folds, seed)
    accs = []
    for f in range(folds):
        test = fold_of == f
        if not test.any():
            continue
        train_mask = ~test
        missing = set(np.unique(y).tolist()) - set(np.unique(y[train_mask]).tolist())
        if missing:
            raise ValueError(f"class {sorted(missing)[0]} absent from training fold {f}; use fewer folds")
        xtr, xte = _standardize(X[train_mask], X[test])
        pred = _PREDICTORS[classifier](xtr, y[train_mask], xte, n_classes)
        accs.append(float((pred == y[test]).mean()))
    accs = np.array(accs)
    return float(accs.mean()), standard_error(accs), accs


def standard_error(scores) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        return 0.0
    return float(scores.std(ddof=1) / np.sqrt(scores.size))


def _as_tuple(classifier):
    return (classifier,) if isinstance(classifier, str) else tuple(classifier)


def mean_accuracy(features, labels, classifiers, folds=10, seed=0) -> float:
    return float(np.mean([cross_validate(features, labels, c, folds, seed)[0] for c in _as_tuple(classifiers)]))


def permutation_test(features, labels, classifier="knn", n_perm: int = 200, seed: int = 0,
                     folds: int = 10):
    """Label-permutation p-value for cross-validated accuracy.

    ``classifier`` may be a name or a sequence of names; with several, the
    statistic is their mean accuracy. Returns ``(p, observed, null)`` where
    ``p = (1 + #{null >= observed}) / (1 + n_perm)``.
    """
    y = np.asarray(labels, dtype=np.int64)
    observed = mean_accuracy(features, y, classifier, folds, seed)
    rng = seeded_rng(seed, 11)
    null = np.array([mean_accuracy(features, rng.permutation(y), classifier, folds, seed)
                     for _ in range(n_perm)])
    p = (1 + int((null >= observed - 1e-12).sum())) / (1 + n_perm)
    return p, observed, null


# ----------------------------------------------------------------------------
# trajectory preservation


def trajectory_preservation_score(coords, pairs, k: int = 10) -> float:
    """Fraction of consecutive-epoch pairs that are mutual k-nearest neighbours in ``coords``."""
    pairs = list(pairs)
    if not pairs:
        return 0.0
    coords = np.asarray(coords, dtype=np.float64)
    k = min(k, coords.shape[0] - 1)
    nbrs = knn(pairwise_distances(coords), k).indices
    sets = [set(row.tolist()) for row in nbrs]
    hits = sum(1 for i, j in pairs if j in sets[i] and i in sets[j])
    return hits / len(pairs)


def shuffled_preservation(coords, pairs, k: int = 10, n_shuffles: int = 50, seed: int = 0):
    """Scores after randomly reassigning embedded positions to sample points."""
    coords = np.asarray(coords, dtype=np.float64)
    rng = seeded_rng(seed, 13)
    return np.array([trajectory_preservation_score(coords[rng.permutation(coords.shape[0])], pairs, k)
                     for _ in range(n_shuffles)])


# ----------------------------------------------------------------------------
# persistence vs generalisation


def spearman(x, y) -> float:
    rho = stats.spearmanr(x, y).statistic
    return float(rho)


def spearman_permutation(x, y, n_perm: int = 1000, seed: int = 0):
    """One-sided permutation p-value for a positive rank correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    obs = spearman(x, y)
    rng = seeded_rng(seed, 17)
    null = np.array([spearman(x, y[rng.permutation(y.size)]) for _ in range(n_perm)])
    return obs, (1 + int((null >= obs - 1e-12).sum())) / (1 + n_perm)


def persistence_table(cells, persistence):
    """Rows of (network id, weight decay, test loss, total persistence H0, H1).

    ``persistence`` maps cell name to ``(tp_h0, tp_h1)``.
    """
    rows = []
    for c in cells:
        if c.diverged or c.name not in persistence:
            continue
        h0, h1 = persistence[c.name]
        rows.append({"network": c.name, "weight_decay": c.factors["weight_decay"],
                     "test_loss": c.test_loss, "tp_h0": h0, "tp_h1": h1})
    return rows


def persistence_vs_generalization(cells, persistence, n_perm: int = 1000, seed: int = 0):
    rows = persistence_table(cells, persistence)
    if len(rows) < 3:
        return rows, float("nan"), 1.0
    rho, p = spearman_permutation([r["test_loss"] for r in rows], [r["tp_h0"] for r in rows], n_perm, seed)
    return rows, rho, p


# ----------------------------------------------------------------------------
# report


@dataclass
class StudyReport:
    rows: list = field(default_factory=list)
    persistence_rows: list = field(default_factory=list)
    spearman_rho: float = float("nan")
    spearman_p: float = float("nan")
    permutation: dict = field(default_factory=dict)  # (task, sampler) -> (p, observed)

    def mean_accuracy(self, task, sampler) -> float:
        vals = [r["accuracy"] for r in self.rows if r["task"] == task and r["sampler"] == sampler]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "sampler", "classifier", "n_classes", "accuracy", "std_error",
                    "control_accuracy", "perm_p"])
        for r in self.rows:
            w.writerow([r["task"], r["sampler"], r["classifier"], r["n_classes"],
                        f"{r['accuracy']:.17g}", f"{r['std_error']:.17g}",
                        f"{r['control_accuracy']:.17g}", f"{r['perm_p']:.17g}"])
        return buf.getvalue()

    def persistence_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["network", "weight_decay", "test_loss", "tp_h0", "tp_h1"])
        for r in self.persistence_rows:
            w.writerow([r["network"], f"{r['weight_decay']:.17g}", f"{r['test_loss']:.17g}",
                        f"{r['tp_h0']:.17g}", f"{r['tp_h1']:.17g}"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = ["task            sampler  mean acc  (s.e. over classifier x fold)"]
        for task in TASKS:
            for sampler in SAMPLERS:
                accs = [r for r in self.rows if r["task"] == task and r["sampler"] == sampler]
                if not accs:
                    continue
                lines.append(f"{task:<15} {sampler:<8} {self.mean_accuracy(task, sampler):.3f}"
                             f"  ({accs[0]['pooled_se']:.3f})")
        for (task, sampler), (p, obs) in sorted(self.permutation.items()):
            lines.append(f"permutation {task}/{sampler}: observed {obs:.3f}, p = {p:.4f}")
        lines.append(f"spearman(test loss, total persistence H0) = {self.spearman_rho:.3f}, "
                     f"p = {self.spearman_p:.4f}")
        return "\n".join(lines) + "\n"


def task_labels(cells, n_gen_classes: int):
    cells = [c for c in cells if not c.diverged]
    return {
        "generalization": assign_classes([c.test_loss for c in cells], n_gen_classes),
        "weight_decay": factor_labels([c.factors["weight_decay"] for c in cells]),
        "augmentation": factor_labels([c.factors["input_noise"] > 0 for c in cells]),
    }


def evaluate_samplers(cells, features, classifiers=CLASSIFIERS, folds=10, seed=0, n_perm=200,
                      perm_tasks=(("weight_decay", "jr"),), n_gen_classes=None):
    """Cross-validate every (task, sampler, classifier) combination.

    ``features`` maps sampler name to an (n_networks, n_features) array in
    the order of the non-diverged ``cells``. The control accuracy comes
    from the same classifier trained on labels shuffled once; permutation
    p-values are computed for the (task, sampler) pairs in ``perm_tasks``
    using the mean accuracy over ``classifiers`` as the statistic.
    """
    ok = [c for c in cells if not c.diverged]
    if n_gen_classes is None:
        n_gen_classes = 5 if len(ok) >= 60 else 3
    labels = task_labels(ok, n_gen_classes)
    report = StudyReport()
    for task in TASKS:
        y = labels[task]
        shuffled = seeded_rng(seed, 19).permutation(y)
        nc = int(y.max()) + 1
        for sampler in SAMPLERS:
            if sampler not in features:
                continue
            X = features[sampler]
            perm_p = float("nan")
            if (task, sampler) in perm_tasks:
                perm_p, obs, _ = permutation_test(X, y, classifiers, n_perm, seed, folds)
                report.permutation[(task, sampler)] = (perm_p, obs)
            pooled = []
            block = []
            for clf in classifiers:
                acc, se, fold_accs = cross_validate(X, y, clf, folds, seed)
                ctrl, _, _ = cross_validate(X, shuffled, clf, folds, seed)
                pooled.extend(fold_accs.tolist())
                block.append({"task": task, "sampler": sampler, "classifier": clf, "n_classes": nc,
                              "accuracy": acc, "std_error": se, "control_accuracy": ctrl,
                              "perm_p": perm_p})
            for r in block:
                r["pooled_se"] = standard_error(pooled)
            report.rows.extend(block)
    return report
