"""Loss-landscape sampling around a trained optimum.

Three procedures share one output type:

* jump and retrain: perturb the optimum along a filter-normalised random
  direction, retrain with the original optimiser and keep every epoch;
* grid: a 3-D lattice spanned by three filter-normalised directions;
* naive: many random directions, several step lengths along each.
"""

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as lio
from .numkit import seeded_rng
from .trainer import Dataset, Layout, TrainConfig, metrics, train

SEEDS = (0, 1, 2, 3, 4)
STEP_SIZES = (0.25, 0.5, 0.75, 1.0)
RETRAIN_EPOCHS = 32
BUDGET = 640

# stream offsets keep the three samplers' directions disjoint
_GRID_STREAM = 1 << 32
_NAIVE_STREAM = 2 << 32


def random_direction(size: int, seed: int, stream: int) -> np.ndarray:
    return seeded_rng(seed, stream).standard_normal(size)


def filter_normalize(direction, theta_o, layout: Layout) -> np.ndarray:
    """Rescale each filter slice of ``direction`` to the norm of the same slice of ``theta_o``.

    A slice is zeroed when either its own norm or the reference norm is zero.
    """
    d = np.array(direction, dtype=np.float64, copy=True)
    ref = np.asarray(theta_o, dtype=np.float64)
    if d.shape != ref.shape or d.shape != (layout.size,):
        raise ValueError("direction, reference and layout sizes disagree")
    for s in layout.filter_slices():
        dn = np.linalg.norm(d[s])
        rn = np.linalg.norm(ref[s])
        if dn == 0.0 or rn == 0.0:
            d[s] = 0.0
        else:
            d[s] *= rn / dn
    return d


@dataclass
class SampleSet:
    """Sampled parameter vectors with their metrics and provenance.

    ``counted`` marks the points that enter the sampling budget and the
    classifier features; with the default accounting, jump-init snapshots
    are kept for plotting but not counted.
    """

    method: str
    params: np.ndarray
    train_loss: np.ndarray
    train_acc: np.ndarray
    test_loss: np.ndarray
    test_acc: np.ndarray
    provenance: list
    counted: np.ndarray
    optimum: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.params.shape[0]

    @property
    def budget(self) -> int:
        return int(self.counted.sum())

    def features(self) -> np.ndarray:
        """Counted train losses followed by counted train accuracies, in stored order."""
        return np.concatenate([self.train_loss[self.counted], self.train_acc[self.counted]])

    def consecutive_pairs(self):
        """Index pairs (i, j) of epoch-consecutive points of the same J&R run."""
        if self.method != "jr":
            return []
        pairs = []
        for i in range(len(self) - 1):
            a, b = self.provenance[i], self.provenance[i + 1]
            if a["seed"] == b["seed"] and a["step_size"] == b["step_size"] and b["epoch"] == a["epoch"] + 1:
                pairs.append((i, i + 1))
        return pairs

    # ------------------------------------------------------------------ files

    def save(self, directory, optimum_ref: str = "") -> Path:
        """One LLTK file per J&R run (or one file for grid/naive) plus ``index.txt``."""
        out = lio.ensure_dir(directory)
        files = []
        if self.method == "jr":
            keys = sorted({(p["seed"], p["step_size"]) for p in self.provenance})
            for seed, step in keys:
                idx = [i for i, p in enumerate(self.provenance) if (p["seed"], p["step_size"]) == (seed, step)]
                name = f"jr_seed{seed}_step{lio.format_float(step)}.lltk"
                lio.write_trajectory(
                    out / name, [self.provenance[i]["epoch"] for i in idx], self.params[idx],
                    self.train_loss[idx], self.train_acc[idx], self.test_loss[idx], self.test_acc[idx],
                    meta={"method": "jr", "seed": seed, "step_size": lio.format_float(step),
                          "direction_key": self.meta.get("direction_key", 0)},
                )
                files.append(name)
        else:
            name = f"{self.method}.lltk"
            lio.write_trajectory(out / name, np.arange(len(self)), self.params, self.train_loss,
                                 self.train_acc, self.test_loss, self.test_acc,
                                 meta={"method": self.method})
            files.append(name)
            with open(out / f"{self.method}_points.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if self.method == "grid":
                    w.writerow(["index", "c1", "c2", "c3"])
                    for i, p in enumerate(self.provenance):
                        w.writerow([i, *map(lio.format_float, p["coords"])])
                else:
                    w.writerow(["index", "direction", "c"])
                    for i, p in enumerate(self.provenance):
                        w.writerow([i, p["direction"], lio.format_float(p["c"])])
            files.append(f"{self.method}_points.csv")
        lio.write_trajectory(out / "optimum.lltk", [0], self.optimum[None, :], [np.nan], [np.nan],
                             [np.nan], [np.nan])
        index = {"method": self.method, "budget": self.budget, "points": len(self),
                 "optimum": optimum_ref or "optimum.lltk", "files": ",".join(files)}
        index.update({k: v for k, v in self.meta.items()})
        lio.write_kv(out / "index.txt", index)
        return out / "index.txt"

    @classmethod
    def load(cls, index_path):
        index_path = Path(index_path)
        root = index_path.parent
        idx = lio.read_kv(index_path)
        method = idx["method"]
        files = [f for f in idx["files"].split(",") if f]
        optimum = lio.read_trajectory(root / "optimum.lltk")["params"][0]
        count_jump = idx.get("count_jump_init", "false") == "true"
        P, tl, ta, vl, va, prov, counted = [], [], [], [], [], [], []
        if method == "jr":
            for name in files:
                d = lio.read_trajectory(root / name)
                seed, step = int(d["meta"]["seed"]), float(d["meta"]["step_size"])
                P.append(d["params"])
                for arr, key in ((tl, "train_loss"), (ta, "train_acc"), (vl, "test_loss"), (va, "test_acc")):
                    arr.append(d[key])
                for e in d["epochs"].tolist():
                    prov.append({"seed": seed, "step_size": step, "epoch": int(e)})
                    counted.append(count_jump or e > 0)
        else:
            d = lio.read_trajectory(root / f"{method}.lltk")
            P.append(d["params"])
            for arr, key in ((tl, "train_loss"), (ta, "train_acc"), (vl, "test_loss"), (va, "test_acc")):
                arr.append(d[key])
            with open(root / f"{method}_points.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    if method == "grid":
                        prov.append({"coords": (float(row["c1"]), float(row["c2"]), float(row["c3"]))})
                    else:
                        prov.append({"direction": int(row["direction"]), "c": float(row["c"])})
                    counted.append(True)
        meta = {k: v for k, v in idx.items() if k not in ("method", "budget", "points", "optimum", "files")}
        return cls(method, np.vstack(P), np.concatenate(tl), np.concatenate(ta), np.concatenate(vl),
                   np.concatenate(va), prov, np.array(counted, dtype=bool), optimum, meta)


def _evaluate_points(points, layout, data):
    rows = [metrics(p, layout, data) for p in points]
    return [np.array(c) for c in zip(*rows)] if rows else [np.zeros(0)] * 4


def jump_and_retrain(theta_o, cfg: TrainConfig, data: Dataset, seeds=SEEDS, step_sizes=STEP_SIZES,
                     epochs: int = RETRAIN_EPOCHS, direction_key: int = 0,
                     count_jump_init: bool = False, threads: int = 1) -> SampleSet:
    """Jump from ``theta_o`` along filter-normalised directions and retrain.

    For every seed a standard-normal direction is drawn from stream
    ``seed`` of the generator keyed by ``direction_key``. For every step
    size the network restarts at ``theta_o + step * direction`` and is
    retrained for ``epochs`` epochs with ``cfg``'s optimiser (fresh
    optimiser state). Records are ordered by (seed, step size, epoch).
    """
    layout = Layout.from_sizes(cfg.sizes)
    theta_o = np.asarray(theta_o, dtype=np.float64)
    jobs = []
    for seed in seeds:
        v = filter_normalize(random_direction(layout.size, direction_key, seed), theta_o, layout)
        for j, step in enumerate(step_sizes):
            run_cfg = replace(cfg, epochs=epochs, shuffle_seed=cfg.shuffle_seed + 1000 * (seed + 1) + j)
            jobs.append((seed, step, theta_o + step * v, run_cfg))

    def run(job):
        seed, step, start, run_cfg = job
        return train(run_cfg, data, start, provenance={"seed": seed, "step_size": step})

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(run, jobs))
    else:
        runs = [run(j) for j in jobs]

    prov, counted = [], []
    for (seed, step, _, _), tr in zip(jobs, runs):
        for e in tr.epochs.tolist():
            prov.append({"seed": seed, "step_size": step, "epoch": int(e)})
            counted.append(count_jump_init or e > 0)
    cat = lambda attr: np.concatenate([getattr(tr, attr) for tr in runs])  # noqa: E731
    meta = {"count_jump_init": "true" if count_jump_init else "false",
            "seeds": ",".join(map(str, seeds)),
            "step_sizes": ",".join(lio.format_float(s) for s in step_sizes),
            "retrain_epochs": epochs, "direction_key": direction_key}
    return SampleSet("jr", np.vstack([tr.params for tr in runs]), cat("train_loss"), cat("train_acc"),
                     cat("test_loss"), cat("test_acc"), prov, np.array(counted, dtype=bool),
                     theta_o.copy(), meta)


def grid_coords(per_axis: int, extent: float, budget=BUDGET, n_dirs: int = 3):
    """Lattice coordinates without the origin, nearest to the origin first.

    Points are ordered by (euclidean norm, lexicographic coordinates) and
    truncated to ``budget`` when the lattice is larger.
    """
    axis = np.linspace(-extent, extent, per_axis) if per_axis > 1 else np.zeros(1)
    pts = [c for c in itertools.product(axis.tolist(), repeat=n_dirs) if any(x != 0.0 for x in c)]
    pts.sort(key=lambda c: (sum(x * x for x in c), c))
    if budget is not None:
        pts = pts[:budget]
    return pts


def grid_sample(theta_o, layout: Layout, data: Dataset, per_axis: int = 9, extent: float = 1.0,
                seed: int = 0, budget=BUDGET, n_dirs: int = 3) -> SampleSet:
    """Evaluate the landscape on a lattice spanned by ``n_dirs`` normalised directions."""
    theta_o = np.asarray(theta_o, dtype=np.float64)
    basis = np.array([filter_normalize(random_direction(layout.size, seed, _GRID_STREAM + i), theta_o, layout)
                      for i in range(n_dirs)])
    coords = grid_coords(per_axis, extent, budget, n_dirs)
    points = [theta_o + np.asarray(c) @ basis for c in coords]
    tl, ta, vl, va = _evaluate_points(points, layout, data)
    params = np.array(points) if points else np.zeros((0, layout.size))
    meta = {"per_axis": per_axis, "extent": lio.format_float(extent), "seed": seed}
    return SampleSet("grid", params, tl, ta, vl, va, [{"coords": tuple(c)} for c in coords],
                     np.ones(len(points), dtype=bool), theta_o.copy(), meta)


def naive_steps(n_steps: int = 10):
    return np.linspace(1.0 / n_steps, 1.0, n_steps)


def naive_sample(theta_o, layout: Layout, data: Dataset, n_dirs: int = 64, steps=None,
                 seed: int = 0) -> SampleSet:
    """Evaluate ``theta_o + c * d_i`` for every direction and every nonzero step ``c``."""
    theta_o = np.asarray(theta_o, dtype=np.float64)
    steps = naive_steps() if steps is None else np.asarray(steps, dtype=np.float64)
    steps = steps[steps != 0.0]
    points, prov = [], []
    for i in range(n_dirs):
        d = filter_normalize(random_direction(layout.size, seed, _NAIVE_STREAM + i), theta_o, layout)
        for c in steps.tolist():
            points.append(theta_o + c * d)
            prov.append({"direction": i, "c": c})
    tl, ta, vl, va = _evaluate_points(points, layout, data)
    params = np.array(points) if points else np.zeros((0, layout.size))
    meta = {"n_dirs": n_dirs, "steps": ",".join(lio.format_float(c) for c in steps), "seed": seed}
    return SampleSet("naive", params, tl, ta, vl, va, prov, np.ones(len(points), dtype=bool),
                     theta_o.copy(), meta)
