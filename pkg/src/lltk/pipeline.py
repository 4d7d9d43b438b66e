"""Stage glue shared by the command line and the acceptance checks.

Each stage has an in-memory function and a writer; ``run_cell`` chains
sampling, embedding and persistence for one trained optimum, and
``study_from_results`` turns a list of cell results into a StudyReport.
"""

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as lio
from .phate import Embedding, phate_embed
from .sampler import SampleSet, grid_sample, jump_and_retrain, naive_sample, naive_steps
from .studies import (
    Cell,
    StudyReport,
    SweepSpec,
    cell_config,
    evaluate_samplers,
    persistence_vs_generalization,
    shuffled_preservation,
    trajectory_preservation_score,
)
from .topo import diagrams_to_csv, loss_persistence, total_persistence
from .trainer import Layout, TrainConfig, make_dataset

METHODS = ("jr", "grid", "naive")


def resolve_threads(requested) -> int:
    """``LLTK_THREADS`` wins over the flag; 0 means one thread per CPU."""
    env = os.environ.get("LLTK_THREADS")
    n = int(env) if env not in (None, "") else int(requested or 1)
    if n < 0:
        raise ValueError("thread count must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


# ----------------------------------------------------------------------------
# config -> objects


def dataset_from(cfg):
    d = cfg["data"]
    return make_dataset(d["kind"], d["n_train"], d["n_test"], d["noise"], d["seed"], d["label_mode"])


def train_config_from(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(sizes=tuple(t["sizes"]), optimizer=t["optimizer"], lr=t["lr"], momentum=t["momentum"],
                       epochs=t["epochs"], batch_size=t["batch_size"], shuffle_seed=t["shuffle_seed"],
                       weight_decay=t["weight_decay"], lr_decay=t["lr_decay"],
                       milestones=tuple(t["milestones"]), input_noise=t["input_noise"])


def sweep_spec_from(cfg) -> SweepSpec:
    s = cfg["sweep"]
    return SweepSpec(batch_sizes=s["batch_sizes"], weight_decays=s["weight_decays"],
                     augmentation=s["augmentation"], widths=s["widths"], seeds=s["seeds"])


# ----------------------------------------------------------------------------
# stages


def sample(method, theta, train_cfg: TrainConfig, data, scfg, threads=1) -> SampleSet:
    layout = Layout.from_sizes(train_cfg.sizes)
    if method == "jr":
        return jump_and_retrain(theta, train_cfg, data, seeds=scfg["seeds"], step_sizes=scfg["step_sizes"],
                                epochs=scfg["retrain_epochs"], direction_key=scfg["direction_seed"],
                                count_jump_init=scfg["count_jump_init"], threads=threads)
    if method == "grid":
        return grid_sample(theta, layout, data, per_axis=scfg["per_axis"], extent=scfg["extent"],
                           seed=scfg["direction_seed"], budget=scfg["budget"])
    if method == "naive":
        return naive_sample(theta, layout, data, n_dirs=scfg["n_dirs"], steps=naive_steps(scfg["naive_steps"]),
                            seed=scfg["direction_seed"])
    raise ValueError(f"unknown sampling method {method!r}; expected one of {METHODS}")


def embed(samples: SampleSet, ecfg) -> Embedding:
    return phate_embed(samples.params, metric=ecfg["metric"], k=ecfg["k"], alpha=ecfg["alpha"],
                       dim=ecfg["dim"], t=ecfg["t"], t_max=ecfg["t_max"])


def preservation(emb: Embedding, samples: SampleSet, ecfg, seed=0):
    """(score, 95th percentile of shuffled baselines) for epoch-consecutive pairs."""
    pairs = samples.consecutive_pairs()
    score = trajectory_preservation_score(emb.coords, pairs, ecfg["preservation_k"])
    base = shuffled_preservation(emb.coords, pairs, ecfg["preservation_k"], ecfg["shuffles"], seed)
    return score, float(np.percentile(base, 95)) if base.size else float("nan")


def persist(potential, losses, pcfg):
    cx, h0, h1 = loss_persistence(potential, losses, pcfg["k"])
    tp = (total_persistence(h0, pcfg["policy"]), total_persistence(h1, pcfg["policy"]))
    return cx, h0, h1, tp


@dataclass
class CellResult:
    cell: Cell
    samples: dict = field(default_factory=dict)
    embedding: Embedding = None
    diagrams: tuple = ()
    total_persistence: tuple = (float("nan"), float("nan"))
    preservation: tuple = (float("nan"), float("nan"))
    n_edges: int = 0
    feature_rows: dict = field(default_factory=dict)  # set when loaded from disk

    def available(self):
        return tuple(m for m in METHODS if m in self.feature_rows or m in self.samples)

    def features(self, method):
        if method in self.feature_rows:
            return self.feature_rows[method]
        return self.samples[method].features()

    @property
    def has_persistence(self) -> bool:
        return bool(np.all(np.isfinite(self.total_persistence)))


def run_cell(cell: Cell, data, cfg, methods=METHODS, embed_jr=True) -> CellResult:
    """Sample an already trained cell and, for J&R, embed and compute persistence."""
    res = CellResult(cell)
    if cell.diverged:
        return res
    for m in methods:
        res.samples[m] = sample(m, cell.theta, cell.cfg, data, cfg["sample"])
    if embed_jr and "jr" in res.samples:
        jr = res.samples["jr"]
        res.embedding = embed(jr, cfg["embed"])
        res.preservation = preservation(res.embedding, jr, cfg["embed"], cfg["study"]["seed"])
        cx, h0, h1, tp = persist(res.embedding.potential, jr.train_loss, cfg["persist"])
        res.diagrams = (h0, h1)
        res.total_persistence = tp
        res.n_edges = len(cx.edges)
    return res


def make_cells(cfg):
    base = train_config_from(cfg)
    spec = sweep_spec_from(cfg)
    depth = len(base.sizes) - 2
    return [Cell(i, f, cell_config(base, f, depth)) for i, f in enumerate(spec.cells())]


def map_ordered(fn, items, threads=1):
    """``map`` that may use threads but always returns results in input order."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def study_from_results(results, cfg) -> StudyReport:
    scfg = cfg["study"]
    ok = [r for r in results if not r.cell.diverged]
    cells = [r.cell for r in ok]
    feats = {m: np.array([r.features(m) for r in ok]) for m in (ok[0].available() if ok else ())}
    n_gen = scfg["gen_classes"] or None
    report = evaluate_samplers(cells, feats, classifiers=tuple(scfg["classifiers"]), folds=scfg["folds"],
                               seed=scfg["seed"], n_perm=scfg["n_perm"], n_gen_classes=n_gen)
    pers = {r.cell.name: r.total_persistence for r in ok if r.has_persistence}
    rows, rho, p = persistence_vs_generalization(cells, pers, scfg["spearman_perm"], scfg["seed"])
    report.persistence_rows = rows
    report.spearman_rho, report.spearman_p = rho, p
    return report


# ----------------------------------------------------------------------------
# files

EMBED_COLUMNS = ["train_loss", "train_acc", "test_loss", "test_acc", "seed", "step_size", "epoch"]


def write_embedding_csv(path, emb: Embedding, samples: SampleSet):
    ff = lio.format_float
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{i + 1}" for i in range(emb.coords.shape[1])] + EMBED_COLUMNS)
        for i in range(len(samples)):
            p = samples.provenance[i]
            w.writerow([i, *map(ff, emb.coords[i]), ff(samples.train_loss[i]), ff(samples.train_acc[i]),
                        ff(samples.test_loss[i]), ff(samples.test_acc[i]),
                        p.get("seed", p.get("direction", "")), ff(p["step_size"]) if "step_size" in p else
                        (ff(p["c"]) if "c" in p else ""), p.get("epoch", "")])


def read_embedding_csv(path):
    """Columns of an embedding CSV as a dict of lists (floats where possible)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or reader.fieldnames[0] != "index" or "train_loss" not in reader.fieldnames:
            raise ValueError(f"{path}: not an embedding table (header {reader.fieldnames})")
        cols = {k: [] for k in reader.fieldnames}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v) if v not in ("", None) else float("nan"))
    return cols


def write_features(directory, result: CellResult):
    """One ``features_<method>.bin`` (1 x 2B matrix) per sampler; budgets may differ between samplers."""
    paths = []
    for m in result.available():
        paths.append(Path(directory) / f"features_{m}.bin")
        lio.write_matrix(paths[-1], result.features(m)[None, :])
    return paths


def cell_dir(root, cell: Cell) -> Path:
    return Path(root) / "cells" / f"{cell.name}-{cell.cfg.digest()[:8]}"


def write_cell_summary(path, result: CellResult):
    c = result.cell
    ff = lio.format_float
    items = [("name", c.name), ("config_hash", c.cfg.digest()), ("diverged", str(c.diverged).lower())]
    items += [(f"factor.{k}", ff(v) if isinstance(v, float) else v) for k, v in c.factors.items()]
    if not c.diverged:
        items += [("train_loss", ff(c.train_loss)), ("test_loss", ff(c.test_loss)), ("test_acc", ff(c.test_acc)),
                  ("weight_norm", ff(c.weight_norm))]
    if result.embedding is not None:
        items += [("tp_h0", ff(result.total_persistence[0])), ("tp_h1", ff(result.total_persistence[1])),
                  ("phate_t", result.embedding.t), ("stress", ff(result.embedding.stress)),
                  ("preservation", ff(result.preservation[0])),
                  ("preservation_shuffled_p95", ff(result.preservation[1])), ("graph_edges", result.n_edges)]
    lio.write_kv(path, items)


def write_diagrams(path, diagrams):
    Path(path).write_text(diagrams_to_csv(diagrams), encoding="utf-8")


def write_report(directory, report: StudyReport):
    out = lio.ensure_dir(directory)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "persistence.csv").write_text(report.persistence_csv(), encoding="utf-8")
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    return [out / "report.csv", out / "persistence.csv", out / "summary.txt"]


def load_cell_results(sweep_dir):
    """Rebuild lightweight CellResults (factors, metrics, features, persistence) from a sweep directory."""
    root = Path(sweep_dir) / "cells"
    if not root.is_dir():
        raise FileNotFoundError(f"{sweep_dir}: no cells/ directory (run `lltk pipeline` first)")
    results, inputs = [], []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        meta = lio.read_kv(d / "cell.txt")
        inputs.append(d / "cell.txt")
        factors = {}
        for k, v in meta.items():
            if k.startswith("factor."):
                name = k[len("factor."):]
                factors[name] = float(v) if name in ("weight_decay", "input_noise") else int(v)
        index = int(meta["name"][len("cell"):])
        cell = Cell(index, factors, TrainConfig(), diverged=meta["diverged"] == "true")
        res = CellResult(cell)
        if not cell.diverged:
            cell.train_loss = float(meta["train_loss"])
            cell.test_loss = float(meta["test_loss"])
            cell.test_acc = float(meta["test_acc"])
            for m in METHODS:
                f = d / f"features_{m}.bin"
                if f.exists():
                    res.feature_rows[m] = lio.read_matrix(f)[0]
                    inputs.append(f)
            if "tp_h0" in meta:
                res.total_persistence = (float(meta["tp_h0"]), float(meta["tp_h1"]))
        results.append(res)
    return results, inputs
