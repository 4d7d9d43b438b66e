"""``lltk`` command line: train, sample, embed, persist, study, plot, pipeline.

Exit codes: 0 on success, 2 for usage and configuration errors, 1 for
failures while running.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as lio
from . import pipeline as pl
from . import plot
from .config import ConfigError, default_config, load_config
from .manifest import RunManifest
from .sampler import SampleSet
from .studies import Cell
from .topo import diagrams_from_csv
from .trainer import TrainingDiverged, init_params, train

log = logging.getLogger("lltk")


class UsageError(Exception):
    pass


def _config(args, required=("data", "train")):
    if args.config is None:
        if required:
            raise UsageError("--config is required for this command")
        return default_config()
    return load_config(args.config, required_sections=required)


def _apply_overrides(cfg, args):
    if getattr(args, "metric", None):
        cfg["embed"]["metric"] = args.metric
    if getattr(args, "policy", None):
        cfg["persist"]["policy"] = args.policy
    return cfg


def _manifest(args, out, cfg):
    m = RunManifest(args.command, sys.argv[1:] if args.argv is None else args.argv, out, cfg)
    if getattr(args, "config", None):
        m.add_input(args.config)
    return m


# ----------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg["train"]["init_seed"] = args.seed
    out = lio.ensure_dir(args.out)
    data = pl.dataset_from(cfg)
    tcfg = pl.train_config_from(cfg)
    seed = cfg["train"]["init_seed"]
    tr = train(tcfg, data, init_params(tcfg.sizes, seed),
               provenance={"init_seed": seed, "data_seed": cfg["data"]["seed"], "dataset": cfg["data"]["kind"],
                           "label_mode": cfg["data"]["label_mode"]})
    tr.save(out / "trajectory.lltk")
    lio.write_trajectory(out / "optimum.lltk", tr.epochs[-1:], tr.params[-1:], tr.train_loss[-1:],
                         tr.train_acc[-1:], tr.test_loss[-1:], tr.test_acc[-1:], meta=tr.provenance)
    m = _manifest(args, out, cfg)
    m.seeds.update(init=seed, data=cfg["data"]["seed"], shuffle=tcfg.shuffle_seed)
    m.add_outputs_under(out)
    m.write()
    print(f"train: {len(tr) - 1} epochs, final train acc {tr.train_acc[-1]:.4f}, "
          f"test acc {tr.test_acc[-1]:.4f} -> {out}")
    return 0


def _read_optimum(path):
    d = lio.read_trajectory(path)
    if d["params"].shape[0] == 0:
        raise ValueError(f"{path}: no records")
    return d["params"][-1]


def cmd_sample(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg["sample"]["direction_seed"] = args.seed
    out = lio.ensure_dir(args.out)
    data = pl.dataset_from(cfg)
    tcfg = pl.train_config_from(cfg)
    theta = _read_optimum(args.optimum)
    threads = pl.resolve_threads(args.threads)
    s = pl.sample(args.method, theta, tcfg, data, cfg["sample"], threads)
    # relative, so the index does not depend on where the run lives
    index = s.save(out, optimum_ref=os.path.relpath(Path(args.optimum).resolve(), out.resolve()))
    m = _manifest(args, out, cfg)
    m.add_input(args.optimum)
    m.seeds.update(direction=cfg["sample"]["direction_seed"], data=cfg["data"]["seed"])
    m.note("budget", s.budget)
    m.add_outputs_under(out)
    m.write()
    print(f"sample {args.method}: budget {s.budget} ({len(s)} points) -> {index}")
    return 0


def cmd_embed(args):
    cfg = _apply_overrides(_config(args, required=()), args)
    out = lio.ensure_dir(args.out)
    s = SampleSet.load(args.samples)
    emb = pl.embed(s, cfg["embed"])
    pl.write_embedding_csv(out / "embedding.csv", emb, s)
    lio.write_matrix(out / "potential.bin", emb.potential)
    info = [("method", s.method), ("points", len(s)), ("metric", cfg["embed"]["metric"]),
            ("k", cfg["embed"]["k"]), ("alpha", lio.format_float(cfg["embed"]["alpha"])),
            ("t_requested", cfg["embed"]["t"]), ("t", emb.t), ("stress", lio.format_float(emb.stress)),
            ("smacof_iterations", emb.n_iter)]
    if s.method == "jr":
        score, p95 = pl.preservation(emb, s, cfg["embed"], cfg["study"]["seed"])
        info += [("preservation", lio.format_float(score)), ("preservation_shuffled_p95", lio.format_float(p95))]
    lio.write_kv(out / "embedding.txt", info)
    m = _manifest(args, out, cfg)
    m.add_input(args.samples)
    root = Path(args.samples).parent
    for name in lio.read_kv(args.samples)["files"].split(","):
        m.add_input(root / name)
        m.add_input(lio.meta_path(root / name))
    m.add_input(root / "optimum.lltk")
    m.note("metric", cfg["embed"]["metric"])
    m.add_outputs_under(out)
    m.write()
    print(f"embed: {len(s)} points, t = {emb.t}, stress {emb.stress:.4g} -> {out / 'embedding.csv'}")
    return 0


def cmd_persist(args):
    cfg = _apply_overrides(_config(args, required=()), args)
    if args.k is not None:
        cfg["persist"]["k"] = args.k
    out = lio.ensure_dir(args.out)
    ID = lio.read_matrix(args.potential)
    cols = pl.read_embedding_csv(args.losses)
    losses = np.array(cols[args.column])
    if losses.size != ID.shape[0]:
        raise ValueError(f"{args.losses} has {losses.size} rows but the distance matrix has {ID.shape[0]}")
    cx, h0, h1, tp = pl.persist(ID, losses, cfg["persist"])
    pl.write_diagrams(out / "diagrams.csv", [h0, h1])
    lio.write_kv(out / "persistence.txt", [
        ("policy", cfg["persist"]["policy"]), ("k", cfg["persist"]["k"]), ("column", args.column),
        ("vertices", cx.n_vertices), ("edges", len(cx.edges)), ("triangles", len(cx.triangles)),
        ("components", int(h0.essential.sum())), ("essential_h1", int(h1.essential.sum())),
        ("tp_h0", lio.format_float(tp[0])), ("tp_h1", lio.format_float(tp[1])),
    ])
    m = _manifest(args, out, cfg)
    m.add_input(args.potential)
    m.add_input(args.losses)
    m.add_outputs_under(out)
    m.write()
    print(f"persist ({cfg['persist']['policy']}): total persistence H0 {tp[0]:.6g}, H1 {tp[1]:.6g} -> {out}")
    return 0


def cmd_study(args):
    cfg = _config(args, required=())
    if args.seed is not None:
        cfg["study"]["seed"] = args.seed
    out = lio.ensure_dir(args.out)
    results, inputs = pl.load_cell_results(args.sweep)
    report = pl.study_from_results(results, cfg)
    files = pl.write_report(out, report)
    m = _manifest(args, out, cfg)
    for p in inputs:
        m.add_input(p)
    m.seeds["study"] = cfg["study"]["seed"]
    for p in files:
        m.add_output(p)
    m.write()
    sys.stdout.write(report.summary())
    return 0


def cmd_plot(args):
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        lio.ensure_dir(out.parent)
    if args.kind == "embedding":
        cols = pl.read_embedding_csv(args.input)
        coords = np.column_stack([cols["x1"], cols["x2"]]) if cols["x1"] else np.zeros((0, 2))
        colour = args.color
        values = None if colour == "none" else cols[{"loss": "train_loss", "epoch": "epoch", "seed": "seed"}[colour]]
        svg = plot.embedding_scatter(coords, values, log=args.log and colour == "loss",
                                     categorical=colour == "seed", title=args.title or "PHATE embedding",
                                     label="" if colour == "none" else colour)
    elif args.kind == "diagram":
        dgms = diagrams_from_csv(Path(args.input).read_text(encoding="utf-8"))
        svg = plot.persistence_diagram(list(dgms.values()), title=args.title or "persistence diagram")
    else:
        import csv

        with open(args.input, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        svg = plot.total_persistence_scatter(rows, key=args.key, title=args.title or "total persistence vs test loss")
    out.write_text(svg, encoding="utf-8")
    m = RunManifest("plot", sys.argv[1:] if args.argv is None else args.argv, out.parent)
    m.add_input(args.input)
    m.add_output(out)
    m.write(out.with_suffix(".manifest.txt"))
    print(f"plot {args.kind} -> {out}")
    return 0


def _pipeline_cell(cell: Cell, data, cfg, root):
    """Train, sample, embed and persist one sweep cell, writing every intermediate file."""
    d = lio.ensure_dir(pl.cell_dir(root, cell))
    seed = cell.factors["seed"]
    try:
        tr = train(cell.cfg, data, init_params(cell.cfg.sizes, seed),
                   provenance={"cell": cell.name, "init_seed": seed})
    except TrainingDiverged as exc:
        log.warning("%s diverged: %s", cell.name, exc)
        cell.diverged = True
        res = pl.CellResult(cell)
        pl.write_cell_summary(d / "cell.txt", res)
        return res
    tr.save(d / "trajectory.lltk")
    lio.write_trajectory(d / "optimum.lltk", tr.epochs[-1:], tr.params[-1:], tr.train_loss[-1:],
                         tr.train_acc[-1:], tr.test_loss[-1:], tr.test_acc[-1:], meta=tr.provenance)
    cell.theta = tr.final.copy()
    cell.train_loss, cell.test_loss, cell.test_acc = (float(tr.train_loss[-1]), float(tr.test_loss[-1]),
                                                      float(tr.test_acc[-1]))
    del tr
    res = pl.run_cell(cell, data, cfg)
    for method, s in res.samples.items():
        s.save(d / method, optimum_ref="../optimum.lltk")
    pl.write_features(d, res)
    e = lio.ensure_dir(d / "embed")
    pl.write_embedding_csv(e / "embedding.csv", res.embedding, res.samples["jr"])
    lio.write_matrix(e / "potential.bin", res.embedding.potential)
    pl.write_diagrams(d / "diagrams.csv", res.diagrams)
    pl.write_cell_summary(d / "cell.txt", res)
    # keep the light parts only
    res.feature_rows = {m: res.features(m) for m in res.available()}
    res.samples = {}
    res.embedding = None
    return res


def cmd_pipeline(args):
    cfg = _apply_overrides(_config(args), args)
    if args.seed is not None:
        cfg["sample"]["direction_seed"] = args.seed
        cfg["study"]["seed"] = args.seed
    out = lio.ensure_dir(args.out)
    threads = pl.resolve_threads(args.threads)
    data = pl.dataset_from(cfg)
    cells = pl.make_cells(cfg)
    log.info("pipeline: %d cells, %d thread(s)", len(cells), threads)
    results = pl.map_ordered(lambda c: _pipeline_cell(c, data, cfg, out), cells, threads)
    report = pl.study_from_results(results, cfg)
    pl.write_report(out / "study", report)
    plots = lio.ensure_dir(out / "plots")
    (plots / "total_persistence_h0.svg").write_text(
        plot.total_persistence_scatter(report.persistence_rows, "tp_h0"), encoding="utf-8")
    for r in results:
        if r.cell.diverged:
            continue
        d = pl.cell_dir(out, r.cell)
        cols = pl.read_embedding_csv(d / "embed" / "embedding.csv")
        coords = np.column_stack([cols["x1"], cols["x2"]])
        (plots / f"{r.cell.name}_embedding.svg").write_text(
            plot.embedding_scatter(coords, cols["train_loss"], log=True, title=f"{r.cell.name} J&R embedding",
                                   label="train loss"), encoding="utf-8")
        dg = diagrams_from_csv((d / "diagrams.csv").read_text(encoding="utf-8"))
        (plots / f"{r.cell.name}_diagram.svg").write_text(
            plot.persistence_diagram(list(dg.values()), title=f"{r.cell.name} persistence"), encoding="utf-8")
    m = _manifest(args, out, cfg)
    m.seeds.update(data=cfg["data"]["seed"], direction=cfg["sample"]["direction_seed"], study=cfg["study"]["seed"],
                   init=",".join(str(s) for s in cfg["sweep"]["seeds"]))
    m.note("threads", threads)
    m.note("cells", len(cells))
    m.note("diverged", sum(r.cell.diverged for r in results))
    m.add_outputs_under(out)
    m.write()
    sys.stdout.write(report.summary())
    return 0


# ----------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="lltk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, config_required=False, out=True):
        sp.add_argument("--config", metavar="PATH", required=config_required, help="key = value config file")
        if out:
            sp.add_argument("--out", metavar="DIR", required=True, help="output directory")
        sp.add_argument("--seed", type=_u64, default=None, metavar="U64", help="override the stage seed")
        sp.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker threads (0 = one per CPU; LLTK_THREADS overrides)")

    sp = sub.add_parser("train", help="train one network and record its trajectory")
    common(sp, config_required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="sample the landscape around an optimum")
    sp.add_argument("method", choices=pl.METHODS)
    sp.add_argument("--optimum", required=True, metavar="FILE", help="LLTK file; its last record is the optimum")
    common(sp, config_required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("embed", help="PHATE embedding of a sample set")
    sp.add_argument("--samples", required=True, metavar="INDEX", help="index.txt written by `sample`")
    sp.add_argument("--metric", choices=("euclidean", "cosine"), default=None)
    common(sp)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("persist", help="sublevel persistence of the loss on the potential-distance kNN graph")
    sp.add_argument("--potential", required=True, metavar="FILE", help="potential.bin written by `embed`")
    sp.add_argument("--losses", required=True, metavar="CSV", help="embedding.csv written by `embed`")
    sp.add_argument("--column", default="train_loss", choices=("train_loss", "test_loss"))
    sp.add_argument("--k", type=int, default=None, help="kNN graph degree (default 20)")
    sp.add_argument("--policy", choices=("cap", "drop"), default=None, help="essential classes in totals")
    common(sp)
    sp.set_defaults(func=cmd_persist)

    sp = sub.add_parser("study", help="classifier and persistence study over a pipeline directory")
    sp.add_argument("--sweep", required=True, metavar="DIR", help="output directory of `pipeline`")
    common(sp)
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("plot", help="render an SVG figure")
    sp.add_argument("kind", choices=("embedding", "diagram", "persistence"))
    sp.add_argument("--input", required=True, metavar="FILE")
    sp.add_argument("--out", required=True, metavar="FILE.svg")
    sp.add_argument("--color", choices=("loss", "epoch", "seed", "none"), default="loss")
    sp.add_argument("--log", action="store_true", help="log-scale loss colouring")
    sp.add_argument("--key", choices=("tp_h0", "tp_h1"), default="tp_h0")
    sp.add_argument("--title", default=None)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("pipeline", help="sweep, sample, embed, persist, study and plot in one go")
    sp.add_argument("--metric", choices=("euclidean", "cosine"), default=None)
    sp.add_argument("--policy", choices=("cap", "drop"), default=None)
    common(sp, config_required=True)
    sp.set_defaults(func=cmd_pipeline)
    return p


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"lltk: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError, KeyError) as exc:
        print(f"lltk: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
