"""``tailminer`` command line: one subcommand per pipeline stage.

All artifacts for a run live in ``<out>/<config-hash>-seed<N>/``::

    data/{train,pool,test}.csv  data/manifest.json
    backbone.json  recalib.json  autoencoder.json        (weights)
    reports/{backbone,recalib,autoencoder}.json
    ranks/<method>.csv  ranks/<method>.json
    eval/summary.json  eval/pr_<method>.csv  eval/plot_<method>.dat
    finetune/<method>.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from tailminer import backbone as bb
from tailminer import checkpoint, config, data, mcmau, recalib
from tailminer import evaluation as ev
from tailminer import nn
from tailminer.errors import StageOrderError, TailminerError
from tailminer.pipeline import PipelineConfig
from tailminer.ranking import METHODS, build_rank_list, rank_list_csv

log = logging.getLogger("tailminer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class Run:
    """Resolved config, seed and run directory for one invocation."""

    def __init__(self, cfg: config.RunConfig, seed: int, out: Path):
        self.cfg = cfg
        self.seed = seed
        self.pipeline: PipelineConfig = cfg.pipeline.with_seed(seed)
        self.dir = out / f"{cfg.digest()}-seed{seed}"

    def path(self, *parts: str) -> Path:
        return self.dir.joinpath(*parts)

    def require(self, rel: str, stage: str) -> Path:
        p = self.path(rel)
        if not p.is_file():
            raise StageOrderError(f"missing {rel}; run '{stage}' first")
        return p

    def write_json(self, rel: str, doc) -> Path:
        p = self.path(rel)
        checkpoint.atomic_write_text(p, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p

    def write_text(self, rel: str, text: str) -> Path:
        p = self.path(rel)
        checkpoint.atomic_write_text(p, text)
        return p

    # --- artifact loading -----------------------------------------------------

    def num_classes(self) -> int:
        manifest = json.loads(self.require("data/manifest.json", "generate").read_text())
        return int(manifest["num_classes"])

    def load_split(self, name: str) -> data.Dataset:
        return data.load_csv(self.require(f"data/{name}.csv", "generate"), name, self.num_classes())

    def backbone(self) -> bb.BackboneModel:
        nets, _, _ = checkpoint.load(self.require("backbone.json", "train"))
        return bb.BackboneModel(nets["backbone"])

    def rc(self) -> recalib.RecalibrationLayer:
        nets, _, meta = checkpoint.load(self.require("recalib.json", "recalibrate"))
        focal = nn.FocalLossConfig(float(meta["gamma"]), tuple(float(a) for a in meta["alphas"]))
        return recalib.RecalibrationLayer(nets["recalib"], focal)

    def autoencoders(self) -> tuple[mcmau.AutoencoderModel, mcmau.AutoencoderModel]:
        nets, _, meta = checkpoint.load(self.require("autoencoder.json", "train-ae"))
        n = int(meta["n_encoder"])
        return mcmau.AutoencoderModel(nets["ae"], n), mcmau.AutoencoderModel(nets["ae_no_rc"], n)


# --- commands ----------------------------------------------------------------


def cmd_generate(run: Run, args) -> None:
    p = run.pipeline
    files = run.cfg.files
    if files is None:
        splits = data.generate_synthetic(p.profile)
        doc = data.manifest(p.profile, splits, p.tail_threshold)
    else:
        train = data.load_csv(files.train, "train", class_names=p.profile.class_names)
        C = train.num_classes
        splits = data.Splits(train, data.load_csv(files.pool, "pool", C, train.class_names),
                             data.load_csv(files.test, "test", C, train.class_names))
        cat = data.compute_catalog(train, p.tail_threshold)
        doc = {"source_files": {k: str(v) for k, v in vars(files).items()}, "num_classes": C,
               "class_names": list(train.class_names), "feature_dim": train.dim,
               "counts": {"train": [int(c) for c in cat.counts]},
               "sizes": {"train": len(train), "pool": len(splits.pool), "test": len(splits.test)},
               "tail_threshold": p.tail_threshold, "tail_classes": sorted(cat.tail_classes),
               "skewness_ratios": [float(s) for s in cat.skewness_ratios]}
    for name in ("train", "pool", "test"):
        data.save_csv(getattr(splits, name), run.path("data", f"{name}.csv"))
    data.write_manifest(run.path("data", "manifest.json"), doc)
    run.write_json("config.json", {"seed": run.seed, "config_hash": run.cfg.digest(), **run.cfg.as_dict()})
    print(run.path("data"))


def cmd_train(run: Run, args) -> None:
    p = run.pipeline
    train = run.load_split("train")
    test = run.load_split("test")
    model = bb.train_backbone(train, p.backbone_arch, p.backbone)
    checkpoint.save(run.path("backbone.json"), {"backbone": model.network}, "backbone",
                    {"seed": run.seed, "arch": list(p.backbone_arch)})
    acc = bb.per_class_accuracy(model, test)
    run.write_json("reports/backbone.json", {
        **model.report.as_dict(),
        "test_per_class_accuracy": [None if np.isnan(a) else float(a) for a in acc],
        "digest": model.digest(),
    })
    print(run.path("backbone.json"))


def cmd_recalibrate(run: Run, args) -> None:
    p = run.pipeline
    backbone = bb.freeze(run.backbone())
    train = run.load_split("train")
    focal = nn.FocalLossConfig(p.focal_gamma, p.focal_alphas)
    rc = recalib.fit_rc_layer(backbone, train, p.rc, focal)
    checkpoint.save(run.path("recalib.json"), {"recalib": rc.network}, "recalib",
                    {"seed": run.seed, "gamma": rc.focal_cfg.gamma, "alphas": list(rc.focal_cfg.alphas)})
    run.write_json("reports/recalib.json", {**rc.report.as_dict(), "alphas": list(rc.focal_cfg.alphas),
                                            "gamma": rc.focal_cfg.gamma})
    print(run.path("recalib.json"))


def cmd_train_ae(run: Run, args) -> None:
    p = run.pipeline
    backbone = bb.freeze(run.backbone())
    rc = run.rc()
    train = run.load_split("train")
    z_rc = recalib.calibrated_logit_matrix(backbone, rc, train.features)
    ae = mcmau.fit_autoencoder(z_rc, p.ae_encoder, p.ae)
    ae_raw = mcmau.fit_autoencoder(backbone.logits(train.features), p.ae_encoder, p.ae)
    checkpoint.save(run.path("autoencoder.json"), {"ae": ae.network, "ae_no_rc": ae_raw.network}, "autoencoder",
                    {"seed": run.seed, "n_encoder": ae.n_encoder})
    run.write_json("reports/autoencoder.json", {
        "dims": list(ae.network.dims),
        "final_reconstruction_error": ae.final_loss,
        "final_reconstruction_error_no_rc": ae_raw.final_loss,
    })
    print(run.path("autoencoder.json"))


def _models_for(run: Run, methods: Sequence[str]) -> dict:
    """Load only the checkpoints the requested methods need."""
    kw: dict = {"seed": run.seed, "top_k": run.pipeline.top_k, "min_confidence": run.pipeline.min_confidence,
                "raw_probs": run.pipeline.raw_baseline_probs}
    if set(methods) - {"random"}:
        kw["backbone"] = bb.freeze(run.backbone())
        train = run.load_split("train")
        kw["proportions"] = data.compute_catalog(train, run.pipeline.tail_threshold).proportions
    needs_rc = "ours" in methods or (not run.pipeline.raw_baseline_probs
                                     and set(methods) & {"max_score", "entropy", "weighted_entropy"})
    if needs_rc:
        kw["rc"] = run.rc()
    if {"ours", "ours_no_rc"} & set(methods):
        kw["ae"], kw["ae_no_rc"] = run.autoencoders()
    return kw


def _checksums(kw: dict) -> dict:
    out = {}
    for name in ("backbone", "rc", "ae", "ae_no_rc"):
        if name in kw:
            model = kw[name]
            out[name] = model.network.digest()
    return out


def _mine(run: Run, methods: Sequence[str], pool: data.Dataset) -> dict:
    kw = _models_for(run, methods)
    ranks = {}
    for m in methods:
        rank = build_rank_list(pool, m, **kw)
        run.write_text(f"ranks/{m}.csv", rank_list_csv(rank))
        run.write_json(f"ranks/{m}.json", {"method": m, "seed": run.seed, "config_hash": run.cfg.digest(),
                                           "pool_size": len(pool), "checksums": _checksums(kw)})
        ranks[m] = rank
    return ranks


def _methods(run: Run, args) -> tuple[str, ...]:
    return tuple(args.method) if getattr(args, "method", None) else run.cfg.methods


def cmd_mine(run: Run, args) -> None:
    # mining never sees the annotator's labels
    pool = run.load_split("pool").without_oracle()
    for m in _mine(run, _methods(run, args), pool):
        print(run.path("ranks", f"{m}.csv"))


def cmd_eval(run: Run, args) -> None:
    pool = run.load_split("pool")
    methods = _methods(run, args)
    ranks = _mine(run, methods, pool.without_oracle())
    tail = data.compute_catalog(run.load_split("train"), run.pipeline.tail_threshold).tail_classes
    oracle = ev.oracle_labels(pool)
    reports = {}
    for m, rank in ranks.items():
        reports[m], curve = ev.evaluate(rank, oracle, tail, run.seed)
        run.write_text(f"eval/pr_{m}.csv", ev.pr_points_csv(curve))
        run.write_text(f"eval/plot_{m}.dat", ev.plot_data(curve))
    summary = {
        "seed": run.seed,
        "config_hash": run.cfg.digest(),
        "tail_classes": sorted(tail),
        "methods": {m: r.as_dict() for m, r in reports.items()},
        "relative_improvement": ev.improvement_table(reports),
    }
    print(run.write_json("eval/summary.json", summary))
    for m, r in reports.items():
        print(f"{m:18s} auc_pr={r.auc_pr:.4f} avg_f={r.avg_f:.4f}")


def cmd_finetune(run: Run, args) -> None:
    p = run.pipeline
    pool = run.load_split("pool")
    train = run.load_split("train")
    test = run.load_split("test")
    methods = _methods(run, args)
    ranks = _mine(run, methods, pool.without_oracle())
    tail = data.compute_catalog(train, p.tail_threshold).tail_classes
    baseline = run.backbone()
    for m, rank in ranks.items():
        rep = ev.finetune_experiment(train, pool, test, rank, run.cfg.sample_sizes, tail, p.backbone_arch,
                                     p.backbone, run.cfg.finetune_mode, baseline)
        print(run.write_json(f"finetune/{m}.json", rep.as_dict()))


def cmd_gradcheck(run: Run, args) -> int:
    rng = np.random.default_rng([run.seed, 99])
    C = 4
    losses = {"cross_entropy": nn.Loss.cross_entropy(),
              "focal": nn.Loss.focal_loss(nn.FocalLossConfig(2.0, (0.25, 1.0, 0.5, 0.1))),
              "mse": nn.Loss.mse()}
    worst = {}
    for name, loss in losses.items():
        errs = []
        for _ in range(args.trials):
            dims = [int(rng.integers(2, 6)), int(rng.integers(2, 8)), int(rng.integers(2, 8)), C]
            net = nn.Network.initialize(dims, ["relu", "relu", "identity"], rng)
            net = net.with_params(net.params + rng.normal(scale=0.1, size=net.params.size))
            X = rng.normal(size=(int(rng.integers(1, 9)), dims[0]))
            t = rng.normal(size=(X.shape[0], C)) if name == "mse" else rng.integers(0, C, size=X.shape[0])
            errs.append(nn.gradient_check(net, X, t, loss))
        worst[name] = float(max(errs))
    ok = all(v < GRADCHECK_TOL for v in worst.values())
    run.write_json("reports/gradcheck.json", {"trials": args.trials, "tolerance": GRADCHECK_TOL,
                                              "max_relative_error": worst, "passed": ok})
    for name, v in worst.items():
        print(f"{name:14s} max relative error {v:.3e}")
    return EXIT_OK if ok else EXIT_TRAINING


COMMANDS = {
    "generate": (cmd_generate, "write train/pool/test CSVs and a manifest"),
    "train": (cmd_train, "train the backbone classifier"),
    "recalibrate": (cmd_recalibrate, "fit the recalibration layer on the frozen backbone"),
    "train-ae": (cmd_train_ae, "fit the mining autoencoders"),
    "mine": (cmd_mine, "write rank lists for the pool"),
    "eval": (cmd_eval, "score every configured method against the oracle"),
    "finetune": (cmd_finetune, "retrain with mined examples and remeasure Test"),
    "gradcheck": (cmd_gradcheck, "compare analytic and numerical gradients"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # accepted before or after the subcommand; the subcommand copy must not
    # overwrite an earlier value with its default
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--config", type=Path, default=default(None), help="INI config file")
    parser.add_argument("--seed", type=int, default=default(0), help="run seed (default 0)")
    parser.add_argument("--out", type=Path, default=default(Path("runs")), help="root of run directories")
    parser.add_argument("--set", dest="overrides", action="append", default=default([]),
                        metavar="SECTION.KEY=VALUE", help="override one config key; repeatable")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailminer", description="Minority-class mining on skewed datasets.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp, suppress=True)
        if name in ("mine", "eval", "finetune"):
            sp.add_argument("--method", action="append", choices=METHODS,
                            help="restrict to this method; repeatable (default: config list)")
        if name == "gradcheck":
            sp.add_argument("--trials", type=int, default=10)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = config.load(args.config, args.overrides)
        run = Run(cfg, args.seed, args.out)
        code = func(run, args)
    except TailminerError as exc:
        print(f"tailminer {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tailminer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
