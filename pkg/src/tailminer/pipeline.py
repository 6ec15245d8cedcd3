"""End-to-end mining pipeline on one set of splits."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from tailminer import backbone as bb
from tailminer import evaluation as ev
from tailminer import mcmau, recalib
from tailminer.data import DEFAULT_TAIL_THRESHOLD, ClassCatalog, SkewProfile, Splits, compute_catalog, generate_synthetic
from tailminer.nn import FocalLossConfig, TrainConfig
from tailminer.ranking import DEFAULT_TOP_K, METHODS, RankList, build_rank_list


@dataclass(frozen=True)
class PipelineConfig:
    profile: SkewProfile = field(default_factory=SkewProfile)
    backbone_arch: tuple[int, ...] = bb.DEFAULT_ARCH
    backbone: TrainConfig = field(default_factory=bb.default_config)
    rc: TrainConfig = field(default_factory=recalib.default_config)
    focal_gamma: float = recalib.DEFAULT_GAMMA
    focal_alphas: tuple[float, ...] = ()
    ae_encoder: tuple[int, ...] | None = None
    ae: TrainConfig = field(default_factory=mcmau.default_config)
    top_k: int = DEFAULT_TOP_K
    min_confidence: float | None = None
    raw_baseline_probs: bool = False
    tail_threshold: float = DEFAULT_TAIL_THRESHOLD

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Same experiment, every random stream re-keyed by ``seed``."""
        return replace(
            self,
            profile=replace(self.profile, seed=seed),
            backbone=replace(self.backbone, seed=seed),
            rc=replace(self.rc, seed=seed),
            ae=replace(self.ae, seed=seed),
        )


@dataclass(frozen=True, eq=False)
class Models:
    backbone: bb.BackboneModel
    rc: recalib.RecalibrationLayer
    ae: mcmau.AutoencoderModel
    ae_no_rc: mcmau.AutoencoderModel
    catalog: ClassCatalog


def fit_backbone(splits: Splits, cfg: PipelineConfig) -> bb.BackboneModel:
    return bb.train_backbone(splits.train, cfg.backbone_arch, cfg.backbone)


def fit_recalibration(backbone: bb.BackboneModel, splits: Splits, cfg: PipelineConfig) -> recalib.RecalibrationLayer:
    focal = FocalLossConfig(cfg.focal_gamma, cfg.focal_alphas)
    return recalib.fit_rc_layer(bb.freeze(backbone), splits.train, cfg.rc, focal)


def fit_autoencoders(backbone: bb.BackboneModel, rc: recalib.RecalibrationLayer, splits: Splits,
                     cfg: PipelineConfig) -> tuple[mcmau.AutoencoderModel, mcmau.AutoencoderModel]:
    X = splits.train.features
    z_rc = recalib.calibrated_logit_matrix(backbone, rc, X)
    z_raw = backbone.logits(X)
    return (mcmau.fit_autoencoder(z_rc, cfg.ae_encoder, cfg.ae),
            mcmau.fit_autoencoder(z_raw, cfg.ae_encoder, cfg.ae))


def fit_models(splits: Splits, cfg: PipelineConfig) -> Models:
    backbone = bb.freeze(fit_backbone(splits, cfg))
    rc = fit_recalibration(backbone, splits, cfg)
    ae, ae_no_rc = fit_autoencoders(backbone, rc, splits, cfg)
    return Models(backbone, rc, ae, ae_no_rc, compute_catalog(splits.train, cfg.tail_threshold))


def rank_pool(splits: Splits, models: Models, cfg: PipelineConfig,
              methods: Sequence[str] = METHODS, seed: int = 0) -> dict[str, RankList]:
    kw = dict(
        backbone=models.backbone, rc=models.rc, ae=models.ae, ae_no_rc=models.ae_no_rc,
        proportions=models.catalog.proportions, seed=seed, top_k=cfg.top_k,
        min_confidence=cfg.min_confidence, raw_probs=cfg.raw_baseline_probs,
    )
    return {m: build_rank_list(splits.pool, m, **kw) for m in methods}


@dataclass(frozen=True, eq=False)
class SeedRun:
    seed: int
    splits: Splits
    models: Models
    ranks: dict[str, RankList]
    reports: dict[str, ev.EvalReport]
    curves: dict[str, ev.PRCurve]


def run_seed(cfg: PipelineConfig, seed: int, methods: Sequence[str] = METHODS) -> SeedRun:
    cfg = cfg.with_seed(seed)
    splits = generate_synthetic(cfg.profile)
    models = fit_models(splits, cfg)
    ranks = rank_pool(splits, models, cfg, methods, seed)
    oracle = ev.oracle_labels(splits.pool)
    tail = models.catalog.tail_classes
    reports, curves = {}, {}
    for m, rank in ranks.items():
        reports[m], curves[m] = ev.evaluate(rank, oracle, tail, seed)
    return SeedRun(seed, splits, models, ranks, reports, curves)
