"""Mining-quality metrics and the finetune-and-remeasure experiment.

This is the only module that reads pool oracle labels (the simulated
annotator): see :func:`oracle_labels` and :func:`annotate`.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from tailminer import backbone as bb
from tailminer.data import Dataset, SplitRole, augment
from tailminer.errors import InvalidInputError, UndefinedBaselineError
from tailminer.nn import TrainConfig
from tailminer.ranking import RankList

log = logging.getLogger(__name__)


# --- oracle interface -----------------------------------------------------


def oracle_labels(pool: Dataset) -> dict[int, int]:
    """True class of every pool example. Reading this is an audited event."""
    labels = pool._oracle_view()
    log.debug("oracle labels read for %d pool examples", labels.size)
    return {int(i): int(k) for i, k in zip(pool.ids, labels)}


def annotate(pool: Dataset, ids: Sequence[int]) -> Dataset:
    """Reveal oracle labels for ``ids`` and return them as a labelled dataset."""
    rows = pool.positions(ids)
    sub = pool.subset(rows)
    return Dataset(sub.ids, sub.features, sub._oracle_view(), SplitRole.TRAIN,
                   pool.num_classes, pool.class_names)


# --- PR metrics -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PRCurve:
    """Precision/recall/F at every prefix size k = 1..n of a rank list."""

    k: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_score: np.ndarray
    positives_total: int

    def points(self) -> list[dict]:
        return [
            {"k": int(k), "precision": float(p), "recall": float(r), "f_score": float(f)}
            for k, p, r, f in zip(self.k, self.precision, self.recall, self.f_score)
        ]

    def precision_at(self, k: int) -> float:
        if not 1 <= k <= len(self.k):
            raise InvalidInputError(f"prefix size {k} outside 1..{len(self.k)}")
        return float(self.precision[k - 1])


def _positives(rank: RankList, oracle, tail: Iterable[int]) -> np.ndarray:
    if isinstance(oracle, Dataset):
        oracle = oracle_labels(oracle)
    tail = set(int(t) for t in tail)
    if not tail:
        raise InvalidInputError("tail class set is empty")
    try:
        return np.array([oracle[int(i)] in tail for i in rank.ids], dtype=bool)
    except KeyError as exc:
        raise InvalidInputError(f"no oracle label for example {exc.args[0]}") from None


def pr_curve(rank: RankList, oracle: Mapping[int, int] | Dataset, tail: Iterable[int]) -> PRCurve:
    pos = _positives(rank, oracle, tail)
    n = pos.size
    k = np.arange(1, n + 1)
    tp = np.cumsum(pos)
    total = int(tp[-1]) if n else 0
    precision = tp / k
    recall = tp / total if total else np.zeros(n)
    denom = precision + recall
    f = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return PRCurve(k, precision, recall, f, total)


def auc_pr(curve: PRCurve) -> float:
    """Trapezoidal area under precision-vs-recall.

    Points with zero recall carry no area and are dropped; each run of equal
    recall collapses to its highest precision; the curve starts at recall 0
    with the precision of its first remaining point. No positives gives 0.
    """
    if len(curve.k) == 0:
        raise InvalidInputError("empty PR curve")
    if curve.positives_total == 0:
        return 0.0
    live = curve.recall > 0
    r, p = curve.recall[live], curve.precision[live]
    # recall is non-decreasing, so equal-recall runs are contiguous
    starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
    r_pts = r[starts]
    p_pts = np.maximum.reduceat(p, starts)
    r_pts = np.r_[0.0, r_pts]
    p_pts = np.r_[p_pts[0], p_pts]
    return float(np.sum(np.diff(r_pts) * (p_pts[1:] + p_pts[:-1]) / 2.0))


def avg_f(curve: PRCurve) -> float:
    if len(curve.k) == 0:
        raise InvalidInputError("empty PR curve")
    return float(curve.f_score.mean())


def relative_improvement(r_our: float, r_base: float) -> float:
    """Percentage change of ``r_our`` over ``r_base``."""
    if not r_base > 0:
        raise UndefinedBaselineError(f"relative improvement undefined for baseline value {r_base}")
    return (r_our - r_base) / r_base * 100.0


@dataclass(frozen=True)
class EvalReport:
    method: str
    seed: int
    auc_pr: float
    avg_f: float
    precision_at: dict[int, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "auc_pr": self.auc_pr,
            "avg_f": self.avg_f,
            "precision_at": {str(k): v for k, v in sorted(self.precision_at.items())},
        }


REPORT_PREFIXES = (50, 100, 200)


def evaluate(rank: RankList, oracle, tail, seed: int = 0,
             prefixes: Sequence[int] = REPORT_PREFIXES) -> tuple[EvalReport, PRCurve]:
    curve = pr_curve(rank, oracle, tail)
    at = {k: curve.precision_at(k) for k in prefixes if k <= len(curve.k)}
    return EvalReport(rank.method, seed, auc_pr(curve), avg_f(curve), at), curve


def improvement_table(reports: Mapping[str, EvalReport], ours: str = "ours") -> dict:
    """Relative % improvement of ``ours`` over every other method, per metric."""
    if ours not in reports:
        return {}
    table = {}
    for name, rep in sorted(reports.items()):
        if name == ours:
            continue
        row = {}
        for metric in ("auc_pr", "avg_f"):
            base = getattr(rep, metric)
            try:
                row[metric] = relative_improvement(getattr(reports[ours], metric), base)
            except UndefinedBaselineError:
                row[metric] = None
        table[name] = row
    return table


def pr_points_csv(curve: PRCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "precision", "recall", "f_score"])
    for k, p, r, f in zip(curve.k, curve.precision, curve.recall, curve.f_score):
        w.writerow([int(k), format(p, ".17g"), format(r, ".17g"), format(f, ".17g")])
    return buf.getvalue()


def plot_data(curve: PRCurve) -> str:
    """Two whitespace-separated columns: recall precision."""
    lines = ["# recall precision"]
    lines += [f"{r:.17g} {p:.17g}" for r, p in zip(curve.recall, curve.precision)]
    return "\n".join(lines) + "\n"


# --- finetuning -----------------------------------------------------------


@dataclass(frozen=True)
class FinetuneRow:
    sample_size: int
    tail_mined: int
    per_class_accuracy: tuple[float, ...]
    tail_deltas: dict[int, float]

    @property
    def mean_tail_delta(self) -> float:
        return float(np.mean(list(self.tail_deltas.values()))) if self.tail_deltas else 0.0

    def as_dict(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "tail_mined": self.tail_mined,
            "per_class_accuracy": list(self.per_class_accuracy),
            "tail_deltas": {str(k): v for k, v in sorted(self.tail_deltas.items())},
            "mean_tail_delta": self.mean_tail_delta,
        }


@dataclass(frozen=True)
class FinetuneReport:
    method: str
    baseline_accuracy: tuple[float, ...]
    rows: tuple[FinetuneRow, ...]
    mode: str

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "mode": self.mode,
            "baseline_accuracy": list(self.baseline_accuracy),
            "rows": [r.as_dict() for r in self.rows],
        }


def finetune_experiment(
    train: Dataset,
    pool: Dataset,
    test: Dataset,
    rank: RankList,
    sample_sizes: Sequence[int],
    tail: Iterable[int],
    arch: Sequence[int] = bb.DEFAULT_ARCH,
    cfg: TrainConfig | None = None,
    mode: str = "scratch",
    baseline: bb.BackboneModel | None = None,
) -> FinetuneReport:
    """Annotate the top-n of ``rank``, augment Train, retrain, re-measure Test.

    ``mode="scratch"`` retrains from initialization with the same seed;
    ``mode="continue"`` runs further epochs from the unaugmented model.
    """
    cfg = cfg or bb.default_config()
    if mode not in ("scratch", "continue"):
        raise InvalidInputError(f"unknown finetune mode {mode!r}")
    tail = sorted(int(t) for t in tail)
    for n in sample_sizes:
        if not 0 <= n <= len(pool):
            raise InvalidInputError(f"sample size {n} outside 0..{len(pool)}")
    if baseline is None:
        baseline = bb.train_backbone(train, arch, cfg)
    base_acc = bb.per_class_accuracy(baseline, test)

    rows = []
    for n in sample_sizes:
        mined = annotate(pool, rank.top(n))
        augmented = augment(train, mined)
        if mode == "scratch":
            model = bb.train_backbone(augmented, arch, cfg)
        else:
            model = bb.continue_training(baseline, augmented, cfg)
        acc = bb.per_class_accuracy(model, test)
        deltas = {k: float(acc[k] - base_acc[k]) for k in tail}
        tail_mined = int(np.isin(mined.labels, tail).sum())
        rows.append(FinetuneRow(int(n), tail_mined, tuple(float(a) for a in acc), deltas))
    return FinetuneReport(rank.method, tuple(float(a) for a in base_acc), tuple(rows), mode)
