"""Minority-likelihood scores and rank lists.

``ours`` scores an example by the squared distance between the softmax of its
calibrated logits and the softmax of their autoencoder reconstruction.
Baselines are the usual uncertainty formulas plus a seeded random order.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tailminer.backbone import BackboneModel
from tailminer.data import Dataset, DetectionSet
from tailminer.errors import ConfigError, InvalidInputError, ParseError
from tailminer.mcmau import AutoencoderModel
from tailminer.nn import softmax_rows
from tailminer.recalib import RecalibrationLayer, calibrated_logit_matrix

log = logging.getLogger(__name__)

METHODS = ("ours", "ours_no_rc", "random", "max_score", "entropy", "weighted_entropy")
BASELINES = ("random", "max_score", "entropy", "weighted_entropy")
DEFAULT_TOP_K = 5
_DIST_TOL = 1e-9


@dataclass(frozen=True)
class RankEntry:
    example_id: int
    score: float


@dataclass(frozen=True, eq=False)
class RankList:
    ids: np.ndarray
    scores: np.ndarray
    method: str

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if ids.shape != scores.shape:
            raise InvalidInputError("one score per id required")
        if not np.isfinite(scores).all():
            raise InvalidInputError("rank scores must be finite")
        ids.flags.writeable = False
        scores.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)

    @classmethod
    def from_scores(cls, ids, scores, method: str) -> "RankList":
        """Sort descending by score, ties by ascending id."""
        ids = np.asarray(ids, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((ids, -scores))
        return cls(ids[order], scores[order], method)

    @property
    def entries(self) -> list[RankEntry]:
        return [RankEntry(int(i), float(s)) for i, s in zip(self.ids, self.scores)]

    def top(self, n: int) -> np.ndarray:
        return self.ids[:n]

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, RankList):
            return NotImplemented
        return (self.method == other.method and np.array_equal(self.ids, other.ids)
                and self.scores.tobytes() == other.scores.tobytes())

    __hash__ = None


# --- per-example scores ---------------------------------------------------


def _distribution(p, name: str = "probs") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 1 or p.shape[-1] == 0 or not np.isfinite(p).all():
        raise InvalidInputError(f"{name} must be a non-empty finite vector")
    if (p < 0).any() or (np.abs(p.sum(axis=-1) - 1.0) > _DIST_TOL).any():
        raise InvalidInputError(f"{name} is not a probability distribution")
    return p


def score_ours(z, z_hat) -> float | np.ndarray:
    """||softmax(z) - softmax(z_hat)||^2, row-wise for matrices."""
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z.shape != z_hat.shape or z.shape[-1] == 0:
        raise InvalidInputError(f"logit shapes differ: {z.shape} vs {z_hat.shape}")
    d = softmax_rows(z) - softmax_rows(z_hat)
    s = (d * d).sum(axis=-1)
    return float(s) if s.ndim == 0 else s


def score_max(probs) -> float | np.ndarray:
    p = _distribution(probs)
    s = 1.0 - p.max(axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def _xlogx(x: np.ndarray) -> np.ndarray:
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


def score_entropy(probs) -> float | np.ndarray:
    p = _distribution(probs)
    s = -_xlogx(p).sum(axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def score_weighted_entropy(probs, proportions) -> float | np.ndarray:
    """Entropy formula applied to p_k / (b_k C); the terms are not renormalized."""
    p = _distribution(probs)
    b = _distribution(proportions, "proportions")
    if b.ndim != 1 or b.shape[0] != p.shape[-1]:
        raise InvalidInputError("one proportion per class required")
    if (b <= 0).any():
        raise InvalidInputError("class proportions must all be positive")
    r = p / (b * b.shape[0])
    s = -_xlogx(r).sum(axis=-1)
    return float(s) if np.ndim(s) == 0 else s


_TWO_POW_53 = float(2 ** 53)


def score_random(example_id: int, seed: int) -> float:
    """Uniform [0, 1) draw keyed by (seed, example_id), independent of order."""
    state = np.random.SeedSequence([int(seed), int(example_id)]).generate_state(1, np.uint64)[0]
    return float(int(state) >> 11) / _TWO_POW_53


def score_detection_example(
    ds: DetectionSet,
    model: AutoencoderModel,
    k: int = DEFAULT_TOP_K,
    min_confidence: float | None = None,
) -> float:
    """Mean decision score over the ``k`` most confident detections."""
    if k < 1:
        raise ConfigError("top-K must be positive")
    conf = ds.confidences
    keep = np.arange(len(ds))
    if min_confidence is not None:
        keep = keep[conf >= min_confidence]
    if keep.size == 0:
        log.warning("example has no detections to score; assigning 0")
        return 0.0
    # stable sort keeps input order among equal confidences
    chosen = keep[np.argsort(-conf[keep], kind="stable")[:k]]
    z = ds.logits[chosen]
    return float(np.mean(score_ours(z, model.reconstruct_batch(z))))


# --- rank lists -----------------------------------------------------------


def _require(value, what: str, method: str):
    if value is None:
        raise ConfigError(f"method {method!r} needs {what}")
    return value


def method_scores(
    pool: Dataset,
    method: str,
    *,
    backbone: BackboneModel | None = None,
    rc: RecalibrationLayer | None = None,
    ae: AutoencoderModel | None = None,
    ae_no_rc: AutoencoderModel | None = None,
    proportions=None,
    seed: int = 0,
    top_k: int = DEFAULT_TOP_K,
    min_confidence: float | None = None,
    raw_probs: bool = False,
) -> np.ndarray:
    """One score per pool row, higher meaning more likely minority-class."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    if method == "random":
        return np.array([score_random(i, seed) for i in pool.ids])
    if method == "ours" and pool.has_detections:
        model = _require(ae, "an autoencoder", method)
        return np.array([score_detection_example(d, model, top_k, min_confidence)
                         for d in pool.detections])
    if pool.has_detections:
        raise ConfigError(f"method {method!r} is not defined for detection pools")

    backbone = _require(backbone, "a backbone", method)
    if method == "ours_no_rc":
        Z = backbone.logits(pool.features)
        model = _require(ae_no_rc, "an autoencoder fit on backbone logits", method)
        return score_ours(Z, model.reconstruct_batch(Z))
    if method == "ours":
        Z = calibrated_logit_matrix(backbone, _require(rc, "a recalibration layer", method), pool.features)
        return score_ours(Z, _require(ae, "an autoencoder", method).reconstruct_batch(Z))

    if raw_probs:
        P = softmax_rows(backbone.logits(pool.features))
    else:
        P = softmax_rows(calibrated_logit_matrix(backbone, _require(rc, "a recalibration layer", method),
                                                 pool.features))
    if method == "max_score":
        return score_max(P)
    if method == "entropy":
        return score_entropy(P)
    return score_weighted_entropy(P, _require(proportions, "Train class proportions", method))


def build_rank_list(pool: Dataset, method: str, **models) -> RankList:
    return RankList.from_scores(pool.ids, method_scores(pool, method, **models), method)


def rank_list_csv(rank: RankList) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "example_id", "score", "method"])
    for r, (i, s) in enumerate(zip(rank.ids, rank.scores), start=1):
        w.writerow([r, int(i), format(float(s), ".17g"), rank.method])
    return buf.getvalue()


def parse_rank_list(text: str, source: str | None = None) -> RankList:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["rank", "example_id", "score", "method"]:
        raise ParseError("rank list header must be rank,example_id,score,method", source, 1)
    ids, scores, methods = [], [], set()
    for row in reader:
        if not row:
            continue
        try:
            ids.append(int(row[1]))
            scores.append(float(row[2]))
            methods.add(row[3])
        except (ValueError, IndexError):
            raise ParseError("malformed rank list row", source, reader.line_num) from None
    if len(methods) > 1:
        raise ParseError("rank list mixes methods", source)
    method = methods.pop() if methods else ""
    return RankList(np.array(ids, dtype=np.int64), np.array(scores), method)


def is_permutation_of(rank: RankList, ids: Sequence[int]) -> bool:
    return len(rank) == len(ids) and np.array_equal(np.sort(rank.ids), np.sort(np.asarray(ids)))
