"""Datasets, synthetic long-tail benchmarks, CSV I/O and skewness statistics.

Pool examples carry their true class as a hidden *oracle* label. Mining code
never sees it; only :mod:`tailminer.evaluation` reads it (the simulated
annotator), via :meth:`Dataset._oracle_view`.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from tailminer.checkpoint import atomic_write_text
from tailminer.errors import InvalidInputError, InvalidProfileError, ParseError

DEFAULT_TAIL_THRESHOLD = 0.30
NO_LABEL = -1


class SplitRole(str, enum.Enum):
    TRAIN = "train"
    POOL = "pool"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class DetectionSet:
    """Per-detection logits ``z_j`` with confidence scores ``s_j``."""

    logits: np.ndarray  # (n_detections, C)
    confidences: np.ndarray  # (n_detections,)

    def __post_init__(self):
        z = np.asarray(self.logits, dtype=np.float64)
        if z.ndim == 1:
            # a single detection, or none at all
            z = z.reshape(1, -1) if z.size else z.reshape(0, 0)
        s = np.atleast_1d(np.asarray(self.confidences, dtype=np.float64))
        if z.shape[0] != s.shape[0]:
            raise InvalidInputError("one confidence per detection required")
        if s.size and (s.min() < 0.0 or s.max() > 1.0):
            raise InvalidInputError("detection confidences must lie in [0, 1]")
        if not np.isfinite(z).all():
            raise InvalidInputError("detection logits must be finite")
        object.__setattr__(self, "logits", z)
        object.__setattr__(self, "confidences", s)

    def __len__(self) -> int:
        return self.confidences.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DetectionSet):
            return NotImplemented
        return np.array_equal(self.logits, other.logits) and np.array_equal(
            self.confidences, other.confidences
        )


@dataclass(frozen=True, eq=False)
class Example:
    id: int
    features: np.ndarray
    label: int | None = None
    detections: DetectionSet | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented example collection.

    ``labels`` uses -1 for "not labelled". ``oracle`` holds hidden true labels
    for pool examples and is deliberately not a public attribute.
    """

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    role: SplitRole
    num_classes: int
    class_names: tuple[str, ...] = ()
    detections: tuple[DetectionSet | None, ...] | None = None
    _oracle: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).ravel()
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != ids.shape[0]:
            raise InvalidInputError(f"features shape {feats.shape} does not match {ids.size} ids")
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.shape != ids.shape:
            raise InvalidInputError("one label slot per example required")
        if np.unique(ids).size != ids.size:
            raise InvalidInputError("example ids must be unique")
        if self.num_classes < 1:
            raise InvalidInputError("num_classes must be positive")
        if labels.size and (labels.max() >= self.num_classes or labels.min() < NO_LABEL):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
        role = SplitRole(self.role)
        if role is SplitRole.TRAIN and (labels == NO_LABEL).any():
            raise InvalidInputError("every Train example must be labelled")
        oracle = self._oracle
        if oracle is not None:
            oracle = np.asarray(oracle, dtype=np.int64).ravel()
            if oracle.shape != ids.shape:
                raise InvalidInputError("one oracle label per example required")
            oracle.flags.writeable = False
        names = tuple(self.class_names) or tuple(f"class{k}" for k in range(self.num_classes))
        if len(names) != self.num_classes:
            raise InvalidInputError("need one class name per class")
        dets = self.detections
        if dets is not None:
            # an example with no detections carries an empty (0, C) set
            empty = DetectionSet(np.zeros((0, self.num_classes)), np.zeros(0))
            dets = tuple(empty if d is None else d for d in dets)
            if len(dets) != ids.size:
                raise InvalidInputError("detections must align with examples")
            for d in dets:
                if d.logits.shape[1] != self.num_classes:
                    raise InvalidInputError(f"detection logits must have {self.num_classes} entries")
        for arr in (ids, feats, labels):
            arr.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "detections", dets)
        object.__setattr__(self, "_oracle", oracle)

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_labeled(self) -> bool:
        return bool((self.labels != NO_LABEL).all())

    @property
    def has_oracle(self) -> bool:
        return self._oracle is not None

    @property
    def has_detections(self) -> bool:
        return self.detections is not None and all(d is not None for d in self.detections)

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            lab = int(self.labels[i])
            yield Example(
                int(self.ids[i]),
                self.features[i],
                None if lab == NO_LABEL else lab,
                self.detections[i] if self.detections is not None else None,
            )

    @property
    def examples(self) -> list[Example]:
        return list(self)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        dets = None if self.detections is None else tuple(self.detections[i] for i in index)
        oracle = None if self._oracle is None else self._oracle[index]
        return Dataset(self.ids[index], self.features[index], self.labels[index], self.role,
                       self.num_classes, self.class_names, dets, oracle)

    def positions(self, ids: Sequence[int]) -> np.ndarray:
        """Row indices of ``ids`` (in the given order)."""
        lookup = {int(v): i for i, v in enumerate(self.ids)}
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"unknown example id {exc.args[0]}") from None

    def without_oracle(self) -> "Dataset":
        return Dataset(self.ids, self.features, self.labels, self.role, self.num_classes,
                       self.class_names, self.detections, None)

    def _oracle_view(self) -> np.ndarray:
        if self._oracle is None:
            raise InvalidInputError("dataset carries no oracle labels")
        return self._oracle

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_oracle = (self._oracle is None) == (other._oracle is None) and (
            self._oracle is None or np.array_equal(self._oracle, other._oracle)
        )
        same_dets = (self.detections is None) == (other.detections is None) and (
            self.detections is None or list(self.detections) == list(other.detections)
        )
        return (
            self.role == other.role
            and self.num_classes == other.num_classes
            and self.class_names == other.class_names
            and np.array_equal(self.ids, other.ids)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and same_oracle
            and same_dets
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ClassCatalog:
    num_classes: int
    names: tuple[str, ...]
    counts: np.ndarray
    proportions: np.ndarray
    skewness_ratios: np.ndarray
    tail_classes: frozenset[int]
    tail_threshold: float = DEFAULT_TAIL_THRESHOLD

    def as_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "names": list(self.names),
            "counts": [int(c) for c in self.counts],
            "proportions": [float(p) for p in self.proportions],
            "skewness_ratios": [float(s) for s in self.skewness_ratios],
            "tail_classes": sorted(int(k) for k in self.tail_classes),
            "tail_threshold": self.tail_threshold,
        }


def catalog_from_counts(counts, names: Sequence[str] | None = None,
                        tail_threshold: float = DEFAULT_TAIL_THRESHOLD) -> ClassCatalog:
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if counts.size == 0 or total == 0:
        raise InvalidInputError("cannot build a catalog from zero examples")
    proportions = counts / total
    ratios = counts / counts.mean()
    tail = frozenset(int(k) for k in np.flatnonzero(ratios < tail_threshold))
    names = tuple(names) if names else tuple(f"class{k}" for k in range(counts.size))
    return ClassCatalog(int(counts.size), names, counts, proportions, ratios, tail, tail_threshold)


def compute_catalog(dataset: Dataset, tail_threshold: float = DEFAULT_TAIL_THRESHOLD) -> ClassCatalog:
    if len(dataset) == 0:
        raise InvalidInputError("cannot build a catalog of an empty dataset")
    if not dataset.is_labeled:
        raise InvalidInputError("catalog needs a fully labelled dataset")
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    return catalog_from_counts(counts, dataset.class_names, tail_threshold)


# --- synthetic benchmark --------------------------------------------------


@dataclass(frozen=True)
class SkewProfile:
    head_count: int = 1500
    multipliers: tuple[float, ...] = (1, 1, 1, 1, 1, 1, 1, 1, 0.04, 0.003)
    feature_dim: int = 16
    cluster_separation: float = 6.0
    noise_scale: float = 1.0
    seed: int = 0
    pool_per_class: int = 200
    test_per_class: int = 100
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        mults = tuple(float(m) for m in self.multipliers)
        object.__setattr__(self, "multipliers", mults)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.head_count < 1:
            raise InvalidProfileError("head_count must be positive")
        if not mults:
            raise InvalidProfileError("need at least one class multiplier")
        for k, m in enumerate(mults):
            if not 0.0 < m <= 1.0:
                raise InvalidProfileError(f"multiplier for class {k} must lie in (0, 1], got {m}")
        if self.feature_dim < 1:
            raise InvalidProfileError("feature_dim must be positive")
        if not (self.cluster_separation > 0 and self.noise_scale > 0):
            raise InvalidProfileError("cluster_separation and noise_scale must be positive")
        if self.pool_per_class < 0 or self.test_per_class < 0:
            raise InvalidProfileError("pool/test sizes must be non-negative")
        if self.class_names and len(self.class_names) != len(mults):
            raise InvalidProfileError("need one class name per multiplier")

    @property
    def num_classes(self) -> int:
        return len(self.multipliers)

    def train_counts(self) -> list[int]:
        # round half up, so 4.5 -> 5
        counts = [int(math.floor(self.head_count * m + 0.5)) for m in self.multipliers]
        for k, c in enumerate(counts):
            if c == 0:
                name = self.class_names[k] if self.class_names else f"class{k}"
                raise InvalidProfileError(
                    f"class {k} ({name}) rounds to 0 training examples "
                    f"(head_count {self.head_count} x multiplier {self.multipliers[k]})"
                )
        return counts

    def as_dict(self) -> dict:
        return {
            "head_count": self.head_count,
            "multipliers": list(self.multipliers),
            "feature_dim": self.feature_dim,
            "cluster_separation": self.cluster_separation,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "pool_per_class": self.pool_per_class,
            "test_per_class": self.test_per_class,
            "class_names": list(self.class_names),
        }


@dataclass(frozen=True, eq=False)
class Splits:
    train: Dataset
    pool: Dataset
    test: Dataset


MAX_CENTER_ATTEMPTS = 1000


def _draw_centers(profile: SkewProfile, rng: np.random.Generator) -> np.ndarray:
    C, d = profile.num_classes, profile.feature_dim
    min_dist = profile.cluster_separation * profile.noise_scale
    # spread chosen so typical pairwise distance is ~1.4x the minimum
    spread = min_dist / math.sqrt(d)
    for _ in range(MAX_CENTER_ATTEMPTS):
        centers = rng.normal(0.0, spread, size=(C, d))
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if C == 1 or dist.min() >= min_dist:
            return centers
    raise InvalidProfileError(
        f"could not place {C} centres {min_dist} apart in {d} dimensions "
        f"after {MAX_CENTER_ATTEMPTS} attempts"
    )


def generate_synthetic(profile: SkewProfile) -> Splits:
    """Gaussian-cluster benchmark: skewed Train, class-balanced Pool and Test."""
    counts = profile.train_counts()
    C = profile.num_classes
    rng = np.random.default_rng(profile.seed)
    centers = _draw_centers(profile, rng)
    split_feats = {r: [] for r in SplitRole}
    split_labels = {r: [] for r in SplitRole}
    for k in range(C):
        sizes = {SplitRole.TRAIN: counts[k], SplitRole.POOL: profile.pool_per_class,
                 SplitRole.TEST: profile.test_per_class}
        total = sum(sizes.values())
        pts = centers[k] + profile.noise_scale * rng.normal(size=(total, profile.feature_dim))
        start = 0
        for role in SplitRole:
            split_feats[role].append(pts[start:start + sizes[role]])
            split_labels[role].append(np.full(sizes[role], k, dtype=np.int64))
            start += sizes[role]

    names = profile.class_names
    out = {}
    next_id = 0
    for role in SplitRole:
        feats = np.concatenate(split_feats[role])
        labels = np.concatenate(split_labels[role])
        # shuffle so ids carry no class information
        perm = rng.permutation(labels.size)
        feats, labels = feats[perm], labels[perm]
        ids = np.arange(next_id, next_id + labels.size, dtype=np.int64)
        next_id += labels.size
        if role is SplitRole.POOL:
            out[role] = Dataset(ids, feats, np.full(labels.size, NO_LABEL), role, C, names,
                                None, labels)
        else:
            out[role] = Dataset(ids, feats, labels, role, C, names)
    return Splits(out[SplitRole.TRAIN], out[SplitRole.POOL], out[SplitRole.TEST])


def manifest(profile: SkewProfile, splits: Splits, tail_threshold: float = DEFAULT_TAIL_THRESHOLD) -> dict:
    catalog = compute_catalog(splits.train, tail_threshold)

    def counts(ds: Dataset, labels: np.ndarray) -> list[int]:
        return [int(c) for c in np.bincount(labels, minlength=ds.num_classes)]

    return {
        "profile": profile.as_dict(),
        "seed": profile.seed,
        "num_classes": profile.num_classes,
        "class_names": list(splits.train.class_names),
        "feature_dim": profile.feature_dim,
        "counts": {
            "train": counts(splits.train, splits.train.labels),
            "pool": counts(splits.pool, splits.pool._oracle_view()),
            "test": counts(splits.test, splits.test.labels),
        },
        "sizes": {"train": len(splits.train), "pool": len(splits.pool), "test": len(splits.test)},
        "tail_threshold": tail_threshold,
        "tail_classes": sorted(catalog.tail_classes),
        "skewness_ratios": [float(s) for s in catalog.skewness_ratios],
    }


# --- CSV ------------------------------------------------------------------

_FIXED = ("id", "label", "oracle_label", "detections")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _format_detections(ds: DetectionSet | None) -> str:
    if ds is None:
        return ""
    parts = []
    for s, z in zip(ds.confidences, ds.logits):
        parts.append(_fmt(s) + ":" + ";".join(_fmt(v) for v in z))
    return "|".join(parts)


def _parse_detections(cell: str, path: str, line: int) -> DetectionSet | None:
    if cell == "":
        return None
    confs, logits = [], []
    for chunk in cell.split("|"):
        conf, sep, rest = chunk.partition(":")
        if not sep:
            raise ParseError("detection entry needs 'confidence:z0;z1;...'", path, line)
        try:
            confs.append(float(conf))
            logits.append([float(v) for v in rest.split(";")])
        except ValueError:
            raise ParseError(f"bad number in detection {chunk!r}", path, line) from None
    if len({len(z) for z in logits}) != 1:
        raise ParseError("detections in one example have different logit lengths", path, line)
    try:
        return DetectionSet(np.array(logits), np.array(confs))
    except InvalidInputError as exc:
        raise ParseError(str(exc), path, line) from None


def dumps_csv(dataset: Dataset) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["id", "label"]
    if dataset.has_oracle:
        header.append("oracle_label")
    header += [f"f{i}" for i in range(dataset.dim)]
    if dataset.detections is not None:
        header.append("detections")
    writer.writerow(header)
    for i in range(len(dataset)):
        lab = int(dataset.labels[i])
        row = [str(int(dataset.ids[i])), "" if lab == NO_LABEL else str(lab)]
        if dataset.has_oracle:
            row.append(str(int(dataset._oracle[i])))
        row += [_fmt(v) for v in dataset.features[i]]
        if dataset.detections is not None:
            row.append(_format_detections(dataset.detections[i]))
        writer.writerow(row)
    return buf.getvalue()


def save_csv(dataset: Dataset, path) -> None:
    atomic_write_text(path, dumps_csv(dataset))


def load_csv(
    path,
    role: SplitRole | str | None = None,
    num_classes: int | None = None,
    class_names: Sequence[str] = (),
) -> Dataset:
    """Read a dataset CSV. Role defaults to Train when fully labelled, else Pool."""
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        cols = {name: j for j, name in enumerate(header)}
        if len(cols) != len(header):
            raise ParseError("duplicate column name", path, 1)
        for name in header:
            if name not in _FIXED and not (name.startswith("f") and name[1:].isdigit()):
                raise ParseError(f"unknown column {name!r}", path, 1)
        if "id" not in cols or "label" not in cols:
            raise ParseError("header must declare 'id' and 'label'", path, 1)
        d = sum(1 for name in header if name not in _FIXED)
        feat_cols = []
        for i in range(d):
            if f"f{i}" not in cols:
                raise ParseError(f"feature columns must be f0..f{d - 1}; missing f{i}", path, 1)
            feat_cols.append(cols[f"f{i}"])

        ids, labels, oracle, feats, dets = [], [], [], [], []
        seen: dict[int, int] = {}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields ({d} features), got {len(row)}", path, line
                )
            try:
                ex_id = int(row[cols["id"]])
            except ValueError:
                raise ParseError(f"bad id {row[cols['id']]!r}", path, line) from None
            if ex_id in seen:
                raise ParseError(f"duplicate id {ex_id} (first on line {seen[ex_id]})", path, line)
            seen[ex_id] = line
            try:
                lab = row[cols["label"]]
                labels.append(NO_LABEL if lab == "" else int(lab))
                if "oracle_label" in cols:
                    oracle.append(int(row[cols["oracle_label"]]))
                feats.append([float(row[j]) for j in feat_cols])
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
            if labels[-1] < NO_LABEL or (oracle and oracle[-1] < 0):
                raise ParseError("labels must be non-negative", path, line)
            if not all(math.isfinite(v) for v in feats[-1]):
                raise ParseError("non-finite feature value", path, line)
            ids.append(ex_id)
            if "detections" in cols:
                dets.append(_parse_detections(row[cols["detections"]], path, line))

    labels_arr = np.array(labels, dtype=np.int64)
    oracle_arr = np.array(oracle, dtype=np.int64) if "oracle_label" in cols else None
    if num_classes is None:
        seen_max = [labels_arr.max(initial=-1)]
        if oracle_arr is not None:
            seen_max.append(oracle_arr.max(initial=-1))
        seen_max += [dd.logits.shape[1] - 1 for dd in dets if dd is not None and len(dd)]
        if class_names:
            seen_max.append(len(class_names) - 1)
        num_classes = max(int(max(seen_max)) + 1, 1)
    if role is None:
        role = SplitRole.TRAIN if labels and (labels_arr != NO_LABEL).all() else SplitRole.POOL
    try:
        return Dataset(
            np.array(ids, dtype=np.int64),
            np.array(feats, dtype=np.float64).reshape(len(ids), d),
            labels_arr,
            SplitRole(role),
            num_classes,
            tuple(class_names),
            tuple(dets) if "detections" in cols else None,
            oracle_arr,
        )
    except InvalidInputError as exc:
        raise ParseError(str(exc), path) from None


def augment(train: Dataset, mined: Dataset) -> Dataset:
    """Append annotated mined examples to Train, returning a new Train dataset."""
    if len(mined) == 0:
        return train
    if not mined.is_labeled:
        raise InvalidInputError("mined examples must be annotated before augmenting")
    if mined.dim != train.dim:
        raise InvalidInputError("feature dimension mismatch")
    clash = np.intersect1d(train.ids, mined.ids)
    if clash.size:
        raise InvalidInputError(f"mined ids collide with train ids: {clash[:5].tolist()}")
    return Dataset(
        np.concatenate([train.ids, mined.ids]),
        np.concatenate([train.features, mined.features]),
        np.concatenate([train.labels, mined.labels]),
        SplitRole.TRAIN,
        train.num_classes,
        train.class_names,
    )


def write_manifest(path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
