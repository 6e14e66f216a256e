"""
Class-aware stochastic quadruplet sampling over one client's local data.

Every local sample is the anchor of exactly one row per epoch. The positive comes
from the anchor's class (never the anchor itself when the class has two or more
samples); the two negatives come from two distinct classes that both differ from
the anchor's. Shards too small for that get flagged fallbacks instead of errors:

- single-sample anchor class: positive = anchor (degenerate_positive)
- exactly two classes: neg2 drawn from neg1's class, a different sample when
  possible (degenerate_negative)
- one class: negatives = anchor and the row is excluded from negative-based terms
  (no_negative)
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ClassIndex:
    labels: np.ndarray
    by_label: Dict[int, np.ndarray]
    labels_present: List[int]

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])


def build_class_index(labels) -> ClassIndex:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] < 1:
        raise DataError("class index needs a non-empty 1-d label array")
    present = sorted(int(c) for c in np.unique(labels))
    by_label = {c: np.flatnonzero(labels == c) for c in present}
    return ClassIndex(labels, by_label, present)


@dataclass
class QuadrupletBatch:
    anchor_idx: np.ndarray
    positive_idx: np.ndarray
    neg1_idx: np.ndarray
    neg2_idx: np.ndarray
    anchor_labels: np.ndarray
    degenerate_positive: np.ndarray
    degenerate_negative: np.ndarray
    no_negative: np.ndarray

    def __len__(self) -> int:
        return int(self.anchor_idx.shape[0])

    def __getitem__(self, sl: slice) -> "QuadrupletBatch":
        return QuadrupletBatch(*(getattr(self, f)[sl] for f in self.__dataclass_fields__))

    def indices(self, role: str) -> np.ndarray:
        return {"anchor": self.anchor_idx, "positive": self.positive_idx,
                "neg1": self.neg1_idx, "neg2": self.neg2_idx}[role]

    @property
    def usable(self) -> np.ndarray:
        """Rows that can feed negative-based loss terms."""
        return ~self.no_negative

    def flag_counts(self) -> Dict[str, int]:
        return {
            "degenerate_positive": int(self.degenerate_positive.sum()),
            "degenerate_negative": int(self.degenerate_negative.sum()),
            "no_negative": int(self.no_negative.sum()),
        }


def _draw_excluding(rng: np.random.Generator, size: np.ndarray, exclude: np.ndarray) -> np.ndarray:
    """Uniform position in [0, size) other than `exclude`; `exclude` itself if size < 2."""
    r = rng.integers(0, np.maximum(size - 1, 1))
    r = r + (r >= exclude)
    return np.where(size >= 2, r, exclude)


def sample_epoch_quadruplets(index: ClassIndex, rng_seed: int) -> QuadrupletBatch:
    """One shuffled row per local sample; deterministic given (index, rng_seed)."""
    rng = np.random.default_rng(rng_seed)
    n = index.num_samples
    present = np.asarray(index.labels_present, dtype=np.int64)
    n_cls = present.shape[0]
    sizes = np.array([index.by_label[c].shape[0] for c in index.labels_present], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    flat = np.concatenate([index.by_label[c] for c in index.labels_present])
    slot_of = np.searchsorted(present, index.labels)
    within = np.empty(n, dtype=np.int64)
    within[flat] = np.arange(n) - np.repeat(offsets, sizes)

    anchors = rng.permutation(n)
    a_slot = slot_of[anchors]
    a_size = sizes[a_slot]
    positive = flat[offsets[a_slot] + _draw_excluding(rng, a_size, within[anchors])]
    degenerate_positive = a_size < 2

    if n_cls >= 3:
        j1 = rng.integers(0, n_cls - 1, size=n)
        j2 = rng.integers(0, n_cls - 2, size=n)
        j2 = j2 + (j2 >= j1)
        s1 = j1 + (j1 >= a_slot)
        s2 = j2 + (j2 >= a_slot)
        neg1 = flat[offsets[s1] + rng.integers(0, sizes[s1])]
        neg2 = flat[offsets[s2] + rng.integers(0, sizes[s2])]
        degenerate_negative = np.zeros(n, dtype=bool)
        no_negative = np.zeros(n, dtype=bool)
    elif n_cls == 2:
        s1 = 1 - a_slot
        w1 = rng.integers(0, sizes[s1])
        w2 = _draw_excluding(rng, sizes[s1], w1)
        neg1 = flat[offsets[s1] + w1]
        neg2 = flat[offsets[s1] + w2]
        degenerate_negative = np.ones(n, dtype=bool)
        no_negative = np.zeros(n, dtype=bool)
    else:
        neg1 = anchors.copy()
        neg2 = anchors.copy()
        degenerate_negative = np.ones(n, dtype=bool)
        no_negative = np.ones(n, dtype=bool)

    return QuadrupletBatch(anchors, positive, neg1, neg2, index.labels[anchors],
                           degenerate_positive, degenerate_negative, no_negative)


def batch_iter(rows: QuadrupletBatch, batch_size: int) -> Iterator[QuadrupletBatch]:
    """Consecutive chunks in row order; the last partial chunk is kept."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    for start in range(0, len(rows), batch_size):
        yield rows[start:start + batch_size]
