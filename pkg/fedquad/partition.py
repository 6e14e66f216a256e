
import math
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd

from .errors import PartitionError


@dataclass(frozen=True)
class PartitionPlan:
    """Per-client global sample indices (sorted ascending). alpha=inf means i.i.d."""
    client_indices: List[np.ndarray]
    alpha: float
    seed: int

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.client_indices], dtype=np.int64)

    def is_exact_cover(self, n: int) -> bool:
        allx = np.concatenate(self.client_indices) if self.client_indices else np.array([])
        return allx.shape[0] == n and np.array_equal(np.sort(allx), np.arange(n))


def _dirichlet_split(labels: np.ndarray, num_clients: int, alpha: float,
                     rng: np.random.Generator) -> List[np.ndarray]:
    buckets: List[List[np.ndarray]] = [[] for _ in range(num_clients)]
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        p = rng.dirichlet(np.full(num_clients, alpha))
        cuts = (np.cumsum(p) * idx.shape[0]).astype(np.int64)[:-1]
        for client, part in enumerate(np.split(idx, cuts)):
            buckets[client].append(part)
    return [np.sort(np.concatenate(b)).astype(np.int64) for b in buckets]


def partition_dirichlet(labels, num_clients: int, alpha: float, seed: int,
                        max_retries: int = 100) -> PartitionPlan:
    """Per class k, p_k ~ Dir(alpha·1) splits the shuffled class indices by cumulative shares.

    A draw that leaves any client empty is redrawn with seed+1, up to `max_retries` times.
    """
    labels = np.asarray(labels)
    if num_clients < 1:
        raise PartitionError("num_clients must be >= 1")
    if not alpha > 0:
        raise PartitionError("alpha must be > 0")
    if labels.shape[0] < num_clients:
        raise PartitionError(f"{labels.shape[0]} samples cannot fill {num_clients} clients")
    for attempt in range(max_retries + 1):
        s = seed + attempt
        parts = _dirichlet_split(labels, num_clients, alpha, np.random.default_rng(s))
        if all(p.shape[0] > 0 for p in parts):
            return PartitionPlan(parts, float(alpha), s)
    raise PartitionError(f"every one of {max_retries + 1} Dirichlet draws (alpha={alpha}) "
                         f"left a client empty; lower num_clients or raise alpha")


def partition_iid(labels, num_clients: int, seed: int) -> PartitionPlan:
    """Global shuffle, then near-equal contiguous splits (first N mod K clients get one more)."""
    n = np.asarray(labels).shape[0]
    if num_clients < 1 or n < num_clients:
        raise PartitionError(f"cannot split {n} samples across {num_clients} clients")
    perm = np.random.default_rng(seed).permutation(n)
    parts = [np.sort(p).astype(np.int64) for p in np.array_split(perm, num_clients)]
    return PartitionPlan(parts, math.inf, seed)


def class_histogram(plan: PartitionPlan, labels, num_classes: int = None) -> pd.DataFrame:
    """Clients × classes sample counts."""
    labels = np.asarray(labels)
    k = num_classes or int(labels.max()) + 1
    rows = [np.bincount(labels[ix], minlength=k) for ix in plan.client_indices]
    df = pd.DataFrame(rows, columns=[f"class_{c}" for c in range(k)])
    df.index.name = "client"
    return df


def partition_summary(plan: PartitionPlan, labels, num_classes: int = None) -> pd.DataFrame:
    hist = class_histogram(plan, labels, num_classes)
    counts = hist.to_numpy()
    sizes = counts.sum(axis=1)
    return pd.DataFrame({
        "client": np.arange(plan.num_clients),
        "samples": sizes,
        "classes_present": (counts > 0).sum(axis=1),
        "dominant_share": counts.max(axis=1) / np.maximum(sizes, 1),
    })
