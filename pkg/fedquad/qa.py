import numpy as np
import pandas as pd

from .data import Dataset
from .partition import PartitionPlan


def check_labels(ds: Dataset):
    lo, hi = (int(ds.labels.min()), int(ds.labels.max())) if len(ds) else (0, -1)
    ok = len(ds) > 0 and lo >= 0 and hi < ds.num_classes
    return ok, f"{len(ds)} labels in [{lo}, {hi}], expected [0, {ds.num_classes - 1}]"


def check_finite(ds: Dataset):
    bad = int(np.size(ds.images) - np.count_nonzero(np.isfinite(ds.images)))
    return bad == 0, f"{bad} non-finite input values"


def check_class_counts(ds: Dataset):
    counts = ds.class_counts()
    missing = [int(c) for c in np.flatnonzero(counts == 0)]
    return not missing, f"min={int(counts.min())} max={int(counts.max())} missing={missing}"


def check_coverage(plan: PartitionPlan, n: int):
    allx = np.concatenate(plan.client_indices)
    dup = int(allx.shape[0] - np.unique(allx).shape[0])
    out = int(((allx < 0) | (allx >= n)).sum())
    uncovered = int(n - np.unique(allx[(allx >= 0) & (allx < n)]).shape[0])
    ok = dup == 0 and out == 0 and uncovered == 0
    return ok, f"duplicates={dup} out_of_range={out} uncovered={uncovered}"


def check_empty_clients(plan: PartitionPlan):
    empty = [i for i, ix in enumerate(plan.client_indices) if len(ix) == 0]
    return not empty, f"empty clients {empty}"


def run_qa(train: Dataset, test: Dataset, plan: PartitionPlan = None) -> pd.DataFrame:
    """One row per check: target, check, ok, detail."""
    rows = []
    for ds in (train, test):
        for fn in (check_labels, check_finite, check_class_counts):
            ok, msg = fn(ds)
            rows.append({"target": ds.split, "check": fn.__name__[6:], "ok": bool(ok),
                         "detail": msg})
    if plan is not None:
        for name, (ok, msg) in (("coverage", check_coverage(plan, len(train))),
                                ("empty_clients", check_empty_clients(plan))):
            rows.append({"target": "partition", "check": name, "ok": bool(ok), "detail": msg})
    return pd.DataFrame(rows, columns=["target", "check", "ok", "detail"])
