"""
Representation diagnostics on embeddings.

intra: mean over classes of the mean squared distance to the class centroid
inter: mean squared distance over distinct pairs of class centroids
ratio: inter / intra (inf when intra == 0)
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .data import Dataset
from .errors import MetricError
from .io_utils import save_csv
from .model import EncoderModel, ModelParams


@dataclass(frozen=True)
class VarianceReport:
    intra: float
    inter: float
    ratio: float
    num_classes: int


def class_centroids(embeddings: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(present class ids, centroid rows) for classes with at least one sample."""
    classes, inverse = np.unique(np.asarray(labels), return_inverse=True)
    sums = np.zeros((classes.shape[0], embeddings.shape[1]), dtype=np.float64)
    np.add.at(sums, inverse, embeddings)
    counts = np.bincount(inverse, minlength=classes.shape[0])
    return classes, sums / counts[:, None]


def variance_report(embeddings, labels) -> VarianceReport:
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if emb.ndim != 2 or emb.shape[0] != labels.shape[0]:
        raise MetricError(f"embeddings {list(emb.shape)} do not match {labels.shape[0]} labels")
    if emb.shape[0] < 2:
        raise MetricError("variance report needs at least 2 samples")
    classes, centroids = class_centroids(emb, labels)
    k = classes.shape[0]
    if k < 2:
        raise MetricError("variance report needs at least 2 classes")
    inverse = np.searchsorted(classes, labels)
    sq = np.einsum("ij,ij->i", emb - centroids[inverse], emb - centroids[inverse])
    per_class = np.bincount(inverse, weights=sq, minlength=k) / np.bincount(inverse, minlength=k)
    intra = float(per_class.mean())

    diff = centroids[:, None, :] - centroids[None, :, :]
    pair_sq = np.einsum("ijd,ijd->ij", diff, diff)
    iu = np.triu_indices(k, 1)
    inter = float(pair_sq[iu].mean())
    ratio = math.inf if intra == 0 else inter / intra
    return VarianceReport(intra, inter, ratio, int(k))


def embed(model: EncoderModel, images: np.ndarray, params: Optional[ModelParams] = None,
          batch_size: int = 500) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode embeddings and logits, in chunks."""
    if params is not None:
        model.load(params)
    embs, logits = [], []
    for start in range(0, images.shape[0], batch_size):
        e, lg = model.forward(images[start:start + batch_size], training=False)
        embs.append(e)
        logits.append(lg)
    if not embs:
        return (np.zeros((0, model.embedding_dim), dtype=model.dtype),
                np.zeros((0, model.num_classes), dtype=model.dtype))
    return np.concatenate(embs), np.concatenate(logits)


def nearest_centroid_predict(train_emb: np.ndarray, train_labels: np.ndarray,
                             query_emb: np.ndarray) -> np.ndarray:
    """Label of the closest train-class centroid (squared Euclidean; ties -> lower class id)."""
    classes, centroids = class_centroids(np.asarray(train_emb, dtype=np.float64), train_labels)
    q = np.asarray(query_emb, dtype=np.float64)
    d = (np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ centroids.T
         + np.einsum("ij,ij->i", centroids, centroids)[None, :])
    return classes[np.argmin(d, axis=1)]


def export_embeddings(model: EncoderModel, dataset: Dataset, path: str,
                      params: Optional[ModelParams] = None, max_samples: int = 2000) -> pd.DataFrame:
    """CSV with header sample_index,label,e_0..e_{D-1} for the first `max_samples` samples."""
    n = min(len(dataset), max_samples)
    emb, _ = embed(model, dataset.images[:n], params)
    df = pd.DataFrame(emb, columns=[f"e_{i}" for i in range(emb.shape[1])])
    df.insert(0, "label", dataset.labels[:n])
    df.insert(0, "sample_index", np.arange(n))
    save_csv(df, path)
    return df


def report_from_export(df: pd.DataFrame) -> VarianceReport:
    cols = [c for c in df.columns if c.startswith("e_")]
    return variance_report(df[cols].to_numpy(dtype=np.float64), df["label"].to_numpy())
