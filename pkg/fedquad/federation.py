"""
Federated training loop: broadcast, local training, size-weighted aggregation.

Every client starts each round from the global parameters with a fresh Adam state;
only parameters (batch-norm buffers included) travel between client and server.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .config import OptimizerSpec
from .data import Dataset
from .errors import (AggregationError, ConfigError, DataError, FedQuadError, NumericError,
                     PartitionError, with_context)
from .losses import METHODS, QuadLossConfig, local_objective, required_roles
from .metrics import embed, nearest_centroid_predict, variance_report
from .model import EncoderModel, ModelParams
from .optim import AdamState, adam_update
from .partition import PartitionPlan
from .pool import ClientPool
from .sampler import batch_iter, build_class_index, sample_epoch_quadruplets
from .seeds import derive_seed, rng_for

EVAL_MODES = ("auto", "logits", "centroid")


@dataclass(frozen=True)
class FedConfig:
    num_clients: int
    rounds: int = 20
    local_epochs: int = 5
    batch_size: int = 128
    participation: float = 1.0
    method: str = "fedquad"
    loss: QuadLossConfig = field(default_factory=QuadLossConfig)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    seed: int = 0
    workers: int = 1
    eval_mode: str = "auto"
    eval_max_samples: int = 2000
    # test mode: keep batch-norm running buffers fixed during local training
    freeze_bn_stats: bool = False

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("must be >= 1", key="federation.num_clients")
        if self.rounds < 1:
            raise ConfigError("must be >= 1", key="federation.rounds")
        if self.local_epochs < 0:
            raise ConfigError("must be >= 0", key="federation.local_epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", key="federation.batch_size")
        if not 0 < self.participation <= 1:
            raise ConfigError("must be in (0, 1]", key="federation.participation")
        if self.method not in METHODS:
            raise ConfigError(f"must be one of {', '.join(METHODS)}", key="loss.method")
        if self.method == "fedavg" and not self.loss.use_ce:
            raise ConfigError("fedavg without cross-entropy has nothing to train",
                              key="loss.use_ce")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"must be one of {', '.join(EVAL_MODES)}", key="output.eval_mode")

    @property
    def clients_per_round(self) -> int:
        # round() guards against 0.3*10 == 3.0000000000000004
        return max(1, math.ceil(round(self.participation * self.num_clients, 9)))

    @property
    def resolved_eval_mode(self) -> str:
        if self.eval_mode != "auto":
            return self.eval_mode
        return "logits" if self.loss.use_ce else "centroid"


@dataclass
class ClientResult:
    client_id: int
    round: int
    params: ModelParams
    num_samples: int
    steps: int
    ce: float
    metric: float
    total: float
    flags: Dict[str, int]


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray       # nan for classes absent from the test set
    class_counts: np.ndarray
    logits_accuracy: float = math.nan
    centroid_accuracy: float = math.nan
    intra: float = math.nan
    inter: float = math.nan
    ratio: float = math.nan


@dataclass
class RoundRecord:
    round: int                  # 1-based: the record for w^round
    participants: Tuple[int, ...]
    sample_counts: Tuple[int, ...]
    weights: Tuple[float, ...]
    accuracy: float
    logits_accuracy: float
    centroid_accuracy: float
    ce: float
    metric: float
    total: float
    intra: float
    inter: float
    ratio: float
    wall_time: float
    clients: List[ClientResult] = field(default_factory=list, repr=False)

    def row(self) -> Dict[str, object]:
        """CSV row (wall time excluded so reruns are byte-identical)."""
        return {
            "round": self.round,
            "participants": " ".join(map(str, self.participants)),
            "num_samples": int(sum(self.sample_counts)),
            "accuracy": self.accuracy,
            "logits_accuracy": self.logits_accuracy,
            "centroid_accuracy": self.centroid_accuracy,
            "ce": self.ce,
            "metric": self.metric,
            "total": self.total,
            "intra": self.intra,
            "inter": self.inter,
            "ratio": self.ratio,
        }


def train_client(client_id: int, round_idx: int, global_params: ModelParams,
                 local_data: Dataset, cfg: FedConfig, model: EncoderModel) -> ClientResult:
    """E local epochs of the method's objective starting from `global_params`.

    Quadruplets are redrawn every epoch from seed (master, "sample", client, round, epoch);
    all roles go through the same model instance, then backward pops them in reverse.
    """
    if len(local_data) == 0:
        raise DataError(f"client {client_id} has no local data")
    model.load(global_params)
    model.set_track_running_stats(not cfg.freeze_bn_stats)
    opt = AdamState(lr=cfg.optimizer.lr, beta1=cfg.optimizer.beta1, beta2=cfg.optimizer.beta2,
                    eps=cfg.optimizer.eps, weight_decay=cfg.optimizer.weight_decay)
    arrays = model.param_arrays()
    roles = required_roles(cfg.method, cfg.loss)
    index = build_class_index(local_data.labels)

    sums = {"ce": 0.0, "metric": 0.0, "total": 0.0}
    flags = {"degenerate_positive": 0, "degenerate_negative": 0, "no_negative": 0}
    steps = 0
    for epoch in range(cfg.local_epochs):
        rows = sample_epoch_quadruplets(index, derive_seed(cfg.seed, "sample", client_id,
                                                           round_idx, epoch))
        for k, v in rows.flag_counts().items():
            flags[k] += v
        for b, batch in enumerate(batch_iter(rows, cfg.batch_size)):
            where = f"client {client_id} round {round_idx + 1} epoch {epoch + 1} batch {b + 1}"
            try:
                model.zero_grad()
                emb, logits = {}, None
                for role in roles:
                    e, lg = model.forward(local_data.images[batch.indices(role)], training=True)
                    emb[role] = e
                    if role == "anchor":
                        logits = lg
                out = local_objective(cfg.method, cfg.loss, logits, batch.anchor_labels, emb,
                                      mask=batch.usable)
                if not math.isfinite(out.value):
                    raise NumericError(f"non-finite loss {out.value}")
                grads = None
                for role in reversed(roles):
                    grads = model.backward(out.grads[role],
                                           out.grads["logits"] if role == "anchor" else None)
                adam_update(opt, arrays, grads)
            except FedQuadError as e:
                model.clear_caches()
                raise with_context(e, where) from e
            model.step_count += 1
            steps += 1
            for k in sums:
                sums[k] += out.components[k]

    means = {k: (v / steps if steps else math.nan) for k, v in sums.items()}
    return ClientResult(client_id, round_idx, model.state(), len(local_data), steps,
                        means["ce"], means["metric"], means["total"], flags)


def aggregate(params_list: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Entrywise weighted mean of every entry (buffers included); step count reset to 0.

    Computed as base + Σ wᵢ(pᵢ − base) around the heaviest input, which keeps identical
    inputs, one-hot weights and a single input exact.
    """
    if not params_list:
        raise AggregationError("nothing to aggregate")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(params_list),):
        raise AggregationError(f"{len(params_list)} models but {w.shape[0] if w.ndim else 0} weights")
    if not np.isfinite(w).all() or (w < 0).any() or w.sum() <= 0:
        raise AggregationError("weights must be finite, >= 0, with a positive sum")
    w = w / w.sum()
    base_i = int(np.argmax(w))
    base = params_list[base_i]
    for i, p in enumerate(params_list):
        if not p.same_layout(base):
            raise AggregationError(f"model {i} does not match the layout of model {base_i}")
    entries = []
    for name in base:
        b = base[name]
        acc = np.array(b, dtype=np.float64, copy=True)
        for i, p in enumerate(params_list):
            if i == base_i or w[i] == 0.0:
                continue
            acc += w[i] * (p[name].astype(np.float64) - b)
        entries.append((name, acc.astype(b.dtype, copy=False)))
    return ModelParams(entries, step_count=0)


def _per_class(pred: np.ndarray, labels: np.ndarray, num_classes: int):
    counts = np.bincount(labels, minlength=num_classes)
    hits = np.bincount(labels[pred == labels], minlength=num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return per_class, counts


def evaluate_global(model: EncoderModel, params: ModelParams, test_set: Dataset) -> EvalResult:
    """Argmax-of-logits accuracy in evaluation mode, with a per-class breakdown."""
    if len(test_set) == 0:
        raise DataError("empty test set")
    _, logits = embed(model, test_set.images, params)
    pred = np.argmax(logits, axis=1)
    acc = float(np.mean(pred == test_set.labels))
    per_class, counts = _per_class(pred, test_set.labels, test_set.num_classes)
    return EvalResult(acc, per_class, counts, logits_accuracy=acc)


def evaluate_round(model: EncoderModel, params: ModelParams, test_set: Dataset,
                   cfg: FedConfig, train_set: Optional[Dataset] = None) -> EvalResult:
    """Logits and/or nearest-centroid accuracy plus the variance report on test embeddings.

    Centroids come from at most `eval_max_samples` train samples (seeded draw).
    """
    if len(test_set) == 0:
        raise DataError("empty test set")
    emb, logits = embed(model, test_set.images, params)
    mode = cfg.resolved_eval_mode
    logits_pred = np.argmax(logits, axis=1)
    logits_acc = float(np.mean(logits_pred == test_set.labels))
    centroid_acc = math.nan
    centroid_pred = None
    if train_set is not None and len(train_set):
        n = len(train_set)
        pick = np.arange(n)
        if n > cfg.eval_max_samples:
            pick = np.sort(rng_for(cfg.seed, "eval").choice(n, cfg.eval_max_samples, replace=False))
        train_emb, _ = embed(model, train_set.images[pick])
        centroid_pred = nearest_centroid_predict(train_emb, train_set.labels[pick], emb)
        centroid_acc = float(np.mean(centroid_pred == test_set.labels))
    if mode == "centroid" and centroid_pred is None:
        raise DataError("centroid evaluation needs the train split")
    pred = centroid_pred if mode == "centroid" else logits_pred
    per_class, counts = _per_class(pred, test_set.labels, test_set.num_classes)
    out = EvalResult(float(np.mean(pred == test_set.labels)), per_class, counts,
                     logits_accuracy=logits_acc, centroid_accuracy=centroid_acc)
    if np.unique(test_set.labels).shape[0] >= 2:
        rep = variance_report(emb, test_set.labels)
        out.intra, out.inter, out.ratio = rep.intra, rep.inter, rep.ratio
    return out


def select_clients(cfg: FedConfig, round_idx: int) -> List[int]:
    """Exactly ceil(f·N) distinct clients, uniform without replacement, sorted."""
    m = cfg.clients_per_round
    if m >= cfg.num_clients:
        return list(range(cfg.num_clients))
    picked = rng_for(cfg.seed, "select", round_idx).choice(cfg.num_clients, m, replace=False)
    return sorted(int(c) for c in picked)


def _weighted(values: Sequence[float], weights: np.ndarray) -> float:
    v = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(v)
    if not ok.any():
        return math.nan
    return float(np.sum(v[ok] * weights[ok]) / np.sum(weights[ok]))


def run_federation(cfg: FedConfig, dataset: Dataset, plan: PartitionPlan,
                   model_fn: Callable[[], EncoderModel], test_set: Optional[Dataset] = None,
                   initial: Optional[ModelParams] = None,
                   on_round: Optional[Callable[[RoundRecord, ModelParams], None]] = None,
                   quiet: bool = True) -> Tuple[ModelParams, List[RoundRecord]]:
    """T rounds of select -> broadcast -> train -> aggregate; returns (w^T, history).

    `model_fn` must build the same architecture every call; the initial global model
    is the first built instance's state unless `initial` is given.
    """
    if plan.num_clients != cfg.num_clients:
        raise PartitionError(f"partition has {plan.num_clients} clients, "
                             f"config expects {cfg.num_clients}")
    if any(len(ix) == 0 for ix in plan.client_indices):
        raise PartitionError("partition contains an empty client")
    pool = ClientPool(model_fn, workers=cfg.workers, quiet=True)
    eval_model = pool.primary_model()
    global_params = initial if initial is not None else eval_model.state()
    shards = [dataset.subset(ix) for ix in plan.client_indices]

    history: List[RoundRecord] = []
    bar = tqdm(range(cfg.rounds), desc="rounds", disable=quiet)
    for t in bar:
        start = time.perf_counter()
        chosen = select_clients(cfg, t)

        def job(model: EncoderModel, cid: int, t=t, params=global_params) -> ClientResult:
            return train_client(cid, t, params, shards[cid], cfg, model)

        results = pool.map(job, chosen, desc=f"round {t + 1}")
        try:
            counts = np.array([r.num_samples for r in results], dtype=np.float64)
            weights = counts / counts.sum()
            global_params = aggregate([r.params for r in results], weights)
            ev = (evaluate_round(eval_model, global_params, test_set, cfg, dataset)
                  if test_set is not None else None)
        except FedQuadError as e:
            raise with_context(e, f"round {t + 1}") from e

        rec = RoundRecord(
            round=t + 1,
            participants=tuple(chosen),
            sample_counts=tuple(int(c) for c in counts),
            weights=tuple(float(x) for x in weights),
            accuracy=ev.accuracy if ev else math.nan,
            logits_accuracy=ev.logits_accuracy if ev else math.nan,
            centroid_accuracy=ev.centroid_accuracy if ev else math.nan,
            ce=_weighted([r.ce for r in results], weights),
            metric=_weighted([r.metric for r in results], weights),
            total=_weighted([r.total for r in results], weights),
            intra=ev.intra if ev else math.nan,
            inter=ev.inter if ev else math.nan,
            ratio=ev.ratio if ev else math.nan,
            wall_time=time.perf_counter() - start,
            clients=results,
        )
        history.append(rec)
        if not quiet:
            bar.set_postfix_str(f"acc={rec.accuracy:.4f} loss={rec.total:.4f}")
        if on_round is not None:
            on_round(rec, global_params)
    bar.close()
    return global_params, history
