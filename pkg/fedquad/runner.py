"""
Experiment driver: config -> datasets, partition, model -> federation -> artifacts.

Run directory layout:
  manifest.yaml            full config (re-runnable with `run --config`)
  rounds.csv               one row per round, rewritten after every round
  clients.csv              one row per (round, participating client)
  final.fqck               final global model
  embeddings_round{t}.csv  test embeddings at output.export_rounds
"""
import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import __version__
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .data import Dataset, channel_stats, load_cifar, make_blobs, standardize
from .errors import DataError, FedQuadError
from .federation import EvalResult, FedConfig, RoundRecord, evaluate_round, run_federation
from .io_utils import atomic_write_text, ensure_dir, save_csv
from .metrics import export_embeddings
from .model import EncoderModel, ModelParams, build_mlp_encoder, build_conv_encoder
from .partition import (PartitionPlan, class_histogram, partition_dirichlet, partition_iid,
                        partition_summary)
from .qa import run_qa
from .seeds import derive_seed
from .settings import serialize_config, with_overrides


def say(msg: str, quiet: bool = False):
    if not quiet:
        tqdm.write(msg)


def experiment_seeds(cfg: ExperimentConfig) -> Dict[str, int]:
    return {
        "init": derive_seed(cfg.seed, "init"),
        "partition": derive_seed(cfg.seed, "partition"),
        "blobs": derive_seed(cfg.seed, "blobs"),
    }


def build_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind == "blobs":
        seed = derive_seed(cfg.seed, "blobs")
        train = make_blobs(d.num_classes, d.per_class, d.dim, d.spread, seed, d.radius, "train")
        test = make_blobs(d.num_classes, d.test_per_class, d.dim, d.spread, seed, d.radius, "test")
    else:
        if not d.path:
            raise DataError("dataset.path is empty and FEDQUAD_DATA_DIR is not set")
        if not os.path.isdir(d.path):
            raise DataError(f"dataset directory not found: {d.path}")
        train = load_cifar(d.path, d.kind, "train")
        test = load_cifar(d.path, d.kind, "test")
        if d.standardize:
            if d.channel_mean:
                mean, std = d.channel_mean, d.channel_std
            else:
                mean, std = channel_stats(train)
            train, test = standardize(train, mean, std), standardize(test, mean, std)
    if cfg.model_kind == "mlp" and train.images.ndim > 2:
        flat = lambda ds: Dataset(ds.images.reshape(len(ds), -1), ds.labels, ds.num_classes,
                                  ds.split, ds.name)
        train, test = flat(train), flat(test)
    return train, test


def build_model_fn(cfg: ExperimentConfig, train: Dataset) -> Callable[[], EncoderModel]:
    seed = derive_seed(cfg.seed, "init")
    m = cfg.model
    if cfg.model_kind == "cnn":
        c, h, _ = train.input_shape
        return lambda: build_conv_encoder(train.num_classes, seed, in_channels=c, image_size=h,
                                           channels=m.channels, embedding_dim=m.embedding_dim,
                                           dtype=cfg.dtype, debug=cfg.debug)
    dim = int(np.prod(train.input_shape))
    return lambda: build_mlp_encoder(dim, m.hidden_dims, m.embedding_dim, train.num_classes,
                                     seed, dtype=cfg.dtype, debug=cfg.debug)


def build_partition(cfg: ExperimentConfig, train: Dataset) -> PartitionPlan:
    seed = derive_seed(cfg.seed, "partition")
    n = cfg.federation.num_clients
    if cfg.partition.kind == "iid":
        return partition_iid(train.labels, n, seed)
    return partition_dirichlet(train.labels, n, cfg.partition.alpha, seed,
                               max_retries=cfg.partition.max_retries)


def fed_config(cfg: ExperimentConfig, num_clients: Optional[int] = None) -> FedConfig:
    f = cfg.federation
    return FedConfig(
        num_clients=num_clients or f.num_clients, rounds=f.rounds, local_epochs=f.local_epochs,
        batch_size=f.batch_size, participation=f.participation if num_clients is None else 1.0,
        method=cfg.loss.method, loss=cfg.loss.quad_config(), optimizer=cfg.optimizer,
        seed=cfg.seed, workers=cfg.workers, eval_mode=cfg.output.eval_mode,
        eval_max_samples=cfg.output.eval_max_samples,
    )


@dataclass
class RunResult:
    out_dir: str
    final: ModelParams
    history: List[RoundRecord]
    initial: EvalResult
    files: Dict[str, str] = field(default_factory=dict)

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].accuracy if self.history else math.nan


def _round_line(t: int, acc: float, ratio: float, rec: Optional[RoundRecord] = None) -> str:
    parts = [f"[round {t}] acc={acc:.4f}"]
    if rec is not None:
        parts.append(f"ce={rec.ce:.4f} metric={rec.metric:.4f}")
    parts.append(f"inter/intra={ratio:.3f}")
    if rec is not None:
        parts.append(f"clients={len(rec.participants)} time={rec.wall_time:.1f}s")
    return " ".join(parts)


def _client_rows(rec: RoundRecord) -> List[dict]:
    return [{
        "round": rec.round, "client": r.client_id, "num_samples": r.num_samples,
        "weight": w, "steps": r.steps, "ce": r.ce, "metric": r.metric, "total": r.total,
        **r.flags,
    } for r, w in zip(rec.clients, rec.weights)]


def _execute(cfg: ExperimentConfig, train: Dataset, test: Dataset, plan: PartitionPlan,
             fcfg: FedConfig, label: str, quiet: bool) -> RunResult:
    out = cfg.output.dir
    ensure_dir(out)
    files = {"manifest": os.path.join(out, "manifest.yaml"),
             "rounds": os.path.join(out, "rounds.csv"),
             "clients": os.path.join(out, "clients.csv"),
             "checkpoint": os.path.join(out, "final.fqck")}
    header = [f"fedquad {__version__} {label}"]
    header += [f"seed.{k}: {v}" for k, v in experiment_seeds(cfg).items()]
    atomic_write_text(files["manifest"], serialize_config(cfg, header="\n".join(header)))

    model_fn = build_model_fn(cfg, train)
    probe = model_fn()
    initial = probe.state()
    exports = set(cfg.output.export_rounds)

    def export(t: int, params: ModelParams):
        if t in exports:
            path = os.path.join(out, f"embeddings_round{t}.csv")
            export_embeddings(probe, test, path, params, max_samples=cfg.output.export_max_samples)
            files[f"embeddings_round{t}"] = path

    ev0 = evaluate_round(probe, initial, test, fcfg, train)
    say(_round_line(0, ev0.accuracy, ev0.ratio), quiet)
    export(0, initial)

    rows: List[dict] = []
    client_rows: List[dict] = []

    def on_round(rec: RoundRecord, params: ModelParams):
        rows.append(rec.row())
        client_rows.extend(_client_rows(rec))
        save_csv(pd.DataFrame(rows), files["rounds"])
        save_csv(pd.DataFrame(client_rows), files["clients"])
        say(_round_line(rec.round, rec.accuracy, rec.ratio, rec), quiet)
        export(rec.round, params)

    final, history = run_federation(fcfg, train, plan, model_fn, test_set=test, initial=initial,
                                    on_round=on_round, quiet=quiet)
    save_checkpoint(final, files["checkpoint"])
    say(f"[OK] {label}: final acc={history[-1].accuracy:.4f} -> {os.path.abspath(out)}", quiet)
    return RunResult(out, final, history, ev0, files)


def run_experiment(cfg: ExperimentConfig, quiet: bool = False) -> RunResult:
    """Federated run as configured; writes the full artifact set to output.dir."""
    train, test = build_datasets(cfg)
    plan = build_partition(cfg, train)
    say(f"[data] {cfg.dataset.kind}: train={len(train)} test={len(test)} "
        f"clients={plan.num_clients} sizes min={plan.sizes.min()} max={plan.sizes.max()}", quiet)
    return _execute(cfg, train, test, plan, fed_config(cfg), f"run {cfg.loss.method}", quiet)


def run_centralized(cfg: ExperimentConfig, quiet: bool = False) -> RunResult:
    """Single model on the full train split: a one-client federation with the same loss,
    so T rounds × E epochs with an optimizer reset every round."""
    train, test = build_datasets(cfg)
    plan = PartitionPlan([np.arange(len(train), dtype=np.int64)], math.inf, cfg.seed)
    say(f"[data] {cfg.dataset.kind}: train={len(train)} test={len(test)} centralized", quiet)
    return _execute(cfg, train, test, plan, fed_config(cfg, num_clients=1),
                    f"centralized {cfg.loss.method}", quiet)


GRID_COLUMNS = ["cell", "method", "beta", "m1", "m2", "use_ce", "accuracy", "logits_accuracy",
                "centroid_accuracy", "ratio", "error"]


def grid_cells(cfg: ExperimentConfig) -> List[Dict[str, object]]:
    g = cfg.grid
    return [{"beta": b, "m1": m1, "m2": m2, "use_ce": ce}
            for b, m1, m2, ce in itertools.product(g.beta, g.m1, g.m2, g.use_ce)]


def run_ablation_grid(cfg: ExperimentConfig, quiet: bool = False) -> pd.DataFrame:
    """One federated run per (β, m1, m2, use_ce) cell; a failing cell is recorded and skipped."""
    cells = grid_cells(cfg)
    if not cells:
        raise DataError("ablation grid is empty")
    base = cfg.output.dir
    path = os.path.join(base, "grid.csv")
    rows = []
    bar = tqdm(cells, desc="grid", disable=quiet)
    for i, cell in enumerate(bar):
        name = f"cell{i:03d}"
        row = {"cell": name, "method": cfg.loss.method, **cell, "accuracy": math.nan,
               "logits_accuracy": math.nan, "centroid_accuracy": math.nan, "ratio": math.nan,
               "error": ""}
        try:
            sub = with_overrides(cfg, **{f"loss.{k}": v for k, v in cell.items()},
                                 **{"output.dir": os.path.join(base, name)})
            res = run_experiment(sub, quiet=True)
            last = res.history[-1]
            row.update(accuracy=last.accuracy, logits_accuracy=last.logits_accuracy,
                       centroid_accuracy=last.centroid_accuracy, ratio=last.ratio)
            say(f"[grid] {name} beta={cell['beta']} m1={cell['m1']} m2={cell['m2']} "
                f"use_ce={cell['use_ce']} acc={last.accuracy:.4f}", quiet)
        except FedQuadError as e:
            row["error"] = f"{e.category}: {e}"
            say(f"[WARN] {name} aborted: {e}", quiet)
        rows.append(row)
        save_csv(pd.DataFrame(rows, columns=GRID_COLUMNS), path)
        bar.set_postfix_str(f"done={len(rows)} failed={sum(1 for r in rows if r['error'])}")
    bar.close()
    return pd.DataFrame(rows, columns=GRID_COLUMNS)


def inspect_partition(cfg: ExperimentConfig, quiet: bool = False) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Client × class histogram and per-client summary of the configured partition."""
    train, _ = build_datasets(cfg)
    plan = build_partition(cfg, train)
    hist = class_histogram(plan, train.labels, train.num_classes)
    summary = partition_summary(plan, train.labels, train.num_classes)
    out = cfg.output.dir
    save_csv(hist.reset_index(), os.path.join(out, "partition_histogram.csv"))
    save_csv(summary, os.path.join(out, "partition_summary.csv"))
    say(f"[OK] partition: {plan.num_clients} clients, alpha={plan.alpha}, seed={plan.seed}, "
        f"sizes {plan.sizes.min()}..{plan.sizes.max()} -> {os.path.abspath(out)}", quiet)
    return hist, summary


def check_data(cfg: ExperimentConfig, quiet: bool = False) -> pd.DataFrame:
    """QA report on the configured datasets and partition; DataError when any check fails."""
    train, test = build_datasets(cfg)
    plan = build_partition(cfg, train)
    report = run_qa(train, test, plan)
    save_csv(report, os.path.join(cfg.output.dir, "qa_report.csv"))
    failed = report[~report["ok"]]
    for _, r in failed.iterrows():
        say(f"[WARN] {r['target']}.{r['check']}: {r['detail']}", quiet)
    if len(failed):
        raise DataError(f"{len(failed)} data check(s) failed; see qa_report.csv")
    say(f"[OK] {len(report)} data checks passed", quiet)
    return report
