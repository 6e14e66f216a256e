
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .losses import QuadLossConfig

# Defaults: B=128, E=5, T=20, Adam lr=0.001, wd=1e-5, β=0.5, m1=1.0, m2=0.5.


@dataclass
class DatasetSpec:
    kind: str = "blobs"             # blobs | cifar10 | cifar100
    path: str = ""                  # CIFAR directory; empty -> $FEDQUAD_DATA_DIR
    num_classes: int = 10           # blobs only
    per_class: int = 500
    test_per_class: int = 100
    dim: int = 32
    spread: float = 0.35
    radius: float = 1.0
    standardize: bool = True
    channel_mean: List[float] = field(default_factory=list)   # empty -> train-split stats
    channel_std: List[float] = field(default_factory=list)


@dataclass
class PartitionSpec:
    kind: str = "dirichlet"         # iid | dirichlet
    alpha: float = 0.5
    max_retries: int = 100


@dataclass
class ModelSpec:
    kind: str = "auto"              # auto | cnn | mlp (auto: CNN for CIFAR, MLP otherwise)
    hidden_dims: List[int] = field(default_factory=lambda: [128])
    embedding_dim: int = 128
    channels: List[int] = field(default_factory=lambda: [64, 128, 256])


@dataclass
class LossSpec:
    method: str = "fedquad"         # fedavg | fedquad | tripletfl | quadrupletfl | supconfl
    beta: float = 0.5
    m1: float = 1.0
    m2: float = 0.5
    margin: float = 1.0
    temperature: float = 0.1
    squared_distance: bool = True
    use_ce: bool = True

    def quad_config(self) -> QuadLossConfig:
        return QuadLossConfig(beta=self.beta, m1=self.m1, m2=self.m2,
                              squared_distance=self.squared_distance, margin=self.margin,
                              temperature=self.temperature, use_ce=self.use_ce)


@dataclass
class FederationSpec:
    num_clients: int = 10
    rounds: int = 20
    local_epochs: int = 5
    batch_size: int = 128
    participation: float = 1.0


@dataclass
class OptimizerSpec:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5


@dataclass
class OutputSpec:
    dir: str = "artifacts/run"
    export_rounds: List[int] = field(default_factory=list)   # 0 = initial model
    export_max_samples: int = 2000
    eval_max_samples: int = 2000
    eval_mode: str = "auto"         # auto | logits | centroid


@dataclass
class GridSpec:
    beta: List[float] = field(default_factory=lambda: [0.5, 1.0])
    m1: List[float] = field(default_factory=lambda: [1.0, 2.0, 5.0])
    m2: List[float] = field(default_factory=lambda: [0.5, 1.0])
    use_ce: List[bool] = field(default_factory=lambda: [True, False])


@dataclass
class ExperimentConfig:
    seed: int = 0
    precision: str = "float64"      # float64 | float32
    workers: int = 1
    debug: bool = True
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    federation: FederationSpec = field(default_factory=FederationSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    grid: GridSpec = field(default_factory=GridSpec)

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def model_kind(self) -> str:
        if self.model.kind != "auto":
            return self.model.kind
        return "cnn" if self.dataset.kind.startswith("cifar") else "mlp"
