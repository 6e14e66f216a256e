
from collections.abc import Mapping
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericError, StateError
from .layers import (AdaptiveAvgPool, BatchNorm2d, Conv2d, Dense, Layer, MaxPool2x2,
                     ReLU)


class ModelParams(Mapping):
    """Ordered, read-only snapshot of every named tensor of a model (buffers included).

    The unit of broadcast and aggregation; safe to share across threads.
    """

    def __init__(self, entries: Iterable[Tuple[str, np.ndarray]], step_count: int = 0):
        self._entries: Dict[str, np.ndarray] = {}
        for name, arr in entries:
            a = np.array(arr, copy=True)
            a.flags.writeable = False
            self._entries[name] = a
        self.step_count = int(step_count)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(k, v.shape) for k, v in self._entries.items()]

    def same_layout(self, other: "ModelParams") -> bool:
        return self.shapes == other.shapes

    def bitwise_equal(self, other: "ModelParams") -> bool:
        if not self.same_layout(other):
            return False
        return all(np.array_equal(self[k], other[k]) and self[k].dtype == other[k].dtype
                   for k in self)

    def __repr__(self):
        return f"ModelParams({len(self)} entries, step_count={self.step_count})"


class EncoderModel:
    """Encoder layers producing embeddings, plus a dense head producing logits."""

    def __init__(self, layers: Sequence[Layer], head: Dense, input_shape: Tuple[int, ...],
                 embedding_dim: int, num_classes: int, debug: bool = True):
        self.layers = list(layers)
        self.head = head
        self.input_shape = tuple(input_shape)
        self.embedding_dim = int(embedding_dim)
        self.num_classes = int(num_classes)
        self.debug = debug
        self.step_count = 0

    @property
    def all_layers(self) -> List[Layer]:
        return self.layers + [self.head]

    @property
    def dtype(self):
        return self.head.params["weight"].dtype

    def named_params(self) -> Iterator[Tuple[str, np.ndarray]]:
        for layer in self.all_layers:
            for k, v in layer.params.items():
                yield f"{layer.name}.{k}", v

    def _named_entries(self) -> Iterator[Tuple[str, np.ndarray]]:
        for layer in self.all_layers:
            for k, v in layer.params.items():
                yield f"{layer.name}.{k}", v
            for k, v in layer.buffers.items():
                yield f"{layer.name}.{k}", v

    def state(self) -> ModelParams:
        return ModelParams(self._named_entries(), step_count=self.step_count)

    def load(self, params: ModelParams):
        expected = [(k, v.shape) for k, v in self._named_entries()]
        if expected != params.shapes:
            raise ConfigError("parameter layout does not match this architecture")
        for layer in self.all_layers:
            for store in (layer.params, layer.buffers):
                for k in store:
                    store[k] = np.array(params[f"{layer.name}.{k}"], dtype=self.dtype, copy=True)
            layer.clear_cache()
        self.zero_grad()
        self.step_count = params.step_count

    def param_arrays(self) -> Dict[str, np.ndarray]:
        """Live (writable) trainable arrays, keyed like ModelParams."""
        return dict(self.named_params())

    def set_track_running_stats(self, flag: bool):
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                layer.track_running_stats = flag

    def zero_grad(self):
        for layer in self.all_layers:
            layer.zero_grad()

    def clear_caches(self):
        for layer in self.all_layers:
            layer.clear_cache()

    def _check(self, name: str, x: np.ndarray):
        if self.debug and not np.isfinite(x).all():
            raise NumericError(f"non-finite activation after layer '{name}'")

    def forward(self, batch: np.ndarray, training: bool) -> Tuple[np.ndarray, np.ndarray]:
        """Embeddings [B, embedding_dim] (not normalized) and logits [B, num_classes]."""
        batch = np.asarray(batch)
        if batch.ndim != len(self.input_shape) + 1 or tuple(batch.shape[1:]) != self.input_shape:
            raise ConfigError(f"batch shape {list(batch.shape)} does not match model input "
                              f"[B, {', '.join(map(str, self.input_shape))}]")
        if batch.shape[0] < 1:
            raise ConfigError("empty batch")
        x = batch.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training)
            self._check(layer.name, x)
        emb = x
        logits = self.head.forward(emb, training)
        self._check(self.head.name, logits)
        return emb, logits

    def backward(self, grad_embeddings: np.ndarray, grad_logits: Optional[np.ndarray] = None
                 ) -> Dict[str, np.ndarray]:
        """Reverse the most recent pending training pass.

        Returns the parameter gradients accumulated since the last `zero_grad`.
        """
        if self.head.pending == 0:
            raise StateError("backward called without a pending training forward pass")
        if grad_logits is None:
            grad_logits = np.zeros((grad_embeddings.shape[0], self.num_classes), dtype=self.dtype)
        g = grad_embeddings + self.head.backward(grad_logits)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return self.gradients()

    def gradients(self) -> Dict[str, np.ndarray]:
        out = {}
        for layer in self.all_layers:
            for k in layer.params:
                out[f"{layer.name}.{k}"] = layer.grads[k].copy()
        return out

    def __repr__(self):
        kinds = ", ".join(layer.kind for layer in self.layers)
        return f"EncoderModel([{kinds}] -> head {self.embedding_dim}->{self.num_classes})"


def build_conv_encoder(num_classes: int, seed: int, in_channels: int = 3, image_size: int = 32,
                        channels: Sequence[int] = (64, 128, 256), embedding_dim: int = 128,
                        dtype=np.float64, debug: bool = True) -> EncoderModel:
    """Three conv blocks (conv3x3 -> BN -> ReLU), 2x2 max pool after the first two,
    adaptive average pool after the third, then dense to the embedding."""
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2", key="num_classes")
    if len(channels) != 3:
        raise ConfigError("the conv encoder has exactly three blocks", key="model.channels")
    if image_size % 4:
        raise ConfigError("image size must be divisible by 4", key="image_size")
    rng = np.random.default_rng(seed)
    layers: List[Layer] = []
    prev = in_channels
    for i, ch in enumerate(channels, start=1):
        block = f"block{i}"
        layers += [
            Conv2d(f"{block}.conv", prev, ch, rng, kernel=3, padding=1, dtype=dtype),
            BatchNorm2d(f"{block}.bn", ch, dtype=dtype),
            ReLU(f"{block}.relu"),
            MaxPool2x2(f"{block}.pool") if i < 3 else AdaptiveAvgPool(f"{block}.pool"),
        ]
        prev = ch
    layers.append(Dense("embed", prev, embedding_dim, rng, dtype=dtype))
    head = Dense("head", embedding_dim, num_classes, rng, dtype=dtype)
    return EncoderModel(layers, head, (in_channels, image_size, image_size), embedding_dim,
                        num_classes, debug=debug)


def build_mlp_encoder(input_dim: int, hidden_dims: Sequence[int], embedding_dim: int,
                      num_classes: int, seed: int, dtype=np.float64,
                      debug: bool = True) -> EncoderModel:
    dims = [input_dim, *hidden_dims, embedding_dim, num_classes]
    if any(int(d) < 1 for d in dims):
        raise ConfigError("all MLP dimensions must be >= 1", key="model.hidden_dims")
    rng = np.random.default_rng(seed)
    layers: List[Layer] = []
    prev = input_dim
    for i, h in enumerate(hidden_dims, start=1):
        layers += [Dense(f"fc{i}", prev, h, rng, dtype=dtype), ReLU(f"fc{i}.relu")]
        prev = h
    layers.append(Dense("embed", prev, embedding_dim, rng, dtype=dtype))
    head = Dense("head", embedding_dim, num_classes, rng, dtype=dtype)
    return EncoderModel(layers, head, (input_dim,), embedding_dim, num_classes, debug=debug)
