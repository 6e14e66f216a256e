"""
Training objectives with analytic gradients.

Metric losses work on non-normalized embeddings and take the batch mean of their
per-sample hinge values. The hinge subgradient at exactly zero is 0.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError

METHODS = ("fedavg", "fedquad", "tripletfl", "quadrupletfl", "supconfl")
ROLES = ("anchor", "positive", "neg1", "neg2")


@dataclass(frozen=True)
class QuadLossConfig:
    beta: float = 0.5
    m1: float = 1.0
    m2: float = 0.5
    squared_distance: bool = True
    # baselines
    margin: float = 1.0
    temperature: float = 0.1
    use_ce: bool = True

    def __post_init__(self):
        for key in ("beta", "m1", "m2", "margin"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0", key=f"loss.{key}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0", key="loss.temperature")


@dataclass
class LossOutput:
    value: float
    grads: Dict[str, np.ndarray]
    components: Dict[str, float] = field(default_factory=dict)


def _aligned(*zs: np.ndarray):
    shape = zs[0].shape
    if len(shape) != 2:
        raise DataError(f"embeddings must be [B, D], got {list(shape)}")
    for z in zs[1:]:
        if z.shape != shape:
            raise DataError(f"embedding batches not aligned: {list(shape)} vs {list(z.shape)}")


def pair_distance(x: np.ndarray, y: np.ndarray, squared: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise distance and its gradient w.r.t. `x` (the gradient w.r.t. `y` is the negation)."""
    diff = x - y
    sq = np.einsum("ij,ij->i", diff, diff)
    if squared:
        return sq, 2.0 * diff
    d = np.sqrt(sq)
    nz = d > 0
    grad = np.zeros_like(diff)
    grad[nz] = diff[nz] / d[nz, None]
    return d, grad


def _hinge(t: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    active = t > 0
    if mask is not None:
        active &= mask
    return active


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> LossOutput:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise DataError(f"labels shape {labels.shape} does not match logits batch {b}")
    if b and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(b)
    value = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= b
    return LossOutput(value, {"logits": grad}, {"ce": value})


def quad_star(z_a, z_p, z_n1, z_n2, cfg: QuadLossConfig,
              mask: Optional[np.ndarray] = None) -> LossOutput:
    """mean_b [d(a,p) - d(a,n1) + m1]_+ + [d(a,p) - d(a,n2) + m2]_+

    `mask` (bool [B]) drops rows; dropped rows count as 0 in the mean.
    """
    _aligned(z_a, z_p, z_n1, z_n2)
    b = z_a.shape[0]
    sq = cfg.squared_distance
    d_ap, g_ap = pair_distance(z_a, z_p, sq)
    d_an1, g_an1 = pair_distance(z_a, z_n1, sq)
    d_an2, g_an2 = pair_distance(z_a, z_n2, sq)
    t1 = d_ap - d_an1 + cfg.m1
    t2 = d_ap - d_an2 + cfg.m2
    a1 = _hinge(t1, mask)
    a2 = _hinge(t2, mask)
    value = float((np.where(a1, t1, 0.0) + np.where(a2, t2, 0.0)).sum() / b)

    c_ap = ((a1.astype(z_a.dtype) + a2) / b)[:, None]
    c1 = (a1 / b)[:, None]
    c2 = (a2 / b)[:, None]
    grads = {
        "anchor": c_ap * g_ap - c1 * g_an1 - c2 * g_an2,
        "positive": -c_ap * g_ap,
        "neg1": c1 * g_an1,
        "neg2": c2 * g_an2,
    }
    return LossOutput(value, grads, {"quad_star": value})


def triplet_loss(z_a, z_p, z_n, margin: float, squared_distance: bool = True,
                 mask: Optional[np.ndarray] = None) -> LossOutput:
    _aligned(z_a, z_p, z_n)
    b = z_a.shape[0]
    d_ap, g_ap = pair_distance(z_a, z_p, squared_distance)
    d_an, g_an = pair_distance(z_a, z_n, squared_distance)
    t = d_ap - d_an + margin
    act = _hinge(t, mask)
    value = float(np.where(act, t, 0.0).sum() / b)
    c = (act / b)[:, None]
    grads = {"anchor": c * (g_ap - g_an), "positive": -c * g_ap, "neg1": c * g_an}
    return LossOutput(value, grads, {"triplet": value})


def quadruplet_traditional(z_a, z_p, z_n1, z_n2, m1: float, m2: float,
                           squared_distance: bool = True,
                           mask: Optional[np.ndarray] = None) -> LossOutput:
    """Triplet term plus the negative-pair term [d(a,p) - d(n1,n2) + m2]_+."""
    _aligned(z_a, z_p, z_n1, z_n2)
    b = z_a.shape[0]
    d_ap, g_ap = pair_distance(z_a, z_p, squared_distance)
    d_an1, g_an1 = pair_distance(z_a, z_n1, squared_distance)
    d_nn, g_nn = pair_distance(z_n1, z_n2, squared_distance)
    t1 = d_ap - d_an1 + m1
    t2 = d_ap - d_nn + m2
    a1 = _hinge(t1, mask)
    a2 = _hinge(t2, mask)
    value = float((np.where(a1, t1, 0.0) + np.where(a2, t2, 0.0)).sum() / b)
    c_ap = ((a1.astype(z_a.dtype) + a2) / b)[:, None]
    c1 = (a1 / b)[:, None]
    c2 = (a2 / b)[:, None]
    grads = {
        "anchor": c_ap * g_ap - c1 * g_an1,
        "positive": -c_ap * g_ap,
        "neg1": c1 * g_an1 - c2 * g_nn,
        "neg2": c2 * g_nn,
    }
    return LossOutput(value, grads, {"quadruplet": value})


def supcon_loss(z: np.ndarray, labels: np.ndarray, temperature: float) -> LossOutput:
    """Supervised contrastive loss on internally L2-normalized rows.

    Anchors without any positive are skipped; the value is the mean over counted anchors.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be > 0", key="loss.temperature")
    z = np.asarray(z)
    labels = np.asarray(labels)
    b = z.shape[0]
    if b < 2:
        raise DataError("supervised contrastive loss needs at least 2 samples")
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    norms = np.maximum(norms, 1e-12)
    u = z / norms[:, None]
    s = u @ u.T / temperature
    eye = np.eye(b, dtype=bool)
    masked = np.where(eye, -np.inf, s)
    mx = masked.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(masked - mx).sum(axis=1, keepdims=True))
    log_prob = s - lse
    pos = (labels[:, None] == labels[None, :]) & ~eye
    npos = pos.sum(axis=1)
    counted = npos > 0
    n_anchors = int(counted.sum())
    if n_anchors == 0:
        return LossOutput(0.0, {"z": np.zeros_like(z)}, {"supcon": 0.0})

    safe_npos = np.maximum(npos, 1)
    per_anchor = -np.where(pos, log_prob, 0.0).sum(axis=1) / safe_npos
    value = float(per_anchor[counted].sum() / n_anchors)

    prob = np.where(eye, 0.0, np.exp(log_prob))
    g_s = (prob - pos / safe_npos[:, None]) * (counted[:, None] / n_anchors)
    g_u = (g_s + g_s.T) @ u / temperature
    g_z = (g_u - u * np.einsum("ij,ij->i", u, g_u)[:, None]) / norms[:, None]
    return LossOutput(value, {"z": g_z}, {"supcon": value})


def combined_loss(logits, labels, z_a, z_p, z_n1, z_n2, cfg: QuadLossConfig,
                  mask: Optional[np.ndarray] = None) -> LossOutput:
    """ce + β·quad* (β·quad* alone when cfg.use_ce is off).

    The anchor embedding gradient carries only the quad* part; the CE part reaches the
    anchor path through the head via grads["logits"].
    """
    quad = quad_star(z_a, z_p, z_n1, z_n2, cfg, mask)
    grads = {role: cfg.beta * g for role, g in quad.grads.items()}
    components = {"quad_star": quad.value}
    if cfg.use_ce:
        ce = cross_entropy(logits, labels)
        grads["logits"] = ce.grads["logits"]
        components["ce"] = ce.value
        value = ce.value + cfg.beta * quad.value
    else:
        grads["logits"] = np.zeros_like(logits)
        components["ce"] = 0.0
        value = cfg.beta * quad.value
    return LossOutput(value, grads, components)


def required_roles(method: str, cfg: QuadLossConfig) -> Tuple[str, ...]:
    """Which quadruplet members must be forwarded for `method`."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}",
                          key="loss.method")
    if method == "fedavg" or (cfg.beta == 0 and cfg.use_ce):
        return ("anchor",)
    return {
        "fedquad": ROLES,
        "quadrupletfl": ROLES,
        "tripletfl": ("anchor", "positive", "neg1"),
        "supconfl": ("anchor", "positive"),
    }[method]


def local_objective(method: str, cfg: QuadLossConfig, logits: np.ndarray, labels: np.ndarray,
                    emb: Dict[str, np.ndarray], mask: Optional[np.ndarray] = None) -> LossOutput:
    """Loss for one batch of `method`.

    `logits` are the anchor logits, `emb` holds the embeddings of `required_roles`;
    `mask` flags rows usable by the negative-based terms.
    Returned grads: "logits" (anchor logits) and one entry per forwarded role.
    components: "ce", "metric", "total".
    """
    roles = required_roles(method, cfg)
    if method == "fedavg" and not cfg.use_ce:
        raise ConfigError("fedavg without cross-entropy has nothing to train", key="loss.use_ce")

    if cfg.use_ce:
        ce = cross_entropy(logits, labels)
        ce_value, g_logits = ce.value, ce.grads["logits"]
    else:
        ce_value, g_logits = 0.0, np.zeros_like(logits)

    grads = {"logits": g_logits}
    for role in roles:
        grads[role] = np.zeros_like(emb[role])
    metric_value = 0.0
    if len(roles) > 1:
        za = emb["anchor"]
        if method == "fedquad":
            out = quad_star(za, emb["positive"], emb["neg1"], emb["neg2"], cfg, mask)
        elif method == "quadrupletfl":
            out = quadruplet_traditional(za, emb["positive"], emb["neg1"], emb["neg2"],
                                         cfg.m1, cfg.m2, cfg.squared_distance, mask)
        elif method == "tripletfl":
            out = triplet_loss(za, emb["positive"], emb["neg1"], cfg.margin,
                               cfg.squared_distance, mask)
        else:
            both = np.concatenate([za, emb["positive"]], axis=0)
            out = supcon_loss(both, np.concatenate([labels, labels]), cfg.temperature)
            b = za.shape[0]
            out.grads = {"anchor": out.grads["z"][:b], "positive": out.grads["z"][b:]}
        metric_value = out.value
        for role, g in out.grads.items():
            grads[role] = cfg.beta * g

    total = ce_value + cfg.beta * metric_value
    return LossOutput(total, grads, {"ce": ce_value, "metric": metric_value, "total": total})
