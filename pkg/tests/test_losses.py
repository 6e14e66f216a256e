import math

import numpy as np
import pytest

from fedquad.errors import ConfigError, DataError
from fedquad.gradcheck import numeric_grad, rel_error
from fedquad.losses import (ROLES, QuadLossConfig, combined_loss, cross_entropy, local_objective,
                            quad_star, quadruplet_traditional, required_roles, supcon_loss,
                            triplet_loss)

BATCHES = 100


def dist(x, y, squared):
    d = float(np.sum((x - y) ** 2))
    return d if squared else math.sqrt(d)


def brute_quad_star(a, p, n1, n2, m1, m2, squared, mask=None):
    total = 0.0
    for i in range(a.shape[0]):
        if mask is not None and not mask[i]:
            continue
        dap = dist(a[i], p[i], squared)
        total += max(dap - dist(a[i], n1[i], squared) + m1, 0.0)
        total += max(dap - dist(a[i], n2[i], squared) + m2, 0.0)
    return total / a.shape[0]


def brute_triplet(a, p, n, margin, squared):
    return sum(max(dist(a[i], p[i], squared) - dist(a[i], n[i], squared) + margin, 0.0)
               for i in range(a.shape[0])) / a.shape[0]


def brute_quadruplet(a, p, n1, n2, m1, m2, squared):
    total = 0.0
    for i in range(a.shape[0]):
        dap = dist(a[i], p[i], squared)
        total += max(dap - dist(a[i], n1[i], squared) + m1, 0.0)
        total += max(dap - dist(n1[i], n2[i], squared) + m2, 0.0)
    return total / a.shape[0]


def brute_ce(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        total += -(row[y] - math.log(sum(math.exp(v) for v in row)))
    return total / len(labels)


def brute_supcon(z, labels, tau):
    u = [v / np.linalg.norm(v) for v in z]
    total, counted = 0.0, 0
    for i in range(len(u)):
        pos = [j for j in range(len(u)) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(float(u[i] @ u[k]) / tau) for k in range(len(u)) if k != i)
        total += -sum(float(u[i] @ u[j]) / tau - math.log(denom) for j in pos) / len(pos)
        counted += 1
    return total / counted if counted else 0.0


def batch(rng, b=None, d=None):
    b = b or int(rng.integers(1, 9))
    d = d or int(rng.integers(1, 6))
    return [rng.standard_normal((b, d)) for _ in range(4)]


@pytest.mark.parametrize("squared", [True, False])
def test_quad_star_matches_brute_force(squared):
    rng = np.random.default_rng(1)
    for _ in range(BATCHES):
        a, p, n1, n2 = batch(rng)
        m1, m2 = rng.uniform(0, 2), rng.uniform(0, 2)
        cfg = QuadLossConfig(m1=m1, m2=m2, squared_distance=squared)
        mask = rng.random(a.shape[0]) > 0.3
        assert abs(quad_star(a, p, n1, n2, cfg).value
                   - brute_quad_star(a, p, n1, n2, m1, m2, squared)) <= 1e-10
        assert abs(quad_star(a, p, n1, n2, cfg, mask).value
                   - brute_quad_star(a, p, n1, n2, m1, m2, squared, mask)) <= 1e-10


def test_triplet_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(BATCHES):
        a, p, n, _ = batch(rng)
        margin = rng.uniform(0, 2)
        squared = bool(rng.integers(0, 2))
        assert abs(triplet_loss(a, p, n, margin, squared).value
                   - brute_triplet(a, p, n, margin, squared)) <= 1e-10


def test_traditional_quadruplet_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(BATCHES):
        a, p, n1, n2 = batch(rng)
        m1, m2 = rng.uniform(0, 2), rng.uniform(0, 2)
        squared = bool(rng.integers(0, 2))
        out = quadruplet_traditional(a, p, n1, n2, m1, m2, squared)
        assert abs(out.value - brute_quadruplet(a, p, n1, n2, m1, m2, squared)) <= 1e-10


def test_cross_entropy_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(BATCHES):
        b, k = int(rng.integers(1, 9)), int(rng.integers(2, 7))
        logits = 3 * rng.standard_normal((b, k))
        labels = rng.integers(0, k, size=b)
        assert abs(cross_entropy(logits, labels).value - brute_ce(logits, labels)) <= 1e-10


def test_supcon_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(BATCHES):
        b, d = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        z = rng.standard_normal((b, d))
        labels = rng.integers(0, 3, size=b)
        tau = rng.uniform(0.1, 1.0)
        assert abs(supcon_loss(z, labels, tau).value - brute_supcon(z, labels, tau)) <= 1e-10


def hinge_args(a, p, n1, n2, cfg):
    sq = lambda x, y: np.sum((x - y) ** 2, axis=1)
    dap = sq(a, p)
    return np.concatenate([dap - sq(a, n1) + cfg.m1, dap - sq(a, n2) + cfg.m2])


@pytest.mark.parametrize("seed", range(20))
def test_quad_star_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    cfg = QuadLossConfig(m1=1.0, m2=0.5)
    zs = batch(rng, b=int(rng.integers(2, 6)), d=int(rng.integers(2, 5)))
    if np.min(np.abs(hinge_args(*zs, cfg))) < 1e-3:
        pytest.skip("hinge kink too close")
    out = quad_star(*zs, cfg)
    for role, z in zip(ROLES, zs):
        num = numeric_grad(lambda: quad_star(*zs, cfg).value, z, h=1e-6)
        assert rel_error(out.grads[role], num) <= 1e-6, role


@pytest.mark.parametrize("seed", range(20))
def test_unsquared_triplet_and_quadruplet_gradients(seed):
    rng = np.random.default_rng(200 + seed)
    a, p, n1, n2 = batch(rng, b=4, d=3)
    tri = triplet_loss(a, p, n1, 0.3, squared_distance=False)
    quad = quadruplet_traditional(a, p, n1, n2, 0.3, 0.2, squared_distance=False)
    d = lambda x, y: np.sqrt(np.sum((x - y) ** 2, axis=1))
    args = np.concatenate([d(a, p) - d(a, n1) + 0.3, d(a, p) - d(n1, n2) + 0.2])
    if np.min(np.abs(args)) < 1e-3:
        pytest.skip("hinge kink too close")
    for role, z in zip(("anchor", "positive", "neg1"), (a, p, n1)):
        num = numeric_grad(lambda: triplet_loss(a, p, n1, 0.3, squared_distance=False).value, z,
                           h=1e-6)
        assert rel_error(tri.grads[role], num) <= 1e-6, role
    for role, z in zip(ROLES, (a, p, n1, n2)):
        num = numeric_grad(lambda: quadruplet_traditional(
            a, p, n1, n2, 0.3, 0.2, squared_distance=False).value, z, h=1e-6)
        assert rel_error(quad.grads[role], num) <= 1e-6, role


@pytest.mark.parametrize("seed", range(20))
def test_cross_entropy_and_supcon_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, size=5)
    ce = cross_entropy(logits, labels)
    num = numeric_grad(lambda: cross_entropy(logits, labels).value, logits, h=1e-6)
    assert rel_error(ce.grads["logits"], num) <= 1e-6
    z = rng.standard_normal((6, 3))
    sl = np.array([0, 0, 1, 1, 2, 2])
    sc = supcon_loss(z, sl, 0.5)
    num = numeric_grad(lambda: supcon_loss(z, sl, 0.5).value, z, h=1e-6)
    assert rel_error(sc.grads["z"], num) <= 1e-6


def test_quad_star_hand_values():
    cfg = QuadLossConfig(m1=1.0, m2=0.5)
    a = np.array([[0.0, 0.0]])
    far = quad_star(a, np.array([[1.0, 0.0]]), np.array([[2.0, 0.0]]), np.array([[0.0, 3.0]]), cfg)
    assert far.value == 0.0
    assert all(not g.any() for g in far.grads.values())
    near = quad_star(a, np.array([[2.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), cfg)
    assert near.value == pytest.approx(7.5)


def test_masked_rows_count_in_denominator():
    cfg = QuadLossConfig(m1=1.0, m2=0.5)
    z = np.zeros((2, 2))
    out = quad_star(z, z, z, z, cfg, mask=np.array([True, False]))
    # one active row contributes m1 + m2 = 1.5, divided by B = 2
    assert out.value == pytest.approx(0.75)
    assert not out.grads["anchor"][1].any()


def test_supcon_is_scale_invariant(rng):
    z = rng.standard_normal((6, 4))
    labels = np.array([0, 1, 0, 1, 2, 2])
    assert supcon_loss(z, labels, 0.1).value == pytest.approx(supcon_loss(3 * z, labels, 0.1).value)


def test_supcon_without_positives_is_zero(rng):
    out = supcon_loss(rng.standard_normal((3, 2)), np.array([0, 1, 2]), 0.1)
    assert out.value == 0.0 and not out.grads["z"].any()


def test_input_validation(rng):
    with pytest.raises(DataError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(DataError):
        supcon_loss(np.zeros((1, 2)), np.array([0]), 0.1)
    with pytest.raises(ConfigError):
        supcon_loss(np.ones((2, 2)), np.array([0, 0]), 0.0)
    with pytest.raises(DataError):
        quad_star(*(np.zeros((2, 3)),) * 3, np.zeros((3, 3)), QuadLossConfig())
    with pytest.raises(ConfigError):
        QuadLossConfig(m1=-1.0)


def test_required_roles():
    full = QuadLossConfig()
    assert required_roles("fedavg", full) == ("anchor",)
    assert required_roles("fedquad", full) == ROLES
    assert required_roles("fedquad", QuadLossConfig(beta=0.0)) == ("anchor",)
    assert required_roles("fedquad", QuadLossConfig(beta=0.0, use_ce=False)) == ROLES
    assert required_roles("tripletfl", full) == ("anchor", "positive", "neg1")
    assert required_roles("supconfl", full) == ("anchor", "positive")
    with pytest.raises(ConfigError):
        required_roles("fedprox", full)


def test_local_objective_agrees_with_combined_loss(rng):
    cfg = QuadLossConfig(beta=0.7)
    a, p, n1, n2 = batch(rng, b=6, d=4)
    logits = rng.standard_normal((6, 3))
    labels = rng.integers(0, 3, size=6)
    emb = dict(zip(ROLES, (a, p, n1, n2)))
    out = local_objective("fedquad", cfg, logits, labels, emb)
    ref = combined_loss(logits, labels, a, p, n1, n2, cfg)
    assert out.value == pytest.approx(ref.value, abs=1e-12)
    for key in ("logits", *ROLES):
        np.testing.assert_allclose(out.grads[key], ref.grads[key], atol=1e-12)
    assert out.components["total"] == pytest.approx(
        out.components["ce"] + 0.7 * out.components["metric"])


def test_local_objective_metric_only(rng):
    cfg = QuadLossConfig(beta=1.0, use_ce=False)
    zs = batch(rng, b=4, d=3)
    logits = rng.standard_normal((4, 2))
    out = local_objective("quadrupletfl", cfg, logits, np.array([0, 1, 0, 1]),
                          dict(zip(ROLES, zs)))
    assert out.components["ce"] == 0.0
    assert not out.grads["logits"].any()
    assert out.value == pytest.approx(out.components["metric"])


def test_local_objective_supcon_splits_views(rng):
    cfg = QuadLossConfig(beta=1.0, temperature=0.2)
    a, p = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    labels = np.array([0, 1, 2, 0])
    out = local_objective("supconfl", cfg, rng.standard_normal((4, 3)), labels,
                          {"anchor": a, "positive": p})
    ref = supcon_loss(np.concatenate([a, p]), np.concatenate([labels, labels]), 0.2)
    assert out.components["metric"] == pytest.approx(ref.value)
    np.testing.assert_allclose(out.grads["positive"], ref.grads["z"][4:])


def test_quad_star_unsquared_hand_value():
    cfg = QuadLossConfig(m1=1.0, m2=0.5, squared_distance=False)
    out = quad_star(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[1.5, 0.0]]),
                    np.array([[3.0, 0.0]]), cfg)
    assert out.value == pytest.approx(0.5)


def test_triplet_scalar_hand_value():
    out = triplet_loss(np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]), 1.0,
                       squared_distance=False)
    assert out.value == pytest.approx(1.0)


@pytest.mark.parametrize("squared", [True, False])
def test_triplet_is_quad_star_without_second_negative(rng, squared):
    a, p, n1, _ = batch(rng, b=8, d=3)
    far = a + 1e3
    cfg = QuadLossConfig(m1=0.8, m2=0.0, squared_distance=squared)
    quad = quad_star(a, p, n1, far, cfg)
    tri = triplet_loss(a, p, n1, 0.8, squared_distance=squared)
    assert quad.value == pytest.approx(tri.value, abs=1e-12)
    for role in ("anchor", "positive", "neg1"):
        np.testing.assert_allclose(quad.grads[role], tri.grads[role], atol=1e-12)
    assert not quad.grads["neg2"].any()


@pytest.mark.parametrize("squared", [True, False])
def test_quad_star_invariant_under_rotation_and_translation(rng, squared):
    cfg = QuadLossConfig(m1=1.0, m2=0.5, squared_distance=squared)
    zs = batch(rng, b=16, d=4)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    shift = 5.0 * rng.standard_normal(4)
    moved = [z @ q.T + shift for z in zs]
    assert quad_star(*moved, cfg).value == pytest.approx(quad_star(*zs, cfg).value, abs=1e-9)


@pytest.mark.parametrize("squared", [True, False])
def test_quad_star_grows_with_anchor_positive_distance(rng, squared):
    cfg = QuadLossConfig(m1=1.0, m2=0.5, squared_distance=squared)
    a, _, n1, n2 = batch(rng, b=6, d=3)
    direction = rng.standard_normal((6, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    values = [quad_star(a, a + s * direction, n1, n2, cfg).value for s in np.linspace(0, 4, 41)]
    assert all(later >= earlier for earlier, later in zip(values, values[1:]))
    assert values[-1] > values[0]


def test_zero_beta_is_bitwise_cross_entropy(rng):
    a, p, n1, n2 = batch(rng, b=6, d=4)
    logits = rng.standard_normal((6, 5))
    labels = rng.integers(0, 5, size=6)
    out = combined_loss(logits, labels, a, p, n1, n2, QuadLossConfig(beta=0.0))
    ce = cross_entropy(logits, labels)
    assert out.value == ce.value
    np.testing.assert_array_equal(out.grads["logits"], ce.grads["logits"])
    assert all(not out.grads[role].any() for role in ROLES)
