"""Shared oracles and builders used by the unit and acceptance tests.

Everything here is deliberately independent of the implementation paths it
checks: finite differences for gradients, exhaustive enumeration for
segmentations and matchings, direct summation for kernel costs.
"""

from __future__ import annotations

import numpy as np

import paramcpd as pc
from paramcpd import npe
from paramcpd.cpd import KernelCostModel


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_grad(model, feats, thetas, h=1e-5):
    base = model.weights
    grad = np.empty_like(base)
    for i in range(len(base)):
        wp = base.copy()
        wp[i] += h
        wm = base.copy()
        wm[i] -= h
        mp = npe.PosteriorModel(model.config, wp, model.norm_stats, model.prior,
                                model.theta_loc, model.theta_scale)
        mm = npe.PosteriorModel(model.config, wm, model.norm_stats, model.prior,
                                model.theta_loc, model.theta_scale)
        grad[i] = (npe.nll_loss(mp, feats, thetas) - npe.nll_loss(mm, feats, thetas)) / (2 * h)
    return grad


def max_rel_err(a, b, floor=1e-4):
    """Relative error with a scale floor (absolute ~1e-8 bound for tiny coords)."""
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def random_mdn_case(rng):
    """Small random (model, features, thetas) instance for gradient checks."""
    input_dim = int(rng.integers(4, 20))
    depth = int(rng.integers(0, 3))
    hidden = tuple(int(rng.integers(4, 10)) for _ in range(depth))
    k = int(rng.integers(1, 5))
    config = npe.MdnConfig(input_dim=input_dim, hidden_sizes=hidden, n_components=k)
    weights = npe.init_weights(config, rng) * rng.uniform(0.5, 1.5)
    stats = pc.NormStats(np.zeros(4), np.ones(4))
    model = npe.PosteriorModel(
        config, weights, stats, pc.DEFAULT_PRIOR,
        theta_loc=rng.normal(0, 1, 3), theta_scale=rng.uniform(0.5, 2.0, 3),
    )
    batch = int(rng.integers(1, 7))
    feats = rng.standard_normal((batch, input_dim))
    thetas = model.theta_loc + model.theta_scale * rng.standard_normal((batch, 3))
    return model, feats, thetas


def head_bias_model(config, logits, mu, s_pre, theta_loc=None, theta_scale=None):
    """Zero-weight model whose mixture comes entirely from the head biases,
    hence is independent of the input."""
    k, d = config.n_components, config.theta_dim
    w = np.zeros(npe.n_weights(config))
    tail = np.concatenate([
        np.asarray(logits, float).reshape(k),
        np.asarray(mu, float).reshape(k * d),
        np.asarray(s_pre, float).reshape(k * d),
    ])
    w[-config.head_dim:] = tail
    stats = pc.NormStats(np.zeros(4), np.ones(4))
    return npe.PosteriorModel(
        config, w, stats, pc.DEFAULT_PRIOR,
        theta_loc=np.zeros(d) if theta_loc is None else np.asarray(theta_loc, float),
        theta_scale=np.ones(d) if theta_scale is None else np.asarray(theta_scale, float),
    )


# ---------------------------------------------------------------------------
# segmentation oracles


def brute_force_segmentation(series, penalty, min_size, gamma):
    """Enumerate every breakpoint set respecting min_size; return the best
    (cost, count, breakpoints) under the shared tie-break, or None if the
    series is shorter than min_size."""
    model = KernelCostModel(series, gamma)
    t = len(model)
    cost = np.zeros((t, t + 1))
    for b in range(1, t + 1):
        starts = np.arange(b)
        cost[:b, b] = model.segment_costs(starts, b)
    best = None

    def visit(bps):
        nonlocal best
        bounds = [0, *bps, t]
        acc = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            acc = acc + cost[a, b] + (penalty if a > 0 else 0.0)
        key = (acc, len(bps), tuple(bps))
        if best is None or key < best:
            best = key

    def rec(start, bps):
        if t - start >= min_size:
            visit(bps)
        for b in range(start + min_size, t - min_size + 1):
            rec(b, bps + [b])

    rec(0, [])
    return best


# ---------------------------------------------------------------------------
# matching oracles


def max_matching_size(predictions, truths, delta):
    """Maximum one-to-one matching cardinality for |p - t| <= delta.

    Classic sorted two-pointer greedy (each truth takes the earliest unmatched
    prediction within range), optimal for interval bipartite graphs; validated
    against exhaustive enumeration in the tests.
    """
    preds = sorted(predictions)
    i = 0
    count = 0
    for t in sorted(truths):
        while i < len(preds) and preds[i] < t - delta:
            i += 1
        if i < len(preds) and abs(preds[i] - t) <= delta:
            count += 1
            i += 1
    return count


def exhaustive_max_matching(predictions, truths, delta):
    """Brute-force maximum matching cardinality (small instances only)."""
    edges = [
        (i, j)
        for i, p in enumerate(predictions)
        for j, t in enumerate(truths)
        if abs(p - t) <= delta
    ]

    def rec(idx, used_p, used_t):
        if idx == len(edges):
            return 0
        best = rec(idx + 1, used_p, used_t)
        i, j = edges[idx]
        if i not in used_p and j not in used_t:
            best = max(best, 1 + rec(idx + 1, used_p | {i}, used_t | {j}))
        return best

    return rec(0, frozenset(), frozenset())


def spaced_instance(rng, t_len=2000, delta_max=40, max_truths=8, max_preds=14):
    """Random (predictions, truths) with truths more than 2*delta_max apart,
    mirroring the corpus geometry (segment length >> tolerance)."""
    gap = 2 * delta_max + 1
    n_truth = int(rng.integers(0, max_truths))
    truths = np.sort(rng.choice(np.arange(0, t_len // gap), size=n_truth, replace=False)) * gap \
        + int(rng.integers(0, gap))
    truths = truths[truths < t_len]
    n_pred = int(rng.integers(0, max_preds))
    preds = np.sort(rng.integers(0, t_len, size=n_pred))
    return [int(p) for p in preds], [int(t) for t in truths]


# ---------------------------------------------------------------------------
# pipeline probe model


def last_value_probe_model(w):
    """No-hidden-layer MDN whose first parameter dimension tracks the (raw,
    standardized) last x value of the window; K=1, tight stds. Realizes crisp
    parameter steps for pipeline tests without training."""
    config = npe.MdnConfig(input_dim=4 * w, hidden_sizes=(), n_components=1)
    weights = np.zeros(npe.n_weights(config))
    # head layout for the single linear layer: W (input, 7) then bias (7)
    head = weights[: 4 * w * 7].reshape(4 * w, 7)
    head[w - 1, 1] = 1.0  # mu dim 0 <- last sample of channel 0 (x)
    bias = weights[4 * w * 7 :]
    bias[4:7] = -5.0  # s_pre: tight stds exp(-5)
    stats = pc.NormStats(np.zeros(4), np.ones(4))
    return npe.PosteriorModel(
        config, weights, stats, pc.DEFAULT_PRIOR,
        theta_loc=np.zeros(3), theta_scale=np.ones(3),
    )
