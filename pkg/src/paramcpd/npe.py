"""Amortized posterior estimator: an MLP encoder over flattened window
features with a diagonal-Gaussian mixture head, trained by negative
log-likelihood with hand-written reverse-mode gradients.

Targets are standardized internally (per-dimension location/scale from the
training thetas) and every returned density is expressed in natural parameter
units, so `log_prob`, `sample_posterior` and `nll_loss` all agree with each
other by construction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormStats, PriorSpec, TrainingSet, as_generator
from .errors import DataError, TrainingError

_CKPT_MAGIC = b"PCPDMDN1"
_CKPT_VERSION = 1

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MdnConfig:
    input_dim: int
    hidden_sizes: tuple[int, ...] = (256, 256)
    n_components: int = 5
    theta_dim: int = 3
    activation: str = "tanh"
    std_floor: float = 1e-4

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.input_dim < 1 or self.theta_dim < 1:
            raise ValueError("input_dim and theta_dim must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.n_components * (1 + 2 * self.theta_dim)


def layer_shapes(config: MdnConfig) -> list[tuple[int, int]]:
    dims = [config.input_dim, *config.hidden_sizes, config.head_dim]
    return list(zip(dims[:-1], dims[1:]))


def n_weights(config: MdnConfig) -> int:
    return sum(fi * fo + fo for fi, fo in layer_shapes(config))


def init_weights(config: MdnConfig, seed) -> np.ndarray:
    """Fan-in-scaled normal weights, zero biases."""
    rng = as_generator(seed)
    parts = []
    for fi, fo in layer_shapes(config):
        parts.append(rng.standard_normal(fi * fo) / np.sqrt(fi))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


def _unpack(config: MdnConfig, weights: np.ndarray):
    out, off = [], 0
    for fi, fo in layer_shapes(config):
        w = weights[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = weights[off : off + fo]
        off += fo
        out.append((w, b))
    if off != len(weights):
        raise ValueError(f"weight vector has {len(weights)} entries, expected {off}")
    return out


@dataclass
class MixtureDensity:
    """Batched diagonal-Gaussian mixture in natural parameter units."""

    weights: np.ndarray  # (B, K) simplex rows
    means: np.ndarray  # (B, K, D)
    stds: np.ndarray  # (B, K, D)

    def log_prob(self, thetas: np.ndarray) -> np.ndarray:
        th = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        u = np.log(self.weights) + _component_logpdf(th, self.means, self.stds)
        return _logsumexp(u)

    def sample(self, m: int, seed) -> np.ndarray:
        """Ancestral sampling: component by weight, then diagonal Gaussian; (B, m, D)."""
        rng = as_generator(seed)
        b, k, d = self.means.shape
        cum = np.cumsum(self.weights, axis=1)
        u = rng.random((b, m))
        comp = np.minimum((u[:, :, None] >= cum[:, None, :]).sum(axis=2), k - 1)
        eps = rng.standard_normal((b, m, d))
        idx = comp[:, :, None, None]
        mu = np.take_along_axis(self.means[:, None, :, :], idx, axis=2)[:, :, 0, :]
        sd = np.take_along_axis(self.stds[:, None, :, :], idx, axis=2)[:, :, 0, :]
        return mu + sd * eps

    def marginal_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mixture mean and std per dimension, (B, D) each."""
        w = self.weights[:, :, None]
        mean = np.sum(w * self.means, axis=1)
        second = np.sum(w * (self.stds**2 + self.means**2), axis=1)
        return mean, np.sqrt(np.maximum(second - mean**2, 0.0))


def _component_logpdf(th, means, stds):
    # th (B, D) against (B, K, D) components -> (B, K)
    z = (th[:, None, :] - means) / stds
    return np.sum(-0.5 * z**2 - np.log(stds), axis=2) - 0.5 * means.shape[2] * _LOG_2PI


def _logsumexp(u):
    m = np.max(u, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(u - m), axis=1, keepdims=True)))[:, 0]


@dataclass
class PosteriorModel:
    """Trained estimator: encoder weights, feature stats and target scaling."""

    config: MdnConfig
    weights: np.ndarray
    norm_stats: NormStats
    prior: PriorSpec
    theta_loc: np.ndarray  # (D,)
    theta_scale: np.ndarray  # (D,)
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.theta_loc = np.asarray(self.theta_loc, dtype=np.float64).reshape(-1)
        self.theta_scale = np.asarray(self.theta_scale, dtype=np.float64).reshape(-1)
        if len(self.weights) != n_weights(self.config):
            raise DataError(
                f"weight vector length {len(self.weights)} does not match config "
                f"({n_weights(self.config)} expected)"
            )


def _as_feature_matrix(config: MdnConfig, features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    elif f.ndim == 2 and f.shape == (4, config.input_dim // 4):
        f = f.reshape(1, -1)
    elif f.ndim == 3:
        f = f.reshape(f.shape[0], -1)
    if f.ndim != 2 or f.shape[1] != config.input_dim:
        raise ValueError(f"features with shape {np.shape(features)} do not match input_dim={config.input_dim}")
    return f


def _forward_core(config: MdnConfig, weights: np.ndarray, x: np.ndarray):
    layers = _unpack(config, weights)
    acts = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
        acts.append(h)
    wh, bh = layers[-1]
    out = h @ wh + bh
    k, d = config.n_components, config.theta_dim
    logits = out[:, :k]
    mu_z = out[:, k : k + k * d].reshape(-1, k, d)
    s_pre = out[:, k + k * d :].reshape(-1, k, d)
    return logits, mu_z, s_pre, acts, layers


def _mixture_from_core(config, logits, mu_z, s_pre, theta_loc, theta_scale):
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_pi = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    pi = np.exp(log_pi)
    means = theta_loc + theta_scale * mu_z
    std_raw = theta_scale * np.exp(s_pre)
    stds = np.maximum(std_raw, config.std_floor)
    return pi, log_pi, means, stds, std_raw


def forward(model: PosteriorModel, features) -> MixtureDensity:
    """Deterministic forward pass; mixture weights via softmax, stds via a
    positive link floored at config.std_floor."""
    x = _as_feature_matrix(model.config, features)
    with np.errstate(over="ignore"):
        logits, mu_z, s_pre, _, _ = _forward_core(model.config, model.weights, x)
        pi, _, means, stds, _ = _mixture_from_core(
            model.config, logits, mu_z, s_pre, model.theta_loc, model.theta_scale
        )
    return MixtureDensity(pi, means, stds)


def log_prob(model: PosteriorModel, features, thetas) -> np.ndarray:
    """Log posterior density at thetas; equals -nll_loss on a singleton batch."""
    return forward(model, features).log_prob(thetas)


def nll_loss(model: PosteriorModel, features, thetas) -> float:
    """Mean negative log mixture density over the batch (stable log-sum-exp)."""
    lp = log_prob(model, features, thetas)
    loss = -float(np.mean(lp))
    if not np.isfinite(loss):
        raise TrainingError("non-finite negative log-likelihood")
    return loss


def nll_and_grad(model: PosteriorModel, features, thetas) -> tuple[float, np.ndarray]:
    """Loss plus its exact analytic gradient, laid out like the weight vector."""
    config = model.config
    x = _as_feature_matrix(config, features)
    th = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    b = len(x)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        logits, mu_z, s_pre, acts, layers = _forward_core(config, model.weights, x)
        pi, log_pi, means, stds, std_raw = _mixture_from_core(
            config, logits, mu_z, s_pre, model.theta_loc, model.theta_scale
        )
        u = log_pi + _component_logpdf(th, means, stds)
        logq = _logsumexp(u)
    loss = -float(np.mean(logq))
    if not np.isfinite(loss):
        raise TrainingError("non-finite negative log-likelihood")

    # responsibilities and head gradients (of the mean NLL)
    r = np.exp(u - logq[:, None])
    d_logits = (pi - r) / b
    diff = th[:, None, :] - means
    d_means = -(r[:, :, None] * diff / stds**2) / b
    d_stds = -(r[:, :, None] * (diff**2 / stds**3 - 1.0 / stds)) / b
    d_mu_z = d_means * model.theta_scale
    d_s_pre = d_stds * np.where(std_raw > config.std_floor, std_raw, 0.0)

    k, d = config.n_components, config.theta_dim
    d_out = np.concatenate(
        [d_logits, d_mu_z.reshape(b, k * d), d_s_pre.reshape(b, k * d)], axis=1
    )

    grads = [None] * len(layers)
    wh, _ = layers[-1]
    grads[-1] = (acts[-1].T @ d_out, d_out.sum(axis=0))
    gh = d_out @ wh.T
    for li in range(len(layers) - 2, -1, -1):
        ga = gh * (1.0 - acts[li + 1] ** 2)
        grads[li] = (acts[li].T @ ga, ga.sum(axis=0))
        gh = ga @ layers[li][0].T

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def grad_nll(model: PosteriorModel, features, thetas) -> np.ndarray:
    return nll_and_grad(model, features, thetas)[1]


def sample_posterior(model: PosteriorModel, features, m: int, seed) -> np.ndarray:
    """m posterior draws per window, (B, m, D); seeded and reproducible."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return forward(model, features).sample(m, seed)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class OptimizerParams:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def train(
    training_set: TrainingSet,
    config: MdnConfig | None = None,
    optimizer: OptimizerParams = OptimizerParams(),
    seed: int = 0,
) -> PosteriorModel:
    """Mini-batch NLL minimization with bias-corrected first/second-moment
    adaptive steps; returns the best-validation-NLL checkpoint (the initial
    weights count as a candidate, so best val NLL <= initial val NLL).

    Training history is stored in training_meta["history"] as
    [epoch, train_nll, val_nll] rows, epoch 0 being the pre-training state.
    """
    if training_set.n < 1:
        raise ValueError("training set is empty")
    if config is None:
        config = MdnConfig(input_dim=4 * training_set.w)
    feats = training_set.features()
    if feats.shape[1] != config.input_dim:
        raise ValueError(
            f"training windows ({feats.shape[1]} wide) do not match config input_dim={config.input_dim}"
        )
    thetas = np.asarray(training_set.thetas, dtype=np.float64)
    theta_loc = thetas.mean(axis=0)
    theta_scale = thetas.std(axis=0)

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    n = training_set.n
    n_val = int(round(optimizer.val_fraction * n))
    perm = rng.permutation(n)
    if 0 < n_val < n:
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
    else:
        val_idx, tr_idx = perm, perm  # too small to split: validate on train

    weights = init_weights(config, rng)
    model = PosteriorModel(
        config=config, weights=weights, norm_stats=training_set.norm_stats,
        prior=training_set.prior, theta_loc=theta_loc, theta_scale=theta_scale,
    )

    def eval_nll(idx):
        total = 0.0
        for s in range(0, len(idx), 4096):
            part = idx[s : s + 4096]
            lp = log_prob(model, feats[part], thetas[part])
            total += -float(lp.sum())
        return total / len(idx)

    history = [[0, eval_nll(tr_idx), eval_nll(val_idx)]]
    best_val = history[0][2]
    best_weights = weights.copy()
    best_epoch = 0

    m1 = np.zeros_like(weights)
    m2 = np.zeros_like(weights)
    t = 0
    for epoch in range(1, optimizer.epochs + 1):
        order = rng.permutation(tr_idx)
        batch_losses = []
        for bi, s in enumerate(range(0, len(order), optimizer.batch_size)):
            batch = order[s : s + optimizer.batch_size]
            try:
                loss, grad = nll_and_grad(model, feats[batch], thetas[batch])
            except TrainingError as exc:
                raise TrainingError(f"{exc} (epoch {epoch}, batch {bi})") from None
            batch_losses.append(loss)
            t += 1
            m1 = optimizer.beta1 * m1 + (1 - optimizer.beta1) * grad
            m2 = optimizer.beta2 * m2 + (1 - optimizer.beta2) * grad**2
            mhat = m1 / (1 - optimizer.beta1**t)
            vhat = m2 / (1 - optimizer.beta2**t)
            weights -= optimizer.learning_rate * mhat / (np.sqrt(vhat) + optimizer.eps)
        val_nll = eval_nll(val_idx)
        history.append([epoch, float(np.mean(batch_losses)), val_nll])
        if val_nll < best_val:
            best_val = val_nll
            best_weights = weights.copy()
            best_epoch = epoch

    model.weights = best_weights
    model.training_meta = {
        "epochs": optimizer.epochs,
        "best_epoch": best_epoch,
        "best_val_nll": best_val,
        "seed": seed,
        "n_train": int(len(tr_idx)),
        "n_val": int(len(val_idx)),
        "history": [[int(e), float(tr), float(va)] for e, tr, va in history],
    }
    return model


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: PosteriorModel, path) -> None:
    header = {
        "config": {
            "input_dim": model.config.input_dim,
            "hidden_sizes": list(model.config.hidden_sizes),
            "n_components": model.config.n_components,
            "theta_dim": model.config.theta_dim,
            "activation": model.config.activation,
            "std_floor": model.config.std_floor,
        },
        "norm_mean": model.norm_stats.mean.tolist(),
        "norm_std": model.norm_stats.std.tolist(),
        "prior": model.prior.bounds().tolist(),
        "theta_loc": model.theta_loc.tolist(),
        "theta_scale": model.theta_scale.tolist(),
        "training_meta": model.training_meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.weights, dtype=np.float64).tobytes())


def load_checkpoint(path) -> PosteriorModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise DataError(f"not a checkpoint file: bad magic {magic!r}")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _CKPT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        raw = fh.read()
    cfg = header["config"]
    config = MdnConfig(
        input_dim=cfg["input_dim"], hidden_sizes=tuple(cfg["hidden_sizes"]),
        n_components=cfg["n_components"], theta_dim=cfg["theta_dim"],
        activation=cfg["activation"], std_floor=cfg["std_floor"],
    )
    expected = n_weights(config) * 8
    if len(raw) != expected:
        raise DataError(
            f"checkpoint weight payload is {len(raw)} bytes, expected {expected}: dimension mismatch"
        )
    weights = np.frombuffer(raw, dtype=np.float64).copy()
    b = header["prior"]
    return PosteriorModel(
        config=config, weights=weights,
        norm_stats=NormStats(np.array(header["norm_mean"]), np.array(header["norm_std"])),
        prior=PriorSpec(tuple(b[0]), tuple(b[1]), tuple(b[2])),
        theta_loc=np.array(header["theta_loc"]), theta_scale=np.array(header["theta_scale"]),
        training_meta=header["training_meta"],
    )
