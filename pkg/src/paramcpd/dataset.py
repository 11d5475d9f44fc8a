"""Priors, window features, training-pair generation and evaluation corpora.

Everything here is a pure function of (config, seed). Per-pair and per-sequence
random streams are derived with `numpy.random.SeedSequence([seed, index, ...])`
so generation order (and any future worker layout) cannot change the output.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .lorenz import (
    CLASSIC_PARAMS,
    DIVERGENCE_BOUND,
    LorenzParams,
    NoiseSpec,
    Segment,
    SegmentSchedule,
    Trajectory,
    add_noise,
    integrate_batch,
    load_binary,
    save_binary,
    simulate_schedule,
)

PARAM_NAMES = ("sigma", "rho", "beta")
PARAM_INDEX = {"sigma": 0, "rho": 1, "beta": 2}

#: Low/high regime ranges for the alternating changepoint corpus. The varying
#: parameter straddles the classic value; rho stays above the chaos onset.
LOW_HIGH_RANGES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "sigma": ((7.0, 9.0), (13.0, 15.0)),
    "rho": ((24.0, 28.0), (36.0, 40.0)),
    "beta": ((1.8, 2.4), (3.2, 3.8)),
}

_SET_MAGIC = b"PCPDSET1"

_INITIAL_BASE = np.array([1.0, 1.0, 1.0])
_INITIAL_JITTER = 0.5  # uniform half-width of the pre-burn-in perturbation


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform box over (sigma, rho, beta)."""

    sigma_range: tuple[float, float] = (6.0, 16.0)
    rho_range: tuple[float, float] = (22.0, 42.0)
    beta_range: tuple[float, float] = (1.5, 4.0)

    def __post_init__(self):
        # degenerate (point-mass) ranges are allowed for sampling; experiment
        # configs additionally require strictly positive width
        for name, (lo, hi) in zip(PARAM_NAMES, self.bounds()):
            if not lo <= hi:
                raise ValueError(f"{name}_range must have lower <= upper, got ({lo}, {hi})")

    def bounds(self) -> np.ndarray:
        return np.array([self.sigma_range, self.rho_range, self.beta_range], dtype=float)

    def contains(self, params: LorenzParams) -> bool:
        b = self.bounds()
        v = params.as_array()
        return bool(np.all(v >= b[:, 0]) and np.all(v <= b[:, 1]))

    def widths(self) -> np.ndarray:
        b = self.bounds()
        return b[:, 1] - b[:, 0]


DEFAULT_PRIOR = PriorSpec()


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_prior(prior: PriorSpec, seed) -> LorenzParams:
    """One independent uniform draw per dimension."""
    rng = as_generator(seed)
    b = prior.bounds()
    v = b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random(3)
    return LorenzParams.from_array(v)


# ---------------------------------------------------------------------------
# window features


@dataclass
class NormStats:
    """Frozen per-channel standardization statistics (x, y, z, y-x)."""

    mean: np.ndarray  # (4,)
    std: np.ndarray  # (4,)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(4)
        self.std = np.asarray(self.std, dtype=float).reshape(4)
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.std)):
            raise DataError("non-finite normalization statistics")
        if np.any(self.std <= 0):
            raise DataError(f"degenerate corpus: zero-variance channel(s) {np.where(self.std <= 0)[0]}")


def window_channels(states: np.ndarray) -> np.ndarray:
    """Stack the (w, 3) state block into the 4xw channel layout [x, y, z, y-x]."""
    s = np.asarray(states, dtype=np.float64)
    return np.concatenate([s.T, (s[:, 1] - s[:, 0])[None, :]], axis=0)


def extract_window(traj: Trajectory, end_index: int, w: int) -> np.ndarray:
    """Raw 4xw channel block covering indices [end_index - w + 1, end_index]."""
    if w < 1:
        raise ValueError("window length must be >= 1")
    if end_index < w - 1 or end_index >= len(traj):
        raise IndexError(f"end_index {end_index} out of range for w={w}, T={len(traj)}")
    return window_channels(traj.states[end_index - w + 1 : end_index + 1])


def compute_norm_stats(windows: np.ndarray) -> NormStats:
    """Per-channel mean/std over every window and timestep of a training set."""
    wnd = np.asarray(windows, dtype=np.float64)
    mean = wnd.mean(axis=(0, 2))
    std = wnd.std(axis=(0, 2))
    return NormStats(mean=mean, std=std)


def featurize(raw: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardize a raw 4xw block (or a (B, 4, w) batch) with frozen statistics."""
    out = (np.asarray(raw, dtype=np.float64) - stats.mean[:, None]) / stats.std[:, None]
    if not np.all(np.isfinite(out)):
        raise DataError("non-finite values after feature standardization")
    return out


# ---------------------------------------------------------------------------
# training set


@dataclass
class TrainingSet:
    """Paired (theta, raw window) samples plus the frozen standardization stats."""

    thetas: np.ndarray  # (N, 3)
    windows: np.ndarray  # (N, 4, w) raw channel blocks
    norm_stats: NormStats
    prior: PriorSpec
    w: int
    seed: int = 0
    n_rejected: int = 0

    @property
    def n(self) -> int:
        return len(self.thetas)

    def features(self) -> np.ndarray:
        """Standardized, flattened (N, 4*w) feature matrix."""
        return featurize(self.windows, self.norm_stats).reshape(self.n, -1)


def build_training_set(
    prior: PriorSpec,
    n_pairs: int,
    w: int,
    dt: float = 0.01,
    sim_steps: int = 1400,
    noise_eta: float = 0.01,
    seed: int = 0,
    burn_in: int = 1000,
    chunk_size: int = 2048,
    bound: float = DIVERGENCE_BOUND,
) -> TrainingSet:
    """Simulate n_pairs independent (theta, window) training pairs.

    Each pair gets its own derived seed stream: a prior draw, an initial-state
    perturbation, one uniformly random window end index in the post-burn-in
    trajectory, and the observation noise. Parameters whose integration
    diverges are resampled; more than 10% rejections aborts with DataError.
    """
    post_steps = sim_steps - burn_in
    if post_steps < w:
        raise ValueError(f"sim_steps must be >= w + burn_in ({w} + {burn_in})")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")

    thetas = np.empty((n_pairs, 3), dtype=np.float64)
    windows = np.empty((n_pairs, 4, w), dtype=np.float64)
    budget = max(1, int(0.1 * n_pairs))
    n_rejected = 0

    pending = list(range(n_pairs))
    attempt = np.zeros(n_pairs, dtype=int)
    while pending:
        retry = []
        for start in range(0, len(pending), chunk_size):
            idx = pending[start : start + chunk_size]
            draws = [_draw_pair(prior, seed, i, attempt[i], post_steps, w) for i in idx]
            th = np.array([d[0] for d in draws])
            init = np.array([d[1] for d in draws])
            # burn-in without storing, then the kept post-burn-in stretch
            last, div1 = integrate_batch(init, th, burn_in, dt, bound=bound, keep=False)
            states, div2 = integrate_batch(last, th, post_steps - 1, dt, bound=bound, keep=True)
            diverged = div1 | div2
            for row, i in enumerate(idx):
                if diverged[row]:
                    attempt[i] += 1
                    retry.append(i)
                    continue
                clean = states[row]
                if noise_eta > 0:
                    rms = np.sqrt(np.mean(clean**2, axis=0))
                    clean = clean + noise_eta * rms * draws[row][3]
                end = draws[row][2]
                thetas[i] = th[row]
                windows[i] = window_channels(clean[end - w + 1 : end + 1])
            n_rejected += int(diverged.sum())
            if n_rejected > budget:
                raise DataError(
                    f"resample budget exceeded: {n_rejected} rejections for {n_pairs} pairs; "
                    "the prior covers non-viable dynamics"
                )
        pending = retry

    stats = compute_norm_stats(windows)
    return TrainingSet(
        thetas=thetas, windows=windows, norm_stats=stats, prior=prior, w=w, seed=seed,
        n_rejected=n_rejected,
    )


def _draw_pair(prior, seed, index, attempt, post_steps, w):
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, attempt]))
    b = prior.bounds()
    theta = b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random(3)
    initial = _INITIAL_BASE + rng.uniform(-_INITIAL_JITTER, _INITIAL_JITTER, 3)
    end = int(rng.integers(w - 1, post_steps))
    noise = rng.standard_normal((post_steps, 3))
    return theta, initial, end, noise


# ---------------------------------------------------------------------------
# evaluation corpora


@dataclass
class CorpusSequence:
    """One changepoint sequence with its ground truth and per-segment parameters."""

    trajectory: Trajectory
    changepoints: list[int]
    kind: str
    index: int
    segment_params: np.ndarray  # (K, 3)


@dataclass
class StationaryRecord:
    """One stationary trajectory with its single ground-truth parameter vector."""

    params: LorenzParams
    trajectory: Trajectory
    kind: str
    index: int


def _uniform_over_union(rng, low: tuple[float, float], high: tuple[float, float]) -> float:
    widths = np.array([low[1] - low[0], high[1] - high[0]])
    pick = rng.random() < widths[0] / widths.sum()
    lo, hi = low if pick else high
    return float(lo + (hi - lo) * rng.random())


def build_changepoint_corpus(
    param_kind: str,
    n_sequences: int,
    seed: int,
    n_segments: int = 12,
    segment_length: int = 800,
    dt: float = 0.01,
    eta: float = 0.01,
    burn_in: int = 1000,
    ranges: dict | None = None,
    fixed: LorenzParams = CLASSIC_PARAMS,
    bound: float = DIVERGENCE_BOUND,
) -> list[CorpusSequence]:
    """Alternating low/high sequences: the chosen parameter is redrawn each
    segment from the low range on even segments and the high range on odd
    ones; the other two stay at their conventional values."""
    if param_kind not in PARAM_INDEX:
        raise ValueError(f"param_kind must be one of {PARAM_NAMES}, got {param_kind!r}")
    low, high = (ranges or LOW_HIGH_RANGES)[param_kind]
    dim = PARAM_INDEX[param_kind]
    out = []
    for i in range(n_sequences):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        seg_params = np.empty((n_segments, 3))
        segments = []
        for k in range(n_segments):
            lo, hi = low if k % 2 == 0 else high
            vec = fixed.as_array()
            vec[dim] = lo + (hi - lo) * rng.random()
            seg_params[k] = vec
            segments.append(Segment(LorenzParams.from_array(vec), segment_length))
        initial = _INITIAL_BASE + rng.uniform(-_INITIAL_JITTER, _INITIAL_JITTER, 3)
        noise_seed = int(rng.integers(2**31))
        schedule = SegmentSchedule(segments, burn_in=burn_in)
        traj, truth = simulate_schedule(schedule, initial, dt, NoiseSpec(eta, noise_seed), bound=bound)
        traj.seed = noise_seed
        out.append(CorpusSequence(traj, truth, param_kind, i, seg_params))
    return out


def build_stationary_corpus(
    param_kind: str,
    n_trajectories: int,
    seed: int,
    length: int = 3000,
    dt: float = 0.01,
    eta: float = 0.01,
    burn_in: int = 1000,
    ranges: dict | None = None,
    fixed: LorenzParams = CLASSIC_PARAMS,
    bound: float = DIVERGENCE_BOUND,
) -> list[StationaryRecord]:
    """Constant-parameter trajectories for calibration: the varying parameter
    is uniform over the union of its low and high ranges."""
    if param_kind not in PARAM_INDEX:
        raise ValueError(f"param_kind must be one of {PARAM_NAMES}, got {param_kind!r}")
    low, high = (ranges or LOW_HIGH_RANGES)[param_kind]
    dim = PARAM_INDEX[param_kind]
    out = []
    for i in range(n_trajectories):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        vec = fixed.as_array()
        vec[dim] = _uniform_over_union(rng, low, high)
        params = LorenzParams.from_array(vec)
        initial = _INITIAL_BASE + rng.uniform(-_INITIAL_JITTER, _INITIAL_JITTER, 3)
        noise_seed = int(rng.integers(2**31))
        schedule = SegmentSchedule([Segment(params, length)], burn_in=burn_in)
        traj, _ = simulate_schedule(schedule, initial, dt, NoiseSpec(eta, noise_seed), bound=bound)
        traj.seed = noise_seed
        out.append(StationaryRecord(params, traj, param_kind, i))
    return out


# ---------------------------------------------------------------------------
# persistence


def save_training_set(ts: TrainingSet, path) -> None:
    header = {
        "n": ts.n,
        "w": ts.w,
        "seed": ts.seed,
        "n_rejected": ts.n_rejected,
        "prior": ts.prior.bounds().tolist(),
        "norm_mean": ts.norm_stats.mean.tolist(),
        "norm_std": ts.norm_stats.std.tolist(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_SET_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(ts.thetas, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(ts.windows, dtype=np.float64).tobytes())


def load_training_set(path) -> TrainingSet:
    with open(path, "rb") as fh:
        magic = fh.read(len(_SET_MAGIC))
        if magic != _SET_MAGIC:
            raise DataError(f"not a training-set file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        n, w = header["n"], header["w"]
        thetas = np.frombuffer(fh.read(n * 3 * 8), dtype=np.float64).reshape(n, 3).copy()
        windows = np.frombuffer(fh.read(n * 4 * w * 8), dtype=np.float64).reshape(n, 4, w).copy()
    b = header["prior"]
    prior = PriorSpec(tuple(b[0]), tuple(b[1]), tuple(b[2]))
    stats = NormStats(np.array(header["norm_mean"]), np.array(header["norm_std"]))
    return TrainingSet(
        thetas=thetas, windows=windows, norm_stats=stats, prior=prior, w=w,
        seed=header["seed"], n_rejected=header["n_rejected"],
    )


def save_corpus(directory, sequences, extra: dict | None = None) -> None:
    """Write a corpus directory: one binary trajectory per entry + manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for item in sequences:
        fname = f"seq_{item.index:04d}.traj"
        save_binary(item.trajectory, d / fname)
        if isinstance(item, CorpusSequence):
            entries.append(
                {
                    "file": fname,
                    "index": item.index,
                    "changepoints": [int(c) for c in item.changepoints],
                    "segment_params": item.segment_params.tolist(),
                }
            )
        else:
            entries.append(
                {
                    "file": fname,
                    "index": item.index,
                    "theta_true": item.params.as_array().tolist(),
                }
            )
    kind = sequences[0].kind if sequences else None
    manifest = {"kind": kind, "n": len(entries), "sequences": entries}
    manifest.update(extra or {})
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(directory):
    """Load a corpus directory; returns (records, manifest)."""
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise DataError(f"no manifest.json in {d}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    records = []
    for entry in manifest["sequences"]:
        traj = load_binary(d / entry["file"])
        if "changepoints" in entry:
            records.append(
                CorpusSequence(
                    traj,
                    [int(c) for c in entry["changepoints"]],
                    manifest["kind"],
                    entry["index"],
                    np.array(entry["segment_params"]),
                )
            )
        else:
            records.append(
                StationaryRecord(
                    LorenzParams.from_array(entry["theta_true"]),
                    traj,
                    manifest["kind"],
                    entry["index"],
                )
            )
    return records, manifest
