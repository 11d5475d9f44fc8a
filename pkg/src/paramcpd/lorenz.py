"""Lorenz-63 dynamics: fixed-step RK4 integration, piecewise-constant parameter
schedules, and scaled observation noise.

All functions are pure given their seeds; trajectories are float64 throughout
and integration raises :class:`DivergenceError` instead of silently emitting
non-finite states.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError

DIVERGENCE_BOUND = 1e6

_TRAJ_MAGIC = b"PCPDTRJ1"


@dataclass(frozen=True)
class LorenzParams:
    """Governing parameter triple of the Lorenz-63 system."""

    sigma: float
    rho: float
    beta: float

    def __post_init__(self):
        vals = (self.sigma, self.rho, self.beta)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"Lorenz parameters must be finite and positive, got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma, self.rho, self.beta], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "LorenzParams":
        a = np.asarray(arr, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))


#: The classic chaotic regime.
CLASSIC_PARAMS = LorenzParams(10.0, 28.0, 8.0 / 3.0)


@dataclass
class Trajectory:
    """Uniformly sampled state series: states[i] is the state at t0 + i*dt."""

    states: np.ndarray  # (T, 3) float64
    dt: float
    t0: float = 0.0
    seed: int | None = None  # provenance metadata, carried through serialization

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != 3 or len(self.states) < 1:
            raise ValueError(f"states must be (T>=1, 3), got shape {self.states.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))


@dataclass(frozen=True)
class NoiseSpec:
    """Relative observation-noise level (fraction of per-coordinate RMS) plus seed."""

    eta: float
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")


@dataclass(frozen=True)
class Segment:
    params: LorenzParams
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("segment length must be >= 1")


@dataclass
class SegmentSchedule:
    """Piecewise-constant parameter plan; burn-in runs under the first segment."""

    segments: list[Segment]
    burn_in: int = 0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")

    @property
    def total_steps(self) -> int:
        return sum(s.length for s in self.segments)

    def changepoints(self) -> list[int]:
        """Ground-truth boundaries: cumulative segment ends, excluding the last."""
        bounds = np.cumsum([s.length for s in self.segments])
        return [int(b) for b in bounds[:-1]]


def lorenz_rhs(state, params: LorenzParams) -> np.ndarray:
    """Time derivative (sigma*(y-x), x*(rho-z)-y, x*y-beta*z)."""
    s = np.asarray(state, dtype=float)
    return _rhs(s, params.sigma, params.rho, params.beta)


def _rhs(states, sigma, rho, beta):
    # states (..., 3); sigma/rho/beta scalars or (...,) broadcastable
    x, y, z = states[..., 0], states[..., 1], states[..., 2]
    return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)


def _rk4_step(states, sigma, rho, beta, dt):
    k1 = _rhs(states, sigma, rho, beta)
    k2 = _rhs(states + 0.5 * dt * k1, sigma, rho, beta)
    k3 = _rhs(states + 0.5 * dt * k2, sigma, rho, beta)
    k4 = _rhs(states + dt * k3, sigma, rho, beta)
    return states + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    initial,
    params: LorenzParams,
    steps: int,
    dt: float,
    t0: float = 0.0,
    bound: float = DIVERGENCE_BOUND,
) -> Trajectory:
    """Classical fixed-step RK4 for `steps` steps; returns steps+1 states.

    Raises DivergenceError if any component leaves [-bound, bound] or goes
    non-finite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    s = np.asarray(initial, dtype=np.float64).reshape(3)
    _check_state(s, bound, step=0)
    out = np.empty((steps + 1, 3), dtype=np.float64)
    out[0] = s
    for i in range(steps):
        s = _rk4_step(s, params.sigma, params.rho, params.beta, dt)
        _check_state(s, bound, step=i + 1)
        out[i + 1] = s
    return Trajectory(out, dt=dt, t0=t0)


def _check_state(s, bound, step):
    if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > bound:
        raise DivergenceError(f"integration diverged at step {step}: state={s}")


def integrate_batch(
    initials: np.ndarray,
    params: np.ndarray,
    steps: int,
    dt: float,
    bound: float = DIVERGENCE_BOUND,
    keep: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate B trajectories at once; per-trajectory parameters.

    initials: (B, 3); params: (B, 3) rows (sigma, rho, beta).
    Returns (states, diverged): states (B, steps+1, 3) when keep else (B, 3)
    final states, and a boolean mask of trajectories that diverged (their
    states are zeroed from the offending step on instead of raising).

    Per-element arithmetic matches `integrate` exactly, so surviving rows are
    bit-identical to single-trajectory integration.
    """
    s = np.asarray(initials, dtype=np.float64).reshape(-1, 3).copy()
    p = np.asarray(params, dtype=np.float64).reshape(-1, 3)
    sigma, rho, beta = p[:, 0], p[:, 1], p[:, 2]
    n = len(s)
    diverged = np.zeros(n, dtype=bool)
    if keep:
        out = np.empty((n, steps + 1, 3), dtype=np.float64)
        out[:, 0] = s
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            s = _rk4_step(s, sigma, rho, beta, dt)
            bad = ~np.all(np.isfinite(s), axis=1) | (np.max(np.abs(s), axis=1) > bound)
            newly = bad & ~diverged
            if newly.any():
                diverged |= newly
            if diverged.any():
                s[diverged] = 0.0
            if keep:
                out[:, i + 1] = s
    return (out if keep else s), diverged


def simulate_schedule(
    schedule: SegmentSchedule,
    initial,
    dt: float,
    noise: NoiseSpec | None = None,
    bound: float = DIVERGENCE_BOUND,
) -> tuple[Trajectory, list[int]]:
    """Integrate a piecewise-constant schedule with state continuity.

    The burn-in runs under the first segment's parameters and is discarded.
    Each segment contributes exactly `length` states, each produced by one RK4
    step under that segment's parameters, so output index i of segment k+1's
    first position is the continuation of segment k's final state under the
    new parameters. Ground-truth changepoint indices are the post-burn-in
    cumulative boundaries. Noise (if any) is added to the full output.
    """
    first = schedule.segments[0].params
    s = np.asarray(initial, dtype=np.float64).reshape(3)
    if schedule.burn_in > 0:
        s = integrate(s, first, schedule.burn_in, dt, bound=bound).states[-1]
    pieces = []
    for seg in schedule.segments:
        piece = integrate(s, seg.params, seg.length, dt, bound=bound)
        s = piece.states[-1]
        pieces.append(piece.states[1:])  # length new states under this segment
    states = np.concatenate(pieces, axis=0)
    traj = Trajectory(states, dt=dt, t0=0.0)
    if noise is not None and noise.eta > 0:
        traj = add_noise(traj, noise)
    return traj, schedule.changepoints()


def add_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Additive i.i.d. Gaussian noise, std = eta * per-coordinate RMS of the clean series."""
    if spec.eta == 0:
        return Trajectory(traj.states.copy(), dt=traj.dt, t0=traj.t0, seed=traj.seed)
    rms = np.sqrt(np.mean(traj.states**2, axis=0))
    rng = np.random.default_rng(spec.seed)
    noisy = traj.states + spec.eta * rms * rng.standard_normal(traj.states.shape)
    return Trajectory(noisy, dt=traj.dt, t0=traj.t0, seed=traj.seed)


# ---------------------------------------------------------------------------
# serialization


def save_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,x,y,z\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(f"{float(t)!r},{float(row[0])!r},{float(row[1])!r},{float(row[2])!r}\n")


def load_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64)
    data = np.atleast_2d(data)
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return Trajectory(data[:, 1:4], dt=dt, t0=float(t[0]))


def save_binary(traj: Trajectory, path) -> None:
    """Versioned binary record: magic, dt, t0, length, seed, float64 states."""
    seed = -1 if traj.seed is None else int(traj.seed)
    header = struct.pack("<8sddqq", _TRAJ_MAGIC, traj.dt, traj.t0, len(traj.states), seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.states, dtype=np.float64).tobytes())


def load_binary(path) -> Trajectory:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8sddqq"))
        magic, dt, t0, length, seed = struct.unpack("<8sddqq", header)
        if magic != _TRAJ_MAGIC:
            raise ValueError(f"not a trajectory file: bad magic {magic!r}")
        data = np.frombuffer(fh.read(length * 3 * 8), dtype=np.float64).reshape(length, 3)
    return Trajectory(data.copy(), dt=dt, t0=t0, seed=None if seed == -1 else seed)
