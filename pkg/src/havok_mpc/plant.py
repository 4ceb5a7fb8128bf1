"""Transport-delay process surrogate and identification signals.

The plant is a first-order lag behind a pure dead time, per channel:

    x_{k+1} = a x_k + (1 - a) K f(u_{k-D}),   a = exp(-Ts / tau)
    y_k     = x_k + e_k,                       e_k ~ N(0, noise_std^2)

with ``D = dead_time / Ts``. The recursion is the zero-order-hold
discretization, so step responses are exact at the sample instants. Random
numbers come from numpy's PCG64 bit generator.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .dataset import TimeSeriesDataset
from .errors import ConfigError, DataError, DivergenceError, HavokMpcError

DELAY_MULTIPLE_TOL = 1e-9


@dataclass(frozen=True)
class Nonlinearity:
    kind: str = "none"
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in ("none", "saturation", "square_root"):
            raise ConfigError(f"unknown nonlinearity {self.kind!r}")
        if self.kind == "saturation" and not self.lo < self.hi:
            raise ConfigError("saturation needs lo < hi")

    def __call__(self, u):
        if self.kind == "saturation":
            return np.clip(u, self.lo, self.hi)
        if self.kind == "square_root":
            return np.sign(u) * np.sqrt(np.abs(u))
        return u


def _per_channel(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return arr


class DelayPlant:
    """Dead time + first-order lag, one independent loop per channel.

    Parameters may be scalars or per-channel sequences. Channel ``i`` of the
    input drives channel ``i`` of the output.
    """

    def __init__(
        self,
        gain=1.0,
        time_constant=1.0,
        dead_time=0.0,
        sample_period: float = 1.0,
        noise_std=0.0,
        nonlinearity: Nonlinearity = Nonlinearity(),
        seed: Optional[int] = 0,
        n_channels: Optional[int] = None,
    ):
        if n_channels is None:
            n_channels = max(np.size(gain), np.size(time_constant), np.size(dead_time), np.size(noise_std))
        self.n_channels = int(n_channels)
        self.gain = _per_channel(gain, self.n_channels, "gain")
        self.time_constant = _per_channel(time_constant, self.n_channels, "time_constant")
        self.dead_time = _per_channel(dead_time, self.n_channels, "dead_time")
        self.noise_std = _per_channel(noise_std, self.n_channels, "noise_std")
        if not (math.isfinite(sample_period) and sample_period > 0):
            raise ConfigError(f"sample_period must be positive, got {sample_period}")
        if np.any(self.time_constant <= 0):
            raise ConfigError("time_constant must be > 0")
        if np.any(self.dead_time < 0):
            raise ConfigError("dead_time must be >= 0")
        if np.any(self.noise_std < 0):
            raise ConfigError("noise_std must be >= 0")
        ratio = self.dead_time / sample_period
        if np.any(np.abs(ratio - np.round(ratio)) > DELAY_MULTIPLE_TOL * np.maximum(1.0, ratio)):
            raise ConfigError("dead_time must be an integer multiple of sample_period")
        self.sample_period = float(sample_period)
        self.delay_steps = np.round(ratio).astype(int)
        self.alpha = np.exp(-self.sample_period / self.time_constant)
        self.nonlinearity = nonlinearity
        self.seed = seed
        self.reset()

    def reset(self, x0=0.0, u0=0.0):
        """Restore the initial state; the delay lines are filled with ``u0``."""
        self.x = _per_channel(x0, self.n_channels, "x0")
        u0 = _per_channel(u0, self.n_channels, "u0")
        self._lines = [deque([u0[i]] * int(d)) for i, d in enumerate(self.delay_steps)]
        self._rng = np.random.default_rng(self.seed)

    def measure(self) -> np.ndarray:
        """Current (noisy) output without advancing the plant."""
        noise = self._rng.standard_normal(self.n_channels) * self.noise_std
        return self.x + noise

    def step(self, u) -> np.ndarray:
        """Apply ``u`` for one sample period and return the next measurement."""
        u = np.broadcast_to(np.asarray(u, dtype=float), (self.n_channels,))
        if not np.all(np.isfinite(u)):
            raise DataError(f"non-finite plant input {u}")
        u_d = np.empty(self.n_channels)
        for i, line in enumerate(self._lines):
            line.append(u[i])
            u_d[i] = line.popleft()
        self.x = self.alpha * self.x + (1.0 - self.alpha) * self.gain * self.nonlinearity(u_d)
        return self.measure()

    def step_response(self, t) -> np.ndarray:
        """Analytic noise-free unit step response ``K (1 - exp(-(t - d)/tau))``."""
        t = np.asarray(t, dtype=float)[..., None]
        resp = self.gain * (1.0 - np.exp(-(t - self.dead_time) / self.time_constant))
        return np.where(t >= self.dead_time, resp, 0.0)


def plant_step(p: DelayPlant, u) -> np.ndarray:
    return p.step(u)


# -- excitation --------------------------------------------------------------

@dataclass(frozen=True)
class ExcitationSpec:
    """Identification input.

    kind ``prbs`` uses ``period`` (minimum hold, samples), ``amplitude`` and
    ``seed``; ``multisine`` uses ``frequencies`` (Hz), ``amplitudes`` and
    ``seed`` or explicit ``phases``; ``step`` uses ``time`` (samples) and
    ``level``; ``chirp`` sweeps linearly from ``f0`` to ``f1`` Hz.
    """

    kind: str
    duration: int
    period: int = 1
    amplitude: float = 1.0
    seed: Optional[int] = 0
    frequencies: Tuple[float, ...] = ()
    amplitudes: Tuple[float, ...] = ()
    phases: Optional[Tuple[float, ...]] = None
    time: int = 0
    level: float = 1.0
    f0: float = 0.0
    f1: float = 0.1
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("prbs", "multisine", "step", "chirp"):
            raise ConfigError(f"unknown excitation kind {self.kind!r}")
        if int(self.duration) != self.duration or self.duration < 1:
            raise ConfigError(f"duration must be a positive integer, got {self.duration}")
        if self.kind == "prbs" and self.period < 1:
            raise ConfigError("prbs period must be >= 1")
        vals = [self.amplitude, self.level, self.f0, self.f1, self.offset, *self.amplitudes, *self.frequencies]
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("excitation parameters must be finite")


def generate_excitation(spec: ExcitationSpec, sample_period: float = 1.0) -> np.ndarray:
    n = int(spec.duration)
    k = np.arange(n)
    if spec.kind == "prbs":
        n_blocks = -(-n // spec.period)
        bits = np.random.default_rng(spec.seed).integers(0, 2, n_blocks)
        levels = np.where(bits == 1, spec.amplitude, -spec.amplitude)
        u = np.repeat(levels, spec.period)[:n].astype(float)
    elif spec.kind == "multisine":
        if len(spec.frequencies) == 0:
            raise ValueError("multisine needs at least one frequency")
        amps = np.broadcast_to(
            np.asarray(spec.amplitudes if spec.amplitudes else spec.amplitude, dtype=float),
            (len(spec.frequencies),),
        )
        if spec.phases is not None:
            phases = np.broadcast_to(np.asarray(spec.phases, dtype=float), amps.shape)
        else:
            phases = np.random.default_rng(spec.seed).uniform(0.0, 2 * np.pi, amps.size)
        t = k * sample_period
        u = np.zeros(n)
        for f, a, ph in zip(spec.frequencies, amps, phases):
            u += a * np.sin(2 * np.pi * f * t + ph)
    elif spec.kind == "step":
        u = np.where(k >= spec.time, spec.level, 0.0)
    else:
        t = k * sample_period
        t_end = max(n - 1, 1) * sample_period
        rate = (spec.f1 - spec.f0) / t_end
        u = spec.amplitude * np.sin(2 * np.pi * (spec.f0 * t + 0.5 * rate * t**2))
    return u + spec.offset


# -- experiments -------------------------------------------------------------

def run_experiment(p: DelayPlant, excitation) -> TimeSeriesDataset:
    """Drive the plant open loop; row ``k`` pairs ``u_k`` with ``y_k``.

    ``y_k`` is measured before ``u_k`` is applied.
    """
    u = np.asarray(excitation, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != p.n_channels:
        raise DataError(f"excitation has {u.shape[1]} channel(s), plant has {p.n_channels}")
    y = np.empty_like(u)
    y[0] = p.measure()
    for k in range(u.shape[0] - 1):
        y[k + 1] = p.step(u[k])
    return TimeSeriesDataset(p.sample_period, u, y)


def pure_delay_dataset(u, delay: int, sample_period: float = 1.0, u_before: float = 0.0) -> TimeSeriesDataset:
    """Noise-free ``y_k = u_{k-delay}`` with ``u_before`` for negative times."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    y = np.full_like(u, u_before)
    if delay == 0:
        y = u.copy()
    else:
        y[delay:] = u[:-delay]
    return TimeSeriesDataset(sample_period, u, y)


@dataclass
class ClosedLoopResult:
    """Telemetry arrays (one row per step) plus tracking metrics."""

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    ref: np.ndarray
    cost: np.ndarray
    iterations: np.ndarray
    solve_time: np.ndarray
    fallback: np.ndarray
    metrics: dict = field(default_factory=dict)

    def telemetry_rows(self):
        for k in range(len(self.t)):
            yield (k, self.t[k], *self.u[k], *self.y[k], *self.ref[k],
                   self.cost[k], int(self.iterations[k]), self.solve_time[k])


def tracking_metrics(t, y, ref, settle_band: float = 0.02) -> dict:
    """RMSE over the final half, max overshoot and settle time (worst channel).

    Overshoot and settling are measured against the final reference value
    relative to the size of the reference change over the run.
    """
    y = np.asarray(y, dtype=float).reshape(len(t), -1)
    ref = np.asarray(ref, dtype=float).reshape(len(t), -1)
    half = len(t) // 2
    err = y[half:] - ref[half:]
    rmse = float(np.sqrt(np.mean(err**2)))
    r_final = ref[-1]
    step_size = np.abs(r_final - y[0])
    step_size = np.where(step_size > 0, step_size, 1.0)
    direction = np.sign(r_final - y[0])
    over = np.max((y - r_final) * np.where(direction == 0, 1.0, direction), axis=0)
    overshoot = float(np.max(np.maximum(over, 0.0) / step_size))
    outside = np.any(np.abs(y - r_final) > settle_band * step_size, axis=1)
    idx = np.nonzero(outside)[0]
    if idx.size == 0:
        settle = float(t[0])
    elif idx[-1] == len(t) - 1:
        settle = float("nan")
    else:
        settle = float(t[idx[-1] + 1])
    return {"tracking_rmse": rmse, "max_overshoot": overshoot, "settle_time": settle - float(t[0])}


def run_closed_loop(
    p: DelayPlant,
    controller,
    r_traj,
    T: int,
    warmup: Optional[int] = None,
    u_warmup=None,
    on_step: Optional[Callable[[int, object], None]] = None,
) -> ClosedLoopResult:
    """Run ``T`` receding-horizon steps against the plant.

    ``controller`` is an :class:`~havok_mpc.mpc.MpcController`. The first
    ``warmup`` samples (default: embedding depth) hold the input at the
    midpoint of the bounds to fill the history; they are not part of the
    telemetry. ``r_traj`` is a scalar, or ``(T, n_y)`` rows indexed by
    closed-loop step; the preview at step ``k`` is ``r_traj[k+1 : k+1+N]``,
    constant-extended.
    """
    model, cfg = controller.model, controller.cfg
    m = model.depth
    n_u, n_y = model.n_u, model.n_y
    if p.n_channels != n_u or n_u != n_y:
        raise ConfigError(
            f"plant has {p.n_channels} channel(s); model has n_u={n_u}, n_y={n_y}"
        )
    warmup = m if warmup is None else int(warmup)
    if warmup < m:
        raise ConfigError(f"warm-up of {warmup} samples cannot fill an embedding of depth {m}")
    if u_warmup is None:
        lo, hi = cfg.u_min, cfg.u_max
        u_warmup = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                            np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0)))
    u_warmup = np.broadcast_to(np.asarray(u_warmup, dtype=float), (n_u,))

    ref_all = np.asarray(r_traj, dtype=float)
    if ref_all.ndim == 0:
        ref_all = np.full((T + 1, n_y), float(ref_all))
    elif ref_all.ndim == 1:
        ref_all = ref_all[:, None] if n_y == 1 else ref_all[None, :]
    if ref_all.shape[0] < T + 1:
        ref_all = np.vstack([ref_all, np.repeat(ref_all[-1:], T + 1 - ref_all.shape[0], axis=0)])

    y_hist = [p.measure()]
    u_hist = []
    for _ in range(warmup - 1):
        u_hist.append(u_warmup.copy())
        y_hist.append(p.step(u_warmup))

    controller.reset()
    out = {k: [] for k in ("u", "y", "ref", "cost", "it", "time", "fb")}
    for k in range(T):
        y_now = y_hist[-1]
        preview = ref_all[k + 1 : k + 1 + cfg.horizon]
        try:
            res = controller.step(np.array(y_hist[-m:]), np.array(u_hist[-(m - 1):]) if m > 1 else None,
                                  preview, u_prev=u_hist[-1] if u_hist else u_warmup)
        except HavokMpcError as exc:
            raise DivergenceError(f"controller failed at step {k}: {exc}", step=k) from exc
        u = res.u_applied
        out["u"].append(u)
        out["y"].append(y_now)
        out["ref"].append(ref_all[k])
        out["cost"].append(res.cost)
        out["it"].append(res.qp_iterations)
        out["time"].append(res.solve_time)
        out["fb"].append(res.fallback)
        if on_step is not None:
            on_step(k, res)
        u_hist.append(u)
        y_hist.append(p.step(u))
        # keep the history bounded
        if len(y_hist) > 2 * m + 2:
            del y_hist[: len(y_hist) - (m + 1)]
            del u_hist[: len(u_hist) - m]

    t = np.arange(T) * p.sample_period
    result = ClosedLoopResult(
        t,
        np.array(out["u"]).reshape(T, n_u),
        np.array(out["y"]).reshape(T, n_y),
        np.array(out["ref"]).reshape(T, n_y),
        np.array(out["cost"]),
        np.array(out["it"]),
        np.array(out["time"]),
        np.array(out["fb"], dtype=bool),
    )
    result.metrics = tracking_metrics(t, result.y, result.ref)
    result.metrics.update(
        mean_solve_time_s=float(np.mean(result.solve_time)),
        max_solve_time_s=float(np.max(result.solve_time)),
        mean_qp_iterations=float(np.mean(result.iterations)),
        fallback_count=int(np.sum(result.fallback)),
    )
    return result
