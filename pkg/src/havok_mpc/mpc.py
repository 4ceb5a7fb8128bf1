"""Receding-horizon control on the identified predictor.

The QP is condensed: predicted outputs are eliminated through

    Y = Phi z + Gamma u_seq

so the decision vector is the input sequence alone and its size ``N * n_u``
does not depend on the embedding depth. Everything inside the QP lives in the
model's normalized units; the controller converts bounds, references and the
applied input at the boundary.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, SizeError
from .havok import HavokModel, embed_initial_state, fit
from .embedding import HankelConfig, RankPolicy
from .qp import kkt_residual, objective, solve_box_qp


def _weight(w, n: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return float(w) * np.eye(n)
    if w.ndim == 1:
        if w.size != n:
            raise ConfigError(f"{name} diagonal has {w.size} entries, expected {n}")
        return np.diag(w)
    if w.shape != (n, n):
        raise ConfigError(f"{name} has shape {w.shape}, expected ({n}, {n})")
    return w


def _check_psd(M, name, strict):
    if not np.allclose(M, M.T, rtol=0, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    lam = np.linalg.eigvalsh(M).min() if M.size else 0.0
    if strict and not lam > 0:
        raise ConfigError(f"{name} must be positive definite (smallest eigenvalue {lam:.3g})")
    if not strict and lam < -1e-12:
        raise ConfigError(f"{name} must be positive semidefinite (smallest eigenvalue {lam:.3g})")


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and input bounds.

    Weights accept a scalar, a diagonal or a full matrix. ``Q`` weighs
    tracking error in the model's (normalized) output units; bounds are in
    physical units.
    """

    horizon: int
    n_u: int = 1
    n_y: int = 1
    Q: object = 1.0
    R: object = 1e-4
    R_delta: object = 0.0
    u_min: object = -np.inf
    u_max: object = np.inf
    max_iter: Optional[int] = None

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))
        Q = _weight(self.Q, self.n_y, "Q")
        R = _weight(self.R, self.n_u, "R")
        Rd = _weight(self.R_delta, self.n_u, "R_delta")
        _check_psd(Q, "Q", strict=False)
        _check_psd(R, "R", strict=True)
        _check_psd(Rd, "R_delta", strict=False)
        lo = np.broadcast_to(np.asarray(self.u_min, dtype=float), (self.n_u,)).copy()
        hi = np.broadcast_to(np.asarray(self.u_max, dtype=float), (self.n_u,)).copy()
        if not np.all(lo < hi):
            raise ConfigError(f"need u_min < u_max elementwise, got {lo} and {hi}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        for name, val in (("Q", Q), ("R", R), ("R_delta", Rd), ("u_min", lo), ("u_max", hi)):
            object.__setattr__(self, name, val)


@dataclass
class CondensedQp:
    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    Phi: np.ndarray
    Gamma: np.ndarray
    const: float = 0.0

    @property
    def n_vars(self) -> int:
        return self.g.size

    def cost(self, u) -> float:
        return objective(self.H, self.g, u) + self.const


@dataclass
class MpcStepResult:
    u_applied: np.ndarray
    predicted_outputs: np.ndarray
    qp_iterations: int
    solve_time: float
    cost: float
    u_sequence: np.ndarray = field(repr=False, default=None)
    fallback: bool = False
    residual: float = 0.0


def build_prediction(model: HavokModel, N: int):
    """Stacked maps with ``Y = Phi z + Gamma u_seq`` over ``N`` steps.

    Row block ``i`` of ``Y`` is the output after ``i + 1`` steps.
    """
    if N < 1:
        raise SizeError(f"horizon must be >= 1, got {N}")
    A, B, C = model.A, model.B, model.C
    n_y, n_u, r = model.n_y, model.n_u, model.r
    Phi = np.zeros((N * n_y, r))
    Gamma = np.zeros((N * n_y, N * n_u))
    markov = []  # C A^i B
    Ai = np.eye(r)
    for i in range(N):
        markov.append(C @ Ai @ B)
        Ai = A @ Ai
        Phi[i * n_y : (i + 1) * n_y] = C @ Ai
    for i in range(N):
        for j in range(i + 1):
            Gamma[i * n_y : (i + 1) * n_y, j * n_u : (j + 1) * n_u] = markov[i - j]
    return Phi, Gamma


def assert_causal(Gamma, n_y: int, n_u: int) -> None:
    N = Gamma.shape[0] // n_y
    for i in range(N):
        if np.any(Gamma[i * n_y : (i + 1) * n_y, (i + 1) * n_u :]):
            raise AssertionError(f"forced-response block row {i} depends on future inputs")


def _difference_operator(N: int, n_u: int) -> np.ndarray:
    return np.eye(N * n_u) - np.eye(N * n_u, k=-n_u)


@dataclass
class _CostTerms:
    H: np.ndarray
    GtQ: np.ndarray
    Qbar: np.ndarray
    DtRd: np.ndarray
    Rd: np.ndarray


def _cost_terms(Gamma, cfg: MpcConfig) -> _CostTerms:
    N, n_u = cfg.horizon, cfg.n_u
    Qbar = np.kron(np.eye(N), cfg.Q)
    Rbar = np.kron(np.eye(N), cfg.R)
    Rdbar = np.kron(np.eye(N), cfg.R_delta)
    D = _difference_operator(N, n_u)
    GtQ = Gamma.T @ Qbar
    H = GtQ @ Gamma + Rbar + D.T @ Rdbar @ D
    H = 0.5 * (H + H.T)
    return _CostTerms(H, GtQ, Qbar, D.T @ Rdbar, Rdbar)


def _reference(r_traj, N: int, n_y: int) -> np.ndarray:
    r = np.asarray(r_traj, dtype=float)
    if r.ndim == 0:
        r = np.full((1, n_y), float(r))
    elif r.ndim == 1:
        r = r[:, None] if n_y == 1 else r[None, :]
    if r.shape[1] != n_y or r.shape[0] < 1:
        raise SizeError(f"reference must be (T >= 1) x {n_y}, got {r.shape}")
    if r.shape[0] < N:
        r = np.vstack([r, np.repeat(r[-1:], N - r.shape[0], axis=0)])
    return r[:N]


def _assemble(terms: _CostTerms, Phi, Gamma, z, r_traj, u_prev, lb, ub, N, n_y, n_u) -> CondensedQp:
    ref = _reference(r_traj, N, n_y).ravel()
    free = Phi @ z - ref
    e = np.zeros(N * n_u)
    e[:n_u] = np.asarray(u_prev, dtype=float).reshape(n_u)
    g = terms.GtQ @ free - terms.DtRd @ e
    const = 0.5 * free @ terms.Qbar @ free + 0.5 * e @ terms.Rd @ e
    return CondensedQp(terms.H, g, np.tile(lb, N), np.tile(ub, N), Phi, Gamma, float(const))


def assemble_qp(pred, cfg: MpcConfig, z, r_traj, u_prev, lb=None, ub=None) -> CondensedQp:
    """Condensed QP for one control step.

    The objective ``0.5 u'Hu + g'u + const`` equals
    ``0.5|Y - r|_Q^2 + 0.5|u|_R^2 + 0.5|du|_Rd^2`` where ``du`` starts from
    ``u_prev``. All quantities are in model units; ``lb``/``ub`` default to the
    config bounds taken as-is.
    """
    Phi, Gamma = pred
    N, n_y, n_u = cfg.horizon, cfg.n_y, cfg.n_u
    if Gamma.shape != (N * n_y, N * n_u):
        raise SizeError(f"Gamma has shape {Gamma.shape}, expected ({N * n_y}, {N * n_u})")
    terms = _cost_terms(Gamma, cfg)
    lb = cfg.u_min if lb is None else lb
    ub = cfg.u_max if ub is None else ub
    return _assemble(terms, Phi, Gamma, np.asarray(z, dtype=float), r_traj, u_prev, lb, ub, N, n_y, n_u)


def solve_qp(qp: CondensedQp, warm_start=None, max_iter=None):
    """Returns ``(u_seq, iterations)``."""
    sol = solve_box_qp(qp.H, qp.g, qp.lb, qp.ub, warm_start=warm_start, max_iter=max_iter)
    return sol.u, sol.iterations


def shift_warm_start(u_seq, n_u: int) -> np.ndarray:
    u_seq = np.asarray(u_seq, dtype=float)
    return np.concatenate([u_seq[n_u:], u_seq[-n_u:]])


class MpcController:
    """Stateful controller: caches the condensed Hessian and keeps the warm start.

    One instance per control loop; not thread-safe.
    """

    def __init__(self, model: HavokModel, cfg: MpcConfig, clock: Callable[[], float] = time.perf_counter):
        if cfg.n_u != model.n_u or cfg.n_y != model.n_y:
            raise ConfigError(
                f"controller is configured for n_u={cfg.n_u}, n_y={cfg.n_y} but the model has "
                f"n_u={model.n_u}, n_y={model.n_y}"
            )
        self.model = model
        self.cfg = cfg
        self.clock = clock
        self.Phi, self.Gamma = build_prediction(model, cfg.horizon)
        assert_causal(self.Gamma, model.n_y, model.n_u)
        self._terms = _cost_terms(self.Gamma, cfg)
        norm = model.norm
        # normalization is affine with positive scale so box bounds map to box bounds
        self.lb = norm.normalize_inputs(cfg.u_min)
        self.ub = norm.normalize_inputs(cfg.u_max)
        self.warm = None

    @property
    def qp_dims(self) -> int:
        return self.cfg.horizon * self.cfg.n_u

    def reset(self):
        self.warm = None

    def step(self, y_hist, u_hist, r_traj, u_prev=None) -> MpcStepResult:
        """Re-embed the measured history, solve the QP, return the first input.

        ``u_prev`` defaults to the newest entry of ``u_hist``.
        """
        model, cfg = self.model, self.cfg
        norm = model.norm
        N, n_u, n_y = cfg.horizon, cfg.n_u, cfg.n_y
        if u_prev is None:
            u_hist_arr = np.asarray(u_hist, dtype=float).reshape(-1, n_u)
            u_prev = u_hist_arr[-1] if len(u_hist_arr) else np.zeros(n_u)
        u_prev = np.asarray(u_prev, dtype=float).reshape(n_u)

        t_start = self.clock()
        z = embed_initial_state(model, y_hist, u_hist)
        ref = norm.normalize_outputs(_reference(r_traj, N, n_y))
        u_prev_n = norm.normalize_inputs(u_prev)
        qp = _assemble(self._terms, self.Phi, self.Gamma, z, ref, u_prev_n, self.lb, self.ub, N, n_y, n_u)
        fallback = False
        try:
            sol = solve_box_qp(qp.H, qp.g, qp.lb, qp.ub, warm_start=self.warm, max_iter=cfg.max_iter)
            u_seq, iters, res = sol.u, sol.iterations, sol.residual
        except ConvergenceError as exc:
            fallback = True
            u_hold = np.clip(u_prev_n, self.lb, self.ub)
            u_seq = np.tile(u_hold, N)
            iters, res = exc.iterations, exc.residual
        solve_time = self.clock() - t_start

        self.warm = shift_warm_start(u_seq, n_u)
        u_applied = np.clip(norm.denormalize_inputs(u_seq[:n_u]), cfg.u_min, cfg.u_max)
        y_pred = norm.denormalize_outputs((self.Phi @ z + self.Gamma @ u_seq).reshape(N, n_y))
        return MpcStepResult(
            u_applied=u_applied,
            predicted_outputs=y_pred,
            qp_iterations=int(iters),
            solve_time=float(solve_time),
            cost=qp.cost(u_seq),
            u_sequence=u_seq,
            fallback=fallback,
            residual=float(res) if not fallback else kkt_residual(qp.H, qp.g, qp.lb, qp.ub, u_seq),
        )


def mpc_step(model: HavokModel, cfg: MpcConfig, y_hist, u_hist, r_traj, u_prev=None, warm=None) -> MpcStepResult:
    """One stateless control step; ``warm`` is an optional full input sequence (model units)."""
    ctrl = MpcController(model, cfg)
    ctrl.warm = None if warm is None else np.asarray(warm, dtype=float)
    return ctrl.step(y_hist, u_hist, r_traj, u_prev)


def bench_complexity(
    train,
    m_values: Sequence[int] = (5, 10, 20, 40, 80),
    horizon: int = 20,
    rank: int = 8,
    include_inputs: bool = True,
    mpc_kwargs: Optional[dict] = None,
    n_solves: int = 50,
    clock: Callable[[], float] = time.perf_counter,
):
    """Fit one model per depth on the same data and time the control QP.

    Returns rows ``dict(m, r, qp_dims, median_solve_time_s)``. Rank is fixed
    so the reduced state dimension is the same for every depth.
    """
    mpc_kwargs = dict(mpc_kwargs or {})
    rows = []
    for m in m_values:
        model, _ = fit(train, HankelConfig(m, include_inputs), RankPolicy.fixed(rank))
        cfg = MpcConfig(horizon, n_u=model.n_u, n_y=model.n_y, **mpc_kwargs)
        ctrl = MpcController(model, cfg, clock=clock)
        y, u = train.outputs, train.inputs
        starts = np.linspace(m, train.n_samples - 1, n_solves).astype(int)
        times = []
        ref = np.full((1, model.n_y), float(np.mean(y)) + float(np.std(y)))
        for k in starts:
            ctrl.reset()
            res = ctrl.step(y[k - m + 1 : k + 1], u[k - m + 1 : k], ref)
            times.append(res.solve_time)
        rows.append(
            {"m": m, "r": model.r, "qp_dims": ctrl.qp_dims, "median_solve_time_s": float(np.median(times))}
        )
    return rows
