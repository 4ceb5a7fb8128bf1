"""Hankel (time-delay) embedding, its SVD and the projected delay coordinates.

Delay vector layout for time ``k`` with depth ``m``::

    [y_{k-m+1}, ..., y_k, u_{k-m+1}, ..., u_{k-1}]

Each time block is channel-major and the oldest sample sits on top. The input
block is present only when ``include_inputs`` is set and holds ``m - 1``
samples, so ``u_k`` never enters the state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, DegenerateError, SizeError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class HankelConfig:
    depth: int
    include_inputs: bool = True

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise SizeError(f"embedding depth must be a positive integer, got {self.depth}")
        object.__setattr__(self, "depth", int(self.depth))

    def n_rows(self, n_y: int, n_u: int) -> int:
        return self.depth * n_y + (self.depth - 1) * n_u * self.include_inputs

    def output_rows(self, n_y: int) -> slice:
        """Rows of the delay vector holding the newest output sample."""
        return slice((self.depth - 1) * n_y, self.depth * n_y)


@dataclass(frozen=True)
class RankPolicy:
    """Truncation rule: ``energy`` (needs ``tau``), ``hard_threshold``,
    ``fixed`` (needs ``rank``) or ``full``."""

    kind: str = "energy"
    tau: float = 0.999
    rank: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("energy", "hard_threshold", "fixed", "full"):
            raise ValueError(f"unknown rank policy {self.kind!r}")
        if self.kind == "energy" and not 0.0 < self.tau <= 1.0:
            raise ValueError(f"energy threshold must lie in (0, 1], got {self.tau}")
        if self.kind == "fixed" and (self.rank is None or self.rank < 1):
            raise ValueError("fixed rank policy needs rank >= 1")

    @classmethod
    def energy(cls, tau=0.999):
        return cls("energy", tau=tau)

    @classmethod
    def hard_threshold(cls):
        return cls("hard_threshold")

    @classmethod
    def fixed(cls, rank):
        return cls("fixed", rank=int(rank))

    @classmethod
    def full(cls):
        return cls("full")


@dataclass(frozen=True)
class DelayEmbedding:
    config: HankelConfig
    U: np.ndarray
    S: np.ndarray
    V: Optional[np.ndarray]
    r: int
    full_singular_values: np.ndarray
    n_y: int
    n_u: int

    def __post_init__(self):
        for name in ("U", "S", "full_singular_values"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.V is not None:
            V = np.array(self.V, dtype=float)
            V.setflags(write=False)
            object.__setattr__(self, "V", V)
        rows = self.config.n_rows(self.n_y, self.n_u)
        if self.U.shape != (rows, self.r):
            raise SizeError(f"basis has shape {self.U.shape}, expected ({rows}, {self.r})")

    @property
    def n_rows(self) -> int:
        return self.U.shape[0]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "m": self.config.depth,
            "include_inputs": self.config.include_inputs,
            "r": self.r,
            "n_y": self.n_y,
            "n_u": self.n_u,
            "rows": self.n_rows,
            "U": self.U.ravel().tolist(),
            "S": self.S.tolist(),
            "full_singular_values": self.full_singular_values.tolist(),
            "layout": "outputs[m] then inputs[m-1]; channel-major blocks, oldest first",
        }

    @classmethod
    def from_dict(cls, d) -> "DelayEmbedding":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported embedding schema_version {d.get('schema_version')}")
        cfg = HankelConfig(d["m"], bool(d["include_inputs"]))
        U = np.array(d["U"], dtype=float).reshape(d["rows"], d["r"])
        return cls(cfg, U, np.array(d["S"]), None, d["r"],
                   np.array(d["full_singular_values"]), d["n_y"], d["n_u"])


def save_embedding(emb: DelayEmbedding, path) -> None:
    Path(path).write_text(json.dumps(emb.to_dict()))


def load_embedding(path) -> DelayEmbedding:
    return DelayEmbedding.from_dict(json.loads(Path(path).read_text()))


def build_hankel(series, m: int) -> np.ndarray:
    """Stack sliding windows of ``series`` (n_samples x n_ch) as columns.

    Column ``j`` holds samples ``j .. j+m-1``, oldest on top, channel-major
    within each sample block, so ``H[i + n_ch, j] == H[i, j + 1]``.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, n_ch = x.shape
    if m < 1:
        raise SizeError(f"depth must be >= 1, got {m}")
    if m > n:
        raise SizeError(f"depth {m} exceeds series length {n}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (m, n_ch))[:, 0]
    return windows.reshape(n - m + 1, m * n_ch).T.copy()


def build_delay_matrix(outputs, inputs, cfg: HankelConfig) -> np.ndarray:
    """Joint delay matrix; column ``j`` is the delay vector at time ``k = j + m - 1``."""
    y = np.atleast_2d(np.asarray(outputs, dtype=float))
    n = y.shape[0]
    if cfg.depth > n:
        raise SizeError(f"embedding depth {cfg.depth} exceeds data length {n}")
    H_y = build_hankel(y, cfg.depth)
    if not cfg.include_inputs or cfg.depth == 1:
        return H_y
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    # inputs u_{j} .. u_{j+m-2} for column j
    H_u = build_hankel(u[: n - 1], cfg.depth - 1)
    return np.vstack([H_y, H_u])


def delay_vector(outputs, inputs, cfg: HankelConfig) -> np.ndarray:
    """Delay vector from the last ``m`` outputs and last ``m - 1`` inputs."""
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    parts = [y[-cfg.depth :].ravel()]
    if cfg.include_inputs and cfg.depth > 1:
        u = np.asarray(inputs, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        parts.append(u[-(cfg.depth - 1) :].ravel())
    return np.concatenate(parts)


def svd_factorize(H):
    """Thin SVD ``H = U diag(S) V^T``; returns ``(U, S, V)``."""
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        raise DataError("matrix has non-finite entries")
    U, S, Vt = np.linalg.svd(H, full_matrices=False)
    # fix the sign ambiguity: largest-magnitude entry of each U column is positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return U * signs, S, Vt.T * signs


def gavish_donoho_omega(beta: float) -> float:
    return 0.56 * beta**3 - 0.95 * beta**2 + 1.82 * beta + 1.43


def choose_rank(S, policy: RankPolicy = RankPolicy(), shape=None) -> int:
    """Pick the truncation rank from singular values ``S`` (non-increasing).

    ``shape`` is the Hankel matrix shape; the hard threshold uses its aspect
    ratio and assumes a square matrix when omitted.
    """
    S = np.asarray(S, dtype=float)
    if S.size == 0 or not np.any(S > 0):
        raise DegenerateError("all singular values are zero")
    if policy.kind == "full":
        return int(S.size)
    if policy.kind == "fixed":
        return int(min(policy.rank, S.size))
    if policy.kind == "energy":
        s = S / S.max()  # scale first so tiny spectra do not underflow
        energy = np.cumsum(s**2) / np.sum(s**2)
        # guard against round-off in the last cumulative entry
        r = int(np.searchsorted(energy, policy.tau * (1 - 1e-15), side="left")) + 1
        return int(min(max(r, 1), S.size))
    rows, cols = shape if shape is not None else (S.size, S.size)
    beta = min(rows, cols) / max(rows, cols)
    cutoff = gavish_donoho_omega(beta) * np.median(S)
    return max(1, int(np.sum(S > cutoff)))


def embed(H, cfg: HankelConfig, n_y: int, n_u: int, policy: RankPolicy = RankPolicy()) -> DelayEmbedding:
    U, S, V = svd_factorize(H)
    r = choose_rank(S, policy, H.shape)
    return DelayEmbedding(cfg, U[:, :r], S[:r], V[:, :r], r, S, n_y, n_u)


def project(emb: DelayEmbedding, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape[0] != emb.n_rows:
        raise SizeError(f"delay vector has length {h.shape[0]}, embedding expects {emb.n_rows}")
    return emb.U.T @ h


def lift(emb: DelayEmbedding, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[0] != emb.r:
        raise SizeError(f"coordinate vector has length {z.shape[0]}, embedding rank is {emb.r}")
    return emb.U @ z
