"""Linear predictor in projected delay coordinates (HAVOK with control).

The predictor advances ``z_{k+1} = A z_k + B u_k`` and reads outputs through
``y_k = C z_k``. ``C`` is not regressed: it is the block of the basis rows that
holds the newest output sample.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .dataset import NormalizationSpec, TimeSeriesDataset, apply_normalization, normalize
from .embedding import (
    DelayEmbedding,
    HankelConfig,
    RankPolicy,
    build_delay_matrix,
    choose_rank,
    delay_vector,
    project,
    svd_factorize,
)
from .errors import (
    DataError,
    DivergenceError,
    HistoryError,
    IllPosedRegressionWarning,
    SizeError,
)

log = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
HOLDOUT_HORIZONS = (1, 5, 20)
NORMAL_EQUATIONS_MAX_COND = 1e6
ILL_POSED_COND = 1e12
PINV_RCOND = 1e-12


@dataclass(frozen=True)
class HavokModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    embedding: DelayEmbedding
    sample_period: float
    norm: NormalizationSpec

    def __post_init__(self):
        for name in ("A", "B", "C"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r, n_y, n_u = self.embedding.r, self.embedding.n_y, self.embedding.n_u
        if self.A.shape != (r, r) or self.B.shape != (r, n_u) or self.C.shape != (n_y, r):
            raise SizeError(
                f"inconsistent model shapes A{self.A.shape} B{self.B.shape} C{self.C.shape} "
                f"for r={r}, n_u={n_u}, n_y={n_y}"
            )
        if not all(np.all(np.isfinite(M)) for M in (self.A, self.B, self.C)):
            raise DataError("model matrices must be finite")

    @property
    def r(self) -> int:
        return self.embedding.r

    @property
    def n_u(self) -> int:
        return self.embedding.n_u

    @property
    def n_y(self) -> int:
        return self.embedding.n_y

    @property
    def depth(self) -> int:
        return self.embedding.config.depth

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "A": self.A.ravel().tolist(),
            "B": self.B.ravel().tolist(),
            "C": self.C.ravel().tolist(),
            "embedding": self.embedding.to_dict(),
            "normalization": self.norm.to_dict(),
            "sample_period": self.sample_period,
        }

    @classmethod
    def from_dict(cls, d) -> "HavokModel":
        if d.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise DataError(f"unsupported model schema_version {d.get('schema_version')}")
        emb = DelayEmbedding.from_dict(d["embedding"])
        r, n_u, n_y = emb.r, emb.n_u, emb.n_y
        return cls(
            np.array(d["A"], dtype=float).reshape(r, r),
            np.array(d["B"], dtype=float).reshape(r, n_u),
            np.array(d["C"], dtype=float).reshape(n_y, r),
            emb,
            float(d["sample_period"]),
            NormalizationSpec.from_dict(d["normalization"]),
        )


def save_model(model: HavokModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path) -> HavokModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such model file: {path}")
    try:
        d = json.loads(path.read_text())
        return HavokModel.from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed model file {path}: {exc}") from None


@dataclass
class FitReport:
    one_step_rmse: np.ndarray
    multi_step_rmse: Dict[int, np.ndarray]
    residuals: np.ndarray
    gram_condition: float
    warnings: list = field(default_factory=list)

    def rows(self):
        """Flat ``(metric, horizon, channel, value)`` rows for CSV export."""
        out = []
        for ch, v in enumerate(self.one_step_rmse):
            out.append(("one_step_rmse", 1, ch + 1, float(v)))
        for h in sorted(self.multi_step_rmse):
            for ch, v in enumerate(self.multi_step_rmse[h]):
                out.append(("multi_step_rmse", h, ch + 1, float(v)))
        out.append(("gram_condition", 0, 0, float(self.gram_condition)))
        out.append(("residual_fro", 0, 0, float(np.linalg.norm(self.residuals))))
        return out


def _solve_regression(X: np.ndarray, Y: np.ndarray):
    """Least squares ``W = argmin ||Y - W X||_F``; returns ``(W, cond(X X^T))``."""
    gram = X @ X.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = float(np.linalg.cond(gram)) if gram.size else 0.0
    if not np.isfinite(cond):
        cond = float("inf")
    if cond < NORMAL_EQUATIONS_MAX_COND:
        W = np.linalg.solve(gram, X @ Y.T).T
    else:
        W = Y @ np.linalg.pinv(X, rcond=PINV_RCOND)
    return W, cond


def fit_with_basis(
    train: TimeSeriesDataset,
    embedding: DelayEmbedding,
    norm: Optional[NormalizationSpec] = None,
) -> Tuple[HavokModel, FitReport]:
    """Regress ``A, B`` for a given projection basis.

    ``train`` must be in physical units; ``norm`` is applied before embedding.
    """
    cfg = embedding.config
    norm = norm or NormalizationSpec.identity(train.n_u, train.n_y)
    data = apply_normalization(train, norm) if not norm.is_identity else train
    if train.n_samples < cfg.depth + 2:
        raise SizeError(
            f"need at least m + 2 = {cfg.depth + 2} samples to fit, got {train.n_samples}"
        )
    H = build_delay_matrix(data.outputs, data.inputs, cfg)
    Z = embedding.U.T @ H
    Z_now, Z_next = Z[:, :-1], Z[:, 1:]
    # column j of H is time k = j + m - 1; pair it with u_k
    U_now = data.inputs[cfg.depth - 1 : train.n_samples - 1].T
    X = np.vstack([Z_now, U_now])
    W, cond = _solve_regression(X, Z_next)
    r = embedding.r
    A, B = W[:, :r], W[:, r:]
    C = embedding.U[cfg.output_rows(train.n_y), :]
    model = HavokModel(A, B, C, embedding, train.sample_period, norm)

    notes = []
    if cond > ILL_POSED_COND:
        msg = f"regression Gram matrix is ill-conditioned (cond={cond:.3g}); used pseudoinverse"
        notes.append(msg)
        warnings.warn(msg, IllPosedRegressionWarning, stacklevel=2)
    residuals = Z_next - A @ Z_now - B @ U_now
    report = evaluate(model, train)
    report.residuals = residuals
    report.gram_condition = cond
    report.warnings = notes
    return model, report


def fit(
    train: TimeSeriesDataset,
    cfg: HankelConfig,
    rank_policy: RankPolicy = RankPolicy(),
    norm_method: str = "none",
    holdout: Optional[TimeSeriesDataset] = None,
) -> Tuple[HavokModel, FitReport]:
    """Identify a predictor from input/output data.

    Normalization statistics come from ``train`` only. The report is computed
    on ``holdout`` when given, otherwise on the training data.
    """
    if train.n_samples < cfg.depth + 2:
        raise SizeError(
            f"need at least m + 2 = {cfg.depth + 2} samples to fit, got {train.n_samples}"
        )
    if norm_method == "none":
        norm = NormalizationSpec.identity(train.n_u, train.n_y)
        data = train
    else:
        data, norm = normalize(train, norm_method)
    H = build_delay_matrix(data.outputs, data.inputs, cfg)
    U, S, V = svd_factorize(H)
    if not np.any(S > 0):
        # all-zero data: keep a single direction so the model stays well-formed
        r = 1
    else:
        r = choose_rank(S, rank_policy, H.shape)
    embedding = DelayEmbedding(cfg, U[:, :r], S[:r], V[:, :r], r, S, train.n_y, train.n_u)
    model, report = fit_with_basis(train, embedding, norm)
    if holdout is not None:
        held = evaluate(model, holdout)
        report.one_step_rmse = held.one_step_rmse
        report.multi_step_rmse = held.multi_step_rmse
    return model, report


def evaluate(model: HavokModel, ds: TimeSeriesDataset, horizons=HOLDOUT_HORIZONS) -> FitReport:
    """RMSE of ``h``-step predictions from every embeddable start time.

    Errors are measured in physical output units. Horizons longer than the
    data allow yield NaN.
    """
    cfg = model.embedding.config
    norm = model.norm
    if ds.n_samples < cfg.depth + 1:
        raise SizeError(f"need more than m = {cfg.depth} samples to evaluate, got {ds.n_samples}")
    y_n = norm.normalize_outputs(ds.outputs)
    u_n = norm.normalize_inputs(ds.inputs)
    Z = model.embedding.U.T @ build_delay_matrix(y_n, u_n, cfg)
    n, m = ds.n_samples, cfg.depth
    multi = {}
    max_h = max(horizons)
    for h in range(1, max_h + 1):
        # Z holds predictions for times m-1+h .. n-1 started at m-1 .. n-1-h
        n_start = n - m + 1 - h
        if n_start <= 0:
            if h in horizons:
                multi[h] = np.full(ds.n_y, np.nan)
            continue
        Z = model.A @ Z[:, :n_start] + model.B @ u_n[m - 2 + h : m - 2 + h + n_start].T
        if h in horizons:
            pred = norm.denormalize_outputs((model.C @ Z).T)
            err = pred - ds.outputs[m - 1 + h : m - 1 + h + n_start]
            multi[h] = np.sqrt(np.mean(err**2, axis=0))
    one = multi.get(1, np.full(ds.n_y, np.nan))
    return FitReport(one, multi, np.zeros((model.r, 0)), float("nan"))


def _check_vec(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise SizeError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def step(model: HavokModel, z, u) -> np.ndarray:
    z = _check_vec(z, model.r, "state")
    u = _check_vec(np.atleast_1d(u), model.n_u, "input")
    return model.A @ z + model.B @ u


def predict_output(model: HavokModel, z, denormalize: bool = False) -> np.ndarray:
    y = model.C @ _check_vec(z, model.r, "state")
    return model.norm.denormalize_outputs(y) if denormalize else y


def simulate(model: HavokModel, z0, inputs, physical: bool = True) -> np.ndarray:
    """Iterate the predictor; row ``k`` is the output after applying ``inputs[0..k]``.

    With ``physical`` the inputs are normalized and the outputs denormalized
    through the model's normalization.
    """
    z = _check_vec(z0, model.r, "initial state")
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None] if model.n_u == 1 else u[None, :]
    if u.ndim != 2 or u.shape[1] != model.n_u or u.shape[0] < 1:
        raise SizeError(f"inputs must be (T >= 1) x {model.n_u}, got {u.shape}")
    if physical:
        u = model.norm.normalize_inputs(u)
    out = np.empty((u.shape[0], model.n_y))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(u.shape[0]):
            z = model.A @ z + model.B @ u[k]
            out[k] = model.C @ z
            if not np.all(np.isfinite(out[k])):
                raise DivergenceError(f"prediction diverged at step {k}", step=k)
    return model.norm.denormalize_outputs(out) if physical else out


def history_vector(model: HavokModel, outputs, inputs=None, physical: bool = True) -> np.ndarray:
    """Delay vector from measured history (last m outputs, last m-1 inputs)."""
    cfg = model.embedding.config
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None] if model.n_y == 1 else y[None, :]
    if y.shape[0] < cfg.depth or y.shape[1] != model.n_y:
        raise HistoryError(
            f"need {cfg.depth} output samples of {model.n_y} channel(s), got shape {y.shape}"
        )
    need_u = cfg.depth - 1 if cfg.include_inputs else 0
    if need_u:
        if inputs is None:
            raise HistoryError(f"need {need_u} past input samples")
        u = np.asarray(inputs, dtype=float)
        if u.ndim == 1:
            u = u[:, None] if model.n_u == 1 else u[None, :]
        if u.shape[0] < need_u or u.shape[1] != model.n_u:
            raise HistoryError(
                f"need {need_u} input samples of {model.n_u} channel(s), got shape {u.shape}"
            )
    else:
        u = np.zeros((0, model.n_u))
    y = y[-cfg.depth :]
    u = u[u.shape[0] - need_u :]
    if physical:
        y = model.norm.normalize_outputs(y)
        u = model.norm.normalize_inputs(u)
    return delay_vector(y, u, cfg)


def embed_initial_state(model: HavokModel, outputs, inputs=None, physical: bool = True) -> np.ndarray:
    """Project measured history onto the model basis.

    ``outputs`` holds at least the last ``m`` output samples (newest last);
    ``inputs`` the most recent ``m - 1`` inputs, i.e. up to ``u_{k-1}``.
    """
    return project(model.embedding, history_vector(model, outputs, inputs, physical))
