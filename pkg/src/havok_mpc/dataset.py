"""Uniformly sampled input/output records: loading, normalization, splitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DegenerateError, SamplingError, SchemaError, SizeError

SAMPLING_RTOL = 1e-6
NORM_METHODS = ("zscore", "minmax", "none")


def _frozen(a, ndim=2) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeriesDataset:
    sample_period: float
    inputs: np.ndarray
    outputs: np.ndarray
    channel_names: Tuple[str, ...] = ()
    t0: float = 0.0

    def __post_init__(self):
        inputs = _frozen(self.inputs)
        outputs = _frozen(self.outputs)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if inputs.ndim != 2 or outputs.ndim != 2:
            raise SizeError("inputs and outputs must be 2-D (n_samples x n_channels)")
        if inputs.shape[0] != outputs.shape[0]:
            raise SizeError(
                f"inputs have {inputs.shape[0]} rows but outputs have {outputs.shape[0]}"
            )
        if inputs.shape[0] < 1:
            raise SizeError("a dataset needs at least 1 sample")
        if not (math.isfinite(self.sample_period) and self.sample_period > 0):
            raise SamplingError(f"sample_period must be positive, got {self.sample_period}")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
            raise DataError("dataset contains non-finite values")
        names = tuple(self.channel_names)
        if not names:
            names = default_channel_names(inputs.shape[1], outputs.shape[1])
        if len(names) != inputs.shape[1] + outputs.shape[1]:
            raise SchemaError("channel_names must name every input and output channel")
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sample_period", float(self.sample_period))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_y(self) -> int:
        return self.outputs.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.sample_period * np.arange(self.n_samples)

    def slice(self, start: int, stop: int) -> "TimeSeriesDataset":
        return TimeSeriesDataset(
            self.sample_period,
            self.inputs[start:stop],
            self.outputs[start:stop],
            self.channel_names,
            self.t0 + start * self.sample_period,
        )


def default_channel_names(n_u: int, n_y: int) -> Tuple[str, ...]:
    return tuple(f"u{i + 1}" for i in range(n_u)) + tuple(f"y{i + 1}" for i in range(n_y))


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel affine map ``x_norm = (x - offset) / scale``.

    zscore uses the population standard deviation (denominator n).
    """

    method: str = "none"
    input_offset: np.ndarray = field(default_factory=lambda: np.zeros(0))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    output_offset: np.ndarray = field(default_factory=lambda: np.zeros(0))
    output_scale: np.ndarray = field(default_factory=lambda: np.ones(0))

    def __post_init__(self):
        if self.method not in NORM_METHODS:
            raise DataError(f"unknown normalization method {self.method!r}")
        for name in ("input_offset", "input_scale", "output_offset", "output_scale"):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim=1).ravel())
        if np.any(self.input_scale <= 0) or np.any(self.output_scale <= 0):
            raise DegenerateError("normalization scales must be strictly positive")

    @classmethod
    def identity(cls, n_u: int, n_y: int) -> "NormalizationSpec":
        return cls("none", np.zeros(n_u), np.ones(n_u), np.zeros(n_y), np.ones(n_y))

    @property
    def is_identity(self) -> bool:
        return (
            not self.input_offset.any()
            and not self.output_offset.any()
            and bool(np.all(self.input_scale == 1.0))
            and bool(np.all(self.output_scale == 1.0))
        )

    def normalize_inputs(self, u):
        return (np.asarray(u, dtype=float) - self.input_offset) / self.input_scale

    def normalize_outputs(self, y):
        return (np.asarray(y, dtype=float) - self.output_offset) / self.output_scale

    def denormalize_inputs(self, u):
        return np.asarray(u, dtype=float) * self.input_scale + self.input_offset

    def denormalize_outputs(self, y):
        return np.asarray(y, dtype=float) * self.output_scale + self.output_offset

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "input_offset": self.input_offset.tolist(),
            "input_scale": self.input_scale.tolist(),
            "output_offset": self.output_offset.tolist(),
            "output_scale": self.output_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationSpec":
        return cls(
            d["method"],
            np.array(d["input_offset"], dtype=float),
            np.array(d["input_scale"], dtype=float),
            np.array(d["output_offset"], dtype=float),
            np.array(d["output_scale"], dtype=float),
        )


def _channel_stats(x: np.ndarray, method: str, names: Sequence[str]):
    n_ch = x.shape[1]
    if method == "none":
        return np.zeros(n_ch), np.ones(n_ch)
    if method == "zscore":
        offset = x.mean(axis=0)
        scale = x.std(axis=0)  # ddof=0
    else:
        offset = x.min(axis=0)
        scale = x.max(axis=0) - offset
    # spread below 1e-6 of the channel magnitude cannot be normalized to 1e-10 accuracy
    tiny = 1e-6 * np.max(np.abs(x), axis=0)
    bad = [names[i] for i in range(n_ch) if not scale[i] > tiny[i]]
    if bad:
        raise DegenerateError(f"channel(s) {bad} have zero spread; cannot apply {method}")
    return offset, scale


def normalize(ds: TimeSeriesDataset, method: str = "zscore"):
    """Normalize every input and output channel; returns ``(dataset, spec)``."""
    if ds.n_samples < 2:
        raise SizeError("normalization needs at least 2 samples")
    if method not in NORM_METHODS:
        raise DataError(f"unknown normalization method {method!r}; expected one of {NORM_METHODS}")
    in_names = ds.channel_names[: ds.n_u]
    out_names = ds.channel_names[ds.n_u :]
    u_off, u_scale = _channel_stats(ds.inputs, method, in_names)
    y_off, y_scale = _channel_stats(ds.outputs, method, out_names)
    spec = NormalizationSpec(method, u_off, u_scale, y_off, y_scale)
    return apply_normalization(ds, spec), spec


def apply_normalization(ds: TimeSeriesDataset, spec: NormalizationSpec) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        ds.sample_period,
        spec.normalize_inputs(ds.inputs),
        spec.normalize_outputs(ds.outputs),
        ds.channel_names,
        ds.t0,
    )


def denormalize(ds: TimeSeriesDataset, spec: NormalizationSpec) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        ds.sample_period,
        spec.denormalize_inputs(ds.inputs),
        spec.denormalize_outputs(ds.outputs),
        ds.channel_names,
        ds.t0,
    )


def split(ds: TimeSeriesDataset, train_fraction: float):
    """Contiguous prefix/suffix split, ``floor(fraction * n)`` rows go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in the open interval (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * ds.n_samples))
    if n_train < 1 or ds.n_samples - n_train < 1:
        raise SizeError(f"split of {ds.n_samples} samples at {train_fraction} leaves an empty part")
    return ds.slice(0, n_train), ds.slice(n_train, ds.n_samples)


def concatenate(first: TimeSeriesDataset, second: TimeSeriesDataset) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        first.sample_period,
        np.vstack([first.inputs, second.inputs]),
        np.vstack([first.outputs, second.outputs]),
        first.channel_names,
        first.t0,
    )


# -- CSV ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(ds: TimeSeriesDataset, path) -> None:
    """Write ``t, u1.., y1..`` with 17 significant digits."""
    path = Path(path)
    header = ["t", *[f"u{i + 1}" for i in range(ds.n_u)], *[f"y{i + 1}" for i in range(ds.n_y)]]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, u, y in zip(ds.times, ds.inputs, ds.outputs):
            writer.writerow([_fmt(t), *map(_fmt, u), *map(_fmt, y)])


def _infer_schema(header: Sequence[str]) -> dict:
    return {
        "time": "t",
        "inputs": [h for h in header if h.startswith("u") and h[1:].isdigit()],
        "outputs": [h for h in header if h.startswith("y") and h[1:].isdigit()],
    }


def _recover_period(t: np.ndarray) -> float:
    """Sample period from timestamps.

    Returns the shortest decimal period that regenerates every timestamp
    bit-exactly as ``t0 + k * period`` (the form ``write_csv`` uses), falling
    back to the mean spacing for logged data.
    """
    mean_dt = (t[-1] - t[0]) / (len(t) - 1)
    k = np.arange(len(t))
    for digits in range(1, 18):
        cand = float(f"{mean_dt:.{digits}g}")
        if np.array_equal(t[0] + cand * k, t):
            return cand
    return float(mean_dt)


def load_csv(path, schema: Optional[Mapping] = None) -> TimeSeriesDataset:
    """Load a dataset from CSV.

    ``schema`` maps ``time`` to the time column name and ``inputs``/``outputs``
    to lists of column names. Without a schema the ``t, u1.., y1..`` layout is
    assumed.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    schema = dict(schema) if schema else _infer_schema(header)
    time_col = schema.get("time", "t")
    in_cols = list(schema.get("inputs", []))
    out_cols = list(schema.get("outputs", []))
    if not in_cols or not out_cols:
        raise SchemaError("schema must name at least one input and one output column")
    missing = [c for c in [time_col, *in_cols, *out_cols] if c not in header]
    if missing:
        raise SchemaError(f"missing column(s) {missing} in {path}")
    idx = [header.index(c) for c in [time_col, *in_cols, *out_cols]]

    try:
        data = np.array([[float(row[i]) for i in idx] for row in rows[1:] if row], dtype=float)
    except (ValueError, IndexError) as exc:
        raise DataError(f"unparseable cell in {path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 2:
        raise SizeError(f"{path} needs at least 2 data rows")
    if not np.all(np.isfinite(data)):
        bad_row = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise DataError(f"non-finite value in data row {bad_row} of {path}")

    t = data[:, 0]
    dt = np.diff(t)
    ts = _recover_period(t)
    if ts <= 0 or np.max(np.abs(dt - ts)) >= SAMPLING_RTOL * ts:
        raise SamplingError(f"timestamps in {path} are not uniformly sampled")
    n_u = len(in_cols)
    return TimeSeriesDataset(
        ts,
        data[:, 1 : 1 + n_u],
        data[:, 1 + n_u :],
        tuple(in_cols + out_cols),
        float(t[0]),
    )
