"""Run configuration: a single YAML (or JSON) file validated before any work starts.

Top-level sections::

    run:          seed, steps, warmup, timing (wall | off), train_fraction
    dataset:      path, schema                       (or plant + excitation)
    plant:        gain, time_constant, dead_time, sample_period, noise_std, nonlinearity
    excitation:   kind, duration, period, amplitude, frequencies, ...
    embedding:    m, include_inputs, rank_policy, normalization
    mpc:          N, Q, R, R_delta, u_min, u_max, max_iter, reference
    bench:        m_values, rank, n_solves
"""
from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .embedding import HankelConfig, RankPolicy
from .errors import ConfigError, HavokMpcError
from .mpc import MpcConfig
from .plant import DelayPlant, ExcitationSpec, Nonlinearity

SEED_ENV = "HAVOK_MPC_SEED"

Weight = Union[float, List[float], List[List[float]]]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunSection(_Section):
    seed: int = 0
    steps: int = Field(200, ge=1)
    warmup: Optional[int] = Field(None, ge=1)
    timing: Literal["wall", "off"] = "wall"
    train_fraction: float = Field(0.7, gt=0.0, lt=1.0)


class DatasetSection(_Section):
    path: Path
    time: str = "t"
    inputs: Optional[List[str]] = None
    outputs: Optional[List[str]] = None

    def schema_mapping(self):
        if self.inputs is None and self.outputs is None:
            return None
        return {"time": self.time, "inputs": self.inputs or [], "outputs": self.outputs or []}


class NonlinearitySection(_Section):
    kind: Literal["none", "saturation", "square_root"] = "none"
    lo: float = -math.inf
    hi: float = math.inf


class PlantSection(_Section):
    gain: Union[float, List[float]] = 1.0
    time_constant: Union[float, List[float]] = 5.0
    dead_time: Union[float, List[float]] = 5.0
    sample_period: float = Field(1.0, gt=0.0)
    noise_std: Union[float, List[float]] = 0.0
    nonlinearity: NonlinearitySection = NonlinearitySection()


class ExcitationSection(_Section):
    kind: Literal["prbs", "multisine", "step", "chirp"] = "prbs"
    duration: int = Field(1000, ge=1)
    period: int = Field(1, ge=1)
    amplitude: float = 1.0
    frequencies: List[float] = []
    amplitudes: List[float] = []
    phases: Optional[List[float]] = None
    time: int = 0
    level: float = 1.0
    f0: float = 0.0
    f1: float = 0.1
    offset: float = 0.0


class RankPolicySection(_Section):
    kind: Literal["energy", "hard_threshold", "fixed", "full"] = "energy"
    tau: float = Field(0.999, gt=0.0, le=1.0)
    rank: Optional[int] = Field(None, ge=1)


class EmbeddingSection(_Section):
    m: int = Field(25, ge=1)
    include_inputs: bool = True
    rank_policy: RankPolicySection = RankPolicySection()
    normalization: Literal["none", "zscore", "minmax"] = "none"


class ReferenceSection(_Section):
    kind: Literal["constant", "step", "file"] = "constant"
    value: float = 1.0
    initial: float = 0.0
    time: int = 0
    path: Optional[Path] = None
    column: str = "r1"

    @model_validator(mode="after")
    def _file_needs_path(self):
        if self.kind == "file" and self.path is None:
            raise ValueError("reference kind 'file' needs a path")
        return self


class MpcSection(_Section):
    N: int = Field(60, ge=1)
    Q: Weight = 1.0
    R: Weight = 1e-4
    R_delta: Weight = 0.0
    u_min: Union[float, List[float]] = -math.inf
    u_max: Union[float, List[float]] = math.inf
    max_iter: Optional[int] = Field(None, ge=1)
    reference: ReferenceSection = ReferenceSection()


class BenchSection(_Section):
    m_values: List[int] = [5, 10, 20, 40, 80]
    rank: int = Field(8, ge=1)
    n_solves: int = Field(50, ge=1)
    N: int = Field(20, ge=1)

    @field_validator("m_values")
    @classmethod
    def _positive(cls, v):
        if not v or any(m < 1 for m in v):
            raise ValueError("m_values must be a non-empty list of positive integers")
        return v


class RunConfig(_Section):
    run: RunSection = RunSection()
    dataset: Optional[DatasetSection] = None
    plant: Optional[PlantSection] = None
    excitation: ExcitationSection = ExcitationSection()
    embedding: EmbeddingSection = EmbeddingSection()
    mpc: MpcSection = MpcSection()
    bench: BenchSection = BenchSection()

    base_dir: Path = Path(".")

    # -- domain objects; constructing them validates every numeric field ------

    def hankel(self) -> HankelConfig:
        return HankelConfig(self.embedding.m, self.embedding.include_inputs)

    def rank_policy(self) -> RankPolicy:
        rp = self.embedding.rank_policy
        return RankPolicy(rp.kind, tau=rp.tau, rank=rp.rank)

    def resolve(self, path: Path) -> Path:
        return path if path.is_absolute() else self.base_dir / path

    def make_plant(self, seed_offset: int = 1) -> DelayPlant:
        if self.plant is None:
            raise ConfigError("config has no plant section")
        p = self.plant
        nl = Nonlinearity(p.nonlinearity.kind, p.nonlinearity.lo, p.nonlinearity.hi)
        return DelayPlant(p.gain, p.time_constant, p.dead_time, p.sample_period, p.noise_std,
                          nl, seed=self.run.seed + seed_offset)

    def excitation_spec(self) -> ExcitationSpec:
        e = self.excitation
        return ExcitationSpec(
            e.kind, e.duration, period=e.period, amplitude=e.amplitude, seed=self.run.seed,
            frequencies=tuple(e.frequencies), amplitudes=tuple(e.amplitudes),
            phases=None if e.phases is None else tuple(e.phases),
            time=e.time, level=e.level, f0=e.f0, f1=e.f1, offset=e.offset,
        )

    def mpc_config(self, n_u: int = 1, n_y: int = 1, horizon: Optional[int] = None) -> MpcConfig:
        m = self.mpc
        return MpcConfig(horizon or m.N, n_u=n_u, n_y=n_y, Q=m.Q, R=m.R, R_delta=m.R_delta,
                         u_min=m.u_min, u_max=m.u_max, max_iter=m.max_iter)

    def reference(self, steps: int, n_y: int = 1) -> np.ndarray:
        ref = self.mpc.reference
        if ref.kind == "constant":
            return np.full((steps + 1, n_y), ref.value)
        if ref.kind == "step":
            k = np.arange(steps + 1)
            return np.repeat(np.where(k >= ref.time, ref.value, ref.initial)[:, None], n_y, axis=1)
        with self.resolve(ref.path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or ref.column not in rows[0]:
            raise ConfigError(f"reference file {ref.path} has no column {ref.column!r}")
        vals = np.array([float(r[ref.column]) for r in rows], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ConfigError(f"reference file {ref.path} contains non-finite values")
        return np.repeat(vals[:, None], n_y, axis=1)

    def validate_domain(self, needs: set = frozenset()) -> None:
        """Build every domain object the selected command needs so bad values fail early."""
        self.hankel()
        self.rank_policy()
        if self.plant is not None:
            n = self.make_plant().n_channels
        else:
            n = 1
        self.excitation_spec()
        self.mpc_config(n, n)
        if "data" in needs and self.dataset is None and self.plant is None:
            raise ConfigError("config needs either a dataset section or a plant section")
        if "plant" in needs and self.plant is None:
            raise ConfigError("this command needs a plant section")
        if self.dataset is not None and "data" in needs:
            path = self.resolve(self.dataset.path)
            if not path.exists():
                raise ConfigError(f"dataset file {path} does not exist")
        if self.mpc.reference.kind == "file" and "reference" in needs:
            path = self.resolve(self.mpc.reference.path)
            if not path.exists():
                raise ConfigError(f"reference file {path} does not exist")


def load_config(path, needs: set = frozenset()) -> RunConfig:
    """Parse, validate and apply the ``HAVOK_MPC_SEED`` override."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    raw = dict(raw)
    raw["base_dir"] = path.parent
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
        raw.setdefault("run", {})
        raw["run"] = {**(raw["run"] or {}), "seed": seed}
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from None
    try:
        cfg.validate_domain(needs)
    except ConfigError:
        raise
    except (HavokMpcError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from None
    return cfg
