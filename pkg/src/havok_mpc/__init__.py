"""Data-driven predictive control for systems with unknown transport delay."""
from .dataset import NormalizationSpec, TimeSeriesDataset, load_csv, normalize, split, write_csv
from .embedding import DelayEmbedding, HankelConfig, RankPolicy, build_hankel, choose_rank
from .havok import FitReport, HavokModel, embed_initial_state, fit, load_model, save_model, simulate
from .mpc import MpcConfig, MpcController, build_prediction, mpc_step
from .plant import DelayPlant, ExcitationSpec, generate_excitation, run_closed_loop, run_experiment

__version__ = "0.1.0"
