"""Small builders shared by several test modules."""
import numpy as np

from havok_mpc.dataset import NormalizationSpec
from havok_mpc.embedding import DelayEmbedding, HankelConfig
from havok_mpc.havok import HavokModel
from havok_mpc.plant import ExcitationSpec, generate_excitation


def prbs(n, seed=0, period=1):
    return generate_excitation(ExcitationSpec("prbs", n, period=period, seed=seed))


def state_model(A, B, C):
    """Model whose coordinates are an arbitrary state; depth-1 output-only embedding."""
    A, B, C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C))
    r, n_u, n_y = A.shape[0], B.shape[1], C.shape[0]
    cfg = HankelConfig(1, include_inputs=False)
    U = np.eye(n_y, r)
    emb = DelayEmbedding(cfg, U, np.ones(r), None, r, np.ones(r), n_y, n_u)
    return HavokModel(A, B, C, emb, 1.0, NormalizationSpec.identity(n_u, n_y))


def scalar_model(a=0.5, b=1.0, c=1.0):
    return state_model([[a]], [[b]], [[c]])
