import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from havok_mpc.embedding import (
    DelayEmbedding,
    HankelConfig,
    RankPolicy,
    build_delay_matrix,
    build_hankel,
    choose_rank,
    delay_vector,
    embed,
    gavish_donoho_omega,
    lift,
    load_embedding,
    project,
    save_embedding,
    svd_factorize,
)
from havok_mpc.errors import DataError, DegenerateError, SizeError


def test_hankel_examples():
    np.testing.assert_array_equal(build_hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])
    H = build_hankel([5, 5, 5], 2)
    np.testing.assert_array_equal(H, [[5, 5], [5, 5]])
    assert np.linalg.matrix_rank(H) == 1
    s = np.arange(1.0, 6.0)
    H = build_hankel(s, 3)
    assert H.shape == (3, 3)
    for i in range(3):
        for j in range(3):
            assert H[i, j] == s[i + j]


def test_hankel_too_deep():
    with pytest.raises(SizeError):
        build_hankel([1.0, 2.0], 3)


def test_hankel_multichannel_layout():
    x = np.array([[1, 10], [2, 20], [3, 30]], dtype=float)
    H = build_hankel(x, 2)
    # channel-major within each time block, oldest block on top
    np.testing.assert_array_equal(H[:, 0], [1, 10, 2, 20])
    np.testing.assert_array_equal(H[:, 1], [2, 20, 3, 30])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(2, 25), st.data())
def test_hankel_shift_law(n_ch, n, data):
    m = data.draw(st.integers(1, n))
    x = data.draw(arrays(float, (n, n_ch), elements=st.floats(-100, 100)))
    H = build_hankel(x, m)
    assert H.shape == (m * n_ch, n - m + 1)
    for i in range(H.shape[0] - n_ch):
        for j in range(H.shape[1] - 1):
            assert H[i + n_ch, j] == H[i, j + 1]


def test_delay_matrix_excludes_current_input():
    y = np.arange(10.0)[:, None]
    u = 100 + np.arange(10.0)[:, None]
    cfg = HankelConfig(3, include_inputs=True)
    H = build_delay_matrix(y, u, cfg)
    assert H.shape == (3 + 2, 8)
    # column j <-> time k = j + 2: y_{k-2..k}, u_{k-2..k-1}
    np.testing.assert_array_equal(H[:, 0], [0, 1, 2, 100, 101])
    np.testing.assert_array_equal(H[:, -1], [7, 8, 9, 107, 108])
    np.testing.assert_array_equal(delay_vector(y, u[:-1], cfg), H[:, -1])
    assert build_delay_matrix(y, u, HankelConfig(3, include_inputs=False)).shape == (3, 8)


def test_svd_examples():
    _, S, _ = svd_factorize(np.eye(3))
    np.testing.assert_allclose(S, [1, 1, 1])
    _, S, _ = svd_factorize(np.outer([1, 2], [3, 4]))
    # rank one outer product: sigma = |a| |b|
    oracle = math.sqrt(1 + 4) * math.sqrt(9 + 16)
    assert oracle == pytest.approx(5 * math.sqrt(5))
    assert np.sum(S > 1e-12) == 1
    assert S[0] == pytest.approx(oracle, rel=1e-14)
    _, S, _ = svd_factorize(np.zeros((3, 2)))
    np.testing.assert_array_equal(S, 0)
    with pytest.raises(DataError):
        svd_factorize(np.array([[1.0, np.nan]]))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_svd_reconstruction_and_tail_energy(rows, cols, seed, scale):
    H = np.random.default_rng(seed).standard_normal((rows, cols)) * scale
    U, S, V = svd_factorize(H)
    err = np.linalg.norm(U * S @ V.T - H)
    assert err <= 1e-10 * max(1.0, np.linalg.norm(H))
    assert np.all(np.diff(S) <= 0) and np.all(S >= 0)
    assert np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) < 1e-10
    total = np.sum(S**2)
    for r in {1, max(1, len(S) // 2), len(S)}:
        tail = np.linalg.norm(H - U[:, :r] * S[:r] @ V[:, :r].T) ** 2
        expected = np.sum(S[r:] ** 2)
        if expected > 1e-12 * total:
            assert abs(tail - expected) <= 1e-8 * expected
        else:
            assert tail <= 1e-20 * total


def test_svd_sign_convention_is_deterministic():
    H = np.random.default_rng(0).standard_normal((6, 9))
    U1, _, _ = svd_factorize(H)
    U2, _, _ = svd_factorize(H.copy())
    np.testing.assert_array_equal(U1, U2)
    idx = np.argmax(np.abs(U1), axis=0)
    assert np.all(U1[idx, np.arange(U1.shape[1])] > 0)


def _energy_oracle(S, tau):
    S = [s / max(S) for s in S]
    total = sum(s * s for s in S)
    acc = 0.0
    for r, s in enumerate(S, start=1):
        acc += s * s
        if acc / total >= tau:
            return r
    return len(S)


def test_choose_rank_examples():
    assert choose_rank([10, 1e-14], RankPolicy.energy(0.99)) == 1
    assert _energy_oracle([3, 3, 3], 0.5) == 2
    assert choose_rank([3, 3, 3], RankPolicy.energy(0.5)) == 2
    assert choose_rank([5, 4, 3], RankPolicy.fixed(10)) == 3
    assert choose_rank([5, 4, 3], RankPolicy.full()) == 3
    with pytest.raises(DegenerateError):
        choose_rank([0.0, 0.0], RankPolicy.energy(0.9))


def test_default_policy_is_energy_0999():
    assert RankPolicy() == RankPolicy.energy(0.999)


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=30), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_energy_rank_matches_oracle_and_is_monotone(values, t1, t2):
    S = sorted(values, reverse=True)
    if not any(s > 0 for s in S):
        return
    lo, hi = sorted((t1, t2))
    r_lo = choose_rank(S, RankPolicy.energy(lo))
    r_hi = choose_rank(S, RankPolicy.energy(hi))
    assert 1 <= r_lo <= r_hi <= len(S)
    r_oracle = _energy_oracle(S, lo)
    if r_lo != r_oracle:
        # only allowed where the cumulative share equals tau up to round-off
        top = max(S)
        share = sum((s / top) ** 2 for s in S[:r_lo]) / sum((s / top) ** 2 for s in S)
        assert abs(share - lo) < 1e-12


def test_hard_threshold():
    assert gavish_donoho_omega(1.0) == pytest.approx(0.56 - 0.95 + 1.82 + 1.43)
    S = np.array([50.0, 20.0] + [1.0] * 20)
    # median is 1, cutoff ~2.86 for a square matrix
    assert choose_rank(S, RankPolicy.hard_threshold(), shape=(22, 22)) == 2
    assert choose_rank(np.ones(5), RankPolicy.hard_threshold()) == 1
    # aspect ratio enters through omega(beta)
    beta = 22 / 400
    cut = gavish_donoho_omega(beta) * 1.0
    assert cut < 2.0
    S2 = np.array([50.0, 1.9] + [1.0] * 20)
    assert choose_rank(S2, RankPolicy.hard_threshold(), shape=(22, 400)) == 2


def _embedding(U, n_y=1, n_u=0, m=None):
    U = np.asarray(U, dtype=float)
    m = m or U.shape[0]
    cfg = HankelConfig(m, include_inputs=False)
    return DelayEmbedding(cfg, U, np.ones(U.shape[1]), None, U.shape[1], np.ones(U.shape[1]), n_y, n_u)


def test_project_and_lift_examples():
    emb = _embedding(np.eye(3))
    h = np.array([1.0, -2.0, 3.5])
    np.testing.assert_array_equal(project(emb, h), h)
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 4)))
    emb2 = _embedding(Q[:, :2])
    np.testing.assert_allclose(project(emb2, Q[:, 3]), 0, atol=1e-15)
    np.testing.assert_allclose(project(emb2, Q[:, 0]), [1, 0], atol=1e-15)
    np.testing.assert_array_equal(lift(emb2, np.zeros(2)), np.zeros(4))
    z = np.random.default_rng(2).standard_normal(2)
    np.testing.assert_allclose(project(emb2, lift(emb2, z)), z, atol=1e-12)
    emb3 = _embedding(Q)
    h = np.random.default_rng(3).standard_normal(4)
    np.testing.assert_allclose(lift(emb3, project(emb3, h)), h, atol=1e-12)
    with pytest.raises(SizeError):
        project(emb2, np.ones(3))
    with pytest.raises(SizeError):
        lift(emb2, np.ones(3))


def test_embedding_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    y, u = rng.standard_normal((40, 2)), rng.standard_normal((40, 1))
    cfg = HankelConfig(4, include_inputs=True)
    H = build_delay_matrix(y, u, cfg)
    emb = embed(H, cfg, 2, 1, RankPolicy.fixed(5))
    assert emb.U.shape == (4 * 2 + 3 * 1, 5)
    save_embedding(emb, tmp_path / "emb.json")
    back = load_embedding(tmp_path / "emb.json")
    np.testing.assert_array_equal(back.U, emb.U)
    np.testing.assert_array_equal(back.S, emb.S)
    assert back.config == emb.config and back.r == emb.r
    d = json.loads((tmp_path / "emb.json").read_text())
    assert d["schema_version"] == 1
    assert {"m", "include_inputs", "r", "U", "S"} <= set(d)


def test_hankel_config_validation():
    with pytest.raises(SizeError):
        HankelConfig(0)
    assert HankelConfig(3, True).n_rows(2, 1) == 3 * 2 + 2 * 1
    assert HankelConfig(1, True).n_rows(1, 1) == 1
