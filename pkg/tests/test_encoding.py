import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfcmri.encoding import (
    InvalidParamsError, StiffEncoder, StiffParams, build_encoder, encode_gff, encode_stiff,
    resolve_sizes,
)


def brute_sizes(p_s, L):
    target = int(np.floor(p_s * L / 200 + 0.5))
    feasible = [m for m in range(L // 2 + 1) if (L - 2 * m) % 4 == 0]
    if not feasible:
        return None
    best = min(feasible, key=lambda m: (abs(m - target), m))
    return best, (L - 2 * best) // 4


@pytest.mark.parametrize("p_s, L, want", [
    (100, 800, (400, 0, 100.0)),
    (67, 800, (268, 66, 67.0)),
    (90, 600, (270, 15, 90.0)),
])
def test_resolve_sizes_examples(p_s, L, want):
    assert resolve_sizes(p_s, L) == want
    assert resolve_sizes(p_s, L)[:2] == brute_sizes(p_s, L)


@settings(max_examples=200)
@given(st.floats(0, 100), st.integers(6, 2000))
def test_resolve_sizes_matches_brute_force(p_s, L):
    want = brute_sizes(p_s, L)
    if want is None:  # odd L
        with pytest.raises(InvalidParamsError):
            resolve_sizes(p_s, L)
        return
    m_s, m_d, eff = resolve_sizes(p_s, L)
    assert 2 * m_s + 4 * m_d == L
    assert (m_s, m_d) == want
    assert eff == pytest.approx(200 * m_s / L)


@pytest.mark.parametrize("p_s, L", [(-1, 800), (101, 800), (50, 4), (50, 7.5)])
def test_resolve_sizes_rejects(p_s, L):
    with pytest.raises(InvalidParamsError):
        resolve_sizes(p_s, L)


def test_sigma_zero_gives_zero_matrices():
    enc = build_encoder(StiffParams(67, 100, 0.0))
    assert not enc.B_s.any() and not enc.B_d.any()


def test_seeded_encoder_deterministic():
    a = build_encoder(StiffParams(67, 800, 6.5, seed=3))
    b = build_encoder(StiffParams(67, 800, 6.5, seed=3))
    assert np.array_equal(a.B_s, b.B_s) and np.array_equal(a.B_d, b.B_d)


def test_static_block_shared_across_splits():
    a = build_encoder(StiffParams(100, 800, 6.5))
    b = build_encoder(StiffParams(67, 800, 6.5))
    assert np.array_equal(a.B_s[:b.m_s], b.B_s)


def test_frequency_spread():
    enc = build_encoder(StiffParams(67, 800, 6.5))
    entries = np.concatenate([enc.B_s.ravel(), enc.B_d.ravel()])
    assert abs(entries.std(ddof=1) - 6.5) <= 0.65


def test_matrices_frozen():
    enc = build_encoder(StiffParams(50, 40, 2.0))
    with pytest.raises(ValueError):
        enc.B_s[0, 0] = 1.0


def test_gff_at_origin():
    B = np.random.default_rng(0).normal(size=(5, 2))
    assert encode_gff([0.0, 0.0], B).tolist() == [1.0] * 5 + [0.0] * 5


def test_gff_zero_matrix():
    assert encode_gff([0.3, -0.8], np.zeros((3, 2))).tolist() == [1.0] * 3 + [0.0] * 3


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.integers(0, 1000))
def test_gff_accepts_space_time_input(x, seed):
    B = np.random.default_rng(seed).normal(0, 5, size=(7, 3))
    f = encode_gff(x, B)
    assert f.shape == (14,)
    assert np.all(np.abs(f) <= 1)
    assert np.allclose(f[:7] ** 2 + f[7:] ** 2, 1.0, atol=1e-12)


def test_stiff_length_and_layout():
    enc = build_encoder(StiffParams(67, 800, 6.5))
    f = encode_stiff([0.0, 0.0], 0.25, enc)
    assert f.shape == (800,)
    m_s, m_d = enc.m_s, enc.m_d
    static = f[:2 * m_s]
    dyn = f[2 * m_s:].reshape(4, m_d)
    assert static.tolist() == [1.0] * m_s + [0.0] * m_s
    assert np.allclose(dyn[0], 0, atol=1e-15) and np.allclose(dyn[1], 1)
    assert np.allclose(dyn[2:], 0)


def test_stiff_period_one_bitwise_at_integer_phases():
    enc = build_encoder(StiffParams(67, 200, 6.5))
    x = np.random.default_rng(0).uniform(-1.5, 1.5, size=(100, 2))
    assert np.array_equal(encode_stiff(x, 0.0, enc), encode_stiff(x, 1.0, enc))
    assert np.array_equal(encode_stiff(x, 0.0, enc), encode_stiff(x, 3.0, enc))


def test_stiff_periodicity_random():
    enc = build_encoder(StiffParams(67, 200, 6.5))
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(10_000, 2))
    t = rng.uniform(0, 1, size=10_000)
    k = rng.integers(-5, 6, size=10_000)
    assert np.max(np.abs(encode_stiff(x, t, enc) - encode_stiff(x, t + k, enc))) <= 1e-12


def test_all_static_is_time_independent():
    enc = build_encoder(StiffParams(100, 64, 4.0))
    assert enc.m_d == 0
    x = np.random.default_rng(2).uniform(-1, 1, size=(20, 2))
    assert np.array_equal(encode_stiff(x, 0.1, enc), encode_stiff(x, 0.77, enc))


def test_block_norm_identities():
    enc = build_encoder(StiffParams(67, 800, 6.5))
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.5, 1.5, size=(10_000, 2))
    t = rng.uniform(-2, 2, size=10_000)
    f = encode_stiff(x, t, enc)
    m_s, m_d = enc.m_s, enc.m_d
    s = f[:, :m_s] ** 2 + f[:, m_s:2 * m_s] ** 2
    d = (f[:, 2 * m_s:].reshape(-1, 4, m_d) ** 2).sum(axis=1)
    assert np.max(np.abs(s - 1)) <= 1e-12
    assert np.max(np.abs(d - 1)) <= 1e-12
    assert np.all(np.abs(f) <= 1)


def test_stiff_broadcasts_time_per_point():
    enc = build_encoder(StiffParams(50, 40, 2.0))
    x = np.random.default_rng(4).uniform(-1, 1, size=(6, 2))
    t = np.linspace(0, 1, 6)
    batch = encode_stiff(x, t, enc)
    for i in range(6):
        assert np.allclose(batch[i], encode_stiff(x[i], t[i], enc))


def test_float32_path_close_to_float64():
    enc = build_encoder(StiffParams(67, 800, 6.5))
    x = np.random.default_rng(5).uniform(-1, 1, size=(50, 2))
    f64 = encode_stiff(x, 0.3, enc)
    f32 = encode_stiff(x, 0.3, enc, dtype=np.float32)
    assert f32.dtype == np.float32
    assert np.max(np.abs(f64 - f32)) < 1e-4


def test_encoder_call_and_properties():
    enc = StiffEncoder(np.ones((3, 2)), np.zeros((2, 2)), StiffParams(60, 14, 1.0))
    assert enc.length == 14 and enc.m_s == 3 and enc.m_d == 2
    assert enc.effective_p_s == pytest.approx(200 * 3 / 14)
    assert np.array_equal(enc([0.1, 0.2], 0.5), encode_stiff([0.1, 0.2], 0.5, enc))
