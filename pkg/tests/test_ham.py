"""Hierarchical attention oracles: dense materialization of the anchored
attention maps, branch contracts, and block-level gradient checks."""

import numpy as np
import pytest

from hapnet import tensor as T
from hapnet.errors import ConfigError, ShapeError
from hapnet.flops import anchored_attention_flops, dense_attention_flops
from hapnet.gradcheck import check_gradients
from hapnet.ham import (
    AnchoredAttention,
    GlobalBranch,
    HamBlock,
    HamConfig,
    LocalBranch,
    SpectralBranch,
    anchor_count,
    grid_anchor_count,
)
from hapnet.tensor import Tensor
from hapnet.verify import check_ham


def _softmax_rows(m):
    e = np.exp(m - m.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _pool_1d(q, s):
    return np.stack([q[a : a + s].mean(axis=0) for a in range(0, len(q), s)])


def dense_attention_oracle(x, attn, grid=None):
    """Materialize A, M_d, M_e densely per head with plain numpy."""
    tokens, dm = x.shape
    d = attn.head_dim

    def lin(m, layer):
        return m @ layer.weight.data + layer.bias.data

    q = lin(x, attn.wq).reshape(tokens, attn.heads, d).transpose(1, 0, 2)
    k = lin(x, attn.wk).reshape(tokens, attn.heads, d).transpose(1, 0, 2)
    v = lin(x, attn.wv).reshape(tokens, attn.heads, d).transpose(1, 0, 2)
    heads_out = []
    for h in range(attn.heads):
        if grid is None:
            anchors = _pool_1d(q[h], attn.s)
        else:
            gh, gw = grid
            qg = q[h].reshape(gh, gw, d)
            rows = np.stack([qg[i : i + attn.s].mean(axis=0) for i in range(0, gh, attn.s)])
            cells = np.stack(
                [rows[:, j : j + attn.s].mean(axis=1) for j in range(0, gw, attn.s)], axis=1
            )
            anchors = cells.reshape(-1, d)
        m_d = _softmax_rows(anchors @ k[h].T / np.sqrt(d))
        m_e = _softmax_rows(q[h] @ anchors.T / np.sqrt(d))
        heads_out.append(m_e @ (m_d @ v[h]))
    y = np.stack(heads_out, axis=0).transpose(1, 0, 2).reshape(tokens, dm)
    return lin(y, attn.wo)


# -- anchored attention -----------------------------------------------------------


def test_singleton_token_attention():
    rng = np.random.default_rng(0)
    attn = AnchoredAttention(4, 1, 3, rng)
    x = rng.standard_normal((1, 4))
    out, maps = attn.forward_with_maps(Tensor(x))
    assert np.array_equal(maps.m_d, np.ones((1, 1, 1, 1)))
    assert np.array_equal(maps.m_e, np.ones((1, 1, 1, 1)))
    # Y equals V for the single token, so the output is just the V then O projection.
    v = x @ attn.wv.weight.data + attn.wv.bias.data
    want = v @ attn.wo.weight.data + attn.wo.bias.data
    assert np.abs(out.data - want).max() < 1e-12


@pytest.mark.parametrize("seed,tokens,dm,heads,s", [
    (1, 6, 4, 1, 2),
    (2, 8, 8, 2, 2),
    (3, 7, 6, 2, 3),
    (4, 5, 8, 4, 4),
])
def test_matches_dense_materialization_oracle(seed, tokens, dm, heads, s):
    rng = np.random.default_rng(seed)
    attn = AnchoredAttention(dm, heads, s, np.random.default_rng(seed + 100))
    x = rng.standard_normal((tokens, dm))
    got = attn(Tensor(x)).data
    assert np.abs(got - dense_attention_oracle(x, attn)).max() < 1e-10


def test_grid_pooling_matches_dense_oracle():
    rng = np.random.default_rng(5)
    attn = AnchoredAttention(6, 2, 2, np.random.default_rng(55))
    x = rng.standard_normal((12, 6))
    got = attn(Tensor(x), grid=(3, 4)).data
    assert np.abs(got - dense_attention_oracle(x, attn, grid=(3, 4))).max() < 1e-10


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_attention_maps_row_stochastic(seed):
    rng = np.random.default_rng(seed)
    attn = AnchoredAttention(8, 2, 2, np.random.default_rng(seed + 10))
    x = rng.standard_normal((2, 9, 8)) * 3
    _, maps = attn.forward_with_maps(Tensor(x))
    for m in (maps.m_d, maps.m_e):
        assert (m >= 0).all()
        assert np.abs(m.sum(axis=-1) - 1.0).max() < 1e-6


def test_output_rows_in_convex_hull_of_v_rows():
    rng = np.random.default_rng(6)
    attn = AnchoredAttention(6, 2, 2, np.random.default_rng(66))
    x = rng.standard_normal((7, 6))
    _, maps = attn.forward_with_maps(Tensor(x))
    # combined map M_e @ M_d is row-stochastic, so Y rows are convex combos of V rows
    combined = maps.m_e @ maps.m_d
    assert (combined >= -1e-12).all()
    assert np.abs(combined.sum(axis=-1) - 1.0).max() < 1e-6
    v = (x @ attn.wv.weight.data + attn.wv.bias.data).reshape(7, 2, 3).transpose(1, 0, 2)
    for h in range(2):
        y = maps.y[0, h]
        lo, hi = v[h].min(axis=0), v[h].max(axis=0)
        assert (y >= lo - 1e-6).all() and (y <= hi + 1e-6).all()


def test_s1_pooling_is_identity_so_anchors_equal_queries():
    rng = np.random.default_rng(7)
    attn = AnchoredAttention(4, 2, 1, np.random.default_rng(77))
    x = rng.standard_normal((5, 4))
    got = attn(Tensor(x)).data
    assert np.abs(got - dense_attention_oracle(x, attn)).max() < 1e-10
    assert anchor_count(5, 1) == 5


@pytest.mark.parametrize("tokens,s", [(1, 2), (6, 2), (7, 2), (121, 2), (9, 3), (10, 4)])
def test_anchor_count_is_ceil(tokens, s):
    rng = np.random.default_rng(8)
    dm = 4
    attn = AnchoredAttention(dm, 1, s, np.random.default_rng(88))
    x = rng.standard_normal((tokens, dm))
    _, maps = attn.forward_with_maps(Tensor(x))
    expected = -(-tokens // s)
    assert maps.m_d.shape[2] == expected == anchor_count(tokens, s)


def test_empty_tokens_rejected():
    attn = AnchoredAttention(4, 1, 2, np.random.default_rng(9))
    with pytest.raises(ShapeError):
        attn(Tensor(np.zeros((0, 4))))


# -- branches ---------------------------------------------------------------------


def test_global_branch_single_spatial_token():
    rng = np.random.default_rng(10)
    cfg = HamConfig(heads=1, s_spatial=2)
    branch = GlobalBranch(3, cfg, np.random.default_rng(101))
    x = rng.standard_normal((3, 1, 1))
    out = branch(Tensor(x))
    attn = branch.attn
    token = x.reshape(3, 1).T
    v = token @ attn.wv.weight.data + attn.wv.bias.data
    want = (v @ attn.wo.weight.data + attn.wo.bias.data).T.reshape(3, 1, 1)
    assert np.abs(out.data - want).max() < 1e-12


def test_global_branch_shape_preserved():
    rng = np.random.default_rng(11)
    branch = GlobalBranch(8, HamConfig(), np.random.default_rng(111))
    x = rng.standard_normal((8, 11, 11))
    assert branch(Tensor(x)).shape == (8, 11, 11)
    xb = rng.standard_normal((2, 8, 11, 11))
    assert branch(Tensor(xb)).shape == (2, 8, 11, 11)


def test_global_branch_gradient():
    rng = np.random.default_rng(12)
    branch = GlobalBranch(4, HamConfig(heads=2), np.random.default_rng(121))
    x = rng.standard_normal((4, 4, 4))
    w = Tensor(rng.standard_normal((4, 4, 4)))
    res = check_gradients(lambda inp: T.tensor_sum(branch(inp) * w), [x], ["global_x"])
    assert all(r.passed for r in res), [str(r) for r in res]


def test_spectral_branch_single_channel():
    rng = np.random.default_rng(13)
    cfg = HamConfig(heads=1, s_spectral=2, spectral_width=4)
    branch = SpectralBranch(1, 3, 3, cfg, np.random.default_rng(131))
    x = rng.standard_normal((1, 3, 3))
    _, maps = branch.attn.forward_with_maps(
        branch.proj_in(Tensor(x.reshape(1, 1, 9)))
    )
    assert maps.m_d.shape == (1, 1, 1, 1) and np.array_equal(maps.m_d, np.ones((1, 1, 1, 1)))
    assert branch(Tensor(x)).shape == (1, 3, 3)


def test_spectral_branch_shape_preserved():
    rng = np.random.default_rng(14)
    branch = SpectralBranch(8, 11, 11, HamConfig(), np.random.default_rng(141))
    x = rng.standard_normal((8, 11, 11))
    assert branch(Tensor(x)).shape == (8, 11, 11)


def test_spectral_branch_matches_dense_oracle():
    rng = np.random.default_rng(15)
    cfg = HamConfig(heads=2, s_spectral=2, spectral_width=6)
    branch = SpectralBranch(4, 3, 3, cfg, np.random.default_rng(151))
    x = rng.standard_normal((4, 3, 3))
    tokens = x.reshape(4, 9) @ branch.proj_in.weight.data + branch.proj_in.bias.data
    core = dense_attention_oracle(tokens, branch.attn)
    want = (core @ branch.proj_out.weight.data + branch.proj_out.bias.data).reshape(4, 3, 3)
    got = branch(Tensor(x)).data
    assert np.abs(got - want).max() < 1e-10


def test_local_branch_identity_configuration():
    # Delta kernels keep the signal; a saturated gate bias forces sigmoid to 1.
    rng = np.random.default_rng(16)
    branch = LocalBranch(3, HamConfig(), np.random.default_rng(161))
    delta = np.zeros((3, 3, 3))
    delta[:, 1, 1] = 1.0
    branch.conv1.kernels.data = delta.copy()
    branch.conv2.kernels.data = delta.copy()
    branch.se.fc1.weight.data[:] = 0.0
    branch.se.fc1.bias.data[:] = 0.0
    branch.se.fc2.weight.data[:] = 0.0
    branch.se.fc2.bias.data[:] = 100.0  # sigmoid(100) == 1.0 in float64
    x = np.abs(rng.standard_normal((3, 5, 5)))  # non-negative so ReLU passes it
    out = branch(Tensor(x)).data
    assert np.array_equal(out, x)


def test_local_branch_gate_in_unit_interval():
    rng = np.random.default_rng(17)
    branch = LocalBranch(4, HamConfig(), np.random.default_rng(171))
    x = rng.standard_normal((4, 6, 6)) * 5
    gate = branch.se.gate(T.relu(branch.conv1(Tensor(x)))).data
    assert (gate > 0).all() and (gate < 1).all()


def test_local_branch_matches_compositional_oracle():
    rng = np.random.default_rng(18)
    branch = LocalBranch(4, HamConfig(), np.random.default_rng(181))
    x = rng.standard_normal((4, 5, 5))

    def conv(v, k):
        pad = np.pad(v, [(0, 0), (1, 1), (1, 1)], mode="reflect")
        out = np.zeros_like(v)
        for c in range(v.shape[0]):
            for i in range(v.shape[1]):
                for j in range(v.shape[2]):
                    out[c, i, j] = np.sum(pad[c, i : i + 3, j : j + 3] * k[c])
        return out

    h = conv(x, branch.conv1.kernels.data)
    h = np.maximum(h, 0)
    h = conv(h, branch.conv2.kernels.data)
    pooled = h.mean(axis=(1, 2))
    z = np.maximum(pooled @ branch.se.fc1.weight.data + branch.se.fc1.bias.data, 0)
    gate = 1 / (1 + np.exp(-(z @ branch.se.fc2.weight.data + branch.se.fc2.bias.data)))
    want = h * gate[:, None, None]
    got = branch(Tensor(x)).data
    assert np.abs(got - want).max() < 1e-10


# -- full block ---------------------------------------------------------------------


def test_all_branches_disabled_rejected():
    with pytest.raises(ConfigError):
        HamConfig(use_global=False, use_spectral=False, use_local=False)


def test_block_shape_preserved():
    rng = np.random.default_rng(19)
    block = HamBlock(16, 11, 11, HamConfig(), np.random.default_rng(191))
    x = rng.standard_normal((16, 11, 11))
    assert block(Tensor(x)).shape == (16, 11, 11)
    xb = rng.standard_normal((3, 16, 11, 11))
    assert block(Tensor(xb)).shape == (3, 16, 11, 11)


def test_disabled_branches_contribute_zero():
    rng = np.random.default_rng(20)
    x = rng.standard_normal((2, 4, 5, 5))
    block = HamBlock(4, 5, 5, HamConfig(use_spectral=False, use_local=False),
                     np.random.default_rng(201))
    assert block.spectral_branch is None and block.local_branch is None
    xt = Tensor(x)
    mid = xt + block.global_branch(block.norm1(xt))
    manual = (mid + block._ffn(block.norm2(mid))).data
    got = block(Tensor(x)).data
    assert np.array_equal(got, manual)


def test_block_gradients_and_parameter_gradients():
    results = check_ham(seed=0)
    failures = [str(r) for r in results if not r.passed]
    assert not failures, "\n".join(failures)


# -- complexity accounting ------------------------------------------------------------


def test_grid_anchored_flops_beat_dense_for_s2():
    # token grids with >= 4 tokens, anchor factor 2 per side
    for gh, gw in [(2, 2), (2, 3), (3, 3), (4, 5), (11, 11)]:
        tokens = gh * gw
        anchors = grid_anchor_count((gh, gw), 2)
        for width in (8, 32, 128):
            assert anchored_attention_flops(tokens, width, anchors) < dense_attention_flops(
                tokens, width
            ), (gh, gw, width)


def test_token_anchored_flops_beat_dense_when_anchors_below_half():
    for tokens, s in [(9, 3), (12, 3), (16, 4), (121, 3)]:
        anchors = anchor_count(tokens, s)
        assert 2 * anchors < tokens
        for width in (8, 64):
            assert anchored_attention_flops(tokens, width, anchors) < dense_attention_flops(
                tokens, width
            )
