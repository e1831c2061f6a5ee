from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from snntopo import archspec, maskgen
from snntopo.archspec import LayerKind, LayerSpec, ShortcutKind
from snntopo.encoder import (BipartiteGraph, EncodingError, build_layerwise, build_mge, encode_conv,
                             encode_linear, encode_rolled, encode_rolled_channel, load_graph,
                             pooling_bridge, residual_edges, save_graph)
from snntopo.maskgen import MaskLayer


def _mask(shape, dense=None, index=0, weights=None):
    if dense is None:
        dense = np.ones(shape, dtype=bool)
    idx = np.flatnonzero(np.asarray(dense).ravel()).astype(np.int64)
    return MaskLayer(index, tuple(shape), idx, weights)


def _conv(c_in, c_out, k, s=1, p=0):
    return LayerSpec(LayerKind.CONV, c_in=c_in, c_out=c_out, h_ker=k, w_ker=k, stride=s, padding=p)


FIG1 = _conv(3, 2, 2)


def test_linear_identity_mask():
    g = encode_linear(_mask((2, 2), np.eye(2)))
    assert g.edge_set() == {(0, 0), (1, 1)}


def test_linear_empty_mask():
    assert encode_linear(_mask((3, 3), np.zeros((3, 3)))).n_edges == 0


def test_linear_random_positions():
    rng = np.random.default_rng(0)
    dense = np.zeros(16, dtype=bool)
    dense[rng.choice(16, 7, replace=False)] = True
    dense = dense.reshape(4, 4)
    g = encode_linear(_mask((4, 4), dense))
    assert g.n_edges == 7
    assert g.edge_set() == {(int(a), int(b)) for a, b in zip(*np.nonzero(dense))}


def test_figure1_sizes():
    g = encode_conv(_mask(FIG1.weight_shape), FIG1, (3, 3, 3))
    assert (g.n_left, g.n_right, g.n_edges) == (27, 8, 96)


def test_figure1_pruned_kernel_channel():
    dense = np.ones(FIG1.weight_shape, dtype=bool)
    dense[0, 0] = False
    g = encode_conv(_mask(FIG1.weight_shape, dense), FIG1, (3, 3, 3))
    assert g.n_edges == 96 - 16


def test_conv_empty_mask():
    g = encode_conv(_mask(FIG1.weight_shape, np.zeros(FIG1.weight_shape)), FIG1, (3, 3, 3))
    assert g.n_edges == 0 and g.n_right == 8


def test_conv_rejects_channel_mismatch():
    with pytest.raises(EncodingError):
        encode_conv(_mask(FIG1.weight_shape), FIG1, (3, 3, 2))


def test_conv_rejects_empty_output():
    layer = _conv(1, 1, 3)
    with pytest.raises(EncodingError):
        encode_conv(_mask(layer.weight_shape), layer, (2, 2, 1))


def test_conv_without_padding_nodes():
    layer = _conv(2, 3, 3, p=1)
    rng = np.random.default_rng(1)
    dense = rng.random(layer.weight_shape) < 0.5
    padded = encode_conv(_mask(layer.weight_shape, dense), layer, (5, 5, 2))
    bare = encode_conv(_mask(layer.weight_shape, dense), layer, (5, 5, 2), include_padding=False)
    assert bare.n_left == 50 and padded.n_left == 2 * 7 * 7
    real = ~padded.left_padding()
    assert bare.n_edges == int(real[padded.src].sum())


def test_weighted_encoding_same_edges():
    layer = _conv(2, 2, 3, s=2, p=1)
    rng = np.random.default_rng(2)
    dense = rng.random(layer.weight_shape) < 0.6
    idx = np.flatnonzero(dense.ravel())
    theta = rng.normal(size=idx.size)
    mask = MaskLayer(0, layer.weight_shape, idx.astype(np.int64), theta)
    plain = encode_conv(mask, layer, (6, 6, 2))
    weighted = encode_conv(mask, layer, (6, 6, 2), weighted=True)
    assert np.array_equal(plain.src, weighted.src) and np.array_equal(plain.dst, weighted.dst)
    # every weight is one of the kernel values, and each kernel value appears once per step
    counts = Counter(weighted.weight.tolist())
    assert set(counts) == set(theta.tolist())
    assert len(set(counts.values())) == 1


def test_dense_edge_count_closed_form():
    layer = _conv(3, 4, 3, s=1, p=0)
    g = encode_conv(_mask(layer.weight_shape), layer, (8, 8, 3))
    assert g.n_edges == layer.n_weights * 6 * 6


@settings(max_examples=150, deadline=None)
@given(h=st.integers(1, 8), w=st.integers(1, 8), c_in=st.integers(1, 4), c_out=st.integers(1, 4),
       k=st.integers(1, 3), s=st.integers(1, 2), p=st.integers(0, 2), seed=st.integers(0, 2 ** 31))
def test_conv_matches_oracle(h, w, c_in, c_out, k, s, p, seed):
    if h + 2 * p < k or w + 2 * p < k:
        return
    layer = _conv(c_in, c_out, k, s, p)
    dense = np.random.default_rng(seed).random(layer.weight_shape) < 0.5
    g = encode_conv(_mask(layer.weight_shape, dense), layer, (h, w, c_in))
    assert sorted(zip(g.src.tolist(), g.dst.tolist())) == oracles.conv_edges(dense, h, w, p, s)


def _pool_pair(h=4, c=2, window=2, stride=2):
    first = _conv(1, c, 1)
    g_i = encode_conv(_mask(first.weight_shape), first, (h, h, 1))
    ph = (h - window) // stride + 1
    nxt = _conv(c, 3, 1)
    g_next = encode_conv(_mask(nxt.weight_shape), nxt, (ph, ph, c))
    pool = LayerSpec(LayerKind.POOL, h_ker=window, w_ker=window, stride=stride)
    return g_i, pool, g_next


def test_pooling_bridge_replicates_per_window():
    g_i, pool, g_next = _pool_pair()
    bridged = pooling_bridge(g_i, pool, g_next)
    assert bridged.n_left == g_i.n_right
    assert bridged.n_edges == 4 * g_next.n_edges
    # window enumeration: pooled cell (c, y, x) covers the 2x2 block at (2y, 2x)
    want = []
    for u, v in zip(g_next.src.tolist(), g_next.dst.tolist()):
        c, rem = divmod(u, 4)
        y, x = divmod(rem, 2)
        for dy in range(2):
            for dx in range(2):
                want.append((c * 16 + (2 * y + dy) * 4 + 2 * x + dx, v))
    assert sorted(zip(bridged.src.tolist(), bridged.dst.tolist())) == sorted(want)


def test_pooling_bridge_identity_window():
    g_i, pool, g_next = _pool_pair(window=1, stride=1)
    bridged = pooling_bridge(g_i, pool, g_next)
    assert bridged.edge_set() == g_next.edge_set()


def test_pooling_bridge_overlapping_windows():
    g_i, pool, g_next = _pool_pair(h=5, window=3, stride=2)
    bridged = pooling_bridge(g_i, pool, g_next)
    assert bridged.n_edges == 9 * g_next.n_edges


def test_pooling_bridge_geometry_mismatch():
    g_i, _, g_next = _pool_pair()
    with pytest.raises(EncodingError):
        pooling_bridge(g_i, LayerSpec(LayerKind.POOL, h_ker=3, w_ker=3, stride=3), g_next)


def test_residual_identity_edges():
    layer = _conv(2, 2, 3, p=1)
    g = encode_conv(_mask(layer.weight_shape), layer, (4, 4, 2))
    res = residual_edges(g, g, LayerSpec(LayerKind.RESIDUAL, source=0, target=1))
    assert res.n_edges == 4 * 4 * 2
    assert res.n_left == g.n_left and res.n_right == g.n_right
    assert not g.left_padding()[res.src].any()


def test_residual_projection_edges():
    first = _conv(2, 4, 3, p=1)
    g_i = encode_conv(_mask(first.weight_shape), first, (4, 4, 2))
    short = LayerSpec(LayerKind.RESIDUAL, source=0, target=1, shortcut=ShortcutKind.PROJECTION,
                      c_in=2, c_out=4)
    proj = _mask(short.weight_shape, index=5)
    res = residual_edges(g_i, g_i, short, proj)
    assert res.n_edges == 4 * 4 * 2 * 4
    empty = _mask(short.weight_shape, np.zeros(short.weight_shape), index=5)
    assert residual_edges(g_i, g_i, short, empty).n_edges == 0


def test_residual_identity_shape_mismatch():
    a = _conv(2, 2, 3, p=1)
    b = _conv(2, 4, 3, p=1)
    g_a = encode_conv(_mask(a.weight_shape), a, (4, 4, 2))
    g_b = encode_conv(_mask(b.weight_shape), b, (4, 4, 2))
    with pytest.raises(EncodingError):
        residual_edges(g_a, g_b, LayerSpec(LayerKind.RESIDUAL, source=0, target=1))


def test_rolled_sizes():
    layer = _conv(3, 2, 3)
    g = encode_rolled(_mask(layer.weight_shape))
    assert (g.n_left, g.n_right, g.n_edges) == (27, 2, 54)


def test_rolled_channel_loses_pruned_channel():
    layer = _conv(3, 2, 3)
    dense = np.ones(layer.weight_shape, dtype=bool)
    full = encode_rolled_channel(_mask(layer.weight_shape, dense))
    dense[1, 2] = False
    cut = encode_rolled_channel(_mask(layer.weight_shape, dense))
    assert full.n_edges - cut.n_edges == 1
    empty = _mask(layer.weight_shape, np.zeros(layer.weight_shape))
    assert encode_rolled(empty).n_edges == 0 and encode_rolled_channel(empty).n_edges == 0


def test_rolled_channel_weight_is_l1_norm():
    layer = _conv(1, 1, 2)
    mask = MaskLayer(0, layer.weight_shape, np.arange(4), np.array([1.0, -2.0, 0.5, 3.0]))
    g = encode_rolled_channel(mask, weighted=True)
    assert g.weight.tolist() == [6.5]


def test_conv6_first_partition():
    spec = archspec.load_bundled("conv6")
    mask = maskgen.generate_erk(spec, 0.9, seed=0)
    assert build_mge(spec, mask, include_padding=False).partition_sizes[0] == 3072
    # with padding nodes the first partition holds the padded 34x34x3 grid
    assert build_mge(spec, mask).partition_sizes[0] == 3 * 34 * 34


def test_tiny_chain_of_1x1_convs():
    spec = archspec.load_architecture({"name": "tiny", "input": [2, 2, 1], "layers": [
        {"kind": "conv", "c_out": 2, "kernel": 1}, {"kind": "conv", "c_out": 3, "kernel": 1}]})
    g = build_mge(spec, maskgen.full_mask(spec))
    assert g.partition_sizes.tolist() == [4, 8, 12]
    assert g.n_edges == 4 * 2 + 4 * 2 * 3
    # each pixel forms its own complete bipartite chain 1 -> 2 -> 3
    pix = (g.src - g.offsets[g.partition[g.src]]) % 4
    assert np.all(pix == (g.dst - g.offsets[g.partition[g.dst]]) % 4)


def test_mge_residual_edges_reach_target_output():
    spec = archspec.load_bundled("resnet20", input_size=(8, 8))
    g = build_mge(spec, maskgen.full_mask(spec))
    res = [grp for grp in g.groups if grp.kind == "residual"]
    assert len(res) == 9
    for grp in res:
        assert grp.dst_partition > grp.src_partition + 1


def test_layerwise_union():
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    mask = maskgen.generate_erk(spec, 0.9, seed=0)
    g = build_layerwise(spec, mask, "rolled")
    assert g.n_edges == sum(l.nnz for l in mask.layers)
    assert g.source_exempt.tolist() == [True, False] * 9


@pytest.mark.parametrize("suffix", [".npz", ".txt"])
@pytest.mark.parametrize("weighted", [False, True])
def test_graph_round_trip(tmp_path, suffix, weighted):
    spec = archspec.load_bundled("resnet20", input_size=(8, 8))
    mask = maskgen.generate_erk(spec, 0.9, seed=0)
    if weighted:
        mask = maskgen.attach_weights(mask, spec, seed=0)
    g = build_mge(spec, mask, weighted=weighted)
    again = load_graph(save_graph(g, tmp_path / f"g{suffix}"))
    assert np.array_equal(again.partition_sizes, g.partition_sizes)
    assert np.array_equal(again.src, g.src) and np.array_equal(again.dst, g.dst)
    assert np.array_equal(again.is_padding, g.is_padding)
    if weighted:
        assert np.array_equal(again.weight, g.weight)
    else:
        assert again.weight is None


def test_bipartite_check():
    with pytest.raises(EncodingError):
        BipartiteGraph(2, 2, np.array([0, 2]), np.array([0, 1])).check()
