import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import graphdn.tensor as T
from graphdn.ecc import EccParams, FNet
from graphdn.errors import ShapeError
from graphdn.graph import NlgConfig, NonLocalGraph, build_knn_graph
from graphdn.layers import (BnParams, GcLayerParams, gc_layer_forward,
                            receptive_mask_step)
from graphdn.tensor import Tensor

from oracles import naive_batch_norm_train, naive_conv2d, naive_leaky_relu

CFG = NlgConfig(k=2, window_radius=2, exclusion_radius=1)


def _t(rng, shape, grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


def _layer(rng, d, with_bn=True):
    fnet = FNet(_t(rng, (d, d)), _t(rng, (d,)), _t(rng, (d * d, d)),
                d_out=d, d_in=d)
    ecc = EccParams(fnet, _t(rng, (d, d)), _t(rng, (d,)))
    bn = BnParams(Tensor(np.ones(d)), Tensor(np.zeros(d))) if with_bn else None
    return GcLayerParams(_t(rng, (d, d, 3, 3)), _t(rng, (d,)), ecc, bn)


def test_layer_composition_matches_branch_oracles():
    # rebuild the layer from its pieces: conv and ecc averaged, normalized,
    # then one leaky relu
    rng = np.random.default_rng(0)
    d = 3
    params = _layer(rng, d)
    x = rng.standard_normal((2, d, 5, 5))
    graphs = [build_knn_graph(x[i], CFG) for i in range(2)]

    out = gc_layer_forward(Tensor(x), graphs, params, mode="train").data

    from oracles import ecc_scalar_oracle
    local = naive_conv2d(x, params.local_weight.data, params.local_bias.data)
    non_local = np.stack([
        ecc_scalar_oracle(x[i], graphs[i], params.ecc.fnet.hidden_weight.data,
                          params.ecc.fnet.hidden_bias.data, params.ecc.fnet.output.data,
                          params.ecc.node_weight.data, params.ecc.bias.data)
        for i in range(2)])
    pre = (local + non_local) / 2
    normed, _, _ = naive_batch_norm_train(pre, np.ones(d), np.zeros(d), eps=1e-5)
    ref = naive_leaky_relu(normed, 0.2)
    assert np.max(np.abs(out - ref)) < 1e-9


def test_layer_without_bn_is_plain_average():
    rng = np.random.default_rng(1)
    d = 2
    params = _layer(rng, d, with_bn=False)
    x = rng.standard_normal((1, d, 4, 4))
    g = build_knn_graph(x[0], CFG)
    out = gc_layer_forward(Tensor(x), [g], params).data

    from oracles import ecc_scalar_oracle
    local = naive_conv2d(x, params.local_weight.data, params.local_bias.data)
    non_local = ecc_scalar_oracle(x[0], g, params.ecc.fnet.hidden_weight.data,
                                  params.ecc.fnet.hidden_bias.data,
                                  params.ecc.fnet.output.data,
                                  params.ecc.node_weight.data, params.ecc.bias.data)
    ref = naive_leaky_relu((local + non_local[None]) / 2, 0.2)
    assert np.max(np.abs(out - ref)) < 1e-10


def test_single_item_matches_batched():
    rng = np.random.default_rng(2)
    d = 3
    params = _layer(rng, d)
    x = rng.standard_normal((d, 5, 5))
    g = build_knn_graph(x, CFG)
    # batch of one: [C,H,W] and [1,C,H,W] must agree (same BN statistics)
    a = gc_layer_forward(Tensor(x), g, params, mode="train").data
    b = gc_layer_forward(Tensor(x[None]), [g], params, mode="train").data
    assert a.shape == (d, 5, 5)
    assert np.max(np.abs(a - b[0])) < 1e-12


def test_rejects_bad_rank():
    rng = np.random.default_rng(3)
    params = _layer(rng, 2)
    with pytest.raises(ShapeError):
        gc_layer_forward(Tensor(rng.standard_normal((2, 2, 2, 4, 4))), [], params)


# --------------------------------------------------------------------------
# receptive-field stepping

def _seed_mask(h, w, r, c):
    m = np.zeros((h, w), dtype=bool)
    m[r, c] = True
    return m


def test_step_dilates_by_kernel_footprint():
    m = receptive_mask_step(_seed_mask(7, 7, 3, 3))
    ref = np.zeros((7, 7), dtype=bool)
    ref[2:5, 2:5] = True
    assert np.array_equal(m, ref)


def test_step_clips_at_borders():
    m = receptive_mask_step(_seed_mask(5, 5, 0, 0))
    ref = np.zeros((5, 5), dtype=bool)
    ref[:2, :2] = True
    assert np.array_equal(m, ref)


def test_two_steps_give_5x5():
    m = receptive_mask_step(receptive_mask_step(_seed_mask(9, 9, 4, 4)))
    ref = np.zeros((9, 9), dtype=bool)
    ref[2:7, 2:7] = True
    assert np.array_equal(m, ref)


def test_graph_neighbors_join_without_footprint():
    # one non-local edge: the distant pixel joins bare, the seed still
    # gets its 3x3 surround
    h = w = 8
    k = 1
    nbrs = np.zeros((h * w, k), dtype=np.int32)
    seed = 3 * w + 3
    far = 7 * w + 6
    nbrs[seed, 0] = far
    cfg = NlgConfig(k=k, window_radius=7, exclusion_radius=0)
    g = NonLocalGraph(h, w, k, nbrs, cfg)
    m = receptive_mask_step(_seed_mask(h, w, 3, 3), graphs=g)
    ref = np.zeros((h, w), dtype=bool)
    ref[2:5, 2:5] = True
    ref[7, 6] = True
    assert np.array_equal(m, ref)
    # pixel 0's neighbor list points at pixel 0 itself, which is inactive,
    # so nothing else joins


def test_inactive_pixels_contribute_nothing():
    h = w = 6
    nbrs = np.arange(h * w, dtype=np.int32).reshape(-1, 1)
    nbrs = (nbrs + 17) % (h * w)  # lands outside the 3x3 dilation footprint
    cfg = NlgConfig(k=1, window_radius=5, exclusion_radius=0)
    g = NonLocalGraph(h, w, 1, nbrs, cfg)
    m0 = _seed_mask(h, w, 2, 2)
    m = receptive_mask_step(m0, graphs=g)
    # only the active pixel's neighbor was pulled in
    extra = m & ~receptive_mask_step(m0)
    assert list(np.flatnonzero(extra.reshape(-1))) == [(2 * w + 2 + 17) % (h * w)]


def test_kernel_extent_one_with_no_graph_is_identity():
    m0 = _seed_mask(5, 5, 2, 3)
    assert np.array_equal(receptive_mask_step(m0, kernel_extent=1), m0)


def test_step_validation():
    with pytest.raises(ShapeError):
        receptive_mask_step(np.zeros((3, 3, 3), dtype=bool))
    with pytest.raises(ShapeError):
        receptive_mask_step(np.zeros((3, 3), dtype=bool), kernel_extent=2)
    g = NonLocalGraph(4, 4, 0, np.zeros((16, 0), dtype=np.int32),
                      NlgConfig(k=0, window_radius=2, exclusion_radius=1))
    with pytest.raises(ShapeError):
        receptive_mask_step(np.zeros((3, 3), dtype=bool), graphs=g)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_masks_only_grow(seed):
    rng = np.random.default_rng(seed)
    h, w = 6, 7
    mask = rng.random((h, w)) < 0.2
    k = 2
    nbrs = np.stack([rng.choice(h * w, size=k, replace=False)
                     for _ in range(h * w)]).astype(np.int32)
    g = NonLocalGraph(h, w, k, nbrs, NlgConfig(k=k, window_radius=6,
                                               exclusion_radius=0))
    stepped = receptive_mask_step(mask, graphs=g)
    assert np.all(stepped >= mask)
    again = receptive_mask_step(stepped, graphs=g)
    assert np.all(again >= stepped)
