import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snntopo import archspec, maskgen
from snntopo.archspec import LayerKind, LayerSpec
from snntopo.maskgen import Init, MaskError, MaskLayer, SparseMask


def _linear(n_in=4, n_out=4):
    return archspec.load_architecture({"name": "lin", "input": [1, 1, n_in],
                                       "layers": [{"kind": "linear", "n_out": n_out}]})


def test_uniform_exact_count():
    mask = maskgen.generate_uniform(_linear(), 0.5, seed=3)
    assert mask.layers[0].nnz == 8


def test_zero_sparsity_is_dense():
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    for method in maskgen.GENERATORS:
        rep = maskgen.density_report(maskgen.generate(method, spec, 0.0, seed=0))
        assert rep.global_density == 1.0
        assert all(d == 1.0 for d in rep.per_layer.values())


def test_sparsity_one_rejected():
    with pytest.raises(MaskError):
        maskgen.generate_uniform(_linear(), 1.0, seed=0)


def test_er_and_erk_terms():
    assert maskgen.er_term(LayerSpec(LayerKind.LINEAR, n_in=4, n_out=4)) == 0.5
    conv = LayerSpec(LayerKind.CONV, c_in=3, c_out=16, h_ker=3, w_ker=3)
    assert maskgen.erk_term(conv) == pytest.approx(25 / 432, abs=1e-15)


@pytest.mark.parametrize("method", ["uniform", "er", "erk"])
def test_single_layer_density_is_one_minus_s(method):
    mask = maskgen.generate(method, _linear(10, 10), 0.37, seed=1)
    assert mask.layers[0].density == pytest.approx(0.63)


@pytest.mark.parametrize("method", ["uniform", "erk", "er"])
def test_conv6_global_density(method):
    spec = archspec.load_bundled("conv6")
    mask = maskgen.generate(method, spec, 0.9, seed=0)
    n_layers = len(mask.layers)
    total = spec.n_params()
    nnz = sum(l.nnz for l in mask.layers)
    assert abs(nnz - 0.1 * total) <= n_layers


def test_erk_keep_ratio_follows_terms():
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    mask = maskgen.generate_erk(spec, 0.95, seed=0)
    probs = {int(k): v for k, v in mask.meta["keep_probabilities"].items()}
    free = [i for i, p in probs.items() if p < 1.0]
    assert len(free) >= 2
    a, b = free[0], free[1]
    ta, tb = maskgen.erk_term(spec.layers[a]), maskgen.erk_term(spec.layers[b])
    assert probs[a] / probs[b] == pytest.approx(ta / tb, rel=1e-12)


def test_density_report():
    layer = MaskLayer(0, (2, 5), np.array([0, 2, 4, 6, 8]))
    rep = maskgen.density_report(SparseMask("x", (layer,), {}))
    assert rep.per_layer[0] == 0.5
    assert rep.average_layer_density == 0.5


def test_attach_weights():
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    mask = maskgen.generate_erk(spec, 0.5, seed=0)
    unit = maskgen.attach_weights(mask, spec, seed=1, init=Init.UNIT_MAGNITUDE)
    assert all(np.all(l.weights == 1.0) for l in unit.layers)
    gauss = maskgen.attach_weights(mask, spec, seed=1)
    big = max(gauss.layers, key=lambda l: l.nnz)
    fan_in = spec.layers[big.layer_index].fan_in()
    assert big.weights.std() == pytest.approx(np.sqrt(2.0 / fan_in), rel=0.02)
    with pytest.raises(MaskError):
        maskgen.attach_weights(gauss, spec, seed=1)


def test_attach_weights_empty_layer():
    mask = SparseMask("lin", (MaskLayer(0, (4, 4), np.zeros(0, dtype=np.int64)),), {})
    out = maskgen.attach_weights(mask, _linear(), seed=0)
    assert out.layers[0].weights.size == 0


def test_save_load_round_trip(tmp_path):
    spec = archspec.load_bundled("resnet20", input_size=(8, 8))
    mask = maskgen.attach_weights(maskgen.generate_erk(spec, 0.9, seed=5), spec, seed=2)
    path = maskgen.save_mask(mask, tmp_path / "m.npz")
    again = maskgen.load_mask(path)
    assert again.equals(mask)
    again.validate(spec)


def test_same_seed_same_mask():
    spec = archspec.load_bundled("resnet20", input_size=(8, 8))
    a = maskgen.generate_er(spec, 0.8, seed=11)
    b = maskgen.generate_er(spec, 0.8, seed=11)
    c = maskgen.generate_er(spec, 0.8, seed=12)
    assert a.equals(b) and not a.equals(c)


def test_exclusion_keeps_layer_dense():
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    first = spec.chain_layers()[0]
    mask = maskgen.generate_uniform(spec, 0.9, seed=0, exclude=[first])
    assert mask.layer(first).density == 1.0


def test_invalid_indices_rejected():
    with pytest.raises(MaskError):
        MaskLayer(0, (2, 2), np.array([1, 1])).validate()
    with pytest.raises(MaskError):
        MaskLayer(0, (2, 2), np.array([0, 4])).validate()
    with pytest.raises(MaskError):
        MaskLayer(0, (2, 2), np.array([0, 1]), np.array([1.0, 0.0])).validate()


@settings(max_examples=25, deadline=None)
@given(method=st.sampled_from(["uniform", "er", "erk"]), s=st.floats(0.0, 0.99),
       seed=st.integers(0, 2 ** 31), name=st.sampled_from(["conv6", "resnet20", "wrn28_2"]))
def test_generated_masks_are_valid(method, s, seed, name):
    spec = archspec.load_bundled(name, input_size=(8, 8))
    mask = maskgen.generate(method, spec, s, seed)
    mask.validate(spec)
    if method != "uniform":
        keep = round((1 - s) * spec.n_params())
        assert sum(l.nnz for l in mask.layers) == keep
