import json

import pytest
from hypothesis import assume, given, settings, strategies as st

from snntopo import archspec
from snntopo.archspec import ArchitectureError, LayerKind, LayerSpec, conv_output_hw, output_shape

BUNDLED = ("conv6", "resnet20", "resnet32", "wrn28_2")


def test_conv6_layer_stack():
    spec = archspec.load_bundled("conv6")
    kinds = [(l.kind, l.c_out if l.kind is LayerKind.CONV else l.n_out) for l in spec.layers]
    conv = [c for k, c in kinds if k is LayerKind.CONV]
    fc = [n for k, n in kinds if k is LayerKind.LINEAR]
    assert conv == [64, 64, 128, 128, 256, 256]
    assert fc == [256, 256, 10]
    pools = [i for i, l in enumerate(spec.layers) if l.kind is LayerKind.POOL]
    assert pools == [2, 5, 8]


def test_conv6_first_layer_shape_and_param_count():
    spec = archspec.load_bundled("conv6")
    assert output_shape(spec, 0) == (32, 32, 64)
    # roughly 2.3M learnable weights, within 2%
    assert abs(spec.n_params() - 2.3e6) / 2.3e6 < 0.02


def test_figure1_output_shape():
    layer = LayerSpec(LayerKind.CONV, c_in=3, c_out=2, h_ker=2, w_ker=2)
    assert conv_output_hw(3, 3, layer) == (2, 2)


def test_minimal_linear():
    spec = archspec.load_architecture({"name": "tiny", "input": [1, 1, 4],
                                       "layers": [{"kind": "linear", "n_out": 4}]})
    assert len(spec) == 1
    assert spec.layers[0].kind is LayerKind.LINEAR
    assert output_shape(spec, 0) == (1, 1, 4)


def test_stride_zero_rejected():
    doc = {"name": "bad", "input": [4, 4, 1], "layers": [{"kind": "conv", "c_out": 2, "stride": 0}]}
    with pytest.raises(ArchitectureError):
        archspec.load_architecture(doc)


def test_shape_mismatch_names_layer():
    doc = {"name": "bad", "input": [4, 4, 1],
           "layers": [{"kind": "conv", "c_out": 2, "kernel": 3, "padding": 1},
                      {"kind": "linear", "n_in": 7, "n_out": 2}]}
    with pytest.raises(ArchitectureError) as err:
        archspec.load_architecture(doc)
    assert err.value.layer_index == 1


def test_residual_source_must_precede_target():
    doc = {"name": "bad", "input": [4, 4, 2],
           "layers": [{"kind": "conv", "c_out": 2, "kernel": 3, "padding": 1},
                      {"kind": "conv", "c_out": 2, "kernel": 3, "padding": 1},
                      {"kind": "residual", "source": 1, "target": 0}]}
    with pytest.raises(ArchitectureError):
        archspec.load_architecture(doc)


@pytest.mark.parametrize("name", BUNDLED)
@pytest.mark.parametrize("size", [None, (8, 8), (16, 16)])
def test_bundled_compose(name, size):
    spec = archspec.load_bundled(name, input_size=size)
    assert spec.shapes[-1][:2] == (1, 1)
    for i in range(len(spec)):
        assert all(d > 0 for d in output_shape(spec, i))


def test_output_shape_out_of_range():
    spec = archspec.load_bundled("conv6")
    with pytest.raises((IndexError, ArchitectureError)):
        output_shape(spec, len(spec))


def test_json_string_round_trip():
    spec = archspec.load_bundled("resnet20", input_size=(8, 8))
    again = archspec.load_architecture(json.dumps(archspec.spec_to_doc(spec)))
    assert again.layers == spec.layers and again.input_shape == spec.input_shape


@settings(max_examples=200, deadline=None)
@given(h=st.integers(1, 40), k=st.integers(1, 7), p=st.integers(0, 3), s=st.integers(1, 4))
def test_conv_output_matches_sliding_count(h, k, p, s):
    assume(h + 2 * p >= k)
    layer = LayerSpec(LayerKind.CONV, c_in=1, c_out=1, h_ker=k, w_ker=k, stride=s, padding=p)
    placements = len(range(0, h + 2 * p - k + 1, s))
    assert conv_output_hw(h, h, layer)[0] == placements
