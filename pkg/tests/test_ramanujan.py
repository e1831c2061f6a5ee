import json
import math

import networkx as nx
import numpy as np
import pytest

import oracles
from snntopo import archspec, maskgen, ramanujan
from snntopo.encoder import BipartiteGraph
from snntopo.ramanujan import LayerRamanujanReport


def complete_bipartite(m, n, weight=None):
    src = np.repeat(np.arange(m), n)
    dst = np.tile(np.arange(n), m)
    return BipartiteGraph(m, n, src, dst, weight)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_kdd_is_ramanujan(d):
    assert ramanujan.delta_r(complete_bipartite(d, d)) == pytest.approx(2 * math.sqrt(d - 1), abs=1e-9)


def test_k33_family():
    g = complete_bipartite(3, 3)
    assert ramanujan.delta_r_imdb(g) == pytest.approx(2 * math.sqrt(2), abs=1e-9)


def test_perfect_matching_undefined():
    g = BipartiteGraph(3, 3, np.arange(3), np.arange(3))
    assert math.isnan(ramanujan.delta_r(g))


def test_two_core_levels():
    # K_{4,4} plus two left and two right nodes each tied to three core nodes
    edges = [(a, b) for a in range(4) for b in range(4)]
    edges += [(4, 0), (4, 1), (4, 2), (5, 1), (5, 2), (5, 3)]
    edges += [(0, 4), (1, 4), (2, 4), (1, 5), (2, 5), (3, 5)]
    src, dst = map(np.array, zip(*edges))
    g = BipartiteGraph(6, 6, src, dst)
    family = ramanujan.core_family(ramanujan.bipartite_view(g))
    assert [s.n_nodes for s in family] == [12, 8]
    G = oracles.bipartite_graph(6, 6, edges)
    want = (oracles.bound_difference(G) + 2 * math.sqrt(3)) / 2
    assert ramanujan.delta_r_imdb(g) == pytest.approx(want, abs=1e-9)
    assert [s.regular for s in family] == [False, True]


def test_single_core_reduces_to_delta_r():
    g = complete_bipartite(4, 6)
    assert ramanujan.delta_r_imdb(g) == pytest.approx(ramanujan.delta_r(g), abs=1e-12)


def test_unit_weights_gap():
    g = complete_bipartite(3, 5)
    unit = complete_bipartite(3, 5, np.ones(15))
    assert ramanujan.lambda_imsg(g) == pytest.approx(ramanujan.lambda_imsg(unit), abs=1e-12)
    ev = np.linalg.eigvalsh(nx.to_numpy_array(nx.complete_bipartite_graph(3, 5)))
    # +/- mu0 are trivial, the rest are zero
    assert ramanujan.lambda_imsg(g) == pytest.approx(ev[-1], abs=1e-9)


def test_weighted_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        nl, nr = 8, 9
        m = 50
        src, dst = rng.integers(0, nl, m), rng.integers(0, nr, m)
        w = rng.normal(size=m)
        g = BipartiteGraph(nl, nr, src, dst, w)
        G = oracles.bipartite_graph(nl, nr, list(zip(src.tolist(), dst.tolist())), w.tolist())
        assert ramanujan.lambda_imsg(g) == pytest.approx(oracles.lambda_imsg(G), abs=1e-6, nan_ok=True)


def test_infeasible_layer_has_no_values():
    g = BipartiteGraph(10, 10, np.arange(10), np.arange(10))
    rep = ramanujan.layer_report(g, 0.1)
    assert not rep.feasible
    assert rep.delta_r is None and rep.delta_r_imdb is None and rep.lambda_imsg is None
    assert rep.notes


def _rep(i, density, v):
    return LayerRamanujanReport(i, density, True, 3, 3, v, v, v)


def test_correlation_proportional_and_anti():
    dens = [0.1, 0.2, 0.4, 0.8]
    prop = ramanujan.density_correlation([_rep(i, d, 5 * d) for i, d in enumerate(dens)])
    anti = ramanujan.density_correlation([_rep(i, d, 1 - d) for i, d in enumerate(dens)])
    assert prop.correlations["delta_r_imdb"] == pytest.approx(1.0)
    assert anti.correlations["delta_r_imdb"] == pytest.approx(-1.0)
    assert sum(prop.series["density"]) == pytest.approx(1.0)


def test_correlation_constant_series():
    rep = ramanujan.density_correlation([_rep(i, 0.1 * (i + 1), 2.0) for i in range(4)])
    assert math.isnan(rep.correlations["delta_r"])
    assert rep.notes


def test_network_report(tmp_path):
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    mask = maskgen.generate_erk(spec, 0.9, seed=0)
    rep = ramanujan.network_report(spec, mask)
    assert [l.layer_index for l in rep.layers] == [i for i, _ in spec.weighted_layers()]
    doc = json.loads(rep.save(tmp_path / "r.json").read_text())
    assert doc["encoding"] == "rolled" and len(doc["layers"]) == len(rep.layers)
    corr = ramanujan.density_correlation(rep.layers)
    corr.write_series_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("layer_index,density,")
