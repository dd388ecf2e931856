"""Front propagation distances against independent oracles.

The oracle is Floyd-Warshall on the dense edge graph, an entirely different
algorithm, plus hand-derived frozen values for tiny meshes.
"""

import numpy as np
import pytest

from meshmatch import shapes
from meshmatch.geodesic import (
    diameter_lower_bound,
    multi_source,
    pair_distance,
    propagate_update,
    single_source,
)

SQ2 = np.sqrt(2.0)


def fw_all_pairs(mesh):
    """Floyd-Warshall over the edge graph."""
    n = mesh.n_vertices
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    e = mesh.edges
    w = mesh.edge_lengths()
    d[e[:, 0], e[:, 1]] = w
    d[e[:, 1], e[:, 0]] = w
    for k in range(n):
        np.minimum(d, d[:, [k]] + d[[k], :], out=d)
    return d


def small_corpus():
    return [
        shapes.octahedron(),
        shapes.icosphere(2),
        shapes.grid_patch(3, 3),
        shapes.uv_torus(n_ring=8, n_tube=6),
        shapes.sliver_sphere(2, stretch=10.0),
    ]


def test_strip_frozen_values():
    # distances on two grid cells, worked out by hand
    m = shapes.grid_patch(2, 1)
    d = single_source(m, 0).dist
    np.testing.assert_array_equal(d, [0.0, 1.0, 2.0, 1.0, SQ2, 1.0 + SQ2])


def test_source_properties():
    m = shapes.icosphere(2)
    f = single_source(m, 5)
    assert f.dist[5] == 0.0
    assert f.source[5] == 5
    assert np.all(f.source == 5)
    assert np.all(np.isfinite(f.dist))


@pytest.mark.parametrize("mesh_idx", range(5))
def test_single_source_vs_floyd_warshall(mesh_idx):
    m = small_corpus()[mesh_idx]
    fw = fw_all_pairs(m)
    for src in (0, m.n_vertices // 2, m.n_vertices - 1):
        d = single_source(m, src).dist
        np.testing.assert_allclose(d, fw[src], rtol=1e-12, atol=1e-14)


def test_multi_source_is_pointwise_min():
    for m in small_corpus():
        sources = np.array([0, 3, m.n_vertices - 1])
        batch = multi_source(m, sources).dist
        singles = np.stack([single_source(m, s).dist for s in sources])
        np.testing.assert_array_equal(batch, singles.min(axis=0))


def test_unreachable_component_is_infinite():
    m = shapes.two_spheres(freq=1)
    f = single_source(m, 0)
    assert np.all(np.isinf(f.dist[12:]))
    assert np.all(f.source[12:] == -1)
    assert np.all(np.isfinite(f.dist[:12]))


def fold_oracle(mesh, sources):
    """Assignment by folding single source fields in insertion order with
    the incumbent-wins rule. Independent route for the incremental update."""
    dist = np.full(mesh.n_vertices, np.inf)
    label = np.full(mesh.n_vertices, -1, dtype=np.int64)
    for s in sources:
        ds = single_source(mesh, s).dist
        better = ds < dist
        dist[better] = ds[better]
        label[better] = s
    return dist, label


class TestPropagateUpdate:
    def test_incremental_equals_batch(self):
        rng = np.random.default_rng(7)
        for m in small_corpus():
            n = m.n_vertices
            sources = rng.choice(n, size=5, replace=False)
            state = single_source(m, sources[0])
            for s in sources[1:]:
                propagate_update(m, s, state)
            batch = multi_source(m, sources)
            np.testing.assert_allclose(state.dist, batch.dist,
                                       rtol=1e-12, atol=1e-14)

    def test_labels_match_fold_oracle(self):
        rng = np.random.default_rng(13)
        for m in small_corpus():
            n = m.n_vertices
            sources = rng.choice(n, size=6, replace=False)
            state = single_source(m, sources[0])
            for s in sources[1:]:
                propagate_update(m, s, state)
            dist, label = fold_oracle(m, sources)
            np.testing.assert_array_equal(state.dist, dist)
            np.testing.assert_array_equal(state.source, label)

    def test_touched_is_exactly_the_improved_set(self):
        m = shapes.icosphere(4)
        state = single_source(m, 0)
        before = state.dist.copy()
        touched = propagate_update(m, 100, state)
        improved = np.nonzero(state.dist < before)[0]
        assert set(touched.tolist()) == set(improved.tolist())
        untouched = np.setdiff1d(np.arange(m.n_vertices), touched)
        np.testing.assert_array_equal(state.dist[untouched],
                                      before[untouched])

    def test_tie_keeps_incumbent(self):
        # antipodal poles of the octahedron: the equator ties at sqrt(2)
        m = shapes.octahedron()
        state = single_source(m, 4)
        touched = propagate_update(m, 5, state)
        assert set(touched.tolist()) == {5}
        np.testing.assert_array_equal(state.source, [4, 4, 4, 4, 4, 5])
        np.testing.assert_array_equal(state.dist, [SQ2, SQ2, SQ2, SQ2, 0, 0])

    def test_readd_source_rejected(self):
        m = shapes.octahedron()
        state = single_source(m, 0)
        with pytest.raises(ValueError):
            propagate_update(m, 0, state)

    def test_new_component_fully_touched(self):
        m = shapes.two_spheres(freq=1)
        state = single_source(m, 0)
        touched = propagate_update(m, 12, state)
        assert set(touched.tolist()) == set(range(12, 24))

    def test_monotone_under_new_sources(self):
        m = shapes.uv_torus(n_ring=10, n_tube=8)
        state = single_source(m, 0)
        prev = state.dist.copy()
        for s in (17, 40, 63):
            propagate_update(m, s, state)
            assert np.all(state.dist <= prev)
            prev = state.dist.copy()

    def test_triangle_inequality(self):
        for m in small_corpus():
            f = multi_source(m, np.array([0, 2]))
            e = m.edges
            w = m.edge_lengths()
            gap = np.abs(f.dist[e[:, 0]] - f.dist[e[:, 1]])
            assert np.all(gap <= w + 1e-9 * f.dist[np.isfinite(f.dist)].max())


def test_pair_distance_matches_field():
    m = shapes.icosphere(3)
    d = single_source(m, 7).dist
    for b in (0, 42, 91, m.n_vertices - 1):
        assert pair_distance(m, 7, b) == d[b]
    assert pair_distance(m, 7, 7) == 0.0


def test_pair_distance_symmetric():
    m = shapes.uv_torus(n_ring=9, n_tube=7)
    assert np.isclose(pair_distance(m, 3, 50), pair_distance(m, 50, 3),
                      rtol=1e-12)


def test_pair_distance_unreachable():
    m = shapes.two_spheres(freq=1)
    assert np.isinf(pair_distance(m, 0, 20))


def test_diameter_double_sweep():
    # the double sweep is a 2-approximation: never above the truth and at
    # least half of it (ecc of any vertex bounds diam/2 from below)
    for m in small_corpus():
        fw = fw_all_pairs(m)
        true = fw[np.isfinite(fw)].max()
        est = diameter_lower_bound(m)
        assert est <= true + 1e-12
        assert est >= 0.5 * true
    # exact on the homogeneous closed shapes
    for m in small_corpus()[:2] + [small_corpus()[3]]:
        fw = fw_all_pairs(m)
        assert np.isclose(diameter_lower_bound(m),
                          fw[np.isfinite(fw)].max(), rtol=1e-12)


def test_diameter_octahedron_exact():
    # vertex transitive, so the double sweep is exact: two edges pole to pole
    assert np.isclose(diameter_lower_bound(shapes.octahedron()), 2 * SQ2)
