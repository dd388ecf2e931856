"""Geodesic farthest point sampling with a live Voronoi decomposition.

The sampler keeps three coupled structures: the ordered sample list, the
distance field with its per-vertex nearest-sample assignment, and a fixed
size indexed max-heap mirroring the distances. Each new sample is the heap
root (the farthest vertex), and the incremental front propagation updates
exactly the vertices it conquers, so a full run costs far less than s
separate Dijkstra solves.

Unreached vertices carry key +inf, which makes sampling visit every
connected component before refining any of them.
"""

import numpy as np
from numba import njit

from .geodesic import _Scratch, _blank_field, propagate_update

__all__ = [
    "IndexedMaxHeap",
    "VoronoiState",
    "init_state",
    "add_sample",
    "farthest_point_sampling",
    "voronoi_adjacency",
]


@njit(cache=True, inline="always")
def _greater(keys, a, b):
    # ties order by lower vertex index, so the root is always the first
    # occurrence of the maximum, exactly like np.argmax
    ka = keys[a]
    kb = keys[b]
    return ka > kb or (ka == kb and a < b)


@njit(cache=True)
def _mh_siftup(keys, heap, pos, i):
    v = heap[i]
    while i > 0:
        p = (i - 1) >> 1
        u = heap[p]
        if _greater(keys, v, u):
            heap[i] = u
            pos[u] = i
            i = p
        else:
            break
    heap[i] = v
    pos[v] = i
    return i


@njit(cache=True)
def _mh_siftdown(keys, heap, pos, i):
    n = heap.shape[0]
    v = heap[i]
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        r = c + 1
        if r < n and _greater(keys, heap[r], heap[c]):
            c = r
        u = heap[c]
        if _greater(keys, u, v):
            heap[i] = u
            pos[u] = i
            i = c
        else:
            break
    heap[i] = v
    pos[v] = i


@njit(cache=True)
def _mh_build(keys, heap, pos):
    n = keys.shape[0]
    for i in range(n):
        heap[i] = i
        pos[i] = i
    for i in range(n // 2 - 1, -1, -1):
        _mh_siftdown(keys, heap, pos, i)


@njit(cache=True)
def _mh_set_key(keys, heap, pos, v, key):
    keys[v] = key
    i = _mh_siftup(keys, heap, pos, pos[v])
    _mh_siftdown(keys, heap, pos, i)


@njit(cache=True)
def _mh_mirror(keys, heap, pos, touched, dist):
    for t in range(touched.shape[0]):
        v = touched[t]
        _mh_set_key(keys, heap, pos, v, dist[v])


class IndexedMaxHeap:
    """Array backed max-heap over a fixed vertex set with keyed updates.

    Allocated once at full size; no elements are ever pushed or popped,
    only re-keyed. ``positions`` is maintained as the exact inverse of the
    heap array so a key change costs one sift.
    """

    __slots__ = ("keys", "heap", "pos")

    def __init__(self, keys):
        self.keys = np.array(keys, dtype=np.float64)
        n = self.keys.shape[0]
        self.heap = np.empty(n, dtype=np.int64)
        self.pos = np.empty(n, dtype=np.int64)
        _mh_build(self.keys, self.heap, self.pos)

    def __len__(self):
        return self.keys.shape[0]

    def find_max(self):
        return int(self.heap[0])

    def set_key(self, v, key):
        _mh_set_key(self.keys, self.heap, self.pos, int(v), float(key))


class VoronoiState:
    """Samples, distance field with cell assignment, and the key heap."""

    __slots__ = ("mesh", "samples", "field", "heap", "touched_total",
                 "_scratch", "_sample_set")

    def __init__(self, mesh, samples, field, heap, scratch):
        self.mesh = mesh
        self.samples = samples
        self.field = field
        self.heap = heap
        self._scratch = scratch
        self._sample_set = set(samples)
        self.touched_total = 0


def init_state(mesh, vertex=None, rng=None):
    """One-sample state seeded at ``vertex`` (or drawn uniformly)."""
    if mesh.n_vertices == 0:
        raise ValueError("cannot sample an empty mesh")
    if vertex is None:
        vertex = int(np.random.default_rng(rng).integers(mesh.n_vertices))
    vertex = int(vertex)
    ptr, idx, _w = mesh.adjacency()
    scratch = _Scratch(mesh.n_vertices, len(idx))
    field = _blank_field(mesh.n_vertices)
    touched = propagate_update(mesh, vertex, field, scratch)
    state = VoronoiState(mesh, [vertex], field, IndexedMaxHeap(field.dist),
                         scratch)
    state.touched_total = len(touched)
    return state


def add_sample(state, p):
    """Insert vertex ``p`` as a sample; returns the conquered vertices."""
    p = int(p)
    if p in state._sample_set:
        raise ValueError("vertex %d is already a sample" % p)
    touched = propagate_update(state.mesh, p, state.field, state._scratch)
    _mh_mirror(state.heap.keys, state.heap.heap, state.heap.pos, touched,
               state.field.dist)
    state.samples.append(p)
    state._sample_set.add(p)
    state.touched_total += len(touched)
    return touched


def farthest_point_sampling(mesh, s, vertex=None, rng=None):
    """Sample ``s`` vertices by geodesic FPS, returning the final state.

    Every sample after the first maximizes the current distance to the
    sample set, lowest vertex index on ties.
    """
    s = int(s)
    if not 1 <= s <= mesh.n_vertices:
        raise ValueError("sample count %d outside [1, %d]"
                         % (s, mesh.n_vertices))
    state = init_state(mesh, vertex=vertex, rng=rng)
    for _ in range(s - 1):
        add_sample(state, state.heap.find_max())
    return state


def voronoi_adjacency(state, mesh=None):
    """Pairs and triples of cells meeting along primal edges / triangles.

    Pairs (i, j), i < j, are cell generator ids joined by at least one mesh
    edge; triples (i, j, k) are generator ids covering the three corners of
    at least one triangle. Both arrays are unique and lexicographically
    sorted.
    """
    mesh = state.mesh if mesh is None else mesh
    labels = state.field.source
    el = labels[mesh.edges]
    el = el[el[:, 0] != el[:, 1]]
    pairs = np.unique(np.sort(el, axis=1), axis=0) if len(el) else \
        np.empty((0, 2), dtype=np.int64)
    tl = np.sort(labels[mesh.triangles], axis=1)
    tl = tl[(tl[:, 0] != tl[:, 1]) & (tl[:, 1] != tl[:, 2])]
    triples = np.unique(tl, axis=0) if len(tl) else \
        np.empty((0, 3), dtype=np.int64)
    return pairs, triples
