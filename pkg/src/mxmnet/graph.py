"""Two-layer multiplex graph construction and angle bookkeeping.

The local layer holds short-range structure (chemical bonds, or a small
distance cutoff); the global layer holds every pair within a larger cutoff.
Both layers share the node set.  Edges are stored directed, as (source j,
destination i) rows sorted by (i, j); an undirected neighbor pair always
contributes both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elements
from .data import Molecule

__all__ = [
    "MultiplexGraph",
    "AngleTriples",
    "MessageCounts",
    "neighbor_search",
    "derive_bonds",
    "build_multiplex",
    "enumerate_angle_triples",
    "count_angles",
    "count_messages",
    "dump_graph",
]

# Slack added to the sum of covalent radii when falling back to the
# distance rule for bonds, in Angstrom.
BOND_SLACK = 0.3

# Above this many points neighbor_search switches to a uniform grid.
_BRUTE_LIMIT = 512


def _sorted_edges(src, dst):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((src, dst))
    return np.stack([src[order], dst[order]], axis=1)


def neighbor_search(coords, cutoff: float) -> np.ndarray:
    """Directed pairs (j, i) with 0 < |r_j - r_i| < cutoff, both directions.

    Exact brute force up to 512 points, a uniform cell grid beyond; both
    paths return the identical (i, j)-sorted array.
    """
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"coordinates must be (n, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("coordinates must be finite")
    cutoff = float(cutoff)
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    n = pts.shape[0]
    if n <= _BRUTE_LIMIT:
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        mask = (d2 > 0.0) & (d2 < cutoff * cutoff)
        j, i = np.nonzero(mask)
        return _sorted_edges(j, i)
    return _cell_list_search(pts, cutoff)


def _cell_list_search(pts: np.ndarray, cutoff: float) -> np.ndarray:
    lo = pts.min(axis=0)
    cell = np.floor((pts - lo) / cutoff).astype(np.int64)
    buckets: dict[tuple, list[int]] = {}
    for idx, c in enumerate(map(tuple, cell)):
        buckets.setdefault(c, []).append(idx)
    for c in buckets:
        buckets[c] = np.asarray(buckets[c], dtype=np.int64)
    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
    ]
    src_parts, dst_parts = [], []
    c2 = cutoff * cutoff
    for c, members in buckets.items():
        cand = [
            buckets[(c[0] + dx, c[1] + dy, c[2] + dz)]
            for dx, dy, dz in offsets
            if (c[0] + dx, c[1] + dy, c[2] + dz) in buckets
        ]
        cand = np.concatenate(cand)
        diff = pts[members][:, None, :] - pts[cand][None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        ii, jj = np.nonzero((d2 > 0.0) & (d2 < c2))
        dst_parts.append(members[ii])
        src_parts.append(cand[jj])
    if not src_parts:
        return np.empty((0, 2), dtype=np.int64)
    return _sorted_edges(np.concatenate(src_parts), np.concatenate(dst_parts))


def derive_bonds(m: Molecule) -> list[tuple[int, int]]:
    """Bond list: explicit bonds when present, covalent-radius rule otherwise.

    Fallback rule: atoms i, j bond when |r_i - r_j| < r_cov(i) + r_cov(j)
    plus 0.3 Angstrom.
    """
    if m.bonds is not None:
        return list(m.bonds)
    radii = np.array(
        [elements.covalent_radius(int(z)) for z in m.atomic_numbers]
    )
    diff = m.coords[:, None, :] - m.coords[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    limit = radii[:, None] + radii[None, :] + BOND_SLACK
    pairs = []
    n = m.n_atoms
    for a in range(n):
        for b in range(a + 1, n):
            if dist[a, b] < limit[a, b]:
                pairs.append((a, b))
    return pairs


@dataclass
class MultiplexGraph:
    """Shared node set with a local and a global directed edge layer.

    ``local_rule`` records how the local layer was built ("bonds" or
    "cutoff:<value>"); ``global_cutoff`` is the global layer's radius.
    """

    n_nodes: int
    local_edges: np.ndarray  # (E_l, 2) rows (j, i)
    global_edges: np.ndarray  # (E_g, 2) rows (j, i)
    local_rule: str
    global_cutoff: float

    def validate(self):
        for name in ("local_edges", "global_edges"):
            e = getattr(self, name)
            if e.ndim != 2 or e.shape[1] != 2:
                raise ValueError(f"{name} must be (e, 2), got {e.shape}")
            if e.size:
                if e.min() < 0 or e.max() >= self.n_nodes:
                    raise ValueError(f"{name} references nodes outside range")
                if np.any(e[:, 0] == e[:, 1]):
                    raise ValueError(f"{name} contains a self-edge")
                fwd = set(map(tuple, e))
                if len(fwd) != e.shape[0]:
                    raise ValueError(f"{name} contains duplicate directed edges")
                if any((b, a) not in fwd for a, b in fwd):
                    raise ValueError(f"{name} is not symmetric as a directed set")
        return self


def build_multiplex(
    m: Molecule,
    local_rule: str = "bonds",
    local_cutoff: float = 2.0,
    global_cutoff: float = 5.0,
    global_excludes_local: bool = False,
) -> MultiplexGraph:
    """Construct both layers for one molecule.

    ``local_rule`` is "bonds" (explicit bonds or the covalent fallback) or
    "cutoff" (distance rule with ``local_cutoff``).  The global layer keeps
    every pair inside ``global_cutoff``; with ``global_excludes_local`` the
    pairs already in the local layer are dropped from it, which makes the
    union of layers the plain cutoff graph instead of a multiplex over it.
    """
    if local_rule == "bonds":
        und = derive_bonds(m)
        if und:
            a = np.asarray(und, dtype=np.int64)
            local = _sorted_edges(
                np.concatenate([a[:, 0], a[:, 1]]),
                np.concatenate([a[:, 1], a[:, 0]]),
            )
        else:
            local = np.empty((0, 2), dtype=np.int64)
        rule = "bonds"
    elif local_rule == "cutoff":
        if not 0 < local_cutoff < global_cutoff:
            raise ValueError(
                f"need 0 < local cutoff < global cutoff, got "
                f"{local_cutoff} and {global_cutoff}"
            )
        local = neighbor_search(m.coords, local_cutoff)
        rule = f"cutoff:{local_cutoff:g}"
    else:
        raise ValueError(f"unknown local rule {local_rule!r}")
    glob = neighbor_search(m.coords, global_cutoff)
    if global_excludes_local and local.size and glob.size:
        keep = ~_rows_in(glob, local)
        glob = glob[keep]
    g = MultiplexGraph(
        n_nodes=m.n_atoms,
        local_edges=local,
        global_edges=glob,
        local_rule=rule,
        global_cutoff=float(global_cutoff),
    )
    return g.validate()


def _rows_in(rows: np.ndarray, table: np.ndarray) -> np.ndarray:
    have = set(map(tuple, table))
    return np.fromiter((tuple(r) in have for r in rows), dtype=bool, count=len(rows))


@dataclass
class AngleTriples:
    """Angle index lists over the local layer.

    two_hop rows (k, j, i): k in N(j) \\ {i} for each directed edge (j, i);
    the angle sits at j between rays j->k and j->i.
    one_hop rows (jp, i, j): jp in N(i) \\ {j} for each directed edge (j, i);
    the angle sits at i between rays i->jp and i->j.
    """

    two_hop: np.ndarray  # (t2, 3)
    one_hop: np.ndarray  # (t1, 3)
    # Row e of each *_edge array points into the directed local edge list.
    two_hop_edge: np.ndarray  # edge id of (k -> j)
    two_hop_target: np.ndarray  # edge id of (j -> i)
    one_hop_edge: np.ndarray  # edge id of (jp -> i)
    one_hop_target: np.ndarray  # edge id of (j -> i)


def adjacency(n_nodes: int, edges: np.ndarray) -> list[np.ndarray]:
    """Sorted neighbor array per node from a directed edge array."""
    nbrs: list[list[int]] = [[] for _ in range(n_nodes)]
    for j, i in edges:
        nbrs[int(i)].append(int(j))
    return [np.asarray(sorted(x), dtype=np.int64) for x in nbrs]


def enumerate_angle_triples(g: MultiplexGraph) -> AngleTriples:
    """List every two-hop and one-hop angle triple of the local layer.

    Triples are emitted in local edge order with neighbors ascending, so
    the output is deterministic for a given graph.
    """
    edges = g.local_edges
    nbrs = adjacency(g.n_nodes, edges)
    edge_id = {(int(j), int(i)): e for e, (j, i) in enumerate(edges)}
    t2, t2e, t2t = [], [], []
    t1, t1e, t1t = [], [], []
    for e, (j, i) in enumerate(edges):
        j, i = int(j), int(i)
        for k in nbrs[j]:
            k = int(k)
            if k == i:
                continue
            t2.append((k, j, i))
            t2e.append(edge_id[(k, j)])
            t2t.append(e)
        for jp in nbrs[i]:
            jp = int(jp)
            if jp == j:
                continue
            t1.append((jp, i, j))
            t1e.append(edge_id[(jp, i)])
            t1t.append(e)
    empty3 = np.empty((0, 3), dtype=np.int64)
    return AngleTriples(
        two_hop=np.asarray(t2, dtype=np.int64) if t2 else empty3,
        one_hop=np.asarray(t1, dtype=np.int64) if t1 else empty3,
        two_hop_edge=np.asarray(t2e, dtype=np.int64),
        two_hop_target=np.asarray(t2t, dtype=np.int64),
        one_hop_edge=np.asarray(t1e, dtype=np.int64),
        one_hop_target=np.asarray(t1t, dtype=np.int64),
    )


def count_angles(n_nodes: int, undirected_edges) -> int:
    """Angles definable on a simple graph: sum over nodes of C(deg, 2).

    Each unordered pair of distinct edges sharing a node spans one angle.
    """
    deg = np.zeros(n_nodes, dtype=np.int64)
    seen = set()
    for a, b in undirected_edges:
        a, b = int(a), int(b)
        if a == b:
            raise ValueError(f"self-edge on node {a}")
        pair = (min(a, b), max(a, b))
        if pair in seen:
            continue
        seen.add(pair)
        deg[a] += 1
        deg[b] += 1
    return int((deg * (deg - 1) // 2).sum())


@dataclass
class MessageCounts:
    """Exact per-pass message tallies for one block of the model.

    global_mp counts both passes (2 |E_g|); the local steps count their
    angle-gated messages plus the per-edge ones; cross_layer counts the two
    per-node layer maps (2 N).
    """

    global_mp: int
    local_step1: int
    local_step2: int
    local_step3: int
    cross_layer: int

    @property
    def total(self) -> int:
        return (
            self.global_mp
            + self.local_step1
            + self.local_step2
            + self.local_step3
            + self.cross_layer
        )

    def as_tuple(self):
        return (
            self.global_mp,
            self.local_step1,
            self.local_step2,
            self.local_step3,
            self.cross_layer,
        )


def count_messages(g: MultiplexGraph, triples: AngleTriples | None = None) -> MessageCounts:
    """Closed-form message tallies for one block on this graph."""
    if triples is None:
        triples = enumerate_angle_triples(g)
    e_l = int(g.local_edges.shape[0])
    e_g = int(g.global_edges.shape[0])
    return MessageCounts(
        global_mp=2 * e_g,
        local_step1=int(triples.two_hop.shape[0]) + e_l,
        local_step2=int(triples.one_hop.shape[0]) + e_l,
        local_step3=e_l,
        cross_layer=2 * g.n_nodes,
    )


def dump_graph(g: MultiplexGraph) -> str:
    """Plain-text edge dump: one "L j i" or "G j i" line per directed edge."""
    lines = [f"L {j} {i}" for j, i in g.local_edges]
    lines += [f"G {j} {i}" for j, i in g.global_edges]
    return "\n".join(lines) + ("\n" if lines else "")
