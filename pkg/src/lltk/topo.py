"""Sublevel-set persistence of vertex-weighted graphs.

A graph whose vertices carry a value (the loss) is filtered by the
lower-star rule: an edge or triangle enters at the largest value among
its vertices. Dimension 0 is computed with a union-find under the elder
rule, dimension 1 by reducing the edge/triangle boundary matrix over the
two-element field. Triangles come from filling the 3-cliques of the graph;
without them no cycle could ever die.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .numkit import knn

POLICIES = ("cap", "drop")


def build_knn_graph(ID, k: int = 20) -> np.ndarray:
    """Undirected kNN graph: ``u -- v`` if either is among the other's k nearest.

    Returns an (m, 2) integer array of edges with ``u < v``, sorted
    lexicographically, without duplicates or self loops.
    """
    nbrs = knn(ID, k)
    n = len(nbrs)
    src = np.repeat(np.arange(n), nbrs.k)
    dst = nbrs.indices.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    keys = np.unique(lo.astype(np.int64) * n + hi)
    return np.column_stack([keys // n, keys % n]).astype(np.int64)


def flag_fill_triangles(edges) -> np.ndarray:
    """All 3-cliques of the graph as sorted vertex triples ``a < b < c``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    adj = {}
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            continue
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    tris = []
    for a in sorted(adj):
        higher = sorted(w for w in adj[a] if w > a)
        for i, b in enumerate(higher):
            nb = adj[b]
            for c in higher[i + 1:]:
                if c in nb:
                    tris.append((a, b, c))
    if not tris:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array(tris, dtype=np.int64)


@dataclass(frozen=True)
class FilteredComplex:
    """Lower-star filtration of a flag complex truncated at dimension 2.

    Edges and triangles are stored already sorted in filtration order:
    by value, then lexicographically by vertex tuple. Vertices are ordered
    by (value, index) implicitly.
    """

    values: np.ndarray
    edges: np.ndarray
    edge_values: np.ndarray
    triangles: np.ndarray
    triangle_values: np.ndarray

    @classmethod
    def from_graph(cls, values, edges, fill: bool = True, triangles=None):
        f = np.asarray(values, dtype=np.float64)
        if f.ndim != 1:
            raise ValueError("vertex values must be one-dimensional")
        if not np.all(np.isfinite(f)):
            raise ValueError("vertex values must be finite")
        E = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        E = np.sort(E, axis=1)
        if E.size and (E.min() < 0 or E.max() >= f.size):
            raise ValueError("edge refers to a vertex outside the graph")
        E = E[E[:, 0] != E[:, 1]]
        E = np.unique(E, axis=0) if E.size else E
        if triangles is None:
            T = flag_fill_triangles(E) if fill else np.zeros((0, 3), dtype=np.int64)
        else:
            T = np.sort(np.asarray(triangles, dtype=np.int64).reshape(-1, 3), axis=1)
        ev = np.maximum(f[E[:, 0]], f[E[:, 1]]) if E.size else np.zeros(0)
        tv = f[T].max(axis=1) if T.size else np.zeros(0)
        if E.size:
            order = np.lexsort((E[:, 1], E[:, 0], ev))
            E, ev = E[order], ev[order]
        if T.size:
            order = np.lexsort((T[:, 2], T[:, 1], T[:, 0], tv))
            T, tv = T[order], tv[order]
        return cls(values=f, edges=E, edge_values=ev, triangles=T, triangle_values=tv)

    @property
    def n_vertices(self) -> int:
        return self.values.size

    @property
    def max_value(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    def simplices(self):
        """All simplices as (value, dim, vertex tuple) in filtration order."""
        out = [(float(v), 0, (i,)) for i, v in enumerate(self.values)]
        out += [(float(v), 1, tuple(map(int, e))) for e, v in zip(self.edges, self.edge_values)]
        out += [(float(v), 2, tuple(map(int, t))) for t, v in zip(self.triangles, self.triangle_values)]
        out.sort(key=lambda s: (s[0], s[1], s[2]))
        return out


@dataclass(frozen=True)
class PersistenceDiagram:
    dim: int
    births: np.ndarray
    deaths: np.ndarray
    essential: np.ndarray

    def __len__(self):
        return self.births.size

    @property
    def pairs(self):
        return list(zip(self.births.tolist(), self.deaths.tolist(), self.essential.tolist()))

    def betti(self, threshold: float) -> int:
        """Rank at ``threshold`` implied by the diagram (essential classes never die)."""
        alive = (self.births <= threshold) & ((self.deaths > threshold) | self.essential)
        return int(alive.sum())

    @classmethod
    def from_pairs(cls, dim, pairs, essential=None):
        pairs = list(pairs)
        b = np.array([p[0] for p in pairs], dtype=np.float64)
        d = np.array([p[1] for p in pairs], dtype=np.float64)
        if essential is None:
            essential = [bool(p[2]) if len(p) > 2 else False for p in pairs]
        return cls(dim=dim, births=b, deaths=d, essential=np.array(essential, dtype=bool))


class _UnionFind:
    def __init__(self, keys):
        self.parent = list(range(len(keys)))
        self.key = list(keys)  # (birth value, vertex index) of the oldest member

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root


def _h0(cx: FilteredComplex):
    f = cx.values
    uf = _UnionFind([(float(f[i]), i) for i in range(f.size)])
    births, deaths = [], []
    negative = np.zeros(len(cx.edges), dtype=bool)
    for pos, ((u, v), w) in enumerate(zip(cx.edges.tolist(), cx.edge_values.tolist())):
        ru, rv = uf.find(u), uf.find(v)
        if ru == rv:
            continue
        negative[pos] = True
        # elder rule: the component with the larger (min value, min index) dies
        old, young = (ru, rv) if uf.key[ru] < uf.key[rv] else (rv, ru)
        births.append(uf.key[young][0])
        deaths.append(w)
        uf.parent[young] = old
    roots = sorted({uf.find(i) for i in range(f.size)}, key=lambda r: uf.key[r])
    cap = cx.max_value
    ess_births = [uf.key[r][0] for r in roots]
    return births, deaths, ess_births, cap, negative


def persistence_h0(cx: FilteredComplex) -> PersistenceDiagram:
    """Connected-component pairs; one essential class per component of the full graph."""
    births, deaths, ess, cap, _ = _h0(cx)
    b = np.array(births + ess, dtype=np.float64)
    d = np.array(deaths + [cap] * len(ess), dtype=np.float64)
    flag = np.array([False] * len(births) + [True] * len(ess), dtype=bool)
    return PersistenceDiagram(0, b, d, flag)


def persistence_h1(cx: FilteredComplex) -> PersistenceDiagram:
    """Cycle pairs from the mod-2 reduction of the triangle boundary matrix.

    Columns are triangles in filtration order, rows are edges; each column
    is held as a Python int bitset over edge positions so that column
    addition is a single XOR. A reduced column with lowest edge ``e`` kills
    the cycle that ``e`` created. Edges that neither merge components nor
    get killed are essential.
    """
    _, _, _, cap, negative = _h0(cx)
    edge_pos = {(int(u), int(v)): i for i, (u, v) in enumerate(cx.edges.tolist())}
    pivots = {}
    killer = {}
    for j, (a, b, c) in enumerate(cx.triangles.tolist()):
        col = (1 << edge_pos[(a, b)]) | (1 << edge_pos[(a, c)]) | (1 << edge_pos[(b, c)])
        while col:
            low = col.bit_length() - 1
            other = pivots.get(low)
            if other is None:
                pivots[low] = col
                killer[low] = j
                break
            col ^= other
    births, deaths, flags = [], [], []
    ev, tv = cx.edge_values, cx.triangle_values
    for pos in range(len(cx.edges)):
        if negative[pos]:
            continue
        births.append(float(ev[pos]))
        j = killer.get(pos)
        if j is None:
            deaths.append(cap)
            flags.append(True)
        else:
            deaths.append(float(tv[j]))
            flags.append(False)
    return PersistenceDiagram(
        1, np.array(births, dtype=np.float64), np.array(deaths, dtype=np.float64),
        np.array(flags, dtype=bool),
    )


def _gf2_rank(columns) -> int:
    pivots = {}
    rank = 0
    for col in columns:
        while col:
            low = col.bit_length() - 1
            if low in pivots:
                col ^= pivots[low]
            else:
                pivots[low] = col
                rank += 1
                break
    return rank


def betti_at(cx: FilteredComplex, threshold: float):
    """(beta0, beta1) of the sublevel complex ``{simplex : value <= threshold}``."""
    vmask = cx.values <= threshold
    n_v = int(vmask.sum())
    if n_v == 0:
        return 0, 0
    emask = cx.edge_values <= threshold
    E = cx.edges[emask]
    uf = _UnionFind([(0.0, i) for i in range(cx.n_vertices)])
    components = n_v
    for u, v in E.tolist():
        ru, rv = uf.find(u), uf.find(v)
        if ru != rv:
            uf.parent[ru] = rv
            components -= 1
    edge_pos = {(int(u), int(v)): i for i, (u, v) in enumerate(E.tolist())}
    cols = []
    for a, b, c in cx.triangles[cx.triangle_values <= threshold].tolist():
        cols.append((1 << edge_pos[(a, b)]) | (1 << edge_pos[(a, c)]) | (1 << edge_pos[(b, c)]))
    beta1 = len(E) - n_v + components - _gf2_rank(cols)
    return components, beta1


def total_persistence(diagram: PersistenceDiagram, policy: str = "cap") -> float:
    """Sum of squared lifetimes; ``cap`` keeps essential classes at their capped death."""
    if policy not in POLICIES:
        raise ValueError(f"unknown essential policy {policy!r}; expected one of {POLICIES}")
    life = diagram.deaths - diagram.births
    if policy == "drop":
        life = life[~diagram.essential]
    return float(np.sum(life ** 2))


def loss_persistence(ID, losses, k: int = 20, fill: bool = True):
    """kNN graph on potential distances filtered by loss: returns (complex, H0, H1)."""
    edges = build_knn_graph(ID, k)
    cx = FilteredComplex.from_graph(losses, edges, fill=fill)
    return cx, persistence_h0(cx), persistence_h1(cx)


def diagrams_to_csv(diagrams) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dim", "birth", "death", "essential"])
    for dgm in diagrams:
        for b, d, e in zip(dgm.births, dgm.deaths, dgm.essential):
            w.writerow([dgm.dim, f"{b:.17g}", f"{d:.17g}", int(bool(e))])
    return buf.getvalue()


def diagrams_from_csv(text: str):
    """Parse the ``dim,birth,death,essential`` format back into diagrams keyed by dim."""
    rows = {}
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["dim", "birth", "death", "essential"]:
        raise ValueError(f"unexpected diagram header {reader.fieldnames}")
    for row in reader:
        rows.setdefault(int(row["dim"]), []).append(
            (float(row["birth"]), float(row["death"]), row["essential"].strip() in ("1", "true", "True"))
        )
    return {dim: PersistenceDiagram.from_pairs(dim, pairs) for dim, pairs in sorted(rows.items())}
