"""Metapath instance counting, PathSim similarity, and similarity graphs.

Path counts are exact: the chain of 0/1 adjacency matrices is multiplied in
int64 with a float64 shadow product whose entries stay below 2**53, which
certifies that no intermediate overflowed (all terms are non-negative, so
every partial sum is bounded by the final value).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import HeteIN, NodeType, RelationType, Schema

_EXACT_LIMIT = float(2 ** 53)


class MetapathError(ValueError):
    pass


class PathCountOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class Metapath:
    """Ordered walk over the schema: types[i] -(relations[i])-> types[i+1].

    reversed_step[i] marks steps that traverse relations[i] against its
    declared direction.
    """

    types: tuple[NodeType, ...]
    relations: tuple[RelationType, ...]
    reversed_step: tuple[bool, ...]

    def __post_init__(self):
        if len(self.types) < 2:
            raise MetapathError("metapath needs at least two node types")
        if len(self.relations) != len(self.types) - 1:
            raise MetapathError("metapath needs one relation per consecutive type pair")
        for i, (r, rev) in enumerate(zip(self.relations, self.reversed_step)):
            a, b = (r.dst, r.src) if rev else (r.src, r.dst)
            if (a, b) != (self.types[i], self.types[i + 1]):
                raise MetapathError(
                    f"step {i}: relation {r.name!r} does not connect "
                    f"{self.types[i].name} to {self.types[i + 1].name}")

    @property
    def label(self) -> str:
        return "-".join(t.code for t in self.types)

    @property
    def length(self) -> int:
        """Number of edges traversed."""
        return len(self.relations)

    @property
    def is_symmetric(self) -> bool:
        """True for round-trip metapaths: palindromic types, even length, and
        a mirrored relation sequence (same-type steps must be symmetric
        relations).  These are exactly the metapaths whose count matrix is a
        Gram matrix, which keeps PathSim inside [0, 1]."""
        if self.length % 2 != 0:
            return False
        if tuple(reversed(self.types)) != self.types:
            return False
        l = self.length
        for i in range(l):
            j = l - 1 - i
            if self.relations[i] != self.relations[j]:
                return False
            if self.relations[i].src == self.relations[i].dst:
                if not self.relations[i].symmetric:
                    return False
            elif self.reversed_step[i] == self.reversed_step[j]:
                return False
        return True


def parse_metapath(label: str, schema: Schema) -> Metapath:
    """Resolve a dash-separated code string (e.g. "U-R-U") against the schema."""
    codes = [c.strip() for c in label.split("-")]
    if len(codes) < 2 or any(not c for c in codes):
        raise MetapathError(f"bad metapath label {label!r}")
    try:
        types = tuple(schema.type_by_code(c) for c in codes)
    except KeyError as e:
        raise MetapathError(f"metapath {label!r}: {e.args[0]}") from None
    relations, revs = [], []
    for i in range(len(types) - 1):
        cands = schema.relations_between(types[i], types[i + 1])
        if not cands:
            raise MetapathError(
                f"metapath {label!r}: no relation connects "
                f"{types[i].name} to {types[i + 1].name}")
        if len(cands) > 1:
            names = ", ".join(r.name for r, _ in cands)
            raise MetapathError(
                f"metapath {label!r}: ambiguous step {types[i].code}-{types[i+1].code} "
                f"(candidates: {names})")
        r, rev = cands[0]
        relations.append(r)
        revs.append(rev)
    return Metapath(types=types, relations=tuple(relations), reversed_step=tuple(revs))


@dataclass
class PathCountMatrix:
    metapath: Metapath
    counts: sp.csr_matrix  # int64, shape (|V_t0|, |V_tl|)


def _step_matrix(g: HeteIN, rel: RelationType, rev: bool) -> sp.csr_matrix:
    m = g.adjacency_matrix(rel)
    return m.T.tocsr() if rev else m


def count_paths(g: HeteIN, p: Metapath) -> PathCountMatrix:
    """Exact number of instances of p between every endpoint pair."""
    for r in p.relations:
        g.schema.relation(r.name)  # raises if the relation is not in this schema
    acc = _step_matrix(g, p.relations[0], p.reversed_step[0])
    shadow = acc.astype(np.float64)
    for rel, rev in zip(p.relations[1:], p.reversed_step[1:]):
        step = _step_matrix(g, rel, rev)
        acc = acc @ step
        shadow = shadow @ step.astype(np.float64)
        if shadow.nnz and shadow.data.max() >= _EXACT_LIMIT:
            raise PathCountOverflowError(
                f"path counts for {p.label} exceed 2**53; refusing inexact result")
    acc = acc.tocsr()
    acc.sum_duplicates()
    return PathCountMatrix(metapath=p, counts=acc)


def pathsim(counts: PathCountMatrix, x: int, y: int) -> float:
    """Similarity 2*c(x,y) / (c(x,x) + c(y,y)); 1.0 when x == y, 0.0 on a
    zero denominator."""
    m = counts.counts
    n = m.shape[0]
    if not (0 <= x < n and 0 <= y < n):
        raise MetapathError(f"node ids ({x},{y}) out of range for {counts.metapath.label}")
    if x == y:
        return 1.0
    denom = float(m[x, x]) + float(m[y, y])
    if denom == 0.0:
        return 0.0
    return 2.0 * float(m[x, y]) / denom


@dataclass
class SimilarityTable:
    """Per source node, its top-m most PathSim-similar peers (self excluded)."""

    metapath_label: str
    m: int
    n_nodes: int
    node_type: NodeType
    rows: list[tuple[np.ndarray, np.ndarray]]  # (neighbor ids, scores) per node


def top_m_similar(g: HeteIN, p: Metapath, m: int) -> SimilarityTable:
    """Highest-similarity peers per node: positive scores only, sorted by
    score descending then id ascending, at most m per row."""
    if m < 1:
        raise MetapathError("m must be >= 1")
    if not p.is_symmetric:
        raise MetapathError(
            f"metapath {p.label} is not symmetric; similarity needs a round trip")
    pc = count_paths(g, p)
    mat = pc.counts
    n = mat.shape[0]
    diag = mat.diagonal().astype(np.float64)
    rows: list[tuple[np.ndarray, np.ndarray]] = []
    indptr, indices, data = mat.indptr, mat.indices, mat.data
    for i in range(n):
        cols = indices[indptr[i]:indptr[i + 1]]
        vals = data[indptr[i]:indptr[i + 1]].astype(np.float64)
        keep = (cols != i) & (vals > 0)
        cols, vals = cols[keep], vals[keep]
        denom = diag[i] + diag[cols]
        ok = denom > 0
        cols, vals, denom = cols[ok], vals[ok], denom[ok]
        scores = 2.0 * vals / denom
        order = np.lexsort((cols, -scores))[:m]
        rows.append((cols[order].astype(np.int64), scores[order]))
    return SimilarityTable(metapath_label=p.label, m=m, n_nodes=n,
                           node_type=p.types[0], rows=rows)


@dataclass
class HomoGraph:
    """Single-type graph: each node points at its similar peers plus itself."""

    node_type: NodeType
    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray  # local ids, sorted per row, self-loop always present
    metapath_label: str = ""

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]


def build_homograph(table: SimilarityTable) -> HomoGraph:
    n = table.n_nodes
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for i in range(n):
        ids = table.rows[i][0]
        row = np.unique(np.concatenate([ids, np.array([i], dtype=np.int64)]))
        chunks.append(row)
        indptr[i + 1] = indptr[i] + len(row)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return HomoGraph(node_type=table.node_type, n_nodes=n,
                     indptr=indptr, indices=indices,
                     metapath_label=table.metapath_label)


# -- serialization ----------------------------------------------------------

def save_similarity_table(table: SimilarityTable, path: str | Path) -> None:
    """JSON-lines: one {metapath, src, neighbors:[{id,score}]} record per node,
    scores at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for src in range(table.n_nodes):
            ids, scores = table.rows[src]
            rec = {
                "metapath": table.metapath_label,
                "src": src,
                "neighbors": [
                    {"id": int(i), "score": float(f"{s:.17g}")}
                    for i, s in zip(ids, scores)
                ],
            }
            f.write(json.dumps(rec) + "\n")


def load_similarity_table(path: str | Path, schema: Schema, m: int) -> SimilarityTable:
    rows = []
    label = None
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            if label is None:
                label = rec["metapath"]
            elif rec["metapath"] != label:
                raise MetapathError(f"{path}: mixed metapath labels in one table")
            ids = np.array([n["id"] for n in rec["neighbors"]], dtype=np.int64)
            scores = np.array([n["score"] for n in rec["neighbors"]], dtype=np.float64)
            rows.append((ids, scores))
    if label is None:
        raise MetapathError(f"{path}: empty similarity table")
    p = parse_metapath(label, schema)
    return SimilarityTable(metapath_label=label, m=m, n_nodes=len(rows),
                           node_type=p.types[0], rows=rows)
