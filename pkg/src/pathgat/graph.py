"""Typed heterogeneous network storage, TSV ingest, and target-edge splitting.

Node ids are global integers partitioned into one contiguous range per node
type (schema declaration order).  On disk, ids are local to their type; the
loader assigns global ids as ``type_offset + local_id``.  Each relation is
stored as a CSR adjacency over local indices, rows = source nodes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Malformed input file (carries the offending line number)."""


class GraphValidationError(ValueError):
    """Structurally invalid graph: dangling endpoints, duplicates, bad ids."""


@dataclass(frozen=True)
class NodeType:
    name: str
    code: str  # single-letter label used in metapath notation


@dataclass(frozen=True)
class RelationType:
    name: str
    src: NodeType
    dst: NodeType
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric and self.src != self.dst:
            raise GraphValidationError(
                f"relation {self.name!r}: symmetric requires equal endpoint types"
            )


@dataclass(frozen=True)
class Schema:
    types: tuple[NodeType, ...]
    relations: tuple[RelationType, ...]

    def __post_init__(self):
        names = [t.name for t in self.types]
        codes = [t.code for t in self.types]
        if len(set(names)) != len(names) or len(set(codes)) != len(codes):
            raise GraphValidationError("node type names and codes must be unique")
        keys = [(r.src.name, r.dst.name, r.name) for r in self.relations]
        if len(set(keys)) != len(keys):
            raise GraphValidationError("duplicate relation declaration")
        if len({r.name for r in self.relations}) != len(self.relations):
            raise GraphValidationError("relation names must be unique")

    def type_by_name(self, name: str) -> NodeType:
        for t in self.types:
            if t.name == name:
                return t
        raise KeyError(f"unknown node type {name!r}")

    def type_by_code(self, code: str) -> NodeType:
        for t in self.types:
            if t.code == code:
                return t
        raise KeyError(f"unknown node type code {code!r}")

    def relation(self, name: str) -> RelationType:
        for r in self.relations:
            if r.name == name:
                return r
        raise KeyError(f"unknown relation {name!r}")

    def relations_between(self, src: NodeType, dst: NodeType) -> list[tuple[RelationType, bool]]:
        """All (relation, reversed) pairs usable to step from src to dst."""
        out = []
        for r in self.relations:
            if r.src == src and r.dst == dst:
                out.append((r, False))
            elif r.src == dst and r.dst == src and r.src != r.dst:
                out.append((r, True))
        return out


def recipe_schema() -> Schema:
    """The default three-type schema: users rate recipes made of ingredients."""
    user = NodeType("User", "U")
    recipe = NodeType("Recipe", "R")
    ingredient = NodeType("Ingredient", "I")
    return Schema(
        types=(user, recipe, ingredient),
        relations=(
            RelationType("user-recipe", user, recipe),
            RelationType("recipe-recipe", recipe, recipe, symmetric=True),
            RelationType("recipe-ingredient", recipe, ingredient),
            RelationType("ingredient-ingredient", ingredient, ingredient, symmetric=True),
        ),
    )


@dataclass(frozen=True)
class _Csr:
    """Adjacency rows over local src ids; column ids local to the dst type."""

    indptr: np.ndarray   # int64, shape (n_src + 1,)
    indices: np.ndarray  # int64, local dst ids, sorted ascending per row
    weights: np.ndarray | None = None

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def row_weights(self, i: int) -> np.ndarray | None:
        if self.weights is None:
            return None
        return self.weights[self.indptr[i]:self.indptr[i + 1]]


def _build_csr(n_src: int, src: np.ndarray, dst: np.ndarray,
               w: np.ndarray | None) -> _Csr:
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    if w is not None:
        w = w[order]
    indptr = np.zeros(n_src + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return _Csr(indptr=indptr, indices=dst.astype(np.int64), weights=w)


class HeteIN:
    """Immutable typed graph; constructed via build_hetein or load_hetein."""

    def __init__(self, schema: Schema, counts: dict[str, int],
                 adj: dict[str, _Csr],
                 external_keys: dict[str, list[str]] | None = None):
        self.schema = schema
        self.counts = dict(counts)
        self._adj = adj
        self.external_keys = external_keys
        offsets = {}
        acc = 0
        for t in schema.types:
            offsets[t.name] = acc
            acc += counts[t.name]
        self._offsets = offsets
        self._total = acc

    # -- node id helpers -------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return self._total

    def n_nodes(self, t: NodeType | str) -> int:
        name = t.name if isinstance(t, NodeType) else t
        return self.counts[name]

    def offset(self, t: NodeType | str) -> int:
        name = t.name if isinstance(t, NodeType) else t
        return self._offsets[name]

    def gid(self, t: NodeType | str, local_id: int) -> int:
        name = t.name if isinstance(t, NodeType) else t
        if not 0 <= local_id < self.counts[name]:
            raise GraphValidationError(f"node id {local_id} out of range for type {name}")
        return self._offsets[name] + local_id

    def type_of(self, gid: int) -> NodeType:
        if not 0 <= gid < self._total:
            raise GraphValidationError(f"global node id {gid} out of range")
        for t in self.schema.types:
            if gid < self._offsets[t.name] + self.counts[t.name]:
                return t
        raise GraphValidationError(f"global node id {gid} out of range")

    def local(self, gid: int) -> tuple[NodeType, int]:
        t = self.type_of(gid)
        return t, gid - self._offsets[t.name]

    # -- adjacency queries -----------------------------------------------

    def neighbors(self, node: int, rel: RelationType | str) -> np.ndarray:
        """Global ids of node's rel-neighbors, sorted ascending."""
        r = self.schema.relation(rel) if isinstance(rel, str) else rel
        t, lid = self.local(node)
        if t != r.src:
            raise GraphValidationError(
                f"node {node} has type {t.name}, not relation {r.name!r} source {r.src.name}"
            )
        return self._adj[r.name].row(lid) + self._offsets[r.dst.name]

    def adjacency_matrix(self, rel: RelationType | str) -> sp.csr_matrix:
        """Binary |V_src| x |V_dst| matrix over local ids, int64 entries."""
        r = self.schema.relation(rel) if isinstance(rel, str) else rel
        a = self._adj[r.name]
        data = np.ones(a.nnz, dtype=np.int64)
        return sp.csr_matrix((data, a.indices.copy(), a.indptr.copy()),
                             shape=(self.counts[r.src.name], self.counts[r.dst.name]))

    def num_edges(self, rel: RelationType | str) -> int:
        r = self.schema.relation(rel) if isinstance(rel, str) else rel
        return self._adj[r.name].nnz

    def edge_array(self, rel: RelationType | str) -> np.ndarray:
        """All edges of a relation as an (n, 2) array of local (src, dst) ids."""
        r = self.schema.relation(rel) if isinstance(rel, str) else rel
        a = self._adj[r.name]
        src = np.repeat(np.arange(self.counts[r.src.name], dtype=np.int64),
                        np.diff(a.indptr))
        return np.stack([src, a.indices], axis=1)

    # -- derived graphs ---------------------------------------------------

    def without_edges(self, rel: RelationType | str, pairs: np.ndarray) -> "HeteIN":
        """Copy of the graph with the given local (src, dst) pairs removed."""
        r = self.schema.relation(rel) if isinstance(rel, str) else rel
        edges = self.edge_array(r)
        keep = np.ones(len(edges), dtype=bool)
        drop = {(int(a), int(b)) for a, b in np.asarray(pairs, dtype=np.int64)}
        for i, (a, b) in enumerate(edges):
            if (int(a), int(b)) in drop:
                keep[i] = False
        a = self._adj[r.name]
        w = a.weights
        new = dict(self._adj)
        new[r.name] = _build_csr(
            self.counts[r.src.name],
            edges[keep, 0], edges[keep, 1],
            None if w is None else self._expanded_weights(r)[keep],
        )
        return HeteIN(self.schema, self.counts, new, self.external_keys)

    def _expanded_weights(self, r: RelationType) -> np.ndarray:
        return self._adj[r.name].weights

    def permute_type(self, t: NodeType | str, perm: np.ndarray) -> "HeteIN":
        """Relabel nodes of one type: new local id of node i is perm[i]."""
        t = self.schema.type_by_name(t) if isinstance(t, str) else t
        perm = np.asarray(perm, dtype=np.int64)
        n = self.counts[t.name]
        if sorted(perm.tolist()) != list(range(n)):
            raise GraphValidationError("perm must be a permutation of the type's ids")
        new = {}
        for r in self.schema.relations:
            a = self._adj[r.name]
            edges = self.edge_array(r)
            src, dst = edges[:, 0], edges[:, 1]
            if r.src == t:
                src = perm[src]
            if r.dst == t:
                dst = perm[dst]
            new[r.name] = _build_csr(self.counts[r.src.name], src, dst, a.weights)
        return HeteIN(self.schema, self.counts, new, None)


def build_hetein(schema: Schema, counts: dict[str, int],
                 edges: dict[str, tuple[np.ndarray, np.ndarray]] | dict[str, tuple],
                 weights: dict[str, np.ndarray] | None = None,
                 external_keys: dict[str, list[str]] | None = None) -> HeteIN:
    """Validate and assemble a HeteIN from per-relation local edge arrays."""
    for t in schema.types:
        if counts.get(t.name, -1) < 0:
            raise GraphValidationError(f"missing node count for type {t.name}")
    for name in edges:
        schema.relation(name)  # raises on unknown relation

    adj: dict[str, _Csr] = {}
    for r in schema.relations:
        if r.name in edges:
            src, dst = edges[r.name]
            src = np.asarray(src, dtype=np.int64)
            dst = np.asarray(dst, dtype=np.int64)
        else:
            src = dst = np.zeros(0, dtype=np.int64)
        w = None if weights is None else weights.get(r.name)
        if w is not None:
            w = np.asarray(w, dtype=np.float64)
            if w.shape != src.shape:
                raise GraphValidationError(f"relation {r.name}: weight/edge length mismatch")
        n_src, n_dst = counts[r.src.name], counts[r.dst.name]
        if len(src) and (src.min() < 0 or src.max() >= n_src):
            bad = src[(src < 0) | (src >= n_src)][0]
            raise GraphValidationError(
                f"dangling endpoint: relation {r.name} src id {bad} outside 0..{n_src - 1}")
        if len(dst) and (dst.min() < 0 or dst.max() >= n_dst):
            bad = dst[(dst < 0) | (dst >= n_dst)][0]
            raise GraphValidationError(
                f"dangling endpoint: relation {r.name} dst id {bad} outside 0..{n_dst - 1}")
        pairs = set(zip(src.tolist(), dst.tolist()))
        if len(pairs) != len(src):
            raise GraphValidationError(f"duplicate edge in relation {r.name}")
        if r.symmetric:
            for a, b in zip(src.tolist(), dst.tolist()):
                if (b, a) not in pairs:
                    raise GraphValidationError(
                        f"symmetric relation {r.name} missing mirror of ({a},{b})")
        adj[r.name] = _build_csr(n_src, src, dst, w)
    return HeteIN(schema, counts, adj, external_keys)


# -- TSV ingest / emit ----------------------------------------------------

_NODES_HEADER = ["node_id", "type", "external_key"]
_EDGES_HEADER = ["relation", "src_id", "dst_id", "weight"]


def load_hetein(nodes_file: str | Path, edges_file: str | Path,
                schema: Schema | None = None) -> HeteIN:
    """Read nodes.tsv / edges.tsv (per-type local ids, header rows required).

    Symmetric relations may list either or both directions; the missing
    mirror is added.  Exact duplicate edges collapse; duplicates with
    conflicting weights are rejected.
    """
    schema = schema or recipe_schema()
    per_type: dict[str, list[tuple[int, str]]] = {t.name: [] for t in schema.types}

    with open(nodes_file, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != _NODES_HEADER:
            raise GraphFormatError(f"{nodes_file}: line 1: expected header "
                                   f"{chr(9).join(_NODES_HEADER)}")
        for ln, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise GraphFormatError(f"{nodes_file}: line {ln}: expected 3 columns")
            try:
                nid = int(row[0])
            except ValueError:
                raise GraphFormatError(f"{nodes_file}: line {ln}: bad node_id {row[0]!r}") from None
            tname = row[1].strip()
            if tname not in per_type:
                raise GraphFormatError(f"{nodes_file}: line {ln}: unknown type {tname!r}")
            per_type[tname].append((nid, row[2]))

    counts: dict[str, int] = {}
    external: dict[str, list[str]] = {}
    for tname, rows in per_type.items():
        ids = [nid for nid, _ in rows]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise GraphValidationError(f"duplicate node id {dup} for type {tname}")
        n = len(ids)
        if ids and (min(ids) != 0 or max(ids) != n - 1):
            raise GraphValidationError(
                f"type {tname}: ids must be dense 0..{n - 1}")
        keys = [""] * n
        for nid, key in rows:
            keys[nid] = key
        counts[tname] = n
        external[tname] = keys

    rel_edges: dict[str, dict[tuple[int, int], float | None]] = {
        r.name: {} for r in schema.relations}
    with open(edges_file, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != _EDGES_HEADER[:3]:
            raise GraphFormatError(f"{edges_file}: line 1: expected header "
                                   f"{chr(9).join(_EDGES_HEADER[:3])}[\tweight]")
        for ln, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise GraphFormatError(f"{edges_file}: line {ln}: expected >= 3 columns")
            rname = row[0].strip()
            if rname not in rel_edges:
                raise GraphFormatError(f"{edges_file}: line {ln}: unknown relation {rname!r}")
            try:
                s, d = int(row[1]), int(row[2])
            except ValueError:
                raise GraphFormatError(f"{edges_file}: line {ln}: bad edge ids "
                                       f"{row[1]!r}, {row[2]!r}") from None
            w = None
            if len(row) > 3 and row[3].strip() != "":
                try:
                    w = float(row[3])
                except ValueError:
                    raise GraphFormatError(
                        f"{edges_file}: line {ln}: bad weight {row[3]!r}") from None
            rel = schema.relation(rname)
            directions = [(s, d)] + ([(d, s)] if rel.symmetric and s != d else [])
            for a, b in directions:
                seen = rel_edges[rname].get((a, b), _MISSING)
                if seen is _MISSING:
                    rel_edges[rname][(a, b)] = w
                elif seen != w:
                    raise GraphValidationError(
                        f"{edges_file}: line {ln}: conflicting duplicate edge "
                        f"{rname} ({a},{b})")

    edges_in: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    weights_in: dict[str, np.ndarray] = {}
    for rname, pairs in rel_edges.items():
        if not pairs:
            continue
        items = sorted(pairs.items())
        src = np.array([p[0] for p, _ in items], dtype=np.int64)
        dst = np.array([p[1] for p, _ in items], dtype=np.int64)
        edges_in[rname] = (src, dst)
        ws = [w for _, w in items]
        if any(w is not None for w in ws):
            weights_in[rname] = np.array([0.0 if w is None else w for w in ws])
    return build_hetein(schema, counts, edges_in, weights_in or None, external)


_MISSING = object()


def save_hetein(g: HeteIN, nodes_file: str | Path, edges_file: str | Path) -> None:
    """Emit the TSV pair; output is byte-stable for a given graph."""
    with open(nodes_file, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(_NODES_HEADER) + "\n")
        for t in g.schema.types:
            keys = (g.external_keys or {}).get(t.name)
            for i in range(g.counts[t.name]):
                key = keys[i] if keys else f"{t.code}{i}"
                f.write(f"{i}\t{t.name}\t{key}\n")
    with open(edges_file, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(_EDGES_HEADER) + "\n")
        for r in g.schema.relations:
            a = g._adj[r.name]
            edges = g.edge_array(r)
            w = a.weights
            for i, (s, d) in enumerate(edges):
                wcol = "" if w is None else repr(float(w[i]))
                f.write(f"{r.name}\t{s}\t{d}\t{wcol}\n")


# -- target-edge splitting --------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    target_relation: str = "user-recipe"

    def __post_init__(self):
        if any(r < 0 for r in self.ratios):
            raise GraphValidationError("split ratios must be non-negative")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise GraphValidationError(f"split ratios sum to {sum(self.ratios)}, not 1")


@dataclass
class EdgeHoldout:
    train_graph: HeteIN
    val_edges: np.ndarray   # (n, 2) local (user, recipe) ids
    test_edges: np.ndarray


def split_target_edges(g: HeteIN, spec: SplitSpec) -> EdgeHoldout:
    """Partition target edges train/val/test: floor sizes for val and test,
    remainder to train.  Same seed, same partition."""
    rel = g.schema.relation(spec.target_relation)
    edges = g.edge_array(rel)
    n = len(edges)
    if n < 10:
        raise GraphValidationError(f"target relation {rel.name} has {n} edges; need >= 10")
    n_val = int(np.floor(n * spec.ratios[1]))
    n_test = int(np.floor(n * spec.ratios[2]))
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    order = rng.permutation(n)
    val = edges[order[:n_val]]
    test = edges[order[n_val:n_val + n_test]]
    held = np.concatenate([val, test], axis=0) if n_val + n_test else np.zeros((0, 2), np.int64)
    train_graph = g.without_edges(rel, held)
    return EdgeHoldout(train_graph=train_graph,
                       val_edges=val[np.lexsort((val[:, 1], val[:, 0]))],
                       test_edges=test[np.lexsort((test[:, 1], test[:, 0]))])


def write_split_manifest(holdout: EdgeHoldout, path: str | Path) -> None:
    """JSON-lines manifest of held-out edges: {user, recipe, fold} per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for fold, arr in (("val", holdout.val_edges), ("test", holdout.test_edges)):
            for u, r in arr:
                f.write(json.dumps({"user": int(u), "recipe": int(r), "fold": fold}) + "\n")


def apply_split_manifest(g: HeteIN, path: str | Path,
                         target_relation: str = "user-recipe") -> EdgeHoldout:
    """Rebuild an EdgeHoldout by removing manifest edges from the graph."""
    rel = g.schema.relation(target_relation)
    val, test = [], []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            pair = (int(rec["user"]), int(rec["recipe"]))
            if rec["fold"] == "val":
                val.append(pair)
            elif rec["fold"] == "test":
                test.append(pair)
            else:
                raise GraphFormatError(f"{path}: line {ln}: unknown fold {rec['fold']!r}")
    present = {tuple(e) for e in g.edge_array(rel).tolist()}
    for u, r in val + test:
        if (u, r) not in present:
            raise GraphValidationError(f"manifest edge ({u},{r}) not present in graph")
    val_a = np.array(val, dtype=np.int64).reshape(-1, 2)
    test_a = np.array(test, dtype=np.int64).reshape(-1, 2)
    held = np.concatenate([val_a, test_a], axis=0)
    return EdgeHoldout(train_graph=g.without_edges(rel, held),
                       val_edges=val_a[np.lexsort((val_a[:, 1], val_a[:, 0]))],
                       test_edges=test_a[np.lexsort((test_a[:, 1], test_a[:, 0]))])
