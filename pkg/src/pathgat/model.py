"""Two-channel attention recommender over a typed graph.

Full channel: stacked layers where every node attends over its neighbors
within each relation, then a learned softmax over relations fuses the
per-relation embeddings.  Similarity channels: one attention layer per
similarity graph (one graph per metapath).  Per scored type, channel outputs
concatenate and project to a shared output width; a pair's score is the
inner product of the two projected vectors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat, gather, matmul, mul, relu, reshape, segment_softmax, segment_sum, softmax, tanh, tmean, tsum
from .graph import HeteIN
from .metapath import HomoGraph, parse_metapath


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    heads: int = 4
    full_layers: int = 2
    out_dim: int = 128
    metapaths: tuple[str, ...] = ("U-R-U", "R-U-R", "R-I-R")
    top_m: int = 10
    use_full_channel: bool = True
    target_relation: str = "user-recipe"

    def __post_init__(self):
        if self.embed_dim <= 0 or self.out_dim <= 0 or self.heads <= 0:
            raise ModelConfigError("dimensions and head count must be positive")
        if self.embed_dim % self.heads != 0:
            raise ModelConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.full_layers < 1:
            raise ModelConfigError("need at least one attention layer")
        if self.top_m < 1:
            raise ModelConfigError("top_m must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metapaths"] = list(self.metapaths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "metapaths" in d:
            d["metapaths"] = tuple(d["metapaths"])
        return cls(**d)


def save_model_config(cfg: ModelConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model_config(path: str | Path) -> ModelConfig:
    with open(path, encoding="utf-8") as f:
        return ModelConfig.from_dict(json.load(f))


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def multi_head_attention(head_params, x_agg: Tensor, x_nbr: Tensor,
                         agg_idx: np.ndarray, nbr_idx: np.ndarray,
                         n_agg: int, stats: list | None = None,
                         adj=None, adj_t=None) -> Tensor:
    """Attention aggregation of neighbor features into each target node.

    head_params is a list of (Wz, Wa, Wh) triples, one per head.  Per head:
    z = x Wz; per-edge logits from Wa applied to the concatenated endpoint
    z's; softmax over each target's neighbor set (per output dimension);
    aggregated messages plus the Wh-mapped sum of elementwise products
    x_i * x_j, through relu.  Head outputs concatenate.

    adj/adj_t (optional, a scipy CSR of the same edges and its transpose)
    only short-cut the neighbor feature sums.  Nodes with no neighbors come
    out as zero rows.
    """
    if adj is not None:
        nbr_sum = ad.spmm(adj, adj_t, x_nbr)
    else:
        nbr_sum = segment_sum(gather(x_nbr, nbr_idx), agg_idx, n_agg)
    had_base = mul(x_agg, nbr_sum)  # x_i * sum_j x_j == sum_j (x_i * x_j)
    shared = x_agg is x_nbr

    # Heads evaluate jointly: the neighbor softmax is independent per output
    # column, so concatenating head columns first and doing edge-level work
    # once is exactly the per-head computation with far fewer passes.
    wz_all = concat([Wz for Wz, _, _ in head_params], axis=1)
    wh_all = concat([Wh for _, _, Wh in head_params], axis=1)
    z_agg = matmul(x_agg, wz_all)
    z_nbr = z_agg if shared else matmul(x_nbr, wz_all)
    score_i_cols, score_j_cols = [], []
    for h, (Wz, Wa, _) in enumerate(head_params):
        dh = Wz.shape[1]
        zh_agg = z_agg[:, h * dh:(h + 1) * dh]
        zh_nbr = z_nbr if shared else z_nbr[:, h * dh:(h + 1) * dh]
        if shared:
            zh_nbr = zh_agg
        # (z_i || z_j) @ Wa splits into per-node halves, looked up per edge
        score_i_cols.append(matmul(zh_agg, Wa[:dh]))
        score_j_cols.append(matmul(zh_nbr, Wa[dh:]))
    score_i = concat(score_i_cols, axis=1)
    score_j = concat(score_j_cols, axis=1)

    logits = gather(score_i, agg_idx) + gather(score_j, nbr_idx)
    alpha = segment_softmax(logits, agg_idx, n_agg)
    if stats is not None:
        stats.append((alpha.data, agg_idx, n_agg))
    msg = segment_sum(mul(alpha, gather(z_nbr, nbr_idx)), agg_idx, n_agg)
    return relu(msg + matmul(had_base, wh_all))


def relation_fusion(feats: list[Tensor], wr_list: list[Tensor],
                    b: Tensor, q: Tensor,
                    stats: list | None = None) -> Tensor:
    """Fuse per-relation embeddings of one node type.

    Each relation gets a scalar importance: the node-averaged inner product
    of tanh(x Wr + b) with q.  A softmax over relations turns these into
    weights; the output is the weighted sum of the relation embeddings.
    """
    if not feats:
        raise ModelConfigError("relation fusion needs at least one relation")
    scores = []
    for x, wr in zip(feats, wr_list):
        s = tanh(matmul(x, wr) + b)
        scores.append(reshape(tmean(tsum(mul(s, q), axis=1)), (1,)))
    beta = softmax(concat(scores, axis=0), axis=0)
    if stats is not None:
        stats.append(beta.data.copy())
    fused = mul(feats[0], beta[0])
    for r in range(1, len(feats)):
        fused = fused + mul(feats[r], beta[r])
    return fused


@dataclass
class _View:
    """One direction of a relation: agg-type nodes attend over nbr-type
    neighbors.  Edges sorted by (agg, nbr) so aggregation order is fixed."""
    key: str
    relation: str
    agg_type: str
    nbr_type: str
    agg_idx: np.ndarray
    nbr_idx: np.ndarray
    adj: object = None    # scipy CSR (n_agg x n_nbr) over the same edges
    adj_t: object = None


def _edge_csr(agg_idx, nbr_idx, n_agg, n_nbr):
    import scipy.sparse as sp
    m = sp.csr_matrix((np.ones(len(agg_idx)), (agg_idx, nbr_idx)),
                      shape=(n_agg, n_nbr), dtype=np.float64)
    return m, m.T.tocsr()


def _relation_views(g: HeteIN) -> list[_View]:
    views = []
    for r in g.schema.relations:
        fwd = g.edge_array(r)
        n_src, n_dst = g.n_nodes(r.src), g.n_nodes(r.dst)
        adj, adj_t = _edge_csr(fwd[:, 0], fwd[:, 1], n_src, n_dst)
        if r.src == r.dst:
            views.append(_View(f"{r.name}@{r.src.name}", r.name, r.src.name,
                               r.dst.name, fwd[:, 0], fwd[:, 1], adj, adj_t))
            continue
        views.append(_View(f"{r.name}@{r.src.name}", r.name, r.src.name,
                           r.dst.name, fwd[:, 0], fwd[:, 1], adj, adj_t))
        order = np.lexsort((fwd[:, 0], fwd[:, 1]))
        views.append(_View(f"{r.name}@{r.dst.name}", r.name, r.dst.name,
                           r.src.name, fwd[order, 1], fwd[order, 0], adj_t, adj))
    return views


@dataclass
class EmbeddingScorer:
    """Frozen output embeddings; scores are plain inner products."""
    user_emb: np.ndarray
    item_emb: np.ndarray
    user_offset: int
    item_offset: int

    def score_candidates(self, user_gid: int, cand_gids) -> np.ndarray:
        cand = np.asarray(cand_gids, dtype=np.int64) - self.item_offset
        u = self.user_emb[user_gid - self.user_offset]
        return self.item_emb[cand] @ u

    def score(self, user_gid: int, item_gid: int) -> float:
        return float(self.score_candidates(user_gid, [item_gid])[0])


class Recommender:
    """Holds all parameters and runs the channel forwards over one graph."""

    def __init__(self, graph: HeteIN, config: ModelConfig,
                 rng: np.random.Generator,
                 homographs: dict[str, HomoGraph] | None = None):
        self.graph = graph
        self.config = config
        self.homographs = dict(homographs or {})
        rel = graph.schema.relation(config.target_relation)
        self.user_type = rel.src
        self.item_type = rel.dst
        self.views = _relation_views(graph)
        self.views_into: dict[str, list[_View]] = {t.name: [] for t in graph.schema.types}
        for v in self.views:
            self.views_into[v.agg_type].append(v)

        self._channel_type: dict[str, str] = {}
        for label in config.metapaths:
            p = parse_metapath(label, graph.schema)
            self._channel_type[label] = p.types[0].name
            if label not in self.homographs:
                raise ModelConfigError(f"no similarity graph supplied for metapath {label}")
            if self.homographs[label].node_type.name != p.types[0].name:
                raise ModelConfigError(f"similarity graph for {label} has wrong node type")

        for t in (self.user_type, self.item_type):
            if not config.use_full_channel and not any(
                    ct == t.name for ct in self._channel_type.values()):
                raise ModelConfigError(
                    f"type {t.name} has no channel to score; add a metapath "
                    f"ending at {t.name} or enable the full channel")

        self.params: dict[str, Tensor] = {}
        self._init_params(rng)
        self._homo_edges: dict[str, tuple] = {}
        self.collect_stats = False
        self.stats: dict[str, list] = {"alpha": [], "beta": []}

    # -- parameters --------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = ad.parameter(data)
        self.params[name] = t
        return t

    def _init_params(self, rng: np.random.Generator):
        cfg = self.config
        d, dh = cfg.embed_dim, cfg.embed_dim // cfg.heads
        for t in self.graph.schema.types:
            n = self.graph.n_nodes(t)
            self._add(f"embed/{t.name}", rng.normal(0.0, 0.1, size=(n, d)))
            self._add(f"proj/{t.name}", glorot(rng, (d, d)))
        if cfg.use_full_channel:
            for l in range(cfg.full_layers):
                for v in self.views:
                    for h in range(cfg.heads):
                        self._add(f"full/l{l}/{v.key}/h{h}/Wz", glorot(rng, (d, dh)))
                        self._add(f"full/l{l}/{v.key}/h{h}/Wa", glorot(rng, (2 * dh, dh)))
                        self._add(f"full/l{l}/{v.key}/h{h}/Wh", glorot(rng, (d, dh)))
                for t in self.graph.schema.types:
                    if not self.views_into[t.name]:
                        continue
                    for v in self.views_into[t.name]:
                        self._add(f"full/l{l}/fuse/{t.name}/Wr/{v.key}", glorot(rng, (d, d)))
                    self._add(f"full/l{l}/fuse/{t.name}/b", np.zeros(d))
                    self._add(f"full/l{l}/fuse/{t.name}/q", glorot(rng, (d,)))
        for label in cfg.metapaths:
            for h in range(cfg.heads):
                self._add(f"mp/{label}/h{h}/Wz", glorot(rng, (d, dh)))
                self._add(f"mp/{label}/h{h}/Wa", glorot(rng, (2 * dh, dh)))
                self._add(f"mp/{label}/h{h}/Wh", glorot(rng, (d, dh)))
        for t in (self.user_type, self.item_type):
            width = (d if cfg.use_full_channel else 0) + d * sum(
                1 for ct in self._channel_type.values() if ct == t.name)
            self._add(f"out/{t.name}", glorot(rng, (width, cfg.out_dim)))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _head_params(self, prefix: str):
        return [(self.params[f"{prefix}/h{h}/Wz"],
                 self.params[f"{prefix}/h{h}/Wa"],
                 self.params[f"{prefix}/h{h}/Wh"]) for h in range(self.config.heads)]

    # -- forward -------------------------------------------------------------

    def projected(self) -> dict[str, Tensor]:
        """Per type, embedding rows mapped through the type's projection."""
        return {t.name: matmul(self.params[f"embed/{t.name}"],
                               self.params[f"proj/{t.name}"])
                for t in self.graph.schema.types}

    def project(self, gid: int) -> Tensor:
        t, lid = self.graph.local(gid)
        row = gather(self.params[f"embed/{t.name}"], np.array([lid]))
        return reshape(matmul(row, self.params[f"proj/{t.name}"]), (-1,))

    def forward_full(self, x0: dict[str, Tensor] | None = None) -> dict[str, Tensor]:
        """Stacked attention + relation fusion over the whole graph."""
        cfg = self.config
        x = x0 if x0 is not None else self.projected()
        astats = self.stats["alpha"] if self.collect_stats else None
        bstats = self.stats["beta"] if self.collect_stats else None
        for l in range(cfg.full_layers):
            new_x: dict[str, Tensor] = {}
            for t in self.graph.schema.types:
                views = self.views_into[t.name]
                if not views or self.graph.n_nodes(t) == 0:
                    new_x[t.name] = x[t.name]
                    continue
                feats = []
                for v in views:
                    feats.append(multi_head_attention(
                        self._head_params(f"full/l{l}/{v.key}"),
                        x[t.name], x[v.nbr_type], v.agg_idx, v.nbr_idx,
                        self.graph.n_nodes(t), stats=astats,
                        adj=v.adj, adj_t=v.adj_t))
                new_x[t.name] = relation_fusion(
                    feats,
                    [self.params[f"full/l{l}/fuse/{t.name}/Wr/{v.key}"] for v in views],
                    self.params[f"full/l{l}/fuse/{t.name}/b"],
                    self.params[f"full/l{l}/fuse/{t.name}/q"],
                    stats=bstats)
            x = new_x
        return x

    def forward_metapath(self, label: str, x0: dict[str, Tensor] | None = None) -> Tensor:
        """Single attention layer over one similarity graph."""
        h = self.homographs[label]
        tname = self._channel_type[label]
        x = (x0 if x0 is not None else self.projected())[tname]
        if label not in self._homo_edges:
            src = np.repeat(np.arange(h.n_nodes, dtype=np.int64), np.diff(h.indptr))
            self._homo_edges[label] = (src, h.indices,
                                       *_edge_csr(src, h.indices, h.n_nodes, h.n_nodes))
        src, nbr, adj, adj_t = self._homo_edges[label]
        astats = self.stats["alpha"] if self.collect_stats else None
        return multi_head_attention(self._head_params(f"mp/{label}"),
                                    x, x, src, nbr, h.n_nodes, stats=astats,
                                    adj=adj, adj_t=adj_t)

    def forward_channels(self) -> dict[str, Tensor]:
        """Fused per-type output embeddings for the two scored types."""
        x0 = self.projected()
        full = self.forward_full(x0) if self.config.use_full_channel else None
        chans = {label: self.forward_metapath(label, x0)
                 for label in self.config.metapaths}
        outs: dict[str, Tensor] = {}
        for t in (self.user_type, self.item_type):
            parts = []
            if full is not None:
                parts.append(full[t.name])
            for label in self.config.metapaths:
                if self._channel_type[label] == t.name:
                    parts.append(chans[label])
            cat = parts[0] if len(parts) == 1 else concat(parts, axis=1)
            outs[t.name] = matmul(cat, self.params[f"out/{t.name}"])
        return outs

    # -- scoring ---------------------------------------------------------------

    def scores(self, outs: dict[str, Tensor], user_lids, item_lids) -> Tensor:
        u = gather(outs[self.user_type.name], np.asarray(user_lids, dtype=np.int64))
        r = gather(outs[self.item_type.name], np.asarray(item_lids, dtype=np.int64))
        return tsum(mul(u, r), axis=1)

    def fuse_and_score(self, user_gid: int, item_gid: int,
                       outs: dict[str, Tensor] | None = None) -> float:
        if outs is None:
            outs = self.forward_channels()
        ut, ulid = self.graph.local(user_gid)
        it, ilid = self.graph.local(item_gid)
        if ut != self.user_type or it != self.item_type:
            raise ModelConfigError(
                f"fuse_and_score expects ({self.user_type.name}, {self.item_type.name}) "
                f"ids, got ({ut.name}, {it.name})")
        return self.scores(outs, [ulid], [ilid]).data[0]

    def export_scorer(self, outs: dict[str, Tensor] | None = None) -> EmbeddingScorer:
        if outs is None:
            outs = self.forward_channels()
        return EmbeddingScorer(
            user_emb=outs[self.user_type.name].data.copy(),
            item_emb=outs[self.item_type.name].data.copy(),
            user_offset=self.graph.offset(self.user_type),
            item_offset=self.graph.offset(self.item_type))
