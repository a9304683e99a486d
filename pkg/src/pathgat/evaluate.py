"""Sampled-negative ranking evaluation.

Each held-out (user, recipe) pair becomes one trial: the positive is ranked
against sampled negative recipes (100 by default) by descending score, ties
broken by ascending node id.  Per-trial negative draws come from streams
derived from (seed, trial index), so results do not depend on worker count
or trial order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import HeteIN


class EvalError(ValueError):
    pass


@dataclass
class RankedTrial:
    user: int              # global ids
    positive: int
    negatives: np.ndarray
    rank: int              # 1-based among 1 + len(negatives) candidates


def rank_trial(scorer, user: int, positive: int, negatives) -> RankedTrial:
    """Rank the positive among the negatives by descending score; equal
    scores resolve in favor of the smaller node id."""
    negatives = np.asarray(negatives, dtype=np.int64)
    if positive in negatives:
        raise EvalError(f"positive {positive} appears among negatives")
    cands = np.concatenate([[positive], negatives])
    scores = np.asarray(scorer.score_candidates(user, cands), dtype=np.float64)
    s_pos = scores[0]
    s_neg = scores[1:]
    rank = 1 + int(np.sum(s_neg > s_pos)) + int(np.sum((s_neg == s_pos) & (negatives < positive)))
    return RankedTrial(user=user, positive=positive, negatives=negatives, rank=rank)


def metrics_at_k(trials: list[RankedTrial], k: int) -> tuple[float, float, float, float]:
    """(hit ratio, ndcg, precision, map) at cutoff k, averaged over trials.

    One relevant item per trial: hr = [rank <= k]; ndcg = 1/log2(rank + 1)
    inside the cutoff; precision = hr / k; average precision = 1/rank inside
    the cutoff.
    """
    if not trials:
        raise EvalError("metrics_at_k needs at least one trial")
    if k < 1:
        raise EvalError("k must be >= 1")
    ranks = np.array([t.rank for t in trials], dtype=np.float64)
    hit = ranks <= k
    hr = float(hit.mean())
    ndcg = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    precision = float((hit / k).mean())
    ap = float(np.where(hit, 1.0 / ranks, 0.0).mean())
    return hr, ndcg, precision, ap


@dataclass
class EvalReport:
    per_k: dict[int, dict[str, float]]
    avg: dict[str, float]
    trials: int
    skipped: int
    seed: int

    def to_json(self) -> str:
        doc = {
            "k": {str(k): self.per_k[k] for k in sorted(self.per_k)},
            "avg": self.avg,
            "trials": self.trials,
            "skipped": self.skipped,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())


def sample_trial_negatives(rng: np.random.Generator, n_items: int,
                           known_local: np.ndarray, num_negatives: int) -> np.ndarray:
    """Distinct local item ids outside the known set; the whole eligible pool
    if it is smaller than num_negatives, empty if nothing is eligible."""
    pool = np.setdiff1d(np.arange(n_items, dtype=np.int64), known_local)
    if len(pool) == 0:
        return pool
    take = min(num_negatives, len(pool))
    return rng.choice(pool, size=take, replace=False)


def evaluate(scorer, g: HeteIN, holdout_edges: np.ndarray, seed: int,
             num_negatives: int = 100, max_k: int = 10,
             target_relation: str = "user-recipe") -> tuple[EvalReport, list[RankedTrial]]:
    """Run one trial per held-out (user, recipe) local-id pair.

    g must be the full pre-split graph: a user's negative pool excludes every
    recipe linked to the user in any fold.  Users whose pool is empty are
    skipped and counted.
    """
    holdout_edges = np.asarray(holdout_edges, dtype=np.int64).reshape(-1, 2)
    if len(holdout_edges) == 0:
        raise EvalError("no holdout edges to evaluate")
    rel = g.schema.relation(target_relation)
    uoff, ioff = g.offset(rel.src), g.offset(rel.dst)
    n_items = g.n_nodes(rel.dst)

    known: dict[int, np.ndarray] = {}
    trials: list[RankedTrial] = []
    skipped = 0
    for idx, (u_lid, r_lid) in enumerate(holdout_edges):
        u_lid = int(u_lid)
        if u_lid not in known:
            known[u_lid] = g.neighbors(uoff + u_lid, rel) - ioff
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, idx])))
        negs = sample_trial_negatives(rng, n_items, known[u_lid], num_negatives)
        if len(negs) == 0:
            skipped += 1
            continue
        trials.append(rank_trial(scorer, uoff + u_lid, ioff + int(r_lid), negs + ioff))

    if not trials:
        raise EvalError("every holdout trial was skipped (no eligible negatives)")
    per_k = {}
    for k in range(1, max_k + 1):
        hr, ndcg, precision, ap = metrics_at_k(trials, k)
        per_k[k] = {"hr": hr, "ndcg": ndcg, "precision": precision, "map": ap}
    avg = {m: float(np.mean([per_k[k][m] for k in per_k]))
           for m in ("hr", "ndcg", "precision", "map")}
    return EvalReport(per_k=per_k, avg=avg, trials=len(trials),
                      skipped=skipped, seed=seed), trials


def write_trial_ranks(trials: list[RankedTrial], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("user,positive,rank\n")
        for t in trials:
            f.write(f"{t.user},{t.positive},{t.rank}\n")
