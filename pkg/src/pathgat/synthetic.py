"""Synthetic graph generators for experiments and tests.

random_hetein draws sparse uniform graphs over the recipe schema.
planted_hetein builds a two-block preference structure with finer taste
groups inside each block: users draw most interactions from their own group,
the rest uniformly within their block, and a small share crosses blocks so
that the within-block interaction rate is 10x the cross-block rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import HeteIN, build_hetein, recipe_schema


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _distinct_pairs(rng, n_src: int, n_dst: int, n_edges: int) -> tuple[np.ndarray, np.ndarray]:
    seen = set()
    src, dst = [], []
    cap = min(n_edges, n_src * n_dst)
    while len(seen) < cap:
        a = int(rng.integers(0, n_src))
        b = int(rng.integers(0, n_dst))
        if (a, b) not in seen:
            seen.add((a, b))
            src.append(a)
            dst.append(b)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)


def _mirror(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pairs = set(zip(src.tolist(), dst.tolist()))
    pairs |= {(b, a) for a, b in pairs}
    items = sorted(pairs)
    return (np.array([a for a, _ in items], dtype=np.int64),
            np.array([b for _, b in items], dtype=np.int64))


def random_hetein(seed, n_users: int = 8, n_recipes: int = 10,
                  n_ingredients: int = 6, avg_degree: float = 2.0) -> HeteIN:
    """Sparse uniform graph over the recipe schema; may leave nodes isolated."""
    rng = _rng(seed)
    schema = recipe_schema()
    counts = {"User": n_users, "Recipe": n_recipes, "Ingredient": n_ingredients}
    edges = {}
    ur = _distinct_pairs(rng, n_users, n_recipes, int(avg_degree * n_users))
    ri = _distinct_pairs(rng, n_recipes, n_ingredients, int(avg_degree * n_recipes))
    edges["user-recipe"] = ur
    edges["recipe-ingredient"] = ri
    if n_recipes > 1:
        rr = _distinct_pairs(rng, n_recipes, n_recipes, max(1, int(avg_degree * n_recipes / 2)))
        keep = rr[0] != rr[1]
        edges["recipe-recipe"] = _mirror(rr[0][keep], rr[1][keep])
    if n_ingredients > 1:
        ii = _distinct_pairs(rng, n_ingredients, n_ingredients,
                             max(1, int(avg_degree * n_ingredients / 2)))
        keep = ii[0] != ii[1]
        edges["ingredient-ingredient"] = _mirror(ii[0][keep], ii[1][keep])
    return build_hetein(schema, counts, edges)


@dataclass
class PlantedAssignments:
    user_block: np.ndarray
    user_group: np.ndarray
    recipe_block: np.ndarray
    recipe_group: np.ndarray
    ingredient_pool: np.ndarray


def planted_hetein(seed, n_users: int = 500, n_recipes: int = 1000,
                   n_ingredients: int = 200, n_blocks: int = 2,
                   groups_per_block: int = 10, interactions_per_user: int = 24,
                   cross_block_share: float = 1.0 / 11.0,
                   own_group_share: float = 0.9,
                   ingredients_per_recipe: int = 5,
                   similar_recipes: int = 2,
                   cooccurring_ingredients: int = 2) -> tuple[HeteIN, PlantedAssignments]:
    """Two preference blocks with taste groups inside each.

    With cross_block_share = 1/11, a user's expected interaction mass per
    in-block recipe is exactly 10x the mass per out-of-block recipe.
    """
    rng = _rng(seed)
    n_groups = n_blocks * groups_per_block

    user_group = np.arange(n_users, dtype=np.int64) * n_groups // n_users
    recipe_group = np.arange(n_recipes, dtype=np.int64) * n_groups // n_recipes
    ing_pool = np.arange(n_ingredients, dtype=np.int64) * n_groups // n_ingredients
    user_block = user_group // groups_per_block
    recipe_block = recipe_group // groups_per_block

    recipes_by_group = [np.flatnonzero(recipe_group == gidx) for gidx in range(n_groups)]
    recipes_by_block = [np.flatnonzero(recipe_block == b) for b in range(n_blocks)]
    ings_by_pool = [np.flatnonzero(ing_pool == gidx) for gidx in range(n_groups)]

    ur_src, ur_dst = [], []
    for u in range(n_users):
        g = int(user_group[u])
        b = int(user_block[u])
        out_block = np.flatnonzero(recipe_block != b)
        chosen: set[int] = set()
        cap = min(interactions_per_user, n_recipes)
        while len(chosen) < cap:
            roll = rng.random()
            if roll < cross_block_share:
                r = int(out_block[rng.integers(0, len(out_block))])
            elif roll < cross_block_share + (1.0 - cross_block_share) * own_group_share:
                pool = recipes_by_group[g]
                r = int(pool[rng.integers(0, len(pool))])
            else:
                pool = recipes_by_block[b]
                r = int(pool[rng.integers(0, len(pool))])
            if r not in chosen:
                chosen.add(r)
                ur_src.append(u)
                ur_dst.append(r)

    ri_src, ri_dst = [], []
    for r in range(n_recipes):
        pool = ings_by_pool[int(recipe_group[r])]
        chosen = set()
        cap = min(ingredients_per_recipe, n_ingredients)
        while len(chosen) < cap:
            if rng.random() < 0.8:
                i = int(pool[rng.integers(0, len(pool))])
            else:
                i = int(rng.integers(0, n_ingredients))
            if i not in chosen:
                chosen.add(i)
                ri_src.append(r)
                ri_dst.append(i)

    rr_pairs = set()
    for r in range(n_recipes):
        pool = recipes_by_group[int(recipe_group[r])]
        for _ in range(similar_recipes):
            other = int(pool[rng.integers(0, len(pool))])
            if other != r:
                rr_pairs.add((min(r, other), max(r, other)))
    rr = sorted(rr_pairs)
    rr_src = np.array([a for a, _ in rr] + [b for _, b in rr], dtype=np.int64)
    rr_dst = np.array([b for _, b in rr] + [a for a, _ in rr], dtype=np.int64)

    ii_pairs = set()
    for i in range(n_ingredients):
        pool = ings_by_pool[int(ing_pool[i])]
        for _ in range(cooccurring_ingredients):
            other = int(pool[rng.integers(0, len(pool))])
            if other != i:
                ii_pairs.add((min(i, other), max(i, other)))
    ii = sorted(ii_pairs)
    ii_src = np.array([a for a, _ in ii] + [b for _, b in ii], dtype=np.int64)
    ii_dst = np.array([b for _, b in ii] + [a for a, _ in ii], dtype=np.int64)

    g = build_hetein(
        recipe_schema(),
        {"User": n_users, "Recipe": n_recipes, "Ingredient": n_ingredients},
        {
            "user-recipe": (np.array(ur_src, dtype=np.int64), np.array(ur_dst, dtype=np.int64)),
            "recipe-ingredient": (np.array(ri_src, dtype=np.int64), np.array(ri_dst, dtype=np.int64)),
            "recipe-recipe": (rr_src, rr_dst),
            "ingredient-ingredient": (ii_src, ii_dst),
        },
    )
    return g, PlantedAssignments(user_block=user_block, user_group=user_group,
                                 recipe_block=recipe_block, recipe_group=recipe_group,
                                 ingredient_pool=ing_pool)
