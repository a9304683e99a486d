import numpy as np
import pytest

from pathgat.graph import build_hetein
from pathgat.metapath import (Metapath, MetapathError, PathCountOverflowError,
                              build_homograph, count_paths, load_similarity_table,
                              parse_metapath, pathsim, save_similarity_table,
                              top_m_similar)
from pathgat.synthetic import random_hetein

from oracles import dfs_count_paths, pathsim_from_counts


def test_parse_resolves_relations(schema):
    p = parse_metapath("U-R-U", schema)
    assert [t.code for t in p.types] == ["U", "R", "U"]
    assert [r.name for r in p.relations] == ["user-recipe", "user-recipe"]
    assert p.reversed_step == (False, True)
    assert p.is_symmetric


def test_parse_rejects_unknown_code(schema):
    with pytest.raises(MetapathError, match="unknown node type code"):
        parse_metapath("X-Y-X", schema)


def test_parse_rejects_disconnected_pair(schema):
    with pytest.raises(MetapathError, match="no relation connects"):
        parse_metapath("U-I-U", schema)


@pytest.mark.parametrize("label,symmetric", [
    ("U-R-U", True),
    ("R-U-R", True),
    ("R-I-R", True),
    ("U-R-I-R-U", True),
    ("R-R-R", True),
    ("U-R", False),        # odd edge count
    ("R-R", False),        # single edge, no round trip
    ("R-I-I-R", False),    # odd edge count despite palindromic types
    ("U-R-U-R", False),    # not a palindrome
])
def test_symmetry_classification(schema, label, symmetric):
    assert parse_metapath(label, schema).is_symmetric is symmetric


def test_counts_on_shared_user_graph(shared_user_graph, schema):
    pc = count_paths(shared_user_graph, parse_metapath("R-U-R", schema))
    m = pc.counts.toarray()
    assert m[0, 0] == 2 and m[1, 1] == 3 and m[0, 1] == 1 and m[1, 0] == 1


def test_counts_zero_when_no_edges(schema):
    g = build_hetein(schema, {"User": 3, "Recipe": 4, "Ingredient": 0}, {})
    pc = count_paths(g, parse_metapath("U-R-U", schema))
    assert pc.counts.nnz == 0


def test_counts_match_dfs_oracle(schema):
    for seed in range(6):
        g = random_hetein(seed, 7, 9, 6, avg_degree=2.5)
        for label in ("U-R-U", "R-U-R", "R-I-R", "I-R-I", "R-R-R", "U-R-I"):
            p = parse_metapath(label, schema)
            got = count_paths(g, p).counts.toarray()
            want = dfs_count_paths(g, p)
            assert np.array_equal(got, want), (seed, label)


def test_counts_overflow_detected(schema):
    n = 12
    users = np.repeat(np.arange(n), n)
    recipes = np.tile(np.arange(n), n)
    g = build_hetein(schema, {"User": n, "Recipe": n, "Ingredient": 0},
                     {"user-recipe": (users, recipes)})
    # complete bipartite: counts grow by a factor n per step and pass 2**53
    label = "-".join(["U", "R"] * 8) + "-U"
    with pytest.raises(PathCountOverflowError):
        count_paths(g, parse_metapath(label, schema))


def test_pathsim_values(shared_user_graph, schema):
    pc = count_paths(shared_user_graph, parse_metapath("R-U-R", schema))
    assert pathsim(pc, 0, 1) == pytest.approx(2 * 1 / (2 + 3), abs=0)
    assert pathsim(pc, 0, 0) == 1.0
    assert pathsim(pc, 1, 0) == pathsim(pc, 0, 1)


def test_pathsim_zero_cases(schema):
    g = build_hetein(schema, {"User": 2, "Recipe": 3, "Ingredient": 0},
                     {"user-recipe": (np.array([0, 1]), np.array([0, 1]))})
    pc = count_paths(g, parse_metapath("R-U-R", schema))
    assert pathsim(pc, 0, 1) == 0.0       # both diagonals positive, no cross path
    assert pathsim(pc, 0, 2) == 0.0       # recipe 2 isolated: zero denominator
    assert pathsim(pc, 2, 2) == 1.0       # self-similarity even with no paths


def test_pathsim_properties_random(schema):
    for seed in range(8):
        g = random_hetein(100 + seed, 6, 8, 5, avg_degree=2.0)
        for label in ("U-R-U", "R-U-R", "R-I-R", "U-R-I-R-U"):
            p = parse_metapath(label, schema)
            pc = count_paths(g, p)
            dense = dfs_count_paths(g, p)
            n = pc.counts.shape[0]
            for x in range(n):
                for y in range(n):
                    s = pathsim(pc, x, y)
                    assert 0.0 <= s <= 1.0
                    assert s == pytest.approx(pathsim_from_counts(dense, x, y), abs=1e-15)


def test_pathsim_relabeling_invariance(schema):
    g = random_hetein(77, 5, 9, 4, avg_degree=2.5)
    p = parse_metapath("R-U-R", schema)
    pc = count_paths(g, p)
    rng = np.random.Generator(np.random.PCG64(3))
    perm = rng.permutation(9)
    pc2 = count_paths(g.permute_type("Recipe", perm), p)
    for x in range(9):
        for y in range(9):
            assert pathsim(pc, x, y) == pathsim(pc2, int(perm[x]), int(perm[y]))


def test_chain_order_independence(schema):
    g = random_hetein(5, 6, 7, 5, avg_degree=2.5)
    p = parse_metapath("U-R-I-R-U", schema)
    left = count_paths(g, p).counts.toarray()
    a = g.adjacency_matrix("user-recipe")
    b = g.adjacency_matrix("recipe-ingredient")
    right = (a @ ((b @ b.T) @ a.T)).toarray()       # right-to-left association
    half = (a @ b).toarray()
    assert np.array_equal(left, right)
    assert np.array_equal(left, half @ half.T)      # Gram form of the half chain


def test_top_m_on_shared_user_graph(shared_user_graph, schema):
    t = top_m_similar(shared_user_graph, parse_metapath("R-U-R", schema), 1)
    ids, scores = t.rows[0]
    assert ids.tolist() == [1] and scores.tolist() == [0.4]
    ids, scores = t.rows[1]
    assert ids.tolist() == [0] and scores.tolist() == [0.4]


def test_top_m_isolated_node_empty_row(schema):
    g = build_hetein(schema, {"User": 1, "Recipe": 3, "Ingredient": 0},
                     {"user-recipe": (np.array([0, 0]), np.array([0, 1]))})
    t = top_m_similar(g, parse_metapath("R-U-R", schema), 5)
    assert len(t.rows[2][0]) == 0
    # m larger than the candidate pool: positive-score candidates only
    assert t.rows[0][0].tolist() == [1]


def test_top_m_rejects_asymmetric(schema):
    g = random_hetein(1, 4, 5, 3)
    with pytest.raises(MetapathError, match="not symmetric"):
        top_m_similar(g, parse_metapath("R-I-I-R", schema), 3)
    with pytest.raises(MetapathError, match="m must be"):
        top_m_similar(g, parse_metapath("R-U-R", schema), 0)


def test_top_m_tie_break_ascending_id(schema):
    # recipes 1 and 2 tie for similarity to recipe 0
    g = build_hetein(schema, {"User": 3, "Recipe": 3, "Ingredient": 0},
                     {"user-recipe": (np.array([0, 0, 1, 1, 2, 2]),
                                      np.array([0, 1, 0, 2, 1, 2]))})
    t = top_m_similar(g, parse_metapath("R-U-R", schema), 1)
    ids, scores = t.rows[0]
    assert ids.tolist() == [1]
    t2 = top_m_similar(g, parse_metapath("R-U-R", schema), 2)
    assert t2.rows[0][0].tolist() == [1, 2]
    assert t2.rows[0][1][0] == t2.rows[0][1][1]


def test_build_homograph(shared_user_graph, schema):
    t = top_m_similar(shared_user_graph, parse_metapath("R-U-R", schema), 1)
    h = build_homograph(t)
    assert h.out_neighbors(0).tolist() == [0, 1]
    assert h.out_neighbors(1).tolist() == [0, 1]


def test_build_homograph_empty_table_self_loops(schema):
    g = build_hetein(schema, {"User": 2, "Recipe": 4, "Ingredient": 0}, {})
    t = top_m_similar(g, parse_metapath("R-U-R", schema), 3)
    h = build_homograph(t)
    for i in range(4):
        assert h.out_neighbors(i).tolist() == [i]


def test_homograph_out_degree(schema):
    for seed in range(4):
        g = random_hetein(200 + seed, 6, 10, 4, avg_degree=3.0)
        m = 3
        t = top_m_similar(g, parse_metapath("R-U-R", schema), m)
        h = build_homograph(t)
        for i in range(10):
            row = h.out_neighbors(i)
            assert len(row) == len(t.rows[i][0]) + (0 if i in t.rows[i][0] else 1)
            assert len(row) <= m + 1
            assert i in row


def test_similarity_table_round_trip(tmp_path, schema):
    g = random_hetein(9, 7, 9, 5, avg_degree=2.5)
    t = top_m_similar(g, parse_metapath("R-U-R", schema), 4)
    save_similarity_table(t, tmp_path / "t.jsonl")
    t2 = load_similarity_table(tmp_path / "t.jsonl", schema, 4)
    assert t2.metapath_label == t.metapath_label
    assert t2.n_nodes == t.n_nodes
    for (i1, s1), (i2, s2) in zip(t.rows, t2.rows):
        assert np.array_equal(i1, i2)
        assert np.allclose(s1, s2, rtol=0, atol=0)
