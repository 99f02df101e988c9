import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from propgen import FIXTURES
from propgen.data import SemanticTree, load_tree
from propgen.errors import DataError
from propgen.selection import (
    METHODS,
    ProtoSelection,
    most_frequent_subset,
    oracle_visual_clustering,
    random_subset,
    select,
    semantic_frequency_clustering,
)
from propgen.similarity import SimilarityMatrix


def smatrix(values, classes=None):
    values = np.array(values, dtype=float)
    n = len(values)
    classes = tuple(classes or [f"c{i:02d}" for i in range(n)])
    return SimilarityMatrix(classes, values, values.copy(), np.zeros((n, n), bool))


def random_sim(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.random((n, n))
    S = (A + A.T) / 2
    np.fill_diagonal(S, 1.0)
    return S


FOUR = SemanticTree.from_parents({"root": None, "A": "root", "B": "root", "C": "root", "D": "root"})
FOUR_FREQ = {"A": 10, "B": 5, "C": 3, "D": 2}


def test_oracle_visual_examples():
    S = smatrix(random_sim(0, 5))
    freq = {c: i for i, c in enumerate(S.classes)}
    assert oracle_visual_clustering(S, freq, 5).classes == S.classes
    one = oracle_visual_clustering(S, freq, 1)
    assert one.classes == ("c04",) and len(one.clusters) == 1


def test_two_blocks_recovered_and_brute_force_agrees():
    blocks = [0, 0, 0, 1, 1, 1, 1]
    S = np.array([[0.9 if a == b else 0.1 for b in blocks] for a in blocks])
    np.fill_diagonal(S, 1.0)
    sel = oracle_visual_clustering(smatrix(S), {}, 2)
    found = {frozenset(int(c[1:]) for c in cl) for cl in sel.clusters}
    planted = {frozenset(i for i, b in enumerate(blocks) if b == k) for k in (0, 1)}
    assert found == planted == oracles.best_two_partition(S.tolist())


@pytest.mark.parametrize("seed", range(25))
def test_average_linkage_matches_naive_oracle(seed):
    n = 3 + seed % 6
    S = random_sim(seed, n)
    p = 1 + seed % n
    sel = oracle_visual_clustering(smatrix(S), {}, p)
    found = {frozenset(int(c[1:]) for c in cl) for cl in sel.clusters}
    assert found == oracles.average_linkage((1 - S).tolist(), p)


def test_undefined_rows_raise():
    m = smatrix(random_sim(1, 3))
    m.undefined[1, 1] = True
    with pytest.raises(DataError, match="c01"):
        oracle_visual_clustering(m, {}, 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 9), st.data())
def test_oracle_visual_invariant_under_reordering(seed, n, data):
    S = random_sim(seed, n)
    names = [f"k{i}" for i in range(n)]
    freq = {c: (i * 7) % 5 for i, c in enumerate(names)}
    p = data.draw(st.integers(1, n))
    perm = data.draw(st.permutations(range(n)))
    a = oracle_visual_clustering(smatrix(S, names), freq, p)
    shuffled = smatrix(S[np.ix_(perm, perm)], [names[i] for i in perm])
    b = oracle_visual_clustering(shuffled, freq, p)
    assert a.classes == b.classes and set(a.clusters) == set(b.clusters)


def test_semantic_frequency_four_leaf_example():
    sel = semantic_frequency_clustering(FOUR, FOUR_FREQ, 2)
    assert set(sel.clusters) == {("A",), ("B", "C", "D")}
    assert sel.classes == ("A", "B")
    assert semantic_frequency_clustering(FOUR, FOUR_FREQ, 4).classes == ("A", "B", "C", "D")
    with pytest.raises(DataError):
        semantic_frequency_clustering(FOUR, FOUR_FREQ, 5)


def test_semantic_frequency_tie_uses_smallest_ids():
    # after {C,D}(5) forms, B(5) and {C,D}(5) tie as candidates for joining A(5);
    # {A,B} holds the smallest ids so it merges first
    freq = {"A": 5, "B": 5, "C": 3, "D": 2}
    sel = semantic_frequency_clustering(FOUR, freq, 2)
    assert set(sel.clusters) == {("A", "B"), ("C", "D")}


def test_semantic_frequency_matches_shipped_fixture():
    tree = load_tree(FIXTURES / "four_leaf_hierarchy.json")
    anns = json.loads((FIXTURES / "four_leaf_annotations.json").read_text())
    names = {c["id"]: c["name"] for c in anns["categories"]}
    freq = {n: sum(1 for a in anns["annotations"] if names[a["category_id"]] == n) for n in names.values()}
    assert freq == FOUR_FREQ
    assert semantic_frequency_clustering(tree, freq, 2).classes == ("A", "B")


def test_semantic_frequency_promotes_when_no_siblings():
    tree = SemanticTree.from_parents({"r": None, "x": "r", "y": "r", "a": "x", "b": "y", "c": "r"})
    sel = semantic_frequency_clustering(tree, {"a": 1, "b": 2, "c": 9}, 2)
    assert set(sel.clusters) == {("a", "b"), ("c",)} and sel.provenance["promotions"] == 1


def _random_tree(seed):
    rng = np.random.default_rng(seed)
    parents = {"r": None}
    internal = ["r"]
    for i in range(int(rng.integers(2, 5))):
        name = f"n{i}"
        parents[name] = internal[int(rng.integers(len(internal)))]
        internal.append(name)
    leaves = []
    for i in range(int(rng.integers(3, 10))):
        name = f"L{i}"
        parents[name] = internal[int(rng.integers(len(internal)))]
        leaves.append(name)
    tree = SemanticTree.from_parents(parents)
    freq = {leaf: int(rng.integers(0, 20)) for leaf in tree.leaves}
    return tree, freq


@pytest.mark.parametrize("seed", range(30))
def test_semantic_frequency_n_minus_one_merges_global_min_sibling_pair(seed):
    tree, freq = _random_tree(seed)
    leaves = tree.leaves
    pairs = [(a, b) for a, b in itertools.combinations(leaves, 2) if tree.parent[a] == tree.parent[b]]
    sel = semantic_frequency_clustering(tree, freq, len(leaves) - 1)
    if not pairs:
        assert sel.provenance["promotions"] >= 1
        return
    want = min(pairs, key=lambda ab: (freq[ab[0]] + freq[ab[1]], tuple(sorted(ab))))
    merged = [c for c in sel.clusters if len(c) == 2]
    assert merged == [tuple(sorted(want))]


def test_most_frequent_examples():
    assert most_frequent_subset({"a": 5, "b": 9, "c": 1}, 2).classes == ("a", "b")
    assert most_frequent_subset({"a": 5, "b": 9, "c": 1}, 3).classes == ("a", "b", "c")
    assert most_frequent_subset({"a": 5, "b": 5}, 1).classes == ("a",)


def test_random_examples():
    names = [f"c{i:03d}" for i in range(100)]
    assert random_subset(names[:5], 5, seed=3).classes == tuple(names[:5])
    assert random_subset(names, 10, seed=1) == random_subset(names, 10, seed=1)
    a, b = random_subset(names, 10, seed=1), random_subset(names, 10, seed=2)
    assert a.classes != b.classes and (a.seed, b.seed) == (1, 2)
    small, big = random_subset(names, 10, seed=4), random_subset(names, 30, seed=4)
    assert set(small.classes) <= set(big.classes)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(METHODS), st.data())
def test_common_selection_properties(seed, method, data):
    tree, freq = _random_tree(seed)
    classes = tree.leaves
    n = len(classes)
    p = data.draw(st.integers(1, n))
    S = smatrix(random_sim(seed, n), classes)
    kw = dict(freq=freq, classes=classes, similarity=S, tree=tree, seed=seed)
    sel = select(method, p, **kw)
    assert len(sel.classes) == p and set(sel.classes) <= set(classes)
    assert sel == select(method, p, **kw)
    if sel.clusters is not None:
        assert len(sel.clusters) == p
        assert sorted(c for cl in sel.clusters for c in cl) == sorted(classes)
        for cl in sel.clusters:
            (rep,) = set(cl) & set(sel.classes)
            assert freq[rep] == max(freq[c] for c in cl)
    assert ProtoSelection.from_dict(sel.to_dict()) == sel


def test_select_errors():
    with pytest.raises(DataError):
        select("random", 1, freq={"a": 1})
    with pytest.raises(DataError):
        select("oracle-visual", 1, freq={"a": 1})
    with pytest.raises(DataError):
        select("nope", 1, freq={"a": 1})
    with pytest.raises(DataError):
        most_frequent_subset({"a": 1}, 0)
