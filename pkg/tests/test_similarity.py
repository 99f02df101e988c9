import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propgen.errors import DataError
from propgen.metrics import ApTable
from propgen.similarity import SimilarityMatrix, most_similar_class, similarity_matrix


def aptable(values, classes=None):
    values = np.array(values, dtype=float)
    classes = classes or tuple("abcdefghij"[: len(values)])
    return ApTable(tuple(classes), values)


def test_ratio_examples():
    # rows are detector classes, columns GT classes: values[i, j] = AP^i(j)
    S = similarity_matrix(aptable([[0.5, 0.2], [0.1, 0.4]]))
    assert S["a", "a"] == 1.0 and S["b", "b"] == 1.0
    assert S["a", "b"] == pytest.approx(0.5) and S["b", "a"] == pytest.approx(0.5)
    Z = similarity_matrix(aptable([[0.5, 0.0], [0.0, 0.4]]))
    assert Z["a", "b"] == 0.0


def test_needs_two_classes():
    with pytest.raises(DataError):
        similarity_matrix(aptable([[1.0]]))


def test_undefined_and_zero_denominators_contribute_zero():
    # class b has no GT (column NaN) and c has a zero diagonal
    S = similarity_matrix(aptable([[0.5, np.nan, 0.3], [0.4, np.nan, 0.2], [0.25, np.nan, 0.0]]))
    assert S["a", "b"] == pytest.approx(0.8)  # only AP^b(a)/AP^a(a) is usable
    assert not S.is_defined("a", "b")
    assert S["b", "b"] == 0.0 and S["c", "c"] == 0.0
    assert S["a", "c"] == pytest.approx(0.5)
    assert S.is_defined("a", "c")


def test_clamp_keeps_raw():
    S = similarity_matrix(aptable([[0.2, 0.9], [0.1, 0.3]]))
    assert S["a", "b"] == 1.0
    assert S.raw[0, 1] == pytest.approx(3.0)


def test_serialization_round_trip():
    S = similarity_matrix(aptable([[0.5, 0.2], [0.1, 0.4]]))
    back = SimilarityMatrix.from_dict(S.to_dict())
    assert np.array_equal(back.values, S.values) and back.classes == S.classes
    lines = S.to_csv().splitlines()
    assert lines[0] == ",a,b" and lines[1].startswith("a,1.0,")


def test_most_similar_class_examples():
    S = SimilarityMatrix(
        ("apple", "boat", "q"),
        np.array([[1, 0.3, 0.5], [0.3, 1, 0.5], [0.5, 0.5, 1.0]]),
        np.zeros((3, 3)),
        np.zeros((3, 3), bool),
    )
    assert most_similar_class(S, "q", ["q"]) == "q"
    assert most_similar_class(S, "q", ["boat", "apple"]) == "apple"
    S2 = SimilarityMatrix(("a", "b", "q"), np.array([[1, 0, 0.9], [0, 1, 0.2], [0.9, 0.2, 1]]), np.zeros((3, 3)), np.zeros((3, 3), bool))
    assert most_similar_class(S2, "q", ["a", "b"]) == "a"
    with pytest.raises(DataError):
        most_similar_class(S2, "q", [])


ap_values = st.one_of(st.floats(0.0, 1.0), st.just(0.0), st.just(float("nan")))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7).flatmap(lambda n: st.lists(st.lists(ap_values, min_size=n, max_size=n), min_size=n, max_size=n)))
def test_symmetry_diagonal_and_range(vals):
    S = similarity_matrix(aptable(vals))
    assert np.array_equal(S.values, S.values.T)
    assert np.all((0 <= S.values) & (S.values <= 1))
    diag = np.diag(np.array(vals, dtype=float))
    for i, d in enumerate(diag):
        if d > 0:
            assert S.values[i, i] == 1.0


@settings(max_examples=100, deadline=None)
@given(
    st.integers(2, 6).flatmap(lambda n: st.lists(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n), min_size=n, max_size=n)),
    st.floats(0.01, 100.0),
)
def test_global_scaling_invariance(vals, c):
    a = similarity_matrix(aptable(vals))
    b = similarity_matrix(aptable(np.array(vals) * c))
    assert np.max(np.abs(a.values - b.values)) <= 1e-12
    for q in a.classes:
        assert most_similar_class(a, q, [x for x in a.classes if x != q]) == most_similar_class(b, q, [x for x in b.classes if x != q])
