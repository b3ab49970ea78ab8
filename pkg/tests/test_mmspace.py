import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gwformation.errors import InputError, MetricWarning
from gwformation.mmspace import (
    GroupSpec,
    LossTensor,
    MetricMatrix,
    PointCloud,
    build_loss_tensor,
    graph_metric,
    pairwise_cost,
    unvec,
    vec,
    vec_index,
)

clouds = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 3)),
                elements=st.floats(-10, 10, allow_nan=False))


def test_vec_is_column_major():
    P = np.arange(6.0).reshape(2, 3)
    v = vec(P)
    for i in range(2):
        for j in range(3):
            assert v[vec_index(i, j, 2)] == P[i, j]
    np.testing.assert_array_equal(unvec(v, 2, 3), P)


def test_point_cloud_validation():
    assert PointCloud([1.0, 2.0, 3.0]).points.shape == (3, 1)
    with pytest.raises(InputError):
        PointCloud([[np.nan, 0.0]])
    with pytest.raises(InputError):
        PointCloud(np.zeros((0, 2)))


def test_metric_matrix_rejects_bad_input():
    with pytest.raises(InputError):
        MetricMatrix([[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(InputError):
        MetricMatrix([[1.0, 1.0], [1.0, 0.0]])
    with pytest.raises(InputError):
        MetricMatrix([[0.0, -1.0], [-1.0, 0.0]])


def test_pairwise_cost_small():
    C = pairwise_cost([[0.0, 0.0], [3.0, 4.0]])
    np.testing.assert_allclose(C.entries, [[0, 25], [25, 0]])
    E = pairwise_cost([[0.0, 0.0], [3.0, 4.0]], "euclidean")
    np.testing.assert_allclose(E.entries, [[0, 5], [5, 0]])


@given(clouds)
def test_pairwise_cost_is_a_cost_matrix(X):
    C = pairwise_cost(X).entries
    assert np.all(C >= 0)
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 0)


def test_graph_metric_weights():
    spec = GroupSpec([0, 0, 0, 1, 1, 1], 2.0, 4.0)
    C = graph_metric(spec, 6).entries
    assert C[0, 1] == 2.0 and C[3, 5] == 2.0 and C[0, 4] == 4.0
    assert np.all(np.diag(C) == 0)
    assert spec.groups() == {0: [0, 1, 2], 1: [3, 4, 5]}


def test_graph_metric_accepts_mapping_labels():
    spec = GroupSpec({1: "b", 0: "a", 2: "a"}, 1.0, 1.5)
    assert spec.labels == ("a", "b", "a")


def test_graph_metric_warns_on_triangle_violation():
    with pytest.warns(MetricWarning):
        graph_metric(GroupSpec([0, 0, 1], 1.0, 3.0), 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        graph_metric(GroupSpec([0, 0, 1], 2.0, 4.0), 3)


def test_group_spec_errors():
    with pytest.raises(InputError):
        GroupSpec([0, 1], 4.0, 2.0)
    with pytest.raises(InputError):
        graph_metric(GroupSpec([0, 1], 2.0, 4.0), 3)


def test_loss_tensor_entries():
    Cx = np.array([[0.0, 1.0], [1.0, 0.0]])
    Cy = np.array([[0.0, 3.0], [3.0, 0.0]])
    G = build_loss_tensor(Cx, Cy)
    n = 2
    for i in range(2):
        for j in range(2):
            for ip in range(2):
                for jp in range(2):
                    expect = 0.5 * (Cx[i, ip] - Cy[j, jp]) ** 2
                    assert G.entries[vec_index(i, j, n), vec_index(ip, jp, n)] == expect


@given(clouds)
def test_loss_tensor_swap_symmetric_and_zero_on_self(X):
    C = pairwise_cost(X)
    G = build_loss_tensor(C, C)
    assert G.is_swap_symmetric()
    n = X.shape[0]
    # identity coupling of a cloud with itself has zero objective
    p = vec(np.eye(n) / n)
    assert abs(p @ G.entries @ p) <= 1e-9 * max(1.0, np.abs(G.entries).max())


def test_loss_tensor_size_mismatch():
    with pytest.raises(InputError):
        build_loss_tensor(np.zeros((2, 2)), np.zeros((3, 3)))
    G = build_loss_tensor(np.zeros((2, 2)), np.zeros((3, 3)), require_square=False)
    assert G.entries.shape == (6, 6)
    with pytest.raises(InputError):
        LossTensor(np.zeros((6, 6)), source_sizes=(2, 2))
