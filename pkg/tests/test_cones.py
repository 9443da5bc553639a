import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dsmpc.cones import SOC, Box, ConeProduct, project_box, project_product, project_soc

from oracles import soc_projection_qp

finite = st.floats(-50, 50, allow_nan=False)


@pytest.mark.parametrize("y, expected", [(-1, 0), (5, 5), (12, 10)])
def test_project_box_examples(y, expected):
    assert project_box(y, 0, 10) == expected


def test_project_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        project_box(1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        Box([2.0], [1.0])


@pytest.mark.parametrize(
    "y, expected",
    [
        ([0, 0, -3], [0, 0, 0]),
        ([3, 4, 10], [3, 4, 10]),
        ([3, 4, 0], [1.5, 2.0, 2.5]),
    ],
)
def test_project_soc_examples(y, expected):
    np.testing.assert_allclose(project_soc(np.array(y, dtype=float)), expected, atol=1e-15)


def test_soc_zero_direction_uses_first_axis():
    # u = 0, t < 0 lies in the polar cone; u = 0, t > 0 is interior; both well defined
    np.testing.assert_array_equal(project_soc(np.array([0.0, 0.0, 2.0])), [0, 0, 2])
    np.testing.assert_array_equal(project_soc(np.array([0.0, 0.0, 0.0])), [0, 0, 0])


def test_project_soc_needs_two_entries():
    with pytest.raises(ValueError):
        project_soc(np.array([1.0]))
    with pytest.raises(ValueError):
        SOC(1)


def test_product_examples():
    neg2 = ConeProduct([Box.nonpositive(2)])
    np.testing.assert_array_equal(project_product(np.array([1.0, -1.0]), neg2), [0, -1])
    mixed = ConeProduct([Box.nonpositive(1), SOC(3)])
    np.testing.assert_array_equal(project_product(np.array([2.0, 0, 0, -1]), mixed), [0, 0, 0, 0])
    y = np.array([-1.0, 0.3, 0.4, 1.0])
    np.testing.assert_array_equal(project_product(y, mixed), y)


def test_product_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        project_product(np.zeros(3), ConeProduct([Box.nonpositive(1), SOC(3)]))


def test_product_interleaved_segments():
    omega = ConeProduct([SOC(2), Box([0.0], [1.0]), SOC(3), Box.nonpositive(2), SOC(2)])
    rng = np.random.default_rng(0)
    y = rng.normal(size=omega.dim) * 3
    out = project_product(y, omega)
    np.testing.assert_allclose(out[0:2], project_soc(y[0:2]))
    assert out[2] == np.clip(y[2], 0, 1)
    np.testing.assert_allclose(out[3:6], project_soc(y[3:6]))
    np.testing.assert_allclose(out[6:8], np.minimum(y[6:8], 0))
    np.testing.assert_allclose(out[8:10], project_soc(y[8:10]))
    assert omega.n_soc == 3 and omega.n_linear == 3


def test_soc_projection_matches_conic_solver():
    rng = np.random.default_rng(11)
    for dim in (2, 3, 5, 8):
        for _ in range(5):
            y = rng.normal(size=dim) * 4
            p = project_soc(y)
            ref, dist = soc_projection_qp(y)
            # the projection is unique: a cone member at least as close as the solver's point is it
            assert in_soc(p)
            assert np.linalg.norm(p - y) <= dist + 1e-7
            np.testing.assert_allclose(p, ref, atol=1e-4)


def in_soc(v, tol=1e-12):
    return np.linalg.norm(v[:-1]) <= v[-1] + tol


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: arrays(np.float64, n, elements=finite)))
def test_soc_output_membership_and_idempotence(y):
    p = project_soc(y)
    assert in_soc(p, 1e-12 * max(1.0, np.abs(y).max()))
    np.testing.assert_allclose(project_soc(p), p, atol=1e-12 * max(1.0, np.abs(y).max()))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))))
def test_soc_nonexpansive(pair):
    x, y = pair
    assert np.linalg.norm(project_soc(x) - project_soc(y)) <= np.linalg.norm(x - y) + 1e-12 * (1 + np.abs(np.r_[x, y]).max())


@settings(max_examples=200, deadline=None)
@given(
    st.integers(2, 5).flatmap(
        lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))
    )
)
def test_soc_variational_inequality(pair):
    x, w = pair
    w = project_soc(w)  # an arbitrary member of the cone
    z = project_soc(x)
    assert (z - x) @ (w - z) >= -1e-9 * (1 + np.abs(np.r_[x, w]).max() ** 2)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
def test_box_properties(y, a, b):
    lb, ub = np.minimum(a, b), np.maximum(a, b)
    p = project_box(y, lb, ub)
    assert np.all(p >= lb) and np.all(p <= ub)
    np.testing.assert_array_equal(project_box(p, lb, ub), p)
    w = project_box(b + a, lb, ub)
    assert (p - y) @ (w - p) >= -1e-9 * (1 + np.abs(np.r_[y, a, b]).max() ** 2)
