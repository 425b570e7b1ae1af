import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import MM1_MEASURES, TANDEM_MEASURES
from oracles import mm1_boundary_box_lambda, tilted_generator, two_by_two_pf
from orthant_ld.errors import NotIrreducible
from orthant_ld.model import NetworkModel
from orthant_ld.spectral import TiltedGenerator, build, face_lambda, lambda_full, pf_eigen, truncated_lambda
from orthant_ld.transient import local_pair_generator, uniformize

TANDEM = NetworkModel(2, TANDEM_MEASURES)
MM1 = NetworkModel(1, MM1_MEASURES)


def matrix_generator(m):
    m = np.asarray(m, dtype=float)
    return TiltedGenerator(frozenset(), None, np.zeros(0), m, tuple(range(len(m))))


def test_mm1_two_state_box(mm1):
    q = build(mm1, set(), 1)
    assert np.array_equal(q.dense(), [[-1.0, 1.0], [2.0, -3.0]])


def test_full_face_singletons(mm1):
    assert build(mm1, {0}, 3, [0.0]).dense().tolist() == [[0.0]]
    assert abs(build(mm1, {0}, 3, [math.log(2)]).dense()[0, 0]) < 1e-15


def test_pf_two_by_two():
    m = [[-1.0, 1.0], [2.0, -3.0]]
    lam, vec = two_by_two_pf(m)
    res = pf_eigen(matrix_generator(m))
    assert res.eigenvalue == pytest.approx(-2 + math.sqrt(3), abs=1e-12)
    assert res.eigenvalue == pytest.approx(lam, abs=1e-12)
    assert np.allclose(res.eigenvector, vec, atol=1e-12)


def test_pf_trivial():
    res = pf_eigen(matrix_generator([[0.0]]))
    assert res.eigenvalue == 0.0 and res.eigenvector.tolist() == [1.0]
    res = pf_eigen(matrix_generator([[-1.0, 1.0], [1.0, -1.0]]))
    assert abs(res.eigenvalue) < 1e-14 and np.allclose(res.eigenvector, [1, 1], atol=1e-14)


def test_lambda_full_values(mm1, tandem):
    assert lambda_full(tandem, [0.0, 0.0]) == 0.0
    assert abs(lambda_full(mm1, [math.log(2)])) < 1e-15
    assert lambda_full(mm1, [1.0]) == pytest.approx((math.e - 1) + 2 * (math.exp(-1) - 1), abs=1e-14)


def test_full_face_converges_at_first_step(tandem):
    est = face_lambda(tandem, {0, 1}, [0.0, 0.0], (2, 4, 8))
    assert est.value == 0.0 and est.converged and len(est.trace) == 1


def test_tandem_face_trace_nondecreasing(tandem):
    est = face_lambda(tandem, {0}, [0.0], (2, 4, 8, 16, 32, 64))
    vals = [v for _, v in est.trace]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= 1e-12


@pytest.mark.parametrize("m", [1, 2, 5, 25, 50, 200, 1000])
def test_mm1_boundary_box_matches_tridiagonal(mm1, m):
    assert truncated_lambda(mm1, set(), m) == pytest.approx(mm1_boundary_box_lambda(m), abs=1e-11)


def test_mm1_boundary_lambda_limit(mm1):
    # the reflected M/M/1 chain is positive recurrent, so the killed exponent tends to 0
    est = face_lambda(mm1, set(), (), (25, 50, 100, 200))
    assert est.converged
    assert abs(est.value) < 1e-12


@pytest.mark.xfail(strict=True, reason="boundary exponent of the reflected queue is 0; see decisions ledger")
def test_mm1_boundary_lambda_published_value(mm1):
    est = face_lambda(mm1, set(), (), (25, 50, 100, 200))
    assert est.value == pytest.approx(-((math.sqrt(2) - 1) ** 2), abs=1e-3)


@pytest.mark.parametrize("face", [set(), {0}, {1}])
@pytest.mark.parametrize("radius", [1, 3, 5])
def test_build_matches_hand_generator(tandem, face, radius):
    alpha = [0.3, -0.4][: len(face)]
    _, q = tilted_generator(TANDEM_MEASURES, 2, face, radius, alpha)
    assert np.allclose(build(tandem, face, radius, alpha).dense(), q, atol=1e-15)


def test_sparse_matches_dense(tandem):
    dense = pf_eigen(build(tandem, {0}, 300, [0.5], dense_cutoff=10_000)).eigenvalue
    sparse = pf_eigen(build(tandem, {0}, 300, [0.5], dense_cutoff=10)).eigenvalue
    power = pf_eigen(build(tandem, {0}, 300, [0.5], dense_cutoff=10), method="power", tol=1e-13).eigenvalue
    assert sparse == pytest.approx(dense, abs=1e-10)
    assert power == pytest.approx(dense, abs=1e-8)


def test_reducible_box_needs_shrink():
    # the origin cannot be left upward
    model = NetworkModel(2, {frozenset({0, 1}): {(1, 0): 1.0, (-1, 0): 1.0}, frozenset({0}): {(1, 0): 1.0}})
    with pytest.raises(NotIrreducible):
        build(model, {0}, 3, [0.0])
    assert build(model, {0}, 3, [0.0], shrink=True).size == 1


def test_semigroup_pair_oracle(tandem):
    # E[exp(alpha A(1)); Y(1) = 0, T_K > 1] from the untilted pair chain
    alpha, radius = 0.7, 3
    states, index, q = local_pair_generator(tandem, {0}, radius, 40)
    p0 = np.zeros(len(states))
    p0[index[((0,), (0,))]] = 1.0
    p = uniformize(q, 1.0, p0)
    pair = sum(math.exp(alpha * a[0]) * p[k] for k, (a, y) in enumerate(states) if y == (0,))
    assert pair == pytest.approx(expm(build(tandem, {0}, radius, [alpha]).dense())[0, 0], rel=1e-10)


tilt = st.floats(-1.5, 1.5)
faces = st.sampled_from([frozenset({0}), frozenset({1})])


@settings(max_examples=40, deadline=None)
@given(faces, tilt, st.sampled_from([(2, 4), (4, 8), (8, 16), (3, 40)]))
def test_monotone_in_box(face, a, radii):
    lo, hi = (truncated_lambda(TANDEM, face, m, [a]) for m in radii)
    assert lo <= hi + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([frozenset(), frozenset({0}), frozenset({1})]), st.integers(1, 30))
def test_nonpositive_at_zero_tilt(face, m):
    assert truncated_lambda(TANDEM, face, m, [0.0] * len(face)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(faces, tilt, tilt, st.integers(2, 20))
def test_midpoint_convex(face, a, b, m):
    mid = truncated_lambda(TANDEM, face, m, [0.5 * (a + b)])
    avg = 0.5 * (truncated_lambda(TANDEM, face, m, [a]) + truncated_lambda(TANDEM, face, m, [b]))
    assert mid <= avg + 1e-8


@settings(max_examples=40, deadline=None)
@given(faces, tilt, st.integers(1, 12))
def test_eigenvector_positive_with_small_residual(face, a, m):
    q = build(TANDEM, face, m, [a])
    res = pf_eigen(q)
    assert np.all(res.eigenvector > 0)
    assert np.max(np.abs(q.dense() @ res.eigenvector - res.eigenvalue * res.eigenvector)) <= 1e-9 * np.max(res.eigenvector)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_lambda_full_gradient(alpha):
    alpha = np.array(alpha)
    _, grad, hess = lambda_full(TANDEM, alpha, gradient=True, hessian=True)
    h = 1e-6
    fd = [(lambda_full(TANDEM, alpha + h * e) - lambda_full(TANDEM, alpha - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(fd, grad, rtol=1e-6, atol=1e-7)
    assert np.all(np.linalg.eigvalsh(hess) >= -1e-12)
