from math import comb, pi

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from concave_elliptic import operators as ops
from concave_elliptic.exceptions import (
    DimensionTooSmall,
    IndexOutOfRange,
    NonPositiveMetric,
    NotAdmissible,
    NotCohomologicalType,
    NotHermitian,
    OutOfRange,
)
from oracles import fd_gradient, fd_second, random_hermitian, random_metric, sigma_brute


def all_specs(n):
    out = [ops.Hessian(n, k) for k in range(1, n + 1)]
    out += [ops.HessianQuotient(n, k, l) for k in range(2, n + 1) for l in range(1, k)]
    out.append(ops.LagrangianPhase(n))
    out.append(ops.LagrangianPhase(n, transform_exponent=2.0))
    if n >= 2:
        out += [ops.NMinusOneHessian(n, k) for k in range(1, n + 1)]
    return out


def sample_in_cone(rng, cone, n, lo=-1.0, hi=3.0, min_margin=1e-3):
    while True:
        lam = np.sort(rng.uniform(lo, hi, n))
        t = ops.in_cone(cone, lam)
        if t.inside and t.margin > min_margin:
            return lam


def sample_matrix(rng, spec, n, omega=None):
    omega = np.eye(n) if omega is None else omega
    while True:
        A = random_hermitian(rng, n) + rng.uniform(0, 3) * np.eye(n)
        t = ops.in_cone(spec.cone, ops.eigenvalues(A, omega))
        if t.inside and t.margin > 1e-3:
            return A


lam_vec = st.lists(st.floats(-2, 4, allow_nan=False), min_size=2, max_size=4)


# --- eigenvalues --------------------------------------------------------------


def test_eigenvalue_examples():
    np.testing.assert_allclose(ops.eigenvalues(np.eye(2), np.eye(2)), [1, 1])
    np.testing.assert_allclose(ops.eigenvalues(np.diag([1.0, 3.0]), np.eye(2)), [1, 3])
    np.testing.assert_allclose(ops.eigenvalues(np.diag([2.0, 6.0]), np.diag([2.0, 2.0])), [1, 3])


def test_eigenvalues_unitary_invariant(rng):
    A, om = random_hermitian(rng, 3), random_metric(rng, 3)
    Q, _ = np.linalg.qr(random_hermitian(rng, 3) + 1j * np.eye(3))
    lam = ops.eigenvalues(A, om)
    lam2 = ops.eigenvalues(Q @ A @ Q.conj().T, Q @ om @ Q.conj().T)
    np.testing.assert_allclose(lam, lam2, atol=1e-12)
    assert np.all(np.diff(lam) >= 0)


def test_eigenvalue_errors():
    with pytest.raises(NonPositiveMetric):
        ops.eigenvalues(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(NotHermitian):
        ops.eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


# --- symmetric functions -------------------------------------------------------


def test_sigma_examples():
    assert ops.sigma_k([1, 2, 3], 2) == pytest.approx(11)
    assert ops.sigma_k([1, 1, 1], 3) == pytest.approx(1)
    assert ops.sigma_k([1, -0.5], 2) == pytest.approx(-0.5)
    with pytest.raises(IndexOutOfRange):
        ops.sigma_k([1, 2], 3)
    with pytest.raises(IndexOutOfRange):
        ops.sigma_k([1, 2], -1)


@given(lam_vec, st.data())
def test_sigma_matches_subset_enumeration(lam, data):
    k = data.draw(st.integers(0, len(lam)))
    assert ops.sigma_k(lam, k) == pytest.approx(sigma_brute(lam, k), rel=1e-12, abs=1e-12)


# --- specs and cones -----------------------------------------------------------


def test_spec_index_checks():
    with pytest.raises(IndexOutOfRange):
        ops.Hessian(2, 3)
    with pytest.raises(IndexOutOfRange):
        ops.HessianQuotient(3, 2, 2)
    with pytest.raises((IndexOutOfRange, DimensionTooSmall)):
        ops.NMinusOneHessian(1, 1)


def test_in_cone_examples():
    assert not ops.in_cone(ops.GammaK(2), [1, -0.5]).inside
    assert ops.in_cone(ops.GammaK(2), [1, -0.5]).failing == "sigma_2"
    assert ops.in_cone(ops.GammaK(1), [1, -0.5]).inside
    t = ops.in_cone(ops.SupercriticalPhase(pi / 2), [2, 2])
    assert t.inside and t.margin == pytest.approx(2 * np.arctan(2) - pi / 2, abs=1e-12)
    assert t.margin == pytest.approx(0.6435011087932844, abs=1e-12)


@given(lam_vec, st.data())
def test_cones_nested(lam, data):
    n = len(lam)
    k = data.draw(st.integers(1, n))
    if ops.in_cone(ops.GammaK(k), lam).inside:
        for kk in range(1, k):
            assert ops.in_cone(ops.GammaK(kk), lam).inside


@given(st.lists(st.floats(0.01, 5), min_size=2, max_size=4))
def test_positive_orthant_in_every_gamma_cone(lam):
    for k in range(1, len(lam) + 1):
        assert ops.in_cone(ops.GammaK(k), lam).inside
        assert ops.in_cone(ops.PInverseGammaK(k), lam).inside


@given(lam_vec, st.data())
def test_cone_openness(lam, data):
    n = len(lam)
    k = data.draw(st.integers(1, n))
    t = ops.in_cone(ops.GammaK(k), lam)
    assume(t.inside)
    u = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n)))
    pert = np.array(lam) + 0.999 * t.margin / (2 * n) * u
    assert ops.in_cone(ops.GammaK(k), pert).inside


# --- evaluate_f ----------------------------------------------------------------


def test_evaluate_examples():
    assert ops.evaluate_f(ops.Hessian(3, 2), [1, 1, 1]) == pytest.approx(1)
    assert ops.evaluate_f(ops.LagrangianPhase(2), [1, 1]) == pytest.approx(pi / 2)
    assert ops.evaluate_f(ops.HessianQuotient(2, 2, 1), [1, 1]) == pytest.approx(1)


def test_evaluate_outside_cone_raises():
    with pytest.raises(NotAdmissible) as exc:
        ops.evaluate_f(ops.Hessian(2, 2), [1, -0.5])
    assert exc.value.failing == "sigma_2"
    with pytest.raises(NotAdmissible):
        ops.evaluate_f(ops.LagrangianPhase(2), [0.5, 0.5])


@pytest.mark.parametrize("n", [2, 3])
def test_monotone_in_each_argument(n):
    rng = np.random.default_rng(n)
    for spec in all_specs(n):
        for _ in range(20):
            lam = sample_in_cone(rng, spec.cone, n)
            f0 = ops.evaluate_f(spec, lam)
            for i in range(n):
                for t in (1e-4, 0.05, 0.1):
                    e = np.zeros(n)
                    e[i] = t
                    assert ops.evaluate_f(spec, lam + e) > f0, (spec, lam, i, t)


@pytest.mark.parametrize("n", [2, 3])
def test_midpoint_concavity(n):
    rng = np.random.default_rng(10 + n)
    for spec in all_specs(n):
        for _ in range(30):
            a = sample_in_cone(rng, spec.cone, n)
            b = sample_in_cone(rng, spec.cone, n)
            m = 0.5 * (a + b)
            lhs = ops.evaluate_f(spec, m)
            rhs = 0.5 * (ops.evaluate_f(spec, a) + ops.evaluate_f(spec, b))
            assert lhs >= rhs - 1e-9, spec


@given(st.permutations([1.3, 1.7, 6.2]))
def test_permutation_symmetry(perm):
    base = [1.3, 1.7, 6.2]
    for spec in all_specs(3):
        assert ops.evaluate_f(spec, perm) == pytest.approx(ops.evaluate_f(spec, base), rel=1e-14)


# --- p_map ---------------------------------------------------------------------


def test_p_map_examples():
    np.testing.assert_allclose(ops.p_map([1, 5]), [1, 5])
    np.testing.assert_allclose(ops.p_map([1, 2, 3]), [1.5, 2, 2.5])
    np.testing.assert_allclose(ops.p_map([0.7] * 4), [0.7] * 4)
    with pytest.raises(DimensionTooSmall):
        ops.p_map([1.0])


@given(lam_vec, st.floats(-3, 3), st.floats(-3, 3), st.data())
def test_p_map_linear(lam, a, b, data):
    mu = data.draw(st.lists(st.floats(-2, 4), min_size=len(lam), max_size=len(lam)))
    lam, mu = np.array(lam), np.array(mu)
    P = ops.p_matrix(len(lam))
    np.testing.assert_allclose((a * lam + b * mu) @ P, a * (lam @ P) + b * (mu @ P), atol=1e-12)
    np.testing.assert_allclose(ops.p_map(a * lam + b * mu), np.sort((a * lam + b * mu) @ P))


# --- gradient and second derivative ------------------------------------------


def test_gradient_examples():
    for n in (2, 3):
        np.testing.assert_allclose(ops.gradient_F(ops.Hessian(n, n), np.eye(n), np.eye(n)),
                                   np.eye(n) / n, atol=1e-14)
    G = ops.gradient_F(ops.LagrangianPhase(2), np.diag([2.0, 3.0]), np.eye(2))
    np.testing.assert_allclose(G, np.diag([1 / 5, 1 / 10]), atol=1e-14)


@pytest.mark.parametrize("n", [2, 3])
def test_gradient_matches_finite_differences(n):
    rng = np.random.default_rng(100 + n)
    for spec in all_specs(n):
        for _ in range(5):
            om = random_metric(rng, n)
            A = sample_matrix(rng, spec, n, om)
            fun = lambda M: ops.evaluate_f(spec, ops.eigenvalues(M, om))
            G = ops.gradient_F(spec, A, om)
            G_fd = fd_gradient(fun, A)
            assert np.max(np.abs(G - G_fd)) <= 1e-6 * max(1.0, np.max(np.abs(G)))
            assert np.linalg.eigvalsh(G)[0] > 0


@pytest.mark.parametrize("n", [2, 3])
def test_second_derivative_matches_finite_differences(n):
    rng = np.random.default_rng(200 + n)
    for spec in all_specs(n):
        for _ in range(5):
            om = random_metric(rng, n)
            A = sample_matrix(rng, spec, n, om)
            B = random_hermitian(rng, n)
            fun = lambda M: ops.evaluate_f(spec, ops.eigenvalues(M, om))
            q = ops.hessian_quadratic_form(spec, A, om, B)
            q_fd = fd_second(fun, A, B)
            assert abs(q - q_fd) <= 1e-5 * max(1.0, abs(q)), spec


def test_clustered_eigenvalues_use_limit():
    spec = ops.Hessian(3, 2)
    A = np.diag([1.0, 1.0 + 1e-9, 2.0])
    B = np.array([[0.3, 0.5 - 0.2j, 0.1], [0.5 + 0.2j, -0.4, 0.7j], [0.1, -0.7j, 0.2]])
    fun = lambda M: ops.evaluate_f(spec, ops.eigenvalues(M, np.eye(3)))
    G = ops.gradient_F(spec, A, np.eye(3))
    assert np.max(np.abs(G - fd_gradient(fun, A))) < 1e-6
    q = ops.hessian_quadratic_form(spec, A, np.eye(3), B)
    assert q == pytest.approx(fd_second(fun, A, B), rel=1e-5)


@pytest.mark.parametrize("n,k", [(2, 2), (3, 2), (3, 3)])
def test_hessian_kernel_is_the_ray(n, k):
    rng = np.random.default_rng(7 * n + k)
    spec = ops.Hessian(n, k)
    for _ in range(20):
        A = sample_matrix(rng, spec, n)
        assert abs(ops.hessian_quadratic_form(spec, A, np.eye(n), A)) <= 1e-9
        assert abs(ops.hessian_quadratic_form(spec, A, np.eye(n), 2.5 * A)) <= 1e-9
        B = random_hermitian(rng, n)
        t = np.vdot(A, B).real / np.vdot(A, A).real
        if np.linalg.norm(B - t * A) / np.linalg.norm(B) > 1e-6:
            assert ops.hessian_quadratic_form(spec, A, np.eye(n), B) < -1e-10


def test_not_admissible_derivatives():
    with pytest.raises(NotAdmissible):
        ops.gradient_F(ops.Hessian(2, 2), np.diag([1.0, -1.0]), np.eye(2))
    with pytest.raises(NotAdmissible):
        ops.hessian_quadratic_form(ops.Hessian(2, 2), np.diag([1.0, -1.0]), np.eye(2), np.eye(2))


# --- phase data ----------------------------------------------------------------


def test_zhat_examples():
    z, phi = ops.zhat_and_phi(ops.Hessian(2, 1), 1.0)
    assert z == pytest.approx(1 + 1j) and phi == pytest.approx(pi / 4)
    z, phi = ops.zhat_and_phi(ops.Hessian(3, 2), 0.0)
    assert z == pytest.approx(1) and phi == 0
    z, phi = ops.zhat_and_phi(ops.LagrangianPhase(2), pi / 2)
    assert z == pytest.approx(1j) and phi == pytest.approx(pi / 2)
    with pytest.raises(OutOfRange):
        ops.zhat_and_phi(ops.Hessian(2, 2), -1.0)
    with pytest.raises(OutOfRange):
        ops.zhat_and_phi(ops.LagrangianPhase(2), 0.1)
    with pytest.raises(NotCohomologicalType):
        ops.zhat_and_phi(ops.NMinusOneHessian(2, 1), 1.0)


@pytest.mark.parametrize("spec", [ops.Hessian(2, 1), ops.Hessian(3, 2), ops.HessianQuotient(3, 3, 1),
                                  ops.LagrangianPhase(2), ops.LagrangianPhase(3),
                                  ops.LagrangianPhase(2, transform_exponent=1.5)])
def test_zhat_argument_and_injectivity(spec):
    lo, hi = spec.value_range
    hi = min(hi, 20.0)
    xs = np.linspace(lo, hi, 200)[1:-1]
    phis = []
    for x in xs:
        z, phi = ops.zhat_and_phi(spec, x)
        d = (np.angle(z) - phi) % (2 * pi)
        assert min(d, 2 * pi - d) < 1e-12
        phis.append(phi)
    assert np.all(np.diff(phis) > 0)


def test_spec_roundtrip():
    for spec in all_specs(3):
        assert ops.spec_from_dict(spec.to_dict(), 3) == spec
    with pytest.raises(ValueError):
        ops.spec_from_dict({"kind": "nope"}, 2)


def test_normalization_all_ones():
    for n in (2, 3, 4):
        for spec in all_specs(n):
            if isinstance(spec, ops.LagrangianPhase):
                continue
            assert ops.evaluate_f(spec, np.ones(n)) == pytest.approx(1, rel=1e-14)
            assert ops.evaluate_f(spec, 3 * np.ones(n)) == pytest.approx(3, rel=1e-14)


def test_hessian_closed_form():
    lam = np.array([0.5, 2.0, 3.0])
    for k in (1, 2, 3):
        expect = (sigma_brute(lam, k) / comb(3, k)) ** (1 / k)
        assert ops.evaluate_f(ops.Hessian(3, k), lam) == pytest.approx(expect, rel=1e-14)
