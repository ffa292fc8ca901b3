"""Cohomological quantities on the torus.

Predicted constants for cohomological-type operators, the Z-functional and
its principal-value phase, inequality gaps (Khovanskii-Teissier,
Brunn-Minkowski, quotient convexity), the dHYM integral identity and the
finite-difference obstruction derivative.

Intersection numbers use the normalization of :mod:`concave_elliptic.torus`:
``integral of alpha^n = n! det(A)`` on the unit-volume torus.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import comb, pi
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import operators as ops
from .exceptions import NonPositiveQuotient, NotAdmissible, NotCohomologicalType
from .solver import SolveOptions, c_of_class
from .torus import (
    ClassSpec,
    FormField,
    TorusGeometry,
    combine_classes,
    eigenfield,
    form_from_class,
    intersection_number,
    wedge_integral,
)
from .validation import check_hermitian


def _mat(c):
    return c.A if isinstance(c, ClassSpec) else check_hermitian(c)


def mixed_intersection(geometry, *powers):
    """Intersection number of classes raised to powers, e.g. ``(omega, 1), (A, 2)``.

    The powers must add up to ``n``.
    """
    mats = []
    for c, p in powers:
        mats += [_mat(c)] * int(p)
    return intersection_number(mats, geometry)


def _check_gamma_k(geometry, A, k, what="class"):
    lam = ops.eigenvalues(A, geometry.omega)
    test = ops.in_cone(ops.GammaK(k), lam)
    if not test.inside:
        raise NotAdmissible(
            f"{what} is not in Gamma_{k}: {test.failing} fails "
            f"(sigma values {[round(v, 12) for v in test.values]})",
            failing=test.failing, margin=test.margin)
    return lam


def _omega_power_alpha(geometry, A, k):
    n = geometry.n
    return mixed_intersection(geometry, (geometry.omega, n - k), (A, k))


def predicted_c_hessian(cls, geometry, k):
    """``c`` with ``c^k = (omega^(n-k) . alpha^k) / omega^n``, positive root."""
    A = _mat(cls)
    _check_gamma_k(geometry, A, k)
    q = _omega_power_alpha(geometry, A, k) / geometry.volume
    if q <= 0:
        raise NonPositiveQuotient(f"intersection quotient {q} is not positive")
    return float(q ** (1.0 / k))


def predicted_c_quotient(cls, geometry, k, l):
    """``c = ((omega^(n-k).alpha^k) / (omega^(n-l).alpha^l))^(1/(k-l))``."""
    A = _mat(cls)
    _check_gamma_k(geometry, A, k)
    top = _omega_power_alpha(geometry, A, k)
    bottom = _omega_power_alpha(geometry, A, l)
    if top <= 0 or bottom <= 0:
        raise NonPositiveQuotient(f"intersection numbers {top}, {bottom} must be positive")
    return float((top / bottom) ** (1.0 / (k - l)))


def arg_pv(z):
    """Principal argument in ``(-pi, pi]``."""
    a = float(np.angle(z))
    return pi if a == -pi else a


def z_functional(cls, geometry):
    """``Z = -(-i)^n integral exp(i Theta(alpha)) Omega(omega, alpha)``.

    ``Omega = sqrt(prod(1 + lambda_i^2)) omega^n``. Evaluated on the constant
    representative, where it equals ``-prod(lambda_j - i) * integral omega^n``.
    """
    lam = ops.eigenvalues(_mat(cls), geometry.omega)
    n = geometry.n
    vol = np.sqrt(np.prod(1.0 + lam**2))
    return complex(-((-1j) ** n) * np.exp(1j * np.arctan(lam).sum()) * vol * geometry.volume)


def predicted_phase(cls, geometry):
    """``(n-2) pi/2 + Arg_pv(Z)``."""
    return (geometry.n - 2) * pi / 2 + arg_pv(z_functional(cls, geometry))


@dataclass
class CohomologicalPrediction:
    spec: ops.OperatorSpec
    value_c: float
    phase_data: Optional[tuple] = None
    on_branch_boundary: bool = False


def predict(spec, cls, geometry):
    """Class-determined constant for a cohomological-type operator."""
    if isinstance(spec, ops.Hessian):
        return CohomologicalPrediction(spec, predicted_c_hessian(cls, geometry, spec.k))
    if isinstance(spec, ops.HessianQuotient):
        return CohomologicalPrediction(
            spec, predicted_c_quotient(cls, geometry, spec.k, spec.l))
    if isinstance(spec, ops.LagrangianPhase):
        Z = z_functional(cls, geometry)
        a = arg_pv(Z)
        c = (geometry.n - 2) * pi / 2 + a
        if spec.transform_exponent is not None:
            c = -np.exp(-spec.transform_exponent * c)
        return CohomologicalPrediction(spec, float(c), (Z, a), on_branch_boundary=a == pi)
    raise NotCohomologicalType(f"{type(spec).__name__} has no cohomological prediction")


def kt_hessian_gap(geometry, cls_alpha, cls_beta, k, normalize=False):
    """``(alpha^(k-1).beta.omega^(n-k))^2 - (omega^(n-k).alpha^(k-2).beta^2)(omega^(n-k).alpha^k)``.

    Non-negative for ``alpha`` in ``Gamma_k``, zero iff ``beta`` is a multiple of
    ``alpha``. With ``normalize=True`` the gap is divided by
    ``(omega^(n-k).alpha^k)^2 * (|B| / |A|)^2``, which is invariant under
    rescaling either class.
    """
    if k < 2:
        raise ValueError("the Khovanskii-Teissier gap needs k >= 2")
    n = geometry.n
    om, A, B = geometry.omega, _mat(cls_alpha), _mat(cls_beta)
    _check_gamma_k(geometry, A, k, "alpha")
    mixed = mixed_intersection(geometry, (A, k - 1), (B, 1), (om, n - k))
    second = mixed_intersection(geometry, (om, n - k), (A, k - 2), (B, 2))
    top = mixed_intersection(geometry, (om, n - k), (A, k))
    gap = mixed**2 - second * top
    if normalize:
        gap /= top**2 * (np.linalg.norm(B) / np.linalg.norm(A)) ** 2
    return float(gap)


def volume(cls, geometry):
    """``integral of alpha^n``."""
    return mixed_intersection(geometry, (_mat(cls), geometry.n))


def brunn_minkowski_gap(geometry, cls0, cls1):
    """``Vol(a0 + a1)^(1/n) - Vol(a0)^(1/n) - Vol(a1)^(1/n)`` for Kahler classes."""
    A0, A1 = _mat(cls0), _mat(cls1)
    for name, A in (("class0", A0), ("class1", A1)):
        lo = np.linalg.eigvalsh(A)[0]
        if lo <= 0:
            raise NotAdmissible(f"{name} is not Kahler (smallest eigenvalue {lo:.3g})",
                                failing="sigma_n")
    n = geometry.n
    v = [volume(A, geometry) ** (1.0 / n) for A in (A0 + A1, A0, A1)]
    return float(v[0] - v[1] - v[2])


def quotient_ratio(geometry, A, k, l):
    """``g(alpha) = (omega^(n-l).alpha^l) / (omega^(n-k).alpha^k)``."""
    return _omega_power_alpha(geometry, A, l) / _omega_power_alpha(geometry, A, k)


def quotient_convexity_gap(geometry, cls_alpha, cls_beta, k, l, t_step=1e-3):
    """Symmetric second difference of ``g(alpha + t beta)`` at ``t = 0``.

    ``g`` is the inverse quotient of :func:`predicted_c_quotient` raised to
    ``k - l``, which is convex on the admissible set, so the gap is ``>= 0``.
    """
    A, B = _mat(cls_alpha), _mat(cls_beta)
    for t in (-t_step, 0.0, t_step):
        _check_gamma_k(geometry, A + t * B, k, f"alpha + {t:g} beta")
    g = [quotient_ratio(geometry, A + t * B, k, l) for t in (-t_step, 0.0, t_step)]
    return float((g[0] - 2 * g[1] + g[2]) / t_step**2)


def quotient_kt_sides(geometry, cls_alpha, cls_beta, k, l):
    """Both sides of the expanded quotient Khovanskii-Teissier inequality (lhs >= rhs)."""
    n = geometry.n
    om, A, B = geometry.omega, _mat(cls_alpha), _mat(cls_beta)

    def I(a, b, c):
        # omega^a . alpha^b . beta^c
        if b < 0:
            return 0.0
        return mixed_intersection(geometry, (om, a), (A, b), (B, c))

    a_k, a_l = I(n - k, k, 0), I(n - l, l, 0)
    d_k, d_l = I(n - k, k - 1, 1), I(n - l, l - 1, 1)
    lhs = l * (l - 1) * I(n - l, l - 2, 2) * a_k - k * (k - 1) * I(n - k, k - 2, 2) * a_l
    rhs = 2 * k * (l * d_l - k * d_k * a_l / a_k) * d_k
    return float(lhs), float(rhs)


def dhym_sides(geometry, cls, phi=None):
    """Phase side and wedge side of the dHYM integral identity.

    lhs = ``-(-i)^n integral exp(i Theta) Omega`` from pointwise eigenvalues;
    rhs = ``-integral (alpha - i omega)^n`` expanded into mixed wedge
    integrals. The conjugated orientation ``alpha - i omega`` is the one that
    makes the identity hold with ``Arg(Z) = Theta - (n-2) pi/2``.
    """
    alpha = form_from_class(cls, phi, geometry=geometry)
    geom = alpha.geometry
    n = geom.n
    lam = eigenfield(alpha)
    pointwise = np.exp(1j * np.arctan(lam).sum(axis=-1)) * np.sqrt(np.prod(1 + lam**2, axis=-1))
    lhs = -((-1j) ** n) * np.mean(pointwise) * geom.volume
    om = FormField.constant(geom, geom.omega)
    rhs = 0.0
    for j in range(n + 1):
        rhs += comb(n, j) * (-1j) ** (n - j) * wedge_integral([om] * (n - j) + [alpha] * j)
    return complex(lhs), complex(-rhs)


def dhym_identity_gap(geometry, cls, phi=None):
    """``|lhs - rhs|`` of :func:`dhym_sides`."""
    lhs, rhs = dhym_sides(geometry, cls, phi)
    return float(abs(lhs - rhs))


def obstruction_derivative(spec, geometry, cls_alpha, cls_beta, h=1e-4, options=None,
                           richardson=True, n_jobs=1):
    """Central difference ``dc/dt`` of ``c(alpha + t beta)`` at ``t = 0``.

    With ``richardson=True`` the steps ``h`` and ``h/2`` are combined to cancel
    the leading error term. Independent solves run on ``n_jobs`` threads.
    """
    options = options or SolveOptions()
    steps = [h, h / 2] if richardson else [h]
    classes = []
    for s in steps:
        classes += [combine_classes([(1.0, cls_alpha), (s, cls_beta)]),
                    combine_classes([(1.0, cls_alpha), (-s, cls_beta)])]

    def run(c):
        return c_of_class(spec, geometry, c, options)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            cs = list(ex.map(run, classes))
    else:
        cs = [run(c) for c in classes]
    d = [(cs[2 * i] - cs[2 * i + 1]) / (2 * s) for i, s in enumerate(steps)]
    if richardson:
        return float((4 * d[1] - d[0]) / 3)
    return float(d[0])


class CohomologicalPredictor(BaseEstimator):
    """Estimator returning the class-determined constant ``c`` for each input class.

    ``fit`` only validates the parameters; ``predict`` accepts a stack of
    Hermitian matrices ``(m, n, n)`` or a list of :class:`ClassSpec`.
    """

    def __init__(self, operator="hessian", k=None, l=None, threshold=None,
                 transform_exponent=None, omega=None):
        self.operator = operator
        self.k = k
        self.l = l
        self.threshold = threshold
        self.transform_exponent = transform_exponent
        self.omega = omega

    def _spec(self, n):
        k = n if self.k is None else self.k
        return ops.spec_from_dict({"kind": self.operator, "k": k,
                                   "l": k - 1 if self.l is None else self.l,
                                   "threshold": self.threshold,
                                   "transform_exponent": self.transform_exponent}, n)

    def fit(self, X=None, y=None):
        if X is not None:
            mats = self._matrices(X)
            self.n_ = mats[0].shape[0]
            self.spec_ = self._spec(self.n_)
        return self

    @staticmethod
    def _matrices(X):
        if isinstance(X, ClassSpec):
            return [X.A]
        if isinstance(X, (list, tuple)):
            return [_mat(x) for x in X]
        X = np.asarray(X)
        return [_mat(x) for x in (X[None] if X.ndim == 2 else X)]

    def predict(self, X):
        mats = self._matrices(X)
        n = mats[0].shape[0]
        spec = self._spec(n)
        geom = TorusGeometry(n, 4, self.omega)
        return np.array([predict(spec, ClassSpec(A), geom).value_c for A in mats])
