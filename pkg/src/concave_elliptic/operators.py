"""Pointwise operator machinery.

Eigenvalues relative to a metric, elementary symmetric functions, the four
concave operators (Hessian, Hessian quotient, Lagrangian phase and the
(n-1, n-1) Hessian), their admissible cones and the first and second
derivatives of the induced matrix operator ``F(A) = f(lambda(A))``.

All functions are pure. The ``*_batch`` helpers act on stacks of eigenvalue
vectors or matrices with shape ``(..., n)`` / ``(..., n, n)`` and are what the
field-level code uses; the scalar entry points validate their inputs.
"""

from dataclasses import dataclass
from math import comb, pi
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import (
    DimensionTooSmall,
    IndexOutOfRange,
    NotAdmissible,
    NotCohomologicalType,
    OutOfRange,
)
from .validation import check_hermitian, check_metric, inverse_sqrt

# "strictly inside" means margin above this; closed cones accept down to -BOUNDARY_TOL
BOUNDARY_TOL = 1e-10
# relative eigenvalue gap below which divided differences use their limit
CLUSTER_RTOL = 1e-8


# ---------------------------------------------------------------------------
# cones
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaK:
    """The Garding cone: ``sigma_l(lambda) > 0`` for ``1 <= l <= k``."""

    k: int
    closed = False


@dataclass(frozen=True)
class SupercriticalPhase:
    """``{lambda : sum(arctan(lambda_i)) >= threshold}`` (a closed set)."""

    threshold: float
    closed = True


@dataclass(frozen=True)
class PInverseGammaK:
    """Preimage of ``GammaK(k)`` under the linear map :func:`p_map`."""

    k: int
    closed = False


class ConeTest(NamedTuple):
    inside: bool
    margin: float
    failing: Optional[str]
    values: tuple


# ---------------------------------------------------------------------------
# symmetric functions
# ---------------------------------------------------------------------------


def esf_batch(lam, kmax):
    """Elementary symmetric polynomials ``e_0 .. e_kmax`` of ``lam`` (..., n).

    Uses the product recurrence for the coefficients of ``prod(1 + lam_i t)``.
    """
    lam = np.asarray(lam, dtype=float)
    e = np.zeros(lam.shape[:-1] + (kmax + 1,))
    e[..., 0] = 1.0
    for i in range(lam.shape[-1]):
        x = lam[..., i, None]
        e[..., 1:] = e[..., 1:] + x * e[..., :-1]
    return e


def _esf_without(lam, kmax, drop):
    keep = [i for i in range(lam.shape[-1]) if i not in drop]
    return esf_batch(lam[..., keep], kmax)


def sigma_k(lam, k):
    """k-th elementary symmetric polynomial of ``lam`` (``sigma_0 = 1``)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 0 <= k <= n:
        raise IndexOutOfRange(f"k must satisfy 0 <= k <= {n}, got {k}")
    return float(esf_batch(lam, k)[..., k]) if lam.ndim == 1 else esf_batch(lam, k)[..., k]


def _sigma_derivs(lam, k):
    """sigma_k and its gradient and Hessian in lambda, batched."""
    n = lam.shape[-1]
    s = esf_batch(lam, k)[..., k]
    g = np.zeros(lam.shape)
    H = np.zeros(lam.shape + (n,))
    for i in range(n):
        g[..., i] = _esf_without(lam, k - 1, (i,))[..., k - 1]
        if k >= 2:
            for j in range(i + 1, n):
                H[..., i, j] = H[..., j, i] = _esf_without(lam, k - 2, (i, j))[..., k - 2]
    return s, g, H


def p_matrix(n):
    """Matrix of the linear map ``mu_i = (n-1)^-1 sum_{j != i} lambda_j``."""
    if n < 2:
        raise DimensionTooSmall("the P-map needs n >= 2")
    return (np.ones((n, n)) - np.eye(n)) / (n - 1)


def p_map(lam):
    """Apply the P-map and return the image sorted ascending."""
    lam = np.asarray(lam, dtype=float)
    return np.sort(lam @ p_matrix(lam.shape[-1]), axis=-1)


# ---------------------------------------------------------------------------
# cone margins
# ---------------------------------------------------------------------------


def _gamma_margins(lam, k):
    """Scaled sigma values whose minimum is the Gamma_k margin.

    ``sigma_l / (C(n,l) * l * (2R)^(l-1))`` with ``R = max|lambda_i|``. The sign
    matches ``sigma_l``; the scaling makes any sup-norm perturbation smaller
    than ``margin / (2n)`` stay inside the cone.
    """
    n = lam.shape[-1]
    e = esf_batch(lam, k)
    R = np.max(np.abs(lam), axis=-1)
    R2 = np.maximum(2.0 * R, 1e-20)  # avoids 0/0 when (2R)^(l-1) underflows
    cols = [e[..., l] / (comb(n, l) * l * R2 ** (l - 1)) for l in range(1, k + 1)]
    return np.stack(cols, axis=-1), e


def cone_margin_batch(cone, lam):
    """Signed margin of every eigenvalue vector in ``lam`` (..., n)."""
    lam = np.asarray(lam, dtype=float)
    if isinstance(cone, GammaK):
        return _gamma_margins(lam, cone.k)[0].min(axis=-1)
    if isinstance(cone, PInverseGammaK):
        mu = lam @ p_matrix(lam.shape[-1])
        return _gamma_margins(mu, cone.k)[0].min(axis=-1)
    if isinstance(cone, SupercriticalPhase):
        return np.arctan(lam).sum(axis=-1) - cone.threshold
    raise TypeError(f"unknown cone {cone!r}")


def admissible_mask(cone, margin, slack=BOUNDARY_TOL):
    """Boolean mask of margins counted as admissible for ``cone``."""
    margin = np.asarray(margin)
    if cone.closed:
        return margin >= -slack
    return margin > slack


def in_cone(cone, lam):
    """Test cone membership of a single eigenvalue vector.

    Returns a :class:`ConeTest` with the signed margin and, when the test
    fails, the name of the failing defining inequality.
    """
    lam = np.asarray(lam, dtype=float)
    if isinstance(cone, (GammaK, PInverseGammaK)):
        if not 1 <= cone.k <= lam.shape[-1]:
            raise IndexOutOfRange(f"cone index k={cone.k} outside 1..{lam.shape[-1]}")
        x = lam @ p_matrix(lam.shape[-1]) if isinstance(cone, PInverseGammaK) else lam
        scaled, e = _gamma_margins(x, cone.k)
        margin = float(scaled.min())
        values = tuple(float(v) for v in e[1:])
        failing = None
        for l, v in enumerate(values, start=1):
            if v <= 0:
                failing = f"sigma_{l}"
                break
        if failing is None and margin <= BOUNDARY_TOL:
            failing = f"sigma_{int(np.argmin(scaled)) + 1}"
        inside = margin > BOUNDARY_TOL
        return ConeTest(inside, margin, None if inside else failing, values)
    if isinstance(cone, SupercriticalPhase):
        theta = float(np.arctan(lam).sum())
        margin = theta - cone.threshold
        inside = margin >= -BOUNDARY_TOL
        return ConeTest(inside, margin, None if inside else "theta", (theta,))
    raise TypeError(f"unknown cone {cone!r}")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorSpec:
    """Base class; concrete specs define ``cone`` and ``_derivs``."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be >= 1")

    @property
    def value_range(self):
        return (0.0, np.inf)

    def to_dict(self):
        raise NotImplementedError

    def derivs(self, lam, order=2):
        """f, its gradient and Hessian in lambda for stacked ``lam`` (..., n).

        Entries outside the cone are NaN; callers mask with the cone margin.
        """
        with np.errstate(invalid="ignore", divide="ignore"):
            return self._derivs(np.asarray(lam, dtype=float), order)


def _log_ratio_derivs(lam, k, l, order):
    """Derivatives of ``((C_l/C_k) sigma_k / sigma_l)^(1/(k-l))``; ``l=0`` gives the Hessian."""
    n = lam.shape[-1]
    sk, gk, Hk = _sigma_derivs(lam, k)
    h = (np.log(sk / comb(n, k))) / (k - l)
    if l > 0:
        sl, gl, Hl = _sigma_derivs(lam, l)
        h = h - np.log(sl / comb(n, l)) / (k - l)
    f = np.exp(h)
    if order == 0:
        return f, None, None
    hi = gk / sk[..., None]
    if l > 0:
        hi = hi - gl / sl[..., None]
    hi = hi / (k - l)
    fi = f[..., None] * hi
    if order == 1:
        return f, fi, None
    hij = Hk / sk[..., None, None] - gk[..., :, None] * gk[..., None, :] / sk[..., None, None] ** 2
    if l > 0:
        hij = hij - (Hl / sl[..., None, None]
                     - gl[..., :, None] * gl[..., None, :] / sl[..., None, None] ** 2)
    hij = hij / (k - l)
    fij = f[..., None, None] * (hij + hi[..., :, None] * hi[..., None, :])
    return f, fi, fij


@dataclass(frozen=True)
class Hessian(OperatorSpec):
    """``f = (sigma_k / C(n, k))^(1/k)`` on ``Gamma_k``."""

    k: int = 1

    def __post_init__(self):
        super().__post_init__()
        if not 1 <= self.k <= self.n:
            raise IndexOutOfRange(f"Hessian needs 1 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def cone(self):
        return GammaK(self.k)

    def _derivs(self, lam, order):
        return _log_ratio_derivs(lam, self.k, 0, order)

    def to_dict(self):
        return {"kind": "hessian", "k": self.k}


@dataclass(frozen=True)
class HessianQuotient(OperatorSpec):
    """``f = ((sigma_k/C(n,k)) / (sigma_l/C(n,l)))^(1/(k-l))`` on ``Gamma_k``."""

    k: int = 2
    l: int = 1

    def __post_init__(self):
        super().__post_init__()
        if not 1 <= self.l < self.k <= self.n:
            raise IndexOutOfRange(
                f"HessianQuotient needs 1 <= l < k <= n, got k={self.k}, l={self.l}, n={self.n}")

    @property
    def cone(self):
        return GammaK(self.k)

    def _derivs(self, lam, order):
        return _log_ratio_derivs(lam, self.k, self.l, order)

    def to_dict(self):
        return {"kind": "hessian_quotient", "k": self.k, "l": self.l}


@dataclass(frozen=True)
class LagrangianPhase(OperatorSpec):
    """``Theta = sum(arctan(lambda_i))`` on a supercritical cone.

    ``threshold`` defaults to ``(n-1) pi/2``, where Theta is concave. For lower
    thresholds a ``transform_exponent`` ``a`` switches the operator to
    ``-exp(-a Theta)``; choosing ``a`` large enough is up to the caller.
    """

    threshold: Optional[float] = None
    transform_exponent: Optional[float] = None

    def __post_init__(self):
        super().__post_init__()
        if self.threshold is None:
            object.__setattr__(self, "threshold", (self.n - 1) * pi / 2)
        if self.transform_exponent is not None and self.transform_exponent <= 0:
            raise ValueError("transform_exponent must be positive")

    @property
    def cone(self):
        return SupercriticalPhase(self.threshold)

    @property
    def value_range(self):
        lo, hi = self.threshold, self.n * pi / 2
        if self.transform_exponent is None:
            return (lo, hi)
        a = self.transform_exponent
        return (-np.exp(-a * lo), -np.exp(-a * hi))

    def _derivs(self, lam, order):
        theta = np.arctan(lam).sum(axis=-1)
        d1 = 1.0 / (1.0 + lam**2)
        a = self.transform_exponent
        if a is None:
            f, fi = theta, d1
        else:
            w = np.exp(-a * theta)
            f, fi = -w, a * w[..., None] * d1
        if order == 0:
            return f, None, None
        if order == 1:
            return f, fi, None
        d2 = np.zeros(lam.shape + (lam.shape[-1],))
        idx = np.arange(lam.shape[-1])
        d2[..., idx, idx] = -2.0 * lam * d1**2
        if a is not None:
            d2 = a * w[..., None, None] * (d2 - a * d1[..., :, None] * d1[..., None, :])
        return f, fi, d2

    def to_dict(self):
        return {"kind": "lagrangian_phase", "threshold": self.threshold,
                "transform_exponent": self.transform_exponent}


@dataclass(frozen=True)
class NMinusOneHessian(OperatorSpec):
    """``f = (sigma_k(P lambda) / C(n, k))^(1/k)`` on ``P^-1(Gamma_k)``."""

    k: int = 1

    def __post_init__(self):
        super().__post_init__()
        if self.n < 2:
            raise DimensionTooSmall("NMinusOneHessian needs n >= 2")
        if not 1 <= self.k <= self.n:
            raise IndexOutOfRange(f"NMinusOneHessian needs 1 <= k <= n, got k={self.k}")

    @property
    def cone(self):
        return PInverseGammaK(self.k)

    def _derivs(self, lam, order):
        P = p_matrix(self.n)
        f, g, H = _log_ratio_derivs(lam @ P, self.k, 0, order)
        if order >= 1:
            g = g @ P
        if order >= 2:
            H = P @ H @ P
        return f, g, H

    def to_dict(self):
        return {"kind": "n_minus_one_hessian", "k": self.k}


def spec_from_dict(d, n):
    """Build an :class:`OperatorSpec` from a JSON-style descriptor."""
    kind = d.get("kind")
    if kind == "hessian":
        return Hessian(n, int(d.get("k", n)))
    if kind == "hessian_quotient":
        return HessianQuotient(n, int(d["k"]), int(d["l"]))
    if kind == "lagrangian_phase":
        return LagrangianPhase(n, d.get("threshold"), d.get("transform_exponent"))
    if kind == "n_minus_one_hessian":
        return NMinusOneHessian(n, int(d["k"]))
    raise ValueError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# matrix level
# ---------------------------------------------------------------------------


def eigenvalues(A, omega):
    """Eigenvalues of ``A`` relative to the metric ``omega``, ascending.

    These are the eigenvalues of ``omega^-1 A``, computed as those of the
    Hermitian matrix ``omega^-1/2 A omega^-1/2``.
    """
    omega = check_metric(omega)
    A = check_hermitian(A, n=omega.shape[0], name="A")
    W = inverse_sqrt(omega)
    return np.linalg.eigvalsh(W @ A @ W)


def _check_spec_dim(spec, lam):
    if lam.shape[-1] != spec.n:
        raise ValueError(f"operator is {spec.n}-dimensional, got {lam.shape[-1]} eigenvalues")


def _require_admissible(spec, lam, strict=False):
    test = in_cone(spec.cone, lam)
    ok = test.inside if not strict or spec.cone.closed else test.margin > BOUNDARY_TOL
    if not ok:
        raise NotAdmissible(
            f"eigenvalues {np.round(lam, 12).tolist()} are not admissible for "
            f"{type(spec).__name__}: {test.failing} fails (margin {test.margin:.3g})",
            failing=test.failing, margin=test.margin)
    return test


def evaluate_f(spec, lam):
    """Value of the operator ``f`` at an admissible eigenvalue vector."""
    lam = np.asarray(lam, dtype=float)
    _check_spec_dim(spec, lam)
    _require_admissible(spec, lam)
    return float(spec.derivs(lam, order=0)[0])


def _spectral(spec, A, omega):
    omega = check_metric(omega, n=spec.n)
    A = check_hermitian(A, n=spec.n, name="A")
    W = inverse_sqrt(omega)
    lam, U = np.linalg.eigh(W @ A @ W)
    _require_admissible(spec, lam, strict=True)
    return W, lam, U


def gradient_F(spec, A, omega):
    """Derivative of ``M -> F(M)`` at ``A`` as a Hermitian matrix ``G``.

    ``dF(A)[B] = trace(G B)``. Positive definite inside the cone.
    """
    W, lam, U = _spectral(spec, A, omega)
    _, fi, _ = spec.derivs(lam, order=1)
    return W @ ((U * fi) @ U.conj().T) @ W


def first_divided_differences(lam, fi, fij):
    """Matrix of ``(f_i - f_j) / (lam_i - lam_j)`` with its coalescence limit.

    Works on stacks. For clustered eigenvalues the limit ``f_ii - f_ij`` of a
    symmetric function is substituted.
    """
    li, lj = lam[..., :, None], lam[..., None, :]
    gap = li - lj
    scale = np.maximum(1.0, np.maximum(np.abs(li), np.abs(lj)))
    close = np.abs(gap) <= CLUSTER_RTOL * scale
    diag = np.diagonal(fij, axis1=-2, axis2=-1)
    limit = 0.5 * (diag[..., :, None] + diag[..., None, :]) - fij
    with np.errstate(invalid="ignore", divide="ignore"):
        dd = (fi[..., :, None] - fi[..., None, :]) / np.where(close, 1.0, gap)
    return np.where(close, limit, dd)


def hessian_quadratic_form(spec, A, omega, B):
    """Second derivative ``d^2/dt^2 F(A + tB)`` at ``t = 0``.

    Daleckii-Krein form: diagonal part through the Hessian of ``f`` and the
    off-diagonal part through first divided differences of its gradient.
    """
    W, lam, U = _spectral(spec, A, omega)
    B = check_hermitian(B, n=spec.n, name="B")
    Bt = U.conj().T @ (W @ B @ W) @ U
    _, fi, fij = spec.derivs(lam, order=2)
    d = np.real(np.diagonal(Bt))
    dd = first_divided_differences(lam, fi, fij)
    off = np.abs(Bt) ** 2
    np.fill_diagonal(off, 0.0)
    return float(d @ fij @ d + np.sum(dd * off))


def zhat_and_phi(spec, x):
    """Phase data ``(Zhat(x), phi_f(x))`` of a cohomological-type operator.

    ``Zhat(x)`` is a positive multiple of ``exp(i phi_f(x))``.
    """
    x = float(x)
    if isinstance(spec, NMinusOneHessian):
        raise NotCohomologicalType("the (n-1, n-1) Hessian operator has no phase data")
    tol = 1e-12 * max(1.0, abs(x))
    if isinstance(spec, (Hessian, HessianQuotient)):
        if x < -tol:
            raise OutOfRange(f"x={x} outside the operator range [0, inf)")
        p = spec.k if isinstance(spec, Hessian) else spec.k - spec.l
        y = max(x, 0.0) ** p
        return complex(1.0, y), float(np.arctan(y))
    if isinstance(spec, LagrangianPhase):
        if spec.transform_exponent is None:
            theta = x
        else:
            if x >= 0:
                raise OutOfRange(f"x={x} outside the range of -exp(-a Theta)")
            theta = -np.log(-x) / spec.transform_exponent
        lo, hi = spec.threshold, spec.n * pi / 2
        if not lo - 1e-12 <= theta <= hi + 1e-12:
            raise OutOfRange(f"phase {theta} outside [{lo}, {hi}]")
        phi = theta - (spec.n - 2) * pi / 2
        return complex(np.exp(1j * phi)), float(phi)
    raise TypeError(f"unknown operator {spec!r}")


# ---------------------------------------------------------------------------
# batched helpers for fields
# ---------------------------------------------------------------------------


def operator_field(spec, A, omega_isqrt, order=1):
    """Evaluate ``F`` (and optionally its matrix gradient) on a stack of forms.

    ``A`` has shape ``(..., n, n)``; ``omega_isqrt`` is ``omega^-1/2``. Returns
    ``(values, margins, G)`` where ``G`` is ``None`` for ``order == 0``.
    Values at inadmissible points are NaN.
    """
    M = omega_isqrt @ A @ omega_isqrt
    if order == 0:
        lam = np.linalg.eigvalsh(M)
        f = spec.derivs(lam, order=0)[0]
        return f, cone_margin_batch(spec.cone, lam), None
    lam, U = np.linalg.eigh(M)
    f, fi, _ = spec.derivs(lam, order=1)
    G = (U * fi[..., None, :]) @ np.swapaxes(U, -1, -2).conj()
    G = omega_isqrt @ G @ omega_isqrt
    return f, cone_margin_batch(spec.cone, lam), G
