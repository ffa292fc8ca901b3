"""Newton-Krylov solver for ``F(A + ddbar(psi0 + phi)) = c`` on the torus.

The unknown is the pair ``(phi, c)`` with ``phi`` of mean zero. Each Newton
step solves ``L v - a = -(F - c)`` where ``L v = trace(G ddbar v)`` and ``G``
is the pointwise gradient of ``F``. The constants (kernel of ``L``) are
removed by encoding ``a`` in the mean of the Krylov unknown, which makes the
linear system square and nonsingular. GMRES is preconditioned by the
constant-coefficient operator built from the grid mean of ``G``.
"""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres
from sklearn.base import BaseEstimator

from . import operators as ops
from .exceptions import (
    GeometryMismatch,
    LineSearchStalled,
    MaxIterations,
    NotAdmissibleInitialization,
    PathTruncated,
    SolverError,
)
from .torus import ClassSpec, ScalarField, TorusGeometry, form_from_class, interpolate_classes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveOptions:
    tol_residual: float = 1e-9
    max_newton: int = 50
    damping: float = 0.5
    min_step: float = 2.0**-20
    krylov_tol: float = 1e-10
    krylov_maxiter: int = 400
    admissibility_margin: float = 1e-8

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.tol_residual < 1:
            raise ValueError("tol_residual must be < 1")
        if not self.damping < 1:
            raise ValueError("damping must be < 1")

    def updated(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass
class SolveResult:
    phi: ScalarField
    c: float
    residual_sup: float
    newton_iters: int
    min_cone_margin: float
    converged: bool
    spec: ops.OperatorSpec = None
    krylov_iters: int = 0
    t: float = None
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "geometry": self.phi.geometry.summary(),
            "c": self.c,
            "residual_sup": self.residual_sup,
            "newton_iters": self.newton_iters,
            "min_cone_margin": self.min_cone_margin,
            "converged": self.converged,
        }


def _admissible_floor(spec, options):
    m = options.admissibility_margin
    return -m if spec.cone.closed else m


class _Problem:
    """Residual and linearization for one class on one geometry."""

    def __init__(self, spec, geometry, cls):
        if spec.n != geometry.n or cls.n != geometry.n:
            raise GeometryMismatch(
                f"dimensions differ: spec {spec.n}, geometry {geometry.n}, class {cls.n}")
        self.spec = spec
        self.geom = geometry
        self.base = form_from_class(cls, geometry=geometry).values

    def evaluate(self, phi_values, order=1):
        g = self.geom
        alpha = self.base + g.hessian_from_coeffs(g.fft(phi_values))
        return ops.operator_field(self.spec, alpha, g.omega_isqrt, order=order)

    def linear_system(self, G):
        """Square operator ``y -> L(y - mean y) + mean y`` and its preconditioner."""
        g = self.geom
        n = g.n
        terms = []
        for (j, k), (re, im) in g.hessian_symbols.items():
            w = 1.0 if j == k else 2.0
            terms.append((re, w * G[..., j, k].real))
            if im is not None:
                terms.append((im, w * G[..., j, k].imag))
        size = int(np.prod(g.shape))

        def matvec(y):
            y = y.reshape(g.shape)
            ybar = y.mean()
            coeffs = g.fft(y - ybar)
            out = np.zeros(g.shape)
            for sym, coef in terms:
                out += coef * g.ifft(sym * coeffs)
            return (out + ybar).ravel()

        Gbar = G.reshape(-1, n, n).mean(axis=0)
        symbol = g.laplacian_symbol(Gbar)
        inv = np.zeros_like(symbol)
        nz = symbol != 0
        inv[nz] = 1.0 / symbol[nz]
        inv.flat[0] = 0.0

        def precond(r):
            r = r.reshape(g.shape)
            rbar = r.mean()
            return (g.ifft(inv * g.fft(r - rbar)) + rbar).ravel()

        A = LinearOperator((size, size), matvec=matvec, dtype=float)
        M = LinearOperator((size, size), matvec=precond, dtype=float)
        return A, M


def solve(spec, geometry, cls, guess=None, options=None):
    """Solve for mean-zero ``phi`` and constant ``c`` with ``F(alpha_phi) = c``.

    Parameters
    ----------
    spec : OperatorSpec
    geometry : TorusGeometry
    cls : ClassSpec
    guess : tuple (ScalarField or None, float or None), optional
        Initial potential and constant. Defaults to ``phi = 0`` and ``c`` the
        grid mean of ``F`` at the reference form.
    options : SolveOptions, optional

    Raises
    ------
    NotAdmissibleInitialization, LineSearchStalled, MaxIterations
    """
    options = options or SolveOptions()
    prob = _Problem(spec, geometry, cls)
    floor = _admissible_floor(spec, options)

    phi = np.zeros(geometry.shape)
    c = None
    if guess is not None:
        gphi, gc = guess
        if gphi is not None:
            if gphi.geometry != geometry:
                raise GeometryMismatch("initial guess lives on another geometry")
            phi = gphi.values - gphi.values.mean()
        c = gc
    f, margin, G = prob.evaluate(phi)
    min_margin = float(np.min(margin))
    if not min_margin >= floor:
        raise NotAdmissibleInitialization(
            f"initial form is not admissible (min cone margin {min_margin:.3g}, "
            f"required {floor:.3g})")
    if c is None:
        c = float(np.mean(f))

    def result(converged, iters, kry, hist):
        res = f - c
        return SolveResult(ScalarField(geometry, phi), float(c), float(np.max(np.abs(res))),
                           iters, min_margin, converged, spec=spec, krylov_iters=kry,
                           history=hist)

    iters = kry_total = 0
    history = []
    while True:
        res = f - c
        rsup = float(np.max(np.abs(res)))
        history.append(rsup)
        if rsup <= options.tol_residual:
            return result(True, iters, kry_total, history)
        if iters >= options.max_newton:
            raise MaxIterations(
                f"no convergence in {options.max_newton} Newton steps (residual {rsup:.3g})",
                state=result(False, iters, kry_total, history))

        A, M = prob.linear_system(G)
        count = [0]

        def _cb(_):
            count[0] += 1

        y, info = gmres(A, -res.ravel(), rtol=options.krylov_tol, atol=0.0, restart=60,
                        maxiter=options.krylov_maxiter, M=M, callback=_cb,
                        callback_type="pr_norm")
        kry_total += count[0]
        if info < 0:
            raise SolverError(f"GMRES breakdown (info={info})")
        y = y.reshape(geometry.shape)
        ybar = y.mean()
        v, a = y - ybar, -ybar

        rnorm = float(np.sqrt(np.mean(res**2)))
        step = 1.0
        while True:
            phi_t = phi + step * v
            c_t = c + step * a
            f_t, margin_t, G_t = prob.evaluate(phi_t)
            mm = float(np.min(margin_t))
            if mm >= floor and np.all(np.isfinite(f_t)):
                res_t = f_t - c_t
                rnorm_t = float(np.sqrt(np.mean(res_t**2)))
                if (rnorm_t <= (1 - 1e-4 * step) * rnorm
                        or np.max(np.abs(res_t)) <= options.tol_residual):
                    break
            step *= options.damping
            if step < options.min_step:
                raise LineSearchStalled(
                    f"line search stalled at Newton step {iters + 1} "
                    f"(residual {rsup:.3g}); the class may be outside the solvable set",
                    state=result(False, iters, kry_total, history))
        phi = phi_t - phi_t.mean()
        c, f, G, min_margin = float(c_t), f_t, G_t, mm
        iters += 1
        log.debug("newton %d: step %.3g residual %.3e", iters, step,
                  float(np.max(np.abs(f - c))))


def c_of_class(spec, geometry, cls, options=None):
    """The constant ``c`` for which the class admits a solution."""
    return solve(spec, geometry, cls, options=options).c


def check_residual(result, cls, geometry):
    """Independent re-evaluation of ``sup |F(alpha_phi) - c|`` after a solve."""
    alpha = form_from_class(cls, result.phi, geometry=geometry)
    lam = np.linalg.eigvalsh(geometry.omega_isqrt @ alpha.values @ geometry.omega_isqrt)
    vals = result.spec.derivs(lam, order=0)[0]
    return float(np.max(np.abs(vals - result.c)))


def continuity_path(spec, geometry, class0, class1, steps, options=None):
    """Solve along ``A_t = (1 - t) A_0 + t A_1`` at ``steps`` equally spaced nodes.

    Each node is warm-started from the previous one. On failure a
    :class:`PathTruncated` carrying the completed prefix is raised.
    """
    if steps < 2:
        raise ValueError("a path needs at least 2 nodes")
    options = options or SolveOptions()
    ts = np.linspace(0.0, 1.0, steps)
    done = []
    for t in ts:
        cls_t = interpolate_classes(class0, class1, float(t))
        guess = (done[-1].phi, done[-1].c) if done else None
        try:
            try:
                r = solve(spec, geometry, cls_t, guess=guess, options=options)
            except NotAdmissibleInitialization:
                if guess is None:
                    raise
                r = solve(spec, geometry, cls_t, options=options)
        except SolverError as exc:
            raise PathTruncated(f"continuation failed at t={t:.6g}: {exc}", float(t),
                                list(done), cause=exc) from exc
        r.t = float(t)
        done.append(r)
    return done


class ConstantRHSSolver(BaseEstimator):
    """Estimator front-end to :func:`solve`.

    ``fit`` solves the equation in one class and stores ``c_``, ``phi_`` and
    ``result_``; ``predict`` maps a stack of class matrices to their constants.

    Parameters
    ----------
    operator : {"hessian", "hessian_quotient", "lagrangian_phase", "n_minus_one_hessian"}
    k, l : int, optional
        Operator indices (``k`` defaults to ``n``, ``l`` to ``k - 1``).
    threshold, transform_exponent : float, optional
        Lagrangian phase cone threshold and concavifying exponent.
    gridsize, mode, omega
        Torus geometry, see :class:`TorusGeometry`.
    tol_residual, max_newton, krylov_tol, admissibility_margin
        Solver options, see :class:`SolveOptions`.
    """

    def __init__(self, operator="hessian", k=None, l=None, threshold=None,
                 transform_exponent=None, gridsize=32, mode="reduced", omega=None,
                 tol_residual=1e-9, max_newton=50, krylov_tol=1e-10,
                 admissibility_margin=1e-8):
        self.operator = operator
        self.k = k
        self.l = l
        self.threshold = threshold
        self.transform_exponent = transform_exponent
        self.gridsize = gridsize
        self.mode = mode
        self.omega = omega
        self.tol_residual = tol_residual
        self.max_newton = max_newton
        self.krylov_tol = krylov_tol
        self.admissibility_margin = admissibility_margin

    def _setup(self, n):
        k = n if self.k is None else self.k
        desc = {"kind": self.operator, "k": k,
                "l": k - 1 if self.l is None else self.l,
                "threshold": self.threshold, "transform_exponent": self.transform_exponent}
        spec = ops.spec_from_dict(desc, n)
        geom = TorusGeometry(n, self.gridsize, self.omega, self.mode)
        opts = SolveOptions(tol_residual=self.tol_residual, max_newton=self.max_newton,
                            krylov_tol=self.krylov_tol,
                            admissibility_margin=self.admissibility_margin)
        return spec, geom, opts

    @staticmethod
    def _as_class(X):
        return X if isinstance(X, ClassSpec) else ClassSpec(X)

    def fit(self, X, y=None, base_potential=None):
        """Solve in the class ``X`` (a Hermitian matrix or :class:`ClassSpec`)."""
        cls = self._as_class(X)
        if base_potential is not None:
            cls = ClassSpec(cls.A, base_potential)
        self.spec_, self.geometry_, opts = self._setup(cls.n)
        if cls.base_potential is not None and cls.base_potential.geometry != self.geometry_:
            raise GeometryMismatch("base potential does not live on the solver grid")
        self.result_ = solve(self.spec_, self.geometry_, cls, options=opts)
        self.c_ = self.result_.c
        self.phi_ = self.result_.phi
        self.n_iter_ = self.result_.newton_iters
        return self

    def predict(self, X):
        """Constants ``c`` for a stack ``(m, n, n)`` or a list of classes."""
        if isinstance(X, ClassSpec):
            X = [X]
        elif not isinstance(X, (list, tuple)):
            X = np.asarray(X)
            if X.ndim == 2:
                X = X[None]
        classes = [self._as_class(x) for x in X]
        spec, geom, opts = self._setup(classes[0].n)
        return np.array([solve(spec, geom, c, options=opts).c for c in classes])
