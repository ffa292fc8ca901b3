"""Experiment runners behind the command line.

Each runner takes an :class:`ExperimentConfig` and returns a report object
with ``to_dict()`` (the JSON summary), ``csv_header`` / ``csv_rows()`` (the
data file) and ``passed``. Nothing here writes files; :mod:`.cli` does.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import pi
from typing import Optional

import numpy as np

from . import cohomology as coh
from . import operators as ops
from .exceptions import ConcaveEllipticError, NotAdmissible, PathTruncated, SolverError
from .solver import SolveOptions, check_residual, continuity_path, solve
from .torus import ClassSpec, ScalarField, TorusGeometry, interpolate_classes

EXPERIMENTS = ("solve", "concavity", "kt-suite", "identity-check", "validate")
VIOLATION_TOL = 1e-9
EQUALITY_TOL = 1e-10

CONFIG_HELP = """\
JSON config fields:
  experiment   one of solve, concavity, kt-suite, identity-check, validate
  spec         {"kind": "hessian", "k": 2}
               {"kind": "hessian_quotient", "k": 2, "l": 1}
               {"kind": "lagrangian_phase", "threshold": null, "transform_exponent": null}
               {"kind": "n_minus_one_hessian", "k": 2}
  geometry     {"n": 2, "mode": "reduced", "gridsize": 32, "omega": [[1, 0], [0, 1]]}
  classes      list of {"A": matrix, "base_potential": [{"k": [1, 0], "cos": 0.1, "sin": 0.0}]}
               (a bare matrix is also accepted; complex entries as [re, im])
  t_samples    nodes on a concavity segment / number of random pairs (default 11)
  seed         integer seed for every random draw (default 0)
  tolerances   overrides of tol_residual, max_newton, damping, min_step,
               krylov_tol, krylov_maxiter, admissibility_margin
  n_jobs       worker threads for independent cases (default 1)
"""


class ConfigError(ConcaveEllipticError, ValueError):
    """Malformed or inconsistent experiment configuration."""


def _parse_matrix(raw, n):
    try:
        rows = [[complex(*e) if isinstance(e, (list, tuple)) else complex(e) for e in row]
                for row in raw]
        A = np.array(rows, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse matrix {raw!r}: {exc}") from exc
    if A.shape != (n, n):
        raise ConfigError(f"matrix must be {n}x{n}, got shape {A.shape}")
    if np.max(np.abs(A - A.conj().T)) > 1e-12:
        raise ConfigError(f"matrix {raw!r} is not Hermitian")
    return A


@dataclass
class ExperimentConfig:
    experiment: str
    spec: dict
    geometry: dict
    classes: list = field(default_factory=list)
    t_samples: int = 11
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    n_jobs: int = 1

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"experiment", "spec", "geometry", "classes", "t_samples", "seed",
                            "tolerances", "n_jobs"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        exp = d.get("experiment")
        if exp == "kt-check":
            exp = "kt-suite"
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        geom = d.get("geometry")
        if not isinstance(geom, dict) or "n" not in geom:
            raise ConfigError("geometry must be an object with at least 'n'")
        spec = d.get("spec", {"kind": "hessian"})
        if not isinstance(spec, dict):
            raise ConfigError("spec must be an object")
        cfg = cls(exp, spec, geom, list(d.get("classes", [])), int(d.get("t_samples", 11)),
                  int(d.get("seed", 0)), dict(d.get("tolerances", {})), int(d.get("n_jobs", 1)))
        cfg.build_geometry()
        cfg.build_spec()
        cfg.options()
        if cfg.experiment == "concavity":
            if len(cfg.classes) != 2:
                raise ConfigError("concavity needs exactly 2 classes")
            if cfg.t_samples < 3:
                raise ConfigError("concavity needs t_samples >= 3")
        if cfg.experiment == "solve" and not cfg.classes:
            raise ConfigError("solve needs at least one class")
        return cfg

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def build_geometry(self):
        g = self.geometry
        try:
            n = int(g["n"])
            omega = None if g.get("omega") is None else _parse_matrix(g["omega"], n)
            return TorusGeometry(n, int(g.get("gridsize", 32)), omega, g.get("mode", "reduced"))
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad geometry: {exc}") from exc

    def build_spec(self):
        try:
            return ops.spec_from_dict(self.spec, int(self.geometry["n"]))
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"bad spec {self.spec!r}: {exc}") from exc

    def options(self):
        allowed = set(SolveOptions.__dataclass_fields__)
        bad = set(self.tolerances) - allowed
        if bad:
            raise ConfigError(f"unknown tolerances {sorted(bad)}")
        try:
            return SolveOptions(**self.tolerances)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad tolerances: {exc}") from exc

    def build_classes(self, geometry=None):
        geometry = geometry or self.build_geometry()
        out = []
        for raw in self.classes:
            if isinstance(raw, dict):
                A = _parse_matrix(raw.get("A"), geometry.n)
                terms = raw.get("base_potential") or []
                try:
                    psi = ScalarField.from_fourier(geometry, terms) if terms else None
                except (KeyError, ValueError, TypeError) as exc:
                    raise ConfigError(f"bad base potential: {exc}") from exc
            else:
                A, psi = _parse_matrix(raw, geometry.n), None
            out.append(ClassSpec(A, psi))
        return out


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def format_csv(header, rows):
    """CSV text with LF line endings and 17 significant digits."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# random classes
# ---------------------------------------------------------------------------


def random_hermitian(rng, n):
    """Hermitian matrix with real and imaginary parts of entries uniform in [-1, 1]."""
    X = rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))
    return 0.5 * (X + X.conj().T)


def random_admissible_matrix(rng, n, cone, omega=None, shift=(0.0, 3.0), min_margin=1e-3,
                             max_tries=10000):
    """Rejection sampling of ``H + s I`` until the eigenvalues lie in ``cone``."""
    omega = np.eye(n) if omega is None else omega
    for _ in range(max_tries):
        A = random_hermitian(rng, n) + rng.uniform(*shift) * np.eye(n)
        test = ops.in_cone(cone, ops.eigenvalues(A, omega))
        if test.inside and test.margin > min_margin:
            return A
    raise RuntimeError(f"no admissible sample for {cone!r} after {max_tries} tries")


def random_potential(rng, geometry, modes=2, amplitude=0.02):
    """Random band-limited trigonometric potential with low wave numbers."""
    terms = []
    for _ in range(modes):
        k = rng.integers(-2, 3, geometry.ndim)
        if not k.any():
            k[0] = 1
        terms.append({"k": k.tolist(), "cos": amplitude * rng.uniform(-1, 1),
                      "sin": amplitude * rng.uniform(-1, 1)})
    return ScalarField.from_fourier(geometry, terms)


def admissible_potential(rng, geometry, spec, A, amplitude=0.05, modes=2, floor=1e-3):
    """Random potential, shrunk until ``A + ddbar(psi)`` is admissible everywhere."""
    psi = random_potential(rng, geometry, modes, amplitude)
    for _ in range(30):
        alpha = A + geometry.hessian_from_coeffs(geometry.fft(psi.values))
        _, margin, _ = ops.operator_field(spec, alpha, geometry.omega_isqrt, order=0)
        if np.min(margin) > floor:
            return psi
        psi = psi * 0.5
    return ScalarField.zeros(geometry)


# ---------------------------------------------------------------------------
# concavity
# ---------------------------------------------------------------------------


@dataclass
class ConcavityReport:
    t_grid: list
    c_values: list
    second_differences: list
    max_second_difference: float
    all_converged: bool
    eps_disc: float
    spec: dict
    prediction_max_error: Optional[float] = None
    truncated_at: Optional[float] = None
    message: str = ""

    csv_header = ("t", "c", "second_diff")

    @property
    def passed(self):
        return self.all_converged and self.max_second_difference <= self.eps_disc

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def csv_rows(self):
        sd = [None] + list(self.second_differences) + [None]
        for i, t in enumerate(self.t_grid):
            c = self.c_values[i] if i < len(self.c_values) else None
            yield (t, c, sd[i] if i < len(sd) else None)

    def to_dict(self):
        return {
            "experiment": "concavity",
            "spec": self.spec,
            "t_grid": self.t_grid,
            "c_values": self.c_values,
            "second_differences": self.second_differences,
            "max_second_difference": self.max_second_difference,
            "eps_disc": self.eps_disc,
            "all_converged": self.all_converged,
            "prediction_max_error": self.prediction_max_error,
            "truncated_at": self.truncated_at,
            "message": self.message,
            "verdict": self.verdict,
        }


def second_differences(c_values, t_step):
    c = np.asarray(c_values, dtype=float)
    return ((c[:-2] - 2 * c[1:-1] + c[2:]) / t_step**2).tolist()


def concavity_along(spec, geometry, cls0, cls1, t_samples, options):
    """Sample ``c`` along a class segment and build a :class:`ConcavityReport`."""
    t_grid = np.linspace(0.0, 1.0, t_samples)
    t_step = float(t_grid[1] - t_grid[0])
    eps = 10 * options.tol_residual / t_step**2 + 1e-9
    truncated, message = None, ""
    try:
        path = continuity_path(spec, geometry, cls0, cls1, t_samples, options)
    except PathTruncated as exc:
        path, truncated, message = exc.completed, exc.t_fail, str(exc)
    cs = [r.c for r in path]
    sds = second_differences(cs, t_step) if len(cs) >= 3 else []
    pred_err = None
    try:
        errs = [abs(r.c - coh.predict(spec, interpolate_classes(cls0, cls1, t), geometry).value_c)
                for r, t in zip(path, t_grid)]
        pred_err = max(errs) if errs else None
    except ConcaveEllipticError:
        pred_err = None
    return ConcavityReport(
        t_grid=t_grid.tolist(), c_values=cs, second_differences=sds,
        max_second_difference=max(sds) if sds else float("inf"),
        all_converged=truncated is None and all(r.converged for r in path),
        eps_disc=eps, spec=spec.to_dict(), prediction_max_error=pred_err,
        truncated_at=truncated, message=message)


def run_concavity(config):
    geometry = config.build_geometry()
    spec = config.build_spec()
    c0, c1 = config.build_classes(geometry)
    return concavity_along(spec, geometry, c0, c1, config.t_samples, config.options())


# ---------------------------------------------------------------------------
# Khovanskii-Teissier suite
# ---------------------------------------------------------------------------


@dataclass
class KTReport:
    rows: list
    n_pairs: int
    k: int
    l: int
    seed: int

    csv_header = ("pair_id", "ineq", "gap", "is_equality_case")

    @property
    def violations(self):
        return [r for r in self.rows if r[2] < -VIOLATION_TOL]

    @property
    def passed(self):
        return not self.violations

    def csv_rows(self):
        return list(self.rows)

    def to_dict(self):
        by = {}
        for pid, ineq, gap, eq in self.rows:
            d = by.setdefault(ineq, {"count": 0, "min_gap": float("inf"), "violations": 0,
                                     "equality_cases": 0})
            d["count"] += 1
            d["min_gap"] = min(d["min_gap"], gap)
            d["violations"] += int(gap < -VIOLATION_TOL)
            d["equality_cases"] += int(eq)
        return {"experiment": "kt-suite", "n_pairs": self.n_pairs, "k": self.k, "l": self.l,
                "seed": self.seed, "violation_tol": VIOLATION_TOL, "inequalities": by,
                "violations": len(self.violations),
                "verdict": "pass" if self.passed else "fail"}


def proportionality_residual(A, B):
    """``|B - t* A| / |B|`` for the least-squares multiple ``t*``."""
    nb = np.linalg.norm(B)
    if nb == 0:
        return 0.0
    t = np.vdot(A, B).real / np.vdot(A, A).real
    return float(np.linalg.norm(B - t * A) / nb)


def pair_gaps(geometry, A, B, k, l, t_step=1e-2):
    """Gap rows (ineq, gap, is_equality_case) for one class pair."""
    rows = []
    proportional = proportionality_residual(A, B) < 1e-9
    if k >= 2:
        rows.append(("kt_hessian", coh.kt_hessian_gap(geometry, A, B, k), proportional))
    if np.linalg.eigvalsh(A)[0] > 0 and np.linalg.eigvalsh(B)[0] > 0:
        rows.append(("brunn_minkowski", coh.brunn_minkowski_gap(geometry, A, B), proportional))
    step = t_step
    for _ in range(20):
        try:
            rows.append(("quotient_convexity",
                         coh.quotient_convexity_gap(geometry, A, B, k, l, step), False))
            break
        except NotAdmissible:
            step /= 2
    return rows


def run_kt_suite(config):
    """Random admissible pairs plus the config's explicit pairs, all gaps tabulated."""
    geometry = config.build_geometry()
    spec = config.build_spec()
    n = geometry.n
    if isinstance(spec, ops.HessianQuotient):
        k, l = spec.k, spec.l
    elif isinstance(spec, ops.Hessian):
        k, l = spec.k, max(spec.k - 1, 0)
    else:
        raise ConfigError("kt-suite needs a hessian or hessian_quotient spec")
    if k < 2 or l < 1:
        raise ConfigError("kt-suite needs k >= 2")
    explicit = config.build_classes(geometry)
    for i, c in enumerate(explicit):
        test = ops.in_cone(ops.GammaK(k), ops.eigenvalues(c.A, geometry.omega))
        if not test.inside:
            raise NotAdmissible(
                f"class {i} is not admissible for Gamma_{k}: {test.failing} = "
                f"{test.values[int(test.failing.split('_')[1]) - 1]:.6g} fails",
                failing=test.failing, margin=test.margin)
    if len(explicit) % 2:
        raise ConfigError("kt-suite classes must come in pairs")
    rng = np.random.default_rng(config.seed)
    pairs = [(explicit[i].A, explicit[i + 1].A) for i in range(0, len(explicit), 2)]
    for _ in range(config.t_samples):
        A = random_admissible_matrix(rng, n, ops.GammaK(k), geometry.omega)
        B = random_admissible_matrix(rng, n, ops.GammaK(k), geometry.omega)
        pairs.append((A, B))

    def work(pair):
        return pair_gaps(geometry, pair[0], pair[1], k, l)

    results = _map(work, pairs, config.n_jobs)
    rows = [(pid, ineq, gap, eq) for pid, res in enumerate(results) for ineq, gap, eq in res]
    return KTReport(rows, len(pairs), k, l, config.seed)


def _map(fn, items, n_jobs):
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# identity check
# ---------------------------------------------------------------------------


@dataclass
class IdentityReport:
    rows: list
    tol: float = 1e-8

    csv_header = ("class_id", "identity_gap", "z_re", "z_im", "arg_pv", "predicted_c",
                  "solver_c", "abs_error")

    @property
    def passed(self):
        for r in self.rows:
            if r["identity_gap"] > self.tol:
                return False
            if r["abs_error"] is not None and r["abs_error"] > r["error_tol"]:
                return False
        return True

    def csv_rows(self):
        for r in self.rows:
            yield tuple(r[h] for h in self.csv_header)

    def to_dict(self):
        return {"experiment": "identity-check", "identity_tol": self.tol, "cases": self.rows,
                "verdict": "pass" if self.passed else "fail"}


def run_identity(config):
    """dHYM identity gap per class, and solver phase vs predicted phase."""
    geometry = config.build_geometry()
    spec = config.build_spec()
    opts = config.options()
    rows = []
    for i, cls in enumerate(config.build_classes(geometry)):
        Z = coh.z_functional(cls, geometry)
        a = coh.arg_pv(Z)
        pred = (geometry.n - 2) * pi / 2 + a
        row = {"class_id": i, "identity_gap": coh.dhym_identity_gap(geometry, cls),
               "z_re": Z.real, "z_im": Z.imag, "arg_pv": a, "predicted_c": pred,
               "solver_c": None, "abs_error": None,
               "error_tol": 1e-8 if cls.base_potential is None else 1e-5}
        if isinstance(spec, ops.LagrangianPhase) and spec.transform_exponent is None:
            test = ops.in_cone(spec.cone, ops.eigenvalues(cls.A, geometry.omega))
            if test.inside:
                try:
                    r = solve(spec, geometry, cls, options=opts)
                    row["solver_c"] = r.c
                    row["abs_error"] = abs(r.c - pred)
                except SolverError as exc:
                    row["solver_error"] = str(exc)
                    row["abs_error"] = float("inf")
        rows.append(row)
    return IdentityReport(rows)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


@dataclass
class SolveReport:
    result: object
    independent_residual: float
    cls: object

    @property
    def passed(self):
        return self.result.converged

    def to_dict(self):
        d = self.result.to_dict()
        d["experiment"] = "solve"
        d["independent_residual"] = self.independent_residual
        return d


def run_solve(config):
    geometry = config.build_geometry()
    spec = config.build_spec()
    cls = config.build_classes(geometry)[0]
    r = solve(spec, geometry, cls, options=config.options())
    return SolveReport(r, check_residual(r, cls, geometry), cls)


# ---------------------------------------------------------------------------
# validation suite
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    cases: list

    @property
    def passed(self):
        return all(c["passed"] for c in self.cases)

    csv_header = ("case", "passed", "value", "tolerance")

    def csv_rows(self):
        for c in self.cases:
            yield (c["case"], bool(c["passed"]), c["value"], c["tolerance"])

    def to_dict(self):
        return {"experiment": "validate", "cases": self.cases,
                "verdict": "pass" if self.passed else "fail"}


def _case(name, value, tol, passed=None, **details):
    ok = bool(value <= tol) if passed is None else bool(passed)
    return {"case": name, "passed": ok, "value": float(value), "tolerance": float(tol), **details}


def _guarded(name, fn):
    try:
        return fn()
    except ConcaveEllipticError as exc:
        return {"case": name, "passed": False, "value": float("inf"), "tolerance": 0.0,
                "error": f"{type(exc).__name__}: {exc}"}


def default_nonconstant_class(geometry):
    """``2 I`` with base potential ``0.1 sin(2 pi x1) + 0.05 cos(2 pi x2)``."""
    n = geometry.n
    terms = [{"k": [1] + [0] * (geometry.ndim - 1), "sin": 0.1}]
    if n >= 2:
        terms.append({"k": [0, 1] + [0] * (geometry.ndim - 2), "cos": 0.05})
    return ClassSpec(2.0 * np.eye(n), ScalarField.from_fourier(geometry, terms))


def validate_uniqueness(spec, geometry, cls, options, starts=10, seed=0, n_jobs=1):
    """Solve from several random admissible initializations; report the spread."""
    rng = np.random.default_rng(seed)
    base = cls.A + (0 if cls.base_potential is None else
                    geometry.hessian_from_coeffs(geometry.fft(cls.base_potential.values)))
    f0 = float(np.mean(ops.operator_field(spec, base, geometry.omega_isqrt, order=0)[0]))
    guesses = []
    for _ in range(starts):
        for _ in range(30):
            phi = random_potential(rng, geometry, modes=3, amplitude=0.02)
            alpha = base + geometry.hessian_from_coeffs(geometry.fft(phi.values))
            _, margin, _ = ops.operator_field(spec, alpha, geometry.omega_isqrt, order=0)
            if np.min(margin) > 10 * options.admissibility_margin:
                break
        guesses.append((phi, f0 + rng.uniform(-0.1, 0.1)))
    results = _map(lambda g: solve(spec, geometry, cls, guess=g, options=options), guesses,
                   n_jobs)
    cs = np.array([r.c for r in results])
    phis = np.array([r.phi.values for r in results])
    return results, float(cs.max() - cs.min()), float(np.max(phis.max(0) - phis.min(0)))


def run_validation(config):
    """Regression suite: manufactured solutions, uniqueness, grid halving, predictions."""
    geometry = config.build_geometry()
    opts = config.options()
    n = geometry.n
    hess = ops.Hessian(n, n)
    spec = config.build_spec()
    solver_spec = spec
    try:
        coh.predict(spec, ClassSpec(np.eye(n)), geometry)
    except ConcaveEllipticError:
        solver_spec = hess
    tol = opts.tol_residual
    cases = []

    def constant_case():
        r = solve(hess, geometry, ClassSpec(2.0 * np.eye(n)), options=opts)
        return _case("constant_class", abs(r.c - 2.0), 1e-12,
                     passed=abs(r.c - 2.0) <= 1e-12 and r.newton_iters <= 1,
                     newton_iters=r.newton_iters)

    def manufactured_case():
        psi = ScalarField.from_fourier(geometry, [{"k": [1] + [0] * (geometry.ndim - 1),
                                                   "sin": 0.1}])
        cls = ClassSpec(2.0 * np.eye(n), psi)
        r = solve(hess, geometry, cls, options=opts)
        phi_err = float(np.max(np.abs(r.phi.values + psi.values - psi.mean)))
        err = abs(r.c - 2.0)
        return _case("manufactured_hessian", err, 1e-7, passed=err <= 1e-7 and phi_err <= 1e-6,
                     potential_error=phi_err, residual_sup=r.residual_sup)

    def uniqueness_case():
        cls = default_nonconstant_class(geometry)
        results, dc, dphi = validate_uniqueness(solver_spec, geometry, cls, opts, 10,
                                                config.seed, config.n_jobs)
        ok = dc <= 2 * tol and dphi <= 1e-6 and all(r.converged for r in results)
        return _case("uniqueness_multistart", dc, 2 * tol, passed=ok, phi_spread=dphi,
                     max_residual=max(r.residual_sup for r in results),
                     spec=solver_spec.to_dict())

    def grid_case():
        fine = geometry if geometry.gridsize >= 16 else geometry.with_gridsize(16)
        coarse = fine.with_gridsize(fine.gridsize // 2)
        cs = []
        for g in (fine, coarse):
            cs.append(solve(solver_spec, g, default_nonconstant_class(g), options=opts).c)
        diff = abs(cs[0] - cs[1])
        return _case("grid_halving", diff, 1e-8, c_fine=cs[0], c_coarse=cs[1],
                     gridsizes=[fine.gridsize, coarse.gridsize])

    cases.append(_guarded("constant_class", constant_case))
    cases.append(_guarded("manufactured_hessian", manufactured_case))
    cases.append(_guarded("uniqueness_multistart", uniqueness_case))
    cases.append(_guarded("grid_halving", grid_case))

    classes = config.build_classes(geometry) or [ClassSpec(2.0 * np.eye(n)),
                                                 default_nonconstant_class(geometry)]
    for i, cls in enumerate(classes):
        def pred_case(cls=cls, i=i):
            r = solve(solver_spec, geometry, cls, options=opts)
            p = coh.predict(solver_spec, cls, geometry).value_c
            lim = 1e-7 if cls.base_potential is None else 1e-5
            return _case(f"prediction_class_{i}", abs(r.c - p), lim, solver_c=r.c,
                         predicted_c=p)
        cases.append(_guarded(f"prediction_class_{i}", pred_case))
    return ValidationReport(cases)


RUNNERS = {
    "solve": run_solve,
    "concavity": run_concavity,
    "kt-suite": run_kt_suite,
    "identity-check": run_identity,
    "validate": run_validation,
}
