"""Discrete calculus on the flat complex torus ``C^n / (Z^n + i Z^n)``.

Periodic potentials are sampled on a uniform grid with unit periods, so grid
averages are integrals against the normalized volume. Complex Hessians are
computed spectrally. Products of fields (mixed discriminants) are exact in
the mean as long as the factors are resolved by the grid; see
:func:`wedge_integral`.
"""

import csv
from functools import cached_property
from itertools import combinations
from math import factorial

import numpy as np

from .exceptions import GeometryMismatch, NonPositiveMetric, WrongArity
from .validation import check_hermitian, check_hermitian_stack, check_metric, inverse_sqrt

REDUCED = "reduced"
FULL = "full"


class TorusGeometry:
    """Grid, background metric and spectral symbols of a flat torus.

    Parameters
    ----------
    n : int
        Complex dimension.
    gridsize : int
        Points per real axis, a power of two and at least 4.
    omega : array_like, optional
        Constant positive-definite Hermitian metric; identity by default.
    mode : {"reduced", "full"}
        ``"reduced"`` samples fields depending on ``x_1..x_n`` only;
        ``"full"`` samples all ``2n`` real coordinates (``n <= 2``).
    """

    def __init__(self, n, gridsize=32, omega=None, mode=REDUCED):
        n, gridsize = int(n), int(gridsize)
        if n < 1:
            raise ValueError("n must be >= 1")
        if gridsize < 4 or gridsize & (gridsize - 1):
            raise ValueError(f"gridsize must be a power of two >= 4, got {gridsize}")
        if mode not in (REDUCED, FULL):
            raise ValueError(f"mode must be 'reduced' or 'full', got {mode!r}")
        if mode == FULL and n > 2:
            raise ValueError("full mode is limited to n <= 2")
        omega = np.eye(n, dtype=complex) if omega is None else check_metric(omega, n=n)
        omega.setflags(write=False)
        self.n = n
        self.gridsize = gridsize
        self.mode = mode
        self.omega = omega

    def __repr__(self):
        return f"TorusGeometry(n={self.n}, gridsize={self.gridsize}, mode={self.mode!r})"

    def _key(self):
        return (self.n, self.gridsize, self.mode, self.omega.tobytes())

    def __eq__(self, other):
        return isinstance(other, TorusGeometry) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def with_gridsize(self, gridsize):
        return TorusGeometry(self.n, gridsize, self.omega, self.mode)

    def summary(self):
        om = [[[float(z.real), float(z.imag)] for z in row] for row in self.omega]
        return {"n": self.n, "mode": self.mode, "gridsize": self.gridsize, "omega": om}

    @property
    def ndim(self):
        """Number of real grid axes."""
        return self.n if self.mode == REDUCED else 2 * self.n

    @property
    def shape(self):
        return (self.gridsize,) * self.ndim

    @cached_property
    def omega_isqrt(self):
        return inverse_sqrt(self.omega)

    @cached_property
    def volume(self):
        """``integral of omega^n`` with the normalization used throughout."""
        return factorial(self.n) * float(np.linalg.det(self.omega).real)

    def coordinates(self):
        """Coordinate arrays (x_1..x_n[, y_1..y_n]) broadcast to the grid."""
        ax = np.arange(self.gridsize) / self.gridsize
        return np.meshgrid(*([ax] * self.ndim), indexing="ij")

    def coordinate_names(self):
        names = [f"x{j + 1}" for j in range(self.n)]
        if self.mode == FULL:
            names += [f"y{j + 1}" for j in range(self.n)]
        return names

    # -- spectral machinery (real FFT over all grid axes) --------------------

    @cached_property
    def _wavenumbers(self):
        N, d = self.gridsize, self.ndim
        ks, kts = [], []
        for a in range(d):
            m = np.fft.rfftfreq(N, 1.0 / N) if a == d - 1 else np.fft.fftfreq(N, 1.0 / N)
            kt = np.where(np.abs(m) == N // 2, 0.0, m)
            shape = [1] * d
            shape[a] = m.size
            ks.append((2 * np.pi * m).reshape(shape))
            kts.append((2 * np.pi * kt).reshape(shape))
        return ks, kts

    def _second_symbol(self, a, b):
        # first-derivative factors drop the Nyquist mode so mixed derivatives of
        # real fields stay real; pure second derivatives keep it
        ks, kts = self._wavenumbers
        if a == b:
            return -ks[a] ** 2
        return -kts[a] * kts[b]

    @cached_property
    def hessian_symbols(self):
        """Real and imaginary symbol arrays of ``d_j d_{bar k}`` for ``j <= k``."""
        n = self.n
        full = self.mode == FULL
        sym = {}
        for j in range(n):
            for k in range(j, n):
                re = 0.25 * self._second_symbol(j, k)
                im = None
                if full:
                    re = re + 0.25 * self._second_symbol(n + j, n + k)
                    if j != k:
                        im = 0.25 * (self._second_symbol(j, n + k) - self._second_symbol(n + j, k))
                sym[j, k] = (np.broadcast_to(re, self.spectral_shape), im)
        return sym

    @property
    def spectral_shape(self):
        N = self.gridsize
        return (N,) * (self.ndim - 1) + (N // 2 + 1,)

    def fft(self, values):
        return np.fft.rfftn(values, axes=tuple(range(self.ndim)))

    def ifft(self, coeffs):
        return np.fft.irfftn(coeffs, s=self.shape, axes=tuple(range(self.ndim)))

    def hessian_from_coeffs(self, coeffs):
        """Complex Hessian matrix field from the real-FFT coefficients of a potential."""
        n = self.n
        out = np.empty(self.shape + (n, n), dtype=complex)
        for (j, k), (re, im) in self.hessian_symbols.items():
            entry = self.ifft(re * coeffs).astype(complex)
            if im is not None:
                entry = entry + 1j * self.ifft(im * coeffs)
            out[..., j, k] = entry
            if j != k:
                out[..., k, j] = entry.conj()
        return out

    def laplacian_symbol(self, G):
        """Fourier symbol of ``v -> trace(G complex_hessian(v))`` for constant Hermitian G."""
        total = np.zeros(self.spectral_shape)
        for (j, k), (re, im) in self.hessian_symbols.items():
            if j == k:
                total = total + G[j, j].real * re
            else:
                # G_jk H_kj + G_kj H_jk = 2 Re(G_jk conj(H_jk))
                total = total + 2 * G[j, k].real * re
                if im is not None:
                    total = total + 2 * G[j, k].imag * im
        return total


def _check_same(*geoms):
    g0 = geoms[0]
    for g in geoms[1:]:
        if g != g0:
            raise GeometryMismatch(f"geometry mismatch: {g0!r} vs {g!r}")
    return g0


class ScalarField:
    """Real periodic samples on a torus grid (immutable)."""

    def __init__(self, geometry, values):
        values = np.array(values, dtype=float)
        if values.shape != geometry.shape:
            raise GeometryMismatch(f"values shape {values.shape} != grid shape {geometry.shape}")
        values.setflags(write=False)
        self.geometry = geometry
        self.values = values

    def __repr__(self):
        return f"ScalarField({self.geometry!r}, mean={self.mean:.3g})"

    @property
    def mean(self):
        return float(self.values.mean())

    @classmethod
    def zeros(cls, geometry):
        return cls(geometry, np.zeros(geometry.shape))

    @classmethod
    def from_function(cls, geometry, fn):
        """Sample ``fn(*coordinates)`` on the grid."""
        return cls(geometry, np.broadcast_to(fn(*geometry.coordinates()), geometry.shape))

    @classmethod
    def from_fourier(cls, geometry, terms):
        """Trigonometric polynomial ``sum a cos(2 pi k.x) + b sin(2 pi k.x)``.

        ``terms`` is a list of mappings with keys ``k`` (integer vector, one
        entry per grid axis), ``cos`` and ``sin``.
        """
        coords = geometry.coordinates()
        values = np.zeros(geometry.shape)
        for term in terms:
            k = list(term["k"])
            if len(k) != geometry.ndim:
                raise ValueError(f"wave vector {k} needs {geometry.ndim} entries")
            if max(abs(int(m)) for m in k) >= geometry.gridsize // 2:
                raise ValueError(f"wave vector {k} is not resolved by gridsize {geometry.gridsize}")
            phase = 2 * np.pi * sum(int(m) * x for m, x in zip(k, coords))
            values = values + float(term.get("cos", 0.0)) * np.cos(phase)
            values = values + float(term.get("sin", 0.0)) * np.sin(phase)
        return cls(geometry, values)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            _check_same(self.geometry, other.geometry)
            return ScalarField(self.geometry, self.values + other.values)
        return ScalarField(self.geometry, self.values + other)

    __radd__ = __add__

    def __neg__(self):
        return ScalarField(self.geometry, -self.values)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        return ScalarField(self.geometry, self.values * float(s))

    __rmul__ = __mul__

    def mean_zero(self):
        return ScalarField(self.geometry, self.values - self.values.mean())

    def resample(self, gridsize):
        """Spectral interpolation onto another grid (band-limited fields)."""
        geom = self.geometry.with_gridsize(gridsize)
        return ScalarField(geom, resample(self.values, gridsize))


class FormField:
    """A Hermitian-matrix valued (1,1)-form sampled on the grid (immutable)."""

    def __init__(self, geometry, values):
        values = check_hermitian_stack(values, n=geometry.n, name="form values")
        if values.shape[:-2] != geometry.shape:
            raise GeometryMismatch(f"values grid {values.shape[:-2]} != {geometry.shape}")
        values.setflags(write=False)
        self.geometry = geometry
        self.values = values

    def __repr__(self):
        return f"FormField({self.geometry!r})"

    @classmethod
    def constant(cls, geometry, A):
        A = check_hermitian(A, n=geometry.n, name="A")
        return cls(geometry, np.broadcast_to(A, geometry.shape + A.shape).copy())

    def mean(self):
        """Entrywise grid mean (the integral against the normalized volume)."""
        return self.values.reshape(-1, self.geometry.n, self.geometry.n).mean(axis=0)

    def __add__(self, other):
        if isinstance(other, FormField):
            _check_same(self.geometry, other.geometry)
            return FormField(self.geometry, self.values + other.values)
        return FormField(self.geometry, self.values + np.asarray(other))

    def __mul__(self, s):
        return FormField(self.geometry, self.values * float(s))

    __rmul__ = __mul__


class ClassSpec:
    """A Bott-Chern class on the torus.

    ``A`` is the constant (harmonic) representative; ``base_potential`` an
    optional potential ``psi0`` so that the reference form is
    ``A + ddbar(psi0)``. Classes compare by ``A`` alone.
    """

    def __init__(self, A, base_potential=None):
        A = check_hermitian(A, name="class matrix")
        A.setflags(write=False)
        if base_potential is not None and base_potential.geometry.n != A.shape[0]:
            raise GeometryMismatch("base potential dimension differs from the class")
        self.A = A
        self.base_potential = base_potential

    @property
    def n(self):
        return self.A.shape[0]

    def __repr__(self):
        bp = "" if self.base_potential is None else ", base_potential=..."
        return f"ClassSpec({np.round(self.A, 6).tolist()}{bp})"

    def same_class(self, other):
        return np.array_equal(self.A, other.A)

    def __add__(self, other):
        return combine_classes([(1.0, self), (1.0, other)])

    def __mul__(self, s):
        return combine_classes([(s, self)])

    __rmul__ = __mul__


def combine_classes(terms):
    """Linear combination ``sum s_i * class_i`` of classes and their potentials."""
    A = sum(float(s) * c.A for s, c in terms)
    pots = [(float(s), c.base_potential) for s, c in terms if c.base_potential is not None]
    psi = None
    if pots:
        geom = _check_same(*[p.geometry for _, p in pots])
        psi = ScalarField(geom, sum(s * p.values for s, p in pots))
    return ClassSpec(A, psi)


def interpolate_classes(c0, c1, t):
    return combine_classes([(1.0 - t, c0), (t, c1)])


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def complex_hessian(phi):
    """Spectral complex Hessian ``d_j d_{bar k} phi`` of a scalar field."""
    geom = phi.geometry
    return FormField(geom, geom.hessian_from_coeffs(geom.fft(phi.values)))


def form_from_class(cls, phi=None, geometry=None):
    """The form ``A + ddbar(psi0 + phi)`` representing ``cls``."""
    geoms = [f.geometry for f in (cls.base_potential, phi) if f is not None]
    if geometry is not None:
        geoms.append(geometry)
    if not geoms:
        raise GeometryMismatch("a geometry is needed when neither potential is given")
    geom = _check_same(*geoms)
    if geom.n != cls.n:
        raise GeometryMismatch(f"class dimension {cls.n} != geometry dimension {geom.n}")
    total = np.zeros(geom.shape)
    for f in (cls.base_potential, phi):
        if f is not None:
            total = total + f.values
    H = geom.hessian_from_coeffs(geom.fft(total))
    return FormField(geom, H + cls.A)


def polarized_determinants(mats):
    """``sum_S (-1)^(n-|S|) det(sum_{i in S} A_i)`` over nonempty subsets, batched.

    Equals ``n! * D(A_1, ..., A_n)`` where ``D`` is the mixed discriminant with
    ``D(A, ..., A) = det A``.
    """
    n = len(mats)
    total = 0.0
    for r in range(1, n + 1):
        sign = (-1) ** (n - r)
        for S in combinations(range(n), r):
            M = mats[S[0]]
            for i in S[1:]:
                M = M + mats[i]
            total = total + sign * np.linalg.det(M).real
    return total


def mixed_discriminant(mats):
    """Mixed discriminant of ``n`` Hermitian ``n x n`` matrices (or stacks)."""
    mats = [np.asarray(m, dtype=complex) for m in mats]
    n = mats[0].shape[-1]
    if len(mats) != n:
        raise WrongArity(f"need exactly {n} matrices, got {len(mats)}")
    return polarized_determinants(mats) / factorial(n)


def wedge_integral(fields, dealias=False):
    """``integral of alpha_1 ^ ... ^ alpha_n`` for (1,1)-form fields.

    Computed as ``n!`` times the grid mean of the pointwise mixed discriminant.
    The mean is exact when the product of the fields is resolved by the grid;
    with ``dealias=True`` the fields are first interpolated onto a grid of
    ``n * N / 2`` points per axis, which makes it exact for any fields whose
    Nyquist modes vanish.
    """
    fields = list(fields)
    if not fields:
        raise WrongArity("need at least one field")
    geom = _check_same(*[f.geometry for f in fields])
    if len(fields) != geom.n:
        raise WrongArity(f"need exactly {geom.n} fields, got {len(fields)}")
    mats = [f.values for f in fields]
    M = geom.n * geom.gridsize // 2
    if dealias and M > geom.gridsize:
        mats = [_resample_matrix_field(m, geom, M) for m in mats]
    return float(np.mean(polarized_determinants(mats)))


def intersection_number(classes, geometry=None):
    """Intersection number of ``n`` classes, from their constant representatives.

    Base potentials do not enter: on the torus they change the representative
    but not the class.
    """
    mats = [c.A if isinstance(c, ClassSpec) else check_hermitian(c) for c in classes]
    n = mats[0].shape[0]
    if geometry is not None and geometry.n != n:
        raise GeometryMismatch("class dimension differs from geometry")
    if len(mats) != n:
        raise WrongArity(f"need exactly {n} classes, got {len(mats)}")
    return float(polarized_determinants(mats))


def eigenfield(alpha, geometry=None):
    """Pointwise eigenvalues of ``alpha`` relative to the metric, shape ``grid + (n,)``."""
    geom = alpha.geometry if geometry is None else _check_same(alpha.geometry, geometry)
    if np.linalg.eigvalsh(geom.omega)[0] <= 1e-10:
        raise NonPositiveMetric("metric is not positive definite")
    W = geom.omega_isqrt
    return np.linalg.eigvalsh(W @ alpha.values @ W)


# ---------------------------------------------------------------------------
# resampling and export
# ---------------------------------------------------------------------------


def resample(values, M):
    """Band-limited interpolation of periodic samples onto ``M`` points per axis.

    The Nyquist mode of the source grid is discarded.
    """
    values = np.asarray(values)
    N = values.shape[0]
    d = values.ndim
    if M == N:
        return values.copy()
    coeffs = np.fft.fftn(values)
    K = min(N, M) // 2
    keep = np.r_[0:K, -K + 1:0]
    src = np.ix_(*([np.mod(keep, N)] * d))
    dst = np.ix_(*([np.mod(keep, M)] * d))
    out = np.zeros((M,) * d, dtype=complex)
    out[dst] = coeffs[src]
    res = np.fft.ifftn(out) * (M / N) ** d
    return res.real if np.isrealobj(values) else res


def _resample_matrix_field(vals, geom, M):
    n = geom.n
    out = np.empty((M,) * geom.ndim + (n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            out[..., j, k] = resample(vals[..., j, k], M)
    return out


def field_to_csv(field, fh):
    """Write a field snapshot as CSV: grid coordinates, then values.

    Scalar fields get a ``value`` column; form fields get ``re_jk`` and
    ``im_jk`` columns for ``j <= k`` (1-based).
    """
    geom = field.geometry
    coords = [c.ravel() for c in geom.coordinates()]
    header = geom.coordinate_names()
    if isinstance(field, ScalarField):
        header.append("value")
        cols = [field.values.ravel()]
    else:
        cols = []
        for j in range(geom.n):
            for k in range(j, geom.n):
                header += [f"re_{j + 1}{k + 1}", f"im_{j + 1}{k + 1}"]
                entry = field.values[..., j, k].ravel()
                cols += [entry.real, entry.imag]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*coords, *cols):
        writer.writerow([f"{v:.17g}" for v in row])
