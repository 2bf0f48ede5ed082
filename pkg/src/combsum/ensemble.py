"""Entry distributions with closed-form moments, and centered matrix ensembles.

Every entry of the random matrix is one of four families whose moments,
m.g.f. and exponential tilt are available in closed form:

* ``PointMass(c)``
* ``FiniteDiscrete(atoms)`` with ``atoms = ((value, prob), ...)``
* ``SignedExponential(rate, sign)``, i.e. ``sign * Exp(rate)``
* ``SignedGamma(shape, rate, sign)``, i.e. ``sign * Gamma(shape, rate)``

A :class:`MatrixEnsemble` stores an ``n x n`` grid of such laws compactly as a
palette of distinct distributions plus an integer index grid.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import CenteringError, RangeError, TiltDomainError

MAX_MOMENT_ORDER = 170
CENTERING_TOL = 1e-10
PROB_SUM_TOL = 1e-12
_LOG_DBL_MAX = math.log(np.finfo(float).max)


def _check_order(k, lowest=0):
    if int(k) != k or k < lowest:
        raise ValueError(f"moment order must be an integer >= {lowest}, got {k}")
    if k > MAX_MOMENT_ORDER:
        raise RangeError(f"moment order {k} exceeds the factorial guard {MAX_MOMENT_ORDER}")
    return int(k)


def _signed_exp(sign, log_value):
    if log_value > _LOG_DBL_MAX:
        raise RangeError(f"moment magnitude exp({log_value:.1f}) overflows double precision")
    return sign * math.exp(log_value)


def _check_sign(sign):
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    return int(sign)


class _Entry:
    """Shared behaviour of the entry families; subclasses fill in the closed forms."""

    bounded = True

    def raw_moment(self, k):
        k = _check_order(k)
        sign, log_value = self.log_abs_raw_moment(k)
        if sign == 0:
            return 0.0
        return _signed_exp(sign, log_value)

    def abs_moment(self, k):
        k = _check_order(k, lowest=1)
        return _signed_exp(1, self.log_abs_moment(k))

    @property
    def mean(self):
        return self.raw_moment(1)

    @property
    def second_moment(self):
        return self.raw_moment(2)

    @property
    def variance(self):
        return self.second_moment - self.mean**2

    def mgf(self, z):
        return self.mgf_derivative(z, 0)


@dataclass(frozen=True)
class PointMass(_Entry):
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))

    @property
    def support_bound(self):
        return abs(self.c)

    @property
    def canonical_scale(self):
        return abs(self.c)

    def log_abs_raw_moment(self, k):
        if k == 0:
            return 1, 0.0
        if self.c == 0.0:
            return 0, -math.inf
        sign = 1 if (self.c > 0 or k % 2 == 0) else -1
        return sign, k * math.log(abs(self.c))

    def log_abs_moment(self, k):
        return (k * math.log(abs(self.c))) if self.c != 0.0 else -math.inf

    def mgf_derivative(self, z, order):
        return self.c**order * cmath.exp(z * self.c)

    def log_mgf_real(self, h):
        return h * self.c

    @property
    def variance(self):
        return 0.0

    def check_domain(self, z):
        pass

    def tilt(self, h):
        return self

    def scaled(self, lam):
        return PointMass(self.c * lam)

    def sample(self, rng, size):
        return np.full(size, self.c)

    def sum_of(self, rng, counts):
        return np.asarray(counts) * self.c

    def to_dict(self):
        return {"family": "point", "c": self.c}


@dataclass(frozen=True)
class FiniteDiscrete(_Entry):
    atoms: tuple

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        if not atoms:
            raise ValueError("FiniteDiscrete needs at least one atom")
        if any(p <= 0.0 for _, p in atoms):
            raise ValueError("FiniteDiscrete probabilities must be positive")
        total = math.fsum(p for _, p in atoms)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"FiniteDiscrete probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_arrays(cls, values, probs):
        return cls(tuple(zip(values, probs)))

    @cached_property
    def values(self):
        return np.array([v for v, _ in self.atoms])

    @cached_property
    def probs(self):
        return np.array([p for _, p in self.atoms])

    @property
    def support_bound(self):
        return float(np.max(np.abs(self.values)))

    @property
    def canonical_scale(self):
        return self.support_bound

    def log_abs_raw_moment(self, k):
        if k == 0:
            return 1, 0.0
        scale = self.support_bound
        if scale == 0.0:
            return 0, -math.inf
        s = math.fsum(p * (v / scale) ** k for v, p in self.atoms)
        if s == 0.0:
            return 0, -math.inf
        return (1 if s > 0 else -1), k * math.log(scale) + math.log(abs(s))

    def log_abs_moment(self, k):
        scale = self.support_bound
        if scale == 0.0:
            return -math.inf
        s = math.fsum(p * (abs(v) / scale) ** k for v, p in self.atoms)
        return k * math.log(scale) + math.log(s)

    def mgf_derivative(self, z, order):
        # shift by the largest exponent so large real tilts do not overflow early
        exps = z * self.values
        shift = np.max(exps.real)
        terms = self.probs * self.values**order * np.exp(exps - shift)
        return complex(np.sum(terms) * cmath.exp(shift))

    @property
    def variance(self):
        mu = math.fsum(p * v for v, p in self.atoms)
        return math.fsum(p * (v - mu) ** 2 for v, p in self.atoms)

    def log_mgf_real(self, h):
        exps = h * self.values
        shift = np.max(exps)
        return float(shift + np.log(np.sum(self.probs * np.exp(exps - shift))))

    def check_domain(self, z):
        pass

    def tilt(self, h):
        exps = h * self.values
        w = self.probs * np.exp(exps - np.max(exps))
        w = w / w.sum()
        keep = w > 0.0
        return FiniteDiscrete(tuple(zip(self.values[keep], w[keep] / w[keep].sum())))

    def scaled(self, lam):
        return FiniteDiscrete(tuple((v * lam, p) for v, p in self.atoms))

    @cached_property
    def _cum(self):
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def sample(self, rng, size):
        u = rng.random(size)
        idx = np.searchsorted(self._cum, u, side="right")
        return self.values[np.minimum(idx, len(self.atoms) - 1)]

    def sum_of(self, rng, counts):
        counts = np.asarray(counts)
        if len(self.atoms) == 1:
            return counts * self.values[0]
        return rng.multinomial(counts, self.probs) @ self.values

    def to_dict(self):
        return {
            "family": "discrete",
            "values": [v for v, _ in self.atoms],
            "probs": [p for _, p in self.atoms],
        }


@dataclass(frozen=True)
class SignedGamma(_Entry):
    shape: float
    rate: float
    sign: int = 1

    bounded = False

    def __post_init__(self):
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "sign", _check_sign(self.sign))
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("shape and rate must be strictly positive")

    @property
    def support_bound(self):
        return math.inf

    @property
    def canonical_scale(self):
        # (a)_k <= a^k k! for a >= 1 and (a)_k <= a (k-1)! for a < 1, which is
        # what makes condition (bern) hold with D = 1 at this scale.
        return max(1.0, self.shape) / self.rate

    def _log_pochhammer(self, k):
        return math.lgamma(self.shape + k) - math.lgamma(self.shape)

    def log_abs_raw_moment(self, k):
        sign = self.sign if k % 2 else 1
        return sign, self._log_pochhammer(k) - k * math.log(self.rate)

    def log_abs_moment(self, k):
        return self._log_pochhammer(k) - k * math.log(self.rate)

    def raw_moment(self, k):
        k = _check_order(k)
        if k <= 30:
            value = math.prod((self.shape + j) / self.rate for j in range(k))
            return value * (self.sign if k % 2 else 1)
        return super().raw_moment(k)

    def abs_moment(self, k):
        k = _check_order(k, lowest=1)
        return abs(self.raw_moment(k)) if k <= 30 else super().abs_moment(k)

    @property
    def variance(self):
        return self.shape / self.rate**2

    def check_domain(self, z):
        if (self.sign * z).real >= self.rate:
            raise TiltDomainError(
                f"Re(sign*z) = {(self.sign * z).real!r} is outside the m.g.f. domain (< {self.rate!r})",
                max_abs_z=self.rate,
            )

    def mgf_derivative(self, z, order):
        self.check_domain(z)
        base = 1.0 - self.sign * z / self.rate
        log_poch = self._log_pochhammer(order)
        return (
            cmath.exp(log_poch)
            * (self.sign / self.rate) ** order
            * cmath.exp(-(self.shape + order) * cmath.log(base))
        )

    def log_mgf_real(self, h):
        self.check_domain(h)
        return -self.shape * math.log1p(-self.sign * h / self.rate)

    def tilt(self, h):
        self.check_domain(h)
        return self._rebuild(self, self.rate - self.sign * h)

    def scaled(self, lam):
        return self._rebuild(self, self.rate / lam)

    @staticmethod
    def _rebuild(d, rate):
        return SignedGamma(d.shape, rate, d.sign)

    def sample(self, rng, size):
        return self.sign * rng.gamma(self.shape, 1.0 / self.rate, size)

    def sum_of(self, rng, counts):
        return self.sign * rng.gamma(np.asarray(counts) * self.shape, 1.0 / self.rate)

    def to_dict(self):
        return {"family": "gamma", "shape": self.shape, "rate": self.rate, "sign": self.sign}


@dataclass(frozen=True, init=False, repr=False)
class SignedExponential(SignedGamma):
    """``sign * Exp(rate)``; a Gamma law with shape fixed at 1."""

    def __init__(self, rate, sign=1):
        object.__setattr__(self, "shape", 1.0)
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "sign", sign)
        self.__post_init__()

    def __repr__(self):
        return f"SignedExponential(rate={self.rate!r}, sign={self.sign})"

    @staticmethod
    def _rebuild(d, rate):
        return SignedExponential(rate, d.sign)

    def sample(self, rng, size):
        return self.sign * rng.exponential(1.0 / self.rate, size)

    def to_dict(self):
        return {"family": "exp", "rate": self.rate, "sign": self.sign}


EntryDistribution = Union[PointMass, FiniteDiscrete, SignedExponential, SignedGamma]


def entry_from_dict(d):
    """Inverse of ``EntryDistribution.to_dict``; unknown keys are rejected."""
    d = dict(d)
    family = d.pop("family", None)
    try:
        if family == "point":
            out = PointMass(d.pop("c"))
        elif family == "discrete":
            values, probs = d.pop("values"), d.pop("probs")
            if len(values) != len(probs):
                raise ValueError("discrete entry needs equally long 'values' and 'probs'")
            out = FiniteDiscrete.from_arrays(values, probs)
        elif family == "exp":
            out = SignedExponential(d.pop("rate"), d.pop("sign", 1))
        elif family == "gamma":
            out = SignedGamma(d.pop("shape"), d.pop("rate"), d.pop("sign", 1))
        else:
            raise ValueError(f"unknown entry family {family!r}")
    except KeyError as exc:
        raise ValueError(f"entry of family {family!r} is missing key {exc.args[0]!r}") from None
    _reject_extra(d, f"entry of family {family!r}")
    return out


def _reject_extra(d, context):
    if d:
        raise ValueError(f"unknown keys in {context}: {sorted(d)}")


# Module-level operations mirroring the methods.


def raw_moment(d: EntryDistribution, k: int) -> float:
    """Exact ``E X^k``."""
    return d.raw_moment(k)


def abs_moment(d: EntryDistribution, k: int) -> float:
    """Exact ``E |X|^k``."""
    return d.abs_moment(k)


def entry_mgf(d: EntryDistribution, z: complex) -> complex:
    """Exact ``E exp(z X)``; raises :class:`TiltDomainError` outside the domain."""
    return d.mgf(z)


def tilt_entry(d: EntryDistribution, h: float) -> EntryDistribution:
    """Law with density proportional to ``exp(h x)`` against ``d``."""
    return d.tilt(h)


class MatrixEnsemble:
    """Law of an ``n x n`` matrix of independent entries plus a Bernstein scale ``M``.

    Stored as a palette of distinct entry laws and an index grid into it. The
    constructor does not enforce centering; use :func:`check_centering` or the
    builders below, which do.
    """

    def __init__(self, palette: Sequence[EntryDistribution], index, M: float | None = None):
        index = np.asarray(index, dtype=np.int64)
        if index.ndim != 2 or index.shape[0] != index.shape[1]:
            raise ValueError(f"index grid must be square, got shape {index.shape}")
        if index.shape[0] < 2:
            raise ValueError("ensemble size n must be at least 2")
        palette = list(palette)
        if index.min() < 0 or index.max() >= len(palette):
            raise ValueError("index grid refers to a missing palette entry")
        # canonical form: unique palette in first-appearance order
        remap, canon = {}, []
        lookup = np.empty(len(palette), dtype=np.int64)
        for k, d in enumerate(palette):
            if d not in remap:
                remap[d] = len(canon)
                canon.append(d)
            lookup[k] = remap[d]
        flat = lookup[index].ravel()
        _, first = np.unique(flat, return_index=True)
        order = flat[np.sort(first)]
        relabel = np.empty(len(canon), dtype=np.int64)
        relabel[order] = np.arange(len(order))
        self.palette = tuple(canon[k] for k in order)
        self.index = relabel[lookup[index]]
        self.index.setflags(write=False)
        canonical = self.canonical_scale
        if M is None:
            M = canonical if canonical > 0 else 1.0
        M = float(M)
        if not M > 0:
            raise ValueError("Bernstein scale M must be positive")
        if M < canonical * (1 - 1e-12):
            raise ValueError(f"M={M!r} does not dominate the family scale {canonical!r}")
        self.M = M

    @classmethod
    def from_grid(cls, grid, M=None):
        grid = [list(row) for row in grid]
        n = len(grid)
        if any(len(row) != n for row in grid):
            raise ValueError("entry grid must be square")
        ids = {}
        index = np.empty((n, n), dtype=np.int64)
        for i, row in enumerate(grid):
            for j, d in enumerate(row):
                index[i, j] = ids.setdefault(d, len(ids))
        return cls(list(ids), index, M)

    @property
    def n(self):
        return self.index.shape[0]

    @property
    def entries(self):
        return tuple(tuple(self.palette[k] for k in row) for row in self.index)

    def cell(self, i, j):
        return self.palette[self.index[i, j]]

    @property
    def canonical_scale(self):
        return max(d.canonical_scale for d in self.palette)

    @property
    def bounded(self):
        return all(d.bounded for d in self.palette)

    def palette_values(self, fn):
        """Evaluate ``fn`` once per palette entry and spread it over the grid."""
        return np.array([fn(d) for d in self.palette])[self.index]

    def raw_moments(self, k):
        return self.palette_values(lambda d: d.raw_moment(k))

    def abs_moments(self, k):
        return self.palette_values(lambda d: d.abs_moment(k))

    def mgf_matrix(self, z, order=0):
        vals = np.array([d.mgf_derivative(z, order) for d in self.palette], dtype=complex)
        return vals[self.index]

    def scaled(self, lam):
        if not lam > 0:
            raise ValueError("scale factor must be positive")
        return MatrixEnsemble([d.scaled(lam) for d in self.palette], self.index, self.M * lam)

    def __eq__(self, other):
        if not isinstance(other, MatrixEnsemble):
            return NotImplemented
        return (
            self.M == other.M
            and self.palette == other.palette
            and np.array_equal(self.index, other.index)
        )

    def __hash__(self):
        return hash((self.M, self.palette, self.index.tobytes()))

    def __repr__(self):
        return f"MatrixEnsemble(n={self.n}, palette_size={len(self.palette)}, M={self.M!r})"


@dataclass(frozen=True)
class CenteringReport:
    passed: bool
    row_residuals: np.ndarray
    col_residuals: np.ndarray
    worst_row: int
    worst_col: int
    max_residual: float

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"centering: {status} (max residual {self.max_residual:.3g})"


def check_centering(e: MatrixEnsemble, tol: float = CENTERING_TOL) -> CenteringReport:
    """Residuals of the 2n constraints ``sum_i E X_ij = sum_j E X_ij = 0``."""
    means = e.raw_moments(1)
    rows = np.array([math.fsum(r) for r in means])
    cols = np.array([math.fsum(c) for c in means.T])
    wr, wc = int(np.argmax(np.abs(rows))), int(np.argmax(np.abs(cols)))
    worst = max(abs(rows[wr]), abs(cols[wc]))
    return CenteringReport(worst <= tol, rows, cols, wr, wc, float(worst))


@dataclass(frozen=True)
class BernsteinReport:
    passed: bool
    D: float
    K: int
    max_ratio: float
    worst: tuple
    skipped: list

    @property
    def minimal_D(self):
        return self.max_ratio

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"bernstein: {status} (minimal D {self.max_ratio:.6g}, tested D {self.D:g}, K {self.K})"


def check_bernstein(e: MatrixEnsemble, D: float = 1.0, K: int = 20, M: float | None = None) -> BernsteinReport:
    """Check ``|E X^k| <= D k! M^(k-s) E|X|^s`` for every cell, s = 1, 2, 3 and s <= k <= K.

    ``M`` defaults to the ensemble's own scale; passing a value probes the
    condition at another scale. Cells with ``E|X|^s == 0`` (a point mass at
    zero) are skipped and listed.
    """
    if K < 3:
        raise ValueError("K must be at least 3")
    K = _check_order(K)
    M = e.M if M is None else float(M)
    if not M > 0:
        raise ValueError("M must be positive")
    log_M = math.log(M)
    best, worst, skipped = -math.inf, None, []
    for p, d in enumerate(e.palette):
        cell = tuple(int(x) for x in np.argwhere(e.index == p)[0])
        for s in (1, 2, 3):
            log_s = d.log_abs_moment(s)
            if log_s == -math.inf:
                skipped.append((*cell, s))
                continue
            for k in range(s, K + 1):
                sign, log_k = d.log_abs_raw_moment(k)
                if sign == 0:
                    continue
                log_ratio = log_k - math.lgamma(k + 1) - (k - s) * log_M - log_s
                if log_ratio > best:
                    best, worst = log_ratio, (*cell, s, k)
    max_ratio = math.exp(best) if best > -math.inf else 0.0
    return BernsteinReport(max_ratio <= D * (1 + 1e-12), D, K, max_ratio, worst, skipped)


# Builders


def _require_centered(e: MatrixEnsemble) -> MatrixEnsemble:
    rep = check_centering(e)
    if not rep.passed:
        if abs(rep.row_residuals[rep.worst_row]) >= abs(rep.col_residuals[rep.worst_col]):
            axis, idx, res = "row", rep.worst_row, rep.row_residuals[rep.worst_row]
        else:
            axis, idx, res = "column", rep.worst_col, rep.col_residuals[rep.worst_col]
        raise CenteringError(
            f"mean {axis} {idx} sums to {float(res)!r}, not 0 (tolerance {CENTERING_TOL:g})",
            axis=axis,
            index=idx,
            residual=float(res),
        )
    return e


def degenerate(grid, M=None) -> MatrixEnsemble:
    """Point masses ``c_ij``; ``M`` defaults to ``max |c_ij|``."""
    c = np.asarray(grid, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("degenerate grid must be a square matrix")
    uniq, inv = np.unique(c, return_inverse=True)
    e = MatrixEnsemble([PointMass(v) for v in uniq], inv.reshape(c.shape), M)
    return _require_centered(e)


def checkerboard(n: int, rate: float = 1.0, shape: float | None = None, M=None) -> MatrixEnsemble:
    """Two-sequence ensemble: ``+law`` where ``i + j`` is even, ``-law`` otherwise.

    The law is ``Exp(rate)`` or, with ``shape``, ``Gamma(shape, rate)``.
    """
    if n < 2 or n % 2:
        raise CenteringError(
            f"checkerboard needs an even n >= 2, got {n}", axis="row", index=0, residual=None
        )
    if shape is None:
        plus, minus = SignedExponential(rate, 1), SignedExponential(rate, -1)
    else:
        plus, minus = SignedGamma(shape, rate, 1), SignedGamma(shape, rate, -1)
    i, j = np.indices((n, n))
    return MatrixEnsemble([plus, minus], (i + j) % 2, M)


def k_sequence(palette: Sequence[EntryDistribution], pattern, M=None) -> MatrixEnsemble:
    """Each cell takes one of the palette laws; the pattern must satisfy the centering condition."""
    pattern = np.asarray(pattern)
    return _require_centered(MatrixEnsemble(list(palette), pattern, M))


def rademacher(scales, M=None) -> MatrixEnsemble:
    """Bounded symmetric grid: cell ``(i, j)`` is ``+-a_ij`` with probability 1/2 each."""
    a = np.abs(np.asarray(scales, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("scale grid must be a square matrix")
    uniq, inv = np.unique(a, return_inverse=True)
    palette = [PointMass(0.0) if v == 0 else FiniteDiscrete(((-v, 0.5), (v, 0.5))) for v in uniq]
    return MatrixEnsemble(palette, inv.reshape(a.shape), M)


def row_constant(row_laws: Sequence[EntryDistribution], M=None) -> MatrixEnsemble:
    """Row ``i`` repeats ``row_laws[i]`` across all columns (identical-columns case)."""
    n = len(row_laws)
    index = np.repeat(np.arange(n)[:, None], n, axis=1)
    return _require_centered(MatrixEnsemble(list(row_laws), index, M))


def latin_square(palette: Sequence[EntryDistribution], rng=None, M=None) -> MatrixEnsemble:
    """Each row and column uses every palette law once, so palette means must sum to zero."""
    n = len(palette)
    i, j = np.indices((n, n))
    pattern = (i + j) % n
    if rng is not None:
        pattern = pattern[rng.permutation(n)][:, rng.permutation(n)]
    return k_sequence(palette, pattern, M)


def double_center(c):
    """Project a matrix onto zero row and column sums."""
    c = np.asarray(c, dtype=float)
    return c - c.mean(axis=1, keepdims=True) - c.mean(axis=0, keepdims=True) + c.mean()


def random_ensemble(rng: np.random.Generator, n: int, kind: str = "discrete") -> MatrixEnsemble:
    """Random centered ensemble for fuzzing.

    ``kind`` is ``"degenerate"``, ``"discrete"`` (independent finite laws with
    doubly-centered means), ``"zero_mean"`` (symmetric discrete cells with
    random scales) or ``"mixed"`` (Latin square over point, discrete,
    exponential and Gamma laws).
    """
    if kind == "degenerate":
        return degenerate(double_center(rng.normal(size=(n, n))))
    if kind == "discrete":
        means = double_center(rng.normal(size=(n, n)))
        palette = []
        for mu in means.ravel():
            k = int(rng.integers(1, 4))
            vals = rng.normal(scale=rng.uniform(0.2, 2.0), size=k)
            probs = rng.dirichlet(np.ones(k))
            probs /= probs.sum()
            vals = vals - probs @ vals + mu
            palette.append(FiniteDiscrete.from_arrays(vals, probs))
        e = MatrixEnsemble(palette, np.arange(n * n).reshape(n, n))
        # the shifted atoms center each cell only up to rounding
        return _require_centered(e) if check_centering(e).passed else random_ensemble(rng, n, kind)
    if kind == "zero_mean":
        return rademacher(rng.uniform(0.1, 3.0, size=(n, n)))
    if kind == "mixed":
        palette = []
        for _ in range(n - 1):
            r = rng.integers(4)
            if r == 0:
                palette.append(SignedExponential(rng.uniform(0.5, 3.0), int(rng.choice([-1, 1]))))
            elif r == 1:
                palette.append(
                    SignedGamma(rng.uniform(0.3, 4.0), rng.uniform(0.5, 3.0), int(rng.choice([-1, 1])))
                )
            elif r == 2:
                vals = rng.normal(size=3)
                palette.append(FiniteDiscrete.from_arrays(vals, rng.dirichlet(np.ones(3))))
            else:
                palette.append(PointMass(rng.normal()))
        palette.append(PointMass(-math.fsum(d.mean for d in palette)))
        if len(set(palette)) < len(palette):
            return random_ensemble(rng, n, kind)
        return latin_square(palette, rng)
    raise ValueError(f"unknown random ensemble kind {kind!r}")


def make_ensemble(spec: dict) -> MatrixEnsemble:
    """Build an ensemble from a plain dict, as read from an ensemble spec file.

    Recognized ``kind`` values: ``degenerate`` (``grid``), ``checkerboard``
    (``n``, ``rate``, optional ``shape``), ``k_sequence`` (``palette`` list of
    entry tables, ``pattern`` index grid), ``rademacher`` (``scales`` grid, or
    ``n`` and a constant ``scale``), ``row_constant`` (``rows`` list of entry
    tables). ``M`` is optional everywhere.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    M = spec.pop("M", None)
    try:
        if kind == "degenerate":
            e = degenerate(spec.pop("grid"), M)
        elif kind == "checkerboard":
            e = checkerboard(int(spec.pop("n")), spec.pop("rate", 1.0), spec.pop("shape", None), M)
        elif kind == "k_sequence":
            palette = [entry_from_dict(d) for d in spec.pop("palette")]
            e = k_sequence(palette, spec.pop("pattern"), M)
        elif kind == "rademacher":
            if "scales" in spec:
                e = rademacher(spec.pop("scales"), M)
            else:
                n = int(spec.pop("n"))
                e = rademacher(np.full((n, n), float(spec.pop("scale", 1.0))), M)
        elif kind == "row_constant":
            e = row_constant([entry_from_dict(d) for d in spec.pop("rows")], M)
        else:
            raise ValueError(f"unknown ensemble kind {kind!r}")
    except KeyError as exc:
        raise ValueError(f"ensemble of kind {kind!r} is missing key {exc.args[0]!r}") from None
    _reject_extra(spec, f"ensemble of kind {kind!r}")
    return e
