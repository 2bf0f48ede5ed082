"""Exact small-n computations: permanents, the permanent-form m.g.f., and the law of S_n."""

from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ensemble import FiniteDiscrete, MatrixEnsemble, PointMass
from .errors import FeasibilityError
from .stats import b_n

PERMANENT_MAX_N = 20
DEGENERATE_MAX_N = 10
DISCRETE_MAX_N = 7
SUPPORT_PRODUCT_MAX = 10**6
ATOM_TOL = 1e-9
_CHUNK = 1 << 15


def permanent(A) -> complex | float:
    """Permanent by Ryser's inclusion-exclusion formula with Gray-code subset updates.

    Uses the Nijenhuis-Wilf form: with ``x_i = a_in - (1/2) sum_j a_ij``,
    ``per A = (-1)^(n-1) 2 sum_{S subset [n-1]} (-1)^|S| prod_i (x_i + sum_{j in S} a_ij)``.
    The half-row-sum offset keeps the terms near zero, which removes most of
    the cancellation plain Ryser suffers on positive matrices, and only
    ``2^(n-1)`` subsets are visited. Cost is O(2^n n).

    Subsets are walked in Gray-code order in chunks: inside a chunk the row
    sums are a running sum of signed column updates, and at each chunk
    boundary they are rebuilt from the subset bits to stop drift.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"permanent needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > PERMANENT_MAX_N:
        raise FeasibilityError(
            f"permanent of a {n}x{n} matrix exceeds the n <= {PERMANENT_MAX_N} guard",
            cost=float(2**n * n),
        )
    if n == 0:
        return 1.0
    dtype = complex if np.iscomplexobj(A) else float
    A = A.astype(dtype)
    x = A[:, -1] - 0.5 * A.sum(axis=1)
    cols = A.T[:-1]
    m = n - 1
    total = np.prod(x)
    stop = 1 << m
    for start in range(1, stop, _CHUNK):
        k = np.arange(start, min(start + _CHUNK, stop), dtype=np.int64)
        prev = (start - 1) ^ ((start - 1) >> 1)
        mask = np.array([(prev >> j) & 1 for j in range(m)], dtype=bool)
        base = x + cols[mask].sum(axis=0)
        bit = np.log2(k & -k).astype(np.int64)
        gray = k ^ (k >> 1)
        step = np.where((gray >> bit) & 1, 1.0, -1.0)
        sums = base + np.cumsum(step[:, None] * cols[bit], axis=0)
        # |subset| has the parity of k along a Gray code
        parity = np.where(k & 1, -1.0, 1.0)
        total += np.sum(parity * np.prod(sums, axis=1))
    result = 2.0 * total if m % 2 == 0 else -2.0 * total
    return complex(result) if dtype is complex else float(result)


def mgf_exact(e: MatrixEnsemble, z: complex) -> complex:
    """``E exp(z S_n / sqrt(B_n))`` as ``per(E exp(z X_ij / sqrt(B_n))) / n!``."""
    n = e.n
    if n > PERMANENT_MAX_N:
        raise FeasibilityError(f"n = {n} exceeds the permanent guard {PERMANENT_MAX_N}")
    A = e.mgf_matrix(complex(z) / math.sqrt(b_n(e)))
    return complex(permanent(A)) / math.factorial(n)


@dataclass(frozen=True)
class ExactDistribution:
    """A finite law: strictly increasing ``values`` with positive ``probs``."""

    values: np.ndarray
    probs: np.ndarray

    @property
    def support(self):
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def moment(self, k):
        return float(np.sum(self.probs * self.values**k))

    @property
    def mean(self):
        return self.moment(1)

    @property
    def variance(self):
        return self.moment(2) - self.mean**2

    def mgf(self, z):
        exps = complex(z) * self.values
        shift = float(np.max(exps.real))
        return complex(np.sum(self.probs * np.exp(exps - shift))) * cmath.exp(shift)

    def tail(self, x):
        """``P(S >= x)``; atoms within ``ATOM_TOL`` below ``x`` count as equal to it."""
        return float(math.fsum(self.probs[self.values >= x - ATOM_TOL]))

    def cdf(self, x):
        """``P(S <= x)`` with the same tie tolerance."""
        return float(math.fsum(self.probs[self.values <= x + ATOM_TOL]))


def merge_atoms(values, probs, tol=ATOM_TOL):
    """Sort atoms and merge runs whose consecutive gaps are at most ``tol``.

    A merged atom sits at the probability-weighted mean of its run.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(values, kind="stable")
    v, p = values[order], probs[order]
    keep = p > 0
    v, p = v[keep], p[keep]
    if v.size == 0:
        raise ValueError("no atoms with positive probability")
    starts = np.concatenate(([True], np.diff(v) > tol))
    group = np.cumsum(starts) - 1
    pg = np.bincount(group, weights=p)
    vg = np.bincount(group, weights=p * v) / pg
    return vg, pg


def _permutation_chunks(n, size):
    perms = itertools.permutations(range(n))
    while True:
        flat = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(perms, size)), dtype=np.int64
        )
        if flat.size == 0:
            return
        yield flat.reshape(-1, n)


def _law_cost(e: MatrixEnsemble):
    sizes = e.palette_values(lambda d: len(d.atoms) if isinstance(d, FiniteDiscrete) else 1)
    rows, cols = linear_sum_assignment(-np.log(sizes))
    return int(np.prod(sizes[rows, cols]))


def enumerate_law(e: MatrixEnsemble) -> ExactDistribution:
    """Exact law of ``S_n = sum_i X_{i, pi(i)}`` under a uniform permutation.

    Permutations are visited in lexicographic order. Degenerate grids are
    allowed up to n = 10; grids with finite discrete entries up to n = 7 with
    at most 10^6 support points for any single permutation. Exponential and
    Gamma entries have no finite law and are rejected.
    """
    n = e.n
    if not e.bounded:
        raise FeasibilityError("exact law needs point-mass or finite discrete entries")
    n_perm = math.factorial(n)
    if all(isinstance(d, PointMass) for d in e.palette):
        if n > DEGENERATE_MAX_N:
            raise FeasibilityError(
                f"degenerate enumeration over {n}! permutations exceeds n <= {DEGENERATE_MAX_N}",
                cost=float(n_perm * n),
            )
        c = e.palette_values(lambda d: d.c)
        rows = np.arange(n)
        parts = [c[rows, p].sum(axis=1) for p in _permutation_chunks(n, 1 << 16)]
        values = np.concatenate(parts)
        # merge integer counts so each probability is a single rounding of k / n!
        v, counts = merge_atoms(values, np.ones(values.size))
        return ExactDistribution(v, counts / n_perm)

    if n > DISCRETE_MAX_N:
        raise FeasibilityError(
            f"discrete enumeration exceeds the n <= {DISCRETE_MAX_N} guard", cost=float(n_perm * n)
        )
    worst = _law_cost(e)
    if worst > SUPPORT_PRODUCT_MAX:
        raise FeasibilityError(
            f"a permutation reaches {worst} support points (> {SUPPORT_PRODUCT_MAX})",
            cost=float(worst) * n_perm,
        )
    atoms = [
        (np.array([d.c]), np.array([1.0])) if isinstance(d, PointMass) else (d.values, d.probs)
        for d in e.palette
    ]
    acc_v, acc_p, pending = [], [], 0
    for chunk in _permutation_chunks(n, 4096):
        for perm in chunk:
            v, p = np.zeros(1), np.full(1, 1.0 / n_perm)
            for i, j in enumerate(perm):
                av, ap = atoms[e.index[i, j]]
                v = (v[:, None] + av[None, :]).ravel()
                p = (p[:, None] * ap[None, :]).ravel()
            acc_v.append(v)
            acc_p.append(p)
            pending += v.size
        if pending > 4 * SUPPORT_PRODUCT_MAX:
            mv, mp = merge_atoms(np.concatenate(acc_v), np.concatenate(acc_p))
            acc_v, acc_p, pending = [mv], [mp], mv.size
    return ExactDistribution(*merge_atoms(np.concatenate(acc_v), np.concatenate(acc_p)))


def exact_tail(e: MatrixEnsemble, x: float) -> float:
    """``P(S_n >= x)`` from the enumerated law (closed at atoms, tolerance ``ATOM_TOL``)."""
    return enumerate_law(e).tail(x)
