"""Conjugate-distribution analytics: phi_n and its log-derivatives, the saddlepoint equation, tail approximation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .ensemble import MatrixEnsemble
from .errors import FeasibilityError, NumericalDegeneracyError, ZoneExceededError
from .stats import b_n

TILT_MAX_N = 16
DOMAIN_SAFETY = 0.95
# positive tilts of bounded ensembles are unrestricted; the search stops once
# h * (row-wise support span) / sqrt(B_n) reaches this many nats
SEARCH_EXPONENT = 40.0
MAX_NEWTON_ITERS = 100


def gaussian_tail(u: float) -> float:
    """``1 - Phi(u)`` through ``erfc``, accurate in the far tail."""
    return 0.5 * math.erfc(u / math.sqrt(2.0))


@lru_cache(maxsize=None)
def _layers(n):
    """For each popcount i and column j: masks with i bits and bit j clear."""
    masks = np.arange(1 << n, dtype=np.int64)
    pop = np.zeros(1 << n, dtype=np.int64)
    for j in range(n):
        pop += (masks >> j) & 1
    out = []
    for i in range(n):
        layer = masks[pop == i]
        out.append([layer[((layer >> j) & 1) == 0] for j in range(n)])
    return out


def permanent_jet(A0, A1, A2):
    """``(per A, d per A, d^2 per A)`` for a matrix whose entries carry value, first and second derivative.

    Rows are assigned in order and the partial sums over injective prefixes
    are kept per set of used columns, propagating derivatives by the product
    rule. With non-negative ``A0`` and ``A2`` nothing cancels in the value or
    in the ``A2`` contributions, unlike the alternating Ryser sum.
    """
    A0, A1, A2 = (np.asarray(a, dtype=float) for a in (A0, A1, A2))
    n = A0.shape[0]
    size = 1 << n
    d0, d1, d2 = np.zeros(size), np.zeros(size), np.zeros(size)
    d0[0] = 1.0
    for i, by_col in enumerate(_layers(n)):
        for j, src in enumerate(by_col):
            dst = src | (1 << j)
            a0, a1, a2 = A0[i, j], A1[i, j], A2[i, j]
            x0, x1, x2 = d0[src], d1[src], d2[src]
            d0[dst] += x0 * a0
            d1[dst] += x1 * a0 + x0 * a1
            d2[dst] += x2 * a0 + 2.0 * x1 * a1 + x0 * a2
    return d0[-1], d1[-1], d2[-1]


@dataclass(frozen=True)
class TiltedState:
    h: float
    log_mgf: float
    m: float
    sigma2: float


def _entry_jets(e: MatrixEnsemble, h: float, sqrt_b: float, shift: float):
    """Per-cell ``E exp(h Y)`` for ``Y = X / sqrt(B_n) - shift`` with its two h-derivatives.

    Rows are rescaled by their largest value (the log of the removed factor is
    returned) and second moments are built as variance plus squared offset, so
    every ``A2`` entry is non-negative without cancellation.
    """
    z = h / sqrt_b
    lm, off, var = [], [], []
    for d in e.palette:
        lm.append(d.log_mgf_real(z))
        t = d.tilt(z)
        off.append(t.raw_moment(1) / sqrt_b - shift)
        var.append(max(t.variance, 0.0) / sqrt_b**2)
    log_a = np.array(lm)[e.index] - h * shift
    row_max = log_a.max(axis=1, keepdims=True)
    A0 = np.exp(log_a - row_max)
    off = np.array(off)[e.index]
    A1 = A0 * off
    A2 = A0 * (np.array(var)[e.index] + off * off)
    return A0, A1, A2, float(row_max.sum())


def _state(e: MatrixEnsemble, h: float) -> TiltedState:
    n = e.n
    sqrt_b = math.sqrt(b_n(e))
    A0, A1, A2, log_shift = _entry_jets(e, h, sqrt_b, 0.0)
    p0, p1, _ = permanent_jet(A0, A1, A2)
    m = p1 / p0
    # second pass centred at m: the shifted sum has mean ~0 and its second
    # moment is sigma^2 directly
    c = m / n
    A0, A1, A2, _ = _entry_jets(e, h, sqrt_b, c)
    q0, q1, q2 = permanent_jet(A0, A1, A2)
    r = q1 / q0
    sigma2 = q2 / q0 - r * r
    # n! is exact in double precision for n <= 18
    log_mgf = math.log(p0 / math.factorial(n)) + log_shift
    return TiltedState(float(h), float(log_mgf), float(m + r), float(sigma2))


def tilted_state(e: MatrixEnsemble, h: float) -> TiltedState:
    """``log phi_n(h)``, ``m_n(h)`` and ``sigma_n^2(h)`` for ``phi_n(h) = E exp(h S_n / sqrt(B_n))``.

    ``phi_n`` is ``per(E exp(h X_ij / sqrt(B_n))) / n!``; its first two
    derivatives follow from multilinearity of the permanent, entry by entry.
    """
    if not h >= 0:
        raise ValueError(f"tilt h must be >= 0, got {h}")
    if e.n > TILT_MAX_N:
        raise FeasibilityError(
            f"tilted state needs n <= {TILT_MAX_N}, got {e.n}", cost=float(e.n**2 * 2**e.n)
        )
    st = _state(e, h)
    if not st.sigma2 > 0:
        raise NumericalDegeneracyError(
            f"tilted variance {st.sigma2!r} at h={h!r} is not positive; h is too close to the domain edge"
        )
    return st


def h_max(e: MatrixEnsemble, safety: float = DOMAIN_SAFETY) -> float:
    """Largest tilt searched by the saddlepoint solver.

    Entries ``+Gamma(a, r)`` confine ``h < r sqrt(B_n)``; the edge is scaled by
    ``safety``. Bounded entries have entire m.g.f.s, so the search is instead
    capped where ``m_n`` has converged to its supremum for all practical purposes.
    """
    sqrt_b = math.sqrt(b_n(e))
    edges = [d.rate for d in e.palette if not d.bounded and d.sign > 0]
    domain = sqrt_b * min(edges) if edges else math.inf
    spans = e.palette_values(lambda d: d.support_bound if d.bounded else d.canonical_scale)
    width = float(np.sum(spans.max(axis=1)))
    cap = SEARCH_EXPONENT * sqrt_b / width
    return safety * min(domain, cap)


def analyticity_radius(e: MatrixEnsemble) -> float:
    """``min(sqrt(n), sqrt(B_n)/M) / 8``: the disc on which the moment bounds of the large-deviation argument hold.

    Reported as a diagnostic; it is not used as a hard limit on real tilts.
    """
    return min(math.sqrt(e.n), math.sqrt(b_n(e)) / e.M) / 8.0


@dataclass(frozen=True)
class SaddlepointResult:
    u: float
    h: float
    tail_approx: float
    newton_iters: int
    residual: float
    state: TiltedState
    gauss_tail: float


def _leading_tail(state: TiltedState, u: float) -> float:
    return math.exp(state.log_mgf - 0.5 * state.h**2) * gaussian_tail(u)


def solve_saddlepoint(e: MatrixEnsemble, u: float) -> SaddlepointResult:
    """Solve ``m_n(h) = u`` by Newton's method on ``[0, h_max]`` with bisection fallback.

    ``m_n`` is increasing with derivative ``sigma_n^2 > 0``, so the bracket is
    kept from the sign of the residual. Newton starts at ``h = u``.
    """
    if not u > 0:
        raise ValueError(f"saddlepoint level u must be positive, got {u}")
    tol = 1e-10 * max(1.0, u)
    hi = h_max(e)
    if e.n > TILT_MAX_N:
        raise FeasibilityError(f"saddlepoint needs n <= {TILT_MAX_N}, got {e.n}")
    edge = _state(e, hi)
    if edge.m <= u:
        raise ZoneExceededError(
            f"u = {u!r} is beyond m_n(h_max) = {edge.m!r} at h_max = {hi!r}", m_edge=edge.m, h_edge=hi
        )
    lo = 0.0
    h = min(u, 0.5 * hi)
    for it in range(1, MAX_NEWTON_ITERS + 1):
        st = tilted_state(e, h)
        f = st.m - u
        if abs(f) <= tol:
            return SaddlepointResult(u, h, _leading_tail(st, u), it, abs(f), st, gaussian_tail(u))
        if f < 0:
            lo = h
        else:
            hi = h
        step = h - f / st.sigma2
        h = step if lo < step < hi else 0.5 * (lo + hi)
    raise NumericalDegeneracyError(f"saddlepoint for u={u!r} did not converge in {MAX_NEWTON_ITERS} steps")


class TailApproximation(NamedTuple):
    approx: float
    gauss_tail: float

    @property
    def ratio(self):
        return self.approx / self.gauss_tail


def saddlepoint_tail(e: MatrixEnsemble, u: float) -> TailApproximation:
    """Leading-order ``P(S_n >= u sqrt(B_n)) ~ phi_n(h) exp(-h^2/2) (1 - Phi(u))`` at ``m_n(h) = u``.

    The Gaussian tail ``1 - Phi(u)`` is returned alongside for ratio reporting.
    """
    if u == 0:
        return TailApproximation(0.5, 0.5)
    res = solve_saddlepoint(e, u)
    return TailApproximation(res.tail_approx, res.gauss_tail)


def importance_tilt(e: MatrixEnsemble, u: float, edge_fraction: float = 0.9) -> float:
    """Tilt used by the importance sampler for level ``u``.

    The saddlepoint ``h`` when ``u <= edge_fraction * m_n(h_max)``; otherwise
    the tilt that centers the conjugate law at ``edge_fraction * m_n(h_max)``,
    which keeps the estimator from collapsing onto the top of a bounded support.
    """
    if u <= 0:
        return 0.0
    m_edge = _state(e, h_max(e)).m
    return solve_saddlepoint(e, min(u, edge_fraction * m_edge)).h
