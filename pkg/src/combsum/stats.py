"""Scalar moment functionals of a matrix ensemble: B_n, Var S_n, gamma_n and the zone edge."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .ensemble import MatrixEnsemble
from .errors import DegenerateEnsembleError

DEFAULT_SLACK = 0.5


def _fsum_rows(a):
    return [math.fsum(r) for r in a]


def b_n(e: MatrixEnsemble) -> float:
    """Norming constant ``(1/n) sum_ij E X_ij^2``.

    Raises :class:`DegenerateEnsembleError` when it is zero.
    """
    total = math.fsum(_fsum_rows(e.raw_moments(2)))
    if total == 0.0:
        raise DegenerateEnsembleError("B_n = 0: every entry is a point mass at 0")
    return total / e.n


def var_S(e: MatrixEnsemble) -> float:
    """Exact variance of S_n for a centered ensemble.

    ``Var S_n = (1/n) sum E X^2 + (1/(n(n-1))) sum (E X)^2``. The form with
    ``(1/(n-1)) sum (E X)^2 + (1/n) sum Var X`` is the same number.
    """
    n = e.n
    second = math.fsum(_fsum_rows(e.raw_moments(2)))
    mean_sq = math.fsum(_fsum_rows(e.raw_moments(1) ** 2))
    return second / n + mean_sq / (n * (n - 1))


@dataclass(frozen=True)
class MomentSummary:
    n: int
    B_n: float
    var_S: float
    gamma_terms: tuple
    gamma_n: float
    zone_u_max: float

    CSV_HEADER = (
        "n",
        "B_n",
        "var_S",
        "gamma_mean",
        "gamma_row",
        "gamma_col",
        "gamma_third",
        "gamma_n",
        "zone_u_max",
    )

    def csv_row(self):
        return (self.n, self.B_n, self.var_S, *self.gamma_terms, self.gamma_n, self.zone_u_max)


def _energy_ratio(n, sums):
    # n * max / sum computed exactly so that the >= 1 bound survives rounding
    exact = [Fraction(s) for s in sums]
    return float(n * max(exact) / sum(exact))


def gamma_terms(e: MatrixEnsemble) -> tuple:
    """The four functionals whose maximum is gamma_n.

    (max scaled mean absolute value, max row energy, max column energy,
    scaled sum of third absolute moments). Row and column energies are
    ``sum_j E X_ij^2 / B_n`` and ``sum_i E X_ij^2 / B_n``.
    """
    n = e.n
    second = e.raw_moments(2)
    rows, cols = _fsum_rows(second), _fsum_rows(second.T)
    B = b_n(e)
    sqrt_n, sqrt_b = math.sqrt(n), math.sqrt(B)
    t_mean = sqrt_n / sqrt_b * float(np.max(e.abs_moments(1)))
    t_row = _energy_ratio(n, rows)
    t_col = _energy_ratio(n, cols)
    third = math.fsum(_fsum_rows(e.abs_moments(3)))
    t_third = third / (sqrt_n * B * sqrt_b)
    return (t_mean, t_row, t_col, t_third)


def gamma_n(e: MatrixEnsemble, slack: float = DEFAULT_SLACK) -> MomentSummary:
    """Full moment summary; ``gamma_n`` is the max of :func:`gamma_terms`."""
    terms = gamma_terms(e)
    g = max(terms)
    B = b_n(e)
    return MomentSummary(e.n, B, var_S(e), terms, g, _zone(e.n, g, B, e.M, slack))


def _zone(n, g, B, M, slack):
    if not 0 < slack <= 1:
        raise ValueError(f"slack must lie in (0, 1], got {slack}")
    return slack * min((math.sqrt(n) / g) ** (1.0 / 3.0), math.sqrt(B) / M)


def zone_u_max(e: MatrixEnsemble, slack: float = DEFAULT_SLACK) -> float:
    """``slack * min((sqrt(n)/gamma_n)^(1/3), sqrt(B_n)/M)``.

    A concrete edge for experiment grids; the theorem's conditions are
    little-o statements and carry no constant.
    """
    return _zone(e.n, max(gamma_terms(e)), b_n(e), e.M, slack)
