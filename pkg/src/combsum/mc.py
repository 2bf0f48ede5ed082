"""Monte Carlo engines for combinatorial sums: plain simulation, naive tails, tilted importance sampling.

Random streams come from the counter-based Philox generator. A run keyed by
``seed`` splits its work into fixed-size chunks and chunk ``k`` draws from
``SeedSequence(seed, spawn_key=(k,))``, so results are bit-identical whatever
the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstwobign

from .ensemble import FiniteDiscrete, MatrixEnsemble, PointMass
from .errors import CombsumError, FeasibilityError
from .exact import ATOM_TOL, enumerate_law
from .stats import b_n, gamma_terms, zone_u_max
from .tilt import TILT_MAX_N, gaussian_tail, importance_tilt, tilted_state

NAIVE_CHUNK = 1 << 16
MIN_NAIVE_SAMPLES = 10**4
EXACT_MAX_N = 7
WORKERS_ENV = "COMBSUM_WORKERS"


def make_rng(seed, *key) -> np.random.Generator:
    """Philox stream for ``seed``, optionally split by an integer ``key``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def child_seed(seed, *key) -> int:
    """A 64-bit integer seed derived from ``seed`` and ``key``."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# Permutations and cell draws


def fisher_yates(rng: np.random.Generator, n: int) -> np.ndarray:
    """One uniform permutation of ``range(n)``."""
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def fisher_yates_batch(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """``size`` independent uniform permutations, one per row, by vectorized Fisher-Yates."""
    perm = np.tile(np.arange(n), (size, 1))
    rows = np.arange(size)
    for i in range(n - 1, 0, -1):
        j = rng.integers(0, i + 1, size=size)
        tmp = perm[rows, j]
        perm[rows, j] = perm[:, i]
        perm[:, i] = tmp
    return perm


class CellSampler:
    """Vectorized draws from a palette of entry laws.

    Point masses and finite laws share a padded inversion table; Gamma-type
    laws are drawn per palette id.
    """

    def __init__(self, palette):
        self.palette = tuple(palette)
        width = max(len(d.atoms) if isinstance(d, FiniteDiscrete) else 1 for d in self.palette)
        k = len(self.palette)
        self.vals = np.zeros((k, width))
        self.cum = np.ones((k, width))
        self.continuous = []
        for p, d in enumerate(self.palette):
            if isinstance(d, PointMass):
                self.vals[p, :] = d.c
            elif isinstance(d, FiniteDiscrete):
                m = len(d.atoms)
                self.vals[p, :m] = d.values
                self.vals[p, m:] = d.values[-1]
                self.cum[p, :m] = d._cum
            else:
                self.continuous.append(p)
        self.width = width

    def draw(self, ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.width == 1:
            out = self.vals[ids, 0]
        else:
            u = rng.random(ids.shape)
            slot = (self.cum[ids] <= u[..., None]).sum(axis=-1)
            np.minimum(slot, self.width - 1, out=slot)
            out = np.take_along_axis(self.vals[ids], slot[..., None], axis=-1)[..., 0]
        for p in self.continuous:
            hit = ids == p
            count = int(hit.sum())
            if count:
                out[hit] = self.palette[p].sample(rng, count)
        return out


@dataclass(frozen=True)
class BlockStructure:
    """Rows and columns grouped into types such that a cell's law depends only on the type pair."""

    row_sizes: np.ndarray
    col_sizes: np.ndarray
    block: np.ndarray  # palette id per (row type, column type)

    @classmethod
    def detect(cls, e: MatrixEnsemble):
        return _detect_blocks(e)

    @classmethod
    def _build(cls, e: MatrixEnsemble):
        rows, row_of = np.unique(e.index, axis=0, return_inverse=True)
        cols, col_of = np.unique(e.index.T, axis=0, return_inverse=True)
        row_of, col_of = np.ravel(row_of), np.ravel(col_of)
        block = np.empty((len(rows), len(cols)), dtype=np.int64)
        first_row = [int(np.argmax(row_of == r)) for r in range(len(rows))]
        first_col = [int(np.argmax(col_of == c)) for c in range(len(cols))]
        for r, i in enumerate(first_row):
            for c, j in enumerate(first_col):
                block[r, c] = e.index[i, j]
        return cls(
            np.bincount(row_of, minlength=len(rows)),
            np.bincount(col_of, minlength=len(cols)),
            block,
        )

    @property
    def worthwhile(self):
        return self.block.size < self.row_sizes.sum()

    def counts(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Joint law of how many rows of each type land in columns of each type, by sequential hypergeometrics."""
        R, C = self.block.shape
        out = np.zeros((size, R, C), dtype=np.int64)
        rem = np.tile(self.col_sizes, (size, 1))
        for r in range(R):
            if r == R - 1:
                out[:, r, :] = rem
                break
            left = np.full(size, self.row_sizes[r], dtype=np.int64)
            rest = rem.sum(axis=1)
            for c in range(C - 1):
                rest = rest - rem[:, c]
                x = rng.hypergeometric(rem[:, c], rest, left) if C > 1 else left
                out[:, r, c] = x
                left = left - x
            out[:, r, C - 1] = left
            rem = rem - out[:, r, :]
        return out


@lru_cache(maxsize=64)
def _detect_blocks(e):
    return BlockStructure._build(e)


def sample_S(e: MatrixEnsemble, rng: np.random.Generator) -> float:
    """One draw of ``S_n``: a Fisher-Yates permutation, then independent entry draws."""
    perm = fisher_yates(rng, e.n)
    return float(sum(float(e.cell(i, j).sample(rng, 1)[0]) for i, j in enumerate(perm)))


def sample_S_batch(e: MatrixEnsemble, size: int, rng: np.random.Generator, blocks: bool | None = None) -> np.ndarray:
    """``size`` independent draws of ``S_n``.

    When the ensemble has few row/column types (k-sequence patterns such as
    the checkerboard), only the type-pair counts are drawn and each block sum
    comes from the closed-form law of a sum of i.i.d. entries. Otherwise whole
    permutations are drawn. ``blocks`` forces one path or the other.
    """
    structure = BlockStructure.detect(e)
    if blocks is None:
        blocks = structure.worthwhile
    if blocks:
        counts = structure.counts(rng, size)
        total = np.zeros(size)
        R, C = structure.block.shape
        for r in range(R):
            for c in range(C):
                total += e.palette[structure.block[r, c]].sum_of(rng, counts[:, r, c])
        return total
    perm = fisher_yates_batch(rng, size, e.n)
    ids = e.index[np.arange(e.n), perm]
    return CellSampler(e.palette).draw(ids, rng).sum(axis=1)


# Tail estimates


@dataclass(frozen=True)
class TailEstimate:
    p_hat: float
    std_err: float
    n_samples: int
    method: str
    flags: tuple = ()

    CSV_HEADER = ("p_hat", "std_err", "n_samples", "method", "flags")

    def csv_row(self):
        return (self.p_hat, self.std_err, self.n_samples, self.method, ";".join(self.flags))


def _naive_chunk_hits(e, threshold, seed, chunk_ids, sizes):
    hits = 0
    for k, size in zip(chunk_ids, sizes):
        s = sample_S_batch(e, size, make_rng(seed, k))
        hits += int(np.count_nonzero(s >= threshold))
    return hits


def _chunk_plan(N, e):
    # the block sampler costs O(1) per draw, whole permutations O(n)
    n = 1 if BlockStructure.detect(e).worthwhile else e.n
    chunk = max(1024, min(NAIVE_CHUNK, (1 << 22) // n))
    sizes = [chunk] * (N // chunk)
    if N % chunk:
        sizes.append(N % chunk)
    return sizes


def naive_tail(e: MatrixEnsemble, u: float, N: int, seed: int, workers: int = 1) -> TailEstimate:
    """Fraction of ``N`` draws with ``S_n >= u sqrt(B_n)``; binomial standard error."""
    if N < MIN_NAIVE_SAMPLES:
        raise ValueError(f"naive tail needs N >= {MIN_NAIVE_SAMPLES}, got {N}")
    threshold = u * math.sqrt(b_n(e)) - ATOM_TOL
    sizes = _chunk_plan(N, e)
    ids = list(range(len(sizes)))
    if workers > 1 and len(sizes) > 1:
        parts = [ids[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_naive_chunk_hits, e, threshold, seed, p, [sizes[k] for k in p]) for p in parts if p
            ]
            hits = sum(f.result() for f in futures)
    else:
        hits = _naive_chunk_hits(e, threshold, seed, ids, sizes)
    p = hits / N
    flags = ("below_resolution",) if hits == 0 else ()
    return TailEstimate(p, math.sqrt(p * (1 - p) / N), N, "naive", flags)


@dataclass(frozen=True)
class TiltedChainConfig:
    """Settings of the permutation chain; ``burn_in`` and ``thin`` count transposition proposals.

    ``batch_size`` is the number of recorded draws per chain in each batch, so
    a run keeps ``n_batches * batch_size * n_chains`` draws.
    """

    h: float
    burn_in: int
    thin: int
    n_batches: int
    batch_size: int
    seed: int
    n_chains: int = 256

    def __post_init__(self):
        if self.n_batches < 20:
            raise ValueError(f"n_batches must be >= 20, got {self.n_batches}")
        if self.thin < 1 or self.batch_size < 1 or self.n_chains < 1:
            raise ValueError("thin, batch_size and n_chains must be positive")
        if not self.h >= 0:
            raise ValueError(f"tilt h must be >= 0, got {self.h}")

    @classmethod
    def default(cls, e: MatrixEnsemble, h: float, seed: int, n_batches=20, batch_size=50, n_chains=256):
        n = e.n
        return cls(h, 50 * n * n, n, n_batches, batch_size, seed, n_chains)

    def validate_for(self, e: MatrixEnsemble):
        if self.burn_in < 10 * e.n:
            raise ValueError(f"burn_in must be >= 10 n = {10 * e.n}, got {self.burn_in}")


def metropolis_permutations(log_w, perms, n_steps, rng):
    """Advance chains over permutations by random-transposition Metropolis moves.

    ``perms`` has one chain per row; the target weight of a permutation ``p``
    is ``prod_i exp(log_w[i, p(i)])``. A move swaps ``p(i)`` and ``p(k)`` and
    only the four affected factors enter the acceptance ratio.
    """
    C, n = perms.shape
    rows = np.arange(C)
    for _ in range(n_steps):
        i = rng.integers(0, n, size=C)
        k = rng.integers(0, n - 1, size=C)
        k += k >= i
        pi, pk = perms[rows, i], perms[rows, k]
        delta = log_w[i, pk] + log_w[k, pi] - log_w[i, pi] - log_w[k, pk]
        accept = np.log(rng.random(C)) < delta
        perms[rows[accept], i[accept]] = pk[accept]
        perms[rows[accept], k[accept]] = pi[accept]
    return perms


def tilted_is_tail(e: MatrixEnsemble, u: float, cfg: TiltedChainConfig) -> TailEstimate:
    """Importance-sampling estimate of ``P(S_n >= u sqrt(B_n))`` under the conjugate law at tilt ``cfg.h``.

    Permutations follow a Metropolis chain with weights
    ``prod_i E exp(h X_{i p(i)} / sqrt(B_n))`` and entries are drawn from their
    tilted laws, which together reproduce the law of ``S_n / sqrt(B_n)``
    reweighted by ``exp(h t) / phi_n(h)``. Each draw ``T`` contributes
    ``phi_n(h) exp(-h T) 1{T >= u}``; the standard error comes from batch means.
    Above the permanent size guard ``phi_n(h)`` is replaced by the
    self-normalized ratio, which is biased and flagged.
    """
    cfg.validate_for(e)
    n = e.n
    sqrt_b = math.sqrt(b_n(e))
    h = cfg.h
    z = h / sqrt_b
    log_w = np.array([d.log_mgf_real(z) for d in e.palette])[e.index]
    sampler = CellSampler([d.tilt(z) for d in e.palette])
    self_normalized = n > TILT_MAX_N
    log_phi = 0.0 if (h == 0 or self_normalized) else tilted_state(e, h).log_mgf
    rng = make_rng(cfg.seed)
    perms = fisher_yates_batch(rng, cfg.n_chains, n)
    metropolis_permutations(log_w, perms, cfg.burn_in, rng)
    rows = np.arange(n)
    num = np.zeros(cfg.n_batches)
    den = np.zeros(cfg.n_batches)
    for b in range(cfg.n_batches):
        for _ in range(cfg.batch_size):
            metropolis_permutations(log_w, perms, cfg.thin, rng)
            t = sampler.draw(e.index[rows, perms], rng).sum(axis=1) / sqrt_b
            weight = np.exp(log_phi - h * t)
            num[b] += weight[t >= u - ATOM_TOL / sqrt_b].sum()
            den[b] += weight.sum()
    per_batch = cfg.batch_size * cfg.n_chains
    total = per_batch * cfg.n_batches
    if self_normalized:
        est = num / den
        p = float(num.sum() / den.sum())
        flags = ("self_normalized_biased",)
    else:
        est = num / per_batch
        p = float(est.mean())
        flags = ()
    se = float(est.std(ddof=1) / math.sqrt(cfg.n_batches))
    return TailEstimate(p, se, total, "tilted_is", flags)


def importance_config(e: MatrixEnsemble, u: float, seed: int, **kw) -> TiltedChainConfig:
    """Default chain configuration with the tilt chosen by :func:`importance_tilt`."""
    return TiltedChainConfig.default(e, importance_tilt(e, u), seed, **kw)


# Experiments


@dataclass(frozen=True)
class RatioRow:
    n: int
    u: float
    gamma_n: float
    p_hat: float
    std_err: float
    gauss_tail: float
    ratio: float
    method: str
    note: str = ""

    CSV_HEADER = ("n", "u", "gamma_n", "p_hat", "std_err", "gauss_tail", "ratio", "method", "note")

    def csv_row(self):
        return (self.n, self.u, self.gamma_n, self.p_hat, self.std_err, self.gauss_tail, self.ratio, self.method, self.note)

    @property
    def skipped(self):
        return self.method == "skipped"

    @property
    def ratio_se(self):
        return self.std_err / self.gauss_tail


def estimate_tail(e, u, N, seed, workers=1, method="auto", chain_kw=None) -> TailEstimate:
    """Tail estimate with automatic method choice: exact, then tilted IS, then naive."""
    chain_kw = chain_kw or {}
    if method in ("auto", "exact") and e.n <= EXACT_MAX_N and e.bounded:
        try:
            return TailEstimate(enumerate_law(e).tail(u * math.sqrt(b_n(e))), 0.0, 0, "exact")
        except FeasibilityError:
            if method == "exact":
                raise
    if method in ("auto", "tilted_is") and e.n <= TILT_MAX_N:
        try:
            return tilted_is_tail(e, u, importance_config(e, u, seed, **chain_kw))
        except CombsumError:
            if method == "tilted_is":
                raise
    return naive_tail(e, u, N, seed, workers)


def ratio_experiment(
    family: Callable[[int], MatrixEnsemble],
    n_list: Sequence[int],
    u_rule,
    N: int,
    seed: int,
    zone_slack: float | None = 1.0,
    workers: int = 1,
    method: str = "auto",
) -> list[RatioRow]:
    """Estimate ``P(S_n >= u sqrt(B_n)) / (1 - Phi(u))`` along a size-indexed family.

    ``u_rule`` is a number or a callable ``(n, ensemble) -> u``. Rows whose
    ``u`` exceeds ``zone_u_max(e, zone_slack)`` are skipped; pass
    ``zone_slack=None`` to disable the guard.
    """
    rows = []
    for n in n_list:
        e = family(n)
        u = float(u_rule(n, e) if callable(u_rule) else u_rule)
        g = max(gamma_terms(e))
        gt = gaussian_tail(u)
        if zone_slack is not None:
            edge = zone_u_max(e, zone_slack)
            if u > edge:
                rows.append(RatioRow(n, u, g, math.nan, math.nan, gt, math.nan, "skipped", f"u > zone edge {edge:.6g}"))
                continue
        try:
            est = estimate_tail(e, u, N, child_seed(seed, n), workers, method)
        except CombsumError as exc:
            rows.append(RatioRow(n, u, g, math.nan, math.nan, gt, math.nan, "skipped", str(exc)))
            continue
        rows.append(RatioRow(n, u, g, est.p_hat, est.std_err, gt, est.p_hat / gt, est.method, ";".join(est.flags)))
    return rows


def ks_distance(sample) -> float:
    """Kolmogorov distance between the empirical law of ``sample`` and the standard normal."""
    x = np.sort(np.asarray(sample, dtype=float))
    N = x.size
    F = ndtr(x)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


def ks_noise(N: int) -> float:
    """Standard deviation of the KS statistic for ``N`` draws under the null (Kolmogorov limit law)."""
    return float(kstwobign.std() / math.sqrt(N))


@dataclass(frozen=True)
class EsseenRow:
    n: int
    ks: float
    ks_sigma: float
    gamma_over_sqrt_n: float
    within_fit: bool

    CSV_HEADER = ("n", "ks", "ks_sigma", "gamma_over_sqrt_n", "within_fit")

    def csv_row(self):
        return (self.n, self.ks, self.ks_sigma, self.gamma_over_sqrt_n, int(self.within_fit))


@dataclass
class EsseenTable:
    rows: list = field(default_factory=list)
    fitted_C: float = math.nan


def esseen_sample(e: MatrixEnsemble, N: int, seed: int) -> np.ndarray:
    """``N`` draws of ``S_n / sqrt(B_n)`` (unnormalized when ``B_n = 0``)."""
    sizes = _chunk_plan(N, e)
    s = np.concatenate([sample_S_batch(e, size, make_rng(seed, k)) for k, size in enumerate(sizes)])
    total = float(np.sum(e.raw_moments(2)))
    return s / math.sqrt(total / e.n) if total > 0 else s


def esseen_decay(family: Callable[[int], MatrixEnsemble], n_list: Sequence[int], N: int, seed: int) -> EsseenTable:
    """KS distance of ``S_n / sqrt(B_n)`` to the normal law against ``gamma_n / sqrt(n)``.

    ``C`` is fitted by least squares through the origin and each row reports
    whether its KS distance lies below ``C gamma_n / sqrt(n)``.
    """
    raw = []
    for n in n_list:
        e = family(n)
        ks = ks_distance(esseen_sample(e, N, child_seed(seed, n)))
        try:
            g = max(gamma_terms(e)) / math.sqrt(n)
        except CombsumError:
            g = math.nan
        raw.append((n, ks, g))
    pairs = [(k, g) for _, k, g in raw if math.isfinite(g)]
    C = sum(k * g for k, g in pairs) / sum(g * g for _, g in pairs) if pairs else math.nan
    rows = [EsseenRow(n, ks, ks_noise(N), g, bool(math.isfinite(g) and ks <= C * g)) for n, ks, g in raw]
    return EsseenTable(rows, C)
