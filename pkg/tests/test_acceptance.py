"""Acceptance criteria 1-9. Each test records one PASS/FAIL line (see conftest)."""

import itertools
import math
import time

import numpy as np
import pytest

from combsum import (
    FiniteDiscrete,
    PointMass,
    SignedExponential,
    check_bernstein,
    checkerboard,
    degenerate,
    enumerate_law,
    gamma_n,
    k_sequence,
    mgf_exact,
    permanent,
    rademacher,
    row_constant,
    solve_saddlepoint,
    var_S,
)
from combsum.ensemble import latin_square, random_ensemble
from combsum.exact import merge_atoms
from combsum.mc import esseen_decay, importance_config, ks_noise, ratio_experiment, tilted_is_tail
from combsum.stats import b_n, zone_u_max
from combsum.tilt import _state, h_max

from conftest import GRID3, SQRT2


# 1. exact-oracle equivalence


def _random_small(rng, k):
    n = int(rng.integers(2, 7))
    return random_ensemble(rng, n, "degenerate" if k % 2 == 0 else "discrete")


def test_c1_exact_oracle_equivalence(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_mgf = worst_var = 0.0
    for k in range(20):
        e = _random_small(rng, k)
        law = enumerate_law(e)
        sb = math.sqrt(b_n(e))
        for z in (0.3, -0.7, 0.4 + 0.9j, 1.1 - 0.2j):
            # enumeration side: E exp(z S / sqrt(B_n)) from the law, no permanent
            ref = complex(np.sum(law.probs * np.exp(z * law.values / sb)))
            worst_mgf = max(worst_mgf, abs(mgf_exact(e, z) - ref) / abs(ref))
        es2 = float(np.sum(law.probs * law.values**2))
        worst_var = max(worst_var, abs(var_S(e) - es2) / es2)
    elapsed = time.perf_counter() - start
    ok = worst_mgf <= 1e-10 and worst_var <= 1e-10 and elapsed < 10
    report(
        "criterion 1 exact-oracle equivalence",
        ok,
        f"max rel mgf err {worst_mgf:.2e}, max rel var err {worst_var:.2e} (tol 1e-10), {elapsed:.2f}s (< 10s)",
    )
    assert ok


# 2. permanent correctness


def _naive_permanent(A):
    n = A.shape[0]
    return sum(math.prod(A[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_c2_permanent(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(50):
        n = 1 + k % 7
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        ref = _naive_permanent(A)
        worst = max(worst, abs(permanent(A) - ref) / abs(ref))
    A = rng.uniform(0.5, 1.5, size=(18, 18))
    start = time.perf_counter()
    permanent(A)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    report("criterion 2 permanent", ok, f"max rel err {worst:.2e} (tol 1e-12), n=18 in {elapsed:.2f}s (< 5s)")
    assert ok


# 3. gamma_n >= 1 and scale invariance


def _fuzz_ensembles(rng, count):
    kinds = ("degenerate", "discrete", "zero_mean", "mixed")
    for k in range(count):
        r = k % 6
        n = int(rng.integers(2, 9))
        if r < 4:
            if kinds[r] == "mixed" and n < 3:
                n = 3
            yield random_ensemble(rng, n, kinds[r])
        elif r == 4:
            yield checkerboard(2 * int(rng.integers(1, 6)), rate=float(rng.uniform(0.2, 5)))
        else:
            yield row_constant([FiniteDiscrete(((-a, 0.5), (a, 0.5))) for a in rng.uniform(0.1, 4, size=n)])


def test_c3_gamma_lower_bound_and_scale(report):
    rng = np.random.default_rng(3)
    lowest, worst_scale = math.inf, 0.0
    for e in _fuzz_ensembles(rng, 1000):
        g = gamma_n(e).gamma_n
        lowest = min(lowest, g)
        lam = float(rng.uniform(0.01, 100))
        worst_scale = max(worst_scale, abs(gamma_n(e.scaled(lam)).gamma_n - g) / g)
    ok = lowest >= 1.0 and worst_scale <= 1e-12
    report("criterion 3 gamma_n", ok, f"min gamma_n {lowest:.6f} (>= 1), max rel scale drift {worst_scale:.2e} (tol 1e-12)")
    assert ok


# 4. Bernstein condition with D = 1


def test_c4_bernstein_examples(report):
    bounded = degenerate(GRID3)
    alpha, beta = 1.0, 2.5
    palette = [SignedExponential(alpha, 1), SignedExponential(alpha, -1), SignedExponential(beta, 1), SignedExponential(beta, -1)]
    expo = latin_square(palette, M=1 / min(alpha, beta))
    r1 = check_bernstein(bounded, D=1, K=20)
    r2 = check_bernstein(expo, D=1, K=20)
    ok = r1.passed and r2.passed and bounded.M == 1.0
    report(
        "criterion 4 bernstein",
        ok,
        f"bounded M={bounded.M:g} minimal D {r1.minimal_D:.4g}; exponential M={expo.M:g} minimal D {r2.minimal_D:.4g}; K=20",
    )
    assert ok


# 5. saddlepoint solver


def _saddle_cases(rng, count):
    kinds = ("degenerate", "discrete", "zero_mean", "mixed")
    k = 0
    while k < count:
        n = int(rng.integers(3, 9))
        e = random_ensemble(rng, n, kinds[k % 4]) if k % 5 else checkerboard(2 * int(rng.integers(2, 6)))
        m_edge = _state(e, h_max(e)).m
        u = float(rng.uniform(0.05, min(4.0, 0.95 * m_edge)))
        yield e, u
        k += 1


def _n12_ensembles():
    rng = np.random.default_rng(12)
    out = [("checkerboard +-Exp(1)", checkerboard(12))]
    out += [(f"zero-mean scales #{i}", random_ensemble(rng, 12, "zero_mean")) for i in range(3)]
    out.append(("identical-columns signs", rademacher(np.ones((12, 12)))))
    return out


def test_c5_saddlepoint(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for e, u in _saddle_cases(rng, 100):
        r = solve_saddlepoint(e, u)
        worst = max(worst, r.residual / (1e-10 * max(1.0, u)))
    # h = u + o(1): checked on u from 1 to the normal-convergence zone edge
    worst_dev, where = 0.0, ""
    for name, e in _n12_ensembles():
        edge = max(1.0, zone_u_max(e, 1.0))
        for u in np.linspace(1.0, edge, 5):
            dev = abs(solve_saddlepoint(e, float(u)).h / u - 1)
            if dev > worst_dev:
                worst_dev, where = dev, f"{name} at u={u:.3f}"
    ok = worst <= 1.0 and worst_dev <= 0.10
    report(
        "criterion 5 saddlepoint",
        ok,
        f"max residual / (1e-10 max(1,u)) = {worst:.3f} over 100 cases; max |h/u - 1| at n=12 = {worst_dev:.4f} ({where}) (tol 0.10)",
    )
    assert ok


# 6. conjugate-sampler validation


def test_c6_conjugate_sampler(report):
    start = time.perf_counter()
    rows = []
    e = degenerate(GRID3)
    u = 3 / SQRT2
    est = tilted_is_tail(e, u, importance_config(e, u, seed=60))
    rows.append(("3x3 grid", 1 / 6, est))
    rng = np.random.default_rng(6)
    for k in range(2):
        e = random_ensemble(rng, 6, "discrete")
        law = enumerate_law(e)
        sb = math.sqrt(b_n(e))
        tails = np.cumsum(law.probs[::-1])[::-1]
        for target in (1e-1, 1e-2, 1e-3):
            v = float(law.values[tails >= target].max())
            p = law.tail(v)
            est = tilted_is_tail(e, v / sb, importance_config(e, v / sb, seed=61 + k))
            rows.append((f"n=6 discrete #{k} level {target:g}", p, est))
    elapsed = time.perf_counter() - start
    zs = [abs(est.p_hat - p) / est.std_err for _, p, est in rows]
    ok = max(zs) <= 4 and elapsed < 60 and min(p for _, p, _ in rows) <= 1.1e-3
    detail = "; ".join(f"{name}: exact {p:.4g} est {est.p_hat:.4g} z={z:.2f}" for (name, p, est), z in zip(rows, zs))
    report("criterion 6 conjugate sampler", ok, f"max |z| {max(zs):.2f} (tol 4), {elapsed:.1f}s (< 60s); {detail}")
    assert ok


# 7. ratio trend along the checkerboard family


@pytest.mark.slow
def test_c7_theorem_ratio_trend(report):
    start = time.perf_counter()
    # u = 2 lies beyond the diagnostic zone edge for n <= 200 (gamma_n ~ 2.12), so the guard is off
    rows = ratio_experiment(checkerboard, [50, 100, 200, 400], 2.0, 10**7, seed=7, zone_slack=None, workers=8)
    elapsed = time.perf_counter() - start
    dev = [abs(r.ratio - 1) for r in rows]
    se = [r.ratio_se for r in rows]
    pairwise = all(dev[k + 1] <= dev[k] + 4 * math.hypot(se[k], se[k + 1]) for k in range(len(rows) - 1))
    windows = []
    for k in range(len(rows) - 2):
        # 3-point moving average of |ratio - 1| must not increase beyond noise
        a = (dev[k] + dev[k + 1] + dev[k + 2]) / 3
        windows.append(a)
    win_se = [math.sqrt(sum(s * s for s in se[k : k + 3])) / 3 for k in range(len(rows) - 2)]
    smooth = all(
        windows[k + 1] <= windows[k] + 4 * math.hypot(win_se[k], win_se[k + 1]) for k in range(len(windows) - 1)
    )
    last = rows[-1].ratio
    ok = 0.8 <= last <= 1.2 and pairwise and smooth and elapsed < 15 * 60
    table = ", ".join(f"n={r.n}: {r.ratio:.4f}+-{r.ratio_se:.4f} ({r.method})" for r in rows)
    report("criterion 7 ratio trend", ok, f"{table}; n=400 in [0.8, 1.2]: {0.8 <= last <= 1.2}; monotone within 4 sigma: {pairwise and smooth}; {elapsed:.0f}s")
    assert ok


# 8. Esseen decay


@pytest.mark.slow
def test_c8_esseen_decay(report):
    N = 10**6
    table = esseen_decay(checkerboard, [100, 400], N, seed=8)
    ks100, ks400 = table.rows[0].ks, table.rows[1].ks
    sigma = math.sqrt(2) * ks_noise(N)
    sep = (ks100 - ks400) / sigma
    ok = sep >= 4
    report(
        "criterion 8 esseen decay",
        ok,
        f"KS(n=100)={ks100:.3e}, KS(n=400)={ks400:.3e}, separation {sep:.2f} sigma (need >= 4, sigma={sigma:.2e} at N=1e6)",
    )
    assert ok


# 9. identical-columns reduction


def _independent_sum(laws):
    """Law of a sum of independent finite variables by repeated pairwise convolution (dictionary oracle)."""
    acc = {0.0: 1.0}
    for d in laws:
        atoms = [(d.c, 1.0)] if isinstance(d, PointMass) else list(d.atoms)
        nxt = {}
        for v, p in acc.items():
            for a, q in atoms:
                nxt[v + a] = nxt.get(v + a, 0.0) + p * q
        acc = nxt
    values = np.array(sorted(acc))
    return merge_atoms(values, np.array([acc[v] for v in values]))


def test_c9_identical_columns(report):
    rng = np.random.default_rng(9)
    worst_v = worst_p = 0.0
    count = 0
    for n in range(2, 7):
        for _ in range(3):
            laws = []
            for _ in range(n):
                k = int(rng.integers(1, 4))
                vals = rng.integers(-4, 5, size=k) * 0.5 if k > 1 else np.zeros(1)
                vals = np.unique(vals) if k > 1 else vals
                probs = rng.dirichlet(np.ones(len(vals)))
                laws.append(FiniteDiscrete.from_arrays(vals - probs @ vals, probs))
            e = row_constant(laws)
            law = enumerate_law(e)
            v, p = _independent_sum(laws)
            if len(v) != len(law.values):
                worst_v = math.inf
                continue
            worst_v = max(worst_v, float(np.max(np.abs(v - law.values))))
            worst_p = max(worst_p, float(np.max(np.abs(p - law.probs))))
            count += 1
    ok = worst_v <= 1e-12 and worst_p <= 1e-12
    report("criterion 9 identical columns", ok, f"{count} ensembles, max atom value diff {worst_v:.2e}, max prob diff {worst_p:.2e} (tol 1e-12)")
    assert ok
