"""Acceptance suite: one check per criterion, each printed as a PASS/FAIL line.

Run under pytest (the lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from regenpoisson.chain import build_truncation, center, refine, stationary_dist
from regenpoisson.cli import main
from regenpoisson.diagnostics import constant_diff_check, harmonic_residual, poisson_residual, ui_limit_check
from regenpoisson.errors import HorizonExceeded, RegenPoissonError
from regenpoisson.gallery import (
    HarmonicSpec,
    birth_death,
    current_age,
    example1,
    example1_harmonic,
    example1_size,
    reflected_walk,
    renewal_tail_slope,
    two_state,
)
from regenpoisson.lyapunov import certify_thm7, queue_certificate, squared_cycle_moment
from regenpoisson.poisson import (
    DivergenceReport,
    SolveReport,
    asymptotic_variance,
    gstar_on_window,
    pi_gz,
    solve,
    solve_direct,
    solve_gstar,
    solve_gz,
    transient_mean,
)
from regenpoisson.regen import clt_experiment, estimate_ratio, lil_experiment

RESULTS = {}

# seeds are fixed once; they are not searched for passing values
CLT_SEED = 1
LIL_SEED = 5
MC_SEED = 1


def ind(z):
    return lambda s: 1.0 if s == z else 0.0


def level(s):
    return float(s)


def gallery_cases():
    """``(name, gallery, f, z)`` for every gallery chain."""
    return [
        ("two_state(0.5,0.5)", two_state(0.5, 0.5), ind(1), 0),
        ("birth_death(0.3)", birth_death(0.3), level, 0),
        ("reflected_walk{-2:.6,1:.4}", reflected_walk({-2: 0.6, 1: 0.4}), level, 0),
        ("example1(0.3,(1/4,1/8,1/8))", example1(0.3, (1 / 4, 1 / 8, 1 / 8)), ind(0), 0),
        ("current_age(3)", current_age(3.0), ind(0), 0),
    ]


def _timed_matvec(chain):
    x = np.ones(chain.n)
    t = time.perf_counter()
    for _ in range(20):
        chain.matrix @ x
    return (time.perf_counter() - t) / 20


def criterion_1():
    """Residual <= 1e-10 for all three solvers on the converged truncation, < 5 s per chain."""
    budget, ok, parts = 5.0, True, []
    for name, g, f, z in gallery_cases():
        t0 = time.perf_counter()
        res = {}
        try:
            rep = solve(g.kernel, f, z, "gz", max_size=2**18)
            chain = rep.chain
            res["gz"] = rep.residual
            pi = stationary_dist(chain)
            f_c, _ = center(f, pi, chain)
            res["direct"] = solve_direct(chain, f_c, z, pi=pi).residual
            # the series gets whatever is left of the time budget, at least 1000 terms
            left = budget - (time.perf_counter() - t0)
            horizon = int(min(100_000, max(1000, left / max(_timed_matvec(chain), 1e-9))))
            try:
                out = solve_gstar(chain, f_c, horizon=horizon, verdict=chain.states[: min(chain.n, 8)])
                res["gstar"] = out.residual if isinstance(out, SolveReport) else math.inf
            except HorizonExceeded:
                res["gstar"] = math.nan
        except RegenPoissonError as exc:
            parts.append(f"{name}: {type(exc).__name__}")
            ok = False
            continue
        dt = time.perf_counter() - t0
        good = all(v <= 1e-10 for v in res.values()) and dt < budget
        ok &= good
        shown = ", ".join(f"{k} {v:.1e}" for k, v in res.items())
        parts.append(f"{name} n={chain.n} [{shown}] {dt:.2f}s{'' if good else ' FAIL'}")
    return ok, "; ".join(parts)


def criterion_2():
    """g_z - g_y constant within 1e-9 and equal to g_z(y) for 5 random pairs."""
    rep = solve(birth_death(0.3).kernel, level, 0)
    chain = rep.chain
    pi = stationary_dist(chain)
    f_c, _ = center(level, pi, chain)
    rng = np.random.default_rng(2024)
    pairs = [tuple(int(v) for v in rng.choice(20, 2, replace=False)) for _ in range(5)]
    worst_dev, worst_const = 0.0, 0.0
    for z, y in pairs:
        out = constant_diff_check(chain, f_c, z, y)
        worst_dev = max(worst_dev, out.deviation)
        worst_const = max(worst_const, abs(out.constant - out.expected))
    ok = worst_dev <= 1e-9 and worst_const <= 1e-9
    return ok, f"pairs {pairs}; max sup-deviation {worst_dev:.1e}; max |const - g_z(y)| {worst_const:.1e}"


def criterion_3():
    """pi g_z two ways within 1e-8; transient asymptote within 1e-6 at n = 1000."""
    chain = solve(birth_death(0.3).kernel, level, 0).chain
    val, cross = pi_gz(chain, level, 0)
    gaps = []
    for x in (0, 3, 10):
        exact, asym = transient_mean(chain, level, 0, x, 1000)
        gaps.append(abs(exact - asym))
    ok = abs(val - cross) <= 1e-8 and max(gaps) < 1e-6
    return ok, f"pi g_z = {val:.12g} vs {cross:.12g} (diff {abs(val - cross):.1e}); transient gaps {max(gaps):.1e}"


def criterion_4():
    """Series converges with a constant offset for alpha = 3; diverges at 0 for alpha = 1.5."""
    g3 = current_age(3.0)
    chain = build_truncation(g3.kernel, 1024)
    pi = stationary_dist(chain)
    f_c, _ = center(ind(0), pi, chain)
    out = solve_gstar(chain, f_c)
    converged = isinstance(out, SolveReport)
    spread = float(np.ptp(out.g - solve_gz(chain, f_c, 0, pi=pi).g)) if converged else math.inf

    g15 = current_age(1.5)
    rep, _ = gstar_on_window(g15.kernel, ind(0), g15.closed_forms["lam"], [0], 10_000)
    diverges = isinstance(rep, DivergenceReport) and 0 in rep.states
    slope, _ = renewal_tail_slope(g15, 100, 10_000)
    ok = converged and spread <= 1e-8 and diverges and abs(slope + 0.5) <= 0.15
    return ok, (
        f"alpha=3: converged={converged}, ptp(g* - g_z)={spread:.1e}; "
        f"alpha=1.5: divergence at 0={diverges}, slope={slope:.4f}"
    )


def criterion_5():
    """Queue certificate verified with nonnegative margins and moment below the bound."""
    g = birth_death(0.3)
    q = queue_certificate(g.params["increments"])
    chain = build_truncation(g.kernel, 256)
    cert = certify_thm7(chain, q.f, q.v1, q.v2, q.K)
    z = q.K[0]

    def compute(c):
        val = squared_cycle_moment(c, q.f, z)
        return val, val

    moment = refine(g.kernel, compute).value
    bound = cert.moment_bound(z)
    margins = (cert.first.margin, cert.second.margin)
    ok = min(margins) >= 0 and math.isfinite(moment) and moment <= bound
    return ok, (
        f"a={q.a:g}, a'={q.a_prime:g}, K=0..{q.K[-1]}; margins {margins[0]:.4g}, {margins[1]:.4g}; "
        f"E_z(sum(|f|+1))^2 = {moment:.6g} <= {bound:.6g}"
    )


def criterion_6():
    """sigma^2 = 0.25 exactly, MC CI covers it, and the two exact formulas agree everywhere."""
    t0 = time.perf_counter()
    coin = two_state(0.5, 0.5)
    cyc, inner = asymptotic_variance(build_truncation(coin.kernel), ind(1), 0)
    est = estimate_ratio(coin.kernel, 0, "sum_fc_sq", 100_000, MC_SEED, f=ind(1), pi_f=0.5)
    worst = 0.0
    for name, g, f, z in gallery_cases():
        chain = solve(g.kernel, f, z, "gz", max_size=2**18).chain
        c, i = asymptotic_variance(chain, f, z)
        worst = max(worst, abs(c - i))
    dt = time.perf_counter() - t0
    ok = abs(cyc - 0.25) <= 1e-12 and est.covers(0.25) and worst <= 1e-9 and dt < 30
    return ok, (
        f"exact {cyc:.15g}; MC {est.point:.5f} +/- {est.ci_half_width:.5f}; "
        f"max |cycle - inner| over gallery {worst:.1e}; {dt:.1f}s"
    )


def criterion_7():
    """KS distance below 1.36/sqrt(R) + 0.01 on both chains, R = 2000, n = 1e4."""
    t0 = time.perf_counter()
    out = []
    for name, g, f in (("two_state", two_state(0.5, 0.5), ind(1)), ("birth_death", birth_death(0.3), level)):
        res = clt_experiment(g.kernel, f, 10_000, 2000, CLT_SEED)
        out.append((name, res.ks_distance, res.threshold, res.passed))
    dt = time.perf_counter() - t0
    ok = all(p for *_, p in out) and dt < 120
    return ok, "; ".join(f"{n} KS {k:.4f} < {t:.4f}" for n, k, t, _ in out) + f"; {dt:.1f}s"


def criterion_8():
    """Final-decade LIL supremum in [0.4, 1.6] on both chains at n_max = 1e6."""
    out = []
    for name, g, f in (("two_state", two_state(0.5, 0.5), ind(1)), ("birth_death", birth_death(0.3), level)):
        res = lil_experiment(g.kernel, f, 10**6, LIL_SEED)
        out.append((name, res.final_decade_sup, res.in_band(0.4, 1.6)))
    ok = all(p for *_, p in out)
    return ok, "; ".join(f"{n} sup {s:.4f}" for n, s, _ in out)


def criterion_9():
    """UI gap separates g_z (< 1e-8) from g_z + h (> 0.1); h harmonic; g_z + h solves the equation."""
    p, r = 0.3, (0.25, 0.25)
    g = example1(p, r)
    h = example1_harmonic(HarmonicSpec(0.0, (1.0, -1.0), p))
    # absolute residuals on a shallow window where h is O(1e4)
    small = build_truncation(g.kernel, example1_size(2, 12))
    pi = stationary_dist(small)
    f_c, _ = center(ind(0), pi, small)
    g_small = solve_gz(small, f_c, 0, pi=pi).g
    h_res = harmonic_residual(small, h)
    p_res = poisson_residual(small, g_small + small.evaluate(h), f_c)
    # the UI recursion needs every path of 60 steps to stay inside the window
    big = build_truncation(g.kernel, example1_size(2, 70))
    pi = stationary_dist(big)
    f_c, _ = center(ind(0), pi, big)
    gz = solve_gz(big, f_c, 0, pi=pi).g
    u_g = ui_limit_check(big, gz, f_c, 0, (1, 1), 60)
    u_h = ui_limit_check(big, gz + big.evaluate(h), f_c, 0, (1, 1), 60)
    ok = u_g.gap < 1e-8 and u_h.gap > 0.1 and h_res <= 1e-10 and p_res <= 1e-9
    return ok, (
        f"ui gap g_z {u_g.gap:.1e}, g_z+h {u_h.gap:.4g}; harmonic residual {h_res:.1e}; "
        f"poisson residual of g_z+h {p_res:.1e}"
    )


def criterion_10():
    """95% CIs cover pi f = 1/2 in 180..198 of 200 seeded repetitions."""
    k = two_state(0.5, 0.5).kernel
    hits = sum(estimate_ratio(k, 0, "sum_f", 2000, seed, f=ind(1)).covers(0.5) for seed in range(200))
    return 180 <= hits <= 198, f"{hits}/200 intervals cover 0.5"


def criterion_11():
    """Two clt runs with the same seed write byte-identical CSV bodies."""
    cfg_text = (
        "[chain]\nname = two_state\na = 0.5\nb = 0.5\n\n[function]\nkind = indicator\nstates = 1\n\n"
        "[mc]\nseed = 20240101\nreplications = 2000\nhorizon = 10000\n"
    )
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "clt.ini"
        cfg.write_text(cfg_text)
        codes = [main(["clt", "--config", str(cfg), "--out-dir", str(tmp / d)]) for d in ("a", "b")]
        a, b = ((tmp / d / "clt.csv").read_bytes() for d in ("a", "b"))
    ok = a == b and codes == [0, 0]
    return ok, f"exit codes {codes}; {len(a)} bytes; identical={a == b}"


CRITERIA = [
    (1, "Poisson residual for every solver", criterion_1),
    (2, "additive constant between reference states", criterion_2),
    (3, "pi g_z two ways and transient asymptote", criterion_3),
    (4, "potential series: constant offset and divergence", criterion_4),
    (5, "second-moment drift certificate for the queue", criterion_5),
    (6, "variance constant identities", criterion_6),
    (7, "central limit theorem", criterion_7),
    (8, "law of the iterated logarithm (qualitative)", criterion_8),
    (9, "uniform integrability separates solutions", criterion_9),
    (10, "confidence interval calibration", criterion_10),
    (11, "CLI determinism", criterion_11),
]


def report_lines():
    return [
        f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        for num, title, (ok, detail) in sorted((n, t, RESULTS[n]) for n, t, _ in CRITERIA if n in RESULTS)
    ]


@pytest.mark.parametrize("num,title,check", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(num, title, check):
    ok, detail = check()
    RESULTS[num] = (ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for num, title, check in CRITERIA:
        RESULTS[num] = check()
        print(report_lines()[-1], flush=True)
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
