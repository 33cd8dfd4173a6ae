"""Command-line front end.

Every command writes ``<command>.csv`` (plus occasional companion tables)
and ``<command>.json`` with run metadata into the output directory.  Exit
status is 0 on success, 2 when a check fails and 1 on input errors.
"""

import argparse
import datetime
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .chain import build_truncation, detect_period, refine, refined_stationary, stationary_dist, validate_kernel
from .config import build_chain, build_function, load_config, polynomial
from .diagnostics import CheckRow, harmonic_residual, poisson_residual, ui_limit_check
from .errors import (
    ConfigError,
    ConditionViolated,
    DriftViolated,
    HorizonExceeded,
    PeriodicChain,
    RegenPoissonError,
)
from .gallery import (
    HarmonicSpec,
    current_age,
    example1,
    example1_harmonic,
    example1_size,
    inter_renewal_pmf,
    renewal_sequence,
    renewal_tail_slope,
)
from .lyapunov import certify_thm5, certify_thm7, check_drift, queue_certificate, squared_cycle_moment
from .poisson import (
    DivergenceReport,
    _chain_cycle_moment,
    asymptotic_variance,
    gstar_on_window,
    pi_gz,
    solve,
    taboo_solve,
)
from .regen import clt_experiment, estimate_ratio, lil_experiment, simulate_cycles
from .tables import write_csv, write_json

COMMANDS = (
    "validate",
    "stationary",
    "solve",
    "moments",
    "lyapunov",
    "simulate",
    "clt",
    "lil",
    "demo-example1",
    "demo-example2",
)
DEMOS = ("demo-example1", "demo-example2")
METHODS = ("gz", "direct", "gstar")


class CheckFailed(Exception):
    """A command ran to completion but its check did not pass."""


class Run:
    """State shared by one command invocation."""

    def __init__(self, command, cfg, args):
        self.command = command
        self.cfg = cfg
        self.args = args
        if args.out_dir:
            self.out = Path(args.out_dir)
        elif cfg is not None and cfg.get("output", "dir"):
            # relative to the config file, like every other path in it
            self.out = cfg.base / cfg.get("output", "dir")
        else:
            self.out = Path(".")
        self.meta = {"command": command, "trace": []}
        if args.seed is not None:
            self.seed = args.seed
        elif cfg is not None and cfg.get("mc", "seed") is not None:
            self.seed = cfg.seed
        else:
            self.seed = None
        self.meta["seed"] = self.seed

    def truncation(self):
        opts = dict(self.cfg.truncation) if self.cfg else {}
        if self.args.trunc_size is not None:
            opts["size"] = self.args.trunc_size
        return opts

    def csv(self, header, rows, suffix=""):
        path = self.out / f"{self.command}{suffix}.csv"
        write_csv(path, header, rows)
        self.meta.setdefault("files", []).append(path.name)
        return path

    def finish(self, **results):
        self.meta.update(results)
        self.meta["config"] = self.cfg.raw if self.cfg else {}
        self.meta["versions"] = {
            "regenpoisson": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        }
        self.meta["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        write_json(self.out / f"{self.command}.json", self.meta)


def _model(run):
    cfg = run.cfg
    gallery = build_chain(cfg)
    return gallery, build_function(cfg)


def _converged_chain(run, kernel, f, z):
    """Truncation selected by refining ``g_z``; its trace goes into the metadata."""
    opts = run.truncation()
    rep = solve(kernel, f, z, "gz", **opts)
    run.meta["trace"] = rep.refinement_trace
    return rep.chain, rep


def cmd_validate(run):
    gallery = build_chain(run.cfg)
    kernel = gallery.kernel
    size = kernel.size if kernel.finite else run.truncation()["size"]
    chain = build_truncation(kernel, size, run.truncation()["policy"])
    rep = validate_kernel(chain)
    period = detect_period(chain)
    rows = [
        ["max_row_deviation", rep.max_row_deviation, not rep.row_sum_violations],
        ["negative_entries", rep.negative_entries, rep.negative_entries == 0],
        ["irreducible", rep.irreducible, rep.irreducible],
        ["period", period, True],
        ["max_leak", chain.max_leak, True],
    ]
    run.csv(["check", "value", "passed"], rows)
    run.finish(size=chain.n, messages=rep.messages, passed=rep.passed)
    if not rep.passed:
        raise CheckFailed("; ".join(rep.messages))


def cmd_stationary(run):
    gallery = build_chain(run.cfg)
    refined = refined_stationary(gallery.kernel, **run.truncation())
    pi, chain = refined.value, refined.chain
    exact = gallery.closed_forms.get("pi")
    rows = []
    for s, p in zip(chain.states, pi.probs):
        rows.append([s, p, exact(s) if exact else math.nan])
    run.csv(["state", "pi", "closed_form"], rows)
    run.meta["trace"] = refined.trace
    run.finish(residual=pi.residual, size=chain.n, max_leak=chain.max_leak)


def cmd_solve(run):
    gallery, f = _model(run)
    z = run.cfg.z
    method = run.args.method or run.cfg.get("solve", "method", "gz")
    if method not in METHODS + ("all",):
        raise ConfigError(f"unknown solve method {method!r}", run.cfg.lineno("solve", "method"))
    horizon = run.cfg.number("solve", "horizon", 100_000, int, positive=True)
    chain, gz = _converged_chain(run, gallery.kernel, f, z)
    methods = METHODS if method == "all" else (method,)
    reports, verdicts = {}, {}
    for m in methods:
        if m == "gz":
            reports[m] = gz
            continue
        out = solve(chain, f, z, m, horizon=horizon)
        if isinstance(out, DivergenceReport):
            verdicts[m] = f"diverges at {out.states[:10]} after {out.n_terms} terms"
            continue
        reports[m] = out
    if method != "all":
        if method in reports:
            rep = reports[method]
            run.csv(["state", "g", "residual"], zip(rep.states, rep.g, rep.residuals))
    else:
        header = ["state"] + [f"g_{m}" for m in reports] + [f"residual_{m}" for m in reports]
        cols = [r.g for r in reports.values()] + [r.residuals for r in reports.values()]
        run.csv(header, ([s] + [c[i] for c in cols] for i, s in enumerate(chain.states)))
        pairs = []
        names = list(reports)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                d = reports[a].g - reports[b].g
                mid = 0.5 * (d.max() + d.min())
                pairs.append([f"{a}-{b}", mid, float(np.max(np.abs(d - mid)))])
        run.csv(["pair", "constant", "sup_deviation"], pairs, suffix="_pairs")
    summary = {m: r.summary_line() for m, r in reports.items()}
    run.finish(z=z, size=chain.n, residuals={m: r.residual for m, r in reports.items()}, summary=summary, divergence=verdicts)
    if verdicts:
        raise CheckFailed("; ".join(f"{m}: {v}" for m, v in verdicts.items()))


def cmd_moments(run):
    gallery, f = _model(run)
    z = run.cfg.z
    chain, gz = _converged_chain(run, gallery.kernel, f, z)
    pi = stationary_dist(chain)
    zi = chain.idx(z)
    fv = chain.evaluate(f)
    f_c = fv - gz.pi_f
    rows = [
        ["pi_f", gz.pi_f, "ok"],
        ["mean_return_time", taboo_solve(chain, np.ones(chain.n), z)[zi], "ok"],
        ["inverse_pi_z", 1.0 / pi.probs[zi], "ok"],
        ["cycle_abs_fc", _chain_cycle_moment(chain, np.abs(f_c), z, None, 1), "ok"],
        ["weighted_cycle_abs_fc", _chain_cycle_moment(chain, np.abs(f_c), z, None, 2), "ok"],
    ]
    cycle, inner = asymptotic_variance(chain, f, z)
    rows += [["sigma2_cycle", cycle, "ok"], ["sigma2_inner", inner, "ok"]]
    try:
        weighted, direct = pi_gz(chain, f, z)
        rows += [["pi_gz_weighted", weighted, "ok"], ["pi_gz_direct", direct, "ok"]]
    except (PeriodicChain, ConditionViolated) as exc:
        rows += [["pi_gz_weighted", math.nan, type(exc).__name__], ["pi_gz_direct", math.nan, type(exc).__name__]]
    closed = gallery.closed_forms.get("sigma2_indicator1")
    if closed is not None:
        rows.append(["sigma2_closed_form_indicator1", closed, "ok"])
    run.csv(["quantity", "value", "status"], rows)
    run.finish(z=z, size=chain.n)


def _drift_rows(name, cert):
    return [name, cert.K, cert.margin, cert.d, cert.c, cert.skeleton_max, cert.n_checked, cert.verified]


DRIFT_HEADER = ["condition", "K", "margin", "d", "c", "skeleton_max", "n_checked", "verified"]


def cmd_lyapunov(run):
    cfg = run.cfg
    gallery = build_chain(cfg)
    kernel = gallery.kernel
    mode = cfg.get("lyapunov", "mode", "drift").lower()
    size = kernel.size if kernel.finite else run.truncation()["size"]
    chain = build_truncation(kernel, size, run.truncation()["policy"])
    rows, text, results = [], [], {"mode": mode, "size": chain.n}
    try:
        if mode == "queue":
            inc = gallery.params.get("increments")
            if inc is None:
                raise cfg.error("lyapunov", "mode", "queue mode needs a reflected_walk chain")
            q = queue_certificate(inc)
            results.update(a=q.a, a_prime=q.a_prime, K=q.K)
            text.append(f"queue certificate: a = {q.a:.6g}, a' = {q.a_prime:.6g}, K = {q.K}")
            cert = certify_thm7(chain, q.f, q.v1, q.v2, q.K)
            rows += [_drift_rows("first", cert.first), _drift_rows("second", cert.second)]
            text.append(cert.report())
            _thm7_moment(run, kernel, q.f, cert, rows, text, results)
        elif mode == "drift":
            K = cfg.states("lyapunov", "k")
            cert = check_drift(chain, polynomial(cfg, "lyapunov", "v"), polynomial(cfg, "lyapunov", "w"), K)
            rows.append(_drift_rows("drift", cert))
            text.append(cert.report())
        elif mode == "thm5":
            K = cfg.states("lyapunov", "k")
            vs = [polynomial(cfg, "lyapunov", f"v{i}") for i in (1, 2, 3, 4)]
            cert = certify_thm5(chain, build_function(cfg), *vs, K)
            rows += [_drift_rows(name, c) for name, c in cert.conditions.items()]
            text.append(cert.report())
            results["conclusions"] = cert.conclusions
        elif mode == "thm7":
            K = cfg.states("lyapunov", "k")
            f = build_function(cfg)
            cert = certify_thm7(chain, f, polynomial(cfg, "lyapunov", "v1"), polynomial(cfg, "lyapunov", "v2"), K)
            rows += [_drift_rows("first", cert.first), _drift_rows("second", cert.second)]
            text.append(cert.report())
            _thm7_moment(run, kernel, f, cert, rows, text, results)
        else:
            raise cfg.error("lyapunov", "mode", f"unknown mode {mode!r}")
    except DriftViolated as exc:
        if exc.certificate is not None:
            rows.append(_drift_rows("violated", exc.certificate))
        text.append(f"DriftViolated: {exc}")
        _write_lyapunov(run, rows, text)
        run.finish(**results, verified=False)
        raise CheckFailed(str(exc)) from None
    _write_lyapunov(run, rows, text)
    run.finish(**results, verified=True)


def _thm7_moment(run, kernel, f, cert, rows, text, results):
    """Exact squared cycle moment at the first state of ``K`` against its bound."""
    z = cert.K[0]

    def compute(chain):
        val = squared_cycle_moment(chain, f, z)
        return val, val

    moment = refine(kernel, compute, **run.truncation()).value
    bound = cert.moment_bound(z)
    results.update(z=z, squared_cycle_moment=moment, bound=bound, chained_bound=cert.moment_bound_chained(z))
    text.append(f"E_z (sum (|f|+1))^2 = {moment:.6g} <= bound {bound:.6g} at z = {z!r}")
    if not moment <= bound:
        raise CheckFailed(f"squared cycle moment {moment:.6g} exceeds bound {bound:.6g}")


def _write_lyapunov(run, rows, text):
    run.csv(DRIFT_HEADER, rows)
    path = run.out / "lyapunov.txt"
    path.write_text("\n".join(text) + "\n")
    print("\n".join(text))


def cmd_simulate(run):
    gallery, f = _model(run)
    z = run.cfg.z
    n_cycles = run.cfg.number("mc", "cycles", 100_000, int, positive=True)
    chain, _ = _converged_chain(run, gallery.kernel, f, z)
    pi_f = float(np.dot(stationary_dist(chain).probs, chain.evaluate(f)))
    sigma2, _ = asymptotic_variance(chain, f, z)
    try:
        pig = pi_gz(chain, f, z)[0]
    except (PeriodicChain, ConditionViolated):
        pig = math.nan
    cycles = simulate_cycles(gallery.kernel, z, f, pi_f, n_cycles, run.seed)
    rows = []
    for field, exact in (("tau", 1.0), ("sum_f", pi_f), ("sum_fc_sq", sigma2), ("sum_weighted_fc_signed", pig)):
        est = estimate_ratio(gallery.kernel, z, field, n_cycles, run.seed, f=f, pi_f=pi_f, cycles=cycles)
        covered = est.covers(exact) if math.isfinite(exact) else ""
        rows.append([field, est.point, est.ci_half_width, est.std_error, est.n_cycles, exact, covered])
    run.csv(["quantity", "estimate", "ci_half_width", "std_error", "n_cycles", "exact", "covered"], rows)
    run.finish(z=z, pi_f=pi_f, n_cycles=n_cycles)


def cmd_clt(run):
    gallery, f = _model(run)
    n = run.cfg.number("mc", "horizon", 10_000, int, positive=True)
    R = run.cfg.number("mc", "replications", 2000, int, positive=True)
    z = run.cfg.z
    res = clt_experiment(gallery.kernel, f, n, R, run.seed, x0=z, z=z)
    run.csv(["replication", "value"], enumerate(res.values))
    run.finish(
        n=n, replications=R, ks_distance=res.ks_distance, threshold=res.threshold,
        sigma=res.sigma, sigma_hat=res.sigma_hat, pi_f=res.pi_f, passed=res.passed,
    )
    print(f"KS distance {res.ks_distance:.4f} (threshold {res.threshold:.4f})")
    if not res.passed:
        raise CheckFailed("KS distance above threshold")


def cmd_lil(run):
    gallery, f = _model(run)
    n_max = run.cfg.number("mc", "n_max", 10**6, int, positive=True)
    z = run.cfg.z
    res = lil_experiment(gallery.kernel, f, n_max, run.seed, x0=z, z=z)
    keep = np.unique(np.geomspace(1, res.n.size, 500).astype(int) - 1)
    run.csv(["n", "L", "running_sup"], zip(res.n[keep], res.L[keep], res.running_sup[keep]))
    band = res.in_band(0.4, 1.6)
    run.finish(n_max=n_max, final_decade_sup=res.final_decade_sup, degenerate=res.degenerate, in_band=band)
    print(f"final-decade supremum {res.final_decade_sup:.4f}")
    if not band:
        raise CheckFailed("final-decade supremum outside [0.4, 1.6]")


def cmd_demo_example1(run):
    p, r, coeffs, z, x, n_max = 0.3, (0.25, 0.25), (1.0, -1.0), 0, (1, 1), 60
    gallery = example1(p, r)
    h = example1_harmonic(HarmonicSpec(0.0, coeffs, p))
    f = lambda s: 1.0 if s == 0 else 0.0  # noqa: E731
    checks, out = [], {}
    for levels in (12, n_max + 10):
        chain = build_truncation(gallery.kernel, example1_size(len(r), levels))
        pi = stationary_dist(chain)
        f_c = chain.evaluate(f) - float(np.dot(pi.probs, chain.evaluate(f)))
        g = solve(chain, f, z).g
        gh = g + chain.evaluate(h)
        out[levels] = (chain, f_c, g, gh)
        # beyond a dozen levels h ~ (q/p)^i is so large that only relative residuals are meaningful
        rel = levels > 12
        checks.append(CheckRow(f"harmonic_residual_L{levels}", "h", harmonic_residual(chain, h, relative=rel), 1e-10, False))
        res = poisson_residual(chain, gh, f_c)
        if rel:
            res /= max(1.0, float(np.abs(gh).max()))
        checks.append(CheckRow(f"poisson_residual_L{levels}", "g_z+h", res, 1e-9, False))
    chain, f_c, g, gh = out[n_max + 10]
    u_g = ui_limit_check(chain, g, f_c, z, x, n_max)
    u_h = ui_limit_check(chain, gh, f_c, z, x, n_max)
    checks.append(CheckRow("ui_gap", "g_z", u_g.gap, 1e-8, False))
    checks.append(CheckRow("ui_gap", "g_z+h", u_h.gap, 0.1, False))
    for c in checks:
        c.passed = c.value > c.threshold if c.quantity == "g_z+h" and c.check == "ui_gap" else c.value <= c.threshold
    run.csv(["n", "stopped_abs_gz", "stopped_abs_gz_plus_h", "survival"], zip(u_g.n, u_g.sequence, u_h.sequence, u_g.survival))
    run.csv(["check", "quantity", "value", "threshold", "passed"], (c.as_list() for c in checks), suffix="_checks")
    run.finish(
        p=p, r=r, coeffs=coeffs, x=x, z=z, n_max=n_max,
        target_gz=u_g.target, target_gz_plus_h=u_h.target, offset_gz_plus_h=u_h.offset,
        passed=all(c.passed for c in checks),
    )
    for c in checks:
        print(f"{c.check:<24} {c.quantity:<6} {c.value:.3e} {'PASS' if c.passed else 'FAIL'}")
    if not all(c.passed for c in checks):
        raise CheckFailed("example 1 checks failed")


def cmd_demo_example2(run):
    alpha = run.args.alpha if run.args.alpha is not None else 1.5
    horizon = run.args.horizon
    gallery = current_age(alpha)
    lam = gallery.closed_forms["lam"]
    f = lambda s: 1.0 if s == 0 else 0.0  # noqa: E731
    # E_0 f_c(X_n) = u_n - lambda, so the partial sums at 0 follow from the renewal sequence
    u = renewal_sequence(inter_renewal_pmf(gallery, horizon), horizon)
    terms = u - lam
    run.csv(
        ["n", "u_n", "partial_sum", "abs_partial_sum"],
        zip(range(horizon + 1), u, np.cumsum(terms), np.cumsum(np.abs(terms))),
    )
    slope, _ = renewal_tail_slope(gallery, 100, min(horizon, 10_000))
    try:
        out, chain = gstar_on_window(gallery.kernel, f, lam, [0], horizon)
        if isinstance(out, DivergenceReport):
            verdict = f"diverges at {out.states}"
        else:
            verdict = f"converges after {out.n_terms} terms"
    except HorizonExceeded:
        verdict = f"no divergence detected within {horizon} terms"
    run.finish(alpha=alpha, lam=lam, horizon=horizon, verdict=verdict, tail_slope=slope, expected_slope=1.0 - alpha)
    print(f"alpha = {alpha:g}: potential series at 0 {verdict}; tail slope {slope:.4f} (1 - alpha = {1 - alpha:g})")


HANDLERS = {
    "validate": cmd_validate,
    "stationary": cmd_stationary,
    "solve": cmd_solve,
    "moments": cmd_moments,
    "lyapunov": cmd_lyapunov,
    "simulate": cmd_simulate,
    "clt": cmd_clt,
    "lil": cmd_lil,
    "demo-example1": cmd_demo_example1,
    "demo-example2": cmd_demo_example2,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="regenpoisson", description="Poisson's equation for countable-state chains.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", "-c", help="INI-style run configuration")
    ap.add_argument("--seed", type=int, help="override [mc] seed")
    ap.add_argument("--out-dir", help="override [output] dir")
    ap.add_argument("--trunc-size", type=int, help="override [truncation] size")
    ap.add_argument("--method", choices=METHODS + ("all",), help="solver for the solve command")
    ap.add_argument("--alpha", type=float, help="tail exponent for demo-example2")
    ap.add_argument("--horizon", type=int, default=10_000, help="series horizon for demo-example2")
    return ap


def run(command, cfg, args):
    """Execute ``command``; returns the exit status."""
    handler = HANDLERS[command]
    state = Run(command, cfg, args)
    try:
        if command not in DEMOS:
            if cfg is None:
                raise ConfigError(f"command {command!r} needs --config")
            if command in ("simulate", "clt", "lil") and state.seed is None:
                cfg.require_seed(command)
        handler(state)
    except CheckFailed as exc:
        print(f"{command}: check failed: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"{command}: input error: {exc}", file=sys.stderr)
        return 1
    except RegenPoissonError as exc:
        print(f"{command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
    except ConfigError as exc:
        print(f"{args.command}: input error: {exc}", file=sys.stderr)
        return 1
    return run(args.command, cfg, args)


if __name__ == "__main__":
    sys.exit(main())
