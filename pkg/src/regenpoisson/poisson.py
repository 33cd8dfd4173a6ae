"""Exact solvers for Poisson's equation ``(P - I) g = -f_c`` on a truncation.

Three routes are provided and cross-checked against each other:

* :func:`solve_gz` - the regenerative solution ``g_z(x) = E_x sum_{j<tau(z)} f_c(X_j)``
  obtained from the taboo system ``g = f_c + P_taboo g`` (column ``z``
  removed), so that ``g_z(z) = 0``;
* :func:`solve_direct` - the singular Poisson system bordered by the
  constraint ``g(z) = 0``;
* :func:`solve_gstar` - partial sums of the series ``sum_n E_x f_c(X_n)``
  by repeated sparse mat-vecs, with a convergence/divergence verdict.

Cycle moments ``E_x sum_{j<tau(z)} w(X_j)`` and the ``(j+1)``-weighted
second-order moments are always computed as (compositions of) taboo solves.
"""

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import dijkstra

from .chain import (
    LeakPolicy,
    TransitionKernel,
    TruncatedChain,
    build_truncation,
    center,
    detect_period,
    refine,
    stationary_dist,
)
from .errors import (
    ConditionViolated,
    HorizonExceeded,
    PeriodicChain,
    SingularSystem,
    TruncationNotConverged,
)

CENTER_TOL = 1e-10
GSTAR_TERM_TOL = 1e-10
GSTAR_CAUCHY_TOL = 1e-9
GSTAR_WINDOW = 50


@dataclass
class SolveReport:
    """Solution of Poisson's equation on a truncation.

    Attributes
    ----------
    g : ndarray
        Solution on ``states``.
    states : list
    z : object
        Reference state.
    residual : float
        ``sup |(P g) - g + f_c|`` on the truncation.
    method : str
        ``"gz"``, ``"direct"`` or ``"gstar"``.
    refinement_trace : list of (int, float)
        ``(truncation size, probe change)`` pairs.
    max_leak : float
    pi_f : float or None
        Centring constant used for ``f_c``.
    n_terms : int or None
        Number of series terms (``gstar`` only).
    """

    g: np.ndarray
    states: list
    z: object
    residual: float
    method: str
    refinement_trace: list = field(default_factory=list)
    max_leak: float = 0.0
    pi_f: float = None
    n_terms: int = None
    residuals: np.ndarray = field(default=None, repr=False)
    chain: TruncatedChain = field(default=None, repr=False)

    def __getitem__(self, s):
        return self.g[self.chain.idx(s)] if self.chain is not None else self.g[self.states.index(s)]

    def summary_line(self):
        sizes = ",".join(str(n) for n, _ in self.refinement_trace)
        return (
            f"method={self.method} z={self.z!r} residual={self.residual:.3e} "
            f"max_leak={self.max_leak:.3e} sizes=[{sizes}]"
        )

    def to_csv(self, path):
        per_state = self.residuals if self.residuals is not None else np.full(len(self.g), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "g", "residual"])
            for s, g, r in zip(self.states, self.g, per_state):
                w.writerow([s, f"{g:.17g}", f"{r:.17g}"])


@dataclass
class DivergenceReport:
    """Evidence that ``sum_n |E_x f_c(X_n)|`` diverges at the listed states."""

    states: list
    n_terms: int
    partial_sums: np.ndarray
    abs_partial_sums: np.ndarray
    growth_exponent: float
    bound: float
    probe: list = field(default_factory=list)
    method: str = "gstar"

    @property
    def converged(self):
        return False


def residual_vector(chain, g, f_c):
    """Pointwise ``|(P g)(x) - g(x) + f_c(x)|`` on the truncation."""
    g = np.asarray(g, dtype=float)
    return np.abs(chain.matrix @ g - g + f_c)


def _check_centered(chain, f_c, pi):
    if pi is None:
        pi = stationary_dist(chain)
    drift = float(np.dot(pi.probs, f_c))
    if abs(drift) > CENTER_TOL * max(1.0, float(np.dot(pi.probs, np.abs(f_c)))):
        raise ConditionViolated(f"f_c is not centred: pi f_c = {drift:.3e}")
    return pi


def _spsolve(A, b):
    try:
        x = sla.spsolve(sp.csc_matrix(A), b)
    except RuntimeError as exc:  # pragma: no cover - superlu failure
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve returned non-finite values")
    return x


def taboo_solve(chain, rhs, z):
    """Expected sums ``k(x) = E_x sum_{j<tau(z)} rhs(X_j)`` for every ``x``.

    Solves ``k(x) = rhs(x) + sum_{y != z} P(x, y) k(y)`` on ``x != z``; the
    entry at ``z`` is the full-cycle value ``E_z sum_{j<tau(z)} rhs(X_j)``.
    """
    P = chain.matrix
    zi = chain.idx(z)
    rhs = np.asarray(rhs, dtype=float)
    keep = np.arange(chain.n) != zi
    k = np.empty(chain.n)
    if keep.any():
        Pk = P[keep][:, keep]
        A = sp.identity(Pk.shape[0], format="csc") - Pk
        k[keep] = _spsolve(A, rhs[keep])
        row = P.getrow(zi)
        row_keep = row[:, keep]
        k[zi] = rhs[zi] + float((row_keep @ k[keep])[0])
    else:
        k[zi] = rhs[zi]
    return k


def _report(chain, g, f_c, z, method, pi_f, trace=None, n_terms=None):
    res = residual_vector(chain, g, f_c)
    return SolveReport(
        g=g,
        states=list(chain.states),
        z=z,
        residual=float(res.max()),
        method=method,
        refinement_trace=list(trace) if trace else [(chain.n, math.nan)],
        max_leak=chain.max_leak,
        pi_f=pi_f,
        n_terms=n_terms,
        residuals=res,
        chain=chain,
    )


def solve_gz(chain, f_c, z, pi=None, check=True):
    """Regenerative solution ``g_z`` from the taboo linear system.

    Parameters
    ----------
    chain : TruncatedChain
    f_c : array_like or callable
        Centred function on the truncation.
    z : state
        Reference state; ``g_z(z) = 0`` exactly.
    pi : StationaryDist, optional
        Used for the centring check; computed if omitted.

    Returns
    -------
    SolveReport
    """
    f_c = chain.evaluate(f_c)
    if check:
        _check_centered(chain, f_c, pi)
    g = taboo_solve(chain, f_c, z)
    g[chain.idx(z)] = 0.0
    return _report(chain, g, f_c, z, "gz", None)


def solve_direct(chain, f_c, z, pi=None, check=True):
    """Solve ``(P - I) g = -f_c`` subject to ``g(z) = 0``.

    The singular system is bordered with the constraint row ``e_z`` and a
    column ``e`` carrying a multiplier, which vanishes when ``pi f_c = 0``.
    """
    f_c = chain.evaluate(f_c)
    if check:
        _check_centered(chain, f_c, pi)
    n = chain.n
    zi = chain.idx(z)
    L = chain.matrix - sp.identity(n, format="csr")
    ones = sp.csr_matrix(np.ones((n, 1)))
    ez = sp.csr_matrix(([1.0], ([0], [zi])), shape=(1, n))
    M = sp.bmat([[L, ones], [ez, None]], format="csc")
    b = np.concatenate([-f_c, [0.0]])
    sol = _spsolve(M, b)
    g = sol[:n].copy()
    g[zi] = 0.0
    return _report(chain, g, f_c, z, "direct", None)


def exact_horizon(chain):
    """Steps for which ``P^n`` on the truncation equals the untruncated kernel.

    Entry ``x`` is the hop distance from ``x`` to the nearest row that lost
    mass to truncation (``inf`` if none is reachable): ``(P^n v)(x)`` only
    involves rows visited at times ``< n``, so it is exact for
    ``n <= exact_horizon(chain)[x]``.
    """
    leaky = np.flatnonzero(chain.leak > 0)
    if leaky.size == 0:
        return np.full(chain.n, np.inf)
    reverse = chain.matrix.T.tocsr()
    return dijkstra(reverse, unweighted=True, indices=leaky, min_only=True)


def solve_gstar(
    chain,
    f_c,
    probe=None,
    horizon=100_000,
    divergence_bound=10.0,
    term_tol=GSTAR_TERM_TOL,
    cauchy_tol=GSTAR_CAUCHY_TOL,
    window=GSTAR_WINDOW,
    min_growth=0.1,
    verdict=None,
):
    """Potential series ``g*(x) = sum_n E_x f_c(X_n)`` by iterated mat-vecs.

    Convergence is declared once ``|E_x f_c(X_n)| < term_tol`` for ``window``
    consecutive ``n`` at every probe state and the partial sums provably moved
    by less than ``cauchy_tol`` over the last ``window`` terms (or immediately
    when the iterate is exactly zero).  If the horizon is reached first, a probe state is declared
    divergent when its running absolute sum exceeds
    ``divergence_bound * max(1, sup|f_c|)`` and ``|partial sum|`` grew
    monotonically, by at least ``min_growth`` of its final value, over the
    second half of the horizon.  Only states whose iterates still coincide
    with those of the untruncated kernel for the whole horizon (see
    :func:`exact_horizon`) can be declared divergent, since the series of any
    finite irreducible aperiodic truncation is summable.

    Parameters
    ----------
    chain : TruncatedChain
        Must be aperiodic.
    f_c : array_like or callable
    probe : list of states, optional
        States whose terms decide convergence; all states by default.
    horizon : int
        Maximum number of series terms.
    verdict : list of states, optional
        Subset of the probe states eligible for a divergence verdict
        (default: all probe states).  States far from the reference state
        have not mixed within any fixed horizon and would look divergent.

    Returns
    -------
    SolveReport or DivergenceReport

    Raises
    ------
    PeriodicChain
    HorizonExceeded
        If neither verdict is reached.
    """
    if detect_period(chain) != 1:
        raise PeriodicChain(f"{chain.kernel.label}: potential series needs an aperiodic chain")
    f_c = chain.evaluate(f_c)
    if probe is None:
        probe_states, pidx = list(chain.states), slice(None)
        n_probe = chain.n
    else:
        probe_states = list(probe)
        pidx = np.array([chain.idx(s) for s in probe_states])
        n_probe = len(pidx)
    record = n_probe <= 16
    P = chain.matrix
    bound = divergence_bound * max(1.0, float(np.abs(f_c).max()))
    half = horizon // 2

    v = f_c.copy()
    G = np.zeros(chain.n)
    comp = np.zeros(chain.n)
    A = np.zeros(n_probe)
    small = 0
    recent = deque(maxlen=window)
    history = []
    mag_start = mag_prev = None
    monotone = np.ones(n_probe, dtype=bool)
    for n in range(horizon):
        if not v.any():
            return _report(chain, G, f_c, None, "gstar", None, n_terms=n)
        # Kahan summation: long runs of tiny terms otherwise drift by ~sqrt(n) ulps
        y = v - comp
        t = G + y
        comp = (t - G) - y
        G = t
        absv = np.abs(v[pidx])
        A += absv
        top = float(absv.max())
        recent.append(top)
        if record:
            history.append(G[pidx])
        small = small + 1 if top < term_tol else 0
        # sum of sup-norms bounds the movement of the partial sums over the window
        if small >= window and math.fsum(recent) < cauchy_tol:
            return _report(chain, G, f_c, None, "gstar", None, n_terms=n + 1)
        if n >= half:
            mag = np.abs(G[pidx])
            if mag_start is None:
                mag_start = mag
            else:
                monotone &= mag >= mag_prev
            mag_prev = mag
        v = P @ v

    exact = exact_horizon(chain)[pidx] >= horizon
    mag = np.abs(G[pidx])
    flagged = monotone & exact & (A > bound) & (mag - mag_start >= min_growth * mag)
    if verdict is not None:
        pos = {s: i for i, s in enumerate(probe_states)}
        eligible = np.zeros(n_probe, dtype=bool)
        eligible[[pos[s] for s in verdict]] = True
        flagged &= eligible
    hits = np.flatnonzero(flagged)
    if hits.size:
        with np.errstate(divide="ignore"):
            exponent = np.log(mag[hits] / mag_start[hits]) / np.log(horizon / max(half, 1))
        return DivergenceReport(
            states=[probe_states[i] for i in hits],
            n_terms=horizon,
            partial_sums=np.array(history) if record else G[pidx].copy(),
            abs_partial_sums=A.copy(),
            growth_exponent=float(np.min(exponent)),
            bound=bound,
            probe=probe_states,
        )
    raise HorizonExceeded(
        f"{chain.kernel.label}: no verdict after {horizon} terms "
        f"(last |term| = {np.abs(v[pidx]).max():.3e})"
    )


def gstar_on_window(kernel, f, pi_f, probe, horizon, policy=LeakPolicy.REDIRECT_SELF, **opts):
    """Run :func:`solve_gstar` on a window where the probe iterates are exact.

    The window is grown until every state reachable from ``probe`` within
    ``horizon`` steps has its original row, so the partial sums are those of
    the untruncated kernel.  ``f`` is centred with the supplied ``pi_f``
    (typically a closed form), not with the stationary law of the window.
    """
    pidx = [kernel.index(s) for s in probe]
    size = horizon + max(pidx) + 2
    while True:
        chain = build_truncation(kernel, size, policy)
        exact = exact_horizon(chain)[[chain.idx(s) for s in probe]]
        if np.all(exact >= horizon) or (kernel.finite and size >= kernel.size):
            break
        size *= 2
    f_c = chain.evaluate(f) - pi_f
    return solve_gstar(chain, f_c, probe=probe, horizon=horizon, **opts), chain


def _weights(chain, w, nonneg):
    w = chain.evaluate(w)
    if nonneg and np.any(w < 0):
        raise ValueError("cycle-moment weights must be nonnegative")
    return w


def _chain_cycle_moment(chain, w, z, x, order):
    k = taboo_solve(chain, w, z)
    if order == 2:
        k = taboo_solve(chain, k, z)
    elif order != 1:
        raise ValueError("order must be 1 or 2")
    return float(k[chain.idx(z if x is None else x)])


def cycle_moment(chain, w, z, x=None, order=1, **refine_opts):
    """Cycle moment of a nonnegative weight ``w``.

    ``order=1`` gives ``E_x sum_{j<tau(z)} w(X_j)``; ``order=2`` gives
    ``E_x sum_{j<tau(z)} (j+1) w(X_j)``, computed as the first-order moment
    of ``k(y) = E_y sum_{j<tau(z)} w(X_j)``.  ``x`` defaults to ``z``.

    If ``chain`` is a :class:`TransitionKernel` the moment is computed on
    refined truncations; a refinement trace that keeps growing without
    contracting is reported as ``inf``.
    """
    if isinstance(chain, TransitionKernel):

        def compute(c):
            val = _chain_cycle_moment(c, _weights(c, w, True), z, x, order)
            return val, val

        return refine_moment(chain, compute, **refine_opts)
    return _chain_cycle_moment(chain, _weights(chain, w, True), z, x, order)


def refine_moment(kernel, compute, **refine_opts):
    """Run ``refine`` on a scalar moment, mapping non-stabilising growth to ``inf``."""
    try:
        return refine(kernel, compute, **refine_opts).value
    except TruncationNotConverged as exc:
        if trace_diverges(exc.history):
            return math.inf
        raise


def trace_diverges(history):
    """True if a refinement history grows without its increments contracting."""
    vals = [float(np.max(h)) for h in history]
    if len(vals) < 4:
        return False
    inc = np.diff(vals[-4:])
    return bool(np.all(inc > 0) and inc[-1] >= 0.9 * inc[-2])


def cycle_second_moment(chain, w, z):
    """``E_z (sum_{j<tau(z)} w(X_j))^2`` for signed ``w``.

    Uses ``(sum w_j)^2 = 2 sum_j w_j sum_{k>=j} w_k - sum_j w_j^2`` and the
    fact that the conditional tail sum given ``X_j`` is the taboo solution.
    """
    w = chain.evaluate(w)
    k = taboo_solve(chain, w, z)
    zi = chain.idx(z)
    cross = taboo_solve(chain, w * k, z)[zi]
    sq = taboo_solve(chain, w * w, z)[zi]
    return float(2.0 * cross - sq)


def pi_gz(chain, f, z):
    """``pi g_z`` two ways.

    Returns
    -------
    value : float
        ``E_z sum_{j<tau(z)} (j+1) f_c(X_j) / E_z tau(z)``.
    cross_check : float
        ``sum_x pi(x) g_z(x)``.

    Raises
    ------
    PeriodicChain
    ConditionViolated
        If the ``(j+1)``-weighted moment of ``|f_c|`` is not finite.
    """
    if detect_period(chain, z) != 1:
        raise PeriodicChain("pi g_z limit requires an aperiodic chain")
    pi = stationary_dist(chain)
    f_c, _ = center(f, pi, chain)
    guard = _chain_cycle_moment(chain, np.abs(f_c), z, None, 2)
    if not math.isfinite(guard):
        raise ConditionViolated("E_z sum (j+1)|f_c(X_j)| is not finite")
    zi = chain.idx(z)
    weighted = taboo_solve(chain, taboo_solve(chain, f_c, z), z)[zi]
    tau = taboo_solve(chain, np.ones(chain.n), z)[zi]
    g = solve_gz(chain, f_c, z, pi=pi).g
    return float(weighted / tau), float(np.dot(pi.probs, g))


def transient_mean(chain, f, z, x, n):
    """``E_x S_n(f)`` exactly and its asymptote ``n pi f + g_z(x) - pi g_z``.

    The exact value propagates the law of ``X_j`` for ``j < n``; both sides
    are accumulated with compensated summation.
    """
    pi = stationary_dist(chain)
    fv = chain.evaluate(f)
    f_c, pi_f = center(fv, pi)
    mu = np.zeros(chain.n)
    mu[chain.idx(x)] = 1.0
    PT = chain.matrix.T.tocsr()
    terms = []
    for _ in range(n):
        terms.append(float(np.dot(mu, fv)))
        mu = PT @ mu
    exact = math.fsum(terms)
    g = solve_gz(chain, f_c, z, pi=pi).g
    pig = math.fsum(pi.probs * g)
    asymptote = math.fsum([n * pi_f, g[chain.idx(x)], -pig])
    return exact, asymptote


def asymptotic_variance(chain, f, z):
    """Time-average variance constant two ways.

    Returns
    -------
    cycle : float
        ``E_z (sum_{j<tau(z)} f_c(X_j))^2 / E_z tau(z)``.
    inner : float
        ``2 pi(g_z f_c) - pi(f_c^2)``.
    """
    pi = stationary_dist(chain)
    f_c, _ = center(f, pi, chain)
    zi = chain.idx(z)
    tau = taboo_solve(chain, np.ones(chain.n), z)[zi]
    cycle = cycle_second_moment(chain, f_c, z) / tau
    g = solve_gz(chain, f_c, z, pi=pi).g
    inner = 2.0 * math.fsum(pi.probs * g * f_c) - math.fsum(pi.probs * f_c * f_c)
    return float(cycle), float(inner)


def solve(
    model,
    f,
    z,
    method="gz",
    probe=None,
    size=64,
    max_size=2**14,
    tol=1e-8,
    policy=LeakPolicy.REDIRECT_SELF,
    **gstar_opts,
):
    """Centre ``f`` and solve Poisson's equation with truncation refinement.

    ``model`` is a :class:`TransitionKernel` (refined at sizes N, 2N, ...
    until ``g`` moves by less than ``tol`` on ``probe``) or a
    :class:`TruncatedChain` (solved as is).  ``method="gstar"`` runs the
    series on the truncation selected by the ``gz`` refinement.
    """
    solver = {"gz": solve_gz, "direct": solve_direct}.get(method, solve_gz)

    def compute(chain):
        pi = stationary_dist(chain)
        f_c, pi_f = center(f, pi, chain)
        rep = solver(chain, f_c, z, pi=pi)
        rep.pi_f = pi_f
        idx = [chain.idx(s) for s in probe] if probe is not None else list(range(min(chain.n, 8)))
        return rep.g[idx], rep

    if isinstance(model, TruncatedChain):
        _, rep = compute(model)
        refined_chain, trace = model, rep.refinement_trace
    else:
        refined = refine(model, compute, size=size, max_size=max_size, tol=tol, policy=policy)
        rep, refined_chain, trace = refined.value, refined.chain, refined.trace
    rep.refinement_trace = trace
    if method in ("gz", "direct"):
        return rep
    if method != "gstar":
        raise ValueError(f"unknown method {method!r}")
    pi = stationary_dist(refined_chain)
    f_c, pi_f = center(f, pi, refined_chain)
    verdict = list(probe) if probe is not None else list(refined_chain.states[: min(refined_chain.n, 8)])
    gstar_opts.setdefault("verdict", verdict)
    out = solve_gstar(refined_chain, f_c, probe=None, **gstar_opts)
    if isinstance(out, SolveReport):
        out.refinement_trace = trace
        out.pi_f = pi_f
        out.z = z
    return out
