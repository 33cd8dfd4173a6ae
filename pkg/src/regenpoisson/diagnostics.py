"""Residual and structure checks for solutions of Poisson's equation.

Includes the Poisson and harmonic residuals, the additive-constant law
between regenerative solutions for different reference states, the exact
stopped-martingale sequence that separates the regenerative solution from
solutions perturbed by a non-constant harmonic function, and the
joint finiteness of (j+1)-weighted cycle moments across reference states.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionKernel, center, refine, stationary_dist
from .errors import HorizonWindowTooSmall, TruncationNotConverged
from .gallery import HarmonicSpec, example1_harmonic  # noqa: F401  (re-exported)
from .lyapunov import expected_next
from .poisson import _chain_cycle_moment, solve_direct, taboo_solve, trace_diverges

TARGET_MASS_TOL = 1e-15
TARGET_MAX_STEPS = 100_000


@dataclass
class CheckRow:
    """One line of a check report."""

    check: str
    quantity: str
    value: float
    threshold: float
    passed: bool

    def as_list(self):
        return [self.check, self.quantity, f"{self.value:.17g}", f"{self.threshold:.17g}", str(self.passed).lower()]


def poisson_residual(chain, g, f_c):
    """``sup |(P g)(x) - g(x) + f_c(x)|`` over rows untouched by truncation."""
    g = chain.evaluate(g)
    f_c = chain.evaluate(f_c)
    res = np.abs(chain.matrix @ g - g + f_c)
    inner = chain.interior
    return float(res[inner].max()) if inner.any() else 0.0


def harmonic_residual(chain, h, relative=False):
    """``sup |(P h)(x) - h(x)|`` over the window, with original rows at the boundary.

    ``h`` must be callable so that boundary rows can look past the window.
    With ``relative=True`` each term is divided by ``max(1, |h(x)|)``, which
    is the meaningful scale once ``h`` grows geometrically.
    """
    hv = chain.evaluate(h)
    res = np.abs(expected_next(chain, h) - hv)
    if relative:
        res = res / np.maximum(1.0, np.abs(hv))
    return float(res.max())


@dataclass
class ConstantDiff:
    is_constant: bool
    constant: float
    deviation: float
    expected: float

    @property
    def matches(self):
        return abs(self.constant - self.expected) <= 1e-9 * max(1.0, abs(self.expected))


def constant_diff_check(chain, f_c, z, y, tol=1e-9):
    """Check that ``g_z - g_y`` is the constant vector ``g_z(y) e``.

    Both solutions come from the bordered direct solver.  The taboo system
    for ``g_y`` becomes ill-conditioned when reaching ``y`` is rare (for
    states below ``y`` on a walk drifting down), while the bordered system
    does not.
    """
    pi = stationary_dist(chain)
    gz = solve_direct(chain, f_c, z, pi=pi).g
    gy = solve_direct(chain, f_c, y, pi=pi).g
    d = gz - gy
    mid = 0.5 * (d.max() + d.min())
    dev = float(np.max(np.abs(d - mid)))
    scale = max(1.0, float(np.abs(gz).max()))
    return ConstantDiff(dev <= tol * scale, float(mid), dev, float(gz[chain.idx(y)]))


@dataclass
class UILimit:
    """Stopped-process sequence and its limit.

    ``sequence[n] = E_x |g(X_{tau^n}) + sum_{j<tau^n} f_c(X_j)|`` with
    ``tau^n = min(tau(z), n)``; ``signed[n]`` is the same without the absolute
    value.  ``target = E_x |g(z) + sum_{j<tau(z)} f_c(X_j)|`` is the value the
    sequence converges to when the stopped martingale is uniformly
    integrable, and ``offset = signed[-1] - g_z(x)`` recovers ``g(z)`` in
    that case.
    """

    n: np.ndarray
    sequence: np.ndarray
    signed: np.ndarray
    target: float
    gap: float
    offset: float
    survival: np.ndarray = field(repr=False, default=None)


def _value_ids(values):
    uniq = sorted(set(values.tolist()))
    lookup = {v: k for k, v in enumerate(uniq)}
    return np.array(uniq), np.array([lookup[v] for v in values.tolist()])


def _rows(chain):
    P = chain.matrix
    return [
        (P.indices[P.indptr[i] : P.indptr[i + 1]].tolist(), P.data[P.indptr[i] : P.indptr[i + 1]].tolist())
        for i in range(chain.n)
    ]


def ui_limit_check(chain, g, f_c, z, x, n_max):
    """Exact ``E_x |g(X_{tau^n}) + S_{tau^n}|`` for ``n = 0..n_max`` by forward recursion.

    The law of ``(X_n, visit counts per value of f_c)`` on ``{tau(z) > n}``
    is propagated exactly; paths are frozen once they return to ``z``.  This
    is exact when ``f_c`` takes few distinct values on the window.

    Raises
    ------
    HorizonWindowTooSmall
        If mass reaches a row altered by truncation before ``n_max`` steps,
        or more than ``1e-15`` of it does before the target is resolved.
    """
    gv = chain.evaluate(g)
    fv = chain.evaluate(f_c)
    vals, vid = _value_ids(fv)
    rows = _rows(chain)
    inner = chain.interior
    zi, xi = chain.idx(z), chain.idx(x)
    k = len(vals)

    def total(counts):
        return math.fsum(c * v for c, v in zip(counts, vals))

    dist = {(xi, (0,) * k): 1.0}
    absorbed_abs = absorbed_signed = 0.0
    seq, sig, surv = [], [], []
    leaked = 0.0
    step = 0
    target = None
    while True:
        if step <= n_max:
            live_abs = math.fsum(p * abs(gv[s] + total(c)) for (s, c), p in dist.items())
            live_sig = math.fsum(p * (gv[s] + total(c)) for (s, c), p in dist.items())
            seq.append(absorbed_abs + live_abs)
            sig.append(absorbed_signed + live_sig)
            surv.append(math.fsum(dist.values()))
        mass = math.fsum(dist.values())
        if step >= n_max and mass < TARGET_MASS_TOL:
            target = absorbed_abs
            break
        if step >= TARGET_MAX_STEPS:
            raise HorizonWindowTooSmall(f"unabsorbed mass {mass:.3g} after {step} steps")
        new = {}
        for (s, c), p in dist.items():
            if not inner[s]:
                if step < n_max:
                    raise HorizonWindowTooSmall(
                        f"state {chain.states[s]!r} with a truncated row is reached at step {step}"
                    )
                leaked += p
                if leaked > TARGET_MASS_TOL:
                    raise HorizonWindowTooSmall("mass reaching truncated rows exceeds 1e-15")
            c2 = list(c)
            c2[vid[s]] += 1
            c2 = tuple(c2)
            for y, q in zip(*rows[s]):
                if y == zi:
                    val = gv[zi] + total(c2)
                    absorbed_abs += p * q * abs(val)
                    absorbed_signed += p * q * val
                else:
                    key = (y, c2)
                    new[key] = new.get(key, 0.0) + p * q
        dist = new
        step += 1

    gz_x = taboo_solve(chain, fv, z)[xi] if xi != zi else 0.0
    seq = np.array(seq)
    return UILimit(
        n=np.arange(n_max + 1),
        sequence=seq,
        signed=np.array(sig),
        target=float(target),
        gap=float(abs(seq[-1] - target)),
        offset=float(sig[-1] - gz_x),
        survival=np.array(surv),
    )


@dataclass
class SolidarityReport:
    """(j+1)-weighted cycle moments of ``|f_c|`` at several reference states."""

    values: dict
    traces: dict

    @property
    def finite(self):
        return {z: math.isfinite(v) for z, v in self.values.items()}

    @property
    def consistent(self):
        return len(set(self.finite.values())) == 1


def solidarity_check(model, f, z_list, **refine_opts):
    """Order-2 cycle moment of ``|f_c|`` at each ``z``; all finite or all infinite.

    ``model`` is a truncation (values are always finite there) or a kernel,
    in which case each moment is refined and a trace that keeps growing is
    reported as ``inf``.
    """
    if len(z_list) < 2:
        raise ValueError("solidarity needs at least two reference states")
    values, traces = {}, {}
    for z in z_list:

        def compute(chain, z=z):
            pi = stationary_dist(chain)
            f_c, _ = center(f, pi, chain)
            val = _chain_cycle_moment(chain, np.abs(f_c), z, None, 2)
            return val, val

        if isinstance(model, TransitionKernel):
            try:
                out = refine(model, compute, **refine_opts)
                values[z], traces[z] = out.value, out.trace
            except TruncationNotConverged as exc:
                values[z] = math.inf if trace_diverges(exc.history) else math.nan
                traces[z] = exc.trace
        else:
            values[z] = compute(model)[0]
            traces[z] = [(model.n, 0.0)]
    return SolidarityReport(values, traces)
