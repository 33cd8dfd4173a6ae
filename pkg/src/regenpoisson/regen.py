"""Regenerative Monte Carlo on the untruncated kernel.

Paths are sampled from the true kernel rows (never from a truncation).
Randomness follows a substream contract: work item ``k`` of purpose ``p``
draws from ``SeedSequence(master_seed, spawn_key=(p, k))``, so results do not
depend on how items are scheduled or how many workers run them.  Cycles are
grouped in fixed blocks of :data:`BLOCK` cycles (one item per block);
replications of the CLT experiment are one item each.
"""

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .chain import TransitionKernel, refine, stationary_dist
from .errors import CycleLengthCap, DegenerateVariance
from .poisson import asymptotic_variance

BLOCK = 1024
CYCLE_CAP = 10**8
PILOT_CYCLES = 10**5
SCALAR_BELOW = 8

# purpose tags of the substream keys
CYCLES, PILOT, PATHS, CLT, LIL = 0, 1, 2, 3, 4

FIELDS = (
    "tau",
    "sum_f",
    "sum_fc",
    "sum_abs_fc",
    "sum_weighted_fc",
    "sum_weighted_fc_signed",
    "sum_fc_sq",
)


def substream(master_seed, *key):
    """Independent generator for the work item ``key`` under ``master_seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))


class KernelSampler:
    """Lazily tabulated rows of a kernel, indexed by enumeration index.

    Rows are stored as padded cumulative-probability and target tables for
    vectorised steps, and as lists for a scalar bisection sampler.
    """

    def __init__(self, kernel, f=None):
        self.kernel = kernel
        self.f = f
        self._cum, self._tgt, self._fv = [], [], []
        self._width = 1
        self._built = 0
        self.cum = np.zeros((0, 1))
        self.tgt = np.zeros((0, 1), dtype=np.int64)
        self.fvals = np.zeros(0)

    def ensure(self, max_index):
        """Tabulate rows ``0 .. max_index``."""
        if max_index < self._built:
            return
        upto = max(max_index + 1, 2 * self._built, 64)
        if self.kernel.size is not None:
            upto = min(upto, self.kernel.size)
        for i in range(self._built, upto):
            s = self.kernel.state(i)
            row = self.kernel.row(s)
            probs = np.array([p for _, p in row])
            cum = np.cumsum(probs)
            cum[-1] = 1.0
            self._cum.append(cum.tolist())
            self._tgt.append([self.kernel.index(y) for y, _ in row])
            self._fv.append(float(self.f(s)) if self.f is not None else 0.0)
            self._width = max(self._width, len(row))
        self._built = upto
        self.cum = np.full((upto, self._width), np.inf)
        self.tgt = np.zeros((upto, self._width), dtype=np.int64)
        for i, (c, t) in enumerate(zip(self._cum, self._tgt)):
            self.cum[i, : len(c)] = c
            self.cum[i, len(c) - 1] = np.inf
            self.tgt[i, : len(t)] = t
        self.fvals = np.array(self._fv)

    def step(self, idx, u):
        """Vectorised transition of the states ``idx`` driven by uniforms ``u``."""
        self.ensure(int(idx.max()))
        k = (u[:, None] >= self.cum[idx]).sum(axis=1)
        nxt = self.tgt[idx, k]
        self.ensure(int(nxt.max()))
        return nxt

    def step_scalar(self, i, u):
        self.ensure(i)
        cum = self._cum[i]
        k = min(bisect.bisect_right(cum, u), len(cum) - 1)
        nxt = self._tgt[i][k]
        self.ensure(nxt)
        return nxt

    def fval(self, i):
        self.ensure(i)
        return self._fv[i]


@dataclass
class CycleStats:
    """Per-path functionals up to the first visit to ``z`` at a time ``>= 1``.

    Every attribute is an array with one entry per path.  ``sum_abs_fc``,
    ``sum_weighted_fc`` (``sum (j+1)|f_c(X_j)|``) and ``sum_fc_sq``
    (``(sum f_c(X_j))^2``) are the standard cycle functionals; ``sum_fc`` and
    ``sum_weighted_fc_signed`` are their signed counterparts.
    """

    tau: np.ndarray
    sum_f: np.ndarray
    sum_fc: np.ndarray
    sum_abs_fc: np.ndarray
    sum_weighted_fc: np.ndarray
    sum_weighted_fc_signed: np.ndarray
    pi_f: float = 0.0

    @property
    def sum_fc_sq(self):
        return self.sum_fc**2

    def __len__(self):
        return len(self.tau)

    def field(self, name):
        if name not in FIELDS:
            raise ValueError(f"unknown cycle field {name!r}; choose from {FIELDS}")
        return getattr(self, name).astype(float)

    @staticmethod
    def concat(parts, pi_f):
        return CycleStats(
            *(np.concatenate([getattr(p, k) for p in parts]) for k in FIELDS if k != "sum_fc_sq"),
            pi_f=pi_f,
        )


def _run_paths(sampler, starts, z_idx, pi_f, rng, cap):
    """Simulate paths from ``starts`` until they reach ``z_idx`` at a time ``>= 1``."""
    m = len(starts)
    tau = np.zeros(m, dtype=np.int64)
    acc = {k: np.zeros(m) for k in ("sum_f", "sum_fc", "sum_abs_fc", "w_abs", "w_signed")}
    idx = np.asarray(starts, dtype=np.int64).copy()
    active = np.arange(m)
    j = 0
    while active.size > SCALAR_BELOW:
        sampler.ensure(int(idx.max()))
        fv = sampler.fvals[idx]
        fc = fv - pi_f
        acc["sum_f"][active] += fv
        acc["sum_fc"][active] += fc
        acc["sum_abs_fc"][active] += np.abs(fc)
        acc["w_abs"][active] += (j + 1) * np.abs(fc)
        acc["w_signed"][active] += (j + 1) * fc
        idx = sampler.step(idx, rng.random(active.size))
        j += 1
        done = idx == z_idx
        tau[active[done]] = j
        active, idx = active[~done], idx[~done]
        if j >= cap and active.size:
            raise CycleLengthCap(f"{active.size} path(s) exceeded {cap} steps; last state index {int(idx[0])}")
    for p, i in zip(active.tolist(), idx.tolist()):
        _finish_scalar(sampler, p, i, j, z_idx, pi_f, rng, cap, tau, acc)
    return CycleStats(
        tau=tau,
        sum_f=acc["sum_f"],
        sum_fc=acc["sum_fc"],
        sum_abs_fc=acc["sum_abs_fc"],
        sum_weighted_fc=acc["w_abs"],
        sum_weighted_fc_signed=acc["w_signed"],
        pi_f=pi_f,
    )


def _finish_scalar(sampler, p, i, j, z_idx, pi_f, rng, cap, tau, acc):
    sf = sfc = sabs = wabs = wsig = 0.0
    buf, pos = rng.random(4096), 0
    while True:
        fv = sampler.fval(i)
        fc = fv - pi_f
        sf += fv
        sfc += fc
        sabs += abs(fc)
        wabs += (j + 1) * abs(fc)
        wsig += (j + 1) * fc
        if pos == len(buf):
            buf, pos = rng.random(4096), 0
        i = sampler.step_scalar(i, buf[pos])
        pos += 1
        j += 1
        if i == z_idx:
            break
        if j >= cap:
            raise CycleLengthCap(f"a path exceeded {cap} steps; last state index {i}")
    tau[p] = j
    for k, val in zip(("sum_f", "sum_fc", "sum_abs_fc", "w_abs", "w_signed"), (sf, sfc, sabs, wabs, wsig)):
        acc[k][p] += val


def _blocks(n):
    return [(b, min(BLOCK, n - b * BLOCK)) for b in range(math.ceil(n / BLOCK))]


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def simulate_paths(kernel, x, z, f, pi_f, n, seed, *, purpose=PATHS, cap=CYCLE_CAP, workers=None):
    """Simulate ``n`` independent paths from ``x`` until the first visit to ``z`` at a time ``>= 1``.

    Block ``b`` of :data:`BLOCK` paths uses ``substream(seed, purpose, b)``
    and its own row table, so the output does not depend on ``workers``.
    """
    x_idx, z_idx = kernel.index(x), kernel.index(z)

    def run(block):
        b, m = block
        sampler = KernelSampler(kernel, f)
        return _run_paths(sampler, np.full(m, x_idx), z_idx, pi_f, substream(seed, purpose, b), cap)

    return CycleStats.concat(_map(run, _blocks(n), workers), pi_f)


def simulate_cycles(kernel, z, f, pi_f, n_cycles, seed, *, cap=CYCLE_CAP, workers=None, purpose=CYCLES):
    """``n_cycles`` i.i.d. regeneration cycles from ``z``."""
    return simulate_paths(kernel, z, z, f, pi_f, n_cycles, seed, purpose=purpose, cap=cap, workers=workers)


def simulate_cycle(kernel, z, f_c, rng, *, cap=CYCLE_CAP):
    """A single regeneration cycle from ``z`` driven by the generator ``rng``.

    ``f_c`` is used as given (``pi_f = 0``), so ``sum_f`` equals ``sum_fc``.
    """
    sampler = KernelSampler(kernel, f_c)
    z_idx = kernel.index(z)
    return _run_paths(sampler, np.array([z_idx]), z_idx, 0.0, rng, cap)


@dataclass
class RatioEstimate:
    """Regenerative ratio estimate with a delta-method confidence interval."""

    point: float
    ci_half_width: float
    n_cycles: int
    std_error: float = 0.0
    meta: dict = field(default_factory=dict)

    def half_width(self, level=0.95):
        return float(stats.norm.ppf(0.5 + level / 2.0) * self.std_error)

    def covers(self, value, level=0.95):
        return abs(self.point - value) <= self.half_width(level)


def _ratio(num, den):
    n = len(num)
    mean_den = np.mean(den)
    r = np.mean(num) / mean_den
    resid = num - r * den
    se = math.sqrt(np.var(resid, ddof=1) / n) / mean_den if n > 1 else math.inf
    return float(r), float(se)


def pilot_pi_f(kernel, z, f, seed, n_cycles=PILOT_CYCLES, workers=None):
    """``pi f`` from a pilot run of regeneration cycles (own substream purpose)."""
    cs = simulate_cycles(kernel, z, f, 0.0, n_cycles, seed, workers=workers, purpose=PILOT)
    return float(np.sum(cs.sum_f) / np.sum(cs.tau))


def estimate_ratio(kernel, z, numerator, n_cycles, seed, f=None, pi_f=None, *, workers=None, cycles=None):
    """``E_z numerator / E_z tau(z)`` over i.i.d. cycles.

    Parameters
    ----------
    numerator : str
        A :class:`CycleStats` field, e.g. ``"sum_f"`` (``pi f``),
        ``"sum_fc_sq"`` (time-average variance constant) or
        ``"sum_weighted_fc_signed"`` (``pi g_z``).
    pi_f : float, optional
        Centring constant; a pilot run is used when omitted and the
        numerator involves ``f_c``.  ``meta["centering"]`` records which.
    cycles : CycleStats, optional
        Reuse already simulated cycles.
    """
    if n_cycles < 100:
        raise ValueError("n_cycles must be at least 100")
    f = f if f is not None else (lambda s: 0.0)
    centering = "exact"
    if pi_f is None:
        if numerator in ("tau", "sum_f"):
            pi_f, centering = 0.0, "none"
        else:
            pi_f, centering = pilot_pi_f(kernel, z, f, seed, workers=workers), "pilot"
    cs = cycles if cycles is not None else simulate_cycles(kernel, z, f, pi_f, n_cycles, seed, workers=workers)
    point, se = _ratio(cs.field(numerator), cs.tau.astype(float))
    return RatioEstimate(
        point=point,
        ci_half_width=float(stats.norm.ppf(0.975) * se),
        n_cycles=len(cs),
        std_error=se,
        meta={"quantity": numerator, "seed": seed, "z": z, "pi_f": pi_f, "centering": centering},
    )


def estimate_gz(kernel, x, z, f, pi_f, n_paths, seed, *, workers=None):
    """Mean of ``sum_{j<tau(z)} f_c(X_j)`` over ``n_paths`` paths from ``x``."""
    cs = simulate_paths(kernel, x, z, f, pi_f, n_paths, seed, workers=workers)
    y = cs.sum_fc
    se = float(np.std(y, ddof=1) / math.sqrt(len(y))) if len(y) > 1 else math.inf
    return RatioEstimate(
        point=float(np.mean(y)),
        ci_half_width=float(stats.norm.ppf(0.975) * se),
        n_cycles=len(y),
        std_error=se,
        meta={"quantity": "g_z", "x": x, "z": z, "seed": seed, "pi_f": pi_f, "centering": "exact"},
    )


def exact_constants(model, f, z, **refine_opts):
    """``(pi f, sigma^2)`` from exact solves on a (refined) truncation."""

    def compute(chain):
        pi = stationary_dist(chain)
        pi_f = float(np.dot(pi.probs, chain.evaluate(f)))
        sigma2, _ = asymptotic_variance(chain, f, z)
        return np.array([pi_f, sigma2]), (pi_f, sigma2)

    if isinstance(model, TransitionKernel):
        return refine(model, compute, **refine_opts).value
    return compute(model)[1]


def _check_sigma(sigma2, scale):
    if not sigma2 > 1e-12 * max(1.0, scale):
        raise DegenerateVariance(f"sigma^2 = {sigma2:.3g}: the standardised sums are degenerate")
    return math.sqrt(sigma2)


@dataclass
class CLTResult:
    ks_distance: float
    sigma_hat: float
    sigma: float
    pi_f: float
    values: np.ndarray
    threshold: float

    @property
    def passed(self):
        return self.ks_distance < self.threshold


def clt_experiment(kernel, f, n, R, seed, *, x0=0, pi_f=None, sigma2=None, z=None, workers=None):
    """KS distance of ``(S_n(f) - n pi f) / (sigma sqrt(n))`` to ``N(0, 1)``.

    Replication ``r`` starts at ``x0`` and is driven by ``substream(seed, CLT, r)``.
    ``pi f`` and ``sigma^2`` come from exact solves unless supplied.

    Raises
    ------
    DegenerateVariance
        If ``sigma^2`` vanishes.
    """
    if pi_f is None or sigma2 is None:
        pi_f, sigma2 = exact_constants(kernel, f, x0 if z is None else z)
    sigma = _check_sigma(sigma2, abs(pi_f))
    x_idx = kernel.index(x0)
    chunk = 256

    def run(start):
        m = min(chunk, R - start)
        U = np.stack([substream(seed, CLT, r).random(n) for r in range(start, start + m)])
        sampler = KernelSampler(kernel, f)
        idx = np.full(m, x_idx, dtype=np.int64)
        S = np.zeros(m)
        for j in range(n):
            sampler.ensure(int(idx.max()))
            S += sampler.fvals[idx]
            idx = sampler.step(idx, U[:, j])
        return S

    S = np.concatenate(_map(run, range(0, R, chunk), workers))
    centred = (S - n * pi_f) / math.sqrt(n)
    values = centred / sigma
    ks = stats.kstest(values, "norm").statistic
    return CLTResult(
        ks_distance=float(ks),
        sigma_hat=float(np.std(centred, ddof=1)),
        sigma=sigma,
        pi_f=pi_f,
        values=values,
        threshold=1.36 / math.sqrt(R) + 0.01,
    )


@dataclass
class LILResult:
    n: np.ndarray
    L: np.ndarray
    running_sup: np.ndarray
    final_decade_sup: float
    degenerate: bool = False

    def in_band(self, lo=0.5, hi=1.5):
        return (not self.degenerate) and lo <= self.final_decade_sup <= hi


def lil_experiment(kernel, f, n_max, seed, *, x0=0, pi_f=None, sigma2=None, z=None, n_start=100):
    """Trajectory of ``L_n = |S_n(f) - n pi f| / (sigma sqrt(n log log n))``.

    One path of length ``n_max`` driven by ``substream(seed, LIL, 0)``.  The
    final-decade supremum is taken over ``n_max / 10 <= n <= n_max``.  A
    vanishing ``sigma`` is reported as ``degenerate`` with ``L = nan``.
    """
    if n_max < 10**4:
        raise ValueError("n_max must be at least 1e4")
    if pi_f is None or sigma2 is None:
        pi_f, sigma2 = exact_constants(kernel, f, x0 if z is None else z)
    n = np.arange(n_start, n_max + 1)
    if not sigma2 > 1e-12 * max(1.0, abs(pi_f)):
        nan = np.full(n.size, np.nan)
        return LILResult(n, nan, nan, math.nan, degenerate=True)
    sigma = math.sqrt(sigma2)
    rng = substream(seed, LIL, 0)
    sampler = KernelSampler(kernel, f)
    i = kernel.index(x0)
    fv = np.empty(n_max)
    U = rng.random(n_max)
    for j in range(n_max):
        fv[j] = sampler.fval(i)
        i = sampler.step_scalar(i, U[j])
    S = np.cumsum(fv - pi_f)
    dev = np.abs(S[n - 1])
    L = dev / (sigma * np.sqrt(n * np.log(np.log(n))))
    decade = n >= n_max // 10
    return LILResult(n, L, np.maximum.accumulate(L), float(L[decade].max()))
