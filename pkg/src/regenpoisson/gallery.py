"""Gallery of chains with closed-form reference quantities.

Each constructor returns a :class:`GalleryChain` bundling the kernel with
whatever is known in closed form (stationary law, harmonic family,
asymptotic variance) so that numerical results can be checked against it.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import zeta

from .chain import TransitionKernel
from .errors import CoefficientSumNonzero, InvalidTail, NullOrTransient


@dataclass
class GalleryChain:
    kernel: TransitionKernel
    closed_forms: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    provenance: str = ""

    @property
    def label(self):
        return self.kernel.label


def state_level(s):
    """Integer level of a gallery state (``i`` for the rail state ``(i, j)``)."""
    return s[0] if isinstance(s, tuple) else s


def two_state(a, b):
    """Two-state chain with ``P(0, 1) = a`` and ``P(1, 0) = b``.

    The asymptotic variance closed form is for ``f = 1{x = 1}``.
    """
    if not (0.0 < a <= 1.0 and 0.0 < b <= 1.0):
        raise ValueError("a and b must lie in (0, 1]")
    P = np.array([[1.0 - a, a], [b, 1.0 - b]])
    kernel = TransitionKernel.from_matrix(P, label=f"two_state({a:g},{b:g})")
    s = a + b
    pi = np.array([b / s, a / s])
    closed = {
        "pi": lambda x: pi[x],
        "sigma2_indicator1": a * b * (2.0 - s) / s**3,
    }
    return GalleryChain(kernel, closed, {"a": a, "b": b}, "oracle chain")


def reflected_walk(increments):
    """Reflected random walk ``X_{n+1} = max(X_n + Z_{n+1}, 0)``.

    Parameters
    ----------
    increments : dict
        Finite integer-valued law of ``Z`` as ``{z: P(Z = z)}``.

    Raises
    ------
    NullOrTransient
        If ``E Z >= 0``.
    """
    law = {int(z): float(p) for z, p in increments.items() if p > 0}
    total = math.fsum(law.values())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"increment probabilities sum to {total!r}")
    mean = math.fsum(z * p for z, p in law.items())
    if mean >= 0:
        raise NullOrTransient(f"E Z = {mean:g} >= 0")
    up = [z for z in law if z > 0]
    if up and math.gcd(*(abs(z) for z in law)) != 1:
        raise ValueError("increment support must have gcd 1")
    size = 1 if not up else None

    def row(x):
        out = {}
        for z, p in law.items():
            y = max(x + z, 0)
            out[y] = out.get(y, 0.0) + p
        return sorted(out.items())

    desc = ",".join(f"{z}:{p:g}" for z, p in sorted(law.items()))
    kernel = TransitionKernel(row, size=size, label=f"reflected_walk({desc})")
    moments = {k: math.fsum(z**k * p for z, p in law.items()) for k in (1, 2, 3, 4)}
    closed = {"increment_moments": moments}
    if size == 1:
        closed["pi"] = lambda x: 1.0 if x == 0 else 0.0
    elif set(law) == {-1, 1}:
        p = law[1]
        rho = p / (1.0 - p)
        closed["pi"] = lambda x: (1.0 - rho) * rho**x
    return GalleryChain(kernel, closed, {"increments": law}, "reflected walk (Lindley recursion)")


def birth_death(p):
    """Reflected +/-1 walk: up with probability ``p``, down (or stay at 0) otherwise."""
    g = reflected_walk({1: p, -1: 1.0 - p})
    g.kernel.label = f"birth_death({p:g})"
    g.params = {"p": p, "increments": g.params["increments"]}
    return g


def _example1_enumeration(J):
    def state(k):
        if k == 0:
            return 0
        i, j = divmod(k - 1, J)
        return (i + 1, j + 1)

    def index(s):
        if s == 0:
            return 0
        i, j = s
        return 1 + (i - 1) * J + (j - 1)

    return state, index


def example1(p, r):
    """Rails chain with infinitely many linearly independent harmonic functions.

    State ``0`` feeds rail ``j`` with probability ``r[j-1]``; on a rail the
    level moves up with probability ``p`` and down with ``q = 1 - p``,
    falling back to ``0`` from level 1.  States are enumerated level by
    level, so the first ``1 + J * m`` states are ``0`` and levels ``1..m``.
    """
    r = [float(x) for x in r]
    if not 0.0 < p < 0.5:
        raise ValueError("p must lie in (0, 1/2)")
    if not r or min(r) <= 0 or math.fsum(r) >= 1.0:
        raise ValueError("r must be a non-empty positive list with sum < 1")
    J = len(r)
    q = 1.0 - p
    stay = 1.0 - math.fsum(r)

    def row(s):
        if s == 0:
            return [(0, stay)] + [((1, j + 1), rj) for j, rj in enumerate(r)]
        i, j = s
        down = 0 if i == 1 else (i - 1, j)
        return [(down, q), ((i + 1, j), p)]

    state, index = _example1_enumeration(J)
    kernel = TransitionKernel(row, state=state, index=index, label=f"example1({p:g},J={J})")
    pi0 = 1.0 / (1.0 + math.fsum(r) / (q - p))

    def pi(s):
        if s == 0:
            return pi0
        i, j = s
        return r[j - 1] / p * (p / q) ** i * pi0

    closed = {
        "pi": pi,
        "harmonic": lambda coeffs, base=0.0: example1_harmonic(HarmonicSpec(base, coeffs, p)),
        "rails": J,
    }
    return GalleryChain(kernel, closed, {"p": p, "r": r}, "rails example with non-unique solutions")


def example1_size(J, levels):
    """Truncation size covering state 0 and levels ``1..levels`` on all rails."""
    return 1 + J * levels


@dataclass(frozen=True)
class HarmonicSpec:
    """Harmonic function ``h(i, j) = base + coeffs[j-1] ((q/p)^i - 1)`` on the rails chain."""

    base: float
    coeffs: tuple
    p: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(b) for b in self.coeffs))
        if not 0.0 < self.p < 0.5:
            raise ValueError("p must lie in (0, 1/2)")
        # exact rational sum so that e.g. (0.1, 0.2, -0.3) is accepted
        if abs(float(sum(Fraction(b) for b in self.coeffs))) > 1e-14:
            raise CoefficientSumNonzero(f"coefficients sum to {sum(self.coeffs)!r}")

    @property
    def ratio(self):
        return (1.0 - self.p) / self.p

    def defect(self, r):
        """``(P h)(0) - h(0) = (q/p - 1) sum_j r_j b_j`` on the rails chain with feed ``r``.

        The family is harmonic at 0 only when ``sum_j r_j b_j = 0``, which
        follows from ``sum_j b_j = 0`` when the rails with non-zero
        coefficients share the same ``r_j``.
        """
        return (self.ratio - 1.0) * math.fsum(rj * b for rj, b in zip(r, self.coeffs))


def example1_harmonic(spec):
    """Evaluate the rails harmonic function described by ``spec``."""
    ratio = spec.ratio
    coeffs = spec.coeffs

    def h(s):
        if s == 0:
            return spec.base
        i, j = s
        b = coeffs[j - 1] if j <= len(coeffs) else 0.0
        return spec.base + b * (ratio**i - 1.0)

    return h


def current_age(alpha, c=1.0):
    """Current-age chain of a renewal process with power-law inter-renewal tail.

    The law of the inter-renewal time is fixed through its survival function
    ``P(beta > 0) = 1`` and ``P(beta > n) = c (n + 1)^(-alpha)`` for
    ``n >= 1``, so ``P(beta > n) ~ c n^(-alpha)``.  ``c = 0`` gives the
    degenerate ``beta = 1`` chain, which lives on the single state 0.

    Raises
    ------
    InvalidTail
        If ``alpha <= 1`` (infinite mean) or ``c`` is out of range.
    """
    if c == 0:
        kernel = TransitionKernel(lambda x: [(0, 1.0)], size=1, label="current_age(degenerate)")
        return GalleryChain(kernel, {"pi": lambda x: 1.0, "lam": 1.0}, {"c": 0.0}, "renewal current age")
    if alpha <= 1:
        raise InvalidTail(f"alpha = {alpha} must exceed 1 for a finite mean")
    if not 0 < c <= 2.0**alpha:
        raise InvalidTail("c must lie in (0, 2^alpha]")

    def survival(n):
        return 1.0 if n <= 0 else c * (n + 1.0) ** (-alpha)

    def row(x):
        up = c * 2.0**-alpha if x == 0 else ((x + 1.0) / (x + 2.0)) ** alpha
        if up >= 1.0:
            return [(x + 1, 1.0)]
        return [(0, 1.0 - up), (x + 1, up)]

    mean = 1.0 + c * float(zeta(alpha, 2.0))
    lam = 1.0 / mean
    kernel = TransitionKernel(row, label=f"current_age({alpha:g})")
    closed = {
        "pi": lambda x: survival(x) * lam,
        "lam": lam,
        "mean": mean,
        "survival": survival,
        "renewal_asymptote": lambda n: lam**2 * c * n ** (1.0 - alpha) / (alpha - 1.0),
    }
    return GalleryChain(kernel, closed, {"alpha": alpha, "c": c}, "renewal current age")


def inter_renewal_pmf(gallery, n):
    """``p_j = P(beta = j)`` for ``j = 0..n`` (``p_0 = 0``)."""
    survival = gallery.closed_forms["survival"]
    S = np.array([survival(j) for j in range(n + 1)])
    pmf = np.zeros(n + 1)
    pmf[1:] = S[:-1] - S[1:]
    return pmf


def renewal_sequence(pmf, n):
    """Renewal sequence ``u_0 = 1``, ``u_m = sum_{j=1}^m p_j u_{m-j}`` for ``m <= n``."""
    p = np.zeros(n + 1)
    pmf = np.asarray(pmf, dtype=float)[: n + 1]
    p[: len(pmf)] = pmf
    u = np.zeros(n + 1)
    u[0] = 1.0
    for m in range(1, n + 1):
        u[m] = np.dot(p[1 : m + 1], u[m - 1 :: -1])
    return u


def renewal_tail_slope(gallery, n_lo=100, n_hi=10_000):
    """Least-squares slope of ``log|u_n - lambda|`` against ``log n`` on ``[n_lo, n_hi]``."""
    pmf = inter_renewal_pmf(gallery, n_hi)
    u = renewal_sequence(pmf, n_hi)
    lam = gallery.closed_forms["lam"]
    ns = np.arange(n_lo, n_hi + 1)
    dev = np.abs(u[n_lo:] - lam)
    slope, _ = np.polyfit(np.log(ns), np.log(dev), 1)
    return float(slope), u
