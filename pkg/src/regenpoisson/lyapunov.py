"""Lyapunov drift certificates on truncated chains.

A drift certificate checks ``E_x v(X_1) <= v(x) - w(x)`` off a finite set
``K`` and turns it into the cycle-moment bound

    E_x sum_{j<tau(z)} w(X_j) <= v(x) + c,    z in K,

with ``c = max(d, 0) * max_{y,z in K} E_y gamma(z)``, where ``d`` is the
worst drift excess on ``K`` and ``gamma(z)`` counts the visits to ``K``
needed to reach ``z`` (computed exactly on the chain watched on ``K``).

Rows at the edge of a truncation are checked against the original kernel
row, evaluating ``v`` beyond the window through its closed form, so that a
certificate never rests on the way leaked mass was put back.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DriftViolated, Infeasible, UnboundedAtK
from .poisson import _spsolve, cycle_second_moment

DRIFT_RTOL = 1e-9


def _as_callable(chain, v, name):
    if callable(v):
        return v
    values = chain.evaluate(v)

    def lookup(s):
        try:
            return values[chain.idx(s)]
        except KeyError:
            raise ValueError(f"{name} is a vector; a closed form is needed beyond the window") from None

    return lookup


def expected_next(chain, v):
    """``E_x v(X_1)`` for every window state, using original rows at the boundary."""
    v = _as_callable(chain, v, "v")
    vals = chain.evaluate(v)
    out = chain.matrix @ vals
    for i in np.flatnonzero(~chain.interior):
        out[i] = chain.kernel.expect(chain.states[i], v)
    return out


def skeleton_hitting(chain, K):
    """``E_y gamma(z)`` for ``y, z`` in ``K``.

    ``gamma(z) = inf{m >= 1 : X_{Lambda_m} = z}`` where ``Lambda_m`` are the
    successive visit times to ``K``.  Returns a ``|K| x |K|`` array indexed
    by the order of ``K``.
    """
    kidx = np.array([chain.idx(s) for s in K])
    inK = np.zeros(chain.n, dtype=bool)
    inK[kidx] = True
    out = np.flatnonzero(~inK)
    P = chain.matrix
    Q = P[kidx][:, kidx].toarray()
    if out.size:
        A = sp.identity(out.size, format="csc") - P[out][:, out]
        B = P[out][:, kidx].toarray()
        X = np.column_stack([_spsolve(A, B[:, j]) for j in range(len(kidx))])
        Q = Q + P[kidx][:, out] @ X
    m = len(kidx)
    H = np.zeros((m, m))
    for j in range(m):
        keep = np.arange(m) != j
        h = np.zeros(m)
        if keep.any():
            h[keep] = np.linalg.solve(np.eye(m - 1) - Q[np.ix_(keep, keep)], np.ones(m - 1))
        # first skeleton step from each y, then the taboo hitting time of j
        H[:, j] = 1.0 + Q[:, keep] @ h[keep]
    return H


@dataclass
class DriftCertificate:
    """Outcome of a drift check ``E_x v(X_1) <= v(x) - w(x)`` off ``K``.

    Attributes
    ----------
    K : list
    d : float
        ``max_{x in K} E_x v(X_1) - v(x) + w(x)``.
    margin : float
        ``min_{x not in K} v(x) - w(x) - E_x v(X_1)`` over the checked states.
    verified : bool
    c : float
        Constant of the cycle-moment bound ``v(x) + c``.
    worst_state : object
        Checked state attaining ``margin``.
    violators : list
        Checked states where the inequality fails.
    n_checked : int
    skeleton_max : float
        ``max_{y,z in K} E_y gamma(z)``.
    """

    v: object
    w: object
    K: list
    d: float
    margin: float
    verified: bool
    c: float
    worst_state: object = None
    violators: list = field(default_factory=list)
    n_checked: int = 0
    skeleton_max: float = math.nan
    grown: bool = False
    label: str = ""

    def bound(self, x):
        """Upper bound ``v(x) + c`` on ``E_x sum_{j<tau(z)} w(X_j)`` for ``z`` in ``K``."""
        return float(self.v(x)) + self.c

    def report(self, name="drift"):
        status = "verified" if self.verified else f"violated at {self.violators[:10]}"
        return "\n".join(
            [
                f"[{name}] {self.label} {status}",
                f"  K = {self.K}",
                f"  margin = {self.margin:.6g} (worst state {self.worst_state!r}, {self.n_checked} states checked)",
                f"  d = {self.d:.6g}, max E_y gamma(z) = {self.skeleton_max:.6g}, c = {self.c:.6g}",
            ]
        )


def check_drift(chain, v, w, K, *, rtol=DRIFT_RTOL, auto_grow=False, raise_on_failure=True):
    """Verify a drift inequality on a truncation.

    Parameters
    ----------
    chain : TruncatedChain
    v, w : callable or array_like
        Nonnegative functions.  ``v`` must be callable when the window has
        leaky rows, since their original rows leave the window.
    K : iterable of states
        Finite exceptional set (non-empty).
    rtol : float
        Relative slack ``rtol * max(1, |v(x)|, E_x v(X_1))`` allowed for rounding.
    auto_grow : bool
        If the inequality fails only on the first half of the window, add the
        violating states to ``K`` and check again.
    raise_on_failure : bool

    Returns
    -------
    DriftCertificate

    Raises
    ------
    DriftViolated
        Lists the violating states; the certificate is attached.
    UnboundedAtK
        If ``E_x v(X_1)`` is not finite on ``K``.
    """
    K = list(dict.fromkeys(K))
    if not K:
        raise ValueError("K must be non-empty")
    v = _as_callable(chain, v, "v")
    vv = chain.evaluate(v)
    ww = chain.evaluate(w)
    if np.any(vv < 0) or np.any(ww < 0):
        raise ValueError("v and w must be nonnegative")
    with np.errstate(invalid="ignore", over="ignore"):
        pv = expected_next(chain, v)
    kidx = np.array([chain.idx(s) for s in K])
    if not np.all(np.isfinite(pv[kidx])):
        bad = [K[i] for i in np.flatnonzero(~np.isfinite(pv[kidx]))]
        raise UnboundedAtK(f"E_x v(X_1) is not finite at {bad}")

    excess = pv - vv + ww
    d = float(excess[kidx].max())
    outside = np.ones(chain.n, dtype=bool)
    outside[kidx] = False
    slack = rtol * np.maximum.reduce([np.ones(chain.n), np.abs(vv), np.abs(pv)])
    margins = -excess
    bad = outside & ~(margins >= -slack)
    violators = [chain.states[i] for i in np.flatnonzero(bad)]
    if outside.any():
        checked = np.flatnonzero(outside)
        worst = checked[np.nanargmin(np.where(np.isfinite(margins[checked]), margins[checked], -np.inf))]
        margin, worst_state = float(margins[worst]), chain.states[worst]
    else:
        margin, worst_state = math.inf, None

    if violators and auto_grow and max(chain.idx(s) for s in violators) < chain.n // 2:
        cert = check_drift(chain, v, w, K + violators, rtol=rtol, raise_on_failure=raise_on_failure)
        cert.grown = True
        return cert

    H = skeleton_hitting(chain, K)
    skel = float(H.max())
    cert = DriftCertificate(
        v=v,
        w=w,
        K=K,
        d=d,
        margin=margin,
        verified=not violators,
        c=max(d, 0.0) * skel,
        worst_state=worst_state,
        violators=violators,
        n_checked=int(outside.sum()),
        skeleton_max=skel,
        label=chain.kernel.label,
    )
    if violators and raise_on_failure:
        raise DriftViolated(
            f"{chain.kernel.label}: drift inequality fails at {len(violators)} state(s), "
            f"first {violators[:5]}",
            violators,
            cert,
        )
    return cert


THM5_LADDER = ("positive_recurrent", "thm1_2_valid", "thm3_4_valid")


@dataclass
class Thm5Certificate:
    """Drift conditions for recurrence, cycle sums, and (j+1)-weighted cycle sums.

    ``conditions`` maps ``"a"``, ``"b"``, ``"c_v3"``, ``"c_v4"`` to a
    :class:`DriftCertificate` (possibly unverified).  ``conclusions`` follows
    the ladder: positive recurrence needs a); validity of the cycle
    representation needs a) and b); validity of the series and ``pi g_z``
    results needs a), b) and c).
    """

    conditions: dict
    conclusions: list
    K: list

    def report(self):
        lines = [f"conclusions: {', '.join(self.conclusions) or 'none'}"]
        for name, cert in self.conditions.items():
            lines.append(cert.report(name))
        return "\n".join(lines)


def _abs_fn(chain, f):
    f = _as_callable(chain, f, "f")
    return lambda s: abs(float(f(s)))


def _try(chain, v, w, K):
    try:
        return check_drift(chain, v, w, K)
    except DriftViolated as exc:
        return exc.certificate


def certify_thm5(chain, f, v1, v2, v3, v4, K):
    """Check the drift ladder for ``f`` (uncentred) and return the certified conclusions.

    a) ``P v1 <= v1 - 1``; b) ``P v2 <= v2 - |f|``; c) ``P v3 <= v3 - v1``
    and ``P v4 <= v4 - v2``, all off ``K``.
    """
    fa = _abs_fn(chain, f)
    conds = {
        "a": _try(chain, v1, lambda s: 1.0, K),
        "b": _try(chain, v2, fa, K),
        "c_v3": _try(chain, v3, v1, K),
        "c_v4": _try(chain, v4, v2, K),
    }
    ok = {k: c.verified for k, c in conds.items()}
    conclusions = []
    if ok["a"]:
        conclusions.append(THM5_LADDER[0])
        if ok["b"]:
            conclusions.append(THM5_LADDER[1])
            if ok["c_v3"] and ok["c_v4"]:
                conclusions.append(THM5_LADDER[2])
    return Thm5Certificate(conds, conclusions, list(K))


@dataclass
class Thm7Certificate:
    """Certified second-moment drift pair ``(v1, v2)`` for ``f``.

    Attributes
    ----------
    first, second : DriftCertificate
        ``P v1 <= v1 - (|f| + 1)`` and ``P v2 <= v2 - (|f| + 1) v1`` off ``K``.
    c1, c2 : float
        Constants of the implied cycle-moment bounds.
    conclusions : list
    """

    first: DriftCertificate
    second: DriftCertificate
    conclusions: list

    @property
    def c1(self):
        return self.first.c

    @property
    def c2(self):
        return self.second.c

    @property
    def K(self):
        return self.first.K

    def moment_bound(self, x):
        """``2 (v2(x) + c2) + c1 (v1(x) + c1)``, the stated bound on
        ``E_x (sum_{j<tau(z)} (|f(X_j)| + 1))^2``."""
        return 2.0 * (self.second.bound(x)) + self.c1 * self.first.bound(x)

    def moment_bound_chained(self, x):
        """``2 (v2(x) + c2) + 2 c1 (v1(x) + c1)``, the bound obtained by
        carrying the factor 2 through both cycle-moment inequalities."""
        return 2.0 * (self.second.bound(x)) + 2.0 * self.c1 * self.first.bound(x)

    def report(self):
        return "\n".join(
            [
                f"conclusions: {', '.join(self.conclusions)}",
                self.first.report("first moment: P v1 <= v1 - (|f|+1)"),
                self.second.report("second moment: P v2 <= v2 - (|f|+1) v1"),
            ]
        )


def certify_thm7(chain, f, v1, v2, K):
    """Verify the drift pair that yields a finite squared cycle sum of ``|f_c|``.

    Raises
    ------
    DriftViolated
        Naming the inequality that fails.
    """
    fa = _abs_fn(chain, f)
    v1c = _as_callable(chain, v1, "v1")
    w1 = lambda s: fa(s) + 1.0  # noqa: E731
    w2 = lambda s: (fa(s) + 1.0) * float(v1c(s))  # noqa: E731
    first = _named(chain, v1, w1, K, "first inequality P v1 <= v1 - (|f|+1)")
    second = _named(chain, v2, w2, K, "second inequality P v2 <= v2 - (|f|+1) v1")
    conclusions = ["positive_recurrent", "f_integrable", "squared_cycle_sum_finite", "clt"]
    return Thm7Certificate(first, second, conclusions)


def _named(chain, v, w, K, name):
    try:
        return check_drift(chain, v, w, K)
    except DriftViolated as exc:
        raise DriftViolated(f"{name}: {exc}", exc.states, exc.certificate) from None


def squared_cycle_moment(chain, f, z):
    """``E_z (sum_{j<tau(z)} (|f(X_j)| + 1))^2`` from taboo solves."""
    w = np.abs(chain.evaluate(f)) + 1.0
    return cycle_second_moment(chain, w, z)


@dataclass
class QueueCertificate:
    """Quadratic/quartic drift pair ``v1 = a x^2``, ``v2 = a' x^4`` for ``f(x) = x``.

    The drift inequalities hold for every ``x`` outside ``K = {0, ..., k0}``.
    """

    a: float
    a_prime: float
    K: list
    moments: dict

    def v1(self, x):
        return self.a * float(x) ** 2

    def v2(self, x):
        return self.a_prime * float(x) ** 4

    @staticmethod
    def f(x):
        return float(x)


def _last_positive_root(coeffs):
    """Largest real ``x`` with ``poly(x) > 0`` boundary, i.e. the largest real root."""
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots))].real
    return float(real.max()) if real.size else -math.inf


def queue_certificate(increments):
    """Drift pair for the reflected walk ``X_{n+1} = max(X_n + Z, 0)`` and ``f(x) = x``.

    With ``m_k = E Z^k``, for ``x >= -min Z`` the walk is not reflected and

    * ``E v1(X_1) - v1(x) + (x + 1) = x (2 a m_1 + 1) + a m_2 + 1``,
    * ``E v2(X_1) - v2(x) + (x + 1) a x^2
      = a'(4 m_1 x^3 + 6 m_2 x^2 + 4 m_3 x + m_4) + a x^3 + a x^2``.

    The leading coefficients are negative iff ``a > 1 / (2|m_1|)`` and
    ``a' > a / (4|m_1|)``; twice those thresholds are used, i.e.
    ``a = 1/|m_1|`` and ``a' = a / (2|m_1|)``.  ``k0`` is the smallest
    integer such that both polynomials are nonpositive for all ``x > k0``.

    Raises
    ------
    Infeasible
        If ``E Z >= 0``.
    """
    law = {int(z): float(p) for z, p in increments.items() if p > 0}
    m = {k: math.fsum(z**k * p for z, p in law.items()) for k in (1, 2, 3, 4)}
    if m[1] >= 0:
        raise Infeasible(f"E Z = {m[1]:g} >= 0: no negative drift")
    a = 1.0 / abs(m[1])
    a2 = a / (2.0 * abs(m[1]))
    p1 = [2.0 * a * m[1] + 1.0, a * m[2] + 1.0]
    p2 = [4.0 * a2 * m[1] + a, 6.0 * a2 * m[2] + a, 4.0 * a2 * m[3], a2 * m[4]]
    root = max(_last_positive_root(p1), _last_positive_root(p2))
    k0 = max(int(math.floor(root)), -min(law) - 1, 0)
    # the polynomial is nonpositive beyond its largest root; step past it if needed
    while np.polyval(p1, k0 + 1) > 0 or np.polyval(p2, k0 + 1) > 0:
        k0 += 1
    return QueueCertificate(a, a2, list(range(k0 + 1)), m)
