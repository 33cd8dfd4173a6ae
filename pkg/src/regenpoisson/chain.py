"""Countable-state kernels, finite truncations, stationary distributions.

A :class:`TransitionKernel` describes a chain on a finite or countably
infinite state space through an enumeration ``index <-> state`` and a row
function returning the finitely supported transition probabilities out of a
state.  Every exact computation in the package runs on a
:class:`TruncatedChain`, the sparse row-stochastic matrix obtained from the
first ``size`` enumerated states after the mass leaving the window has been
handled according to a :class:`LeakPolicy`.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    LeakTooLarge,
    NotIrreducible,
    SingularSystem,
    TruncationNotConverged,
)

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10


def _identity(x):
    return x


class LeakPolicy(str, enum.Enum):
    """How probability mass that leaves the truncation window is put back."""

    REDIRECT_SELF = "redirect_self"
    RENORMALIZE = "renormalize"


class TransitionKernel:
    """Lazily evaluated transition kernel on a countable state space.

    Parameters
    ----------
    row : callable
        ``row(state)`` returns an iterable of ``(next_state, probability)``.
    state : callable, optional
        Enumeration ``index -> state``; identity by default.
    index : callable, optional
        Inverse enumeration ``state -> index``; identity by default.
    size : int or None
        Number of states, ``None`` for an infinite state space.
    label : str
        Human readable name.
    """

    def __init__(self, row, *, state=None, index=None, size=None, label="kernel"):
        self._row = row
        self._state = state or _identity
        self._index = index or _identity
        self.size = size
        self.label = label

    def __repr__(self):
        n = "inf" if self.size is None else self.size
        return f"TransitionKernel({self.label!r}, size={n})"

    @property
    def finite(self):
        return self.size is not None

    def state(self, i):
        return self._state(i)

    def index(self, s):
        return self._index(s)

    def row(self, s):
        return list(self._row(s))

    def checked_row(self, s):
        """Row of ``s`` after checking probabilities, duplicates and the row sum."""
        row = self.row(s)
        seen = set()
        total = 0.0
        for y, p in row:
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{self.label}: P({s!r}, {y!r}) = {p!r} outside (0, 1]")
            if y in seen:
                raise ValueError(f"{self.label}: duplicate target {y!r} in row {s!r}")
            seen.add(y)
            total += p
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"{self.label}: row {s!r} sums to {total!r}")
        return row

    def expect(self, s, v):
        """``E_s v(X_1)`` using the untruncated row."""
        return math.fsum(p * v(y) for y, p in self.row(s))

    @classmethod
    def from_matrix(cls, P, states=None, label="matrix"):
        """Finite kernel from a dense or sparse row-stochastic matrix."""
        P = sp.csr_matrix(P, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("transition matrix must be square")
        if states is None:
            states = list(range(n))
            state, index = None, None
        else:
            states = list(states)
            lookup = {s: i for i, s in enumerate(states)}
            state, index = states.__getitem__, lookup.__getitem__

        def row(s):
            i = s if index is None else index(s)
            lo, hi = P.indptr[i], P.indptr[i + 1]
            return [
                (j if state is None else state(j), p)
                for j, p in zip(P.indices[lo:hi].tolist(), P.data[lo:hi].tolist())
                if p != 0.0
            ]

        return cls(row, state=state, index=index, size=n, label=label)

    @classmethod
    def from_triplets(cls, triplets, label="triplets"):
        """Finite kernel from ``(row, col, prob)`` integer triplets."""
        rows, cols, vals = zip(*triplets)
        n = max(max(rows), max(cols)) + 1
        P = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        P.sum_duplicates()
        return cls.from_matrix(P, label=label)


@dataclass(frozen=True, eq=False)
class TruncatedChain:
    """Finite row-stochastic window onto a :class:`TransitionKernel`.

    Attributes
    ----------
    kernel : TransitionKernel
    states : list
        The first ``n`` enumerated states, in enumeration order.
    matrix : scipy.sparse.csr_matrix
        Row-stochastic transition matrix over ``states``.
    leak : ndarray
        Per-row mass that fell outside the window, recorded before it was
        redistributed.
    policy : LeakPolicy
    """

    kernel: TransitionKernel
    states: list
    matrix: sp.csr_matrix
    leak: np.ndarray
    policy: LeakPolicy = LeakPolicy.REDIRECT_SELF
    _lookup: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return len(self.states)

    @property
    def max_leak(self):
        return float(self.leak.max()) if self.n else 0.0

    @property
    def interior(self):
        """Boolean mask of rows that are identical to the kernel rows."""
        return self.leak == 0.0

    def idx(self, s):
        """Position of state ``s`` in the window."""
        try:
            return self._lookup[s]
        except KeyError:
            raise KeyError(f"state {s!r} is outside the truncation window") from None

    def evaluate(self, f):
        """Dense vector of ``f`` on the window (``f`` callable or array-like)."""
        if callable(f):
            return np.array([f(s) for s in self.states], dtype=float)
        v = np.asarray(f, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got shape {v.shape}")
        return v


def _truncated_chain(kernel, states, matrix, leak, policy):
    lookup = {s: i for i, s in enumerate(states)}
    return TruncatedChain(kernel, states, matrix, leak, policy, lookup)


def build_truncation(kernel, size=None, policy=LeakPolicy.REDIRECT_SELF, max_leak=1.0):
    """Finite truncation on the first ``size`` enumerated states.

    Parameters
    ----------
    kernel : TransitionKernel
    size : int, optional
        Window size; defaults to (and is capped at) ``kernel.size`` for
        finite kernels.
    policy : LeakPolicy or str
        ``REDIRECT_SELF`` adds the leaked mass to the diagonal,
        ``RENORMALIZE`` rescales the in-window part of the row.
    max_leak : float
        Largest per-row leak tolerated before :class:`LeakTooLarge` is raised.

    Returns
    -------
    TruncatedChain

    Raises
    ------
    NotIrreducible
        If the positive-entry graph of the window is not strongly connected.
    LeakTooLarge
    """
    policy = LeakPolicy(policy)
    if size is None:
        if kernel.size is None:
            raise ValueError("size is required for an infinite kernel")
        size = kernel.size
    if kernel.size is not None:
        size = min(size, kernel.size)
    if size < 1 or (size < 2 and kernel.size != 1):
        raise ValueError("truncation size must be at least 2")

    states = [kernel.state(i) for i in range(size)]
    rows, cols, vals = [], [], []
    leak = np.zeros(size)
    for i, s in enumerate(states):
        out = 0.0
        for y, p in kernel.checked_row(s):
            j = kernel.index(y)
            if j < size:
                rows.append(i)
                cols.append(j)
                vals.append(p)
            else:
                out += p
        leak[i] = out
    if leak.max() > max_leak:
        worst = int(leak.argmax())
        raise LeakTooLarge(f"row {states[worst]!r} leaks {leak[worst]:.3g} > cap {max_leak:.3g}")

    P = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    P.sum_duplicates()
    if leak.any():
        if policy is LeakPolicy.REDIRECT_SELF:
            P = (P + sp.diags(leak)).tocsr()
        else:
            if (leak >= 1.0).any():
                raise LeakTooLarge("a row leaks all of its mass; cannot renormalise")
            P = sp.diags(1.0 / (1.0 - leak)) @ P
            P = P.tocsr()
    P.eliminate_zeros()
    P.sort_indices()

    n_comp, _ = connected_components(P, directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducible(f"{kernel.label}: truncation of size {size} has {n_comp} strong components")
    return _truncated_chain(kernel, states, P, leak, policy)


@dataclass
class ValidationReport:
    passed: bool
    max_row_deviation: float
    row_sum_violations: list
    negative_entries: int
    irreducible: bool
    messages: list


def validate_kernel(chain):
    """Check row sums, signs and strong connectivity of a finite chain.

    ``chain`` may be a :class:`TruncatedChain` or any square matrix, so that
    malformed matrices can be diagnosed without constructing a chain.
    """
    P = chain.matrix if isinstance(chain, TruncatedChain) else sp.csr_matrix(chain, dtype=float)
    messages = []
    dev = np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0)
    bad_rows = np.flatnonzero(dev > ROW_SUM_TOL).tolist()
    if bad_rows:
        messages.append(f"row-sum violation in {len(bad_rows)} row(s), max deviation {dev.max():.3g}")
    negatives = int((P.data < 0).sum())
    if negatives:
        messages.append(f"{negatives} negative entries")
    positive = P.copy()
    positive.data = (positive.data > 0).astype(float)
    positive.eliminate_zeros()
    n_comp, _ = connected_components(positive, directed=True, connection="strong")
    irreducible = n_comp == 1
    if not irreducible:
        messages.append(f"NotIrreducible: {n_comp} strongly connected components")
    return ValidationReport(
        passed=not messages,
        max_row_deviation=float(dev.max()) if dev.size else 0.0,
        row_sum_violations=bad_rows,
        negative_entries=negatives,
        irreducible=irreducible,
        messages=messages,
    )


def detect_period(chain, z=None):
    """Period of the irreducible chain, i.e. the gcd of cycle lengths through ``z``.

    Uses BFS levels from ``z``: the period is the gcd of
    ``level(u) + 1 - level(v)`` over all edges ``u -> v``.
    """
    start = 0 if z is None else chain.idx(z)
    P = chain.matrix
    order, pred = breadth_first_order(P, start, directed=True, return_predecessors=True)
    level = np.full(chain.n, -1, dtype=np.int64)
    level[start] = 0
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    coo = P.tocoo()
    diffs = level[coo.row] + 1 - level[coo.col]
    period = 0
    for d in np.unique(np.abs(diffs)).tolist():
        period = math.gcd(period, int(d))
        if period == 1:
            break
    return period


@dataclass
class StationaryDist:
    """Stationary distribution of a truncation with its invariance residual."""

    probs: np.ndarray
    residual: float
    states: list = field(repr=False, default_factory=list)

    def __getitem__(self, i):
        return self.probs[i]

    def mean(self, v):
        return float(np.dot(self.probs, v))


def stationary_dist(chain, ref=0):
    """Solve ``pi P = pi``, ``sum(pi) = 1`` by a sparse direct solve.

    Solves for the expected occupation measure of a cycle from the state at
    window position ``ref``: ``nu(ref) = 1`` and ``nu(y) = sum_x nu(x) P(x, y)``
    for ``y != ref``, then normalises.  Unlike replacing one balance equation
    by the normalisation, this keeps small tail probabilities accurate in the
    relative sense, which matters when ``pi`` weights rapidly growing
    functions.

    Raises
    ------
    SingularSystem
        If the solve fails or the residual ``||pi P - pi||_1`` exceeds 1e-10.
    """
    n = chain.n
    if n == 1:
        return StationaryDist(np.ones(1), 0.0, list(chain.states))
    P = chain.matrix
    keep = np.arange(n) != ref
    A = (sp.identity(n - 1, format="csr") - P[keep][:, keep]).T.tocsc()
    b = P.getrow(ref)[:, keep].toarray().ravel()
    try:
        nu = sla.spsolve(A, b)
    except RuntimeError as exc:  # pragma: no cover - superlu failure
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(nu)):
        raise SingularSystem("stationary solve returned non-finite values")
    pi = np.empty(n)
    pi[ref] = 1.0
    pi[keep] = np.where(nu < 0.0, 0.0, nu)
    pi /= math.fsum(pi)
    residual = float(np.abs(P.T @ pi - pi).sum())
    if residual > STATIONARY_RESIDUAL_TOL:
        raise SingularSystem(f"stationary residual {residual:.3g} above tolerance")
    return StationaryDist(pi, residual, list(chain.states))


def center(f, pi, chain=None):
    """Centre ``f`` under ``pi``.

    Returns
    -------
    f_c : ndarray
        ``f - (pi f) e``.
    pi_f : float
    """
    values = chain.evaluate(f) if chain is not None else np.asarray(f, dtype=float)
    probs = pi.probs if isinstance(pi, StationaryDist) else np.asarray(pi, dtype=float)
    pi_f = math.fsum(probs * values)
    return values - pi_f, pi_f


@dataclass
class Refined:
    """Outcome of a truncation-refinement loop."""

    value: object
    chain: TruncatedChain
    trace: list
    history: list


def refine(
    kernel,
    compute,
    *,
    size=64,
    max_size=2**14,
    tol=1e-8,
    policy=LeakPolicy.REDIRECT_SELF,
    max_leak=1.0,
):
    """Re-solve on truncations of size N, 2N, 4N, ... until the probe set settles.

    ``compute(chain)`` must return ``(probe_values, value)``.  The loop stops
    once the sup-change of ``probe_values`` between consecutive sizes drops
    below ``tol``; finite kernels are solved once at full size.

    Raises
    ------
    TruncationNotConverged
        When doubling would exceed ``max_size``.  The exception carries the
        ``(size, change)`` trace and the probe history.
    """
    if kernel.finite:
        chain = build_truncation(kernel, kernel.size, policy, max_leak)
        probes, value = compute(chain)
        return Refined(value, chain, [(chain.n, 0.0)], [np.atleast_1d(probes)])

    trace, history = [], []
    prev = None
    n = size
    while True:
        chain = build_truncation(kernel, n, policy, max_leak)
        probes, value = compute(chain)
        probes = np.atleast_1d(np.asarray(probes, dtype=float))
        change = math.inf if prev is None else float(np.max(np.abs(probes - prev)))
        trace.append((n, change))
        history.append(probes)
        if change < tol:
            return Refined(value, chain, trace, history)
        if 2 * n > max_size:
            exc = TruncationNotConverged(
                f"{kernel.label}: probe change {change:.3g} >= {tol:.1g} at size {n}", trace
            )
            exc.history = history
            raise exc
        prev = probes
        n *= 2


def refined_stationary(kernel, probe=None, **opts):
    """Stationary distribution on a refined truncation, probed on ``probe`` states."""

    def compute(chain):
        pi = stationary_dist(chain)
        idx = range(min(chain.n, 8)) if probe is None else [chain.idx(s) for s in probe]
        return pi.probs[list(idx)], pi

    return refine(kernel, compute, **opts)
