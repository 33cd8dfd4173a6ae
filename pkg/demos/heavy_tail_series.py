"""Partial sums of the potential series at the renewal state.

For the current-age chain E_0 f_c(X_n) = u_n - lambda with f = 1{0}.  A
tail exponent alpha = 1.5 makes |u_n - lambda| decay like n^(-1/2), so the
partial sums keep growing; alpha = 3 gives n^(-2) and a finite limit.
"""

import numpy as np

from regenpoisson.gallery import current_age, inter_renewal_pmf, renewal_sequence, renewal_tail_slope

horizon = 10_000
for alpha in (1.5, 3.0):
    g = current_age(alpha)
    lam = g.closed_forms["lam"]
    u = renewal_sequence(inter_renewal_pmf(g, horizon), horizon)
    partial = np.cumsum(u - lam)
    slope, _ = renewal_tail_slope(g, 100, horizon)
    print(f"alpha = {alpha}: lambda = {lam:.6f}, slope of log|u_n - lambda| = {slope:.3f}")
    for n in (10, 100, 1000, 10_000):
        print(f"    sum_(k<={n:5d}) (u_k - lambda) = {partial[n]: .6f}")
