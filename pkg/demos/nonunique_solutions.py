"""Two solutions of the same Poisson equation on the rails chain.

The regenerative solution g_z and g_z + h (h harmonic, growing like
(q/p)^level) both leave a zero residual.  The stopped sums
E_x |g(X_{tau^n}) + S_{tau^n}| reach their limit only for g_z.
"""

import numpy as np

from regenpoisson import build_truncation, stationary_dist
from regenpoisson.chain import center
from regenpoisson.diagnostics import poisson_residual, ui_limit_check
from regenpoisson.gallery import HarmonicSpec, example1, example1_harmonic, example1_size
from regenpoisson.poisson import solve_gz

p, r = 0.3, (0.25, 0.25)
chain = build_truncation(example1(p, r).kernel, example1_size(len(r), 70))
pi = stationary_dist(chain)
f_c, pi_f = center(lambda s: float(s == 0), pi, chain)
g = solve_gz(chain, f_c, 0, pi=pi).g
h = chain.evaluate(example1_harmonic(HarmonicSpec(0.0, (1.0, -1.0), p)))

print(f"pi(0) = {pi_f:.6f}")
for name, sol in (("g_z", g), ("g_z + h", g + h)):
    res = poisson_residual(chain, sol, f_c) / max(1.0, np.abs(sol).max())
    u = ui_limit_check(chain, sol, f_c, 0, (1, 1), 60)
    print(f"{name:8s} relative residual {res:.1e}  limit {u.target:.6f}  value at n=60 {u.sequence[-1]:.6f}")
    for n in (0, 5, 10, 20, 40, 60):
        print(f"    n={n:2d}  {u.sequence[n]:.6f}")
