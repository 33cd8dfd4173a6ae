import math
from fractions import Fraction

import numpy as np
import pytest

from regenpoisson.chain import build_truncation, refined_stationary, stationary_dist
from regenpoisson.errors import CoefficientSumNonzero, InvalidTail, NullOrTransient
from regenpoisson.gallery import (
    HarmonicSpec,
    birth_death,
    current_age,
    example1,
    example1_harmonic,
    example1_size,
    inter_renewal_pmf,
    reflected_walk,
    renewal_sequence,
    renewal_tail_slope,
    two_state,
)
from regenpoisson.poisson import asymptotic_variance


@pytest.mark.parametrize("a,b", [(0.5, 0.5), (0.2, 0.8), (0.9, 0.1)])
def test_two_state_closed_forms(a, b):
    g = two_state(a, b)
    c = build_truncation(g.kernel)
    pi = stationary_dist(c)
    np.testing.assert_allclose(pi.probs, [g.closed_forms["pi"](0), g.closed_forms["pi"](1)], atol=1e-15)
    cyc, inner = asymptotic_variance(c, lambda s: float(s == 1), 0)
    assert cyc == pytest.approx(g.closed_forms["sigma2_indicator1"], abs=1e-12)
    assert inner == pytest.approx(g.closed_forms["sigma2_indicator1"], abs=1e-12)


def test_two_state_rejects_bad_parameters():
    with pytest.raises(ValueError):
        two_state(0.0, 0.5)


def test_reflected_walk_construction():
    g = reflected_walk({-2: 0.6, 1: 0.4})
    assert g.closed_forms["increment_moments"][1] == pytest.approx(-0.8)
    for x in range(50):
        row = g.kernel.checked_row(x)
        assert math.fsum(p for _, p in row) == pytest.approx(1.0, abs=1e-12)
    assert dict(g.kernel.row(1)) == pytest.approx({0: 0.6, 2: 0.4})
    assert dict(g.kernel.row(0)) == pytest.approx({0: 0.6, 1: 0.4})


def test_reflected_walk_degenerate_and_null():
    g = reflected_walk({-1: 1.0})
    assert g.kernel.size == 1
    assert stationary_dist(build_truncation(g.kernel)).probs.tolist() == [1.0]
    with pytest.raises(NullOrTransient):
        reflected_walk({-1: 0.5, 1: 0.5})
    with pytest.raises(ValueError):
        reflected_walk({-1: 0.5, 1: 0.4})


def test_birth_death_geometric_pi():
    g = birth_death(0.3)
    out = refined_stationary(g.kernel)
    exact = np.array([g.closed_forms["pi"](s) for s in out.chain.states[:30]])
    np.testing.assert_allclose(out.value.probs[:30], exact, rtol=1e-8)
    assert g.closed_forms["pi"](2) == pytest.approx(4 / 7 * (3 / 7) ** 2)


def test_example1_closed_form_pi():
    r = (1 / 4, 1 / 8, 1 / 8)
    g = example1(0.3, r)
    assert g.closed_forms["pi"](0) == pytest.approx(4 / 9)
    assert g.closed_forms["pi"]((1, 1)) == pytest.approx((0.25 / 0.3) * (3 / 7) * (4 / 9))
    c = build_truncation(g.kernel, example1_size(3, 60))
    pi = stationary_dist(c)
    exact = np.array([g.closed_forms["pi"](s) for s in c.states])
    np.testing.assert_allclose(pi.probs[: example1_size(3, 30)], exact[: example1_size(3, 30)], rtol=1e-8)


def test_example1_smaller_feed_raises_pi0():
    r = np.array([1 / 4, 1 / 8, 1 / 8])
    big = example1(0.3, r).closed_forms["pi"](0)
    small = example1(0.3, 0.5 * r)
    assert small.closed_forms["pi"](0) > big
    c = build_truncation(small.kernel, example1_size(3, 60))
    assert stationary_dist(c).probs[0] == pytest.approx(small.closed_forms["pi"](0), abs=1e-12)


def test_example1_rejects_bad_parameters():
    with pytest.raises(ValueError):
        example1(0.6, (0.1,))
    with pytest.raises(ValueError):
        example1(0.3, (0.6, 0.5))


def test_example1_enumeration_is_level_major():
    g = example1(0.3, (0.1, 0.1))
    states = [g.kernel.state(i) for i in range(5)]
    assert states == [0, (1, 1), (1, 2), (2, 1), (2, 2)]
    assert all(g.kernel.index(s) == i for i, s in enumerate(states))


def test_harmonic_spec():
    with pytest.raises(CoefficientSumNonzero):
        HarmonicSpec(0.0, (1.0, -0.5), 0.3)
    HarmonicSpec(0.0, (0.1, 0.2, -0.3), 0.3)
    with pytest.raises(ValueError):
        HarmonicSpec(0.0, (1.0, -1.0), 0.7)
    h = example1_harmonic(HarmonicSpec(2.0, (0.0, 0.0), 0.3))
    assert {h(s) for s in [0, (1, 1), (5, 2)]} == {2.0}
    h = example1_harmonic(HarmonicSpec(0.0, (1.0, -1.0), 0.3))
    assert h((1, 1)) - h(0) == pytest.approx(7 / 3 - 1)
    assert h((3, 2)) == pytest.approx(-((7 / 3) ** 3 - 1))


def test_harmonic_defect_formula():
    spec = HarmonicSpec(0.0, (1.0, -1.0, 0.0), 0.3)
    r = (1 / 4, 1 / 8, 1 / 8)
    # (q/p - 1)(r1 - r2) with exact rationals
    expected = float((Fraction(7, 3) - 1) * (Fraction(1, 4) - Fraction(1, 8)))
    assert spec.defect(r) == pytest.approx(expected, abs=1e-15)
    assert spec.defect((1 / 8, 1 / 8, 1 / 4)) == 0.0


def test_current_age_constructor():
    with pytest.raises(InvalidTail):
        current_age(1.0)
    with pytest.raises(InvalidTail):
        current_age(2.0, c=5.0)
    g = current_age(3.0)
    S = g.closed_forms["survival"]
    for x in range(20):
        row = dict(g.kernel.checked_row(x))
        assert row[x + 1] == pytest.approx(S(x + 1) / S(x))
    d = current_age(3.0, c=0)
    assert d.kernel.size == 1
    assert stationary_dist(build_truncation(d.kernel)).probs.tolist() == [1.0]


def test_current_age_pi_closed_form():
    g = current_age(3.0)
    out = refined_stationary(g.kernel, probe=[0, 1, 2], max_size=2**16)
    exact = [g.closed_forms["pi"](x) for x in (0, 1, 2)]
    np.testing.assert_allclose(out.value.probs[:3], exact, atol=1e-8)


def test_renewal_sequence_and_pmf():
    g = current_age(2.5)
    pmf = inter_renewal_pmf(g, 200)
    assert pmf[0] == 0.0
    assert pmf.sum() == pytest.approx(1.0 - g.closed_forms["survival"](200))
    u = renewal_sequence(pmf, 200)
    # u_n = P_0(X_n = 0), the n-step return probability of the chain
    c = build_truncation(g.kernel, 400)
    mu = np.zeros(c.n)
    mu[0] = 1.0
    PT = c.matrix.T.tocsr()
    for n in range(1, 60):
        mu = PT @ mu
        assert u[n] == pytest.approx(mu[0], abs=1e-13)


@pytest.mark.parametrize("alpha", [1.5, 3.0])
def test_renewal_tail_slope(alpha):
    slope, u = renewal_tail_slope(current_age(alpha))
    assert slope == pytest.approx(1.0 - alpha, abs=0.15)


def test_renewal_asymptote_constant():
    g = current_age(1.5)
    _, u = renewal_tail_slope(g)
    n = 10_000
    ratio = (u[n] - g.closed_forms["lam"]) / g.closed_forms["renewal_asymptote"](n)
    assert ratio == pytest.approx(1.0, abs=0.05)
