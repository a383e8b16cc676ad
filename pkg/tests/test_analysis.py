import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skfeedback import analysis as an
from skfeedback.scheme import SchemeParams, initial_error


def naive_expectations(params, m, s):
    """Brute force over all sign sequences with the unscaled recursion."""
    n, a, b = params.n, params.alpha, params.beta
    e0 = initial_error(m, params)
    P_sum = e2_sum = 0.0
    for d in itertools.product((1.0, -1.0), repeat=n):
        e, energy = e0, 0.0
        for i in range(1, n + 1):
            x = a ** -i * d[i - 1] * e
            energy += x * x
            e = (1 - b) * e - b * a ** i * d[i - 1] * s[i - 1]
        P_sum += energy / n
        e2_sum += e * e
    return P_sum / 2 ** n, e2_sum / 2 ** n


def test_power_profile_worked_example():
    p = SchemeParams(n=3, M=4, alpha=0.8, beta=0.36)
    P = an.power_profile(p, np.ones(3))
    assert P[0] == pytest.approx(0.390625, rel=1e-15)
    assert P[1] == pytest.approx(0.4525, rel=1e-14)


def test_power_profile_homogeneous():
    p = SchemeParams(n=30, M=4, alpha=0.7)
    P = an.power_profile(p, np.zeros(30))
    expect = p.gamma ** np.arange(30) * 0.25 / 0.49
    assert np.allclose(P, expect, rtol=1e-13, atol=0)


def test_power_profile_recursion_matches_convolution():
    p = SchemeParams(n=100, M=16, alpha=0.83)
    N = np.random.default_rng(8).exponential(size=100)
    a = an.power_profile(p, N, eps0=0.3)
    b = an.power_profile_convolution(p, N, eps0=0.3)
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-12


def test_power_profile_shape_checked():
    with pytest.raises(ValueError):
        an.power_profile(SchemeParams(n=3, M=4, alpha=0.5), np.ones(4))


def test_impulse_response():
    p = SchemeParams(n=10, M=4, alpha=0.8)
    h = an.impulse_response(p)
    assert h[0] == pytest.approx(p.beta ** 2 / 0.64)
    assert np.all(np.diff(h) < 0)
    assert math.fsum(an.impulse_response(p, 4000)) == pytest.approx(1 / 0.64 - 1, rel=1e-12)


def test_power_bound_examples():
    p = SchemeParams(n=100, M=2, alpha=0.8)
    assert an.power_coefficient(0.8, p.beta) == pytest.approx(0.5625, rel=1e-14)
    assert an.power_bound(p, 1.0) - 0.5625 == pytest.approx(1 / 92.16, rel=1e-12)
    assert an.power_offset(p) == pytest.approx(1 / 92.16, rel=1e-12)
    assert an.power_bound_general(p, 1.0) == pytest.approx(an.power_bound(p, 1.0), rel=1e-14)
    with pytest.raises(ValueError):
        an.power_bound(SchemeParams(n=100, M=2, alpha=0.8, beta=0.5), 1.0)


def test_power_coefficient_diverges_when_gamma_ge_one():
    assert an.power_coefficient(0.5, 0.4) == math.inf  # (0.6/0.5)² > 1


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 0.9, 0.97])
def test_beta_optimality_grid(alpha):
    betas = np.arange(1, 10000) * 1e-4
    coef = np.array([an.power_coefficient(alpha, b) for b in betas])
    best = betas[np.argmin(coef)]
    assert abs(best - (1 - alpha ** 2)) <= 1e-4
    assert coef.min() == pytest.approx(alpha ** -2 - 1, rel=1e-6)


def test_mse_bound_noiseless_and_general_beta():
    p = SchemeParams(n=7, M=4, alpha=0.6)
    assert an.mse_bound(p, 0.0) == pytest.approx(0.25 * 0.6 ** 28, rel=1e-13)
    expect = 0.25 * 0.6 ** 28 + p.beta ** 2 * 0.6 ** 14 * 7 * 2.0
    assert an.mse_bound(p, 2.0) == pytest.approx(expect, rel=1e-13)


def test_mse_exact_end_impulse_meets_bound():
    # both inequalities tight: eps0² -> 1/4 (m = 1, huge M) and all energy at j = n
    p = SchemeParams(n=12, M=2 ** 40, alpha=0.8)
    N = np.zeros(12)
    N[-1] = 12.0
    exact = an.mse_exact(p, N, initial_error(1, p))
    assert exact == pytest.approx(an.mse_bound(p, 1.0), rel=1e-10)


def test_pe_bound_examples():
    p = SchemeParams(n=50, M=1000, alpha=0.8)
    assert an.pe_bound(p, 0.0) == pytest.approx((0.8 * math.exp(p.R)) ** 100, rel=1e-12)
    alpha = math.exp(-p.R)
    q = SchemeParams(n=50, M=1000, alpha=alpha)
    assert an.pe_bound(q, 3.0) == pytest.approx(1 + 4 * q.beta ** 2 * 50 * 3.0, rel=1e-12)


def test_pe_bound_follows_from_mse_bound():
    for alpha in (0.5, 0.7, 0.9):
        p = SchemeParams(n=40, M=300, alpha=alpha)
        assert an.chebyshev_pe(p, an.mse_bound(p, 2.0)) <= an.pe_bound(p, 2.0) * (1 + 1e-12)


@pytest.mark.parametrize("n", [20, 100, 1000, 5000])
@pytest.mark.parametrize("R", [0.05, 0.2, 0.6])
@pytest.mark.parametrize("N_star", [0.0, 1.0, 50.0])
def test_choose_alpha_meets_target(n, R, N_star):
    M = max(2, round(math.exp(n * R))) if n * R < 700 else None
    if M is None:
        from skfeedback.scheme import messages_for_rate
        M = messages_for_rate(n, R)
    try:
        alpha = an.choose_alpha(n, M, N_star, 0.01)
    except an.DesignError:
        pytest.skip("degenerate design")
    p = SchemeParams(n=n, M=M, alpha=alpha, N_star=N_star)
    assert alpha < math.exp(-p.R)
    assert an.pe_bound(p) <= 0.01 * (1 + 1e-9)


def test_choose_alpha_converges_monotonically():
    R = 0.2
    gaps = []
    for n in (100, 1000, 10000):
        from skfeedback.scheme import messages_for_rate
        M = messages_for_rate(n, R)
        alpha = an.choose_alpha(n, M, 1.0, 0.01)
        gaps.append(math.exp(-math.log(M) / n) - alpha)
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_choose_alpha_errors():
    with pytest.raises(an.DesignError):
        an.choose_alpha(10, 4, 1.0, 1.0)
    with pytest.raises(an.DesignError):
        an.choose_alpha(10, 4, 1.0, 0.0)
    with pytest.raises(an.DesignError):
        an.choose_alpha(2, 10 ** 6, 1.0, 0.01)  # alpha would be ~1e-3


def test_exact_expectation_n1():
    p = SchemeParams(n=1, M=4, alpha=0.6, beta=0.3)
    s1 = 0.7
    ex = an.exact_expectation(p, 1, [s1])
    e0 = initial_error(1, p)
    assert ex.exact_mse == pytest.approx((1 - 0.3) ** 2 * e0 ** 2 + 0.09 * 0.36 * s1 ** 2, rel=1e-14)


def test_exact_expectation_zero_noise():
    p = SchemeParams(n=12, M=8, alpha=0.75)
    ex = an.exact_expectation(p, 2, np.zeros(12))
    e0 = initial_error(2, p)
    EP = math.fsum(p.gamma ** (i - 1) * e0 ** 2 / 0.75 ** 2 for i in range(1, 13)) / 12
    assert ex.exact_EP == pytest.approx(EP, rel=1e-12)
    assert ex.exact_Pe in (0.0, 1.0)


@pytest.mark.parametrize("n", [1, 3, 6, 9])
def test_enumeration_three_routes_agree(n):
    rng = np.random.default_rng(n)
    p = SchemeParams(n=n, M=5, alpha=0.7, beta=0.4)
    s = rng.standard_normal(n) * 2
    ex = an.exact_expectation(p, 2, s)
    EP_naive, mse_naive = naive_expectations(p, 2, s)
    EP_closed, mse_closed = an.exact_closed_forms(p, 2, s)
    assert ex.exact_EP == pytest.approx(EP_naive, rel=1e-12)
    assert ex.exact_mse == pytest.approx(mse_naive, rel=1e-12)
    assert ex.exact_EP == pytest.approx(EP_closed, rel=1e-12)
    assert ex.exact_mse == pytest.approx(mse_closed, rel=1e-12)


def test_exact_expectation_chunking_invariant():
    p = SchemeParams(n=10, M=9, alpha=0.8)
    s = np.random.default_rng(0).standard_normal(10)
    a = an.exact_expectation(p, 4, s, chunk=1024)
    b = an.exact_expectation(p, 4, s, chunk=37)
    assert a == b


def test_exact_expectation_refuses_large_n():
    with pytest.raises(ValueError):
        an.exact_expectation(SchemeParams(n=23, M=4, alpha=0.5), 1, np.zeros(23))


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(-10, 10), s=st.floats(-10, 10), alpha=st.floats(0.05, 0.99),
       beta=st.floats(0.01, 0.99), i=st.integers(1, 30))
def test_two_point_average_step_identity(eps, s, alpha, beta, i):
    nxt = [(1 - beta) * eps - beta * alpha ** i * d * s for d in (1.0, -1.0)]
    mean_sq = (nxt[0] ** 2 + nxt[1] ** 2) / 2
    expect = (1 - beta) ** 2 * eps ** 2 + beta ** 2 * alpha ** (2 * i) * s ** 2
    assert mean_sq == pytest.approx(expect, rel=1e-12, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 11), alpha=st.floats(0.2, 0.95), M=st.integers(2, 40),
       scale=st.floats(0.0, 5.0), seed=st.integers(0, 2 ** 31), data=st.data())
def test_bound_chain_property(n, alpha, M, scale, seed, data):
    m = data.draw(st.integers(1, M))
    s = scale * np.random.default_rng(seed).standard_normal(n)
    p = SchemeParams(n=n, M=M, alpha=alpha)
    ex = an.exact_expectation(p, m, s)
    _, mse = an.exact_closed_forms(p, m, s)
    assert ex.exact_mse == pytest.approx(mse, rel=1e-10, abs=1e-300)
    N_eff = max(float(np.dot(s, s)) / n, 1e-300)
    assert ex.exact_Pe <= ex.exact_exceed
    assert ex.exact_exceed <= an.chebyshev_pe(p, ex.exact_mse) * (1 + 1e-9) + 1e-12
    assert an.chebyshev_pe(p, ex.exact_mse) <= an.pe_bound(p, N_eff) * (1 + 1e-9) + 1e-300


def test_bounds_report_contents():
    p = SchemeParams(n=100, M=2, alpha=0.8)
    rep = an.bounds_report(p, noise_powers=np.ones(100))
    assert rep.gamma == pytest.approx(0.64, rel=1e-14)
    assert rep.power_coefficient == pytest.approx(0.5625, rel=1e-14)
    assert rep.power_bound == pytest.approx(an.power_bound(p, 1.0), rel=1e-14)
    assert rep.rate_check == pytest.approx(-math.log(0.8), rel=1e-12)
    for key in ("gamma", "power_bound", "mse_bound", "pe_bound", "rate_check"):
        v = getattr(rep, key)
        assert math.isfinite(v) and v >= 0
    assert np.all(rep.impulse_response > 0)
    text = rep.to_text()
    parsed = dict(line.split(" = ", 1) for line in text.strip().splitlines())
    assert float(parsed["gamma"]) == rep.gamma
    assert len(parsed["power_profile"].split(",")) == 100


def test_delta_required_closes_rate_inequality():
    # E[P] <= E[N](e^{2R} - 1) + delta_required when E[N] = N*
    from skfeedback.scheme import messages_for_rate
    n = 500
    M = messages_for_rate(n, 0.3)
    p = SchemeParams(n=n, M=M, alpha=an.choose_alpha(n, M, 2.0, 0.05), N_star=2.0)
    rep = an.bounds_report(p)
    assert rep.power_bound <= 2.0 * math.expm1(2 * p.R) + rep.delta_required * (1 + 1e-12)
    assert rep.delta_required > rep.power_offset
