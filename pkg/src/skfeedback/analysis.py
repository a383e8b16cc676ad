"""Closed-form power and error analysis, parameter design, enumeration oracle.

Notation: γ = α^-2·(1-β)², h_j = α^-2·β²·γ^(j-1). The transmit powers
P_i = E[X_i²] obey P_{i+1} = γ·P_i + α^-2·β²·N_i with P_1 = α^-2·ε_0².
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .noise import FixedSequence
from .scheme import SchemeParams, initial_error, run_batch


class DesignError(ValueError):
    """No admissible α for the requested design."""


def impulse_response(params: SchemeParams, length: int | None = None) -> np.ndarray:
    """h_j for j = 1..length (default n)."""
    length = params.n if length is None else length
    j = np.arange(1, length + 1)
    return params.beta ** 2 / params.alpha ** 2 * params.gamma ** (j - 1)


def _first_power(params: SchemeParams, eps0: float | None) -> float:
    e2 = 0.25 if eps0 is None else eps0 * eps0
    return e2 / params.alpha ** 2


def power_profile(params: SchemeParams, noise_powers, eps0: float | None = None) -> np.ndarray:
    """P_1..P_n from the first-order recursion.

    ``eps0=None`` uses the worst case ε_0² = 1/4.
    """
    N = np.asarray(noise_powers, dtype=float)
    if N.shape != (params.n,):
        raise ValueError(f"need {params.n} noise powers, got shape {N.shape}")
    g = params.gamma
    drive = params.beta ** 2 / params.alpha ** 2
    P = np.empty(params.n)
    P[0] = _first_power(params, eps0)
    for i in range(1, params.n):
        P[i] = g * P[i - 1] + drive * N[i - 1]
    return P


def power_profile_convolution(params: SchemeParams, noise_powers, eps0: float | None = None) -> np.ndarray:
    """Same profile via P_i = Σ_{j<i} h_{i-j}·N_j + γ^(i-1)·P_1."""
    N = np.asarray(noise_powers, dtype=float)
    n = params.n
    h = impulse_response(params, n)
    P1 = _first_power(params, eps0)
    P = np.empty(n)
    for i in range(1, n + 1):
        conv = math.fsum(h[i - j - 1] * N[j - 1] for j in range(1, i))
        P[i - 1] = conv + params.gamma ** (i - 1) * P1
    return P


def power_coefficient(alpha: float, beta: float) -> float:
    """Σ_j h_j = α^-2·β²/(1 - γ); infinite when γ >= 1."""
    gamma = (1.0 - beta) ** 2 / alpha ** 2
    if gamma >= 1.0:
        return math.inf
    return beta ** 2 / alpha ** 2 / (1.0 - gamma)


def power_offset(params: SchemeParams) -> float:
    """Worst-case contribution of the initial error to E[P]: (1/n)·α^-2/(4(1-γ)).

    With β = 1 - α² this is 1/(4nα²(1-α²)).
    """
    if params.gamma >= 1.0:
        return math.inf
    return 0.25 / params.alpha ** 2 / (1.0 - params.gamma) / params.n


def power_bound(params: SchemeParams, mean_noise_power: float) -> float:
    """E[P] < E[N]·(α^-2 - 1) + 1/(4nα²(1-α²)); requires β = 1 - α²."""
    if not params.has_optimal_beta:
        raise ValueError(f"power bound needs beta = 1 - alpha^2 = {1 - params.alpha ** 2!r}, "
                         f"got {params.beta!r}")
    a2 = params.alpha ** 2
    return mean_noise_power * (1.0 / a2 - 1.0) + 1.0 / (4.0 * params.n * a2 * (1.0 - a2))


def power_bound_general(params: SchemeParams, mean_noise_power: float) -> float:
    """E[N]·Σh + offset for any β with γ < 1 (equals power_bound at the optimum)."""
    return mean_noise_power * power_coefficient(params.alpha, params.beta) + power_offset(params)


def mse_exact(params: SchemeParams, noise_powers, eps0: float) -> float:
    """E[ε_n²] = (1-β)^(2n)·ε_0² + Σ_j (1-β)^(2(n-j))·β²·α^(2j)·N_j for fixed noise powers."""
    N = np.asarray(noise_powers, dtype=float)
    n = params.n
    lb, la = math.log1p(-params.beta), math.log(params.alpha)
    terms = [eps0 * eps0 * math.exp(2 * n * lb)]
    for j in range(1, n + 1):
        if N[j - 1] > 0:
            terms.append(params.beta ** 2 * N[j - 1] * math.exp(2 * (n - j) * lb + 2 * j * la))
    return math.fsum(terms)


def mse_bound(params: SchemeParams, N_star: float | None = None) -> float:
    """Worst case of E[ε_n²] over ε_0² <= 1/4 and Σ N_j <= n·N*.

    At β = 1 - α² this is α^(4n)/4 + β²·α^(2n)·n·N*, attained by putting
    all energy on the last symbol.
    """
    N_star = params.N_star if N_star is None else N_star
    n = params.n
    lb, la = math.log1p(-params.beta), math.log(params.alpha)
    # weight of N_j is (1-β)^(2(n-j))·α^(2j); maximal at j = n when γ <= 1, else j = 1
    j = n if params.gamma <= 1.0 else 1
    w = math.exp(2 * (n - j) * lb + 2 * j * la)
    return 0.25 * math.exp(2 * n * lb) + params.beta ** 2 * w * n * N_star


def pe_bound(params: SchemeParams, N_star: float | None = None) -> float:
    """Chebyshev error bound (1 + 4β²nN*)·(α·e^R)^(2n), not clipped to 1."""
    N_star = params.N_star if N_star is None else N_star
    n = params.n
    log_pe = math.log1p(4 * params.beta ** 2 * n * N_star) + 2 * n * (math.log(params.alpha) + params.R)
    return math.exp(log_pe) if log_pe < 700 else math.inf


def chebyshev_pe(params: SchemeParams, mse: float) -> float:
    """P(|ε_n| >= 1/(2M)) <= E[ε_n²]/(1/(4M²)) = 4·M²·E[ε_n²]."""
    if mse <= 0:
        return 0.0
    log_pe = math.log(4 * mse) + 2 * params.log_M
    return math.exp(log_pe) if log_pe < 700 else math.inf


def choose_alpha(n: int, M: int, N_star: float, pe_target: float) -> float:
    """α = e^-R·(pe_target/(1 + 4nN*))^(1/(2n)), so that pe_bound <= pe_target.

    β <= 1 over-bounds the first factor of the error bound, which removes
    the dependence of β on α. Raises :class:`DesignError` when the result is
    not strictly below e^-R or is at most 0.01.
    """
    if not 0.0 < pe_target < 1.0:
        raise DesignError(f"pe_target must lie in (0, 1), got {pe_target}")
    if n < 1 or M < 2 or not N_star >= 0:
        raise DesignError("need n >= 1, M >= 2, N_star >= 0")
    R = math.log(M) / n
    log_ratio = math.log(pe_target) - math.log1p(4.0 * n * N_star)
    if log_ratio >= 0.0:
        raise DesignError("design gives alpha = e^-R, outside the open interval (0, e^-R)")
    alpha = math.exp(-R + log_ratio / (2.0 * n))
    if alpha <= 0.01:
        raise DesignError(f"alpha = {alpha:.3g} <= 0.01: scheme degenerate, increase n")
    return alpha


def rate_check(mean_power: float, mean_noise: float, delta: float) -> float:
    """½·ln(1 + (E[P] - δ)/E[N]) in nats."""
    if mean_noise <= 0:
        return math.inf
    return 0.5 * math.log1p((mean_power - delta) / mean_noise)


def direct_errors(params: SchemeParams, eps0: float, d, s) -> np.ndarray:
    """ε_1..ε_n from ε_i = (1-β)·ε_{i-1} - β·α^i·d_i·s_i (unscaled reference)."""
    out = np.empty(params.n)
    e = eps0
    for i in range(1, params.n + 1):
        e = (1.0 - params.beta) * e - params.beta * params.alpha ** i * d[i - 1] * s[i - 1]
        out[i - 1] = e
    return out


@dataclass
class BoundsReport:
    n: int
    M: int
    R: float
    alpha: float
    beta: float
    gamma: float
    N_star: float
    mean_noise_power: float
    power_coefficient: float
    power_offset: float
    power_bound: float
    mse_bound: float
    pe_bound: float
    rate_check: float
    # total slack δ so that E[P] <= E[N]·(e^(2R) - 1) + δ holds at this n
    delta_required: float
    impulse_response: np.ndarray
    power_profile: np.ndarray | None = None

    def to_text(self, prefix: str = "") -> str:
        lines = []
        for key, val in asdict(self).items():
            if isinstance(val, np.ndarray):
                val = ",".join(format(float(v), ".17g") for v in val)
            elif val is None:
                val = ""
            elif isinstance(val, float):
                val = format(val, ".17g")
            lines.append(f"{prefix}{key} = {val}")
        return "\n".join(lines) + "\n"


def bounds_report(params: SchemeParams, mean_noise_power: float | None = None,
                  noise_powers=None, eps0: float | None = None,
                  impulse_length: int | None = None) -> BoundsReport:
    """Every closed-form quantity for ``params``.

    ``mean_noise_power`` defaults to N*; ``noise_powers`` (length n) adds the
    per-symbol power profile.
    """
    EN = params.N_star if mean_noise_power is None else float(mean_noise_power)
    coef = power_coefficient(params.alpha, params.beta)
    offset = power_offset(params)
    pbound = power_bound_general(params, EN)
    profile = None if noise_powers is None else power_profile(params, noise_powers, eps0)
    return BoundsReport(
        n=params.n, M=params.M, R=params.R, alpha=params.alpha, beta=params.beta,
        gamma=params.gamma, N_star=params.N_star, mean_noise_power=EN,
        power_coefficient=coef, power_offset=offset, power_bound=pbound,
        mse_bound=mse_bound(params), pe_bound=pe_bound(params),
        rate_check=rate_check(pbound, EN, offset),
        delta_required=params.N_star * (coef - math.expm1(2 * params.R)) + offset,
        impulse_response=impulse_response(params, min(params.n, impulse_length or params.n)),
        power_profile=profile,
    )


@dataclass
class ExactExpectation:
    exact_EP: float
    exact_mse: float
    exact_Pe: float
    exact_exceed: float


MAX_ENUMERATION_N = 22


def all_sign_sequences(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows start..stop-1 of the 2^n sign sequences in binary order (+1 before -1)."""
    stop = 2 ** n if stop is None else stop
    k = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (k >> np.arange(n - 1, -1, -1, dtype=np.int64)) & 1
    return 1.0 - 2.0 * bits


def exact_expectation(params: SchemeParams, m: int, noise_seq, *, chunk: int = 1 << 15) -> ExactExpectation:
    """Expectations over the scrambler by running every d in {-1, +1}^n.

    The noise sequence is held fixed. Sums use exactly rounded ``math.fsum``
    so the result does not depend on chunking.
    """
    n = params.n
    if n > MAX_ENUMERATION_N:
        raise ValueError(f"enumeration needs n <= {MAX_ENUMERATION_N}, got {n}")
    noise = np.asarray(noise_seq, dtype=float)
    if noise.size < n:
        raise ValueError(f"noise sequence shorter than n={n}")
    policy = FixedSequence(values=noise[:n])
    total = 2 ** n
    P_parts, e2_parts = [], []
    errors = exceeded = 0
    for start in range(0, total, chunk):
        d = all_sign_sequences(n, start, min(start + chunk, total))
        B = d.shape[0]
        batch = run_batch([m] * B, params, policy, d, [None] * B)
        P_parts.append(batch.realized_P)
        e2_parts.append(batch.eps_n * batch.eps_n)
        errors += int(batch.error.sum())
        exceeded += int(batch.threshold_exceeded.sum())
    return ExactExpectation(
        exact_EP=math.fsum(itertools.chain.from_iterable(P_parts)) / total,
        exact_mse=math.fsum(itertools.chain.from_iterable(e2_parts)) / total,
        exact_Pe=errors / total,
        exact_exceed=exceeded / total,
    )


def exact_closed_forms(params: SchemeParams, m: int, noise_seq) -> tuple[float, float]:
    """(E[P], E[ε_n²]) from the closed forms for a fixed noise sequence."""
    s = np.asarray(noise_seq, dtype=float)[: params.n]
    N = s * s
    eps0 = initial_error(m, params)
    EP = math.fsum(power_profile(params, N, eps0)) / params.n
    return EP, mse_exact(params, N, eps0)
