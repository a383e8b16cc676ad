"""Power-adaptive Schalkwijk-Kailath transmitter and receiver.

The transmitter keeps the scaled error u_i = α^-i·ε_i instead of ε_i itself:
ε_i shrinks like α^(2i) and α^-i grows without bound, so the unscaled
quantities under- and overflow long before n reaches the thousands. With
β = 1 - α² the scaled update is u_i = α·u_{i-1} - β·d_i·s_i.

The receiver runs θ̂_i = θ̂_{i-1} - β·α^i·d_i·y_i directly in double
precision. That estimate cannot resolve message intervals of width 1/M once
M exceeds ~2^50, so session outcomes (decoded message, error flag) are
resolved from the exact offset ε_n = α^n·u_n in log domain, which is the
same quantity θ̂_n - θ in exact arithmetic. For small M both routes agree;
see :func:`decode`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from typing import Sequence

import numpy as np

from .noise import NoisePolicy, NonCausalPolicyError, apply_channel

# Sub-stream keys under a (seed, index) pair; see session_streams.
SCRAMBLER_STREAM = 0
NOISE_STREAM = 1
MESSAGE_STREAM = 2


@dataclass(frozen=True)
class SchemeParams:
    """Scalar parameters of one coded transmission.

    ``M`` is primary and the rate R = ln(M)/n (nats per channel use) is
    derived. ``beta`` defaults to the power-optimal 1 - α².
    """

    n: int
    M: int
    alpha: float
    beta: float | None = None
    N_star: float = 1.0

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if isinstance(self.M, bool) or not isinstance(self.M, (int, np.integer)) or self.M < 2:
            raise ValueError(f"M must be an integer >= 2, got {self.M!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "M", int(self.M))
        alpha = float(self.alpha)
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        object.__setattr__(self, "alpha", alpha)
        beta = 1.0 - alpha * alpha if self.beta is None else float(self.beta)
        if not 0.0 < beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {beta}")
        object.__setattr__(self, "beta", beta)
        N_star = float(self.N_star)
        if not (N_star >= 0.0 and math.isfinite(N_star)):
            raise ValueError(f"N_star must be finite and >= 0, got {N_star}")
        object.__setattr__(self, "N_star", N_star)

    @classmethod
    def from_rate(cls, n: int, R: float, alpha: float, beta: float | None = None,
                  N_star: float = 1.0) -> SchemeParams:
        return cls(n=n, M=messages_for_rate(n, R), alpha=alpha, beta=beta, N_star=N_star)

    @property
    def R(self) -> float:
        return math.log(self.M) / self.n

    @property
    def log_M(self) -> float:
        return math.log(self.M)

    @property
    def gamma(self) -> float:
        return (1.0 - self.beta) ** 2 / self.alpha ** 2

    @property
    def contraction(self) -> float:
        """Noiseless per-symbol factor of the scaled error, (1 - β)/α."""
        return (1.0 - self.beta) / self.alpha

    @property
    def has_optimal_beta(self) -> bool:
        return math.isclose(self.beta, 1.0 - self.alpha ** 2, rel_tol=1e-12, abs_tol=1e-15)


def messages_for_rate(n: int, R: float) -> int:
    """Message count M = round(exp(n·R)), exact for any size (R in nats)."""
    if n < 1 or not R > 0:
        raise ValueError("need n >= 1 and R > 0")
    nR = Decimal(n) * Decimal(R)
    with localcontext() as ctx:
        ctx.prec = int(nR / Decimal("2.302585")) + 30
        M = int(nR.exp().to_integral_value(rounding=ROUND_HALF_EVEN))
    if M < 2:
        raise ValueError(f"n·R = {float(nR):g} gives fewer than 2 messages")
    return M


def _check_message(m: int, M: int) -> None:
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or not 1 <= m <= M:
        raise ValueError(f"message must be an integer in [1, {M}], got {m!r}")


def message_to_theta(m: int, params: SchemeParams) -> float:
    """Centre of the m-th of M equal subintervals of [0, 1): (m - 1/2)/M."""
    _check_message(m, params.M)
    return (2 * int(m) - 1) / (2 * params.M)


def initial_error(m: int, params: SchemeParams) -> float:
    """ε_0 = θ̂_0 - θ = 1/2 - (m - 1/2)/M, correctly rounded for any M."""
    _check_message(m, params.M)
    return (params.M + 1 - 2 * int(m)) / (2 * params.M)


def random_message(rng: np.random.Generator, M: int) -> int:
    """Uniform draw from {1, ..., M}; M may exceed 64 bits."""
    if M <= 2 ** 62:
        return int(rng.integers(1, M + 1))
    nbits = (M - 1).bit_length()
    nbytes = (nbits + 7) // 8
    while True:
        k = int.from_bytes(rng.bytes(nbytes), "little") >> (8 * nbytes - nbits)
        if k < M:
            return k + 1


def session_streams(seed: int, index: int = 0) -> tuple[np.random.Generator, ...]:
    """Independent (scrambler, noise, message) generators for session ``index``.

    Each stream is keyed by ``SeedSequence(seed, spawn_key=(index, k))`` with
    k = 0 scrambler, 1 noise, 2 message, so changing how the noise stream is
    consumed never changes the scrambler signs.
    """
    return tuple(
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, k)))
        for k in (SCRAMBLER_STREAM, NOISE_STREAM, MESSAGE_STREAM)
    )


def draw_signs(rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. uniform signs in {-1.0, +1.0}."""
    return 1.0 - 2.0 * rng.integers(0, 2, size=n)


@dataclass
class TransmitterState:
    theta: float
    u: float
    i: int = 0


@dataclass
class ReceiverState:
    theta_hat: float = 0.5
    i: int = 0
    alpha_pow: float = 1.0  # α^i, advanced by repeated multiplication


def transmit_step(state: TransmitterState, d_i: float, params: SchemeParams) -> float:
    """X_i = α^-i·d_i·ε_{i-1}, computed as d_i·u_{i-1}/α."""
    return d_i * state.u / params.alpha


def receive_step(state: ReceiverState, d_i: float, y_i: float, params: SchemeParams) -> ReceiverState:
    a = state.alpha_pow * params.alpha
    theta_hat = state.theta_hat - params.beta * a * d_i * y_i
    return ReceiverState(theta_hat=theta_hat, i=state.i + 1, alpha_pow=a)


def transmitter_update(state: TransmitterState, d_i: float, y_i: float, x_i: float,
                       params: SchemeParams) -> TransmitterState:
    """Scaled error update from the fed-back output y_i and the sent x_i."""
    u = params.contraction * state.u - params.beta * d_i * (y_i - x_i)
    return TransmitterState(theta=state.theta, u=u, i=state.i + 1)


def decode(state: ReceiverState | float, params: SchemeParams) -> int:
    """Receiver decision floor(θ̂·M) + 1, clamped to [1, M].

    Intervals are half-open, [(m-1)/M, m/M), so an estimate exactly on the
    edge k/M decodes to message k + 1. A NaN estimate decodes to 1.
    """
    theta_hat = state.theta_hat if isinstance(state, ReceiverState) else float(state)
    if math.isnan(theta_hat) or theta_hat < 0.0:
        return 1
    if theta_hat >= 1.0:
        return params.M
    return min(max(math.floor(theta_hat * params.M) + 1, 1), params.M)


def _outcomes(params: SchemeParams, u_n, alpha_pow_n: float, first, last) -> dict[str, np.ndarray]:
    """Resolve decoding from the scaled final error, vectorized over sessions.

    With t = ε_n·M the receiver decides m + floor(t + 1/2) (before clamping);
    ``first``/``last`` mark sessions whose message is 1 or M, where clamping
    absorbs an overshoot past the end of [0, 1).
    """
    u_n = np.asarray(u_n, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_abs_eps = params.n * math.log(params.alpha) + np.log(np.abs(u_n))
        t = np.sign(u_n) * np.exp(log_abs_eps + params.log_M)
        k = np.floor(t + 0.5)
        eps_n = alpha_pow_n * u_n
    bad = ~np.isfinite(u_n)
    error = ((k > 0) & ~np.asarray(last)) | ((k < 0) & ~np.asarray(first)) | bad
    exceeded = (np.abs(t) >= 0.5) | bad
    return {"eps_n": eps_n, "log_abs_eps_n": log_abs_eps, "offset": k,
            "error": error, "exceeded": exceeded}


@dataclass
class Transcript:
    """Per-symbol record of one session (arrays have length n)."""

    params: SchemeParams
    m: int
    theta: float
    eps0: float
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    d: np.ndarray
    theta_hat: np.ndarray
    u: np.ndarray
    realized_P: float
    realized_N: float
    decoded: int
    error: bool
    threshold_exceeded: bool
    eps_n: float
    log_abs_eps_n: float

    @property
    def eps(self) -> np.ndarray:
        """ε_i = α^i·u_i for i = 1..n (may underflow for large n)."""
        i = np.arange(1, self.params.n + 1)
        return self.params.alpha ** i * self.u


def _check_policy(policy: NoisePolicy, allow_cheat: bool) -> None:
    if not policy.causal and not allow_cheat:
        raise NonCausalPolicyError(
            f"policy {policy.name!r} is non-causal (it reads the scrambler sign and "
            "transmitter state); it is refused unless cheating is explicitly allowed"
        )


def run_session(m: int, params: SchemeParams, policy: NoisePolicy, *,
                seed: int | None = None, index: int = 0,
                scrambler: np.random.Generator | None = None,
                noise_rng: np.random.Generator | None = None,
                d: Sequence[float] | None = None,
                allow_cheat: bool = False) -> Transcript:
    """Run one transmission of message ``m`` symbol by symbol.

    Randomness comes from ``session_streams(seed, index)`` unless the
    scrambler/noise generators are given; ``d`` overrides the scrambler
    signs entirely.
    """
    _check_policy(policy, allow_cheat)
    _check_message(m, params.M)
    n = params.n
    if scrambler is None or noise_rng is None:
        if seed is None:
            raise ValueError("give either seed or both scrambler and noise_rng")
        s_rng, p_rng, _ = session_streams(seed, index)
        scrambler = scrambler or s_rng
        noise_rng = noise_rng or p_rng
    if d is None:
        d = draw_signs(scrambler, n)
    d = np.asarray(d, dtype=float)
    if d.shape != (n,) or not np.all(np.abs(d) == 1.0):
        raise ValueError("scrambler signs must be n values in {-1, +1}")

    policy.reset(params, [noise_rng])
    theta = message_to_theta(m, params)
    eps0 = initial_error(m, params)
    tx = TransmitterState(theta=theta, u=eps0)
    rx = ReceiverState()
    X = np.zeros((1, n))
    S = np.zeros((1, n))
    Y = np.zeros((1, n))
    theta_hat = np.zeros(n)
    u = np.zeros(n)
    sum_x2 = sum_s2 = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n + 1):
            d_i = float(d[i - 1])
            x_i = transmit_step(tx, d_i, params)
            past_x, past_y = _past(X, Y, i)
            if policy.causal:
                s_i = float(policy.next_noise(i, past_x, past_y)[0])
            else:
                s_i = float(policy.oracle_noise(
                    i, past_x, past_y, x_i=np.array([x_i]), d_i=np.array([d_i]),
                    u_prev=np.array([tx.u]))[0])
            y_i = apply_channel(x_i, s_i)
            rx = receive_step(rx, d_i, y_i, params)
            tx = transmitter_update(tx, d_i, y_i, x_i, params)
            X[0, i - 1], S[0, i - 1], Y[0, i - 1] = x_i, s_i, y_i
            theta_hat[i - 1] = rx.theta_hat
            u[i - 1] = tx.u
            sum_x2 = sum_x2 + x_i * x_i
            sum_s2 = sum_s2 + s_i * s_i

    out = _outcomes(params, np.array([tx.u]), rx.alpha_pow, [m == 1], [m == params.M])
    offset = out["offset"][0]
    if out["error"][0] and not math.isfinite(offset):
        decoded = 1 if (math.isnan(offset) or offset < 0) else params.M
    else:
        decoded = min(max(m + (int(offset) if math.isfinite(offset) else 0), 1), params.M)
    return Transcript(
        params=params, m=int(m), theta=theta, eps0=eps0,
        x=X[0], s=S[0], y=Y[0], d=d, theta_hat=theta_hat, u=u,
        realized_P=sum_x2 / n, realized_N=sum_s2 / n,
        decoded=decoded, error=bool(out["error"][0]),
        threshold_exceeded=bool(out["exceeded"][0]),
        eps_n=float(out["eps_n"][0]), log_abs_eps_n=float(out["log_abs_eps_n"][0]),
    )


def _past(X: np.ndarray, Y: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
    px, py = X[:, : i - 1], Y[:, : i - 1]
    px.flags.writeable = False
    py.flags.writeable = False
    return px, py


@dataclass
class SessionBatch:
    """Outcomes of B sessions run side by side (all arrays have length B)."""

    params: SchemeParams
    messages: list[int]
    eps0: np.ndarray
    realized_P: np.ndarray
    realized_N: np.ndarray
    eps_n: np.ndarray
    log_abs_eps_n: np.ndarray
    error: np.ndarray
    threshold_exceeded: np.ndarray
    traces: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.messages)


def run_batch(messages: Sequence[int], params: SchemeParams, policy: NoisePolicy,
              d: np.ndarray, noise_rngs: Sequence[np.random.Generator], *,
              allow_cheat: bool = False, record: bool = False) -> SessionBatch:
    """Vectorized :func:`run_session` over independent sessions.

    Row b uses message ``messages[b]``, signs ``d[b]`` and noise generator
    ``noise_rngs[b]``. Each row evolves with the same floating-point
    operations as the scalar runner, so row b of the output is bit-identical
    to ``run_session`` with the same inputs.
    """
    _check_policy(policy, allow_cheat)
    n = params.n
    d = np.asarray(d, dtype=float)
    B = len(messages)
    if d.shape != (B, n):
        raise ValueError(f"signs must have shape ({B}, {n}), got {d.shape}")
    if len(noise_rngs) != B:
        raise ValueError("need one noise generator per session")
    for m in messages:
        _check_message(m, params.M)

    policy.reset(params, noise_rngs)
    alpha, beta, contraction = params.alpha, params.beta, params.contraction
    eps0 = np.array([initial_error(m, params) for m in messages])
    u = eps0.copy()
    theta_hat = np.full(B, 0.5)
    a = 1.0
    X = np.zeros((B, n))
    Y = np.zeros((B, n))
    sum_x2 = np.zeros(B)
    sum_s2 = np.zeros(B)
    if record:
        S = np.zeros((B, n))
        TH = np.zeros((B, n))
        U = np.zeros((B, n))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n + 1):
            d_i = d[:, i - 1]
            x = d_i * u / alpha
            past_x, past_y = _past(X, Y, i)
            if policy.causal:
                s = np.asarray(policy.next_noise(i, past_x, past_y), dtype=float)
            else:
                s = np.asarray(policy.oracle_noise(i, past_x, past_y, x_i=x, d_i=d_i, u_prev=u),
                               dtype=float)
            y = apply_channel(x, s)
            a = a * alpha
            theta_hat = theta_hat - beta * a * d_i * y
            u = contraction * u - beta * d_i * (y - x)
            X[:, i - 1] = x
            Y[:, i - 1] = y
            sum_x2 = sum_x2 + x * x
            sum_s2 = sum_s2 + s * s
            if record:
                S[:, i - 1] = s
                TH[:, i - 1] = theta_hat
                U[:, i - 1] = u

    first = np.array([m == 1 for m in messages])
    last = np.array([m == params.M for m in messages])
    out = _outcomes(params, u, a, first, last)
    traces = {"x": X, "s": S, "y": Y, "d": d, "theta_hat": TH, "u": U} if record else {}
    return SessionBatch(
        params=params, messages=[int(m) for m in messages], eps0=eps0,
        realized_P=sum_x2 / n, realized_N=sum_s2 / n,
        eps_n=out["eps_n"], log_abs_eps_n=out["log_abs_eps_n"],
        error=out["error"], threshold_exceeded=out["exceeded"], traces=traces,
    )
