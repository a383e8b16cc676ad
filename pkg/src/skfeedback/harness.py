"""Monte Carlo experiments over many independent sessions.

Trial t draws its scrambler signs, noise and message from
``session_streams(seed, t)``. Trials are processed in fixed chunks of
``CHUNK`` consecutive indices, so the per-trial results, and therefore the
CSV output, are the same for any number of worker processes.
"""
from __future__ import annotations

import copy
import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from statistics import NormalDist
from typing import Any

import numpy as np

from . import analysis
from .noise import NoisePolicy, make_policy
from .scheme import (SchemeParams, draw_signs, messages_for_rate, random_message,
                     run_batch, session_streams)

DEFAULT_SEED = 20240611
CHUNK = 2048
MAX_ALL_MESSAGES = 64
Z95 = NormalDist().inv_cdf(0.975)

CSV_COLUMNS = ("trial_index", "n", "M", "R_nats", "alpha", "beta",
               "realized_P", "realized_N", "error_flag", "abs_eps_n")

SWEEPABLE = ("n", "messages", "rate", "alpha", "beta", "N_star", "pe_target")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One Monte Carlo experiment.

    Give ``messages`` (M) or ``rate`` (nats, M = round(e^(nR))). Without
    ``alpha`` the expansion parameter comes from
    ``choose_alpha(n, M, N_star, pe_target)``.

    ``message_mode`` is "uniform" (fresh uniform message per trial), "all"
    (trial t sends message t mod M + 1; needs M <= 64) or a fixed message
    number. ``noise_mode`` is "per_trial" (fresh noise stream per trial, so
    expectations are over noise and scrambler) or "fixed" (every trial
    reuses trial 0's noise stream, averaging over the scrambler only).
    ``sweep`` maps at most two axes to value lists; an axis is either a
    config field in SWEEPABLE or a policy argument.
    """

    n: int
    messages: int | None = None
    rate: float | None = None
    alpha: float | None = None
    beta: float | None = None
    N_star: float = 1.0
    pe_target: float = 0.01
    policy: str = "gaussian"
    policy_args: dict[str, Any] = field(default_factory=dict)
    trials: int = 1000
    seed: int = DEFAULT_SEED
    message_mode: str | int = "uniform"
    noise_mode: str = "per_trial"
    allow_cheat: bool = False
    delta: float | None = None
    sweep: dict[str, list] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if (self.messages is None) == (self.rate is None):
            raise ConfigError("give exactly one of messages and rate")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.noise_mode not in ("per_trial", "fixed"):
            raise ConfigError(f"noise_mode must be per_trial or fixed, got {self.noise_mode!r}")
        if isinstance(self.message_mode, str) and self.message_mode not in ("uniform", "all"):
            raise ConfigError(f"message_mode must be uniform, all or a message number, "
                              f"got {self.message_mode!r}")
        if len(self.sweep) > 2:
            raise ConfigError("at most two sweep axes")
        for axis, values in self.sweep.items():
            if not values:
                raise ConfigError(f"sweep axis {axis!r} is empty")

    def num_messages(self) -> int:
        return self.messages if self.messages is not None else messages_for_rate(self.n, self.rate)

    def resolve_params(self) -> SchemeParams:
        M = self.num_messages()
        alpha = self.alpha
        if alpha is None:
            alpha = analysis.choose_alpha(self.n, M, self.N_star, self.pe_target)
        return SchemeParams(n=self.n, M=M, alpha=alpha, beta=self.beta, N_star=self.N_star)

    def make_policy(self) -> NoisePolicy:
        return make_policy(self.policy, self.policy_args)

    def point(self, **overrides) -> ExperimentConfig:
        """Copy with sweep values applied and the sweep removed."""
        own = {f.name for f in fields(self)}
        cfg, pargs = {}, dict(self.policy_args)
        for key, val in overrides.items():
            if key == "messages":
                cfg["messages"], cfg["rate"] = int(val), None
            elif key == "rate":
                cfg["rate"], cfg["messages"] = float(val), None
            elif key in own:
                cfg[key] = int(val) if key == "n" else float(val)
            else:
                pargs[key] = val
        return replace(self, **cfg, policy_args=pargs, sweep={})


@dataclass
class TrialRecords:
    trial_index: np.ndarray
    message: list[int]
    realized_P: np.ndarray
    realized_N: np.ndarray
    error: np.ndarray
    threshold_exceeded: np.ndarray
    abs_eps_n: np.ndarray


@dataclass
class TrialStats:
    trials: int
    params: SchemeParams
    policy: str
    empirical_EP: float
    stderr_EP: float
    empirical_EN: float
    stderr_EN: float
    empirical_Pe: float
    pe_halfwidth: float
    empirical_exceed: float
    delta: float
    rate_gap: float
    stderr_rate_gap: float
    nominal_EN: float | None
    bound_refs: analysis.BoundsReport
    records: TrialRecords = field(repr=False)
    sweep_point: dict[str, Any] = field(default_factory=dict)

    @property
    def pe_upper(self) -> float:
        return min(1.0, self.empirical_Pe + self.pe_halfwidth)

    @property
    def pe_lower(self) -> float:
        return max(0.0, self.empirical_Pe - self.pe_halfwidth)

    def summary(self) -> str:
        out = [f"{k} = {v}" for k, v in self.sweep_point.items()]
        for key in ("trials", "policy", "empirical_EP", "stderr_EP", "empirical_EN", "stderr_EN",
                    "empirical_Pe", "pe_halfwidth", "empirical_exceed", "delta", "rate_gap",
                    "stderr_rate_gap", "nominal_EN"):
            val = getattr(self, key)
            out.append(f"{key} = {_fmt(val) if isinstance(val, float) else val}")
        out.append(f"pe_upper = {_fmt(self.pe_upper)}")
        return "\n".join(out) + "\n" + self.bound_refs.to_text(prefix="bounds.")


def _fmt(v: float | None) -> str:
    return "" if v is None else format(float(v), ".17g")


def binomial_halfwidth(errors: int, trials: int, z: float = Z95) -> float:
    """Normal-approximation half-width with continuity correction."""
    p = errors / trials
    return z * math.sqrt(p * (1.0 - p) / trials) + 0.5 / trials


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    with np.errstate(invalid="ignore", over="ignore"):
        mean = math.fsum(x) / x.size if np.all(np.isfinite(x)) else float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return mean, se


def _rate_gap(R, P, N, delta) -> tuple[float, float]:
    """R - ½ln(1 + (EP - δ)/EN) and its delta-method standard error."""
    EP, EN = float(np.mean(P)), float(np.mean(N))
    if not (math.isfinite(EP) and math.isfinite(EN)) or EN <= 0 or EN + EP - delta <= 0:
        return math.nan, math.nan
    gap = R - analysis.rate_check(EP, EN, delta)
    T = P.size
    if T < 2:
        return gap, math.nan
    denom = EN + EP - delta
    gP = -0.5 / denom
    gN = 0.5 * (EP - delta) / (EN * denom)
    cov = np.cov(np.vstack([P, N]), ddof=1) / T
    var = gP * gP * cov[0, 0] + 2 * gP * gN * cov[0, 1] + gN * gN * cov[1, 1]
    return gap, math.sqrt(max(var, 0.0))


def _trial_message(config: ExperimentConfig, M: int, t: int, rng: np.random.Generator) -> int:
    mode = config.message_mode
    if mode == "uniform":
        return random_message(rng, M)
    if mode == "all":
        if M > MAX_ALL_MESSAGES:
            raise ConfigError(f"message_mode=all needs M <= {MAX_ALL_MESSAGES}, got {M}")
        return t % M + 1
    m = int(mode)
    if not 1 <= m <= M:
        raise ConfigError(f"fixed message {m} outside [1, {M}]")
    return m


def _run_chunk(config: ExperimentConfig, params: SchemeParams, policy: NoisePolicy,
               start: int, stop: int):
    messages, noise_rngs = [], []
    d = np.empty((stop - start, params.n))
    for row, t in enumerate(range(start, stop)):
        scr, noise_rng, msg_rng = session_streams(config.seed, t)
        messages.append(_trial_message(config, params.M, t, msg_rng))
        d[row] = draw_signs(scr, params.n)
        if config.noise_mode == "fixed":
            noise_rng = session_streams(config.seed, 0)[1]
        noise_rngs.append(noise_rng)
    batch = run_batch(messages, params, copy.deepcopy(policy), d, noise_rngs,
                      allow_cheat=config.allow_cheat)
    return (messages, batch.realized_P, batch.realized_N, batch.error,
            batch.threshold_exceeded, np.abs(batch.eps_n))


def run_experiment(config: ExperimentConfig, workers: int = 1) -> TrialStats:
    """Run ``config.trials`` sessions and aggregate them.

    Results are identical for any ``workers`` >= 1.
    """
    if config.sweep:
        raise ConfigError("config has sweep axes; use run_sweep")
    params = config.resolve_params()
    policy = config.make_policy()
    bounds = [(s, min(s + CHUNK, config.trials)) for s in range(0, config.trials, CHUNK)]
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, *zip(*[(config, params, policy, a, b) for a, b in bounds])))
    else:
        parts = [_run_chunk(config, params, policy, a, b) for a, b in bounds]

    records = TrialRecords(
        trial_index=np.arange(config.trials),
        message=list(itertools.chain.from_iterable(p[0] for p in parts)),
        realized_P=np.concatenate([p[1] for p in parts]),
        realized_N=np.concatenate([p[2] for p in parts]),
        error=np.concatenate([p[3] for p in parts]),
        threshold_exceeded=np.concatenate([p[4] for p in parts]),
        abs_eps_n=np.concatenate([p[5] for p in parts]),
    )
    return aggregate(config, params, policy, records)


def aggregate(config: ExperimentConfig, params: SchemeParams, policy: NoisePolicy,
              records: TrialRecords) -> TrialStats:
    T = records.realized_P.size
    EP, seP = _mean_stderr(records.realized_P)
    EN, seN = _mean_stderr(records.realized_N)
    errors = int(records.error.sum())
    delta = analysis.power_offset(params) if config.delta is None else config.delta
    gap, se_gap = _rate_gap(params.R, records.realized_P, records.realized_N, delta)
    nominal = policy.mean_power(params)
    report = analysis.bounds_report(params, mean_noise_power=EN if nominal is None else nominal,
                                    impulse_length=16)
    return TrialStats(
        trials=T, params=params, policy=policy.name,
        empirical_EP=EP, stderr_EP=seP, empirical_EN=EN, stderr_EN=seN,
        empirical_Pe=errors / T, pe_halfwidth=binomial_halfwidth(errors, T),
        empirical_exceed=float(records.threshold_exceeded.mean()),
        delta=delta, rate_gap=gap, stderr_rate_gap=se_gap, nominal_EN=nominal,
        bound_refs=report, records=records,
    )


def run_sweep(config: ExperimentConfig, workers: int = 1) -> list[TrialStats]:
    """One TrialStats per point of the cartesian product of the sweep axes.

    Every point reuses ``config.seed`` (common random numbers across points),
    so a one-point sweep reproduces :func:`run_experiment` exactly.
    """
    if not config.sweep:
        return [run_experiment(config, workers)]
    axes = list(config.sweep)
    out = []
    for values in itertools.product(*(config.sweep[a] for a in axes)):
        point = dict(zip(axes, values))
        stats = run_experiment(config.point(**point), workers)
        stats.sweep_point = point
        out.append(stats)
    return out


def csv_rows(stats: TrialStats):
    p, r = stats.params, stats.records
    fixed = (str(p.n), str(p.M), _fmt(p.R), _fmt(p.alpha), _fmt(p.beta))
    for t in range(stats.trials):
        yield (str(int(r.trial_index[t])), *fixed, _fmt(r.realized_P[t]), _fmt(r.realized_N[t]),
               "1" if r.error[t] else "0", _fmt(r.abs_eps_n[t]))


def write_csv(stats_list: list[TrialStats] | TrialStats, fh) -> None:
    """Per-trial CSV; all sweep points share one header."""
    if isinstance(stats_list, TrialStats):
        stats_list = [stats_list]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for stats in stats_list:
        w.writerows(csv_rows(stats))


def csv_text(stats_list) -> str:
    buf = io.StringIO()
    write_csv(stats_list, buf)
    return buf.getvalue()
