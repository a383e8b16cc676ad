"""Additive channel and noise policies.

A policy produces the noise value s_i for a batch of independent sessions at
once. Every array handed to a policy has shape ``(B, i-1)`` (strict past
only) and every returned array has shape ``(B,)``; a single session is the
batch ``B = 1``. Per-session randomness is drawn in full at :meth:`reset`
from the policy's own generators, so the values a session sees do not
depend on how sessions are grouped into batches.

Causal policies never receive the current input x_i or the scrambler sign
d_i. :class:`CoherentCheat` is the one exception: it is flagged
``causal = False`` and is only reachable through :meth:`oracle_noise`, which
the session runners call only when cheating is explicitly allowed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar, Sequence

import numpy as np

if TYPE_CHECKING:
    from .scheme import SchemeParams


class PolicyError(ValueError):
    """Invalid policy configuration or input."""


class NonCausalPolicyError(PolicyError):
    """A non-causal policy was used without explicitly allowing it."""


class SequenceFileError(PolicyError):
    """Malformed noise sequence file."""


def apply_channel(x, s):
    """Channel output y = x + s (scalars or arrays)."""
    return x + s


class NoisePolicy:
    """Base class for batch noise policies.

    Subclasses are dataclasses holding configuration only; :meth:`reset`
    attaches per-session state for one run.
    """

    name: ClassVar[str] = "base"
    causal: ClassVar[bool] = True
    # True when s_i depends on past channel values (not a fixed sequence).
    adaptive: ClassVar[bool] = False

    def reset(self, params: SchemeParams, rngs: Sequence[np.random.Generator]) -> None:
        self._n = params.n
        self._batch = len(rngs)

    def next_noise(self, i: int, past_x: np.ndarray, past_y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def oracle_noise(self, i, past_x, past_y, *, x_i, d_i, u_prev) -> np.ndarray:
        raise NonCausalPolicyError(f"{self.name} has no oracle interface")

    def mean_power(self, params: SchemeParams) -> float | None:
        """Expected (1/n)·E||S||² when known in closed form, else None."""
        return None

    def config(self) -> dict[str, float | str]:
        return {}


@dataclass
class ZeroNoise(NoisePolicy):
    name: ClassVar[str] = "zero"

    def next_noise(self, i, past_x, past_y):
        return np.zeros(self._batch)

    def mean_power(self, params):
        return 0.0


@dataclass
class GaussianIID(NoisePolicy):
    """i.i.d. zero-mean Gaussian noise of variance ``N``."""

    name: ClassVar[str] = "gaussian"
    N: float = 1.0

    def __post_init__(self):
        self.N = float(self.N)
        if not (self.N >= 0 and math.isfinite(self.N)):
            raise PolicyError(f"GaussianIID: N must be finite and >= 0, got {self.N}")

    def reset(self, params, rngs):
        super().reset(params, rngs)
        self._s = math.sqrt(self.N) * np.stack([r.standard_normal(params.n) for r in rngs])

    def next_noise(self, i, past_x, past_y):
        return self._s[:, i - 1]

    def mean_power(self, params):
        return self.N

    def config(self):
        return {"N": self.N}


@dataclass
class EndImpulse(NoisePolicy):
    """All noise energy on the last symbol: s_n = sqrt(n·N*), zero elsewhere.

    The mean power (1/n)·Σ s_i² equals N* exactly, which makes both
    inequalities of the mean-square error bound hold with equality.
    ``N_star=None`` takes the cap from the scheme parameters.
    """

    name: ClassVar[str] = "end_impulse"
    N_star: float | None = None

    def __post_init__(self):
        if self.N_star is not None:
            self.N_star = float(self.N_star)
            if not (self.N_star >= 0 and math.isfinite(self.N_star)):
                raise PolicyError(f"EndImpulse: N_star must be finite and >= 0, got {self.N_star}")

    def _cap(self, params):
        return params.N_star if self.N_star is None else self.N_star

    def reset(self, params, rngs):
        super().reset(params, rngs)
        self._amp = math.sqrt(params.n * self._cap(params))

    def next_noise(self, i, past_x, past_y):
        return np.full(self._batch, self._amp if i == self._n else 0.0)

    def mean_power(self, params):
        return self._cap(params)

    def config(self):
        return {} if self.N_star is None else {"N_star": self.N_star}


@dataclass(eq=False)
class FixedSequence(NoisePolicy):
    """Replays a predetermined sequence (the first n values are used)."""

    name: ClassVar[str] = "fixed"
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    path: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(self.values)):
            raise PolicyError("FixedSequence: values must be finite")

    @classmethod
    def from_file(cls, path: str | Path) -> FixedSequence:
        return cls(values=read_sequence(path), path=str(path))

    def reset(self, params, rngs):
        super().reset(params, rngs)
        if self.values.size < params.n:
            raise PolicyError(
                f"FixedSequence: need at least n={params.n} values, have {self.values.size}"
            )
        self._s = self.values[: params.n]

    def next_noise(self, i, past_x, past_y):
        return np.full(self._batch, self._s[i - 1])

    def mean_power(self, params):
        s = self.values[: params.n]
        return float(np.dot(s, s) / params.n)

    def config(self):
        return {"path": self.path} if self.path else {}


@dataclass
class PowerTracker(NoisePolicy):
    """Adversary that scales Gaussian noise to K times the transmitter's headroom.

    Before symbol i it computes the energy the transmitter could still spend
    without violating E[P] <= E[N]·(exp(2R) - 1) + δ, judged on realized
    quantities so far::

        target_i = (Σ_{j<i} s_j² / n)·(exp(2R) - 1) + δ
        budget_i = max(0, n·target_i - Σ_{j<i} x_j²)

    and emits s_i ~ N(0, K·budget_i). ``delta=None`` uses the 1/n term of
    the power bound for the session parameters.
    """

    name: ClassVar[str] = "power_tracker"
    adaptive: ClassVar[bool] = True
    K: float = 10.0
    delta: float | None = None

    def __post_init__(self):
        self.K = float(self.K)
        if not (self.K > 0 and math.isfinite(self.K)):
            raise PolicyError(f"PowerTracker: K must be finite and > 0, got {self.K}")
        if self.delta is not None:
            self.delta = float(self.delta)
            if not self.delta >= 0:
                raise PolicyError(f"PowerTracker: delta must be >= 0, got {self.delta}")

    def reset(self, params, rngs):
        from .analysis import power_offset

        super().reset(params, rngs)
        self._w = np.stack([r.standard_normal(params.n) for r in rngs])
        self._delta = power_offset(params) if self.delta is None else self.delta
        self._expansion = math.expm1(2.0 * params.R)
        self._sum_x2 = np.zeros(self._batch)
        self._sum_s2 = np.zeros(self._batch)
        self._last_s = np.zeros(self._batch)

    def budget(self) -> np.ndarray:
        n = self._n
        target = (self._sum_s2 / n) * self._expansion + self._delta
        return np.maximum(0.0, n * target - self._sum_x2)

    def next_noise(self, i, past_x, past_y):
        if i >= 2:
            x = past_x[:, -1]
            self._sum_x2 = self._sum_x2 + x * x
            self._sum_s2 = self._sum_s2 + self._last_s * self._last_s
        with np.errstate(over="ignore", invalid="ignore"):
            s = np.sqrt(self.K * self.budget()) * self._w[:, i - 1]
        self._last_s = s
        return s

    def config(self):
        out = {"K": self.K}
        if self.delta is not None:
            out["delta"] = self.delta
        return out


@dataclass
class CoherentCheat(NoisePolicy):
    """Non-causal demonstrator that sees d_i and the transmitter error.

    s_i = -c_i·d_i·sign(u_{i-1})·|w_i| with c_i = |x_i|·10^(gain_db/20), so
    the noise power matches the concurrent signal power at 0 dB and every
    contribution pushes the estimation error further from zero.
    """

    name: ClassVar[str] = "coherent_cheat"
    causal: ClassVar[bool] = False
    adaptive: ClassVar[bool] = True
    gain_db: float = 0.0

    def __post_init__(self):
        self.gain_db = float(self.gain_db)

    def reset(self, params, rngs):
        super().reset(params, rngs)
        self._w = np.abs(np.stack([r.standard_normal(params.n) for r in rngs]))
        self._gain = 10.0 ** (self.gain_db / 20.0)

    def next_noise(self, i, past_x, past_y):
        raise NonCausalPolicyError(
            "coherent_cheat needs the scrambler sign and transmitter state; "
            "run it with cheating explicitly allowed"
        )

    def oracle_noise(self, i, past_x, past_y, *, x_i, d_i, u_prev):
        c = self._gain * np.abs(x_i)
        return -c * d_i * np.sign(u_prev) * self._w[:, i - 1]

    def config(self):
        return {"gain_db": self.gain_db}


POLICIES: dict[str, type[NoisePolicy]] = {
    cls.name: cls
    for cls in (ZeroNoise, GaussianIID, EndImpulse, FixedSequence, PowerTracker, CoherentCheat)
}


def make_policy(name: str, args: dict[str, str | float] | None = None) -> NoisePolicy:
    """Build a policy from its registry name and string/number arguments."""
    args = dict(args or {})
    try:
        cls = POLICIES[name]
    except KeyError:
        raise PolicyError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    if cls is FixedSequence:
        path = args.pop("path", None)
        if path is None or args:
            raise PolicyError("fixed policy takes exactly one argument: path")
        return FixedSequence.from_file(str(path))
    fields = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
    kwargs = {}
    for key, val in args.items():
        if key not in fields:
            raise PolicyError(f"policy {name!r} has no argument {key!r}; valid: {sorted(fields)}")
        try:
            kwargs[key] = float(val)
        except (TypeError, ValueError):
            raise PolicyError(f"policy argument {key}={val!r} is not a number") from None
    return cls(**kwargs)


def read_sequence(path: str | Path) -> np.ndarray:
    """Parse a noise file: one decimal real per line; blank lines are skipped."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise SequenceFileError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not math.isfinite(v):
                raise SequenceFileError(f"{path}:{lineno}: non-finite value {text!r}")
            values.append(v)
    return np.array(values, dtype=float)


def write_sequence(path: str | Path, values) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(values, dtype=float):
            fh.write(f"{float(v)!r}\n")


def realize_sequence(policy: NoisePolicy, params: SchemeParams, rng: np.random.Generator) -> np.ndarray:
    """Draw the full noise sequence of a non-adaptive policy."""
    if policy.adaptive or not policy.causal:
        raise PolicyError(f"{policy.name} depends on the channel; it has no fixed realization")
    policy.reset(params, [rng])
    empty = np.zeros((1, 0))
    return np.array([policy.next_noise(i, empty, empty)[0] for i in range(1, params.n + 1)])
