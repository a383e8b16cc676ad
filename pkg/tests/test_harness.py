import csv
import io
import math

import numpy as np
import pytest

from skfeedback import analysis as an
from skfeedback.harness import (CSV_COLUMNS, ConfigError, ExperimentConfig, binomial_halfwidth, csv_text,
                                run_experiment, run_sweep)
from skfeedback.noise import NonCausalPolicyError
from skfeedback.scheme import run_session


def test_zero_noise_experiment():
    cfg = ExperimentConfig(n=40, rate=0.2, policy="zero", trials=100)
    s = run_experiment(cfg)
    assert s.empirical_Pe == 0.0 and s.empirical_EN == 0.0
    assert s.trials == 100 and s.params.alpha < math.exp(-s.params.R)


def test_records_match_individual_sessions():
    cfg = ExperimentConfig(n=25, messages=1000, alpha=0.7, policy="gaussian",
                           policy_args={"N": 0.5}, trials=30, seed=77)
    s = run_experiment(cfg)
    for t in (0, 13, 29):
        ref = run_session(s.records.message[t], s.params, cfg.make_policy(), seed=77, index=t)
        assert s.records.realized_P[t] == ref.realized_P
        assert s.records.realized_N[t] == ref.realized_N
        assert bool(s.records.error[t]) == ref.error


def test_conservation_per_trial():
    cfg = ExperimentConfig(n=30, messages=64, alpha=0.75, policy="gaussian", trials=20, seed=5)
    s = run_experiment(cfg)
    for t in range(20):
        ref = run_session(s.records.message[t], s.params, cfg.make_policy(), seed=5, index=t)
        assert ref.realized_P * 30 == pytest.approx(np.sum(ref.x ** 2), rel=1e-14)
        assert ref.realized_N * 30 == pytest.approx(np.sum(ref.s ** 2), rel=1e-14)


def test_reproducible_and_worker_independent():
    cfg = ExperimentConfig(n=50, rate=0.2, policy="power_tracker", policy_args={"K": 3},
                           trials=5000, seed=11)
    a = csv_text(run_experiment(cfg, workers=1))
    b = csv_text(run_experiment(cfg, workers=3))
    c = csv_text(run_experiment(cfg, workers=1))
    assert a == b == c
    assert csv_text(run_experiment(ExperimentConfig(**{**cfg.__dict__, "seed": 12}))) != a


def test_noise_stream_does_not_touch_scrambler():
    base = dict(n=20, messages=16, alpha=0.7, trials=10, seed=3, message_mode=5)
    a = run_experiment(ExperimentConfig(policy="zero", **base))
    b = run_experiment(ExperimentConfig(policy="gaussian", **base))
    # zero noise: realized_P depends only on the message, not the signs; check the
    # signs themselves through single sessions
    for t in range(10):
        ta = run_session(5, a.params, a.records and ExperimentConfig(policy="zero", **base).make_policy(),
                         seed=3, index=t)
        tb = run_session(5, b.params, ExperimentConfig(policy="gaussian", **base).make_policy(),
                         seed=3, index=t)
        assert np.array_equal(ta.d, tb.d)


def test_fixed_noise_mode_reuses_sequence():
    cfg = ExperimentConfig(n=15, messages=8, alpha=0.6, policy="gaussian", trials=50,
                           noise_mode="fixed", seed=9)
    s = run_experiment(cfg)
    assert np.all(s.records.realized_N == s.records.realized_N[0])
    per = run_experiment(ExperimentConfig(**{**cfg.__dict__, "noise_mode": "per_trial"}))
    assert len(set(per.records.realized_N.tolist())) > 1


def test_all_messages_mode():
    s = run_experiment(ExperimentConfig(n=10, messages=6, alpha=0.5, policy="zero", trials=12,
                                        message_mode="all"))
    assert s.records.message == [1, 2, 3, 4, 5, 6] * 2
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(n=10, messages=100, alpha=0.5, policy="zero", trials=2,
                                        message_mode="all"))


def test_uniform_messages_cover_range():
    s = run_experiment(ExperimentConfig(n=10, messages=5, alpha=0.5, policy="zero", trials=500))
    counts = np.bincount(s.records.message, minlength=6)[1:]
    assert counts.min() > 60


def test_cheat_needs_flag():
    cfg = ExperimentConfig(n=10, messages=8, alpha=0.6, policy="coherent_cheat", trials=5)
    with pytest.raises(NonCausalPolicyError):
        run_experiment(cfg)
    s = run_experiment(ExperimentConfig(**{**cfg.__dict__, "allow_cheat": True}))
    assert s.trials == 5


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(n=10)
    with pytest.raises(ConfigError):
        ExperimentConfig(n=10, messages=4, rate=0.1)
    with pytest.raises(ConfigError):
        ExperimentConfig(n=10, messages=4, trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(n=10, messages=4, sweep={"n": []})
    with pytest.raises(ConfigError):
        ExperimentConfig(n=10, messages=4, sweep={"n": [1], "K": [1], "N": [1]})


def test_stats_fields():
    s = run_experiment(ExperimentConfig(n=200, rate=0.2, policy="gaussian", trials=400))
    assert 0 <= s.empirical_Pe <= 1 and s.empirical_EN >= 0
    assert s.stderr_EP > 0 and s.stderr_EN > 0
    assert s.delta == an.power_offset(s.params)
    assert s.bound_refs.mean_noise_power == 1.0
    assert s.pe_upper >= s.empirical_Pe >= s.pe_lower
    assert math.isfinite(s.rate_gap) and s.stderr_rate_gap > 0
    text = s.summary()
    assert "empirical_EP = " in text and "bounds.power_bound = " in text


def test_binomial_halfwidth():
    assert binomial_halfwidth(0, 100000) == pytest.approx(5e-6)
    hw = binomial_halfwidth(50, 100)
    assert hw == pytest.approx(1.959963984540054 * 0.05 + 0.005, rel=1e-12)


def test_csv_format():
    s = run_experiment(ExperimentConfig(n=20, messages=10 ** 25, alpha=0.2, policy="gaussian", trials=3))
    rows = list(csv.reader(io.StringIO(csv_text(s))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    assert rows[1][2] == str(10 ** 25)
    assert float(rows[1][6]) == s.records.realized_P[0]
    assert rows[1][8] in ("0", "1")


def test_sweep_single_point_equals_experiment():
    cfg = ExperimentConfig(n=60, rate=0.2, policy="gaussian", trials=200, seed=4)
    one = run_sweep(ExperimentConfig(**{**cfg.__dict__, "sweep": {"n": [60]}}))
    assert len(one) == 1
    assert csv_text(one) == csv_text(run_experiment(cfg))
    assert one[0].sweep_point == {"n": 60}


def test_sweep_cartesian_product():
    cfg = ExperimentConfig(n=40, rate=0.2, policy="power_tracker", trials=50,
                           sweep={"K": [1, 10], "n": [30, 40]})
    out = run_sweep(cfg)
    assert [o.sweep_point for o in out] == [{"K": 1, "n": 30}, {"K": 1, "n": 40},
                                            {"K": 10, "n": 30}, {"K": 10, "n": 40}]
    assert out[1].params.n == 40


def test_sweep_n_power_decreases_toward_limit():
    # the worst-case offset term shrinks like 1/n; the realized power follows
    cfg = ExperimentConfig(n=500, rate=0.2, policy="gaussian", trials=2000, alpha=0.8,
                           sweep={"n": [20, 100, 500]})
    out = run_sweep(cfg)
    limit = 0.8 ** -2 - 1
    gaps = [abs(o.empirical_EP - limit) for o in out]
    assert gaps[0] > gaps[1] > gaps[2] or gaps[2] < 3 * out[2].stderr_EP + 1e-3
    assert gaps[2] < 0.02


def test_sweep_K_monotone_errors():
    cfg = ExperimentConfig(n=100, rate=0.2, policy="power_tracker", trials=1000,
                           sweep={"K": [1, 10, 100]})
    out = run_sweep(cfg)
    pe = [o.empirical_Pe for o in out]
    hw = [o.pe_halfwidth for o in out]
    for a, b, ha, hb in zip(pe, pe[1:], hw, hw[1:]):
        assert b >= a - (ha + hb)
    assert pe[2] > pe[0]
