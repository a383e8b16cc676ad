"""Command-line front end.

Subcommands: run, sweep, bounds, oracle, session. Flags override values
from ``--config``. Exit status: 0 success, 1 configuration error,
2 failed oracle check.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import analysis
from .config import config_from_assignments, emit_config, parse_assignments
from .harness import DEFAULT_SEED, ConfigError, ExperimentConfig, run_experiment, run_sweep, write_csv
from .noise import NonCausalPolicyError, PolicyError, read_sequence, realize_sequence
from .scheme import SchemeParams, initial_error, run_session, session_streams

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2
ORACLE_TOL = 1e-10


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--out", metavar="PATH", help="output file (CSV for run/sweep, text otherwise)")
    p.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    p.add_argument("--n", type=int, help="block length")
    p.add_argument("--messages", type=int, help="number of messages M")
    p.add_argument("--rate", type=float, help="rate; M = round(exp(n*R))")
    p.add_argument("--bits", action="store_true", help="--rate is in bits, not nats")
    p.add_argument("--alpha", type=float, help="expansion parameter (default: choose_alpha)")
    p.add_argument("--beta", type=float, help="receiver gain (default 1 - alpha^2)")
    p.add_argument("--N-star", dest="N_star", type=float, help="noise mean-power cap")
    p.add_argument("--pe-target", dest="pe_target", type=float, help="error target for choose_alpha")
    p.add_argument("--policy", help="noise policy name")
    p.add_argument("--policy-arg", action="append", default=[], metavar="KEY=VAL",
                   help="policy argument (repeatable)")
    p.add_argument("--allow-cheat", action="store_true", help="permit the non-causal coherent_cheat policy")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skfeedback", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("run", "Monte Carlo experiment"), ("sweep", "parameter sweep")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--message-mode", dest="message_mode", help="uniform, all, or a message number")
        p.add_argument("--noise-mode", dest="noise_mode", choices=("per_trial", "fixed"))
        p.add_argument("--delta", type=float, help="slack used in the rate gap")
        p.add_argument("--report", metavar="PATH", help="write the summary here instead of stdout")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
        if name == "sweep":
            p.add_argument("--sweep", action="append", default=[], metavar="AXIS=V1,V2",
                           help="sweep axis (at most two)")

    p = sub.add_parser("bounds", help="closed-form bounds report")
    _common(p)
    p.add_argument("--noise-file", metavar="PATH", help="noise sequence; squares give the power profile")
    p.add_argument("--mean-noise", type=float, help="E[N] for the power bound (default N*)")

    for name, help_ in (("oracle", "exact expectations by enumeration vs closed forms"),
                        ("session", "dump one session transcript")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--message", type=int, default=1)
        if name == "oracle":
            p.add_argument("--tol", type=float, default=ORACLE_TOL)
    return parser


_FLAG_KEYS = ("seed", "n", "messages", "rate", "alpha", "beta", "N_star", "pe_target", "policy",
              "trials", "message_mode", "noise_mode", "delta")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            items = parse_assignments(fh.read(), args.config)
    else:
        items = {}
    source = args.config or "<flags>"
    for key in _FLAG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            items[key] = (str(val), 0)
            if key == "rate":
                items.pop("messages", None)
                items.pop("rate_unit", None)
            if key == "messages":
                items.pop("rate", None)
    if args.bits:
        items["rate_unit"] = ("bits", 0)
    if args.allow_cheat:
        items["allow_cheat"] = ("true", 0)
    for item in args.policy_arg:
        key, val = _split_kv(item, "--policy-arg")
        items[f"policy.{key}"] = (val, 0)
    for item in getattr(args, "sweep", []):
        key, val = _split_kv(item, "--sweep")
        items[f"sweep.{key}"] = (val, 0)
    items.setdefault("trials", ("1000", 0))
    return config_from_assignments(items, source)


def _split_kv(item: str, flag: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"{flag} expects KEY=VAL, got {item!r}")
    key, val = item.split("=", 1)
    return key.strip(), val.strip()


def _write(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    config = resolve_config(args)
    if args.dump_config:
        sys.stdout.write(emit_config(config))
        return EXIT_OK
    if args.command == "run":
        if config.sweep:
            raise ConfigError("run does not take sweep axes; use the sweep subcommand")
        results = [run_experiment(config, args.workers)]
    else:
        results = run_sweep(config, args.workers)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(results, fh)
    _write("\n".join(r.summary() for r in results), args.report)
    return EXIT_OK


def _params(args) -> SchemeParams:
    config = resolve_config(args)
    return config.resolve_params()


def cmd_bounds(args) -> int:
    params = _params(args)
    noise_powers = None
    if args.noise_file:
        s = read_sequence(args.noise_file)
        if s.size < params.n:
            raise ConfigError(f"{args.noise_file}: need {params.n} values, found {s.size}")
        noise_powers = s[: params.n] ** 2
    report = analysis.bounds_report(params, mean_noise_power=args.mean_noise, noise_powers=noise_powers)
    _write(report.to_text(), args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = resolve_config(args)
    params = config.resolve_params()
    if params.n > analysis.MAX_ENUMERATION_N:
        raise ConfigError(f"oracle enumerates 2^n scrambler sequences; need n <= "
                          f"{analysis.MAX_ENUMERATION_N}, got {params.n}")
    policy = config.make_policy()
    noise = realize_sequence(policy, params, session_streams(config.seed, 0)[1])
    m = args.message
    ex = analysis.exact_expectation(params, m, noise)
    EP, mse = analysis.exact_closed_forms(params, m, noise)
    N_eff = max(params.N_star, float(np.dot(noise, noise)) / params.n)
    cheb = analysis.chebyshev_pe(params, ex.exact_mse)
    pe_b = analysis.pe_bound(params, N_eff)

    def rel(a, b):
        return abs(a - b) / max(abs(b), 1e-300)

    checks = [
        ("E[P] enumeration vs power profile", ex.exact_EP, EP, rel(ex.exact_EP, EP) <= args.tol),
        ("E[eps_n^2] enumeration vs exact form", ex.exact_mse, mse, rel(ex.exact_mse, mse) <= args.tol),
        ("E[eps_n^2] <= mse_bound(N_eff)", ex.exact_mse, analysis.mse_bound(params, N_eff),
         ex.exact_mse <= analysis.mse_bound(params, N_eff) * (1 + args.tol)),
        ("P_e <= P(|eps_n| >= 1/2M)", ex.exact_Pe, ex.exact_exceed, ex.exact_Pe <= ex.exact_exceed),
        ("P(|eps_n| >= 1/2M) <= Chebyshev", ex.exact_exceed, cheb, ex.exact_exceed <= cheb * (1 + args.tol)),
        ("Chebyshev <= pe_bound(N_eff)", cheb, pe_b, cheb <= pe_b * (1 + args.tol)),
    ]
    lines = [f"n = {params.n}", f"M = {params.M}", f"alpha = {params.alpha!r}", f"beta = {params.beta!r}",
             f"policy = {policy.name}", f"message = {m}", f"eps0 = {initial_error(m, params)!r}",
             f"N_eff = {N_eff!r}", f"exact_Pe = {ex.exact_Pe!r}",
             f"mse_bound_tightness = {ex.exact_mse / analysis.mse_bound(params, N_eff)!r}"]
    ok = True
    for label, a, b, passed in checks:
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'}  {label}: {a!r} vs {b!r}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_session(args) -> int:
    config = resolve_config(args)
    params = config.resolve_params()
    t = run_session(args.message, params, config.make_policy(), seed=config.seed,
                    allow_cheat=config.allow_cheat)
    rows = ["i,d,x,s,y,theta_hat,u"]
    for i in range(params.n):
        vals = (t.d[i], t.x[i], t.s[i], t.y[i], t.theta_hat[i], t.u[i])
        rows.append(f"{i + 1}," + ",".join(format(float(v), ".17g") for v in vals))
    rows += [f"# message = {t.m}", f"# decoded = {t.decoded}", f"# error = {int(t.error)}",
             f"# realized_P = {t.realized_P!r}", f"# realized_N = {t.realized_N!r}",
             f"# eps_n = {t.eps_n!r}", f"# log_abs_eps_n = {t.log_abs_eps_n!r}"]
    _write("\n".join(rows) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_run, "bounds": cmd_bounds,
            "oracle": cmd_oracle, "session": cmd_session}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NonCausalPolicyError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, PolicyError, analysis.DesignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
