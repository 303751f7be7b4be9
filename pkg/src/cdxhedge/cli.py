"""Command-line entry point: simulate, clean, train, evaluate, frontier.

Each command writes into ``--out`` using a fixed layout: ``paths/``,
``checkpoints/``, ``reports/`` and the ``resolved-config`` that reproduces
the run. Exit codes: 0 success, 1 usage or configuration error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence


from . import evaluation as ev
from .calendar import build_episode_grid, standard_maturity
from .config import ConfigError, RunConfig
from .env import EnvConfig, delta_hedge_policy, make_config
from .market_data import clean_quotes, load_quotes, load_series, slice_episodes, write_series
from .market_sim import GbmParams, HestonParams, PathSet, simulate_gbm, simulate_heston, write_paths_csv
from .pricing import BP, MarketState, option_price

log = logging.getLogger("cdxhedge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config plumbing


def _out_dirs(out: Path) -> dict[str, Path]:
    dirs = {name: out / name for name in ("paths", "checkpoints", "reports")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _grid(cfg: RunConfig):
    g = cfg["grid"]
    return build_episode_grid(g["start"], g["days"], g["steps_per_day"])


def _env_config(cfg: RunConfig, grid, ba_bp: Optional[float] = None, strike: Optional[float] = None) -> EnvConfig:
    o, i = cfg["option"], cfg["index"]
    return make_config(
        grid,
        strike=o["strike_bp"] * BP if strike is None else strike,
        vol=o["vol"],
        ba_bp=cfg["costs"]["ba_bp"] if ba_bp is None else ba_bp,
        maturity=i["maturity"] or standard_maturity(grid.start),
        notional=i["notional"],
        kind=o["kind"],
        position=o["position"],
        coupon=i["coupon_bp"] * BP,
        lgd=i["lgd"],
        initial_hedge=o["initial_hedge"],
        unwind_at_expiry=o["unwind_at_expiry"],
    )


def _model(cfg: RunConfig):
    m = cfg["market"]
    s0 = m["s0_bp"] * BP
    if m["model"] == "gbm":
        return simulate_gbm, GbmParams(s0, m["mu"], m["sigma"])
    return simulate_heston, HestonParams(s0, m["v0"], m["kappa"], m["theta"], m["xi"], m["rho"])


def _paths(cfg: RunConfig, grid, seed: int, n: int) -> PathSet:
    simulate, params = _model(cfg)
    return simulate(params, grid, seed, n)


def _premium(cfg: RunConfig, env_cfg: EnvConfig) -> float:
    s0 = cfg["market"]["s0_bp"] * BP
    return option_price(env_cfg.option.kind, MarketState(env_cfg.grid.start, s0), env_cfg.option, env_cfg.index)


def _train_agent(cfg: RunConfig, lam: float, ba: float, ckpt: Path, log_csv: Path):
    from . import trvo

    grid = _grid(cfg)
    env_cfg = _env_config(cfg, grid, ba_bp=ba)
    t = cfg["train"]
    hp = trvo.Hyperparams(
        lam=lam,
        gamma=t["gamma"],
        max_kl=t["max_kl"],
        batch_size=t["batch_size"],
        iterations=cfg.iterations,
        seed=cfg["run"]["seed"],
        init_log_std=t["init_log_std"],
    )
    simulate, params = _model(cfg)
    factory = trvo.GbmEpisodeFactory(env_cfg, simulate, params, hp.batch_size, hp.seed)

    with open(log_csv, "w") as fh:
        fh.write("iteration,J,nu2,eta,mean_kl,episodes_seen\n")

        def checkpoint(it, policy, row):
            policy.save(ckpt)
            fh.write(f"{row.iteration},{row.J!r},{row.nu2!r},{row.eta!r},{row.mean_kl!r},{row.episodes_seen}\n")
            fh.flush()

        result = trvo.train(factory, hp, _premium(cfg, env_cfg), on_iteration=checkpoint)
    result.params.save(ckpt)
    return result


def _parse_agents(specs: Sequence[str], default_lambda: float):
    from .trvo import PolicyParams

    agents = {}
    for spec in specs:
        lam_text, sep, path = spec.partition("=")
        if not sep:
            lam, path = default_lambda, lam_text
        else:
            try:
                lam = float(lam_text)
            except ValueError:
                raise UsageError(f"bad agent spec {spec!r}; expected LAMBDA=PATH") from None
        agents[lam] = PolicyParams.load(path)
    return agents


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig, dirs) -> None:
    grid = _grid(cfg)
    paths = _paths(cfg, grid, cfg["run"]["seed"], cfg["market"]["episodes"])
    out = dirs["paths"] / f"{cfg['market']['model']}_paths.csv"
    write_paths_csv(paths, out)
    print(f"wrote {len(paths)} paths x {len(grid)} points to {out}")


def cmd_clean(args, cfg: RunConfig, dirs) -> None:
    c = cfg["clean"]
    if not c["quotes"]:
        raise UsageError("clean needs an input quote file (--input or [clean] quotes)")
    series, report = clean_quotes(load_quotes(c["quotes"]), c["method"])
    out = Path(c["output"]) if c["output"] else dirs["paths"] / "series.csv"
    write_series(series, out)
    summary = [f"method={c['method']}", *report.lines()]
    (dirs["reports"] / "cleaning.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    print(f"wrote {len(series)} cleaned points to {out}")


def cmd_train(args, cfg: RunConfig, dirs) -> None:
    ckpt = dirs["checkpoints"] / "policy.ckpt"
    result = _train_agent(cfg, cfg["train"]["lambda"], cfg["costs"]["ba_bp"], ckpt, dirs["reports"] / "train_log.csv")
    last = result.log[-1] if result.log else None
    print(f"trained {len(result.log)} iterations; checkpoint {ckpt}")
    if last is not None:
        print(f"final J={last.J!r} nu2={last.nu2!r} eta={last.eta!r}")


def cmd_evaluate(args, cfg: RunConfig, dirs) -> None:
    e = cfg["evaluate"]
    specs = list(args.checkpoint or ([e["checkpoint"]] if e["checkpoint"] else []))
    agents = _parse_agents(specs, cfg["train"]["lambda"])
    reports = dirs["reports"]

    if e["series"]:
        series = load_series(e["series"])
        episodes = slice_episodes(series, cfg["grid"]["days"], cfg["grid"]["steps_per_day"], e["align"])
        scenarios = []
        for ep in episodes:
            spreads = ep.spreads_bp * BP
            scenarios.append((_env_config(cfg, ep.grid, strike=float(spreads[0])), spreads, ep.bidask_bp))
        rows = ev.scenario_table(agents, scenarios)
        ev.write_scenario_table(rows, reports / "scenarios.csv")
        print(f"evaluated {len(episodes)} real-data episodes -> {reports / 'scenarios.csv'}")
        return

    grid = _grid(cfg)
    env_cfg = _env_config(cfg, grid)
    paths = _paths(cfg, grid, e["test_seed"], cfg["market"]["episodes"])
    if len(agents) > 1:
        raise UsageError("simulated evaluation takes at most one checkpoint")
    policy = next(iter(agents.values())).act if agents else delta_hedge_policy
    report = ev.evaluate(policy, env_cfg, paths.spreads)
    report.write(reports / "evaluation.csv")
    with open(reports / "terminal_pnl.csv", "w") as fh:
        fh.write("episode,agent_eur,delta_hedge_eur\n")
        for i, (a, b) in enumerate(zip(report.terminal_pnl, report.baseline_terminal_pnl)):
            fh.write(f"{i},{float(a)!r},{float(b)!r}\n")
    diff = report.terminal_pnl - report.baseline_terminal_pnl
    ev.histogram(diff, e["bin_width_eur"]).write(reports / "pl_distribution.csv")
    for k, v in report.summary().items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")


def cmd_frontier(args, cfg: RunConfig, dirs) -> None:
    from .trvo import PolicyParams

    grid = _grid(cfg)
    env_cfg = _env_config(cfg, grid)
    policies = {}
    for ba in cfg["frontier"]["ba_grid"]:
        for lam in cfg["frontier"]["lambdas"]:
            ckpt = dirs["checkpoints"] / f"agent_lambda{lam!r}_ba{ba!r}.ckpt"
            if ckpt.exists():
                log.info("reusing %s", ckpt)
            else:
                _train_agent(cfg, lam, ba, ckpt, dirs["reports"] / f"train_log_lambda{lam!r}_ba{ba!r}.csv")
            policies[(lam, ba)] = PolicyParams.load(ckpt).act
    paths = _paths(cfg, grid, cfg["evaluate"]["test_seed"], cfg["market"]["episodes"])
    points, report = ev.build_frontier(
        policies, env_cfg, paths.spreads, dirs["reports"] / "frontier.csv", dirs["reports"] / "dominance.txt"
    )
    print(f"wrote {len(points)} frontier points to {dirs['reports'] / 'frontier.csv'}")
    print("\n".join(report.lines()))


COMMANDS = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "frontier": cmd_frontier,
}


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI-style run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cdxhedge", description="CDS index option hedging: simulation, training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="write simulated spread paths")
    p.add_argument("--model", choices=("gbm", "heston"))
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("clean", parents=[common], help="clean dealer quotes into a mid/bid-ask series")
    p.add_argument("--input", type=Path, help="quote CSV: timestamp,dealer_id,bid_bp,ask_bp")
    p.add_argument("--output", type=Path, help="series CSV (default: OUT/paths/series.csv)")
    p.add_argument("--median", action="store_true", help="median of unfiltered quotes instead of the 2-sigma filter")

    p = sub.add_parser("train", parents=[common], help="train one agent")
    p.add_argument("--lambda", dest="lam", type=float, help="risk aversion (user scale)")
    p.add_argument("--ba", type=float, help="bid/ask in bp")
    p.add_argument("--preset", choices=("desk", "full"))
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--model", choices=("gbm", "heston"))

    p = sub.add_parser("evaluate", parents=[common], help="evaluate an agent (or the delta hedge) on a test set")
    p.add_argument("--checkpoint", action="append", help="policy checkpoint, optionally LAMBDA=PATH; repeatable")
    p.add_argument("--episodes", type=int)
    p.add_argument("--model", choices=("gbm", "heston"))
    p.add_argument("--ba", type=float)
    p.add_argument("--series", type=Path, help="cleaned series CSV: evaluate on real-data episodes")

    p = sub.add_parser("frontier", parents=[common], help="train and evaluate a (lambda, ba) grid of agents")
    p.add_argument("--lambdas", type=_floats)
    p.add_argument("--ba-grid", type=_floats)
    p.add_argument("--episodes", type=int)
    p.add_argument("--preset", choices=("desk", "full"))
    p.add_argument("--iterations", type=int)
    return parser


OVERRIDES = {
    "seed": ("run", "seed"),
    "threads": ("run", "threads"),
    "model": ("market", "model"),
    "episodes": ("market", "episodes"),
    "input": ("clean", "quotes"),
    "output": ("clean", "output"),
    "lam": ("train", "lambda"),
    "ba": ("costs", "ba_bp"),
    "preset": ("train", "preset"),
    "iterations": ("train", "iterations"),
    "batch_size": ("train", "batch_size"),
    "series": ("evaluate", "series"),
    "lambdas": ("frontier", "lambdas"),
    "ba_grid": ("frontier", "ba_grid"),
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    for attr, (section, key) in OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, str(value) if isinstance(value, Path) else value)
    checkpoints = getattr(args, "checkpoint", None)
    if checkpoints and len(checkpoints) == 1:
        cfg.set("evaluate", "checkpoint", checkpoints[0])
    if getattr(args, "median", False):
        cfg.set("clean", "method", "median")
    return cfg.validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"cdxhedge: error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"cdxhedge: config error: {exc}", file=sys.stderr)
        return 1

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s"
    )
    try:
        import torch

        torch.set_num_threads(cfg["run"]["threads"])
        dirs = _out_dirs(args.out)
        cfg.write(args.out / "resolved-config")
        COMMANDS[args.command](args, cfg, dirs)
    except UsageError as exc:
        print(f"cdxhedge: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"cdxhedge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
