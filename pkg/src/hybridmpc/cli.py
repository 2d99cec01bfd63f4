"""Command-line entry point: ``hybridmpc <verb> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from . import io, sac
from .f1.config import ConfigError, load_race_config, validate

log = logging.getLogger("hybridmpc")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="experiment JSON file (default: built-in desk config)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: train_seed from the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for the oracle enumeration")
    common.add_argument("--trace", action="store_true", help="write per-iteration solver traces")
    common.add_argument("--checkpoint", default=None, help="agent checkpoint directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hybridmpc", description="Hybrid RL + MPC race-strategy experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("train", parents=[common], help="train the hybrid SAC agent")
    sub.add_parser("eval-rl", parents=[common], help="closed loop of the actor alone")
    h = sub.add_parser("run-hybrid", parents=[common], help="closed loop of the hybrid controller")
    h.add_argument("--horizon", type=int, default=None)
    h.add_argument("--cold-start", action="store_true", help="start each solve from the bound midpoints")
    sub.add_parser("run-oracle", parents=[common], help="enumerate pit strategies and solve each NLP")
    b = sub.add_parser("benchmark", parents=[common], help="oracle, RL and hybrid controller per horizon")
    b.add_argument("--horizons", type=int, nargs="*", default=None)
    b.add_argument("--oracle-summary", default=None, help="reuse a run-oracle JSON summary")
    t = sub.add_parser("traffic-compare", parents=[common], help="traffic-aware vs traffic-blind controller")
    t.add_argument("--horizon", type=int, default=None)
    c = sub.add_parser("critic-trace", parents=[common], help="critic cost-to-go along a closed-loop run")
    c.add_argument("--horizon", type=int, default=None)
    v = sub.add_parser("validate-config", parents=[common], help="check a config file and report field errors")
    v.add_argument("path", nargs="?", default=None)
    sub.add_parser("schema-self-test", parents=[common], help="check output schemas against released versions")
    return p


def _setup(args):
    exp = ex.load_experiment(args.config) if args.config else ex.ExperimentConfig()
    seed = exp.train_seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return exp, seed, out


def _manifest(args, exp, seed, checkpoints=()):
    return io.make_manifest(exp.hash_data(), seed, checkpoints, ["hybridmpc", *args.argv])


def _horizon(exp, args) -> int:
    return args.horizon if getattr(args, "horizon", None) else exp.controller.horizon


def cmd_train(args) -> int:
    exp, seed, out = _setup(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint"
    res = ex.train_agent(exp, seed)
    files = sac.save_agent(res.agent, ckpt)
    m = _manifest(args, exp, seed, files)
    io.write_csv(out / "training_log.csv", "training_log", res.log, m)
    io.write_json(out / "train_summary.json", {"episodes": len(res.log), "updates": res.updates,
                                                "checkpoint": str(ckpt)}, m)
    print(f"trained {len(res.log)} episodes, checkpoint in {ckpt}")
    return EXIT_OK


def _write_log(out, name, lg, spec, m, extra=None):
    io.write_csv(out / f"{name}.csv", "closed_loop", ex.log_rows(lg), m)
    summary = ex.log_summary(lg, spec)
    summary.update(extra or {})
    io.write_json(out / f"{name}.json", summary, m)
    return summary


def cmd_eval_rl(args) -> int:
    exp, seed, out = _setup(args)
    agent = ex.load_agent(exp, args.checkpoint)
    lg = ex.run_rl(exp, agent, ex.start_state(exp, seed))
    s = _write_log(out, "rl", lg, ex.race_spec(exp), _manifest(args, exp, seed, [args.checkpoint or exp.checkpoint]))
    print(f"rl race time {s['total_cost']:.3f} s, strategy {s['pits']}")
    return EXIT_OK


def cmd_run_hybrid(args) -> int:
    exp, seed, out = _setup(args)
    agent = ex.load_agent(exp, args.checkpoint)
    n = _horizon(exp, args)
    trace = str(out / f"solver_trace_N{n}.csv") if args.trace else None
    lg = ex.run_hybrid(exp, agent, n, ex.start_state(exp, seed), use_warm_start=not args.cold_start,
                       trace_path=trace)
    s = _write_log(out, f"hybrid_N{n}", lg, ex.race_spec(exp), _manifest(args, exp, seed, [args.checkpoint or exp.checkpoint]))
    print(f"hybrid N={n} race time {s['total_cost']:.3f} s, strategy {s['pits']}, fallbacks {s['fallbacks']}")
    return EXIT_OK


def _oracle(exp, seed, out, jobs, m):
    res = ex.run_oracle(exp, jobs)
    rows = [{"rank": i + 1, "strategy": s.label(), "race_time": t, "status": st}
            for i, (s, t, st) in enumerate(res.ranking)]
    io.write_csv(out / "oracle_ranking.csv", "oracle_ranking", rows, m)
    summary = {"best": res.best.label(), "best_time": res.best_time, "nlp_count": res.nlp_count,
               "failures": [s.label() for s, _ in res.failures], "best_plan": res.best_plan}
    io.write_json(out / "oracle.json", summary, m)
    return summary


def cmd_run_oracle(args) -> int:
    exp, seed, out = _setup(args)
    s = _oracle(exp, seed, out, args.jobs, _manifest(args, exp, seed))
    print(f"oracle best {s['best']} at {s['best_time']:.3f} s over {s['nlp_count']} NLPs")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    exp, seed, out = _setup(args)
    agent = ex.load_agent(exp, args.checkpoint)
    m = _manifest(args, exp, seed, [args.checkpoint or exp.checkpoint])
    if args.oracle_summary:
        best_time = float(json.loads(Path(args.oracle_summary).read_text())["best_time"])
    else:
        best_time = _oracle(exp, seed, out, args.jobs, m)["best_time"]
    horizons = list(args.horizons or exp.horizons) + [exp.race.n_laps]
    rows, logs = ex.benchmark(exp, agent, horizons, best_time, seed)
    io.write_csv(out / "benchmark.csv", "benchmark", rows, m)
    spec = ex.race_spec(exp)
    for name, lg in logs.items():
        _write_log(out, name, lg, spec, m)
    for r in rows:
        print(f"{r['method']:>7} N={r['horizon']:<3} race {r['race_time']:.3f} s  gap {r['gap']:+.3f} s  {r['status']}")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_RUNTIME


def cmd_traffic_compare(args) -> int:
    exp, seed, out = _setup(args)
    agent = ex.load_agent(exp, args.checkpoint)
    m = _manifest(args, exp, seed, [args.checkpoint or exp.checkpoint])
    res = ex.traffic_compare(exp, agent, _horizon(exp, args))
    io.write_csv(out / "traffic_trace.csv", "traffic_trace", res["trace"], m)
    env = ex.race_spec(exp, res["opponent"])
    _write_log(out, "traffic_aware", res["aware"], env, m)
    _write_log(out, "traffic_blind", res["blind"], env, m)
    s = res["summary"]
    s["opponent_lap_times"] = res["opponent"]
    io.write_json(out / "traffic_summary.json", s, m)
    print(f"aware {s['race_time_aware']:.3f} s, blind {s['race_time_blind']:.3f} s, margin {s['margin']:+.3f} s")
    if not s["same_pit_strategy"]:
        log.warning("pit strategies differ: aware %s, blind %s", s["pits_aware"], s["pits_blind"])
    return EXIT_OK


def cmd_critic_trace(args) -> int:
    exp, seed, out = _setup(args)
    agent = ex.load_agent(exp, args.checkpoint)
    m = _manifest(args, exp, seed, [args.checkpoint or exp.checkpoint])
    n = _horizon(exp, args)
    lg = ex.run_hybrid(exp, agent, n, ex.start_state(exp, seed))
    rows = ex.critic_trace(exp, agent, lg)
    io.write_csv(out / "critic_trace.csv", "critic_trace", rows, m)
    err = [abs(r["critic_smooth"] - r["realized"]) / abs(r["realized"]) for r in rows]
    diff = max(abs(r["critic_smooth"] - r["critic_relu"]) for r in rows)
    io.write_json(out / "critic_trace.json", {"median_relative_error": float(np.median(err)),
                                              "max_relu_smooth_difference": diff, "horizon": n}, m)
    print(f"median relative critic error {np.median(err):.4f}, max ReLU/SmoothReLU difference {diff:.3g} s")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    path = args.path or args.config
    if path is None:
        raise ConfigError("<args>", "give a config path")
    data = json.loads(Path(path).read_text()) if Path(path).is_file() else None
    if data is None:
        raise FileNotFoundError(f"config file not found: {path}")
    if "race" in data and set(data) <= {"race"}:
        validate(load_race_config(path))
    else:
        ex.load_experiment(path)
    print(f"{path}: ok")
    return EXIT_OK


def cmd_schema_self_test(args) -> int:
    bad = io.schema_self_test()
    if bad:
        print("schemas changed without a version bump: " + ", ".join(bad))
        return EXIT_RUNTIME
    print(f"{len(io.SCHEMAS)} schemas ok")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "eval-rl": cmd_eval_rl, "run-hybrid": cmd_run_hybrid, "run-oracle": cmd_run_oracle,
    "benchmark": cmd_benchmark, "traffic-compare": cmd_traffic_compare, "critic-trace": cmd_critic_trace,
    "validate-config": cmd_validate_config, "schema-self-test": cmd_schema_self_test,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = _parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
