"""``battmdp`` command line: estimate tensors, solve policies, run case studies and single flights.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime model error
(controller divergence, solver non-convergence).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, config_hash, load_run_config, read_json, validate
from .export import (metadata, read_tensor, write_case_study, write_csv, write_json, write_tensor,
                     write_trace)
from .mdp import (ConditionKey, PolicyStore, PolicyStoreError, RewardTable, RewardWeights, all_conditions,
                  is_greedy, reward_matrix, value_iteration)

logger = logging.getLogger("battmdp")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _conditions(args) -> list[ConditionKey]:
    if not args.condition:
        return all_conditions()
    keys = []
    for item in args.condition:
        for text in item.split(","):
            if text.strip():
                try:
                    keys.append(ConditionKey.parse(text.strip()))
                except ValueError as exc:
                    raise UsageError(f"bad condition key {text!r}: {exc}") from None
    return list(dict.fromkeys(keys))


def _load(args) -> dict:
    doc = load_run_config(args.config, args.vehicle_config, args.mission_config)
    if getattr(args, "flights", None) is not None:
        if args.flights < 1:
            raise UsageError("--flights must be at least 1")
        doc["simulation"]["flights"] = args.flights
    return doc


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


def _load_store(path) -> PolicyStore:
    try:
        return PolicyStore.load(path)
    except FileNotFoundError:
        raise UsageError(f"policy store not found: {path}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot read policy store {path}: {exc}") from None


# -- subcommands --------------------------------------------------------------

def cmd_estimate(args) -> int:
    from .montecarlo import Simulator, run_condition

    doc = _load(args)
    conds = _conditions(args)
    out = _out_dir(args.out)
    sim = Simulator(doc)
    n = doc["simulation"]["flights"]
    meta = metadata(args.seed, config_hash(doc), command="estimate", flights=n)
    manifest = {}
    for cond in conds:
        logger.info("estimating %s with %d flights", cond.key, n)
        run = run_condition(sim, cond, n, args.seed, workers=args.workers)
        tensor = run.tensor
        tensor.validate()
        cmeta = {**meta, "condition": cond.key}
        write_tensor(out / "tensors" / cond.key, tensor, cmeta)
        info = {
            "flights": n,
            "used": len(run.traces),
            "diverged": run.diverged,
            "outcomes": run.outcome_counts(),
            "transitions": int(sum(len(t.transitions) for t in run.traces)),
            "unvisited_pairs": int(tensor.unvisited.sum()),
        }
        write_json(out / "tensors" / cond.key / "summary.json", info, cmeta)
        manifest[cond.key] = info
        if args.traces:
            for k, tr in enumerate(run.traces):
                write_csv(out / "traces" / cond.key / f"flight_{k:05d}.csv", *tr.epoch_rows(),
                          {**cmeta, "outcome": tr.outcome})
        print(f"{cond.key}: {len(run.traces)} flights, {info['transitions']} transitions, "
              f"{len(run.diverged)} diverged")
    write_json(out / "estimate.json", {"conditions": manifest}, meta)
    return EXIT_OK


def cmd_solve(args) -> int:
    doc = _load(args)
    conds = _conditions(args)
    tensor_dir = Path(args.tensors) if args.tensors else Path(args.out) / "tensors"
    missing = [c.key for c in conds if not (tensor_dir / c.key).is_dir()]
    if missing:
        raise UsageError(f"missing transition tensor for {', '.join(missing)} under {tensor_dir}")
    out = _out_dir(args.out)
    cfg = doc["mdp"]
    weights = RewardWeights(*cfg["weights"])
    rw = cfg["rewards"]
    table = RewardTable(tuple(rw["s2"]), tuple(rw["s3"]), rw["c1"], rw["failure"])
    tol = args.tol if args.tol is not None else cfg["tol"]
    policies = {}
    for cond in conds:
        try:
            tensor = read_tensor(tensor_dir / cond.key)
        except (FileNotFoundError, ValueError) as exc:
            raise UsageError(f"transition tensor for {cond.key}: {exc}") from None
        R = reward_matrix(weights, cond, table)
        pol = value_iteration(tensor, R, cfg["gamma"], tol, cfg["max_iter"], cond)
        if not is_greedy(pol, tensor, R):
            raise RuntimeError(f"policy for {cond.key} is not greedy in its own values")
        policies[cond.key] = pol
        print(f"{cond.key}: {pol.iterations} iterations, residual {pol.residual:.2e}")
    store = PolicyStore(policies, metadata(args.seed, config_hash(doc), command="solve",
                                           weights=list(cfg["weights"]), tensors=str(tensor_dir)))
    path = Path(args.store) if args.store else out / "policies.json"
    store.save(path)
    print(f"wrote {len(store)} policies to {path}")
    return EXIT_OK


def cmd_case_study(args) -> int:
    from .montecarlo import CASE_SCENARIOS, Simulator, run_case_study

    if args.case not in CASE_SCENARIOS:
        raise UsageError(f"unknown case study {args.case} (expected 1-4)")
    doc = _load(args)
    store = None
    if args.case in (2, 4):
        if not args.policy_store:
            raise UsageError(f"case study {args.case} needs --policy-store")
        store = _load_store(args.policy_store)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    out = _out_dir(Path(args.out) / f"case{args.case}")
    try:
        result = run_case_study(args.case, Simulator(doc), store, overrides)
    except PolicyStoreError as exc:
        raise UsageError(str(exc.args[0])) from None
    seed = overrides.get("seed", doc["case_studies"]["seed"])
    write_case_study(out, result, metadata(seed, config_hash(doc), command="case-study"), args.decimate)
    for row in result.rows:
        print(f"case {args.case} {row['scenario']}: {row['outcome']} at {row['end_time']:.0f} s")
    return EXIT_OK


def cmd_flight(args) -> int:
    from .montecarlo import FlightScenario, Simulator

    doc = _load(args)
    raw = read_json(args.scenario)
    validate(raw, "scenario")
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        scenario = FlightScenario.from_dict(raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad scenario {args.scenario}: {exc}") from None
    policy = None
    if scenario.action_source == "policy":
        if not args.policy_store:
            raise UsageError("policy-driven scenario needs --policy-store")
        try:
            policy = _load_store(args.policy_store).select(scenario.condition)
        except PolicyStoreError as exc:
            raise UsageError(str(exc.args[0])) from None
    out = _out_dir(args.out)
    sim = Simulator(doc)
    trace = sim.simulate(scenario, policy)
    meta = metadata(scenario.seed, config_hash({"run": doc, "scenario": raw}), command="flight")
    write_trace(out, trace, meta, decimate=args.decimate)
    flags = scenario.out_of_range(sim.ranges)
    write_json(out / "summary.json", {"outcome": trace.outcome, "end_time": trace.end_time,
                                      "mission_duration": trace.mission_duration,
                                      "epochs": len(trace.epochs), "out_of_range": list(flags)}, meta)
    print(f"{trace.outcome} at {trace.end_time:.0f} s of {trace.mission_duration:.0f} s")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run config JSON overlaid on the packaged defaults")
    common.add_argument("--vehicle-config", help="vehicle config JSON")
    common.add_argument("--mission-config", help="mission config JSON")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="battmdp", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"battmdp {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", parents=[common], help="estimate transition tensors by Monte Carlo")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--flights", type=int, help="flights per condition (default from config)")
    e.add_argument("--condition", action="append", help="condition key such as F1_F3_TH (repeatable)")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--traces", action="store_true", help="also write per-flight epoch CSVs")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("solve", parents=[common], help="solve policies from estimated tensors")
    s.add_argument("--seed", type=int, default=None, help="recorded in the store metadata")
    s.add_argument("--condition", action="append")
    s.add_argument("--tensors", help="tensor directory (default: <out>/tensors)")
    s.add_argument("--store", help="policy store path (default: <out>/policies.json)")
    s.add_argument("--tol", type=float, help="value-iteration tolerance (default from config)")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("case-study", parents=[common], help="run one of the four case studies")
    c.add_argument("--case", type=int, required=True)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--policy-store", help="policy store JSON (needed for cases 2 and 4)")
    c.add_argument("--decimate", type=int, default=20, help="keep every n-th control tick in CSVs")
    c.set_defaults(func=cmd_case_study)

    f = sub.add_parser("flight", parents=[common], help="fly one scenario and export its trace")
    f.add_argument("scenario", help="scenario JSON")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--policy-store")
    f.add_argument("--decimate", type=int, default=1)
    f.set_defaults(func=cmd_flight)
    return p


def main(argv=None) -> int:
    from .montecarlo import FlightDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"battmdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FlightDiverged, RuntimeError, FloatingPointError) as exc:
        print(f"battmdp: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
