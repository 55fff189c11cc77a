"""Command-line front end.

Exit codes: 0 for success / Tolerant / inclusion holds; 1 for Vulnerable /
inclusion fails (machine-usable in pipelines); 2 for usage or model errors.
Analysis output goes to stdout or --out; diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import casestudy
from .attacks import infer_class, top_attacker
from .lang import ModelSyntaxError, ModelFile, parse_model_file, print_model
from .lts import ExplorationBudget, ZenoError, run_sampled
from .model import ModelError, SlotSet, AttackClass, compose_attack
from .montecarlo import Experiment, emit_csv, parse_experiment, run_experiment
from .process import term_to_str
from .symbolic import StateCapError, UnsupportedModel, sym_reach
from .verdicts import (
    INF_WINDOW,
    check_tolerance,
    definitive_impact,
    pointwise_impact,
    timed_preorder,
    xi_tolerance,
)


def _load(path: str) -> ModelFile:
    """Load a model; a sibling ``attacks.ccpa`` is merged in when present
    so catalog attacks resolve against the bundled plant file."""
    if path == "engine":
        return casestudy.load()
    p = Path(path)
    text = p.read_text()
    sibling = p.with_name("attacks.ccpa")
    if sibling.exists() and sibling != p:
        text += "\n" + sibling.read_text()
    from .lang import parse_model

    return parse_model(text, str(p))


def _attack(model: ModelFile, args) -> tuple:
    params = {}
    for spec in args.param or []:
        name, _, val = spec.partition("=")
        params[name.strip()] = float(val)
    term = model.instantiate(args.attack, params)
    return term, model.defs


def _out(args):
    if getattr(args, "out", None):
        return open(args.out, "w")
    return sys.stdout


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="ccpa", description="Analysis toolkit for cyber-physical models"
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("model", help="path to a .ccpa model (or 'engine')")
        p.add_argument("--system", default=None, help="system name in the model")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--horizon", type=int, default=60)
        p.add_argument("--grid", type=int, default=5)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("check", help="parse and statically check a model")
    common(p)

    p = sub.add_parser("simulate", help="one sampled run")
    common(p)
    p.add_argument("--attack", default=None)
    p.add_argument("--param", action="append")
    p.add_argument("--dump-trace", action="store_true")
    p.add_argument("--extreme", action="store_true")
    p.add_argument("--attack-priority", action="store_true")

    p = sub.add_parser("reach", help="interval reachability")
    common(p)
    p.add_argument("--emit", default=None, help="CSV path for reachable intervals")

    p = sub.add_parser("verdict", help="tolerance/vulnerability of model vs attack")
    common(p)
    p.add_argument("--attack", required=True)
    p.add_argument("--param", action="append")

    p = sub.add_parser("timed", help="timed preorder window for model vs attack")
    common(p)
    p.add_argument("--attack", required=True)
    p.add_argument("--param", action="append")

    p = sub.add_parser("xitol", help="uncertainty-widening tolerance bracket")
    common(p)
    p.add_argument("--var", required=True)
    p.add_argument("--tol", type=float, default=1e-3)

    p = sub.add_parser("impact", help="definitive or pointwise attack impact")
    common(p)
    p.add_argument("--attack", required=True)
    p.add_argument("--param", action="append")
    p.add_argument("--var", required=True)
    p.add_argument("--at", type=int, default=None, help="slot for pointwise impact")
    p.add_argument("--tol", type=float, default=1e-2)

    p = sub.add_parser("top", help="print the top attacker of a class")
    common(p)
    p.add_argument("--attack", default=None, help="infer the class from this attack")
    p.add_argument("--param", action="append")
    p.add_argument(
        "--class", dest="class_spec", default=None,
        help="literal class, e.g. 'hread cool:9; hwrite cool:9..12'",
    )

    p = sub.add_parser("mc", help="run a Monte-Carlo experiment")
    p.add_argument("experiment", help="path to a .exp file")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        return _dispatch(args)
    except (ModelSyntaxError, ModelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UnsupportedModel, StateCapError, ZenoError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.cmd == "mc":
        exp = parse_experiment(args.experiment)
        if args.seed is not None or args.runs is not None:
            from dataclasses import replace

            exp = replace(
                exp,
                seed=args.seed if args.seed is not None else exp.seed,
                runs=args.runs if args.runs is not None else exp.runs,
            )
        table = run_experiment(exp, jobs=args.jobs)
        target = args.out or exp.output
        if target:
            emit_csv(table, target)
            print(f"wrote {target}")
        else:
            sys.stdout.write(table.csv())
        return 0

    model = _load(args.model)
    out = _out(args)

    if args.cmd == "check":
        sys_names = sorted(model.systems)
        print(
            f"ok: {len(model.envs)} env(s), {len(model.defs)} definition(s), "
            f"systems: {', '.join(sys_names)}",
            file=out,
        )
        return 0

    cfg = model.system(args.system)
    budget = ExplorationBudget(
        horizon=args.horizon, grid=args.grid, palette=model.palette()
    )

    if args.cmd == "simulate":
        if args.attack:
            term, defs = _attack(model, args)
            cfg = compose_attack(cfg, term, defs)
        trace = run_sampled(
            cfg, budget, args.seed, extreme=args.extreme,
            attack_priority=args.attack_priority,
        )
        if args.dump_trace:
            print(trace.dump(), file=out)
        else:
            obs = trace.observables()
            print(f"{len(trace.steps)} steps, {len(obs)} observable", file=out)
            for slot, action in obs:
                if action.kind != "tick":
                    print(f"t={slot} {action}", file=out)
        return 0

    if args.cmd == "reach":
        reach = sym_reach(cfg, args.horizon)
        bad = reach.bad_slots()
        print(
            f"explored {args.horizon} slots; "
            f"dead/unsafe/output slots: {bad if bad else 'none'}",
            file=out,
        )
        if args.emit:
            rows = reach.csv_rows()
            with open(args.emit, "w") as fh:
                fh.write("slot,control,variable,lo,lo_open,hi,hi_open\n")
                for r in rows:
                    fh.write(",".join(str(x) for x in r) + "\n")
            print(f"wrote {args.emit}", file=out)
        return 0 if not bad else 1

    if args.cmd in ("verdict", "timed"):
        term, defs = _attack(model, args)
        if args.cmd == "verdict":
            v = check_tolerance(cfg, term, defs, budget)
            print(v.render(), file=out)
            print(v.csv(), file=out)
            return 0 if v.tolerant else 1
        comp = compose_attack(cfg, term, defs)
        pre = timed_preorder(comp, cfg, budget)
        if pre.holds:
            print("holds", file=out)
            return 0
        print(f"window {pre.window()}", file=out)
        return 1

    if args.cmd == "xitol":
        lo, hi = xi_tolerance(cfg, args.var, horizon=args.horizon, tol=args.tol)
        print(f"xi-tolerance({args.var}) in [{lo:.6f}, {hi:.6f}]", file=out)
        return 0

    if args.cmd == "impact":
        term, defs = _attack(model, args)
        if args.at is None:
            rep = definitive_impact(
                cfg, term, defs, args.var, horizon=args.horizon, tol=args.tol
            )
        else:
            rep = pointwise_impact(
                cfg, term, defs, args.var, args.at, horizon=args.horizon, tol=args.tol
            )
        if rep.exceeded_cap:
            print("impact exceeds cap", file=out)
            return 1
        if rep.none_at_slot:
            print(f"no divergence at slot {rep.at_slot}", file=out)
            return 1
        kind = "definitive" if rep.kind == "definitive" else f"pointwise@{rep.at_slot}"
        print(
            f"{kind} impact({args.var}) in [{rep.lo:.6f}, {rep.hi:.6f}]", file=out
        )
        return 0

    if args.cmd == "top":
        if args.attack:
            term, defs = _attack(model, args)
            cls = infer_class(term, defs, args.horizon, model.palette())
            cls = cls.truncate(args.horizon)
        elif args.class_spec:
            cls = _parse_class(args.class_spec)
        else:
            print("error: need --attack or --class", file=sys.stderr)
            return 2
        print(f"class: {cls}", file=out)
        bundle = top_attacker(cls, palette=model.palette())
        for name in sorted(bundle.defs):
            d = bundle.defs[name]
            print(f"unguarded attack {name} = {term_to_str(d.body)}", file=out)
        print(f"Top = {term_to_str(bundle.term)}", file=out)
        return 0

    return 2


def _parse_class(spec: str) -> AttackClass:
    from .model import Activity

    schedule: dict[Activity, SlotSet] = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        head, _, slots = part.partition(":")
        kw, dev = head.split()
        dirn = "read" if kw == "hread" else "write"
        vals: set[int] = set()
        for piece in slots.split(","):
            piece = piece.strip()
            if ".." in piece:
                lo, hi = piece.split("..")
                vals.update(range(int(lo), int(hi) + 1))
            else:
                vals.add(int(piece))
        schedule[(dev.strip(), dirn)] = SlotSet.of(vals)
    return AttackClass(schedule)


if __name__ == "__main__":
    sys.exit(main())
