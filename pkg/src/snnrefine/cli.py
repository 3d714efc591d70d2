"""Command-line entry point: ``snnrefine <command> ...``.

Every command reads its inputs from flags and JSON files, prints a short
summary to stdout, and writes machine-readable JSON into ``--out``. Files are
written once, atomically, after all computation has finished.

Exit codes: 0 success, 1 theorem or property failure, 2 parameter error,
3 constraint precondition failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._rational import as_rational, fmt
from .abstract_nets import (AbstractParams, build_A1, build_A2, check_single_batch,
                            run_single)
from .detailed_nets import (DetailedParams, EdgeSet, FailurePattern, build_H, build_L,
                            canonical_multi_assignment, check_multi_batch, complete_edges,
                            run_multi)
from .errors import ContractError, ParameterError, PreconditionError, QueryError
from .hierarchy import (ConceptHierarchy, ConceptId, HierarchyParams,
                        build_uniform_hierarchy, check_level0_subset, sets_to_masks,
                        validate_hierarchy)
from .refinement import (DEFAULT_CAP, InputEnumeration, abstract_pair, check_impl,
                         check_impl1, check_impl2, check_surviving_reps_fire,
                         combined_pipeline, enumerate_inputs, fingerprint, mask_key)
from .sampler import (SamplerParams, estimate_constraint_probability, rep_neurons,
                      sample_connectivity, sample_failures)

EXIT_OK, EXIT_FAIL, EXIT_PARAM, EXIT_PRECONDITION = 0, 1, 2, 3


class _Outputs:
    """Collects named JSON documents and writes them together at the end."""

    def __init__(self, out: Path):
        self.out = out
        self.docs: dict[str, object] = {}

    def add(self, name: str, doc) -> None:
        self.docs[name] = doc

    def flush(self) -> list[Path]:
        self.out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, doc in self.docs.items():
            path = self.out / name
            path.parent.mkdir(parents=True, exist_ok=True)
            text = doc if isinstance(doc, str) else json.dumps(doc, indent=2, sort_keys=True) + "\n"
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(text)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
            written.append(path)
        return written


# -- argument helpers ----------------------------------------------------

def _rational(text: str) -> Fraction:
    try:
        return as_rational(text, "value")
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read {path}: {exc}") from exc


def _add_hierarchy_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hierarchy")
    g.add_argument("--hierarchy", metavar="FILE", help="hierarchy JSON (overrides --k/--l-max)")
    g.add_argument("--k", type=int, default=2, help="branching factor (default 2)")
    g.add_argument("--l-max", type=int, default=2, help="top level (default 2)")


def _add_ratio_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--r1", type=_rational, default=Fraction(1, 2), help="non-firing ratio (default 1/2)")
    p.add_argument("--r2", type=_rational, default=Fraction(1), help="firing ratio (default 1)")


def _add_detailed_args(p: argparse.ArgumentParser, m: int = 3, eps: Fraction = Fraction(1, 5)) -> None:
    g = p.add_argument_group("detailed network")
    g.add_argument("--m", type=int, default=m, help=f"reps per concept (default {m})")
    g.add_argument("--epsilon", type=_rational, default=eps, help=f"approximation parameter (default {eps})")
    g.add_argument("--a", type=_rational, default=Fraction(1), help="connectivity fraction for L (default 1)")
    g.add_argument("--tau", type=_rational, help="threshold override (must lie in the admissible range)")
    g.add_argument("--F", dest="F_file", metavar="FILE", help="failure pattern JSON")
    g.add_argument("--E", dest="E_file", metavar="FILE", help="edge set JSON (L only)")
    g.add_argument("--q", type=_rational, help="sample F with failure probability q (uses --seed)")
    g.add_argument("--alpha", type=_rational, help="sample E with edge probability alpha (uses --seed)")


def _add_input_args(p: argparse.ArgumentParser, default: str | None = "exhaustive") -> None:
    g = p.add_mutually_exclusive_group(required=default is None)
    g.add_argument("--B", metavar="LIST", help="explicit input set, comma-separated level-0 concepts such as 0:0,0:3")
    g.add_argument("--exhaustive", action="store_true", help="all subsets of C_0")
    g.add_argument("--sampled", type=int, metavar="N", help="N random subsets (plus the empty set and C_0)")
    p.set_defaults(input_default=default)


def _hierarchy(args) -> ConceptHierarchy:
    if args.hierarchy:
        try:
            h = ConceptHierarchy.from_dict(_read_json(args.hierarchy))
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed hierarchy file {args.hierarchy}: {exc}") from exc
        report = validate_hierarchy(h)
        if not report.ok:
            raise ParameterError(f"hierarchy file fails checks: {', '.join(report.failed_checks)}")
        return h
    return build_uniform_hierarchy(HierarchyParams(l_max=args.l_max, k=args.k))


def _inputs(args, h: ConceptHierarchy) -> tuple[np.ndarray, dict]:
    """Input masks and a provenance record for the chosen input mode."""
    if args.B is not None:
        names = [s.strip() for s in args.B.split(",") if s.strip()]
        try:
            B = check_level0_subset(h, [ConceptId.parse(s) for s in names])
        except ValueError as exc:
            raise QueryError(str(exc)) from exc
        return sets_to_masks(h, [B]), {"mode": "explicit", "B": [str(b) for b in sorted(B)]}
    if args.sampled is not None:
        enum = InputEnumeration("sampled", sample_count=args.sampled, seed=args.seed, cap=args.exhaustive_cap)
    elif args.exhaustive or args.input_default == "exhaustive":
        enum = InputEnumeration("exhaustive", cap=args.exhaustive_cap)
    else:
        raise ParameterError("choose one of --B, --exhaustive, --sampled")
    return enumerate_inputs(h, enum), enum.to_dict()


def _failures(args, assign) -> FailurePattern:
    if args.F_file and args.q is not None:
        raise ParameterError("give either --F or --q, not both")
    if args.F_file:
        return _load_failures(args.F_file)
    if args.q is not None:
        return sample_failures(rep_neurons(assign), args.q, args.seed, (0, 0))
    return FailurePattern()


def _load_failures(path: str) -> FailurePattern:
    try:
        return FailurePattern.from_dict(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed failure file {path}: {exc}") from exc


def _edges(args, assign, h) -> EdgeSet:
    if args.E_file and args.alpha is not None:
        raise ParameterError("give either --E or --alpha, not both")
    if args.E_file:
        try:
            return EdgeSet.from_dict(_read_json(args.E_file))
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed edge file {args.E_file}: {exc}") from exc
    if args.alpha is not None:
        return sample_connectivity(assign, h, args.alpha, args.seed, (0, 1))
    return complete_edges(assign, h)


def _detailed(kind: str, args, h, params: DetailedParams, F: FailurePattern | None = None, *,
              strict: bool = True):
    assign = canonical_multi_assignment(h, params.m)
    F = _failures(args, assign) if F is None else F
    if kind == "H":
        if args.E_file or args.alpha is not None:
            raise ParameterError("--E/--alpha apply to L only")
        net = build_H(h, params, assign, F, tau=args.tau, strict=strict)
        return net, assign, F, None
    E = _edges(args, assign, h)
    net = build_L(h, params, assign, F, E, tau=args.tau, strict=strict)
    return net, assign, F, E


def _params(args) -> DetailedParams:
    return DetailedParams(args.m, args.epsilon, args.r1, args.r2, args.a)


def _report_bundle(reports, inputs_info: dict, network: str) -> dict:
    return {
        "network": network,
        "inputs": inputs_info,
        "n_inputs": len(reports),
        "pass": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }


# -- commands ------------------------------------------------------------

def cmd_gen_hierarchy(args, out: _Outputs) -> int:
    h = build_uniform_hierarchy(HierarchyParams(l_max=args.l_max, k=args.k, n=args.n))
    out.add("hierarchy.json", h.to_json())
    n = sum(len(lvl) for lvl in h.levels)
    print(f"hierarchy: k={h.k} l_max={h.l_max}, {n} concepts, {len(h.leaves_c0)} leaves")
    return EXIT_OK


def cmd_run(args, out: _Outputs) -> int:
    h = _hierarchy(args)
    masks, info = _inputs(args, h)
    kind = args.network
    if kind in ("A1", "A2"):
        if args.tau is not None:
            raise ParameterError("--tau applies to H and L only")
        p = AbstractParams(args.r1, args.r2)
        net, assign = (build_A1 if kind == "A1" else build_A2)(h, p)
        batch = run_single(h, net, assign, masks)
        reports = check_single_batch(kind, batch, assign, h, masks, r1=p.r1, r2=p.r2)
        extra = {}
    else:
        params = _params(args)
        net, assign, F, E = _detailed(kind, args, h, params)
        batch = run_multi(h, net, assign, masks)
        reports = check_multi_batch(kind, batch, assign, h, masks, params)
        extra = {"F.json": F.to_dict()}
        if E is not None:
            extra["E.json"] = E.to_dict()
    out.add("network.json", net.to_dict())
    for name, doc in extra.items():
        out.add(name, doc)
    if info["mode"] == "explicit":
        out.add("trace.json", batch[0].to_dict())
        out.add("report.json", reports[0].to_dict())
    else:
        out.add("trace.json", {"runs": [{"B": r.to_dict()["B"], **batch[i].to_dict()}
                                         for i, r in enumerate(reports)]})
        out.add("report.json", _report_bundle(reports, info, kind))
    ok = all(r.passed for r in reports)
    print(f"run {kind}: {len(reports)} input set(s), recognition {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check_abstract(args, out: _Outputs) -> int:
    h = _hierarchy(args)
    masks, info = _inputs(args, h)
    p = AbstractParams(args.r1, args.r2)
    doc = {"hierarchy": fingerprint(h), "r1": fmt(p.r1), "r2": fmt(p.r2), "inputs": info,
           "n_inputs": int(masks.shape[0])}
    ok = True
    for name, build, guarantee in (("A1", build_A1, {"r2": p.r2}), ("A2", build_A2, {"r1": p.r1})):
        net, assign = build(h, p)
        batch = run_single(h, net, assign, masks)
        g = check_single_batch(name, batch, assign, h, masks, **guarantee)
        full = check_single_batch(name, batch, assign, h, masks, r1=p.r1, r2=p.r2)
        failures = [r.to_dict() for r in full if not r.passed][:50]
        entry = {
            "guarantee": "firing" if name == "A1" else "non_firing",
            "guarantee_pass": all(r.passed for r in g),
            "recognition_pass": not failures,
            "failures": failures,
        }
        ok = ok and entry["guarantee_pass"] and entry["recognition_pass"]
        doc[name] = entry
    doc["pass"] = ok
    out.add("abstract_report.json", doc)
    print(f"check-abstract: A1/A2 over {doc['n_inputs']} input set(s): {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check_impl(args, out: _Outputs) -> int:
    h = _hierarchy(args)
    masks, info = _inputs(args, h)
    params = _params(args)
    net, assign, F, E = _detailed(args.network, args, h, params)
    D = (net, assign)
    A1, A2 = abstract_pair(h, params)
    enum = InputEnumeration()
    verdicts = []
    if args.relation in ("impl1", "split"):
        verdicts.append(check_impl1(D, A1, h, params.m, params.epsilon, enum, masks=masks))
    if args.relation in ("impl2", "split"):
        verdicts.append(check_impl2(D, A2, h, enum, masks=masks))
    if args.relation == "impl":
        A = A1 if args.against == "A1" else A2
        verdicts.append(check_impl(D, A, h, params.m, params.epsilon, enum, masks=masks))
    if args.network == "L" and args.relation != "impl":
        verdicts.append(check_surviving_reps_fire(D, A1, h, masks=masks))
    ok = all(v.passed for v in verdicts)
    doc = {"network": args.network, "params": params.to_dict(), "inputs": info,
           "n_inputs": int(masks.shape[0]), "pass": ok,
           "verdicts": [{k: v for k, v in vd.to_dict().items() if k != "counterexamples"} for vd in verdicts]}
    out.add("verdict.json", doc)
    if not ok:
        out.add("counterexamples.json", {vd.relation: [c.to_dict() for c in vd.counterexamples]
                                         for vd in verdicts if not vd.passed})
    print(f"check-impl {args.network}: " + ", ".join(
        f"{v.relation} {'pass' if v.passed else 'FAIL'}" for v in verdicts))
    return EXIT_OK if ok else EXIT_FAIL


def _failure_files(args) -> list[tuple[str, FailurePattern]]:
    files = [args.F_file] if args.F_file else []
    if args.F_dir:
        d = Path(args.F_dir)
        if not d.is_dir():
            raise ParameterError(f"--F-dir {d} is not a directory")
        files += sorted(str(p) for p in d.glob("*.json"))
    return [(Path(f).name, _load_failures(f)) for f in files]


def cmd_verify_theorems(args, out: _Outputs) -> int:
    h = _hierarchy(args)
    masks, info = _inputs(args, h)
    params = _params(args)
    kinds = [s.strip() for s in args.networks.split(",") if s.strip()]
    if not kinds or any(k not in ("H", "L") for k in kinds):
        raise ParameterError(f"--networks must list H and/or L, got {args.networks!r}")
    patterns = _failure_files(args)
    if patterns and args.q is not None:
        raise ParameterError("give either --F/--F-dir or --q, not both")
    args.F_file = None
    if not patterns:
        patterns = [("sampled" if args.q is not None else "empty", None)]

    instances, cex = [], {}
    for label, F in patterns:
        for kind in kinds:
            # built without the gap check: a violated gap must surface as a counterexample
            net, assign, F_used, E = _detailed(kind, args, h, params, F, strict=False)
            D = (net, assign)
            rep = combined_pipeline(D, h, params, masks=masks)
            entry = {"network": kind, "F": label, "n_failed": len(F_used), "gap_ok": params.gap_ok(kind),
                     "fingerprint": rep.fingerprint, "pass": rep.passed,
                     "impl1": rep.impl1.passed, "impl2": rep.impl2.passed,
                     "abstract_firing_guarantee": rep.abstract_firing_ok,
                     "abstract_non_firing_guarantee": rep.abstract_non_firing_ok,
                     "direct_part1": rep.part1_ok, "direct_part2": rep.part2_ok,
                     "sound": rep.sound, "agree": rep.agree}
            if kind == "L":
                A1 = abstract_pair(h, params)[0]
                sr = check_surviving_reps_fire(D, A1, h, masks=masks)
                entry["surviving_reps_fire"] = sr.passed
                entry["pass"] = entry["pass"] and sr.passed
            instances.append(entry)
            if not entry["pass"]:
                cex[f"{kind}/{label}"] = {
                    "impl1": [c.to_dict() for c in rep.impl1.counterexamples],
                    "impl2": [c.to_dict() for c in rep.impl2.counterexamples],
                    "direct": [r.to_dict() for r in (rep.part1_failures + rep.part2_failures)[:50]],
                }
    ok = all(e["pass"] for e in instances)
    out.add("verdict.json", {
        "hierarchy": fingerprint(h), "params": params.to_dict(), "inputs": info,
        "n_inputs": int(masks.shape[0]), "input_keys": [mask_key(row) for row in masks],
        "pass": ok, "instances": instances,
    })
    if cex:
        out.add("counterexamples.json", cex)
    print(f"verify-theorems: {len(instances)} instance(s) over {masks.shape[0]} input set(s): "
          f"{'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sample_experiment(args, out: _Outputs) -> int:
    h = _hierarchy(args)
    sp = SamplerParams(args.q, args.zeta, args.alpha, args.trials, args.seed)
    assign = canonical_multi_assignment(h, args.m)
    report = estimate_constraint_probability(h, assign, sp, args.which, a=args.a)
    doc = report.to_dict(include_trials=args.per_trial)
    doc["hierarchy"] = {"k": h.k, "l_max": h.l_max}
    out.add("experiment.json", doc)
    passing = report.passing_trials()
    if args.dump_passing:
        width = len(str(sp.trials - 1))
        for t in passing[:args.dump_passing]:
            F = sample_failures(rep_neurons(assign), sp.q, sp.seed, (t, 0))
            out.add(f"passing/F_{t:0{width}d}.json", F.to_dict())
            if args.which == "F-and-E":
                E = sample_connectivity(assign, h, sp.alpha, sp.seed, (t, 1))
                out.add(f"passing/E_{t:0{width}d}.json", E.to_dict())
    print(f"sample-experiment: {report.satisfied}/{sp.trials} samples satisfy the "
          f"{args.which} constraints (epsilon={fmt(sp.epsilon)})")
    return EXIT_OK


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, default):
        p.add_argument("--seed", type=int, default=default(0), help="PRNG seed (default 0)")
        p.add_argument("--out", default=default("."), help="output directory (default .)")
        p.add_argument("--exhaustive-cap", type=int, default=default(DEFAULT_CAP),
                       help=f"largest |C_0| enumerated exhaustively (default {DEFAULT_CAP})")

    parser = argparse.ArgumentParser(prog="snnrefine",
                                     description="Concept-recognition networks and their refinement checks.")
    add_globals(parser, lambda v: v)
    # global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, lambda v: argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_parser = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add_parser(*a, parents=[common], **kw)

    p = sub.add_parser("gen-hierarchy", help="write a uniform concept hierarchy")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--l-max", type=int, required=True)
    p.add_argument("--n", type=int, help="size of the level-0 universe (default k**(l_max+1))")
    p.set_defaults(func=cmd_gen_hierarchy)

    p = sub.add_parser("run", help="execute one network and check recognition")
    p.add_argument("--network", choices=("A1", "A2", "H", "L"), required=True)
    _add_hierarchy_args(p)
    _add_ratio_args(p)
    _add_detailed_args(p)
    _add_input_args(p, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-abstract", help="check A1 and A2 against their guarantees")
    _add_hierarchy_args(p)
    _add_ratio_args(p)
    _add_input_args(p)
    p.set_defaults(func=cmd_check_abstract)

    p = sub.add_parser("check-impl", help="check implementation relations of H or L")
    p.add_argument("--network", choices=("H", "L"), required=True)
    p.add_argument("--relation", choices=("split", "impl1", "impl2", "impl"), default="split",
                   help="split = impl1 vs A1 plus impl2 vs A2 (default)")
    p.add_argument("--against", choices=("A1", "A2"), default="A1", help="abstract network for --relation impl")
    _add_hierarchy_args(p)
    _add_ratio_args(p)
    _add_detailed_args(p)
    _add_input_args(p)
    p.set_defaults(func=cmd_check_impl)

    p = sub.add_parser("verify-theorems", help="run the full refinement pipeline")
    p.add_argument("--networks", default="H,L", help="comma-separated subset of H,L (default H,L)")
    _add_hierarchy_args(p)
    _add_ratio_args(p)
    _add_detailed_args(p)
    p.add_argument("--F-dir", metavar="DIR", help="verify every *.json failure pattern in DIR")
    _add_input_args(p)
    p.set_defaults(func=cmd_verify_theorems)

    p = sub.add_parser("sample-experiment", help="estimate how often sampled F (and E) meet the constraints")
    _add_hierarchy_args(p)
    p.add_argument("--q", type=_rational, required=True, help="failure probability")
    p.add_argument("--zeta", type=_rational, required=True, help="concentration slack")
    p.add_argument("--alpha", type=_rational, default=Fraction(1), help="edge probability (default 1)")
    p.add_argument("--a", type=_rational, default=Fraction(1), help="connectivity fraction (default 1)")
    p.add_argument("--m", type=int, default=50, help="reps per concept (default 50)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--which", choices=("F-only", "F-and-E"), default="F-only")
    p.add_argument("--per-trial", action="store_true", help="record the per-trial pass bits")
    p.add_argument("--dump-passing", type=int, default=0, metavar="N",
                   help="write the first N passing failure patterns to passing/")
    p.set_defaults(func=cmd_sample_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = _Outputs(Path(args.out))
    try:
        if not 0 <= args.seed < 2 ** 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        code = args.func(args, out)
    except PreconditionError as exc:
        item = exc.item
        if isinstance(item, tuple) and item and isinstance(item[0], tuple):
            item = [str(x) for x in item]
        elif item is not None:
            item = str(item)
        out.docs.clear()
        out.add("precondition.json", {"error": str(exc), "item": item})
        out.flush()
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ParameterError, QueryError, ContractError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    out.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
