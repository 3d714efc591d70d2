"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

All checks are exact (rational thresholds, integer potentials) except the
sampler calibration, whose one-sided tolerance is stated in its line.
"""
import json
import math
from fractions import Fraction as Q
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
import pytest

from oracles import oracle_support, oracle_support_table
from snnrefine.abstract_nets import AbstractParams, build_A1, build_A2, check_single_batch, run_single
from snnrefine.cli import main
from snnrefine.detailed_nets import (DetailedParams, FailurePattern, build_H, build_L,
                                     canonical_multi_assignment, check_E_constraint,
                                     check_F_constraint, check_recognition_multi, complete_edges,
                                     run_multi)
from snnrefine.hierarchy import HierarchyParams, build_uniform_hierarchy, masks_to_sets
from snnrefine.refinement import (InputEnumeration, check_impl2, check_surviving_reps_fire,
                                  combined_pipeline, enumerate_inputs, find_part2_counterexample)
from snnrefine.reports import RepGather
from snnrefine.sampler import (SamplerParams, estimate_constraint_probability, maximal_valid_failures,
                               random_valid_edges, random_valid_failures, rep_neurons, sample_failures)

GRID = [Q(0), Q(1, 4), Q(1, 2), Q(3, 4), Q(1)]
PAIRS = [(r1, r2) for r1, r2 in combinations_with_replacement(GRID, 2)]
ABSTRACT_SHAPES = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2), (2, 3)]
DETAILED_SHAPES = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1)]
EXHAUSTIVE_LIMIT = 16
SAMPLED_INPUTS = 4096
N_PATTERNS = 50
FIXTURES = Path(__file__).parent / "fixtures"


def hier(k, l_max):
    return build_uniform_hierarchy(HierarchyParams(l_max=l_max, k=k))


def inputs_for(h):
    n = len(h.leaves_c0)
    if n <= EXHAUSTIVE_LIMIT:
        return enumerate_inputs(h, InputEnumeration(cap=EXHAUSTIVE_LIMIT)), "exhaustive"
    return enumerate_inputs(h, InputEnumeration("sampled", sample_count=SAMPLED_INPUTS, seed=0)), "sampled"


def rep_fire_matrix(h, net, assign, masks):
    batch = run_single(h, net, assign, masks)
    return RepGather.build(h, net.config, assign.as_multi()).counts(batch) > 0


def failure_patterns(h, assign, eps):
    """F = empty, the maximal valid pattern, and N_PATTERNS seeded valid patterns."""
    pats = [FailurePattern(), maximal_valid_failures(assign, h, eps)]
    pats += [random_valid_failures(assign, h, eps, seed) for seed in range(N_PATTERNS)]
    return pats


def test_criterion_1_abstract_correctness(acceptance_line):
    n_checks, failures, modes = 0, [], {}
    for k, l_max in ABSTRACT_SHAPES:
        h = hier(k, l_max)
        masks, modes[(k, l_max)] = inputs_for(h)
        for r1, r2 in PAIRS:
            p = AbstractParams(r1, r2)
            for name, build, guarantee in (("A1", build_A1, {"r2": r2}), ("A2", build_A2, {"r1": r1})):
                net, assign = build(h, p)
                batch = run_single(h, net, assign, masks)
                bad = check_single_batch(name, batch, assign, h, masks, **guarantee, failures_only=True)
                bad += check_single_batch(name, batch, assign, h, masks, r1=r1, r2=r2, failures_only=True)
                n_checks += 2 * len(masks)
                if bad:
                    failures.append((k, l_max, name, r1, r2, bad[0].to_dict()))
    ok = not failures
    acceptance_line(1, ok, f"{n_checks} guarantee/recognition checks over {len(ABSTRACT_SHAPES)} hierarchies "
                           f"x {len(PAIRS)} (r1,r2) pairs; input modes {sorted(set(modes.values()))}; "
                           f"failures={len(failures)}", "exact (zero violations)")
    assert ok, failures[:3]


def test_criterion_2_exact_support_characterization(acceptance_line):
    mismatches, n_rows, n_brute = [], 0, 0
    for k, l_max in ABSTRACT_SHAPES:
        h = hier(k, l_max)
        masks, _ = inputs_for(h)
        oracle = {r: np.concatenate(oracle_support_table(k, l_max, masks, r), axis=1) for r in GRID}
        # the recursive brute-force oracle on every input of small hierarchies, a stride of the rest
        stride = 1 if len(masks) <= 512 else 37
        concepts = list(h.concepts())
        for r in GRID:
            for b in range(0, len(masks), stride):
                B = frozenset(tuple(c) for c in masks_to_sets(h, masks[b:b + 1])[0])
                want = oracle_support(k, l_max, B, r)
                got = {tuple(c) for c, x in zip(concepts, oracle[r][b]) if x}
                n_brute += 1
                if got != want:
                    mismatches.append(("oracles disagree", k, l_max, r, b))
        for r1, r2 in PAIRS:
            p = AbstractParams(r1, r2)
            for name, build, r in (("A1", build_A1, r2), ("A2", build_A2, r1)):
                fire = rep_fire_matrix(h, *build(h, p), masks)
                n_rows += len(masks)
                if not np.array_equal(fire, oracle[r]):
                    mismatches.append((name, k, l_max, r1, r2, int((fire != oracle[r]).sum())))
    ok = not mismatches
    acceptance_line(2, ok, f"rep(c) fires iff c in supp on {n_rows} (network, input) rows; "
                           f"{n_brute} brute-force oracle cross-checks; mismatches={len(mismatches)}",
                    "exact (zero mismatches)")
    assert ok, mismatches[:3]


def _detailed_grid(kind):
    for k, l_max in DETAILED_SHAPES:
        for m in (1, 3, 5):
            for eps in (Q(0), Q(1, 5)):
                for a in ((Q(1),) if kind == "H" else (Q(1, 2), Q(1))):
                    yield k, l_max, m, eps, a


def _admissible(eps, a):
    return [(r1, r2) for r1, r2 in PAIRS if r1 <= a * r2 * (1 - eps)]


def test_criterion_3_H_refinement(acceptance_line):
    n_inst, n_distinct, failures, n_agree = 0, 0, [], 0
    for k, l_max, m, eps, _ in _detailed_grid("H"):
        h = hier(k, l_max)
        masks = enumerate_inputs(h, InputEnumeration(cap=9))
        assign = canonical_multi_assignment(h, m)
        pats = failure_patterns(h, assign, eps)
        assert all(check_F_constraint(assign, F, m, eps).passed for F in pats)
        distinct = list(dict.fromkeys(pats))
        n_distinct += len(distinct)
        for r1, r2 in _admissible(eps, Q(1)):
            params = DetailedParams(m, eps, r1, r2)
            for i, F in enumerate(distinct):
                D = (build_H(h, params, assign, F), assign)
                rep = combined_pipeline(D, h, params, masks=masks)
                n_inst += 1
                if not (rep.passed and rep.agree):
                    failures.append((k, l_max, m, eps, r1, r2, i))
                if i == 0:
                    # per-trace recognition check agrees with the batched one on sample inputs
                    batch = run_multi(h, D[0], assign, masks)
                    for b in (0, len(masks) // 2, len(masks) - 1):
                        B = masks_to_sets(h, masks[b:b + 1])[0]
                        n_agree += check_recognition_multi(batch[b], assign, h, B, params).passed
    ok = not failures
    acceptance_line(3, ok, f"{n_inst} H instances ({n_distinct} distinct valid F across configs, from "
                           f"{N_PATTERNS}+2 seeded/boundary patterns each); impl1(H,A1), impl2(H,A2), direct "
                           f"recognition all pass and agree; failures={len(failures)}", "exact")
    assert ok, failures[:3]


def _L_instances():
    for k, l_max, m, eps, a in _detailed_grid("L"):
        h = hier(k, l_max)
        masks = enumerate_inputs(h, InputEnumeration(cap=9))
        assign = canonical_multi_assignment(h, m)
        full = complete_edges(assign, h)
        pairs = [(FailurePattern(), full), (maximal_valid_failures(assign, h, eps), full)]
        for seed in range(N_PATTERNS):
            F = random_valid_failures(assign, h, eps, seed)
            pairs.append((F, random_valid_edges(assign, h, F, a, eps, seed)))
        for F, E in pairs:
            assert check_F_constraint(assign, F, m, eps).passed
            assert check_E_constraint(assign, F, E, a, m, eps, h).passed
        distinct = list(dict.fromkeys(pairs))
        for r1, r2 in _admissible(eps, a):
            params = DetailedParams(m, eps, r1, r2, a)
            A1 = build_A1(h, AbstractParams(r1, r2))
            for i, (F, E) in enumerate(distinct):
                yield (k, l_max, m, eps, a, r1, r2, i), h, masks, params, A1, (build_L(h, params, assign, F, E), assign)


@pytest.fixture(scope="module")
def L_results():
    results = []
    for key, h, masks, params, A1, D in _L_instances():
        rep = combined_pipeline(D, h, params, masks=masks)
        surv = check_surviving_reps_fire(D, A1, h, masks=masks)
        results.append((key, rep.passed and rep.agree, surv.passed))
    return results


def test_criterion_4_L_refinement(acceptance_line, L_results):
    failures = [key for key, ok, _ in L_results if not ok]
    ok = not failures
    acceptance_line(4, ok, f"{len(L_results)} L instances (distinct valid (F,E) pairs incl. complete-E "
                           f"boundary, a in {{1/2,1}}); impl1/impl2/direct all pass and agree; "
                           f"failures={len(failures)}", "exact")
    assert ok, failures[:3]


def test_criterion_5_strengthened_L_induction(acceptance_line, L_results):
    failures = [key for key, _, surv in L_results if not surv]
    ok = not failures
    acceptance_line(5, ok, f"every surviving rep of c fires whenever rep(c) fires in A1, on all "
                           f"{len(L_results)} instances of criterion 4; failures={len(failures)}", "exact")
    assert ok, failures[:3]


def test_criterion_6_degeneracy_collapse(acceptance_line):
    n, mismatches = 0, []
    for k, l_max in ABSTRACT_SHAPES:
        h = hier(k, l_max)
        masks, _ = inputs_for(h)
        assign = canonical_multi_assignment(h, 1)
        full = complete_edges(assign, h)
        for r1, r2 in PAIRS:
            params = DetailedParams(1, Q(0), r1, r2)
            p = AbstractParams(r1, r2)
            a1 = run_single(h, *build_A1(h, p), masks).firing
            a2 = run_single(h, *build_A2(h, p), masks).firing
            lo = r1 * k
            nets = {
                ("H", "A1"): build_H(h, params, assign, FailurePattern()),
                ("L", "A1"): build_L(h, params, assign, FailurePattern(), full),
                ("H", "A2"): build_H(h, params, assign, FailurePattern(), tau=lo),
                ("L", "A2"): build_L(h, params, assign, FailurePattern(), full, tau=lo),
            }
            for (kind, target), net in nets.items():
                got = run_multi(h, net, assign, masks).firing
                n += 1
                if not np.array_equal(got, a1 if target == "A1" else a2):
                    mismatches.append((k, l_max, r1, r2, kind, target))
    ok = not mismatches
    acceptance_line(6, ok, f"{n} trace-batch comparisons (m=1, eps=0, F=empty, a=1, complete E): "
                           f"H,L == A1 and, at the r1-end threshold, == A2; mismatches={len(mismatches)}",
                    "exact (identical traces)")
    assert ok, mismatches[:3]


def test_criterion_7_gap_necessity(acceptance_line):
    fixture = json.loads((FIXTURES / "gap_counterexamples.json").read_text())
    found, restored = {}, {}
    for kind, fx in fixture.items():
        h = hier(fx["hierarchy"]["k"], fx["hierarchy"]["l_max"])
        pd = fx["params"]
        params = DetailedParams(pd["m"], Q(pd["epsilon"]), Q(pd["r1"]), Q(pd["r2"]), Q(pd["a"]))
        assert not params.gap_ok(kind)
        hit = find_part2_counterexample(h, params, kind)
        assert hit is not None, kind
        B, c, rep = hit
        found[kind] = {"B": [str(b) for b in sorted(B)], "concept": str(c), "counts": rep.to_dict()["counts"]}
        # the refinement route sees the same failure
        assign = canonical_multi_assignment(h, params.m)
        builder = build_H if kind == "H" else build_L
        extra = () if kind == "H" else (complete_edges(assign, h),)
        net = builder(h, params, assign, FailurePattern(), *extra, strict=False)
        A2 = build_A2(h, AbstractParams(params.r1, params.r2))
        assert not check_impl2((net, assign), A2, h).passed
        # restoring the gap (largest admissible r1) removes every Part-2 counterexample
        r1_ok = params.r2 * (1 - params.epsilon) * (params.a if kind == "L" else 1)
        fixed = DetailedParams(params.m, params.epsilon, r1_ok, params.r2, params.a)
        restored[kind] = find_part2_counterexample(h, fixed, kind) is None
    matches = all(found[k] == {x: fixture[k][x] for x in ("B", "concept", "counts")} for k in fixture)
    ok = matches and all(restored.values())
    acceptance_line(7, ok, "; ".join(f"{k}: B={found[k]['B']} concept {found[k]['concept']} fires while "
                                     f"not r1-supported (matches fixture: {matches}; gap restored -> none: "
                                     f"{restored[k]})" for k in sorted(found)), "exact")
    assert ok


@pytest.mark.slow
def test_criterion_8_sampler_calibration(acceptance_line):
    h = hier(2, 2)
    m = 50
    assign = canonical_multi_assignment(h, m)
    sp = SamplerParams(Q(1, 10), Q(3, 10), trials=10_000, seed=20240607)
    report = estimate_constraint_probability(h, assign, sp, "F-only")
    viol = float(report.violation_fraction)
    se = report.standard_error
    limit = report.union_bound + 3 * se
    calibrated = viol <= limit

    params = DetailedParams(m, sp.epsilon, Q(1, 2), Q(1))
    assert params.gap_ok("H")
    masks = enumerate_inputs(h, InputEnumeration())
    neurons = rep_neurons(assign)
    bad = []
    passing = report.passing_trials()
    for t in passing:
        F = sample_failures(neurons, sp.q, sp.seed, (t, 0))
        rep = combined_pipeline((build_H(h, params, assign, F), assign), h, params, masks=masks)
        if not rep.passed:
            bad.append(t)
    ok = calibrated and not bad and len(passing) > 0
    acceptance_line(8, ok, f"violation fraction {viol:.4f} <= union bound {report.union_bound:.4f} + 3*SE "
                           f"({3 * se:.4f}) = {limit:.4f}: {calibrated}; {len(passing)} passing samples each drive "
                           f"a passing H pipeline (failures={len(bad)}); eps={sp.epsilon}",
                    "one-sided, 3 binomial standard errors")
    assert ok, (viol, limit, bad[:5])


def _cli_outputs(tmp_path, tag, argv):
    d = tmp_path / tag
    code = main(["--out", str(d), *argv])
    return code, {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path, acceptance_line):
    F = tmp_path / "F.json"
    h = hier(2, 2)
    assign = canonical_multi_assignment(h, 5)
    F.write_text(random_valid_failures(assign, h, Q(1, 5), 3).to_json())
    commands = [
        ["gen-hierarchy", "--k", "2", "--l-max", "2"],
        ["--seed", "5", "run", "--network", "A1", "--sampled", "30"],
        ["run", "--network", "H", "--m", "5", "--F", str(F), "--exhaustive"],
        ["--seed", "2", "run", "--network", "L", "--m", "5", "--q", "1/20", "--alpha", "4/5", "--B", "0:1,0:2"],
        ["check-abstract", "--r1", "1/4", "--r2", "3/4"],
        ["check-impl", "--network", "L", "--m", "5", "--F", str(F), "--a", "1/2", "--r1", "1/4"],
        ["check-impl", "--network", "H", "--relation", "impl", "--m", "5", "--F", str(F)],
        ["verify-theorems", "--m", "5", "--F", str(F)],
        ["verify-theorems", "--networks", "H", "--r1", "3/4", "--r2", "3/4", "--epsilon", "1/3"],
        ["--seed", "9", "sample-experiment", "--q", "1/10", "--zeta", "3/10", "--trials", "300",
         "--which", "F-and-E", "--alpha", "19/20", "--a", "3/4", "--per-trial", "--dump-passing", "3"],
    ]
    diffs = []
    for i, argv in enumerate(commands):
        c1, o1 = _cli_outputs(tmp_path, f"{i}a", argv)
        c2, o2 = _cli_outputs(tmp_path, f"{i}b", argv)
        if c1 != c2 or o1 != o2 or not o1:
            diffs.append((argv, c1, c2, sorted(set(o1) ^ set(o2))))
    # library-level checks repeat identically as well
    params = DetailedParams(5, Q(1, 5), Q(1, 2), Q(1))
    D = (build_H(h, params, assign, FailurePattern.from_json(F.read_text())), assign)
    lib_same = combined_pipeline(D, h, params).to_dict() == combined_pipeline(D, h, params).to_dict()
    sp = SamplerParams(Q(1, 10), Q(3, 10), trials=200, seed=1)
    lib_same &= (estimate_constraint_probability(h, assign, sp).to_dict(True)
                 == estimate_constraint_probability(h, assign, sp).to_dict(True))
    ok = not diffs and lib_same
    acceptance_line(9, ok, f"{len(commands)} CLI invocations run twice: byte-identical outputs and exit codes "
                           f"(differences={len(diffs)}); library verdicts repeat: {lib_same}", "byte-identical")
    assert ok, diffs[:2]
