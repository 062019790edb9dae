"""Command-line front end: validate, refine-check, simulate, eval-trace, sweep, physics.

Exit codes: 0 all checks satisfied, 1 violations found, 2 input or usage
error. All commands are deterministic given identical inputs and flags; no
output file embeds a timestamp.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

from . import analysis, chain, sim, traceability
from .chain import ConstraintKind, Direction, TimingConstraint
from .errors import ModelInvalidError, SchemaError

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2


def fixtures_dir() -> Path:
    return Path(__file__).parent / "fixtures"


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _print_findings(findings) -> None:
    for finding in findings:
        print(f"FINDING rule={finding.rule} subjects={','.join(finding.subjects)} "
              f"message={finding.message}")


def cmd_validate(path: str) -> int:
    """Structural validation of a model file or a traceability file."""
    data = _load_json(path)
    findings = []
    if isinstance(data, dict) and "steps" in data:
        model, parse_findings = chain.parse_model(data)
        findings.extend(parse_findings)
        findings.extend(chain.validate_model(model))
    elif isinstance(data, dict) and ("requirements" in data or "refinements" in data):
        bundle = traceability.load_traceability_file(path)
        findings.extend(bundle.findings)
        for model in bundle.models.values():
            findings.extend(chain.validate_model(model))
        findings.extend(traceability.validate_trace_chain(bundle.requirements, bundle.models))
    else:
        raise SchemaError(f"{path}: neither a model file (steps) nor a "
                          f"traceability file (requirements/refinements)")
    _print_findings(findings)
    print(f"{path}: {'valid' if not findings else f'{len(findings)} finding(s)'}")
    return EXIT_OK if not findings else EXIT_VIOLATIONS


def cmd_refine_check(path: str) -> int:
    """Refinement and budget consistency for every map in a traceability file."""
    bundle = traceability.load_traceability_file(path)
    failures = 0
    findings = list(bundle.findings)
    findings.extend(traceability.validate_trace_chain(bundle.requirements, bundle.models))
    _print_findings(findings)
    failures += len(findings)

    print(f"{'map':<14} {'constraint':<12} {'sum_ms':>8} {'bound_ms':>9} "
          f"{'slack_ms':>9} verdict")
    for rmap in bundle.refinements:
        black = bundle.models.get(rmap.black_model)
        white = bundle.models.get(rmap.white_model)
        if black is None or white is None:
            raise SchemaError(f"refinement {rmap.id!r} references models missing "
                              f"from the file")
        map_findings = traceability.check_refinement(rmap, black, white)
        _print_findings(map_findings)
        failures += len(map_findings)

        if rmap.end_to_end is None:
            raise SchemaError(f"refinement {rmap.id!r} names no end_to_end constraint")
        constraint = black.constraints_by_id().get(rmap.end_to_end)
        if constraint is None:
            raise SchemaError(f"refinement {rmap.id!r}: end_to_end {rmap.end_to_end!r} "
                              f"is not a constraint of {black.id!r}")
        report = traceability.check_budgeting(rmap, white, constraint)
        verdict = "satisfied" if report.satisfied else "OVER BUDGET"
        print(f"{report.map_id:<14} {report.constraint_id:<12} "
              f"{report.sum_seconds * 1e3:>8.3f} {report.bound_seconds * 1e3:>9.3f} "
              f"{report.slack_seconds * 1e3:>9.3f} {verdict}")
        for seg in report.per_segment:
            print(f"    {seg.name:<10} {seg.from_step} -> {seg.to_step:<6} "
                  f"{seg.budget_s * 1e3:>8.3f} ms  functions={','.join(seg.functions) or '-'}")
        if not report.satisfied:
            failures += 1
    return EXIT_OK if failures == 0 else EXIT_VIOLATIONS


def _resolve_seed(args, raw_scenario: dict) -> int | None:
    if args.seed is not None:
        return args.seed
    if "seed" in raw_scenario:
        return None  # keep the scenario's own seed
    env = os.environ.get("ECSIM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SchemaError(f"ECSIM_SEED must be an integer, got {env!r}") from None
    return None


def _load_scenario(args) -> sim.SimScenario:
    raw = _load_json(args.scenario)
    scenario = sim.parse_scenario(raw)
    overrides = {}
    seed = _resolve_seed(args, raw)
    if seed is not None:
        overrides["seed"] = seed
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    if overrides:
        scenario = dataclasses.replace(scenario, **overrides)
    return scenario


def _print_summary_table(summary: dict) -> None:
    print(f"scenario={summary['scenario_id']} runs={summary['runs']} "
          f"collisions={summary['collisions']}")
    print(f"{'requirement':<18} {'bound':>9} {'dir':<4} {'obs':>6} {'viol':>6} "
          f"{'fraction':>9} {'admiss':>8} verdict")
    for req_id, row in summary["requirements"].items():
        verdict = "pass" if row["pass"] else "FAIL"
        print(f"{req_id:<18} {row['bound_s']:>9.4f} {row['direction']:<4} "
              f"{row['observable_runs']:>6} {row['violations']:>6} "
              f"{row['violation_fraction']:>9.4f} {row['admissible_fraction']:>8.4f} {verdict}")
    dominant = summary["dominant_violated_budget"]
    print(f"dominant violated budget: {dominant or 'none'}")
    print(f"detection error rate: {summary['det_error_rate']:.4f} "
          f"(max {summary['det_error_rate_max']:.4f}, "
          f"{'pass' if summary['det_error_rate_pass'] else 'FAIL'})")
    lead = summary["metrics"]["warning_lead"]
    if lead:
        print(f"warning lead: mean={lead['mean']:.4f} p1={lead['p1']:.4f} "
              f"p50={lead['p50']:.4f} p99={lead['p99']:.4f}")


def _write_histograms(records, scenario, out: Path) -> None:
    config = scenario.requirements
    specs = [
        ("warning_lead", TimingConstraint("ECREQ-2", ConstraintKind.LATENCY, "w5", "w4",
                                          config.warning_lead_min_s, Direction.MIN)),
        ("t_acq", TimingConstraint("ACQ-BUDGET", ConstraintKind.LATENCY, "w0", "w2",
                                   config.acq_budget_s, Direction.MAX)),
    ]
    for metric, constraint in specs:
        try:
            summary = analysis.summarize(records, metric, constraint)
        except ValueError:
            continue  # metric unobserved in every run
        analysis.write_histogram_csv(summary, out / f"histogram_{metric}.csv")
        analysis.write_histogram_svg(summary, out / f"histogram_{metric}.svg",
                                     bound_s=constraint.bound_s,
                                     title=f"{scenario.id}: {metric}")


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    records = sim.run_monte_carlo(scenario)
    summary = analysis.summarize_batch(records, scenario)
    _print_summary_table(summary)

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        analysis.dump_json(analysis.results_document(records, scenario), out / "results.json")
        _write_histograms(records, scenario, out)
        if args.trace:
            analysis.write_trace_csv(records, out / "traces.csv")
        print(f"outputs written to {out}")
    return EXIT_OK if summary["all_requirements_pass"] else EXIT_VIOLATIONS


def cmd_eval_trace(model_path: str, trace_path: str, binding_path: str) -> int:
    model, parse_findings = chain.load_model_file(model_path)
    model_findings = chain.validate_model(model)
    if parse_findings or model_findings:
        _print_findings(parse_findings + model_findings)
        raise SchemaError(f"{model_path}: model is not valid")

    binding = _load_json(binding_path)
    if not isinstance(binding, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in binding.items()):
        raise SchemaError(f"{binding_path}: binding must map step ids to event names")
    unknown_events = sorted(set(binding.values()) - set(sim.EVENT_NAMES))
    if unknown_events:
        raise SchemaError(f"{binding_path}: unknown event names {unknown_events}; "
                          f"known: {list(sim.EVENT_NAMES)}")

    traces = analysis.read_trace_csv(trace_path)
    violations = 0
    for trace in traces:
        results = analysis.evaluate_trace(model, trace, binding)
        results.extend(
            analysis.evaluate_periodicity(c, trace, binding)
            for c in model.constraints if c.kind is ConstraintKind.PERIODICITY)
        for r in results:
            slack = "-" if r.slack_s is None else f"{r.slack_s:+.6f}"
            print(f"run={r.run_id} constraint={r.constraint_id} "
                  f"status={r.status.value} slack_s={slack}")
            if r.status is analysis.EvaluationStatus.VIOLATED:
                violations += 1
    print(f"{len(traces)} run(s), {violations} violation(s)")
    return EXIT_OK if violations == 0 else EXIT_VIOLATIONS


def cmd_sweep(args) -> int:
    scenario = _load_scenario(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise SchemaError(f"--values must be a comma-separated list of numbers, "
                          f"got {args.values!r}") from None
    points = sim.sweep(scenario, args.param, values)

    header = (f"{args.param:>10} {'runs':>6} {'ECREQ2_viol':>12} {'ACQ_viol':>9} "
              f"{'lead_p50':>9} {'lead_p99':>9} {'collisions':>10}")
    print(header)
    rows = []
    all_pass = True
    for point in points:
        summary = point.summary
        lead = summary["metrics"]["warning_lead"] or {}
        ecreq2 = summary["requirements"]["ECREQ-2"]["violation_fraction"]
        acq = summary["requirements"]["ACQ-BUDGET"]["violation_fraction"]
        all_pass = all_pass and summary["all_requirements_pass"]
        print(f"{point.value:>10.4g} {summary['runs']:>6} {ecreq2:>12.4f} {acq:>9.4f} "
              f"{lead.get('p50', math.nan):>9.4f} {lead.get('p99', math.nan):>9.4f} "
              f"{summary['collision_fraction']:>10.4f}")
        rows.append((point.value, summary["runs"], ecreq2, acq,
                     lead.get("p50"), lead.get("p99"), summary["collision_fraction"]))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = [f"{args.param},runs,ecreq2_violation_fraction,acq_violation_fraction,"
                 f"lead_p50,lead_p99,collision_fraction"]
        for row in rows:
            lines.append(",".join("" if v is None else repr(v) for v in row))
        (out / f"sweep_{args.param}.csv").write_text("\n".join(lines) + "\n",
                                                     encoding="utf-8")
        print(f"sweep table written to {out / f'sweep_{args.param}.csv'}")
    return EXIT_OK if all_pass else EXIT_VIOLATIONS


def cmd_physics(args) -> int:
    from .dynamics import BrakeParams, stopping_distance, stopping_time

    if args.scenario:
        scenario = sim.load_scenario_file(args.scenario)
        v, brake, lead = scenario.v_initial, scenario.brake, scenario.warning_lead
        sensor = scenario.sensor
    else:
        if args.v is None or args.a is None:
            raise SchemaError("physics needs either --scenario or both --v and --a")
        v = args.v
        brake = BrakeParams(a_const=args.a, t_response=args.t_response)
        lead = args.lead
        sensor = None

    s_stop = stopping_distance(v, brake)
    t_stop = stopping_time(v, brake)
    print(f"initial speed          v       = {v:.6g} m/s")
    print(f"deceleration           a_const = {brake.a_const:.6g} m/s^2")
    print(f"ramp duration          t_resp  = {brake.t_response:.6g} s")
    print(f"stopping distance      s_stop  = {s_stop:.6g} m")
    print(f"stopping time          t_stop  = {t_stop:.6g} s")
    print(f"brake trigger distance (TTR=0)      = {s_stop:.6g} m")
    print(f"warning trigger distance (TTR={lead:.3g}) = {s_stop + lead * v:.6g} m")
    if sensor is not None:
        print(f"guaranteed detection   r_g     = {sensor.r_g:.6g} m "
              f"(margin to brake point: {sensor.r_g - s_stop:.6g} m, "
              f"{(sensor.r_g - s_stop) / v:.6g} s)")
        print(f"detection cutoff       r_max   = {sensor.r_max:.6g} m")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecsim",
        description="Event-chain timing models: validation, refinement budgets, "
                    "Monte Carlo simulation, trace evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a model or traceability file")
    p.add_argument("path")

    p = sub.add_parser("refine-check", help="check refinement maps and budget sums")
    p.add_argument("path")

    p = sub.add_parser("simulate", help="run the Monte Carlo simulation")
    p.add_argument("scenario")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--trace", action="store_true", help="also write per-run trace CSV")

    p = sub.add_parser("eval-trace", help="evaluate model constraints over a trace file")
    p.add_argument("model")
    p.add_argument("trace")
    p.add_argument("binding", help="JSON object mapping step ids to event names")

    p = sub.add_parser("sweep", help="Monte Carlo batches over a parameter range")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, choices=sim.SWEEPABLE_PARAMETERS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("physics", help="print stopping distances and trigger points")
    p.add_argument("--scenario", default=None)
    p.add_argument("--v", type=float, default=None, help="initial speed m/s")
    p.add_argument("--a", type=float, default=None, help="deceleration m/s^2")
    p.add_argument("--t-response", type=float, default=0.0, dest="t_response")
    p.add_argument("--lead", type=float, default=0.8, help="warning lead s")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.path)
        if args.command == "refine-check":
            return cmd_refine_check(args.path)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "eval-trace":
            return cmd_eval_trace(args.model, args.trace, args.binding)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "physics":
            return cmd_physics(args)
        raise AssertionError(f"unhandled command {args.command}")
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
              file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ModelInvalidError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
