"""Requirement formalization chains and black-box to white-box refinement.

A requirement passes through four stages on its way from regulation text to a
formal timing constraint: digitized paragraph -> legal language -> technical
language -> event-chain requirement. Each node derives from a node exactly
one stage earlier, and the final stage binds an event-chain model and its
constraints.

A refinement map explains how each black-box step unfolds into a connected
chain of white-box steps, and partitions an end-to-end timing bound into
per-segment budgets along the refined path.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .chain import (
    Direction,
    EventChainModel,
    Finding,
    TimingConstraint,
    Viewpoint,
    depends_transitively,
    parse_model,
    transitive_dependencies,
    validate_model,
)
from .errors import ModelInvalidError, SchemaError


class Stage(enum.Enum):
    DIGITIZED_PARAGRAPH = "digitized_paragraph"
    LEGAL_LANGUAGE = "legal_language"
    TECHNICAL_LANGUAGE = "technical_language"
    EVENT_CHAIN_REQUIREMENT = "event_chain_requirement"


_STAGE_ORDER = list(Stage)


@dataclass(frozen=True)
class RequirementNode:
    """One stage of a regulation-to-model formalization chain."""

    id: str
    stage: Stage
    text: str
    derived_from: str | None = None
    model_ref: str | None = None
    constraint_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class BudgetSegment:
    """A per-segment timing budget on the white model, with the functions it covers."""

    name: str
    from_step: str
    to_step: str
    budget_s: float
    functions: tuple[str, ...] = ()


@dataclass(frozen=True)
class RefinementMap:
    """Mapping from black-box steps onto ordered white-box step chains.

    end_to_end names the black-model constraint whose bound the budgets
    partition.
    """

    id: str
    black_model: str
    white_model: str
    step_map: tuple[tuple[str, tuple[str, ...]], ...]
    budgets: tuple[BudgetSegment, ...] = ()
    end_to_end: str | None = None

    def images(self) -> dict[str, tuple[str, ...]]:
        return dict(self.step_map)


def validate_trace_chain(nodes: Sequence[RequirementNode],
                         models: Mapping[str, EventChainModel] | None = None) -> list[Finding]:
    """Findings for malformed formalization chains; empty report means valid.

    Checks stage-adjacent derive links, dangling references, the model
    obligation of the final stage, and that every node roots at a digitized
    paragraph. Model/constraint references are resolved only when a model
    registry is supplied. Insensitive to node order.
    """
    findings: list[Finding] = []
    by_id: dict[str, RequirementNode] = {}
    for node in nodes:
        if node.id in by_id:
            findings.append(Finding("duplicate-id", (node.id,),
                                    f"requirement id {node.id!r} appears more than once"))
        by_id[node.id] = node

    for node in nodes:
        if node.derived_from is not None:
            parent = by_id.get(node.derived_from)
            if parent is None:
                findings.append(Finding("dangling-derive", (node.id, node.derived_from),
                                        f"{node.id!r} derives from unknown node {node.derived_from!r}"))
            else:
                expected = _STAGE_ORDER.index(node.stage) - 1
                if expected < 0 or _STAGE_ORDER[expected] is not parent.stage:
                    findings.append(Finding(
                        "stage-adjacency", (node.id, parent.id),
                        f"{node.id!r} ({node.stage.value}) must derive from a node one stage "
                        f"earlier, not {parent.id!r} ({parent.stage.value})"))

        if node.stage is Stage.EVENT_CHAIN_REQUIREMENT:
            if node.model_ref is None:
                findings.append(Finding("model-required", (node.id,),
                                        f"event-chain requirement {node.id!r} has no model_ref"))
            elif models is not None:
                model = models.get(node.model_ref)
                if model is None:
                    findings.append(Finding("model-ref-unknown", (node.id, node.model_ref),
                                            f"{node.id!r} references unknown model {node.model_ref!r}"))
                else:
                    known = set(model.constraints_by_id())
                    for ref in node.constraint_refs:
                        if ref not in known:
                            findings.append(Finding(
                                "constraint-ref-unknown", (node.id, ref),
                                f"{node.id!r} references constraint {ref!r} absent from model "
                                f"{node.model_ref!r}"))
        elif node.model_ref is not None:
            findings.append(Finding("model-ref-stage", (node.id,),
                                    f"{node.id!r} carries a model_ref but is not an "
                                    f"event-chain requirement"))

    # Root every node at a digitized paragraph by walking derive links.
    for node in nodes:
        cur: RequirementNode | None = node
        seen: set[str] = set()
        while cur is not None and cur.stage is not Stage.DIGITIZED_PARAGRAPH:
            if cur.id in seen:
                cur = None
                break
            seen.add(cur.id)
            cur = by_id.get(cur.derived_from) if cur.derived_from else None
        if cur is None:
            findings.append(Finding("orphan", (node.id,),
                                    f"{node.id!r} has no derive path back to a digitized paragraph"))

    return findings


def _require_valid(model: EventChainModel) -> None:
    findings = validate_model(model)
    if findings:
        raise ModelInvalidError(f"model {model.id!r} fails validation", findings)


def check_refinement(rmap: RefinementMap, black: EventChainModel,
                     white: EventChainModel) -> list[Finding]:
    """Findings for refinements that do not faithfully unfold the black box.

    Requires: every black step mapped, mapped white chains connected along
    causal dependencies, and black dependency order preserved between the
    white images.
    """
    _require_valid(black)
    _require_valid(white)

    findings: list[Finding] = []
    if black.viewpoint is not Viewpoint.BLACK_BOX:
        findings.append(Finding("viewpoint-mismatch", (rmap.id, black.id),
                                f"model {black.id!r} is not a black-box model"))
    if white.viewpoint is not Viewpoint.WHITE_BOX:
        findings.append(Finding("viewpoint-mismatch", (rmap.id, white.id),
                                f"model {white.id!r} is not a white-box model"))

    images = rmap.images()
    black_ids = set(black.step_ids())
    white_ids = set(white.step_ids())

    for black_step, chain in images.items():
        if black_step not in black_ids:
            findings.append(Finding("unknown-step", (rmap.id, black_step),
                                    f"map {rmap.id!r} refines unknown black step {black_step!r}"))
            continue
        if not chain:
            findings.append(Finding("total-mapping", (rmap.id, black_step),
                                    f"black step {black_step!r} maps to an empty chain"))
            continue
        missing = [w for w in chain if w not in white_ids]
        for w in missing:
            findings.append(Finding("unknown-step", (rmap.id, w),
                                    f"map {rmap.id!r} targets unknown white step {w!r}"))
        if missing:
            continue
        for prev, nxt in zip(chain, chain[1:]):
            if not depends_transitively(white, nxt, prev):
                findings.append(Finding(
                    "chain-connectivity", (black_step, prev, nxt),
                    f"white chain for {black_step!r} is broken: {nxt!r} does not "
                    f"causally depend on {prev!r}"))

    for sid in sorted(black_ids - set(images)):
        findings.append(Finding("total-mapping", (rmap.id, sid),
                                f"black step {sid!r} is not refined by map {rmap.id!r}"))

    # Order preservation: if X depends on Y in the black box, the head of X's
    # white image must transitively depend on the tail of Y's image.
    for step in black.steps:
        x_chain = images.get(step.id)
        if not x_chain or any(w not in white_ids for w in x_chain):
            continue
        for dep in step.depends_on:
            y_chain = images.get(dep)
            if not y_chain or any(w not in white_ids for w in y_chain):
                continue
            if not depends_transitively(white, x_chain[0], y_chain[-1]):
                findings.append(Finding(
                    "causal-preservation", (step.id, dep, x_chain[0], y_chain[-1]),
                    f"black dependency {step.id!r} -> {dep!r} is not preserved: white step "
                    f"{x_chain[0]!r} has no causal path to {y_chain[-1]!r}"))

    return findings


@dataclass(frozen=True)
class BudgetReport:
    """Result of summing per-segment budgets against an end-to-end bound."""

    map_id: str
    constraint_id: str
    sum_seconds: float
    bound_seconds: float
    satisfied: bool
    slack_seconds: float
    per_segment: tuple[BudgetSegment, ...]
    error: str | None = None


def _path_steps(white: EventChainModel, start: str, end: str) -> set[str]:
    """Steps lying on some causal path from start to end (inclusive)."""
    forward = transitive_dependencies(white, end) | {end}
    on_path = {s for s in forward
               if s == start or depends_transitively(white, s, start)}
    return on_path if start in forward or start == end else set()


def check_budgeting(rmap: RefinementMap, white: EventChainModel,
                    end_to_end: TimingConstraint) -> BudgetReport:
    """Sum segment budgets along the refined path and compare to the bound.

    The end-to-end constraint must be MAX-directed, and every segment must lie
    on the white path between the images of the constraint's endpoints.
    Satisfaction is boundary-inclusive.
    """
    if end_to_end.direction is not Direction.MAX:
        raise ValueError(
            f"end-to-end constraint {end_to_end.id!r} must be max-directed for budgeting")
    _require_valid(white)

    images = rmap.images()
    if end_to_end.from_step not in images or end_to_end.to_step not in images:
        raise ValueError(
            f"map {rmap.id!r} does not refine both endpoints of {end_to_end.id!r}")
    start = images[end_to_end.from_step][-1]
    end = images[end_to_end.to_step][-1]
    on_path = _path_steps(white, start, end)
    if not on_path:
        raise ValueError(
            f"white model has no causal path {start!r} -> {end!r} for {end_to_end.id!r}")

    for seg in rmap.budgets:
        if seg.budget_s < 0:
            raise ValueError(f"budget segment {seg.name!r} has negative budget")
        if seg.from_step not in on_path or seg.to_step not in on_path:
            raise ValueError(
                f"budget segment {seg.name!r} ({seg.from_step!r} -> {seg.to_step!r}) "
                f"is not on the refined path {start!r} -> {end!r}")
        if seg.from_step != seg.to_step and not depends_transitively(
                white, seg.to_step, seg.from_step):
            raise ValueError(
                f"budget segment {seg.name!r} runs against the causal order")

    # fsum keeps decimal budget lists like 450+10+30+10 ms exact.
    total = math.fsum(seg.budget_s for seg in rmap.budgets)
    slack = end_to_end.bound_s - total
    return BudgetReport(
        map_id=rmap.id,
        constraint_id=end_to_end.id,
        sum_seconds=total,
        bound_seconds=end_to_end.bound_s,
        satisfied=slack >= 0,
        slack_seconds=slack,
        per_segment=rmap.budgets)


def compare_budget_alternatives(
        maps: Sequence[RefinementMap],
        end_to_end: TimingConstraint,
        models: Mapping[str, EventChainModel]) -> list[BudgetReport]:
    """Rank design alternatives by total budget, flagging broken ones.

    Per-map problems become flagged entries (error set, unsatisfied) rather
    than failures. Ties are ordered by map id for determinism.
    """
    reports: list[BudgetReport] = []
    for rmap in maps:
        try:
            black = models[rmap.black_model]
            white = models[rmap.white_model]
        except KeyError as exc:
            reports.append(BudgetReport(rmap.id, end_to_end.id, math.inf,
                                        end_to_end.bound_s, False, -math.inf, (),
                                        error=f"unknown model {exc.args[0]!r}"))
            continue
        try:
            findings = check_refinement(rmap, black, white)
            if findings:
                raise ValueError("refinement findings: " + "; ".join(str(f) for f in findings))
            reports.append(check_budgeting(rmap, white, end_to_end))
        except (ValueError, ModelInvalidError) as exc:
            reports.append(BudgetReport(rmap.id, end_to_end.id, math.inf,
                                        end_to_end.bound_s, False, -math.inf, (),
                                        error=str(exc)))
    reports.sort(key=lambda r: (r.sum_seconds, r.map_id))
    return reports


# ---------------------------------------------------------------------------
# Traceability files
#
# Schema: {"requirements": [...], "refinements": [...]} plus the models the
# refinements refer to, either inline under "models" or by relative path
# under "model_files".
# ---------------------------------------------------------------------------

_TRACE_KEYS = {"requirements", "refinements", "models", "model_files"}
_REQ_KEYS = {"id", "stage", "text", "derived_from", "model_ref", "constraint_refs"}
_REFINE_KEYS = {"id", "black_model", "white_model", "step_map", "budgets", "end_to_end"}
_BUDGET_KEYS = {"name", "from", "to", "budget_s", "functions"}


@dataclass
class TraceabilityBundle:
    requirements: tuple[RequirementNode, ...]
    refinements: tuple[RefinementMap, ...]
    models: dict[str, EventChainModel]
    findings: list[Finding] = field(default_factory=list)


def parse_requirement(raw: Mapping, where: str) -> RequirementNode:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{where}: must be an object")
    unknown = [k for k in raw if k not in _REQ_KEYS]
    if unknown:
        raise SchemaError(f"{where}: unknown keys {unknown}")
    stage_raw = raw.get("stage")
    try:
        stage = Stage(stage_raw)
    except ValueError:
        raise SchemaError(f"{where}: bad stage {stage_raw!r}") from None
    refs = raw.get("constraint_refs", [])
    if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
        raise SchemaError(f"{where}: constraint_refs must be a list of ids")
    if not isinstance(raw.get("id"), str) or not isinstance(raw.get("text"), str):
        raise SchemaError(f"{where}: id and text must be strings")
    return RequirementNode(
        id=raw["id"], stage=stage, text=raw["text"],
        derived_from=raw.get("derived_from"),
        model_ref=raw.get("model_ref"),
        constraint_refs=tuple(refs))


def parse_refinement(raw: Mapping, where: str) -> RefinementMap:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{where}: must be an object")
    unknown = [k for k in raw if k not in _REFINE_KEYS]
    if unknown:
        raise SchemaError(f"{where}: unknown keys {unknown}")
    step_map_raw = raw.get("step_map")
    if not isinstance(step_map_raw, Mapping):
        raise SchemaError(f"{where}: step_map must be an object")
    step_map = []
    for black, chain in step_map_raw.items():
        if not isinstance(chain, list) or not all(isinstance(w, str) for w in chain):
            raise SchemaError(f"{where}: step_map[{black!r}] must be a list of white step ids")
        step_map.append((black, tuple(chain)))
    budgets = []
    for i, b in enumerate(raw.get("budgets", [])):
        bwhere = f"{where}.budgets[{i}]"
        if not isinstance(b, Mapping):
            raise SchemaError(f"{bwhere}: must be an object")
        unknown = [k for k in b if k not in _BUDGET_KEYS]
        if unknown:
            raise SchemaError(f"{bwhere}: unknown keys {unknown}")
        try:
            budgets.append(BudgetSegment(
                name=b.get("name", f"segment-{i}"),
                from_step=b["from"], to_step=b["to"],
                budget_s=float(b["budget_s"]),
                functions=tuple(b.get("functions", []))))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{bwhere}: {exc}") from None
    for key in ("id", "black_model", "white_model"):
        if not isinstance(raw.get(key), str):
            raise SchemaError(f"{where}: {key} must be a string")
    return RefinementMap(
        id=raw["id"], black_model=raw["black_model"], white_model=raw["white_model"],
        step_map=tuple(step_map), budgets=tuple(budgets),
        end_to_end=raw.get("end_to_end"))


def load_traceability_file(path: str | Path) -> TraceabilityBundle:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, Mapping):
        raise SchemaError("traceability document must be a JSON object")
    unknown = [k for k in data if k not in _TRACE_KEYS]
    if unknown:
        raise SchemaError(f"traceability document: unknown keys {unknown}")

    findings: list[Finding] = []
    models: dict[str, EventChainModel] = {}
    for i, raw in enumerate(data.get("models", [])):
        model, model_findings = parse_model(raw)
        findings.extend(model_findings)
        models[model.id] = model
    for rel in data.get("model_files", []):
        if not isinstance(rel, str):
            raise SchemaError("model_files entries must be path strings")
        with open(path.parent / rel, encoding="utf-8") as fh:
            model, model_findings = parse_model(json.load(fh))
        findings.extend(model_findings)
        models[model.id] = model

    requirements = tuple(parse_requirement(raw, f"requirements[{i}]")
                         for i, raw in enumerate(data.get("requirements", [])))
    refinements = tuple(parse_refinement(raw, f"refinements[{i}]")
                        for i, raw in enumerate(data.get("refinements", [])))
    return TraceabilityBundle(requirements, refinements, models, findings)
