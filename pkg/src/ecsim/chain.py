"""Event-chain domain model: steps, causal dependencies, timing constraints.

An event-chain model is a DAG of named steps rooted at a unique start event
(the one step with no dependencies). Timing constraints bound the interval
between two steps. All types are immutable values; every operation here is a
pure function, so concurrent evaluation needs no coordination.

Synchronization and data-age constraints carry the same two-event slack form
as latency constraints; the distinction is informational until a richer
semantics is needed.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ModelInvalidError, SchemaError


class Viewpoint(enum.Enum):
    BLACK_BOX = "black_box"
    WHITE_BOX = "white_box"


class ConstraintKind(enum.Enum):
    LATENCY = "latency"
    SYNCHRONIZATION = "synchronization"
    PERIODICITY = "periodicity"
    DATA_AGE = "data_age"


class Direction(enum.Enum):
    MAX = "max"
    MIN = "min"


@dataclass(frozen=True)
class Finding:
    """One structural problem found during validation."""

    rule: str
    subjects: tuple[str, ...]
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.message}"


@dataclass(frozen=True)
class EventChainStep:
    """A named emitted event plus the step ids it causally depends on."""

    id: str
    name: str
    depends_on: tuple[str, ...] = ()


@dataclass(frozen=True)
class TimingConstraint:
    """A bound on the interval between two steps of one model.

    direction MAX means (t_to - t_from) <= bound_s, MIN means >= bound_s.
    Satisfaction is boundary-inclusive: zero slack satisfies the constraint.
    """

    id: str
    kind: ConstraintKind
    from_step: str
    to_step: str
    bound_s: float
    direction: Direction


@dataclass(frozen=True)
class EventChainModel:
    id: str
    name: str
    viewpoint: Viewpoint
    steps: tuple[EventChainStep, ...] = ()
    constraints: tuple[TimingConstraint, ...] = ()

    def step_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.steps)

    def steps_by_id(self) -> dict[str, EventChainStep]:
        return {s.id: s for s in self.steps}

    def constraints_by_id(self) -> dict[str, TimingConstraint]:
        return {c.id: c for c in self.constraints}


def _cycle_members(steps: Sequence[EventChainStep]) -> list[str]:
    """Ids of steps that sit on or depend into a dependency cycle.

    Peels away steps whose (known) dependencies are all resolved; whatever
    cannot be peeled is cyclic.
    """
    known = {s.id for s in steps}
    deps = {s.id: [d for d in s.depends_on if d in known] for s in steps}
    resolved: set[str] = set()
    changed = True
    while changed:
        changed = False
        for sid, ds in deps.items():
            if sid not in resolved and all(d in resolved for d in ds):
                resolved.add(sid)
                changed = True
    return sorted(known - resolved)


def transitive_dependencies(model: EventChainModel, step_id: str) -> set[str]:
    """All step ids reachable from step_id by following depends_on edges."""
    by_id = model.steps_by_id()
    seen: set[str] = set()
    stack = [d for d in by_id[step_id].depends_on if d in by_id]
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(d for d in by_id[cur].depends_on if d in by_id)
    return seen


def depends_transitively(model: EventChainModel, later: str, earlier: str) -> bool:
    return earlier in transitive_dependencies(model, later)


def validate_model(model: EventChainModel) -> list[Finding]:
    """Check every structural invariant; an empty report means valid.

    All problems are reported as findings, never raised. Idempotent and
    side-effect free.
    """
    findings: list[Finding] = []

    seen_steps: set[str] = set()
    for step in model.steps:
        if step.id in seen_steps:
            findings.append(Finding("duplicate-id", (step.id,),
                                    f"step id {step.id!r} appears more than once"))
        seen_steps.add(step.id)

    known = {s.id for s in model.steps}
    for step in model.steps:
        for dep in step.depends_on:
            if dep not in known:
                findings.append(Finding("unknown-dependency", (step.id, dep),
                                        f"step {step.id!r} depends on unknown step {dep!r}"))

    cyclic = _cycle_members(model.steps)
    if cyclic:
        findings.append(Finding("acyclic", tuple(cyclic),
                                f"dependency cycle involving steps {', '.join(cyclic)}"))

    roots = [s.id for s in model.steps if not s.depends_on]
    if len(roots) != 1:
        findings.append(Finding("unique-start-event", tuple(sorted(roots)),
                                f"expected exactly one dependency-free start event, found {len(roots)}"))
    elif not cyclic:
        # Every other step must be transitively dependent on the start event.
        start = roots[0]
        dependents: dict[str, list[str]] = {sid: [] for sid in known}
        for step in model.steps:
            for dep in step.depends_on:
                if dep in known:
                    dependents[dep].append(step.id)
        reached = {start}
        stack = [start]
        while stack:
            for nxt in dependents[stack.pop()]:
                if nxt not in reached:
                    reached.add(nxt)
                    stack.append(nxt)
        for sid in sorted(known - reached):
            findings.append(Finding("start-reachability", (sid, start),
                                    f"step {sid!r} is not transitively dependent on start event {start!r}"))

    seen_constraints: set[str] = set()
    for c in model.constraints:
        if c.id in seen_constraints:
            findings.append(Finding("duplicate-id", (c.id,),
                                    f"constraint id {c.id!r} appears more than once"))
        seen_constraints.add(c.id)
        for ref in (c.from_step, c.to_step):
            if ref not in known:
                findings.append(Finding("constraint-ref", (c.id, ref),
                                        f"constraint {c.id!r} references unknown step {ref!r}"))
        if c.bound_s < 0:
            findings.append(Finding("nonnegative-bound", (c.id,),
                                    f"constraint {c.id!r} has negative bound {c.bound_s}"))
        if c.kind is not ConstraintKind.PERIODICITY and c.from_step == c.to_step:
            findings.append(Finding("distinct-steps", (c.id, c.from_step),
                                    f"{c.kind.value} constraint {c.id!r} must reference two distinct steps"))

    return findings


def topological_order(model: EventChainModel) -> list[str]:
    """Dependency-respecting step order, ties broken by ascending id.

    Rejects models that fail validate_model.
    """
    findings = validate_model(model)
    if findings:
        raise ModelInvalidError(
            f"model {model.id!r} is not valid: " + "; ".join(str(f) for f in findings),
            findings)

    remaining = {s.id: set(s.depends_on) for s in model.steps}
    dependents: dict[str, list[str]] = {sid: [] for sid in remaining}
    for step in model.steps:
        for dep in step.depends_on:
            dependents[dep].append(step.id)

    ready = [sid for sid, deps in remaining.items() if not deps]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        sid = heapq.heappop(ready)
        order.append(sid)
        for nxt in dependents[sid]:
            remaining[nxt].discard(sid)
            if not remaining[nxt]:
                heapq.heappush(ready, nxt)
    return order


def constraint_slack(constraint: TimingConstraint, t_from: float, t_to: float) -> float:
    """Signed slack of a two-event constraint; nonnegative means satisfied.

    MAX direction: bound - (t_to - t_from). MIN direction: (t_to - t_from) - bound.
    Periodicity constraints cannot be evaluated from a single event pair.
    """
    if constraint.kind is ConstraintKind.PERIODICITY:
        raise ValueError(
            f"constraint {constraint.id!r} is periodic; evaluate it against a trace instead")
    if not (math.isfinite(t_from) and math.isfinite(t_to)):
        raise ValueError("timestamps must be finite")
    interval = t_to - t_from
    if constraint.direction is Direction.MAX:
        return constraint.bound_s - interval
    return interval - constraint.bound_s


# ---------------------------------------------------------------------------
# JSON model files
#
# Schema (all field names are part of the contract):
#   {"id", "name", "viewpoint": "black_box"|"white_box",
#    "steps": [{"id", "name", "depends_on"}],
#    "constraints": [{"id", "kind", "from", "to", "bound_s", "direction"}]}
# Unknown keys are reported as findings rather than raised.
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"id", "name", "viewpoint", "steps", "constraints"}
_STEP_KEYS = {"id", "name", "depends_on"}
_CONSTRAINT_KEYS = {"id", "kind", "from", "to", "bound_s", "direction"}


def _require(data: Mapping, key: str, kind, where: str):
    if key not in data:
        raise SchemaError(f"{where}: missing required key {key!r}")
    value = data[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: key {key!r} must be a number, got {type(value).__name__}")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{where}: key {key!r} must be {kind.__name__}, got {type(value).__name__}")
    return value


def _unknown_key_findings(data: Mapping, allowed: set[str], where: str) -> list[Finding]:
    return [Finding("unknown-key", (where, key), f"{where}: unknown key {key!r}")
            for key in data if key not in allowed]


def _enum_value(enum_cls, raw: str, where: str):
    try:
        return enum_cls(raw)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise SchemaError(f"{where}: {raw!r} is not one of: {valid}") from None


def parse_model(data: Mapping) -> tuple[EventChainModel, list[Finding]]:
    """Build a model from a JSON-shaped mapping, collecting unknown-key findings."""
    if not isinstance(data, Mapping):
        raise SchemaError("model document must be a JSON object")
    findings = _unknown_key_findings(data, _MODEL_KEYS, "model")

    model_id = _require(data, "id", str, "model")
    name = _require(data, "name", str, "model")
    viewpoint = _enum_value(Viewpoint, _require(data, "viewpoint", str, "model"), "model.viewpoint")

    steps = []
    for i, raw in enumerate(_require(data, "steps", list, "model")):
        where = f"steps[{i}]"
        if not isinstance(raw, Mapping):
            raise SchemaError(f"{where}: must be an object")
        findings.extend(_unknown_key_findings(raw, _STEP_KEYS, where))
        deps = raw.get("depends_on", [])
        if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
            raise SchemaError(f"{where}: depends_on must be a list of step ids")
        steps.append(EventChainStep(
            id=_require(raw, "id", str, where),
            name=_require(raw, "name", str, where),
            depends_on=tuple(deps)))

    constraints = []
    for i, raw in enumerate(data.get("constraints", [])):
        where = f"constraints[{i}]"
        if not isinstance(raw, Mapping):
            raise SchemaError(f"{where}: must be an object")
        findings.extend(_unknown_key_findings(raw, _CONSTRAINT_KEYS, where))
        constraints.append(TimingConstraint(
            id=_require(raw, "id", str, where),
            kind=_enum_value(ConstraintKind, _require(raw, "kind", str, where), f"{where}.kind"),
            from_step=_require(raw, "from", str, where),
            to_step=_require(raw, "to", str, where),
            bound_s=_require(raw, "bound_s", float, where),
            direction=_enum_value(Direction, _require(raw, "direction", str, where), f"{where}.direction")))

    model = EventChainModel(id=model_id, name=name, viewpoint=viewpoint,
                            steps=tuple(steps), constraints=tuple(constraints))
    return model, findings


def model_to_dict(model: EventChainModel) -> dict:
    return {
        "id": model.id,
        "name": model.name,
        "viewpoint": model.viewpoint.value,
        "steps": [{"id": s.id, "name": s.name, "depends_on": list(s.depends_on)}
                  for s in model.steps],
        "constraints": [{"id": c.id, "kind": c.kind.value, "from": c.from_step,
                         "to": c.to_step, "bound_s": c.bound_s, "direction": c.direction.value}
                        for c in model.constraints],
    }


def load_model_file(path: str | Path) -> tuple[EventChainModel, list[Finding]]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return parse_model(data)


def save_model_file(model: EventChainModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
