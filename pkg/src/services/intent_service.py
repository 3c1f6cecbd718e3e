import itertools
from collections import defaultdict
from typing import Dict, List, Optional

from src.core.exceptions import TemplateEmpty
from src.schemas.handover import HandoverPackage
from src.schemas.intent import (
    ContextTag,
    Intent,
    IntentTemplate,
    SemanticTTL,
    StateSizeFn,
    SubTask,
    ValidationResult,
)


class IdAllocator:
    """Deterministic per-prefix counters; a run owns one so ids never depend on process state."""

    def __init__(self):
        self._counters: Dict[str, itertools.count] = defaultdict(lambda: itertools.count(1))

    def next(self, prefix: str) -> str:
        return f"{prefix}-{next(self._counters[prefix])}"


_default_ids = IdAllocator()


def _find_cycle(subtasks: List[SubTask]) -> bool:
    graph = {st.subtask_id: [d for d in st.depends_on] for st in subtasks}
    white, grey, black = 0, 1, 2
    color = {node: white for node in graph}

    def visit(node: str) -> bool:
        color[node] = grey
        for dep in graph.get(node, []):
            if dep not in color:
                continue
            if color[dep] == grey:
                return True
            if color[dep] == white and visit(dep):
                return True
        color[node] = black
        return False

    return any(color[node] == white and visit(node) for node in sorted(graph))


def validate_intent(intent: Intent) -> ValidationResult:
    violations: List[str] = []
    if not intent.subtasks:
        violations.append("subtasks: subtasks non-empty")
    if intent.submitted_at < 0:
        violations.append("submitted_at: submitted_at >= 0")

    ids = [st.subtask_id for st in intent.subtasks]
    if len(set(ids)) != len(ids):
        violations.append("subtasks: subtask ids unique")
    known = set(ids)
    for index, st in enumerate(intent.subtasks):
        if st.work_units < 1:
            violations.append(f"subtasks[{index}].work_units: work_units >= 1")
        if st.state_size_fn(0.0) < 0 or st.state_size_fn(1.0) < 0:
            violations.append(f"subtasks[{index}].state_size_fn: state_size_fn(p) >= 0 for p in [0,1]")
        for dep in st.depends_on:
            if dep not in known:
                violations.append(f"subtasks[{index}].depends_on: dependency '{dep}' resolves")
    if _find_cycle(intent.subtasks):
        violations.append("subtasks: dependency graph acyclic")
    return ValidationResult(violations=violations)


def topological_order(intent: Intent) -> List[SubTask]:
    """Kahn's algorithm, preferring the declared order among ready subtasks."""
    remaining = {st.subtask_id: set(d for d in st.depends_on) for st in intent.subtasks}
    ordered: List[SubTask] = []
    while remaining:
        ready = [st for st in intent.subtasks if st.subtask_id in remaining and not remaining[st.subtask_id]]
        if not ready:
            raise ValueError(f"intent '{intent.intent_id}' has a dependency cycle")
        chosen = ready[0]
        ordered.append(chosen)
        del remaining[chosen.subtask_id]
        for deps in remaining.values():
            deps.discard(chosen.subtask_id)
    return ordered


def package_size(pkg: HandoverPackage) -> int:
    return pkg.state_size + pkg.policy_size + len(pkg.link_params)


def decompose(
    template: IntentTemplate,
    user: str,
    now: int,
    ids: Optional[IdAllocator] = None,
    zone: Optional[str] = None,
    version: int = 1,
) -> Intent:
    if not template.subtasks:
        raise TemplateEmpty(f"template '{template.name}' names no subtasks")
    ids = ids or _default_ids
    intent_id = ids.next("intent")
    subtasks: List[SubTask] = []
    for index, part in enumerate(template.subtasks):
        depends_on = [subtasks[-1].subtask_id] if part.depends_on_previous and subtasks else []
        subtasks.append(
            SubTask(
                subtask_id=f"{intent_id}.st{index + 1}",
                kind=part.kind,
                work_units=part.work_units,
                input_size=part.input_size,
                state_size_fn=StateSizeFn(base=part.state_base, slope=part.state_slope),
                depends_on=depends_on,
            )
        )
    ttl = SemanticTTL(
        created_at=now,
        time_budget=template.time_budget,
        context_tag=ContextTag(zone=zone, intent_version=version),
        relevance_threshold=template.relevance_threshold,
    )
    return Intent(intent_id=intent_id, user_id=user, submitted_at=now, subtasks=subtasks, qoe=template.qoe, ttl=ttl)
