from pathlib import Path
from typing import Any, List, Optional, Sequence, Union

import structlog
import yaml
from pydantic import ValidationError

from src.core.config import Settings, settings as default_settings
from src.core.exceptions import BadBounds, ParseError, ScenarioValidationError
from src.schemas.scenario import MobilityMode, Scenario
from src.services.swarm import check_bounds

log = structlog.get_logger(__name__)


def _line_of(node: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    """Walks the composed YAML tree along a pydantic error location; returns a 1-based line."""
    line = node.start_mark.line + 1 if node is not None else None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == part), None)
            key = next((k for k, _ in node.value if k.value == part), None)
            if match is None:
                return line
            line = (key or match).start_mark.line + 1
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _fill_path_owners(raw: Any) -> None:
    for user in (raw.get("users") or []) if isinstance(raw, dict) else []:
        if isinstance(user, dict) and isinstance(user.get("path"), dict):
            user["path"].setdefault("user_id", user.get("user_id"))


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        tree = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ParseError(f"{source}: {exc.problem}", line=line) from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{source}: top level must be a mapping", line=1)

    _fill_path_owners(raw)
    try:
        return Scenario.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = tuple(first["loc"])
        field = ".".join(str(p) for p in loc)
        if first["type"] == "extra_forbidden":
            message = f"{source}: unknown field '{loc[-1]}'"
        else:
            message = f"{source}: {first['msg']}"
        raise ParseError(message, line=_line_of(tree, loc), field=field) from exc


def validate_scenario(scenario: Scenario) -> List[str]:
    """Semantic checks beyond the schema. Returns every violation, in a stable order."""
    violations: List[str] = []
    ids = [n.node_id for n in scenario.nodes]
    if len(set(ids)) != len(ids):
        violations.append("nodes: node ids unique")
    known = set(ids)
    if not any(not n.is_rendezvous for n in scenario.nodes):
        violations.append("nodes: at least one compute node")

    user_ids = [u.user_id for u in scenario.users]
    if len(set(user_ids)) != len(user_ids):
        violations.append("users: user ids unique")
    for i, user in enumerate(scenario.users):
        where = f"users[{i}]"
        if user.submit_at >= scenario.end_time:
            violations.append(f"{where}.submit_at: end_time > submit_at")
        path = user.path
        if path.mode == MobilityMode.SCRIPTED:
            if not path.waypoints:
                violations.append(f"{where}.path.waypoints: scripted path has waypoints")
            else:
                times = [w.at for w in path.waypoints]
                if any(b <= a for a, b in zip(times, times[1:])):
                    violations.append(f"{where}.path.waypoints: waypoint times strictly increasing")
                if times[0] > user.submit_at:
                    violations.append(f"{where}.path: path starts no later than submit_at")
                if not all(scenario.world.contains(w.position) for w in path.waypoints):
                    violations.append(f"{where}.path.waypoints: waypoints inside world bounds")
        elif path.random_waypoint is None:
            violations.append(f"{where}.path.random_waypoint: RandomWaypoint mode needs parameters")
        if not user.template.subtasks:
            violations.append(f"{where}.template.subtasks: subtasks non-empty")
        for rev in user.revisions:
            if not 0 <= rev <= scenario.end_time:
                violations.append(f"{where}.revisions: revision times within [0, end_time]")
                break

    for i, fault in enumerate(scenario.fault_injections):
        if fault.node_id not in known:
            violations.append(f"fault_injections[{i}].node_id: node '{fault.node_id}' resolves")
        if not 0 <= fault.at <= scenario.end_time:
            violations.append(f"fault_injections[{i}].at: fault time within [0, end_time]")

    try:
        check_bounds(scenario.knobs.normalization)
    except BadBounds as exc:
        violations.append(f"knobs.normalization: {exc}")
    return violations


def load_scenario(path: Union[str, Path], config: Optional[Settings] = None) -> Scenario:
    """Parses, validates and fills knob defaults. Raises ParseError or ScenarioValidationError."""
    path = Path(path)
    # 1. Read and parse; YAML and schema errors carry the offending line.
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario '{path}': {exc.strerror}") from exc
    scenario = parse_scenario(text, source=path.name)
    # 2. Cross-field checks, all reported at once
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioValidationError(violations)
    # 3. Unset knobs come from Settings (env / .env)
    resolved = scenario.model_copy(update={"knobs": scenario.knobs.resolved(config or default_settings)})
    log.info("scenario.loaded", name=resolved.name, nodes=len(resolved.nodes), users=len(resolved.users))
    return resolved
