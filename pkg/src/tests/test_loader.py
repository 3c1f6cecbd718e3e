import pytest

from src.core.config import Settings
from src.core.exceptions import ParseError, ScenarioValidationError
from src.ingestion.loader import load_scenario, parse_scenario, validate_scenario
from src.schemas.scenario import MobilityMode

TINY = """\
name: tiny
world: {max_x: 100, max_y: 100}
end_time: 1000
nodes:
  - {node_id: A, position: [10, 10], coverage_radius: 50, cpu_capacity: 10}
knobs:
  t_prepar_ms: 300
"""

WITH_USER = """\
name: tiny
world: {{max_x: 100, max_y: 100}}
end_time: {end_time}
nodes:
  - {{node_id: A, position: [10, 10], coverage_radius: 50, cpu_capacity: 10}}
users:
  - user_id: u1
    submit_at: 1000
    path:
      waypoints:
        - {{x: 10, y: 10, at: 0}}
    template:
      qoe: {{max_latency: 5000}}
      time_budget: 10000
      subtasks:
        - {{work_units: 5}}
fault_injections:
  - {{at: 10, node_id: {fault_node}, action: NodeDown}}
"""


def write(tmp_path, text, name="tiny.scenario"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_casestudy_loads_with_defaults_filled(casestudy):
    assert casestudy.name == "casestudy"
    assert [n.node_id for n in casestudy.nodes] == ["A", "N", "M", "K", "R"]
    assert casestudy.knobs.t_prepare_ms == 300
    assert casestudy.knobs.staleness_max_ms == 2000
    assert casestudy.knobs.eta == pytest.approx(0.1)
    assert casestudy.users[0].path.user_id == "u1"
    assert casestudy.users[0].path.mode == MobilityMode.SCRIPTED


def test_unknown_field_reports_line_and_path():
    with pytest.raises(ParseError) as exc:
        parse_scenario(TINY)
    assert exc.value.field == "knobs.t_prepar_ms"
    assert exc.value.line == 7
    assert "unknown field 't_prepar_ms'" in str(exc.value)


def test_broken_yaml_is_a_parse_error():
    with pytest.raises(ParseError) as exc:
        parse_scenario("name: [unclosed\nworld: {}\n")
    assert exc.value.line is not None


def test_non_mapping_top_level():
    with pytest.raises(ParseError):
        parse_scenario("- just\n- a list\n")


def test_missing_file(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_scenario(tmp_path / "nope.scenario")
    assert "cannot read scenario" in str(exc.value)


def test_every_violation_is_reported(tmp_path):
    path = write(tmp_path, WITH_USER.format(end_time=1000, fault_node="Z"))
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(path)
    assert exc.value.violations == [
        "users[0].submit_at: end_time > submit_at",
        "fault_injections[0].node_id: node 'Z' resolves",
    ]


def test_valid_file_passes(tmp_path):
    scenario = parse_scenario(WITH_USER.format(end_time=5000, fault_node="A"))
    assert validate_scenario(scenario) == []


def test_knob_defaults_come_from_settings(tmp_path):
    path = write(tmp_path, WITH_USER.format(end_time=5000, fault_node="A"))
    scenario = load_scenario(path, config=Settings(staleness_max_ms=750, k_min=5))
    assert scenario.knobs.staleness_max_ms == 750
    assert scenario.knobs.k_min == 5
    assert scenario.knobs.t_prepare_ms is None
