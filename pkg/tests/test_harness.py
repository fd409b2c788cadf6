import csv

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from sewb import cli
from sewb.scenario import (
    BUNDLED,
    ScenarioError,
    apply_override,
    dump,
    load_scenario,
    normalize,
    parameter_hash,
    parse_assignment,
    random_field,
    read_raw,
)

BUNDLED_NAMES = sorted(p.stem for p in BUNDLED.glob("*.yaml"))


def write(tmp_path, raw, name="sc.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def short(name, horizon):
    return apply_override(read_raw(name), "horizon", horizon)


@pytest.mark.parametrize("name", BUNDLED_NAMES)
def test_bundled_scenarios_round_trip(name, capsys):
    data = normalize(read_raw(name))
    assert normalize(data) == data
    assert normalize(yaml.safe_load(dump(data))) == data
    assert cli.main(["validate", "--scenario", name]) == 0
    assert capsys.readouterr().out.strip() == f"{data['id']}: ok"


def test_bundled_list_covers_every_scenario():
    assert sorted(cli.read_list("all")) == [n for n in BUNDLED_NAMES]


def test_unknown_keys_rejected(tmp_path, capsys):
    for key, value in (("colour", "red"), ("controller.speed", 3), ("controller.safety.k_x", 1.0)):
        raw = apply_override(read_raw("straight"), key, value)
        with pytest.raises(ScenarioError, match="unknown keys"):
            normalize(raw)
        assert cli.main(["validate", "--scenario", write(tmp_path, raw)]) == 4
        assert "unknown keys" in capsys.readouterr().err


@pytest.mark.parametrize(
    "key,value",
    [
        ("dt", 0.0),
        ("horizon", -1.0),
        ("schema", "other/2"),
        ("controller.mode", "fast"),
        ("controller.k_sigma", 0.0),
        ("controller.safety.d_b", -0.1),
        ("goals", []),
        ("start.arm", [0.0, 1.0]),
    ],
)
def test_invalid_values_rejected(tmp_path, key, value):
    raw = apply_override(read_raw("straight"), key, value)
    assert cli.main(["validate", "--scenario", write(tmp_path, raw)]) == 4


def test_malformed_file_exits_4_without_outputs(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema: [unclosed\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--scenario", str(bad), "--out", str(out)]) == 4
    assert not out.exists()


def test_missing_scenario_exits_4():
    assert cli.main(["validate", "--scenario", "no_such_scenario"]) == 4


def test_parameter_hash_tracks_effective_parameters():
    raw = read_raw("pseudo_eq")
    h = parameter_hash(normalize(raw))
    assert parameter_hash(normalize(apply_override(raw, "description", "other words"))) == h
    assert parameter_hash(normalize(apply_override(raw, "output.trace", "/tmp/t.csv"))) == h
    # spelling out a default changes nothing
    assert parameter_hash(normalize(apply_override(raw, "d_b", 0.25))) == h
    assert parameter_hash(normalize(apply_override(raw, "d_b", 0.3))) != h
    assert parameter_hash(normalize(apply_override(raw, "controller.mode", "cbf-only"))) != h


def test_override_aliases_and_parsing():
    assert parse_assignment("d_b=0.3") == ("d_b", 0.3)
    assert parse_assignment("controller.mode=cbf-only") == ("controller.mode", "cbf-only")
    raw = apply_override(read_raw("straight"), "d_m", 0.2)
    assert raw["controller"]["safety"]["d_m"] == 0.2
    raw = apply_override(read_raw("pickplace"), "goals.0.xyz", [1.0, 2.0, 0.5])
    assert raw["goals"][0]["xyz"] == [1.0, 2.0, 0.5]
    with pytest.raises(ScenarioError):
        parse_assignment("novalue")


def test_min_gap_validation_and_effect():
    raw = read_raw("large_scene")
    with pytest.raises(ScenarioError):
        normalize(apply_override(raw, "random_obstacles.min_gap", -0.5))
    with pytest.raises(ScenarioError, match="no room"):
        random_field(normalize(apply_override(raw, "random_obstacles.min_gap", 50.0))["random_obstacles"], 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.8))
def test_random_field_respects_gap_and_keep_out(seed, gap):
    spec = normalize(read_raw("large_scene"))["random_obstacles"]
    spec = dict(spec, count=5, min_gap=gap)
    obs = random_field(spec, seed)
    assert obs == random_field(spec, seed)
    pts = [(np.array(o["motion"]["position"]), o["radius"]) for o in obs]
    for i, (p, r) in enumerate(pts):
        for lo_hi, v in zip((spec["x"], spec["y"], spec["z"]), p):
            assert lo_hi[0] <= v <= lo_hi[1]
        for k in spec["keep_out"]:
            assert np.hypot(*(p[:2] - k["center"])) >= k["radius"] + r
        for p2, r2 in pts[:i]:
            assert np.hypot(*(p[:2] - p2[:2])) >= gap + r + r2


def test_run_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--scenario", "pseudo_eq", "--mode", "cbf-only"]) == 2
    assert cli.main(["run", "--scenario", "pseudo_eq", "--mode", "sewb", "--out", str(tmp_path)]) == 0
    run_dir = tmp_path / "pseudo_eq_sewb"
    assert {p.name for p in run_dir.iterdir()} == {"trace.csv", "summary.txt", "timing.txt"}
    summary = dict(line.split(": ", 1) for line in (run_dir / "summary.txt").read_text().splitlines())
    assert summary["success"] == "True" and summary["exit_code"] == "0"
    # with the safety rows off the base drives into the obstacle
    assert cli.main(["run", "--scenario", "pseudo_eq", "--mode", "unconstrained"]) == 3
    capsys.readouterr()


def test_trace_header_is_fixed(tmp_path):
    raw = short("pole_single", 0.2)
    path = write(tmp_path, raw)
    for sub in ("a", "b"):
        cli.main(["run", "--scenario", path, "--out", str(tmp_path / sub)])
    tables = []
    for sub in ("a", "b"):
        with open(tmp_path / sub / "sc_default" / "trace.csv") as fh:
            rows = list(csv.reader(fh))
        clock = rows[0].index("solve_ms")  # the only wall-clock column
        tables.append([r[:clock] + r[clock + 1 :] for r in rows])
    assert tables[0] == tables[1]
    assert len(tables[0]) == 21


def test_empty_suite_exits_4(tmp_path):
    lst = tmp_path / "empty.txt"
    lst.write_text("# nothing here\n\n")
    assert cli.main(["suite", "--list", str(lst)]) == 4


def test_suite_rejects_bad_member_before_running(tmp_path):
    bad = apply_override(read_raw("straight"), "colour", "red")
    write(tmp_path, bad, "bad.yaml")
    lst = tmp_path / "list.txt"
    lst.write_text("straight\nbad.yaml\n")
    out = tmp_path / "out"
    assert cli.main(["suite", "--list", str(lst), "--out", str(out)]) == 4
    assert not out.exists()


def test_suite_sweep_is_deterministic(tmp_path, capsys):
    write(tmp_path, short("pole_single", 1.0), "p1.yaml")
    lst = tmp_path / "list.txt"
    lst.write_text("p1.yaml\n")
    tables = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code = cli.main(["suite", "--list", str(lst), "--sweep", "d_b+d_m=0.2,0.3", "--jobs", "1", "--out", str(out)])
        assert code in (0, 2)
        tables.append((out / "suite.csv").read_text())
    capsys.readouterr()
    assert tables[0] == tables[1]
    rows = tables[0].splitlines()
    assert rows[0].split(",") == cli.SUITE_COLUMNS
    assert [r.split(",")[2] for r in rows[1:]] == ["d_b+d_m=0.2", "d_b+d_m=0.3"]


def test_suite_propagates_max_exit_code(tmp_path, capsys):
    write(tmp_path, short("pseudo_eq", 8.0), "pe.yaml")
    write(tmp_path, short("straight", 0.3), "st.yaml")
    lst = tmp_path / "list.txt"
    lst.write_text("pe.yaml\nst.yaml\n")
    assert cli.main(["suite", "--list", str(lst), "--mode", "unconstrained", "--jobs", "1"]) == 3
    capsys.readouterr()


def test_load_scenario_mode_override():
    assert load_scenario("pseudo_eq", mode="cbf-only").mode == "cbf-only"
    assert load_scenario("pseudo_eq").mode == "sewb"
