import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepcontrol import ValidationError
from sepcontrol.cli import EXIT, emit_report, main, run_scenario
from sepcontrol.experiments import ExperimentReport
from sepcontrol.scenario import DEFAULTS, PRESETS, parse_scenario, preset, serialize_scenario

MINIMAL = """\
name = "tiny"
model.A = [[0.5]]
model.B1 = [[1.0]]
model.B2 = [[1.0, 0.0]]
model.C = [[1.0]]
model.D = [[0.0, 0.5]]
cost.Q = [[1.0]]
cost.R = [[1.0]]
cost.S = [[1.0]]
noise.kind = "wiener"
noise.q = 2
law.kind = "state_feedback"
"""


def _doc(**extra):
    return MINIMAL + "".join(f"{k} = {json.dumps(v)}\n" for k, v in extra.items())


def test_defaults_fill_missing_keys():
    s = parse_scenario(MINIMAL)
    assert s.grid.N == DEFAULTS["grid.N"] == 10_000
    assert s.M == 10_000 and s.seed == 0 and s.grid.T == 1.0
    assert s.experiments == ["estimate_cost"]


def test_comments_and_blank_lines_are_ignored():
    s = parse_scenario("# header\n\n" + MINIMAL.replace('law.kind = "state_feedback"',
                                                          'law.kind = "state_feedback"  # full information'))
    assert s.law_config()["kind"] == "state_feedback"


def test_indefinite_weight_names_the_key():
    with pytest.raises(ValidationError) as info:
        parse_scenario(MINIMAL.replace("cost.Q = [[1.0]]", "cost.Q = [[-1.0]]"))
    assert [k for k, _ in info.value.errors] == ["cost.Q"]


def test_all_errors_are_collected():
    bad = MINIMAL.replace("cost.R = [[1.0]]", "cost.R = [[0.0]]").replace('"wiener"', '"cauchy"')
    with pytest.raises(ValidationError) as info:
        parse_scenario(bad + "grid.N = 0\nmystery = 1\n")
    keys = {k for k, _ in info.value.errors}
    assert {"cost.R", "noise", "grid.N", "mystery"} <= keys


def test_unknown_experiment_rejected_before_running():
    with pytest.raises(ValidationError, match="unknown experiment"):
        parse_scenario(_doc(experiments=["estimate_cost", "bogus"]))


def test_step_change_needs_its_law():
    with pytest.raises(ValidationError, match="step_change"):
        parse_scenario(_doc(experiments=["step_change"]))


def test_shape_mismatch_names_the_matrix():
    with pytest.raises(ValidationError) as info:
        parse_scenario(MINIMAL.replace("model.C = [[1.0]]", "model.C = [[1.0, 2.0]]"))
    assert "model.C" in {k for k, _ in info.value.errors}


def test_schedule_forms():
    doc = MINIMAL.replace("model.A = [[0.5]]", "model.A.poly = [[[0.5]], [[-1.0]]]").replace(
        "cost.Q = [[1.0]]", "cost.Q.table.t = [0, 1]\ncost.Q.table.values = [[[1.0]], [[3.0]]]")
    s = parse_scenario(doc + "grid.N = 10\n")
    assert s.model.A.at(1.0)[0, 0] == pytest.approx(-0.5)
    assert s.cost.Q.at(0.5)[0, 0] == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10**6), st.integers(2, 10**6), st.integers(0, 2**31), st.floats(0.01, 50.0),
       st.sampled_from(["zero", "state_feedback", "separated_lqg"]))
def test_serialisation_round_trip(N, M, seed, T, kind):
    s = parse_scenario(_doc(**{"grid.N": N, "M": M, "seed": seed, "grid.T": T}).replace(
        '"state_feedback"', json.dumps(kind)))
    again = parse_scenario(serialize_scenario(s))
    assert again == s
    assert serialize_scenario(again) == serialize_scenario(s)


def test_presets_parse_with_documented_parameters():
    lqg = preset("lqg_scalar")
    assert lqg.model.A.at(0)[0, 0] == 0.5 and lqg.grid.N == 1000 and lqg.M == 10_000
    shir = preset("shiryaev_step")
    assert shir.grid.N == 10_000 and shir.law_config()["sigma"] == 1.0
    assert shir.cost.S[0, 0] == 0.0
    assert set(PRESETS) == {"lqg_scalar", "shiryaev_step"}


def _report(status="pass"):
    return ExperimentReport("demo", {"J": 1.25}, {"J": 0.01}, {"parts": [1, 2]}, status == "pass", status,
                            "|J - target| <= 3 SE", 200, (0, 199), wall_clock=3.7,
                            first_violation=None if status == "pass" else {"seed": 4})


def test_emit_is_deterministic_and_excludes_timing(tmp_path):
    a = emit_report(_report(), "full", tmp_path / "a.json", ["x.csv"])
    b = emit_report(_report(), "full", artifacts=["x.csv"])
    assert a == b == (tmp_path / "a.json").read_text()
    d = json.loads(a)
    assert "wall_clock" not in d
    assert d["estimates"]["J"] == 1.25 and d["standard_errors"]["J"] == 0.01
    assert d["rule"] and d["status"] == "pass" and d["artifacts"] == ["x.csv"]


def test_failing_summary_names_first_violation():
    d = json.loads(emit_report(_report("fail")))
    assert d["first_violation"] == {"seed": 4}
    assert set(d) >= {"estimates", "standard_errors", "rule", "status"}


def test_emit_to_unwritable_destination_raises(tmp_path):
    with pytest.raises(OSError):
        emit_report(_report(), destination=tmp_path / "missing" / "dir" / "r.json")


def _small(tmp_path, **extra):
    path = tmp_path / "s.cfg"
    path.write_text(_doc(**{"grid.N": 50, "M": 200, **extra}))
    return path


def test_run_passes_and_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(_small(tmp_path)), "--out", str(out)]) == EXIT["pass"]
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "pass"
    assert (out / "estimate_cost.json").exists() and (out / "timing.json").exists()
    assert (out / "trajectory_seed0.csv").exists()
    assert not (out / "FAILED").exists()
    assert parse_scenario((out / "scenario.cfg").read_text()).M == 200


def test_report_bytes_ignore_flag_order(tmp_path):
    cfg = str(_small(tmp_path))
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--scenario", cfg, "--seed", "3", "--paths", "150", "--out", str(a)])
    main(["run", "--out", str(b), "--paths", "150", "--scenario", cfg, "--seed", "3"])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "estimate_cost.json").read_bytes() == (b / "estimate_cost.json").read_bytes()


def test_two_paths_is_insufficient_power(tmp_path):
    assert main(["run", "--scenario", str(_small(tmp_path)), "--paths", "2", "--out", str(tmp_path / "o")]) == 2


def test_failed_run_leaves_marker(tmp_path):
    s = parse_scenario(_doc(**{"grid.N": 100, "M": 200, "experiments": ["ito_identity"],
                               "tolerances.ito_relative": 1e-15, "tolerances.ito_paths": 2}))
    assert run_scenario(s, tmp_path / "o") == EXIT["fail"]
    assert "ito_identity" in (tmp_path / "o" / "FAILED").read_text()


def test_invalid_scenario_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(MINIMAL.replace("cost.Q = [[1.0]]", "cost.Q = [[-1.0]]"))
    assert main(["validate", "--scenario", str(path)]) == EXIT["invalid"]
    assert "cost.Q" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "nope.cfg")]) == EXIT["invalid"]


def test_validate_and_list(capsys):
    assert main(["validate", "--preset", "lqg_scalar"]) == 0
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert "lqg_scalar" in out and "shiryaev_step" in out


def test_shiryaev_preset_small_run(tmp_path):
    code = main(["run", "--preset", "shiryaev_step", "--paths", "10", "--steps", "2000", "--out", str(tmp_path)])
    assert code == EXIT["pass"]
    rep = json.loads((tmp_path / "step_change.json").read_text())
    assert rep["estimates"]["innovation_identity_max"] <= 1e-12
    assert np.isfinite(rep["estimates"]["oracle_rms_max"])
