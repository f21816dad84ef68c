import json
from pathlib import Path

import numpy as np
import pytest

from hmflow.cli import main
from hmflow.fields import MapField
from hmflow.sources import Circle, constant_radius
from hmflow.targets import UnitSphere

PG_CONFIG = """\
[source]
family = circle
profile = constant
radius = 1.0
n_theta = 128
horizon = 0.5

[target]
family = circle

[terminal]
name = perturbed_geodesic
amplitude = 0.3

[run]
t0 = 0.5
dt = 2e-3
tol = 1e-10
master_seed = 42

[verify]
field_file = {field_file}
"""

FWD_CONFIG = """\
[source]
family = circle
profile = constant
n_theta = 64

[forward]
x0 = 0
horizon = 1.0
dt = 0.0078125
n_paths = 4000
"""


def write_config(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_json(path):
    return json.loads(Path(path).read_text())


def test_solve_writes_outputs_and_is_reproducible(tmp_path):
    cfg = write_config(tmp_path, PG_CONFIG.format(field_file="unused"))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("field.csv", "iterations.json", "summary.json",
                 "error_vs_reference.csv", "config.ini"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, f"{name} differs between reruns"
    summary = read_json(tmp_path / "a" / "summary.json")
    assert summary["converged"]
    assert summary["reference_sup_error"] <= 5e-3
    records = read_json(tmp_path / "a" / "iterations.json")
    assert records[0]["n"] == 1 and "wall_time" not in records[0]


def test_solve_field_file_loads_back(tmp_path):
    cfg = write_config(tmp_path, PG_CONFIG.format(field_file="unused"))
    main(["solve", "--config", cfg, "--out", str(tmp_path / "a")])
    src = Circle(constant_radius(1.0), n_theta=128, horizon=0.5)
    field = MapField.load(tmp_path / "a" / "field.csv", src, UnitSphere(1))
    assert field.n_t == 250 and field.horizon == 0.5
    assert np.max(np.abs(np.linalg.norm(field.values, axis=-1) - 1.0)) < 1e-2


def test_unknown_config_key_exits_2_and_names_it(tmp_path, capsys):
    text = PG_CONFIG.format(field_file="x").replace(
        "master_seed = 42", "master_seed = 42\nbogus_key = 1")
    cfg = write_config(tmp_path, text)
    code = main(["solve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "bogus_key" in err


def test_unknown_section_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "[nonsense]\na = 1\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "nonsense" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini"),
                 "--out", str(tmp_path / "o")]) == 2


def test_simulate_forward_moments_and_determinism(tmp_path):
    cfg = write_config(tmp_path, FWD_CONFIG)
    assert main(["simulate-forward", "--config", cfg,
                 "--out", str(tmp_path / "f1")]) == 0
    assert main(["simulate-forward", "--config", cfg,
                 "--out", str(tmp_path / "f2")]) == 0
    m = read_json(tmp_path / "f1" / "moments.json")
    assert m["pass"] and abs(m["zscore"]) <= 3.0
    assert (tmp_path / "f1" / "paths.csv").read_bytes() == \
        (tmp_path / "f2" / "paths.csv").read_bytes()
    assert (tmp_path / "f1" / "moments.json").read_bytes() == \
        (tmp_path / "f2" / "moments.json").read_bytes()
    lines = (tmp_path / "f1" / "paths.csv").read_text().splitlines()
    assert lines[0] == "path_id,step,time,theta"


def test_simulate_forward_seed_override_changes_sample(tmp_path):
    cfg = write_config(tmp_path, FWD_CONFIG)
    main(["simulate-forward", "--config", cfg, "--out", str(tmp_path / "s1"),
          "--seed", "1"])
    main(["simulate-forward", "--config", cfg, "--out", str(tmp_path / "s2"),
          "--seed", "2"])
    a = read_json(tmp_path / "s1" / "moments.json")
    b = read_json(tmp_path / "s2" / "moments.json")
    assert a["sample_mean"] != b["sample_mean"]
    assert a["master_seed"] == 1 and b["master_seed"] == 2


def test_verify_pass_and_failure_paths(tmp_path):
    cfg = write_config(tmp_path, PG_CONFIG.format(field_file="a/field.csv"))
    main(["solve", "--config", cfg, "--out", str(tmp_path / "a")])
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    verdict = read_json(tmp_path / "v" / "verdict.json")
    assert verdict["all_pass"]
    assert set(verdict["checks"]) == {"tension_residual", "stay_on_target",
                                      "weak_form_residual"}

    # tighten thresholds beyond reach: exit 4
    tight = PG_CONFIG.format(field_file="a/field.csv").replace(
        "field_file = a/field.csv", "field_file = a/field.csv\ntension_tol = 1e-12")
    cfg2 = write_config(tmp_path, tight, name="tight.ini")
    assert main(["verify", "--config", cfg2, "--out", str(tmp_path / "v2")]) == 4
    assert not read_json(tmp_path / "v2" / "verdict.json")["all_pass"]


def test_verify_corrupted_field_exits_2(tmp_path):
    cfg = write_config(tmp_path, PG_CONFIG.format(field_file="bad.csv"))
    (tmp_path / "bad.csv").write_text("not,a,field\n")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "v")]) == 2


def test_verify_missing_field_file_key_exits_2(tmp_path):
    cfg = write_config(tmp_path, FWD_CONFIG)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "v")]) == 2


def test_solve_backend_override_monte_carlo(tmp_path):
    text = PG_CONFIG.format(field_file="x").replace("t0 = 0.5", "t0 = 0.3") \
        .replace("dt = 2e-3", "dt = 5e-3") \
        .replace("name = perturbed_geodesic", "name = identity")
    text = text.replace("[target]\nfamily = circle", "[target]\nfamily = flat")
    cfg = write_config(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "mc"),
                 "--backend", "monte-carlo", "--seed", "5"]) == 0
    summary = read_json(tmp_path / "mc" / "summary.json")
    assert summary["backend"] == "monte_carlo"
    assert summary["master_seed"] == 5
    assert summary["converged"] and summary["iterations"] == 2


def test_solve_plots_flag(tmp_path):
    pytest.importorskip("matplotlib")
    text = PG_CONFIG.format(field_file="x").replace(
        "master_seed = 42", "master_seed = 42\nplots = true")
    cfg = write_config(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "plots.svg").exists()


def test_solve_no_contraction_exits_3(tmp_path, monkeypatch):
    import hmflow.picard as picard_mod
    monkeypatch.setattr(picard_mod, "_MIN_HORIZON", 0.45)
    text = PG_CONFIG.format(field_file="x").replace(
        "amplitude = 0.3", "amplitude = 0.8").replace(
        "name = perturbed_geodesic", "name = winding").replace(
        "master_seed = 42", "master_seed = 42\nmax_iter = 30")
    text = text.replace("[terminal]\nname = winding",
                        "[terminal]\nname = winding\nwinding = 3")
    text = text.replace("horizon = 0.5", "horizon = 5.0").replace(
        "t0 = 0.5", "t0 = 2.0").replace("dt = 2e-3", "dt = 5e-3")
    cfg = write_config(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "nc")]) == 3


def test_solve_emits_benchmark_quantities(tmp_path):
    cfg = write_config(tmp_path, PG_CONFIG.format(field_file="x"))
    main(["solve", "--config", cfg, "--out", str(tmp_path / "bq")])
    lines = (tmp_path / "bq" / "benchmark.csv").read_text().splitlines()
    assert lines[0] == "quantity,computed,reference,error"
    table = {row.split(",")[0]: row.split(",")[1:] for row in lines[1:]}
    assert float(table["field_sup_deviation"][0]) <= 5e-3
    assert float(table["c01_norm"][2]) <= 1e-2


def test_verify_field_left_tube_exits_4(tmp_path):
    # scale a valid field off the target: the tube check must surface as 4
    cfg = write_config(tmp_path, PG_CONFIG.format(field_file="scaled.csv"))
    main(["solve", "--config", cfg, "--out", str(tmp_path / "a")])
    src = Circle(constant_radius(1.0), n_theta=128, horizon=0.5)
    field = MapField.load(tmp_path / "a" / "field.csv", src, UnitSphere(1))
    field.values *= 1.5
    field.save(tmp_path / "scaled.csv")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "v")]) == 4
    verdict = json.loads((tmp_path / "v" / "verdict.json").read_text())
    assert not verdict["all_pass"]
    assert not verdict["checks"]["field_in_tube"]["pass"]


def test_verify_flat_target_stay_trivially_zero(tmp_path):
    text = PG_CONFIG.format(field_file="f/field.csv").replace(
        "family = circle\n\n[terminal]", "family = flat\n\n[terminal]").replace(
        "name = perturbed_geodesic", "name = identity")
    cfg = write_config(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "f")]) == 0
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "vf")]) == 0
    verdict = json.loads((tmp_path / "vf" / "verdict.json").read_text())
    assert verdict["checks"]["stay_on_target"]["value"] == 0.0


def test_solve_identity_single_iteration_flag(tmp_path):
    text = PG_CONFIG.format(field_file="x").replace(
        "name = perturbed_geodesic", "name = identity").replace(
        "t0 = 0.5", "t0 = 0.25").replace("dt = 2e-3", "dt = 1e-3").replace(
        "tol = 1e-10", "tol = 1e-4")
    cfg = write_config(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "one")]) == 0
    summary = json.loads((tmp_path / "one" / "summary.json").read_text())
    assert summary["converged"] and summary["iterations"] == 1
