import csv
import json
import math
from pathlib import Path

import pytest

from cellwait import cli
from cellwait.analytic import CoverageMethod, coverage_closed_form
from cellwait.cli import (
    COVERAGE_COLUMNS,
    EE_COLUMNS,
    EXIT_CHECK_FAILED,
    EXIT_INVALID_INPUT,
    EXIT_OK,
    RATE_COLUMNS,
    StudyConfig,
    SweepSpec,
    SweepVariable,
    check_closed_vs_quadrature,
    check_taylor_root,
    cmd_coverage,
    cmd_ee,
    cmd_rate,
    cmd_validate,
    dbm_to_watts,
    load_config,
    main,
    parse_config,
    watts_to_dbm,
)
from cellwait.model import AccessScenario, ConfigError, NetworkConfig
from cellwait.optimize import OptimizationMethod, OptimizationReport, optimal_threshold_coverage
from cellwait.simulate import run_trials

PROJECTS = Path(__file__).resolve().parents[1] / "projects"


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_unit_conversions():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(23.0) == pytest.approx(0.19952623)
    assert watts_to_dbm(dbm_to_watts(-104.0)) == pytest.approx(-104.0)


def test_project_configs_load(coverage_study, ee_study):
    reference = load_config(PROJECTS / "reference" / "config.json")
    assert reference.network.p_tx == pytest.approx(NetworkConfig().p_tx)
    assert reference.network.sigma2 == pytest.approx(NetworkConfig().sigma2)
    assert coverage_study.network.closed_form_regime
    assert coverage_study.scenario == AccessScenario(r_th=10.0, w=10.0)
    assert ee_study.power.p_sleep == 4.3


def test_parse_config_ignores_comment_keys():
    study = parse_config({"_note": "anything", "p_A": 0.2, "p_I": 0.3, "p_S": 0.5, "sigma2_dbm": None})
    assert study.network.p_I == 0.3
    assert study.network.noise_free


def test_parse_config_rejects_both_power_forms():
    with pytest.raises(ConfigError) as excinfo:
        parse_config({"p_tx": 0.2, "p_tx_dbm": 23})
    assert excinfo.value.key == "p_tx_dbm"


def test_config_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "rho_f": 0.005,\n  "speed": 3\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 3
    assert str(excinfo.value).startswith("line 3:")

    path.write_text('{\n  "p_A": 0.5,\n  "p_I": 0.5,\n  "p_S": 0.5\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 2

    path.write_text('{\n  "rho_f": 0.005,\n  "mu": -1\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.key == "mu" and excinfo.value.line == 3

    path.write_text('{\n  "rho_f": 0.005\n  "mu": 1\n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 3


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


@pytest.mark.parametrize("text", [
    "gamma_db:0:10",
    "speed:0:1:3",
    "r_th:5:1:3",
    "r_th:0:1:1",
    "r_th:-1:1:3",
    "beta_w:0.1:1:3",
    "gamma_db:a:1:3",
])
def test_sweep_parse_errors(text):
    with pytest.raises(ConfigError):
        SweepSpec.parse(text)


def test_sweep_values():
    sweep = SweepSpec.parse("gamma_db:-10:20:31")
    assert sweep.variable is SweepVariable.GAMMA_DB
    values = sweep.values()
    assert len(values) == 31
    assert values[0] == -10.0 and values[-1] == 20.0


def test_coverage_closed_and_quadrature_agree(coverage_study):
    rows = cmd_coverage(coverage_study, SweepSpec.parse("gamma_db:-10:20:7"), method="all",
                        n_trials=200, seed=3)
    assert len(rows) == 7
    for row in rows:
        assert row["p_c_quadrature"] == pytest.approx(row["p_c_closed"], rel=1e-6)
        assert 0.0 <= row["p_c_mc"] <= 1.0
        assert row["mc_ci"] > 0
        assert row["r_th_m"] == 10.0


def test_coverage_skips_closed_form_outside_regime():
    rows = cmd_coverage(StudyConfig(), SweepSpec.parse("r_th:0:20:3"), method="quad")
    assert all(row["p_c_closed"] is None for row in rows)
    assert [row["r_th_m"] for row in rows] == [0.0, 10.0, 20.0]
    with pytest.raises(ConfigError):
        cmd_coverage(StudyConfig(), SweepSpec.parse("r_th:0:20:3"), method="closed")


def test_coverage_optimal_threshold_beats_fixed(coverage_study):
    sweep = SweepSpec.parse("gamma_db:-10:10:5")
    fixed = cmd_coverage(coverage_study, sweep, method="closed")
    best = cmd_coverage(coverage_study, sweep, method="closed", optimal=True)
    for a, b in zip(fixed, best):
        assert b["p_c_closed"] >= a["p_c_closed"] - 1e-9
    radii = [row["r_th_m"] for row in best]
    assert all(x >= y for x, y in zip(radii, radii[1:]))


def test_coverage_rejects_records_on_radius_sweep(coverage_study, tmp_path):
    with pytest.raises(ConfigError):
        cmd_coverage(coverage_study, SweepSpec.parse("r_th:0:20:3"), method="mc", n_trials=10,
                     records=tmp_path / "r.csv")


def test_coverage_writes_records(coverage_study, tmp_path):
    records = tmp_path / "records.csv"
    cmd_coverage(coverage_study, SweepSpec.parse("gamma_db:0:10:2"), method="mc", n_trials=30,
                 records=records)
    assert len(read_csv(records)) == 30


def test_rate_marks_one_optimum_per_budget(rate_study):
    rows = cmd_rate(rate_study, SweepSpec.parse("r_th:0:40:41"), w_values=(0.0, 10.0))
    assert len(rows) == 82
    for w in (0.0, 10.0):
        block = [row for row in rows if row["w_s"] == w]
        marked = [i for i, row in enumerate(block) if row["is_optimal"]]
        assert len(marked) == 1
        best = max(range(len(block)), key=lambda i: block[i]["capacity_bps_hz"])
        assert abs(marked[0] - best) <= 1
    zero = [row for row in rows if row["w_s"] == 0.0]
    assert zero[0]["is_optimal"] and zero[0]["optimal_r_th_m"] == 0.0
    assert max(r["capacity_bps_hz"] for r in zero) == pytest.approx(min(r["capacity_bps_hz"] for r in zero))


def test_rate_rejects_gamma_sweep(rate_study):
    with pytest.raises(ConfigError):
        cmd_rate(rate_study, SweepSpec.parse("gamma_db:0:10:3"))


def test_energy_efficiency_never_below_baseline(ee_study):
    rows = cmd_ee(ee_study, SweepSpec.parse("beta_w:0.1:0.9:5"), theta_ratios=(1.0, 8.0))
    assert set(rows[0]) == set(EE_COLUMNS)
    even = [row for row in rows if row["theta_ratio"] == 1.0]
    assert [round(row["beta_w"], 9) for row in even] == [0.5, 0.7, 0.9]
    for row in rows:
        assert row["nu_N"] >= 1.0 - 1e-6
        assert row["nu_bps_hz_w"] > 0


def test_energy_efficiency_target_at_idle_fraction_has_no_delay(ee_study):
    sweep = SweepSpec.parse("beta_w:0.1:0.5:3")
    assert sweep.values()[1] != 0.3
    rows = cmd_ee(ee_study, sweep, theta_ratios=(2.0,))
    assert len(rows) == 2
    assert rows[0]["w_s"] == 0.0 and rows[0]["nu_N"] == 1.0 and rows[0]["r_th_m"] == 0.0
    assert rows[0]["beta_w"] == pytest.approx(0.3)
    assert rows[1]["nu_N"] > 1.0


def test_main_coverage_csv(tmp_path):
    out = tmp_path / "coverage.csv"
    code = main(["coverage", "--config", str(PROJECTS / "coverage" / "config.json"), "--method", "closed",
                 "--sweep", "gamma_db:-10:20:31", "--out", str(out), "--quiet"])
    assert code == EXIT_OK
    rows = read_csv(out)
    assert list(rows[0]) == COVERAGE_COLUMNS
    assert len(rows) == 31
    values = [float(row["p_c_closed"]) for row in rows]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert rows[0]["p_c_quadrature"] == "" and rows[0]["p_c_mc"] == ""
    study = load_config(PROJECTS / "coverage" / "config.json")
    assert values[10] == pytest.approx(coverage_closed_form(study.network, study.scenario, 1.0).value)


def test_main_rate_json(tmp_path):
    out = tmp_path / "rate.json"
    code = main(["rate", "--config", str(PROJECTS / "rate" / "config.json"), "--sweep", "r_th:0:20:5",
                 "--w-values", "10", "--format", "json", "--out", str(out), "--quiet"])
    assert code == EXIT_OK
    rows = json.loads(out.read_text(encoding="utf-8"))
    assert len(rows) == 5
    assert set(rows[0]) == set(RATE_COLUMNS)
    assert sum(row["is_optimal"] for row in rows) == 1


def test_main_exit_codes(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text('{"p_A": 0.6, "p_I": 0.6, "p_S": 0.6}', encoding="utf-8")
    assert main(["coverage", "--config", str(bad), "--method", "quad", "--quiet"]) == EXIT_INVALID_INPUT
    assert main(["coverage", "--method", "closed", "--quiet"]) == EXIT_INVALID_INPUT
    assert main(["rate", "--epsilon", "0", "--quiet"]) == EXIT_INVALID_INPUT

    monkeypatch.setenv("CELLWAIT_SEED", "forty-two")
    assert main(["coverage", "--method", "mc", "--trials", "5", "--quiet"]) == EXIT_INVALID_INPUT
    monkeypatch.delenv("CELLWAIT_SEED")

    with pytest.raises(SystemExit) as excinfo:
        main(["coverage", "--sweep", "speed:0:1:3"])
    assert excinfo.value.code == 2

    def failing(*args, **kwargs):
        return {"passed": False, "failed": ["stub"], "checks": []}

    monkeypatch.setattr(cli, "cmd_validate", failing)
    out = tmp_path / "report.json"
    assert main(["validate", "--out", str(out), "--quiet"]) == EXIT_CHECK_FAILED
    assert json.loads(out.read_text(encoding="utf-8"))["failed"] == ["stub"]


def test_main_is_reproducible_across_workers(tmp_path):
    outputs = []
    for workers in ("1", "2"):
        out = tmp_path / f"mc_{workers}.json"
        code = main(["coverage", "--method", "mc", "--sweep", "gamma_db:-10:10:3", "--trials", "2500",
                     "--seed", "7", "--workers", workers, "--format", "json", "--out", str(out), "--quiet"])
        assert code == EXIT_OK
        outputs.append(out.read_text(encoding="utf-8"))
    assert outputs[0] == outputs[1]


@pytest.mark.slow
def test_validate_with_few_trials_is_inconclusive():
    report = cmd_validate(StudyConfig(), n_trials=100, seed=42)
    verdicts = {check["name"]: check["verdict"] for check in report["checks"]}
    for name, verdict in verdicts.items():
        if name.startswith(("mc_coverage", "event_probabilities", "distance_ks")):
            assert verdict == "inconclusive"
    assert verdicts["closed_form_vs_quadrature"] == "pass"
    assert verdicts["never_hurts"] == "pass"
    assert report["passed"], report["failed"]
    assert report["config"]["sigma2"] == 0.0
    assert math.isfinite(report["checks"][0]["max_relative_gap"])


@pytest.mark.slow
def test_validate_passes_on_reference(tmp_path):
    out = tmp_path / "report.json"
    code = main(["validate", "--config", str(PROJECTS / "reference" / "config.json"), "--trials", "100000",
                 "--seed", "42", "--workers", "2", "--out", str(out), "--quiet"])
    report = json.loads(out.read_text(encoding="utf-8"))
    assert code == EXIT_OK, report["failed"]
    assert all(check["verdict"] != "fail" for check in report["checks"])


def test_closed_vs_quadrature_without_idle_cells():
    no_idle = NetworkConfig(p_A=0.3, p_I=0.0, p_S=0.7, sigma2=0.0)
    assert coverage_closed_form(no_idle, AccessScenario(r_th=0.0, w=10.0), 1.0).value == 0.0
    check = check_closed_vs_quadrature(no_idle)
    assert check["verdict"] == "pass"
    assert math.isfinite(check["max_relative_gap"])


def test_taylor_root_gap_is_graded(noiseless):
    check = check_taylor_root(optimal_threshold_coverage(noiseless, 10.0, 1.0))
    assert check["verdict"] == "warn"
    assert check["taylor_gap"] == pytest.approx(0.0617, abs=5e-4)

    close = OptimizationReport(r_star=10.0, objective_value=0.5, method=OptimizationMethod.TAYLOR_QUADRATIC,
                               iterations=3, taylor_r_star=9.0, taylor_objective=0.495, grid_objective=0.5)
    assert check_taylor_root(close)["verdict"] == "pass"

    grid_only = OptimizationReport(r_star=10.0, objective_value=0.5, method=OptimizationMethod.GRID_ORACLE,
                                   iterations=3, grid_objective=0.5, taylor_valid=False)
    assert check_taylor_root(grid_only)["verdict"] == "warn"


def test_rate_rejects_closed_method(rate_study):
    with pytest.raises(ConfigError) as excinfo:
        cmd_rate(rate_study, SweepSpec.parse("r_th:0:20:3"), method="closed")
    assert excinfo.value.key == "method"
    with pytest.raises(SystemExit) as excinfo:
        main(["rate", "--method", "closed", "--quiet"])
    assert excinfo.value.code == EXIT_INVALID_INPUT


def test_coverage_monte_carlo_column_is_a_coverage_result(coverage_study):
    rows = cmd_coverage(coverage_study, SweepSpec.parse("gamma_db:0:10:2"), method="mc", n_trials=300, seed=3)
    batch = run_trials(coverage_study.network, coverage_study.scenario, 300, seed=3)
    result = batch.coverage_result(1.0)
    assert result.method is CoverageMethod.MONTE_CARLO
    assert rows[0]["p_c_mc"] == result.value == batch.coverage(1.0).mean
    assert rows[0]["mc_ci"] == result.error_estimate


@pytest.mark.slow
def test_validate_without_idle_cells_reports(tmp_path):
    config = tmp_path / "no_idle.json"
    config.write_text(json.dumps({"p_A": 0.3, "p_I": 0.0, "p_S": 0.7, "sigma2_dbm": None}), encoding="utf-8")
    out = tmp_path / "report.json"
    code = main(["validate", "--config", str(config), "--trials", "1000", "--out", str(out), "--quiet"])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    verdicts = {c["name"]: c["verdict"] for c in json.loads(out.read_text(encoding="utf-8"))["checks"]}
    assert verdicts["closed_form_vs_quadrature"] == "pass"
    assert verdicts["monte_carlo"] == "inconclusive"
    assert verdicts["capacity_gain_at_mean_sleep"] == "warn"
