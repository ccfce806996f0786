import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from hems_relax import cli
from hems_relax.batch import (
    read_schedule,
    read_schedule_controls,
    run_batch,
    solve_scenario,
    sweep_condition,
    write_schedule,
)
from hems_relax.config import ConfigError, ScenarioConfig, dump_config, load_config
from hems_relax.model import (
    BatteryParams,
    NonDynLoadParams,
    RegularizationParams,
    validate_scenario,
)
from hems_relax.profiles import (
    COLUMNS,
    ProfileError,
    ProfileTable,
    convert_ausgrid,
    load_profile_dir,
    load_profiles,
    synth_houses,
    write_houses,
    write_profiles,
)

BATTERY = BatteryParams(3.0, 3.0, 0.9, 0.9, 0.0, 10.0, 0.5, 0.1, 0.9)

CONFIG = """\
[horizon]
dt = 1.0
K = 24

[battery]
u_ch_max = 3
u_dch_max = 3
eta_ch = 0.9
eta_dch = 0.9
u_sd = 0
E = 10
x0 = 0.5
x_min = 0.1
x_max = 0.9

[tariff]
currency = AUD
"""


@pytest.fixture
def houses(tmp_path):
    d = tmp_path / "houses"
    write_houses(synth_houses(42, 5, 24), d)
    return d


@pytest.fixture
def config(tmp_path, houses):
    path = tmp_path / "scenario.ini"
    path.write_text(CONFIG + f"\n[data]\nprofiles = houses/house_000.csv\n")
    return path


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------


def test_profile_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    t = ProfileTable("h", *(rng.random(7) * 10 for _ in range(5)))
    back = load_profiles(write_profiles(t, tmp_path / "h.csv"))
    for name in ("d_kw", "r_kw", "p_buy", "p_sell", "theta_ex_c"):
        assert np.array_equal(getattr(back, name), getattr(t, name))
    assert back.house_id == "h" and back.K == 7


def test_missing_column_is_named(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("k,d_kw,r_kw,p_buy,theta_ex_c\n0,1,0,0.5,30\n")
    with pytest.raises(ProfileError, match="p_sell"):
        load_profiles(path)


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(COLUMNS) + "\n0,1,0,0.5,0.2,30\n1,x,0,0.5,0.2,30\n")
    with pytest.raises(ProfileError, match=r"bad.csv:3: non-numeric d_kw"):
        load_profiles(path)


def test_row_count_checked_against_k(houses):
    with pytest.raises(ProfileError, match="K=12"):
        load_profiles(houses / "house_000.csv", K=12)


def test_selling_above_buying_loads_but_fails_validation(tmp_path):
    path = tmp_path / "odd.csv"
    path.write_text(",".join(COLUMNS) + "\n0,1,0,0.1,0.2,30\n")
    table = load_profiles(path)
    s = ScenarioConfig(battery=BATTERY).scenario(table)
    assert not validate_scenario(s).passed
    assert solve_scenario(s).status == "Invalid"


def test_synthetic_houses_invariants():
    tables = synth_houses(42, 100, 24)
    assert len(tables) == 100
    for t in tables:
        assert t.K == 24
        assert np.all(t.p_buy >= t.p_sell) and np.all(t.p_sell > 0)
        assert np.all((t.d_kw >= 0.2) & (t.d_kw <= 3.0))
        assert np.all((t.r_kw >= 0.0) & (t.r_kw <= 4.0))
        assert np.all((t.theta_ex_c >= 22.0) & (t.theta_ex_c <= 35.0))
    assert len({t.house_id for t in tables}) == 100


def test_synthetic_houses_are_byte_deterministic(tmp_path):
    a = write_houses(synth_houses(42, 3), tmp_path / "a")
    b = write_houses(synth_houses(42, 3), tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    c = write_houses(synth_houses(43, 3), tmp_path / "c")
    assert a[0].read_bytes() != c[0].read_bytes()


def test_single_short_house():
    (t,) = synth_houses(1, 1, 4)
    assert t.K == 4
    with pytest.raises(ValueError):
        synth_houses(1, 0)


# --------------------------------------------------------------------------
# config and schedules
# --------------------------------------------------------------------------


def test_config_round_trip(tmp_path, config):
    cfg = load_config(config)
    assert cfg.battery == BATTERY and cfg.currency == "AUD" and cfg.K == 24
    cfg = replace(cfg, nd_load=NonDynLoadParams(0.1, 1.0, 10.0),
                  reg=RegularizationParams(alpha_ch=0.01),
                  tcl=dict(C=2.0, R=2.0, cop=3.0, theta_set=24.0, dead_band=2.0,
                           theta0=24.0, u_tcl_max=2.0))
    back = load_config(dump_config(cfg, tmp_path / "copy.ini"))
    assert back == cfg


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[battery]\nu_ch_max = 1\nu_dch_max = 1\nvoltage = 48\n")
    with pytest.raises(ConfigError, match="voltage"):
        load_config(path)


def test_schedule_round_trip(tmp_path, houses):
    s = ScenarioConfig(battery=BATTERY).scenario(load_profiles(houses / "house_001.csv"))
    out = solve_scenario(s)
    path = write_schedule(out.solution, tmp_path / "sched.csv")
    data = read_schedule_controls(path)
    assert np.array_equal(data["u_ch_kw"], out.solution.u_ch)
    assert np.array_equal(data["soc"], out.solution.x)
    assert data["theta_c"] is None
    back = read_schedule(path, s)
    assert np.array_equal(back.g, out.solution.g)
    assert back.objective == out.solution.objective


# --------------------------------------------------------------------------
# batches and sweeps
# --------------------------------------------------------------------------


def test_empty_batch(tmp_path):
    report = run_batch([], BATTERY, RegularizationParams(), tmp_path / "r.csv")
    assert report.rows == () and report.exit_code == 0
    assert (tmp_path / "r.csv").read_text().count("\n") == 1


def test_infeasible_house_is_isolated(houses):
    tables = load_profile_dir(houses)
    bad = {"house_002": {"nd_load": NonDynLoadParams(0.0, 1.0, 100.0)}}
    report = run_batch(tables, BATTERY, RegularizationParams(), overrides=bad)
    status = {r.house_id: r.status for r in report.rows}
    assert status.pop("house_002") == "PrimalInfeasible"
    assert set(status.values()) == {"Optimal"}
    assert report.exit_code == 0


def test_batch_output_is_deterministic(tmp_path, houses):
    tables = load_profile_dir(houses)
    run_batch(tables, BATTERY, RegularizationParams(), tmp_path / "a.csv")
    run_batch(tables[::-1], BATTERY, RegularizationParams(), tmp_path / "b.csv", jobs=3)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader((tmp_path / "a.csv").open()))
    assert [r["house_id"] for r in rows] == sorted(r["house_id"] for r in rows)
    assert len(list((tmp_path / "a_schedules").glob("*.csv"))) == 5


def test_report_aggregates(houses):
    report = run_batch(load_profile_dir(houses), BATTERY, RegularizationParams())
    assert report.certified == 5 and report.simultaneous_steps == 0
    assert report.max_margin == max(r.max_margin for r in report.rows)


def test_sweep_rows(houses):
    s = ScenarioConfig(battery=BATTERY).scenario(load_profiles(houses / "house_000.csv"))
    report = sweep_condition(s, [(0.9, 0.9), (1.0, 1.0)])
    a, b = report.rows
    assert a.theorem_holds and a.product == pytest.approx(0.81) and a.m_max <= a.eps_c
    assert not b.theorem_holds and b.status == "Optimal"
    assert report.violations == []
    with pytest.raises(ValueError):
        sweep_condition(s, [])


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


def test_cli_synth_and_batch(tmp_path, config, capsys):
    out = tmp_path / "synth"
    assert cli.main(["synth", "--seed", "7", "--houses", "3", "--k", "24", "--out", str(out)]) == 0
    assert len(list(out.glob("*.csv"))) == 3
    code = cli.main(["batch", "--scenario", str(config), "--profiles-dir", str(out),
                     "--out", str(tmp_path / "run.csv")])
    assert code == 0
    assert "certified: 3/3" in capsys.readouterr().out
    header = (tmp_path / "run.csv").read_text().splitlines()[0]
    assert header.endswith("currency") and "wall_time_ms" not in header


def test_cli_solve_then_certify(tmp_path, config, capsys):
    outdir = tmp_path / "solved"
    assert cli.main(["solve", "--scenario", str(config), "--out", str(outdir)]) == 0
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["status"] == "Optimal" and summary["certificate"]["passed"]
    assert summary["currency"] == "AUD"
    capsys.readouterr()
    assert cli.main(["certify", "--scenario", str(config),
                     "--solution", str(outdir / "schedule.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]


def test_cli_oracle(tmp_path, houses, capsys):
    (t,) = synth_houses(3, 1, 6)
    write_profiles(t, tmp_path / "short.csv")
    cfg = tmp_path / "short.ini"
    cfg.write_text(CONFIG.replace("K = 24", "K = 6") + "\n[data]\nprofiles = short.csv\n")
    assert cli.main(["oracle", "--scenario", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["patterns"] == 64 and abs(out["gap"]) <= 1e-6


def test_cli_sweep(tmp_path, config):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--scenario", str(config), "--eta-grid", "0.9:0.9,1:1",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["theorem_holds"] for r in rows] == ["true", "false"]


def test_cli_input_errors_exit_3(tmp_path, config):
    assert cli.main(["solve", "--scenario", str(tmp_path / "nope.ini"),
                     "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("k,d_kw\n0,1\n")
    assert cli.main(["solve", "--scenario", str(config), "--profiles", str(bad),
                     "--out", str(tmp_path)]) == 3


def test_cli_eta_grid_parsing():
    assert cli.parse_eta_grid("0.9:0.9, 1:1") == [(0.9, 0.9), (1.0, 1.0)]
    with pytest.raises(Exception):
        cli.parse_eta_grid("0.9")


AUSGRID = """\
Solar home electricity data,,,,
Customer,Generator Capacity,Postcode,Consumption Category,date,{slots}
1,3.78,2076,GC,1/07/2012,{gc}
1,3.78,2076,CL,1/07/2012,{cl}
1,3.78,2076,GG,1/07/2012,{gg}
2,1.62,2073,GC,1/07/2012,{gc}
"""


def test_convert_ausgrid(tmp_path):
    slots = ",".join(f"h{i}" for i in range(48))
    text = AUSGRID.format(slots=slots, gc=",".join(["0.25"] * 48),
                          cl=",".join(["0.1"] * 48), gg=",".join(["0.5"] * 48))
    src = tmp_path / "ausgrid.csv"
    src.write_text(text)
    paths = convert_ausgrid(src, tmp_path / "out")
    assert [p.name for p in paths] == ["1_20120701.csv", "2_20120701.csv"]
    t = load_profiles(paths[0], K=24)
    assert t.d_kw == pytest.approx(np.full(24, 0.7))
    assert t.r_kw == pytest.approx(np.full(24, 1.0))
    assert np.all(load_profiles(paths[1]).r_kw == 0)
    assert cli.main(["convert-ausgrid", "--in", str(src), "--out", str(tmp_path / "o2")]) == 0
