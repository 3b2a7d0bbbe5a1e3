import csv
from dataclasses import replace

import pytest

from webgrid import cli, harness
from webgrid.harness import ExperimentDesign, cell_seed, emit_plots, emit_tables, parse_config, read_log, run_experiment
from webgrid.policies import PolicyKind
from webgrid.simcore import JobKind, SimConfig
from webgrid.stats import UnbalancedDesign
from webgrid.workload import FlashCrowd, RateSchedule, TimeOfDay

SMALL = ExperimentDesign(
    schedule=RateSchedule([20, 150, 400]),
    grid_sizes=(2, 4),
    replicates=2,
    sim=SimConfig(duration=2.0),
)


def read_data(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_default_design_cell_count():
    assert len(ExperimentDesign().cells()) == 3 * 18 * 3 * 5 == 810


def test_single_cell_design():
    design = ExperimentDesign(policies=(PolicyKind.LVS,), schedule=RateSchedule([10]), grid_sizes=(2,), replicates=1,
                              sim=SimConfig(duration=1.0))
    records = run_experiment(design)
    assert len(records) == 1 and records[0].ok


def test_record_count_and_order():
    records = run_experiment(SMALL)
    assert len(records) == 3 * 3 * 2 * 2
    assert [r.key for r in records] == sorted(r.key for r in records)
    assert all(r.ok for r in records)
    assert all(r.generated == r.completed + r.m + r.in_flight for r in records)


def test_cell_seed_stable_and_distinct():
    a = cell_seed(1, "lvs", 20.0, 2, 1)
    assert a == cell_seed(1, "lvs", 20.0, 2, 1)
    assert 0 <= a < 2**64
    others = {cell_seed(1, "lvs", 20.0, 2, 2), cell_seed(1, "mosix", 20.0, 2, 1), cell_seed(2, "lvs", 20.0, 2, 1),
              cell_seed(1, "lvs", 25.0, 2, 1), cell_seed(1, "lvs", 20.0, 4, 1)}
    assert a not in others and len(others) == 5


def test_adding_a_level_keeps_existing_cells():
    base = run_experiment(SMALL)
    wider = run_experiment(replace(SMALL, schedule=RateSchedule([10, 20, 150, 400])))
    by_value = {(r.policy, r.rate, r.grid_size, r.replicate): (r.seed, r.t, r.m) for r in wider}
    for r in base:
        assert by_value[(r.policy, r.rate, r.grid_size, r.replicate)] == (r.seed, r.t, r.m)


def test_log_is_reproducible(tmp_path):
    run_experiment(SMALL, tmp_path / "a")
    run_experiment(SMALL, tmp_path / "b")
    assert (tmp_path / "a" / "observations.csv").read_bytes() == (tmp_path / "b" / "observations.csv").read_bytes()


def test_parallel_matches_serial(tmp_path):
    serial = run_experiment(SMALL, tmp_path / "s", jobs=1)
    parallel = run_experiment(SMALL, tmp_path / "p", jobs=3)
    assert serial == parallel
    assert (tmp_path / "s" / "observations.csv").read_bytes() == (tmp_path / "p" / "observations.csv").read_bytes()


def test_resume_skips_logged_cells(tmp_path, monkeypatch):
    full = tmp_path / "full"
    run_experiment(SMALL, full)
    # simulate an interrupted run: keep the header and the first 10 records
    part = tmp_path / "part"
    part.mkdir()
    lines = (full / "observations.csv").read_text().splitlines(keepends=True)
    (part / "observations.csv").write_text("".join(lines[:12]))

    calls = []
    original = harness.simulate_cell

    def counting(design, cell):
        calls.append(cell.key)
        return original(design, cell)

    monkeypatch.setattr(harness, "simulate_cell", counting)
    run_experiment(SMALL, part)
    assert len(calls) == len(SMALL.cells()) - 10
    assert (part / "observations.csv").read_bytes() == (full / "observations.csv").read_bytes()


def test_failed_cell_is_recorded_and_others_complete(tmp_path, monkeypatch):
    original = harness.Engine.run

    def flaky(self):
        if self.config.n_nodes == 4 and self.policy.kind is PolicyKind.MOSIX:
            raise RuntimeError("boom")
        return original(self)

    monkeypatch.setattr(harness.Engine, "run", flaky)
    records = run_experiment(SMALL, tmp_path)
    failed = [r for r in records if not r.ok]
    assert len(failed) == 3 * 2
    assert all("boom" in r.reason for r in failed)
    assert len([r for r in records if r.ok]) == len(records) - 6
    with pytest.raises(UnbalancedDesign, match="missing cells"):
        emit_tables(records, tmp_path)

    # resuming retries only the failed cells
    monkeypatch.setattr(harness.Engine, "run", original)
    again = run_experiment(SMALL, tmp_path)
    assert all(r.ok for r in again)


def test_emit_tables(tmp_path):
    records = run_experiment(SMALL)
    paths = emit_tables(records, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["anova_m_simple.csv", "anova_m_simple.txt", "anova_t_simple.csv", "anova_t_simple.txt"]
    rows = {r["term"]: r for r in read_data(tmp_path / "anova_t_simple.csv")}
    # 3 policies, 3 rates, 2 sizes, 2 reps
    expected = {"R": 1, "x1": 2, "x2": 2, "x3": 1, "x1:x2": 4, "x1:x3": 2, "x2:x3": 2, "x1:x2:x3": 4,
                "Residual": 36 - 1 - 18}
    assert {k: int(v["df"]) for k, v in rows.items()} == expected
    text = (tmp_path / "anova_m_simple.txt").read_text()
    assert "missed requests m" in text and "simple jobs" in text
    assert "mean response time t" in (tmp_path / "anova_t_simple.txt").read_text()


def test_emit_plots(tmp_path):
    records = run_experiment(SMALL)
    paths = emit_plots(records, tmp_path)
    assert {p.suffix for p in paths} == {".csv", ".svg"}
    series = read_data(tmp_path / "fig_policies_t_simple.csv")
    assert {r["series"] for r in series} == {"kerrighed", "mosix", "lvs"}
    assert len(series) == 3 * 3
    panels = read_data(tmp_path / "fig_panels_m_simple.csv")
    assert {r["panel"] for r in panels} == {"kerrighed", "mosix", "lvs"}
    for policy in ("kerrighed", "mosix", "lvs"):
        assert {r["series"] for r in panels if r["panel"] == policy} == {"2", "4"}
    # averages over grid sizes and replicates
    lvs20 = [r.t for r in records if r.policy == "lvs" and r.rate == 20.0]
    point = next(r for r in series if r["series"] == "lvs" and float(r["rate"]) == 20.0)
    assert float(point["value"]) == pytest.approx(sum(lvs20) / len(lvs20))
    assert (tmp_path / "fig_policies_t_simple.svg").read_text().lstrip().startswith("<?xml")


def test_single_cell_plot(tmp_path):
    design = ExperimentDesign(policies=(PolicyKind.KERRIGHED,), schedule=RateSchedule([5]), grid_sizes=(2,),
                              replicates=1, sim=SimConfig(duration=1.0))
    emit_plots(run_experiment(design), tmp_path)
    rows = read_data(tmp_path / "fig_policies_t_simple.csv")
    assert len(rows) == 1 and rows[0]["series"] == "kerrighed"


# -- config ------------------------------------------------------------------------

def test_default_config_text_round_trips():
    assert parse_config(harness.DEFAULT_CONFIG) == ExperimentDesign()


def test_config_overrides():
    design = parse_config("""
[experiment]
policies = kerrighed lvs rr
rates = 5, 1, 5
grid_sizes = 3
replicates = 2
job_kind = complex
[sim]
queue_capacity = 7
miss_deadline = 2.5
[policy]
gossip_fanout = 2
[workload]
profile = flash
flash_multiplier = 4
warmup = 1
""")
    assert design.policies == (PolicyKind.KERRIGHED, PolicyKind.LVS, PolicyKind.ROUND_ROBIN)
    assert tuple(design.schedule) == (1.0, 5.0)
    assert design.grid_sizes == (3,)
    assert design.job_kind is JobKind.COMPLEX
    assert design.sim.queue_capacity == 7 and design.sim.miss_deadline == 2.5
    assert design.policy_params.gossip_fanout == 2
    assert design.profile == FlashCrowd(start=3.0, duration=2.0, multiplier=4.0)
    assert design.warmup == 1.0


def test_config_tod_profile():
    design = parse_config("[workload]\nprofile = tod\ntod_period = 4\ntod_amplitude = 0.3\n")
    assert design.profile == TimeOfDay(period=4.0, amplitude=0.3)


@pytest.mark.parametrize("text", [
    "[sim]\nspeed = 3\n",
    "[bogus]\nx = 1\n",
    "[experiment]\npolicies = fifo\n",
    "[experiment]\nrates = 0, 1\n",
    "[policy]\ngossip_fanout = 9\n",
    "[workload]\nprofile = spiky\n",
])
def test_config_errors(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_warmup_trims_early_requests():
    design = replace(SMALL, policies=(PolicyKind.LVS,), warmup=1.0)
    plain = {r.key: r for r in run_experiment(replace(design, warmup=0.0))}
    for r in run_experiment(design):
        assert r.generated < plain[r.key].generated


# -- cli ---------------------------------------------------------------------------

CONFIG = """
[experiment]
policies = kerrighed, mosix, lvs
rates = 10, 300
grid_sizes = 2, 4
replicates = 2
[sim]
duration = 1
"""


def test_cli_run_anova_plot(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(CONFIG)
    out = tmp_path / "results"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "7"]) == 0
    files = {p.name for p in out.iterdir()}
    assert {"observations.csv", "anova_t_simple.txt", "anova_m_simple.csv", "fig_policies_t_simple.svg"} <= files
    assert all(r.seed for r in read_log(out / "observations.csv"))

    tables = {name: (out / name).read_bytes() for name in files if name.startswith("anova_")}
    again = tmp_path / "again"
    assert cli.main(["anova", "--log", str(out / "observations.csv"), "--out", str(again)]) == 0
    for name, body in tables.items():
        assert (again / name).read_bytes() == body

    plots = tmp_path / "plots"
    assert cli.main(["plot", "--log", str(out / "observations.csv"), "--out", str(plots)]) == 0
    assert (plots / "fig_panels_t_simple.csv").read_bytes() == (out / "fig_panels_t_simple.csv").read_bytes()


def test_cli_seed_changes_log(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(CONFIG)
    cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1", "--no-plots"])
    cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2", "--no-plots"])
    assert (tmp_path / "a" / "observations.csv").read_bytes() != (tmp_path / "b" / "observations.csv").read_bytes()


def test_cli_validate(capsys):
    assert cli.main(["validate"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 32
    assert "validate: ok" in out


def test_cli_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--bogus"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code != 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("[sim]\nwarp = 9\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert "warp" in capsys.readouterr().err
    assert cli.main(["anova", "--log", str(tmp_path / "missing.csv")]) != 0
