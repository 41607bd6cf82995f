import json
import math

import numpy as np
import pytest

from nstepac import cli
from nstepac.diagnostics import read_csv
from nstepac.errors import ConfigError, EmptyPlotError, IncompleteError, ParseError
from nstepac.harness import (
    ExperimentConfig,
    RunSummary,
    compare,
    curve_band,
    emit_plots,
    format_table,
    load_config,
    recompute_max_avg_return,
    render_svg,
    run_experiment,
)
from nstepac.targets import TargetSpec

TINY = """
[experiment]
env_id = pendulum
total_steps = 400
seeds = 0,1
eval_every = 200
eval_episodes = 1
probe_size = 100
bias_probes = 2
bias_horizon = 20
gap_every = 50
gap_max_n = 3
online_offline_every = 100
online_offline_n = 3
online_offline_batch = 4

[agent]
target_spec = {spec}
hidden_sizes = 8
batch_size = 16
warmup_steps = 100
gamma = 0.9
"""


def tiny_config(tmp_path, spec="ddpg", name=None, **extra):
    path = tmp_path / f"{name or spec.replace(':', '_')}.ini"
    path.write_text(TINY.format(spec=spec))
    overrides = [f"output_dir={tmp_path / 'runs' / (name or spec.replace(':', '_'))}"]
    overrides += [f"{k}={v}" for k, v in extra.items()]
    return path, ExperimentConfig.from_file(path, overrides)


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("harness")
    dirs = []
    for spec in ("ddpg", "avg:3"):
        _, cfg = tiny_config(tmp, spec)
        run_experiment(cfg)
        dirs.append(cfg.resolved_output_dir())
    return tmp, dirs


# --- config -----------------------------------------------------------------------------


def test_config_parse_and_overrides(tmp_path):
    _, cfg = tiny_config(tmp_path, "avg:3", gamma="0.95", seeds="3,4,5", total_steps="1e3")
    assert cfg.agent.target_spec == TargetSpec.mix_avg(3)
    assert cfg.agent.gamma == 0.95 and cfg.agent.hidden_sizes == (8,)
    assert cfg.seeds == (3, 4, 5) and cfg.total_steps == 1000
    assert cfg.label == "MMDDPG(3-avg)"


def test_config_ini_roundtrip(tmp_path):
    _, cfg = tiny_config(tmp_path, "td3")
    back = ExperimentConfig.from_ini(cfg.to_ini())
    assert back == cfg


@pytest.mark.parametrize("override", ["bogus=1", "gamma=2", "seeds=1,1", "total_steps=abc", "env_id=walker",
                                      "target_spec=avg:0", "noequals"])
def test_config_errors(tmp_path, override):
    path, _ = tiny_config(tmp_path)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path, [override])


def test_config_unknown_section_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[extra]\na = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.ini")


def test_default_output_dir_uses_env_var(monkeypatch, tmp_path):
    monkeypatch.setenv("NSTEPAC_OUTDIR", str(tmp_path))
    cfg = ExperimentConfig(agent=ExperimentConfig().agent)
    cfg.agent.target_spec = TargetSpec.mix_avg(8)
    assert cfg.resolved_output_dir() == tmp_path / "pendulum__avg-8"


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    _, cfg = tiny_config(tmp_path, output_dir=str(blocker / "sub"))
    with pytest.raises(ConfigError):
        run_experiment(cfg)


# --- runs -----------------------------------------------------------------------------------


def test_run_outputs(two_runs):
    _, dirs = two_runs
    for d in dirs:
        assert (d / "config.ini").exists() and (d / "summary.json").exists()
        for seed in (0, 1):
            sd = d / f"seed_{seed}"
            evals = read_csv(sd / "eval.csv")
            assert [int(r["step"]) for r in evals] == [200, 400]
            assert all(math.isfinite(float(r["bias"])) for r in evals)
            gaps = read_csv(sd / "gaps.csv")
            assert len(gaps) == 6 and "gap_1_3" in gaps[0]
            assert len(read_csv(sd / "online_offline.csv")) == 3
            assert (sd / "agent.ckpt").exists()


def test_summary_consistent_with_csvs(two_runs):
    _, dirs = two_runs
    s = RunSummary.from_dir(dirs[1])
    assert s.variant == "MMDDPG(3-avg)" and s.seeds == [0, 1]
    m, sd = recompute_max_avg_return(dirs[1])
    assert s.max_avg_return == m and s.max_avg_return_std == sd
    assert s.counters["0"] == {"critic_updates": 300, "total_fp": 900, "total_bp": 300}
    assert "wall_clock" not in json.loads((dirs[1] / "summary.json").read_text())


def test_compare_marks_best(two_runs):
    _, dirs = two_runs
    rows = compare(dirs, "final_return")
    assert sum(r.best for r in rows) == 1
    best = max(rows, key=lambda r: r.mean)
    assert best.best
    bias_rows = compare(dirs, "final_bias")
    assert min(bias_rows, key=lambda r: abs(r.mean)).best
    table = format_table(rows, "final_return")
    assert "DDPG" in table and "MMDDPG(3-avg)" in table
    with pytest.raises(ConfigError):
        compare(dirs, "speed")


def test_incomplete_runs_reported(tmp_path):
    (tmp_path / "half").mkdir()
    with pytest.raises(IncompleteError):
        compare([tmp_path / "half"])
    with pytest.raises(IncompleteError):
        load_config(tmp_path / "half")


def test_plots(two_runs, tmp_path):
    _, dirs = two_runs
    paths = emit_plots(dirs, tmp_path / "plots")
    assert sorted(p.name for p in paths) == ["avg_q.svg", "gaps.svg", "returns.svg"]
    text = (tmp_path / "plots" / "returns.svg").read_text()
    assert text.startswith("<svg") and "MMDDPG(3-avg)" in text


def test_curve_band_and_empty_plots():
    c, h = curve_band([[1.0, 2.0], [3.0, 2.0]])
    assert c.tolist() == [2.0, 2.0] and h.tolist() == [0.5, 0.0]
    with pytest.raises(EmptyPlotError):
        curve_band([])
    with pytest.raises(EmptyPlotError):
        render_svg([], "t")
    with pytest.raises(EmptyPlotError):
        emit_plots([], "x")


# --- CLI --------------------------------------------------------------------------------------


def test_cli_train_and_outputs(tmp_path, capsys):
    path, _ = tiny_config(tmp_path)
    out = tmp_path / "cli_run"
    code = cli.main(["train", "--config", str(path), "--seed-list", "7", "--output-dir", str(out),
                     "--override", "total_steps=200", "--override", "online_offline_every=0"])
    assert code == 0
    assert (out / "seed_7" / "eval.csv").exists()
    assert "DDPG on pendulum" in capsys.readouterr().out


def test_cli_compare_diagnose_plot(two_runs, capsys, tmp_path):
    _, dirs = two_runs
    assert cli.main(["compare", "--runs", *map(str, dirs), "--metric", "max_avg_return"]) == 0
    assert "MMDDPG(3-avg)" in capsys.readouterr().out
    for suite in ("gaps", "bias", "online-offline"):
        assert cli.main(["diagnose", "--run", str(dirs[1]), "--suite", suite, "--steps", "120",
                         "--batch", "8", "--probes", "2"]) == 0
        rows = read_csv(dirs[1] / f"diagnose_{suite}.csv")
        assert {r["seed"] for r in rows} == {"0", "1"}
        assert all(np.isfinite(float(r["value"])) for r in rows)
    assert cli.main(["plot", "--runs", *map(str, dirs), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "returns.svg").exists()


def test_cli_errors_exit_2(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.ini")]) == 2
    assert cli.main(["compare", "--runs", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_selftest(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 4 and "[FAIL]" not in out


# --- spec examples ------------------------------------------------------------------------------


CHAIN = """
[experiment]
env_id = chain:L=20
total_steps = {steps}
seeds = 0
eval_every = 100
eval_episodes = 2
probe_size = 50
bias_probes = 2
bias_horizon = 30

[agent]
hidden_sizes = 8
batch_size = 8
warmup_steps = {warmup}
gamma = 0.9
"""


def chain_run(tmp_path, steps, warmup, name):
    cfg = ExperimentConfig.from_ini(CHAIN.format(steps=steps, warmup=warmup),
                                    [f"output_dir={tmp_path / name}"])
    return cfg, run_experiment(cfg)


def test_warmup_only_run_has_no_updates(tmp_path):
    _, s = chain_run(tmp_path, 100, 100, "warm")
    assert s.counters["0"]["critic_updates"] == 0 and s.counters["0"]["total_fp"] == 0
    assert s.eval_steps == [100]


def test_chain_evaluation_reaches_analytic_optimum(tmp_path):
    chain_run(tmp_path, 300, 100, "chain")
    rows = read_csv(tmp_path / "chain" / "seed_0" / "eval.csv")
    optimum = sum(0.9**k for k in range(20))
    for r in rows:
        assert float(r["eval_discounted_return"]) == pytest.approx(optimum, abs=1e-12)
        assert float(r["eval_return"]) == 20.0


def test_single_run_compare_is_best(tmp_path):
    chain_run(tmp_path, 100, 100, "one")
    rows = compare([tmp_path / "one"], "max_avg_return")
    assert len(rows) == 1 and rows[0].best


def test_constant_and_single_seed_bands():
    c, h = curve_band([[2.5] * 4] * 5)
    assert c.tolist() == [2.5] * 4 and h.tolist() == [0.0] * 4
    c, h = curve_band([[1.0, -3.0]])
    assert h.tolist() == [0.0, 0.0]


def test_malformed_eval_csv_is_parse_error(tmp_path):
    chain_run(tmp_path, 100, 100, "broken")
    (tmp_path / "broken" / "seed_0" / "eval.csv").write_text("# schema=eval version=1\nstep,eval_return\nx,1\n")
    with pytest.raises(ParseError):
        emit_plots([tmp_path / "broken"], tmp_path / "plots")
    assert not (tmp_path / "plots").exists()
