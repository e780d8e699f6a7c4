"""Command line: exit codes, artifacts, reports and seeded reproducibility.

Everything runs in-process through ``cli.main`` on a reduced config; one
subprocess call checks the installed entry point.
"""
import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from cpbrl import cli
from cpbrl import experiment as ex
from cpbrl.dynamics import DT, TrueDynamics, load_batch
from cpbrl.policies import LinearPolicy, ZeroPolicy, load_policy, save_policy
from cpbrl.surrogate import policy_returns

SMALL = {
    "batch_size": 1500,
    "runs": 2,
    "model": {"epochs": 15, "holdout": 300},
    "nfq": {"iterations": 3, "epochs": 10},
    "psop": {"horizon": 10, "particles": 6, "iterations": 3},
    "psonn": {"particles": 6, "iterations": 4},
    "fpsrl": {"particles": 6, "iterations": 4},
    "gprl": {"population": 50, "generations": 10},
    "fgprl": {"population": 30, "generations": 3, "max_depth": 6},
}


def write_config(path, data=SMALL):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    """An output directory with batch and world model already built."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "small.yaml")
    out = root / "runs"
    assert run("gen-data", "--config", cfg, "--out", out) == 0
    assert run("train-model", "--config", cfg, "--out", out) == 0
    return cfg, out


# exit codes ---------------------------------------------------------------------
def test_usage_errors_exit_2(capsys):
    for argv in ([], ["bogus"], ["synthesize", "nosuch"], ["gen-data", "--n", "many"],
                 ["evaluate", "p.json", "--evaluator", "oracle"]):
        with pytest.raises(SystemExit) as info:
            run(*argv)
        assert info.value.code == 2, argv


def test_domain_errors_exit_1(tmp_path, capsys):
    out = tmp_path / "runs"
    assert run("evaluate", tmp_path / "missing.json", "--out", out) == 1
    assert run("synthesize", "psonn", "--out", out) == 1  # no model yet
    assert run("gen-data", "--n", "0", "--out", out) == 1
    assert run("gen-data", "--seed", "-3", "--out", out) == 1
    assert run("gen-data", "--config", tmp_path / "nope.yaml", "--out", out) == 1
    err = capsys.readouterr().err
    assert err.count("error:") == 5


def test_entry_point_runs(tmp_path):
    out = tmp_path / "runs"
    proc = subprocess.run([sys.executable, "-m", "cpbrl.cli", "gen-data", "--n", "5", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote 5 transitions" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "cpbrl.cli", "gen-data", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "--force" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "cpbrl.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2


# config ---------------------------------------------------------------------------
@pytest.mark.parametrize("data, where", [
    ({"gamma": 1.5}, "gamma"),
    ({"horizon": 0}, "horizon"),
    ({"runs": "ten"}, "runs"),
    ({"psonn": {"particles": 2.5}}, "psonn.particles"),
    ({"nfq": {"warm_start": 1}}, "nfq.warm_start"),
    ({"gprl": {"populaton": 10}}, "gprl.populaton"),
    ({"model": 3}, "model"),
    ({"test_states": "/does/not/exist.csv"}, "test_states"),
])
def test_config_errors_name_the_field(data, where):
    with pytest.raises(ex.ConfigError, match=where.replace(".", r"\.")):
        ex.config_from_dict(data)


def test_config_defaults_and_overrides(tmp_path):
    cfg = ex.load_config(write_config(tmp_path / "c.yaml", {"seed": 7, "lqr": {"r": 1}}))
    assert cfg.seed == 7 and cfg.lqr.r == 1.0 and isinstance(cfg.lqr.r, float)
    assert cfg.gamma == 0.97 and cfg.horizon == 100 and cfg.batch_size == 10_000
    assert cfg.gprl.population == 500 and cfg.fpsrl.rules == 2


def test_invalid_yaml_is_a_domain_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("gamma: [0.9\n")
    assert run("gen-data", "--config", p, "--out", tmp_path) == 1


def test_stage_seeds_are_distinct_and_stable():
    seeds = {ex.stage_seed(0, "synthesize", m, r) for m in ex.METHODS for r in range(10)}
    assert len(seeds) == 80
    assert ex.stage_seed(5, "gen-data") == ex.stage_seed(5, "gen-data")
    assert ex.stage_seed(5, "gen-data") != ex.stage_seed(6, "gen-data")


# gen-data / train-model -------------------------------------------------------------
def test_gen_data_single_row_and_histogram(tmp_path, capsys):
    out = tmp_path / "r"
    assert run("gen-data", "--n", "1", "--out", out) == 0
    with open(out / "batch.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2  # header plus one transition
    assert len(load_batch(out / "batch.csv")) == 1
    assert "reward classes" in capsys.readouterr().out


def test_gen_data_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        assert run("gen-data", "--n", "200", "--seed", "11", "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "batch.csv").read_bytes() == (tmp_path / "b" / "batch.csv").read_bytes()
    assert run("gen-data", "--n", "200", "--seed", "12", "--out", tmp_path / "c") == 0
    assert (tmp_path / "a" / "batch.csv").read_bytes() != (tmp_path / "c" / "batch.csv").read_bytes()


def test_gen_data_refuses_to_overwrite(tmp_path):
    assert run("gen-data", "--n", "3", "--out", tmp_path) == 0
    assert run("gen-data", "--n", "3", "--out", tmp_path) == 1
    assert run("gen-data", "--n", "4", "--out", tmp_path, "--force") == 0
    assert len(load_batch(tmp_path / "batch.csv")) == 4


def test_train_model_bundle_and_skip(prepared, capsys):
    cfg, out = prepared
    names = sorted(p.name for p in (out / "model").iterdir())
    assert names == ["delta_rho.json", "delta_rho_dot.json", "delta_theta.json", "delta_theta_dot.json",
                     "reward.json", "stats.json"]
    before = (out / "model" / "reward.json").read_bytes()
    capsys.readouterr()
    assert run("train-model", "--config", cfg, "--out", out) == 0
    assert "exists" in capsys.readouterr().out
    assert (out / "model" / "reward.json").read_bytes() == before
    stats = json.loads((out / "model" / "stats.json").read_text())
    assert "holdout" in json.dumps(stats)


def test_train_model_without_batch_fails(tmp_path):
    assert run("train-model", "--out", tmp_path) == 1


# synthesize / evaluate ----------------------------------------------------------------
def test_synthesize_lqr_and_evaluate_report(prepared, tmp_path, capsys):
    cfg, out = prepared
    assert run("synthesize", "lqr", "--config", cfg, "--out", out, "--force") == 0
    text = capsys.readouterr().out
    assert "DARE residual" in text and "lqr.json" in text
    report = tmp_path / "lqr.system.json"
    assert run("evaluate", out / "policies" / "lqr.json", "--config", cfg, "--out", out,
               "--report", report) == 0
    rep = json.loads(report.read_text())
    assert len(rep["per_state"]) == 100
    assert rep["penalty"] == pytest.approx(np.mean(rep["per_state"]), abs=1e-12)
    assert rep["evaluator"] == "system" and rep["T"] == 100 and rep["gamma"] == 0.97


def test_evaluate_zero_policy_matches_direct_simulation(prepared, tmp_path):
    cfg, out = prepared
    path = tmp_path / "zero.json"
    save_policy(ZeroPolicy(), path)
    assert run("evaluate", path, "--config", cfg, "--out", out) == 0
    rep = json.loads(path.with_suffix(".system.json").read_text())
    direct = policy_returns(TrueDynamics(DT), ZeroPolicy(), ex.load_states(None), 100, 0.97)
    assert np.allclose(rep["per_state"], -direct, atol=1e-12, rtol=0)


def test_evaluate_model_needs_model(tmp_path):
    path = tmp_path / "zero.json"
    save_policy(ZeroPolicy(), path)
    assert run("evaluate", path, "--evaluator", "model", "--out", tmp_path / "empty") == 1


def test_evaluate_rejects_corrupt_policy(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{"kind": "linear"}')
    assert run("evaluate", path, "--out", tmp_path) == 1


def test_synthesize_refuses_to_overwrite(prepared):
    cfg, out = prepared
    assert run("synthesize", "lqr", "--config", cfg, "--out", out, "--force") == 0
    assert run("synthesize", "lqr", "--config", cfg, "--out", out) == 1


def test_synthesize_gprl_writes_front(prepared):
    cfg, out = prepared
    assert run("synthesize", "gprl", "--config", cfg, "--out", out, "--force") == 0
    with open(out / "fronts" / "gprl" / "front.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    cx = [int(r["complexity"]) for r in rows]
    assert cx == sorted(cx)
    assert load_policy(out / "policies" / "gprl.json").kind == "tree"


def test_synthesize_nfq_writes_both_policies(prepared):
    cfg, out = prepared
    assert run("synthesize", "nfq", "--config", cfg, "--out", out, "--force") == 0
    sel = json.loads((out / "policies" / "nfq_selection.json").read_text())
    assert len(sel["penalties"]) == 3 and sel["last_index"] == 2
    assert sel["penalties"][sel["selected_index"]] == min(sel["penalties"])
    for name in ("nfq_last", "nfq_selected"):
        assert load_policy(out / "policies" / f"{name}.json").kind == "nfq"


def test_seeded_pipeline_is_bit_reproducible(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", {**SMALL, "batch_size": 800, "model": {"epochs": 5, "holdout": 100}})
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        for argv in (("gen-data",), ("train-model",), ("synthesize", "gprl")):
            assert run(*argv, "--config", cfg, "--seed", "3", "--out", out) == 0
        outputs.append([(out / rel).read_bytes() for rel in
                        ("batch.csv", "model/reward.json", "model/delta_theta.json", "model/stats.json",
                         "policies/gprl.json", "fronts/gprl/front.csv")])
    assert outputs[0] == outputs[1]


# compare ------------------------------------------------------------------------------
def test_compare_single_run_matches_synthesize_and_evaluate(prepared, tmp_path):
    cfg, out = prepared
    work = tmp_path / "cmp"
    work.mkdir()
    for f in ("batch.csv", "batch.json"):
        if (out / f).exists():
            (work / f).write_bytes((out / f).read_bytes())
    (work / "model").mkdir()
    for f in (out / "model").iterdir():
        (work / "model" / f.name).write_bytes(f.read_bytes())
    assert run("compare", "--methods", "lqr", "psonn", "--runs", "1", "--config", cfg, "--out", work) == 0
    with open(work / "compare.csv") as fh:
        table = {r["method"]: r for r in csv.DictReader(fh)}
    assert list(table) == ["LQR", "PSONN", "zero"]
    ws = ex.Workspace(work, ex.load_config(cfg))
    for method, label in (("lqr", "LQR"), ("psonn", "PSONN")):
        pol = ex.synthesize(method, ws, 0).policies[method]
        assert float(table[label]["model_mean"]) == ex.evaluate(pol, "model", ws)["penalty"]
        assert float(table[label]["system_mean"]) == ex.evaluate(pol, "system", ws)["penalty"]
        assert table[label]["model_se"] == "nan"


def test_compare_table_order_and_error_bars(prepared):
    ws = ex.Workspace(prepared[1], ex.load_config(prepared[0]), force=True)
    rows = ex.run_compare(ws, ["gprl", "lqr", "fgprl"], runs=2)
    assert [r.method for r in rows] == ["lqr", "fgprl", "gprl", "zero"]
    sums = {r.method: r.summary() for r in rows}
    assert sums["lqr"]["runs"] == 1 and np.isnan(sums["lqr"]["model_se"])
    assert sums["gprl"]["runs"] == 2 and np.isfinite(sums["gprl"]["model_se"])
    text = ex.format_table(rows)
    assert text.splitlines()[0].split() == ["LQR", "FGPRL", "GPRL", "zero"]
    assert "±" in text.splitlines()[1]


def test_compare_rejects_zero_runs(prepared):
    assert run("compare", "--runs", "0", "--config", prepared[0], "--out", prepared[1]) == 1


# rollout -------------------------------------------------------------------------------
def read_rollout(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_rollout_rejects_bad_arguments(tmp_path):
    path = tmp_path / "zero.json"
    save_policy(ZeroPolicy(), path)
    assert run("rollout", path, "--steps", "0", "--out", tmp_path) == 1
    assert run("rollout", path, "--start", "0.1,0", "--out", tmp_path) == 1
    assert run("rollout", path, "--setpoint", "soon", "--out", tmp_path) == 1


def test_rollout_failed_policy_flatlines(tmp_path):
    path = tmp_path / "push.json"
    save_policy(LinearPolicy([0.0, 0.0, 100.0, 0.0]), path)  # saturated push away from the centre
    assert run("rollout", path, "--steps", "300", "--start", "0,0,0.1,0", "--out", tmp_path) == 0
    rows = read_rollout(tmp_path / "rollout.csv")
    assert len(rows) == 300
    first = next(i for i, r in enumerate(rows) if float(r["reward"]) == -1.0)
    assert all(float(r["reward"]) == -1.0 for r in rows[first:])
    frozen = [tuple(r[k] for k in ("theta", "theta_dot", "rho", "rho_dot")) for r in rows[first + 1:]]
    assert len(set(frozen)) == 1


def test_rollout_setpoint_schedule(tmp_path):
    path = tmp_path / "zero.json"
    save_policy(ZeroPolicy(), path)
    assert run("rollout", path, "--steps", "10", "--setpoint", "3:0.5,6:0", "--out", tmp_path) == 0
    sp = [float(r["setpoint"]) for r in read_rollout(tmp_path / "rollout.csv")]
    assert sp == [0.0] * 3 + [0.5] * 3 + [0.0] * 4
