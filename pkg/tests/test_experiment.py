from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from anacil.classifier import load_checkpoint
from anacil.cli import main
from anacil.errors import ConfigError
from anacil.experiment import (ExperimentConfig, load_config, parse_float, run_experiment,
                               run_order_robustness, run_single, run_tradeoff_sweep)
from anacil.metrics import strip_timing

REPORT_KEYS = {"config_digest", "seeds", "per_session", "avg_acc", "bwt", "fwt", "model_mb", "exemplar_mb"}
SESSION_KEYS = {"task_id", "classes", "train_time_s", "R_row"}


def small(output_dir, **dataset):
    cfg = ExperimentConfig()
    values = {"C": 10, "T": 5, "dim": 20, "n_per_class": 60, "separation": 10.0}
    values.update(dataset)
    return cfg.replace(dataset=values, run={"output_dir": str(output_dir)})


def test_parse_float_powers():
    assert parse_float("2^-30") == 2.0 ** -30
    assert parse_float("10**4") == 1e4
    assert parse_float("1e-2") == 0.01


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.solver.alpha == 0.01 and cfg.solver.rho_ridge == 2.0 ** -30
    assert cfg.consolidation.gamma == 1e4
    assert (cfg.features.h, cfg.features.n_groups, cfg.features.group_width) == (900, 30, 30)


def test_config_file_and_overrides(tmp_path, monkeypatch):
    monkeypatch.delenv("ANACIL_OUTPUT_DIR", raising=False)
    ini = tmp_path / "exp.ini"
    ini.write_text("[dataset]\nC = 6\nT = 3\n[solver]\nrho_ridge = 2^-20\n"
                   "[consolidation]\ngamma = 100\ngamma_overrides = 2:5, 3:1e6\nforget = 3:oldest=1\n"
                   "use_fisher = no\n[run]\nseeds = 4,5\n")
    cfg = load_config(ini, {"consolidation.gamma": "7"})
    assert (cfg.dataset.C, cfg.dataset.T) == (6, 3)
    assert cfg.solver.rho_ridge == 2.0 ** -20
    assert cfg.consolidation.gamma == 7.0 and cfg.consolidation.use_fisher is False
    assert cfg.gamma_overrides == {2: 5.0, 3: 1e6}
    assert cfg.forget_schedule == {3: 1}
    assert cfg.seeds == [4, 5]
    monkeypatch.setenv("ANACIL_OUTPUT_DIR", str(tmp_path / "env"))
    assert load_config(ini).run.output_dir == str(tmp_path / "env")
    assert load_config(ini, {"run.output_dir": "flag"}).run.output_dir == "flag"


@pytest.mark.parametrize("overrides", [
    {"dataset.T": "3"},
    {"solver.rho_ridge": "0"},
    {"consolidation.gamma": "-1"},
    {"consolidation.forget": "4:newest=1"},
    {"run.seeds": ""},
    {"features.connection": "sideways"},
    {"nosuch.key": "1"},
    {"dataset.bogus": "1"},
    {"dataset.C": "ten"},
])
def test_invalid_config(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_digest_ignores_output_dir():
    a = ExperimentConfig()
    assert a.digest() == a.replace(run={"output_dir": "elsewhere"}).digest()
    assert a.digest() != a.replace(consolidation={"gamma": 1.0}).digest()


def test_run_report_schema_and_files(tmp_path):
    cfg = small(tmp_path).replace(run={"seeds": "0,1"})
    res = run_experiment(cfg)
    for seed, rep in zip([0, 1], res["runs"]):
        assert REPORT_KEYS <= rep.keys()
        assert len(rep["per_session"]) == 5
        assert all(SESSION_KEYS <= s.keys() for s in rep["per_session"])
        assert [len(s["R_row"]) for s in rep["per_session"]] == [1, 2, 3, 4, 5]
        assert rep["bwt"] <= 0.02
        assert rep["exemplar_mb"] == 0.0
        on_disk = json.loads((tmp_path / f"run_seed{seed}.json").read_text())
        assert on_disk["config_digest"] == cfg.digest()
        rows = list(csv.reader((tmp_path / f"accuracy_seed{seed}.csv").open()))
        assert rows[0] == ["after_task"] + [f"task_{t}" for t in range(1, 6)]
        sol, stat, meta = load_checkpoint(tmp_path / f"checkpoint_seed{seed}.ckpt")
        assert sol.omega.shape == (20, 10) and stat.task_ids == [1, 2, 3, 4, 5]
        assert meta["order_seed"] == seed
    summary = json.loads((tmp_path / "summary.json").read_text())
    accs = [r["avg_acc"] for r in res["runs"]]
    assert summary["avg_acc_mean"] == pytest.approx(np.mean(accs))
    assert summary["avg_acc_std"] == pytest.approx(np.std(accs))


def test_low_gamma_forgets(tmp_path):
    cfg = small(tmp_path).replace(consolidation={"gamma": 1.0})
    rep, _ = run_single(cfg, 0)
    assert rep["bwt"] <= -0.5


def test_reports_deterministic(tmp_path):
    cfg = small(tmp_path / "a")
    run_experiment(cfg)
    run_experiment(cfg.replace(run={"output_dir": str(tmp_path / "b")}))
    a = json.loads((tmp_path / "a" / "run_seed0.json").read_text())
    b = json.loads((tmp_path / "b" / "run_seed0.json").read_text())
    assert json.dumps(strip_timing(a), sort_keys=True) == json.dumps(strip_timing(b), sort_keys=True)
    assert (tmp_path / "a" / "checkpoint_seed0.ckpt").read_bytes() == \
           (tmp_path / "b" / "checkpoint_seed0.ckpt").read_bytes()


def test_forget_schedule_applied(tmp_path):
    cfg = small(tmp_path).replace(consolidation={"forget": "4:oldest=1;5:tasks=3"})
    rep, learner = run_single(cfg, 0)
    assert rep["forgotten_tasks"] == [1, 3]
    assert learner.statistic.task_ids == [2, 4, 5]
    assert rep["per_session"][3]["forgotten_before"] == [1]


def test_capacity_evicts(tmp_path):
    rep, learner = run_single(small(tmp_path).replace(consolidation={"capacity": 2}), 0)
    assert learner.statistic.task_ids == [4, 5]
    assert rep["forgotten_tasks"] == [1, 2, 3]


def test_augmented_features_run(tmp_path):
    cfg = small(tmp_path, C=4, T=2).replace(
        features={"base": "frozen-affine", "h": 40, "n_groups": 2, "group_width": 5})
    rep, learner = run_single(cfg, 0)
    assert learner.solution.omega.shape == (50, 4)
    assert rep["model_params"] == 20 * 40 + 40 + 2 * (40 * 5 + 5) + 50 * 4


def test_tradeoff_sweep(tmp_path):
    cfg = small(tmp_path)
    rows = run_tradeoff_sweep(cfg, [1, 1e2, 1e4, 1e6])
    lines = (tmp_path / "tradeoff.csv").read_text().splitlines()
    assert lines[0] == "gamma,avg_acc_1,avg_acc_2,avg_acc_3,avg_acc_4,avg_acc_5,bwt,fwt"
    assert len(lines) == 5
    assert rows[0]["bwt"] < rows[2]["bwt"]
    assert len(run_tradeoff_sweep(cfg, [1e4])) == 1


def test_order_robustness(tmp_path):
    mean, std = run_order_robustness(small(tmp_path), 3)
    assert 0 <= mean <= 1 and std >= 0
    assert json.loads((tmp_path / "order_robustness.json").read_text())["order_seeds"] == [0, 1, 2]
    with pytest.raises(ConfigError):
        run_order_robustness(small(tmp_path), 1)


# -- command line -------------------------------------------------------------------

def test_cli_run_then_inspect(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "-C", "4", "-T", "2", "--set", "dataset.n_per_class=20", "-o", str(out)])
    capsys.readouterr()
    assert main(["inspect-checkpoint", str(out / "checkpoint_seed0.ckpt")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["trained_tasks"] == [1, 2] and len(info["records"]) == 2


def test_cli_flags_beat_config_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[dataset]\nC = 4\nT = 4\nn_per_class = 20\n[run]\nseeds = 9\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(ini), "-T", "2", "--seeds", "1", "-o", str(out)]) == 0
    rep = json.loads((out / "run_seed1.json").read_text())
    assert len(rep["per_session"]) == 2


def test_cli_gen_synthetic_then_run(tmp_path):
    feat = tmp_path / "feat"
    assert main(["gen-synthetic", "-C", "4", "--dim", "6", "--n-per-class", "20", "-o", str(feat)]) == 0
    assert main(["run", "--dataset", "features", "--train-path", str(feat / "train.feat"),
                 "--test-path", str(feat / "test.feat"), "-C", "4", "-T", "2", "-o", str(tmp_path / "r")]) == 0


def test_cli_sweep_and_orders(tmp_path):
    args = ["-C", "4", "-T", "2", "--set", "dataset.n_per_class=20", "-o", str(tmp_path)]
    assert main(["sweep-gamma", "--gammas", "1,1e4", *args]) == 0
    assert len((tmp_path / "tradeoff.csv").read_text().splitlines()) == 3
    assert main(["order-robustness", "--n-orders", "2", *args]) == 0
    assert main(["order-robustness", "--n-orders", "1", *args]) == 2


def test_cli_exit_codes(tmp_path):
    assert main(["run", "-T", "3", "-o", str(tmp_path)]) == 2
    assert main(["run", "--set", "bad", "-o", str(tmp_path)]) == 2
    assert main(["run", "--dataset", "idx", "--data-path", str(tmp_path / "none"), "-o", str(tmp_path)]) == 3
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!" * 4)
    assert main(["inspect-checkpoint", str(bad)]) == 3
    # a rank-one design with a vanishing ridge cannot be factorized
    (tmp_path / "nan.csv").write_text("1.0,0\n2.0,1\n")
    assert main(["run", "--dataset", "features", "--train-path", str(tmp_path / "nan.csv"),
                 "--test-path", str(tmp_path / "nan.csv"), "-C", "2", "-T", "1",
                 "--set", "solver.rho_ridge=1e-300", "--set", "features.base=frozen-affine",
                 "--set", "features.h=50", "--set", "features.base_activation=none",
                 "--set", "features.connection=base", "-o", str(tmp_path)]) == 4
