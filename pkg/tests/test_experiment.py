import json
import os

import numpy as np
import pytest

from nuemt import (ConfigError, ExperimentConfig, PolicySpec,
                   RunningNormalizer, emit_plot_data, evaluate,
                   parameter_count, read_log, train)
from nuemt.cli import main as cli_main
from nuemt.policy import save_checkpoint

BASE = {
    "algorithm": "openai_es",
    "env_id": "linear_actuator",
    "K": 1,
    "H": 10,
    "N_total": 8,
    "sigma": 0.05,
    "alpha": 0.05,
    "budget": 200,
    "seeds": [1, 2],
    "hidden_sizes": [4, 4],
    "noise_table_size": 2 ** 16,
}


def _config(**overrides):
    return ExperimentConfig.from_dict({**BASE, **overrides})


def test_config_roundtrip():
    config = _config()
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="sigmma"):
        _config(sigmma=0.1)


@pytest.mark.parametrize("overrides,field", [
    ({"algorithm": "cma_es"}, "algorithm"),
    ({"algorithm": "openai_es", "K": 2, "N_total": 8}, "K"),
    ({"budget": 0}, "budget"),
    ({"seeds": []}, "seeds"),
    ({"N_total": 7}, "N_total"),
    ({"sigma": -1.0}, "sigma"),
    ({"fitness_shaping": "softmax"}, "fitness_shaping"),
    ({"eval_episodes": 0}, "eval_episodes"),
    ({"workers": 0}, "workers"),
    ({"H": 0}, "H"),
])
def test_config_validation_names_offending_field(overrides, field):
    with pytest.raises(ConfigError, match=field):
        _config(**overrides)


def test_config_missing_required_key():
    raw = dict(BASE)
    del raw["budget"]
    with pytest.raises(ConfigError, match="budget"):
        ExperimentConfig.from_dict(raw)


def test_config_type_check_rejects_float_for_int():
    with pytest.raises(ConfigError, match="N_total"):
        _config(N_total=8.5)


def test_h_beyond_env_cap_rejected(tmp_path):
    with pytest.raises(ConfigError, match="H"):
        train(_config(H=51), out_dir=str(tmp_path))


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    config = _config()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    s1 = train(config, out_dir=str(out1))
    s2 = train(config, out_dir=str(out2))
    for out in (out1, out2):
        for name in ("config.json", "summary.json", "log_seed1.csv",
                     "log_seed2.csv", "checkpoint_seed1.json",
                     "checkpoint_seed2.json"):
            assert (out / name).exists(), name
    assert (out1 / "log_seed1.csv").read_bytes() == \
           (out2 / "log_seed1.csv").read_bytes()
    assert s1 == s2

    # summary is recomputable from the raw rows
    rows = read_log(out1 / "log_seed1.csv")
    assert rows[-1].cum_timesteps >= config.budget
    assert s1["final_eval_returns"]["1"] == rows[-1].eval_return
    finals = [s1["final_eval_returns"][str(s)] for s in (1, 2)]
    assert s1["final_eval_mean"] == pytest.approx(np.mean(finals))
    assert s1["final_eval_std"] == pytest.approx(np.std(finals))


def test_train_tiny_budget_logs_single_iteration(tmp_path):
    config = _config(budget=1, seeds=[5])
    train(config, out_dir=str(tmp_path))
    assert len(read_log(tmp_path / "log_seed5.csv")) == 1


def test_train_nuemt_and_pel_artifacts(tmp_path):
    for algo, extra in (("nuemt", {"beta": 0.05}), ("pel", {})):
        config = _config(algorithm=algo, K=2, N_total=8, budget=60,
                         seeds=[3], **extra)
        out = tmp_path / algo
        summary = train(config, out_dir=str(out))
        rows = read_log(out / "log_seed3.csv")
        assert len(rows[0].w_target) == 2
        assert summary["K"] == 2
        assert summary["final_eval_returns"]["3"] == rows[-1].eval_return


def test_evaluate_zero_checkpoint_linear_actuator(tmp_path):
    spec = PolicySpec(1, 1, hidden_sizes=(4, 4))
    path = tmp_path / "zero.json"
    save_checkpoint(path, spec, np.zeros(parameter_count(spec)),
                    RunningNormalizer(1), extra={"env_id": "linear_actuator"})
    mean, returns = evaluate(path, episodes=2, horizon=3)
    assert returns == [-3.0, -3.0]
    assert mean == -3.0


def test_evaluate_rejects_zero_episodes(tmp_path):
    spec = PolicySpec(1, 1, hidden_sizes=(4,))
    path = tmp_path / "z.json"
    save_checkpoint(path, spec, np.zeros(parameter_count(spec)),
                    RunningNormalizer(1), extra={"env_id": "linear_actuator"})
    with pytest.raises(ConfigError, match="episodes"):
        evaluate(path, episodes=0)


def test_evaluate_dim_mismatch_names_dims(tmp_path):
    spec = PolicySpec(1, 1, hidden_sizes=(4,))
    path = tmp_path / "z.json"
    save_checkpoint(path, spec, np.zeros(parameter_count(spec)),
                    RunningNormalizer(1), extra={"env_id": "linear_actuator"})
    with pytest.raises(ConfigError, match=r"obs=1.*obs=5"):
        evaluate(path, env_id="corridor_dash", episodes=1)


def test_evaluate_deterministic(tmp_path):
    config = _config(seeds=[4], budget=50)
    train(config, out_dir=str(tmp_path))
    ckpt = tmp_path / "checkpoint_seed4.json"
    first = evaluate(ckpt, episodes=3, seed=7)
    second = evaluate(ckpt, episodes=3, seed=7)
    assert first == second


def _train_pair(tmp_path):
    es_dir = tmp_path / "es_run"
    nu_dir = tmp_path / "nu_run"
    train(_config(seeds=[1, 2], budget=100), out_dir=str(es_dir))
    train(_config(algorithm="nuemt", K=2, N_total=8, budget=100,
                  seeds=[1, 2]), out_dir=str(nu_dir))
    return es_dir, nu_dir


def test_emit_plot_data_columns_and_grid(tmp_path):
    es_dir, nu_dir = _train_pair(tmp_path)
    out_csv = tmp_path / "curves.csv"
    emit_plot_data([str(es_dir), str(nu_dir)], str(out_csv), points=9)
    with open(out_csv) as fh:
        cols = fh.readline().strip().split(",")
        data = np.array([[float(v) for v in line.split(",")]
                         for line in fh])
    assert cols[0] == "timesteps"
    for want in ("openai_es_eval_mean", "openai_es_eval_std",
                 "openai_es_train_mean", "nuemt_eval_mean",
                 "nuemt_w_1_mean", "nuemt_w_2_mean"):
        assert want in cols, want
    assert data.shape[0] == 9
    ts = data[:, 0]
    assert np.all(np.diff(ts) > 0)
    w1 = data[:, cols.index("nuemt_w_1_mean")]
    w2 = data[:, cols.index("nuemt_w_2_mean")]
    np.testing.assert_allclose(w1 + w2, 1.0, atol=1e-9)


def test_emit_plot_data_identical_seeds_zero_std(tmp_path):
    run = tmp_path / "run"
    train(_config(seeds=[1], budget=60), out_dir=str(run))
    # duplicate the log as a second seed: mean equals the run, std 0
    (run / "log_seed2.csv").write_bytes((run / "log_seed1.csv").read_bytes())
    out_csv = tmp_path / "c.csv"
    emit_plot_data([str(run)], str(out_csv), points=5)
    with open(out_csv) as fh:
        cols = fh.readline().strip().split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in fh])
    np.testing.assert_array_equal(data[:, cols.index("openai_es_eval_std")], 0.0)


def test_emit_plot_data_rejects_mixed_envs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    train(_config(seeds=[1], budget=30), out_dir=str(a))
    train(_config(seeds=[1], budget=30, env_id="pendulum_swingup", H=None,
                  N_total=8), out_dir=str(b))
    with pytest.raises(ConfigError, match="env"):
        emit_plot_data([str(a), str(b)], str(tmp_path / "c.csv"))


def test_cli_train_evaluate_plot_roundtrip(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({**BASE, "seeds": [1], "budget": 60}))
    out_dir = tmp_path / "run"
    assert cli_main(["train", "--config", str(cfg_path),
                     "--out", str(out_dir)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["algorithm"] == "openai_es"

    assert cli_main(["evaluate", "--checkpoint",
                     str(out_dir / "checkpoint_seed1.json"),
                     "--episodes", "2"]) == 0
    assert "mean return" in capsys.readouterr().out

    plot_path = tmp_path / "plot.csv"
    assert cli_main(["plot-data", "--runs", str(out_dir),
                     "--out", str(plot_path)]) == 0
    assert plot_path.exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({**BASE, "mystery_knob": 4}))
    assert cli_main(["train", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 1
    assert "mystery_knob" in capsys.readouterr().err

    assert cli_main(["train", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == 1


def test_cli_runtime_error_exit_code(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text("{not valid json")
    assert cli_main(["evaluate", "--checkpoint", str(broken)]) == 2


def test_train_seed_override(tmp_path):
    config = _config(seeds=[1, 2], budget=60)
    summary = train(config, out_dir=str(tmp_path), seeds=(9,))
    assert summary["seeds"] == [9]
    assert (tmp_path / "log_seed9.csv").exists()
    assert not (tmp_path / "log_seed1.csv").exists()
