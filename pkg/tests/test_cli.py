import os

import pytest

from cemlab import cli

CONFIG = """
[dataset]
name = xor
n = 80
seed = 5

[experiment]
seeds = 0,1
cas = false
dump_activations = true

[model:fuzzy]
kind = fuzzy
emb_size = 4
hidden = 8,8
max_epochs = 3
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "exp.cfg"
    cfg.write_text(CONFIG)
    out = base / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


class TestRun:
    def test_outputs(self, run_dir):
        _, out = run_dir
        assert (out / "results.csv").exists()

    def test_multi_config_subdirs(self, tmp_path):
        a = tmp_path / "a.cfg"
        a.write_text(CONFIG)
        b = tmp_path / "b.cfg"
        b.write_text(CONFIG.replace("name = xor", "name = dot"))
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(a), str(b), "--out", str(out)]) == 0
        assert (out / "xor" / "results.csv").exists()
        assert (out / "dot" / "results.csv").exists()

    def test_env_override(self, tmp_path, monkeypatch):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(CONFIG)
        target = tmp_path / "envout"
        monkeypatch.setenv("CEMLAB_OUT", str(target))
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "ignored")]) == 0
        assert (target / "results.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_bad_config_returns_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[dataset]\nname = nope\n\n[model:m]\nkind = fuzzy\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestOfflineVerbs:
    def test_curve_from_checkpoints(self, run_dir):
        cfg, out = run_dir
        assert cli.main(["curve", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "curves.csv").exists()

    def test_metrics_over_dump(self, run_dir, capsys):
        _, out = run_dir
        dump = out / "dumps" / "fuzzy_0.acts"
        assert cli.main(["metrics", "--dump", str(dump), "--delta", "50"]) == 0
        assert "cas=" in capsys.readouterr().out

    def test_probe_from_checkpoints(self, run_dir):
        cfg, out = run_dir
        assert cli.main(["probe", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "probe.csv").exists()

    def test_missing_checkpoints_exit(self, tmp_path, run_dir):
        cfg, _ = run_dir
        with pytest.raises(SystemExit):
            cli.main(["curve", "--config", str(cfg), "--out", str(tmp_path / "empty")])


class TestSweep:
    def test_p_int_sweep(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(CONFIG.replace("kind = fuzzy", "kind = cem"))
        out = tmp_path / "sweep"
        rc = cli.main([
            "sweep", "--config", str(cfg), "--out", str(out),
            "--param", "p_int", "--values", "0.0,0.5",
        ])
        assert rc == 0
        assert (out / "p_int=0.0" / "results.csv").exists()
        assert (out / "p_int=0.5" / "results.csv").exists()

    def test_unknown_param_rejected(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(CONFIG)
        with pytest.raises(SystemExit):
            cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"),
                      "--param", "lr", "--values", "0.1"])
