import json
import time

import pytest

from dssl import io
from dssl.cli import RunReport, main, render_table
from dssl.config import load_config

TINY = ["--override", "step1.hidden=16", "--override", "step1.latent_dim=4",
        "--override", "step1.epochs=1", "--override", "step2.hidden=16",
        "--override", "step2.latent_dim=4", "--override", "step2.epochs=1",
        "--override", "jointopt.hidden=16", "--override", "jointopt.latent_dim=4",
        "--override", "jointopt.specific_dim=4", "--override", "jointopt.epochs=1",
        "--override", "eval.decoder_epochs=2", "--override", "eval.decoder_hidden=16"]


def run(*argv):
    return main([str(a) for a in argv])


def last_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "400", "--seed", "7", "--out", str(d / "data")]) == 0
    return d


class TestSynth:
    def test_same_seed_same_hash(self, data_dir, tmp_path):
        assert run("synth", "--n", 400, "--seed", 7, "--out", tmp_path / "again") == 0
        assert io.content_hash(tmp_path / "again" / "dataset") == \
            io.content_hash(data_dir / "data" / "dataset")

    def test_resolved_config_written(self, data_dir):
        cfg = load_config(data_dir / "data" / "config.resolved.ini")
        assert cfg["data"].n == 400 and cfg["data"].seed == 7

    def test_too_small(self, tmp_path, capsys):
        assert run("synth", "--n", 10, "--out", tmp_path) == 2
        assert last_error(capsys)["error"] == "ConfigError"


class TestErrors:
    def test_step2_without_step1_checkpoint(self, data_dir, tmp_path, capsys):
        missing = tmp_path / "nowhere" / "step1"
        code = run("train", "step2", "--data", data_dir / "data" / "dataset",
                   "--step1", missing, "--out", tmp_path / "s2")
        assert code == 4
        err = last_error(capsys)
        assert str(missing) in err["message"] and err["exit_code"] == 4

    def test_unknown_key(self, data_dir, tmp_path, capsys):
        code = run("train", "step1", "--data", data_dir / "data" / "dataset", "--out", tmp_path,
                   "--override", "step1.nope=1")
        assert code == 2 and "nope" in last_error(capsys)["message"]

    def test_bad_subcommand(self, capsys):
        assert run("fly") == 2
        assert last_error(capsys)["error"] == "UsageError"

    def test_missing_dataset(self, tmp_path, capsys):
        assert run("train", "step1", "--data", tmp_path / "x", "--out", tmp_path) == 4

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, data_dir, tmp_path, capsys):
        code = run("train", "step1", "--data", data_dir / "data" / "dataset", "--out", tmp_path,
                   *TINY, "--override", "step1.lr=1e300", "--override", "step1.epochs=4")
        assert code == 3
        assert last_error(capsys)["error"] == "NumericError"


class TestPipeline:
    @pytest.fixture(scope="class")
    @staticmethod
    def runs(data_dir):
        ds = data_dir / "data" / "dataset"
        out = data_dir / "runs"
        assert main(["train", "step1", "--data", str(ds), "--out", str(out / "s1"),
                     "--override", "step1.beta=0.1", *TINY]) == 0
        assert main(["train", "step2", "--data", str(ds), "--step1", str(out / "s1" / "step1"),
                     "--out", str(out / "s2"), "--override", "step2.lam=0.01", *TINY]) == 0
        assert main(["eval", "probe", "--data", str(ds), "--step1", str(out / "s1" / "step1"),
                     "--step2", str(out / "s2" / "step2"), "--out", str(out / "probe"),
                     *TINY]) == 0
        return ds, out

    def test_probe_report(self, runs):
        _, out = runs
        rep = RunReport.read(out / "probe" / "report.json")
        assert set(rep.metrics) == {"zc", "zs1", "zs2"}
        assert set(rep.metrics["zc"]) == {"Yc", "Ys1", "Ys2"}
        assert RunReport.read(out / "s1" / "report.json").config["step1"]["beta"] == 0.1
        assert "dataset" in rep.artifacts and "step2" in rep.artifacts

    def test_report_round_trip(self, runs):
        _, out = runs
        text = (out / "probe" / "report.json").read_text()
        assert RunReport.from_json(text).to_json() == text

    def test_rerun_is_bit_identical(self, runs, tmp_path):
        ds, out = runs
        assert run("train", "step1", "--data", ds, "--out", tmp_path / "s1",
                   "--override", "step1.beta=0.1", *TINY) == 0
        for name in ("step1.json", "step1.bin", "report.json", "config.resolved.ini"):
            assert (tmp_path / "s1" / name).read_bytes() == (out / "s1" / name).read_bytes()

    def test_resolved_config_reproduces(self, runs, tmp_path):
        ds, out = runs
        assert run("train", "step1", "--data", ds, "--out", tmp_path / "s1",
                   "--config", out / "s1" / "config.resolved.ini") == 0
        assert io.content_hash(tmp_path / "s1" / "step1") == io.content_hash(out / "s1" / "step1")

    def test_retrieval_rg_jointopt_and_report(self, runs, tmp_path, capsys):
        ds, out = runs
        s1, s2 = out / "s1" / "step1", out / "s2" / "step2"
        assert run("eval", "retrieval", "--data", ds, "--step1", s1, "--out", tmp_path / "r") == 0
        assert run("eval", "rg", "--data", ds, "--step1", s1, "--step2", s2,
                   "--out", tmp_path / "rg", *TINY) == 0
        assert run("train", "jointopt", "--data", ds, "--out", tmp_path / "j", *TINY) == 0
        assert run("eval", "probe", "--data", ds, "--jointopt", tmp_path / "j" / "jointopt",
                   "--out", tmp_path / "jp", *TINY) == 0
        capsys.readouterr()
        assert run("report", tmp_path / "r", tmp_path / "rg" / "report.json") == 0
        table = capsys.readouterr().out
        assert "mrr" in table and "rg" in table
        rg = RunReport.read(tmp_path / "rg" / "report.json").metrics
        assert set(rg) >= {"r2_shared", "r2_specific", "r2_concat", "rg"}

    def test_seed_flag_overrides_everywhere(self, runs, tmp_path):
        ds, _ = runs
        assert run("train", "step1", "--data", ds, "--out", tmp_path / "s", "--seed", 5,
                   *TINY) == 0
        cfg = load_config(tmp_path / "s" / "config.resolved.ini")
        assert all(cfg[name].seed == 5 for name in cfg.sections)


def test_sweep_csv(data_dir, tmp_path):
    ds = data_dir / "data" / "dataset"
    assert run("sweep", "--data", ds, "--betas", "0,1", "--lambdas", "0.1", "--seeds", "0",
               "--workers", 1, "--out", tmp_path, *TINY) == 0
    rows = (tmp_path / "frontier.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * (2 + 2 * 1 * 2)
    assert (tmp_path / "runs" / "seed0_beta0.0" / "step1.json").exists()


class TestOracleCommands:
    def test_mni_json(self, capsys):
        assert run("oracle", "mni", "--joint", "1,1;1,5") == 0
        assert json.loads(capsys.readouterr().out)["tag"] == "UnattainableFullSupport"

    def test_curve_csv_from_file(self, tmp_path, capsys):
        f = tmp_path / "joint.csv"
        f.write_text("0.5,0\n0,0.5\n")
        assert run("oracle", "curve", "--joint-file", f, "--override", "oracle.betas=0.5,2",
                   "--override", "oracle.restarts=3", "--out", tmp_path / "o") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("beta,i_zx1,i_zx2")
        assert len(lines) == 3
        assert (tmp_path / "o" / "curve.csv").exists()

    def test_prop_check(self, capsys):
        assert run("oracle", "prop-check", "--joint", "3,1,1;1,3,1;1,1,3",
                   "--override", "oracle.n_encoders=10", "--override", "oracle.restarts=3") == 0
        assert json.loads(capsys.readouterr().out)["holds"] is True

    def test_bad_joint(self, capsys):
        assert run("oracle", "mni", "--joint", "1,x") == 2

    def test_missing_joint_file(self, tmp_path):
        assert run("oracle", "mni", "--joint-file", tmp_path / "none.csv") == 4


def test_render_table_alignment():
    reps = {"a": RunReport("x", {}, {"m": 1.0, "n": {"k": 2}}),
            "b": RunReport("x", {}, {"m": 0.5})}
    lines = render_table(reps).splitlines()
    assert lines[0].split() == ["metric", "a", "b"]
    assert lines[1].split() == ["m", "1.0000", "0.5000"]
    assert lines[2].split() == ["n.k", "2", "-"]


@pytest.mark.slow
def test_pipeline_smoke_under_five_minutes(tmp_path):
    t0 = time.perf_counter()
    assert run("synth", "--n", 2000, "--seed", 0, "--out", tmp_path / "d") == 0
    ds = tmp_path / "d" / "dataset"
    assert run("train", "step1", "--data", ds, "--out", tmp_path / "s1",
               "--override", "step1.beta=0.1") == 0
    assert run("train", "step2", "--data", ds, "--step1", tmp_path / "s1" / "step1",
               "--out", tmp_path / "s2", "--override", "step2.lam=0.01") == 0
    assert run("eval", "probe", "--data", ds, "--step1", tmp_path / "s1" / "step1",
               "--step2", tmp_path / "s2" / "step2", "--out", tmp_path / "p") == 0
    assert time.perf_counter() - t0 < 300
