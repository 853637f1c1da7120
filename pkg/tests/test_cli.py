import csv
import dataclasses
import json

import numpy as np
import pytest

from cmrac import cli, config
from cmrac.sim import SummaryMetrics

SEC5 = config.preset_text("paper_sec5")


def write_cfg(tmp_path, text, name="case.yaml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def kv(path):
    out = {}
    for line in path.read_text().splitlines():
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestFeasibility:
    def test_preset(self, capsys, tmp_path):
        assert cli.main(["feasibility", "paper_sec5", "--out", str(tmp_path)]) == cli.EXIT_OK
        items = kv(tmp_path / "feasibility.txt")
        assert float(items["alpha"]) == pytest.approx(1.58, abs=0.05)
        assert float(items["beta"]) == pytest.approx(1.2, abs=0.05)
        assert items["c1_satisfied"] == "true"
        assert "alpha = " in capsys.readouterr().out

    def test_infeasible_u_bar(self, tmp_path):
        text = SEC5.replace("u_bar: 12.0", "u_bar: 11.0").replace("d_bar: 1.2", "d_bar: 1.0").replace("cap: 1.2", "cap: 1.0")
        assert cli.main(["feasibility", write_cfg(tmp_path, text), "--out", str(tmp_path)]) == cli.EXIT_OK
        items = kv(tmp_path / "feasibility.txt")
        assert items["c1_satisfied"] == "false"
        assert float(items["min_u_bar"]) == pytest.approx(11.5, abs=0.2)

    def test_degenerate_unbounded(self, tmp_path):
        cli.main(["feasibility", "degenerate", "--out", str(tmp_path)])
        rep = json.loads((tmp_path / "feasibility.json").read_text())
        assert rep["alpha"] < 0 and rep["max_x_bar"] == "inf"

    def test_region_files(self, tmp_path):
        args = ["feasibility", "paper_sec5", "--region", "--alpha", "1", "--beta", "1",
                "--u-range", "1:11", "--x-range", "1:6", "--resolution", "11", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        rows = read_csv(tmp_path / "region.csv")
        cell = {(float(r["x_bar"]), float(r["u_bar"])): r["feasible"] for r in rows}
        assert cell[(2.0, 3.0)] == "0" and cell[(5.0, 10.0)] == "1"
        assert (tmp_path / "region.svg").read_text().lstrip().startswith("<?xml")

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envout"))
        cli.main(["feasibility", "paper_sec5"])
        assert (tmp_path / "envout" / "feasibility.txt").exists()


class TestExitCodes:
    def test_malformed_config(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SEC5.replace("law: blf", "law: fancy"))
        assert cli.main(["simulate", path, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        err = capsys.readouterr().err
        assert "case.yaml:" in err and "law" in err

    def test_bad_arguments(self):
        assert cli.main(["simulate"]) == cli.EXIT_CONFIG
        assert cli.main(["sweep", "paper_sec5", "--axis", "nope=1:2:3"]) == cli.EXIT_CONFIG
        assert cli.main(["no-such-command"]) == cli.EXIT_CONFIG

    def test_infeasible_without_override(self, tmp_path):
        text = SEC5.replace("u_bar: 12.0", "u_bar: 11.0")
        path = write_cfg(tmp_path, text)
        assert cli.main(["simulate", path, "--out", str(tmp_path), "--t-end", "0.01"]) == cli.EXIT_INFEASIBLE
        # the manifest exists even though the run was refused
        assert (tmp_path / "manifest.json").exists()
        assert not (tmp_path / "trajectory_blf.csv").exists()
        args = ["simulate", path, "--out", str(tmp_path), "--t-end", "0.01", "--override-feasibility"]
        assert cli.main(args) == cli.EXIT_OK

    def test_classical_is_never_gated(self, tmp_path):
        path = write_cfg(tmp_path, SEC5.replace("u_bar: 12.0", "u_bar: 11.0"))
        args = ["simulate", path, "--law", "classical", "--out", str(tmp_path), "--t-end", "0.01"]
        assert cli.main(args) == cli.EXIT_OK

    def test_numerical_abort(self, tmp_path):
        text = SEC5.replace("      - []\n", "      - [{type: constant, value: 1.0}]\n").replace("onset: 20.0", "onset: 0.5")
        path = write_cfg(tmp_path, text)
        args = ["simulate", path, "--out", str(tmp_path), "--t-end", "2", "--engine", "numpy"]
        assert cli.main(args) == cli.EXIT_ABORT
        m = kv(tmp_path / "metrics_blf.txt")
        assert m["aborted"] == "true" and "barrier" in m["abort_reason"]
        assert len(read_csv(tmp_path / "trajectory_blf.csv")) > 0

    def test_violation_injected(self, tmp_path, monkeypatch, sec5):
        from cmrac.sim import run_scenario

        def fake_run(cfg, override, engine):
            res = run_scenario(cfg, override_feasibility=True, engine="numpy")
            bad = dataclasses.replace(res.metrics, state_constraint_ok=False)
            return res.trajectory, bad, ""

        monkeypatch.setattr(cli, "_run", fake_run)
        args = ["simulate", "paper_sec5", "--out", str(tmp_path), "--t-end", "0.01"]
        assert cli.main(args) == cli.EXIT_VIOLATION
        args = ["simulate", "paper_sec5", "--law", "classical", "--out", str(tmp_path), "--t-end", "0.01"]
        assert cli.main(args) == cli.EXIT_OK

    @pytest.mark.parametrize("field", ["state_constraint_ok", "input_constraint_ok", "omega_e_ok"])
    @pytest.mark.parametrize("law", ["blf", "classical"])
    def test_exit_mapping(self, field, law):
        ok = SummaryMetrics(1, 1, 1, 0.1, True, True, True, 0, 0, 0)
        bad = dataclasses.replace(ok, **{field: False})
        assert cli._exit_for(law, ok, "") == cli.EXIT_OK
        assert cli._exit_for(law, bad, "") == (cli.EXIT_VIOLATION if law == "blf" else cli.EXIT_OK)
        assert cli._exit_for(law, ok, "barrier abort") == cli.EXIT_ABORT


class TestSimulate:
    def test_outputs_and_manifest_round_trip(self, tmp_path, warm_kernel):
        args = ["simulate", "paper_sec5", "--out", str(tmp_path), "--t-end", "1", "--plots"]
        assert cli.main(args) == cli.EXIT_OK
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config_digest"] == config.digest_text(SEC5)
        assert man["command"] == "simulate" and man["law"] == "blf"
        sc = cli.load_manifest_scenario(tmp_path / "manifest.json")
        assert sc.to_dict() == man["resolved_config"]
        assert sc.t_end == 1.0
        rows = read_csv(tmp_path / "trajectory_blf.csv")
        assert list(rows[0])[:2] == ["t", "x_1"]
        assert float(rows[-1]["t"]) == pytest.approx(1.0)
        m = json.loads((tmp_path / "metrics_blf.json").read_text())
        assert m["state_constraint_ok"] is True and m["max_u_norm"] <= 12
        assert (tmp_path / "norms_blf.svg").exists()

    def test_manifest_written_before_simulation(self, tmp_path, monkeypatch):
        seen = {}

        def fake_run(cfg, override, engine):
            seen["manifest"] = (tmp_path / "manifest.json").exists()
            raise ValueError("stop here")

        monkeypatch.setattr(cli, "_run", fake_run)
        assert cli.main(["simulate", "paper_sec5", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert seen["manifest"]

    def test_plots_are_byte_identical(self, tmp_path, warm_kernel):
        for d in ("a", "b"):
            cli.main(["simulate", "paper_sec5", "--out", str(tmp_path / d), "--t-end", "0.5", "--plots"])
        a = (tmp_path / "a" / "norms_blf.svg").read_bytes()
        b = (tmp_path / "b" / "norms_blf.svg").read_bytes()
        assert a == b and b"<svg" in a


class TestCompare:
    def test_preset_table(self, tmp_path, warm_kernel):
        assert cli.main(["compare", "paper_sec5", "--out", str(tmp_path), "--plots"]) == cli.EXIT_OK
        rows = {r["law"]: r for r in read_csv(tmp_path / "compare.csv")}
        assert float(rows["blf"]["max_x_norm"]) < 6.5
        assert float(rows["classical"]["max_x_norm"]) > 6.5
        table = (tmp_path / "compare_table.txt").read_text()
        assert "blf" in table and "classical" in table
        assert (tmp_path / "compare.svg").exists()
        header = read_csv(tmp_path / "compare_trajectories.csv")[0]
        assert any(k.startswith("blf") for k in header) and any(k.startswith("classical") for k in header)

    def test_no_disturbance_note(self, tmp_path, warm_kernel):
        assert cli.main(["compare", "paper_sec5_nodist", "--out", str(tmp_path), "--t-end", "5"]) == cli.EXIT_OK
        assert "disturbance" in (tmp_path / "compare_table.txt").read_text()

    def test_deterministic(self, tmp_path, warm_kernel):
        for d in ("a", "b"):
            cli.main(["compare", "paper_sec5", "--out", str(tmp_path / d), "--t-end", "2"])
        for f in ("compare.csv", "compare_trajectories.csv", "trajectory_blf.csv", "trajectory_classical.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestSweep:
    def test_region_sweep(self, tmp_path):
        args = ["sweep", "paper_sec5", "--axis", "u_bar=8:16:5", "--axis", "x_bar=6.5:7.5:3", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        rows = read_csv(tmp_path / "sweep.csv")
        assert len(rows) == 15
        for r in rows:
            assert (r["c1_satisfied"] == "true") == (float(r["c1_margin"]) > 0)
        assert (tmp_path / "sweep.svg").exists()

    def test_single_cell_matches_simulate(self, tmp_path, warm_kernel):
        sw, si = tmp_path / "sw", tmp_path / "si"
        cli.main(["sweep", "paper_sec5", "--axis", "u_bar=12", "--simulate", "--t-end", "3", "--out", str(sw)])
        cli.main(["simulate", "paper_sec5", "--t-end", "3", "--out", str(si)])
        row = read_csv(sw / "sweep.csv")[0]
        m = kv(si / "metrics_blf.txt")
        for k in ("max_x_norm", "max_u_norm", "max_e_norm"):
            assert float(row[k]) == float(m[k])

    def test_gamma_scale_raises_control_effort(self, tmp_path, warm_kernel):
        args = ["sweep", "paper_sec5", "--axis", "gamma_scale=0.2,1,5", "--simulate", "--law", "classical",
                "--t-end", "5", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        u = [float(r["max_u_norm"]) for r in read_csv(tmp_path / "sweep.csv")]
        assert u[0] < u[-1]

    def test_workers_match_serial(self, tmp_path):
        base = ["sweep", "paper_sec5", "--axis", "d_bar=0:2:4"]
        cli.main(base + ["--out", str(tmp_path / "s")])
        cli.main(base + ["--workers", "2", "--out", str(tmp_path / "p")])
        assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def test_preset_command(capsys):
    assert cli.main(["preset"]) == 0
    assert "paper_sec5" in capsys.readouterr().out
    assert cli.main(["preset", "degenerate"]) == 0
    assert "plant:" in capsys.readouterr().out


def test_version(capsys):
    assert cli.main(["--version"]) == 0
    assert np.char.startswith(capsys.readouterr().out.split()[-1], "0.")
