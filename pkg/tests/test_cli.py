"""CLI contract tests: configuration, file formats, determinism, exit codes."""

import json

import numpy as np
import pytest

from vbam.cli import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    ConfigError,
    build_config,
    config_hash,
    main,
    parse_config_file,
)


def _run_cli(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(
        [
            "run", "--experiment", "strip", "--scheme", "vbam",
            "--steps", "400", "--seed", "11", "--out", str(out), *extra,
        ]
    )
    assert code == 0
    return out


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            build_config({"not_a_key": "1"})

    def test_unknown_key_exit_code(self, tmp_path):
        code = main(
            ["run", "--experiment", "strip", "--steps", "10",
             "--out", str(tmp_path / "x"), "--set", "bogus=1"]
        )
        assert code == EXIT_CONFIG

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            build_config({"steps": "many"})

    def test_scheme_aliases(self):
        assert build_config({"scheme": "am"}).scheme == "am_haario"
        assert build_config({"scheme": "rr"}).scheme == "am_rr"

    def test_presets_fill_defaults(self):
        cfg = build_config({"experiment": "strip"})
        assert cfg.steps == 1_000_000
        assert cfg.dim == 2
        assert cfg.process_noise == pytest.approx(0.001**2)
        assert cfg.nu0 == 4.0
        gauss = build_config({"experiment": "gauss"})
        assert gauss.dim == 100
        assert gauss.rm_enabled == 1
        assert gauss.lambda0 == pytest.approx(2.38**2 / 2)
        assert gauss.gain_k0 == 1000.0 and gauss.gain_tau == 0.99

    def test_config_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("experiment = strip\nsteps = 123  # comment\n\nseed = 4\n")
        values = parse_config_file(path)
        cfg = build_config({**values, "seed": "9"})
        assert cfg.steps == 123
        assert cfg.seed == 9

    def test_malformed_config_file(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("steps 123\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)

    def test_hash_changes_iff_config_changes(self):
        a = build_config({"experiment": "strip"})
        b = build_config({"experiment": "strip"})
        assert config_hash(a) == config_hash(b)
        c = build_config({"experiment": "strip", "seed": "1"})
        assert config_hash(a) != config_hash(c)
        d = build_config({"experiment": "strip", "mu2": "1e11"})
        assert config_hash(a) != config_hash(d)


class TestRun:
    def test_outputs_and_schema(self, tmp_path):
        out = _run_cli(tmp_path, "a")
        chain = (out / "chain.csv").read_text().splitlines()
        assert chain[0] == "step,theta_1,theta_2,accepted"
        assert len(chain) == 401
        first = chain[1].split(",")
        assert first[0] == "1" and first[3] in ("0", "1")
        diag = (out / "diagnostics.csv").read_text().splitlines()
        assert diag[0] == "step,acceptance,lambda,sigma_trace,subopt"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["config"]["steps"] == 400
        assert 0 < manifest["chains"][0]["acceptance_rate"] <= 1
        density = (out / "density.csv").read_text().splitlines()
        assert density[0] == "bin_center,empirical,true,difference"
        assert len(density) == 73

    def test_determinism_byte_identical(self, tmp_path):
        out_a = _run_cli(tmp_path, "a")
        out_b = _run_cli(tmp_path, "b")
        assert (out_a / "chain.csv").read_bytes() == (out_b / "chain.csv").read_bytes()
        assert (
            out_a / "diagnostics.csv"
        ).read_bytes() == (out_b / "diagnostics.csv").read_bytes()
        assert (out_a / "density.csv").read_bytes() == (out_b / "density.csv").read_bytes()

    def test_seed_changes_chain(self, tmp_path):
        out_a = _run_cli(tmp_path, "a")
        out_c = tmp_path / "c"
        assert main(
            ["run", "--experiment", "strip", "--scheme", "vbam", "--steps", "400",
             "--seed", "12", "--out", str(out_c)]
        ) == 0
        assert (out_a / "chain.csv").read_text() != (out_c / "chain.csv").read_text()

    def test_multiple_chains(self, tmp_path):
        out = tmp_path / "multi"
        code = main(
            ["run", "--experiment", "strip", "--steps", "200", "--seed", "1",
             "--chains", "2", "--out", str(out)]
        )
        assert code == 0
        assert (out / "chain_00.csv").exists()
        assert (out / "chain_01.csv").exists()
        a = (out / "chain_00.csv").read_text()
        b = (out / "chain_01.csv").read_text()
        assert a != b  # derived seeds differ

    def test_numerical_failure_exit_code(self, tmp_path):
        code = main(
            ["run", "--experiment", "strip", "--scheme", "none", "--steps", "10",
             "--out", str(tmp_path / "bad"), "--set", "sigma0_diag=-1,-1"]
        )
        assert code == EXIT_NUMERICAL

    def test_env_output_root(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("VBAM_OUTPUT_ROOT", str(tmp_path / "root"))
        code = main(["run", "--experiment", "strip", "--steps", "50", "--seed", "2"])
        assert code == 0
        assert (tmp_path / "root" / "strip_vbam_s2" / "chain.csv").exists()

    def test_warns_on_unsound_model(self, tmp_path, capsys):
        code = main(
            ["run", "--experiment", "strip", "--scheme", "none", "--steps", "20",
             "--out", str(tmp_path / "w"), "--set", "h_scale=0"]
        )
        assert code == 0
        assert "warning" in capsys.readouterr().err.lower()


class TestCheckModel:
    def test_random_walk_passes(self, capsys):
        assert main(["check-model", "--experiment", "strip"]) == 0
        out = capsys.readouterr().out
        assert "verdict: pass" in out

    def test_h_zero_fails(self, capsys):
        assert main(["check-model", "--experiment", "strip", "--set", "h_scale=0"]) == 0
        assert "FAIL" in capsys.readouterr().out

    def test_q_zero_fails_controllability(self, capsys):
        assert main(
            ["check-model", "--experiment", "strip", "--set", "process_noise=0"]
        ) == 0
        out = capsys.readouterr().out
        assert "controllability:" in out and "FAIL" in out


class TestCompare:
    def test_self_comparison_has_zero_differences(self, tmp_path, capsys):
        out = _run_cli(tmp_path, "a")
        capsys.readouterr()  # drop the run command's own output
        assert main(["compare", str(out), str(out)]) == 0
        lines = capsys.readouterr().out.splitlines()
        # stdout carries the diagnostics table, then (strip runs) the
        # density table; the a- and b-columns must be equal in both
        n = None
        for line in lines:
            cells = line.split(",")
            if cells[0] in ("step", "bin_center"):
                n = (len(cells) - 1) // 2
                continue
            assert cells[1 : 1 + n] == cells[1 + n : 1 + 2 * n]

    def test_two_schemes_join(self, tmp_path):
        out_a = _run_cli(tmp_path, "a")
        out_b = tmp_path / "b"
        assert main(
            ["run", "--experiment", "strip", "--scheme", "am", "--steps", "400",
             "--seed", "11", "--out", str(out_b)]
        ) == 0
        dest = tmp_path / "cmp"
        assert main(["compare", str(out_a), str(out_b), "--out", str(dest)]) == 0
        table = (dest / "comparison.csv").read_text().splitlines()
        assert table[0].startswith("step,acceptance_a")
        assert len(table) > 1
        assert (dest / "density_comparison.csv").exists()

    def test_incompatible_runs_rejected(self, tmp_path):
        out_a = _run_cli(tmp_path, "a")
        out_d = tmp_path / "d"
        assert main(
            ["run", "--experiment", "banana", "--steps", "100", "--seed", "1",
             "--out", str(out_d), "--set", "dim=4"]
        ) == 0
        assert main(["compare", str(out_a), str(out_d)]) == EXIT_CONFIG

    def test_missing_manifest(self, tmp_path):
        assert main(["compare", str(tmp_path / "x"), str(tmp_path / "y")]) == EXIT_CONFIG
