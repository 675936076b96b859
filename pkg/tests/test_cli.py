import json

import numpy as np
import pytest

from volqml import cli
from volqml.io import read_series


def _run(tmp_path, *argv):
    return cli.main([argv[0], "--output-dir", str(tmp_path), *argv[1:]])


def _series(tmp_path, values, name="x.csv", header="X"):
    path = tmp_path / name
    path.write_text(header + "\n" + "\n".join(str(v) for v in values) + "\n")
    return str(path)


@pytest.fixture
def simulated(tmp_path):
    assert _run(tmp_path, "simulate", "--model", "garch", "--theta", "0.1,0.2,0.5", "--n", "400", "--seed", "3") == 0
    return tmp_path / "path.csv"


def test_simulate_output(simulated):
    lines = simulated.read_text().splitlines()
    assert lines[0].startswith("# volqml ") and "seed=3" in lines[0]
    assert lines[1] == "# volqml-schema v1" and lines[2] == "t,X,sigma2,Z"
    x, s2, z = (read_series(simulated, c) for c in ("X", "sigma2", "Z"))
    assert x.size == 400
    np.testing.assert_allclose(x, np.sqrt(s2) * z, rtol=1e-15)


def test_simulate_zero_length(tmp_path):
    assert _run(tmp_path, "simulate", "--model", "garch", "--theta", "0.1,0.2,0.5", "--n", "0") == 0
    assert len((tmp_path / "path.csv").read_text().splitlines()) == 3


def test_filter_and_fit(simulated, tmp_path):
    out = tmp_path / "o"
    assert _run(out, "filter", "--model", "garch", "--theta", "0.1,0.2,0.5", "--input", str(simulated),
                "--order", "1") == 0
    assert (out / "filter.csv").read_text().splitlines()[2] == "t,h,dh_1,dh_2,dh_3"
    assert _run(out, "fit", "--model", "garch", "--input", str(simulated)) == 0
    est = json.loads((out / "estimate.json").read_text())
    assert set(est["theta_hat"]) == {"alpha0", "alpha1", "beta1"}
    assert read_series(out / "residuals.csv", "residual").size == 399


def test_diagnose(tmp_path):
    assert _run(tmp_path, "diagnose", "--model", "garch", "--q", "2", "--theta", "0.1,0.2,0.3,0.2") == 0
    diag = json.loads((tmp_path / "diagnose.json").read_text())
    assert diag["spectral_radius"]["holds"]
    assert diag["weak_stationarity"]["margin"] > 0


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": {"family": "garch"}, "theta": {"alpha0": 0.1, "alpha1": 0.2, "beta1": 0.5},
                               "n": 20, "seed": 1}))
    assert _run(tmp_path, "simulate", "--config", str(cfg), "--n", "7") == 0
    assert read_series(tmp_path / "path.csv", "X").size == 7


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("VOLQML_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["simulate", "--model", "garch", "--theta", "0.1,0.2,0.5", "--n", "5"]) == 0
    assert (tmp_path / "env" / "path.csv").exists()


def test_mc_rows(tmp_path):
    assert _run(tmp_path, "mc", "--kind", "consistency", "--model", "garch", "--theta", "0.1,0.2,0.5",
                "--sizes", "300,400", "--replications", "3", "--seed", "1") in (0, 4)
    lines = (tmp_path / "rows.csv").read_text().splitlines()
    assert len(lines) == 3 + 6


class TestExitCodes:
    def test_schema_violation(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"model": {"family": "garch"}, "bogus": 1}))
        assert _run(tmp_path, "simulate", "--config", str(cfg)) == 2

    def test_inadmissible_theta(self, tmp_path):
        assert _run(tmp_path, "simulate", "--model", "garch", "--theta", "0.1,0.2,1.5") == 2

    def test_wrong_theta_length(self, tmp_path):
        assert _run(tmp_path, "simulate", "--model", "garch", "--theta", "0.1,0.2") == 2

    def test_malformed_csv_names_line(self, tmp_path, capsys):
        path = _series(tmp_path, ["1.0", "2.0", "oops", "3.0"])
        assert _run(tmp_path, "filter", "--model", "garch", "--theta", "0.1,0.2,0.5", "--input", path) == 2
        assert "line 4" in capsys.readouterr().err

    def test_too_few_pre_sample_rows(self, tmp_path):
        path = _series(tmp_path, ["1.0"])
        assert _run(tmp_path, "filter", "--model", "garch", "--p", "2", "--theta", "0.1,0.1,0.1,0.5",
                    "--input", path) == 2

    def test_missing_input(self, tmp_path):
        assert _run(tmp_path, "fit", "--model", "garch") == 2

    def test_divergence(self, tmp_path):
        path = _series(tmp_path, ["1e200"] * 5)
        assert _run(tmp_path, "filter", "--model", "garch", "--theta", "0.1,0.2,0.5", "--input", path) == 3

    def test_fit_failure(self, tmp_path, capsys):
        path = _series(tmp_path, ["1e200"] * 100)
        assert _run(tmp_path, "fit", "--model", "garch", "--input", path) == 4
        assert "start 0" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            _run(tmp_path, "simulate", "--bogus")
        assert info.value.code == 2


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        cli.main(["fit", "--help"])
    text = capsys.readouterr().out
    for flag in ("--config", "--output-dir", "--input", "--warmup-skip", "--theta"):
        assert flag in text
