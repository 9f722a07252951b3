import json
import subprocess
import sys

import pytest

from gauge_xray import cli
from gauge_xray.config import ConfigError, ScenarioConfig

SMALL = {"boundary": {"n_beta": 12, "n_mu": 6, "delta": 0.05}, "dt": 4e-3}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def _scatter_cfg(**extra):
    return dict(SMALL, name="phase", pair={"preset": "constant_higgs", "c": [0.0, 0.8]}, **extra)


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = ScenarioConfig.from_dict({})
        again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again.content_hash() == cfg.content_hash()

    @pytest.mark.parametrize("bad", [
        {"colour": 1},
        {"grid": {"nx": 0}},
        {"grid": {"depth": 3}},
        {"dt": -1},
        {"seed": -3},
        {"tolerances": {"nonsense": 1.0}},
        {"pair": {"preset": "nope"}},
        {"metric": {"name": "torus"}},
        {"kernel": {"forms": []}},
        {"rigidity": {"r_max": 1.2}},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(bad)

    def test_hash_tracks_content(self):
        a = ScenarioConfig.from_dict({"dt": 1e-3})
        b = ScenarioConfig.from_dict({"dt": 2e-3})
        assert a.content_hash() != b.content_hash()

    def test_gauge_required(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({}).build_gauge()


class TestCLI:
    def test_scatter_phase(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["scatter", "--config", _write(tmp_path, _scatter_cfg()), "--out", str(out)]) == 0
        rep = json.loads((out / "scatter_report.json").read_text())
        assert rep["ok"] and rep["results"]["closed_form_error"] < 1e-10
        assert (out / "scatter_C.csv").read_text().startswith("beta,mu,")
        assert (out / "scatter_C.gp").exists()

    def test_deterministic(self, tmp_path):
        path = _write(tmp_path, _scatter_cfg(gauge={"preset": "scalar_phase"}))
        texts = []
        for k in range(2):
            out = tmp_path / f"o{k}"
            assert cli.main(["scatter", "--config", path, "--out", str(out), "--seed", "11"]) == 0
            texts.append((out / "scatter_report.json").read_bytes())
        assert texts[0] == texts[1]

    def test_config_error_exit(self, tmp_path):
        path = _write(tmp_path, {"pair": {"preset": "nope"}})
        assert cli.main(["scatter", "--config", path, "--out", str(tmp_path)]) == 2
        assert cli.main(["scatter", "--config", str(tmp_path / "missing.json")]) == 2
        assert cli.main(["scatter"]) == 2
        assert cli.main(["scatter", "--config", _write(tmp_path, {}), "--seed", "-1"]) == 2

    def test_tolerance_failure_exit(self, tmp_path):
        out = tmp_path / "o"
        path = _write(tmp_path, _scatter_cfg(tolerances={"closed_form": 1e-30}))
        assert cli.main(["scatter", "--config", path, "--out", str(out)]) == 3
        fail = json.loads((out / "scatter_failure.json").read_text())
        assert fail["reason"] == "tolerance" and "closed_form" in fail["failures"]

    def test_numeric_failure_exit(self, tmp_path):
        out = tmp_path / "o"
        path = _write(tmp_path, dict(SMALL, kernel={"m": 9}, boundary={"n_beta": 512, "n_mu": 512}))
        # the assembled matrix would exceed the memory guard
        code = cli.main(["kernel", "--config", path, "--out", str(out)])
        assert code == 3
        assert json.loads((out / "kernel_failure.json").read_text())["reason"] == "InversionError"

    def test_kernel_zero_pair(self, tmp_path):
        out = tmp_path / "k"
        path = _write(tmp_path, dict(SMALL, kernel={"m": 5, "forms": ["F"]}))
        assert cli.main(["kernel", "--config", path, "--out", str(out)]) == 0
        rep = json.loads((out / "kernel_report.json").read_text())
        assert rep["results"]["probe"]["kernel_dim"] == 0
        gp = (out / "kernel_spectrum.gp").read_text()
        assert "'kernel_spectrum.csv'" in gp and str(out) not in gp

    def test_verify_and_slope_plot(self, tmp_path):
        out = tmp_path / "v"
        path = _write(tmp_path, {"verify": {"ntheta": 16, "resolutions": [16, 24, 32], "riccati": False}})
        assert cli.main(["verify", "--config", path, "--out", str(out)]) == 0
        rep = json.loads((out / "verify_report.json").read_text())
        gp = (out / "verify_residuals.gp").read_text()
        slopes = rep["results"]["slopes"]
        assert slopes and any(f"{v:.2f}" in gp for v in slopes.values() if v is not None)

    def test_emit_plots_empty_and_missing(self, tmp_path):
        with pytest.warns(UserWarning):
            assert cli.main(["emit_plots", "--out", str(tmp_path)]) == 0
        assert cli.main(["emit_plots", "--out", str(tmp_path / "nope")]) == 2

    def test_module_entry_point(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "gauge_xray", "--help"], capture_output=True, text=True)
        assert r.returncode == 0
        for name in ("transform", "scatter", "verify", "holo", "kernel", "rigidity", "emit_plots"):
            assert name in r.stdout
