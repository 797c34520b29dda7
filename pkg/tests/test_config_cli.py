import json
import math
from pathlib import Path

import numpy as np
import pytest

import snls
from snls.cli import main, run
from snls.config import ConfigError, field_from_spec, load_config


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


BASE = {
    "grid": {"d": 1, "n": 64, "L": 40.0},
    "kernel": {"form": "convolution", "length_scale": 2.0, "amplitude": 0.5,
               "s": 2.0},
    "sim": {"lambda": 1, "sigma": 1.0, "eps": 0.3, "dt": 5e-3, "T": 0.2,
            "R": 10.0},
    "u0": "soliton",
    "seed": 42,
    "workers": 1,
}


class TestConfigValidation:
    def test_minimal_round_trip(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, BASE))
        assert cfg["grid"]["n"] == 64
        assert cfg["sim"]["eps"] == 0.3
        # defaults filled
        assert cfg["mc"]["N"] == 1000
        echo = cfg.echo()
        assert echo["grid"] == cfg["grid"]

    def test_sigma_below_half_rejected(self, tmp_path):
        bad = json.loads(json.dumps(BASE))
        bad["sim"]["sigma"] = 0.3
        with pytest.raises(ConfigError, match="sigma >= 1/2"):
            load_config(write_cfg(tmp_path, bad))

    def test_tails_p_at_domain_edge_rejected(self, tmp_path):
        bad = json.loads(json.dumps(BASE))
        bad["grid"]["d"] = 2
        bad["grid"]["L"] = 20.0
        bad["tails"] = {"p": 4.0}  # 2d/(d-1) = 4 for d=2
        with pytest.raises(ConfigError, match="admissible tail range"):
            load_config(write_cfg(tmp_path, bad))

    def test_unknown_keys_rejected(self, tmp_path):
        bad = json.loads(json.dumps(BASE))
        bad["sim"]["epsilon"] = 0.1
        bad["grib"] = {}
        with pytest.raises(ConfigError) as e:
            load_config(write_cfg(tmp_path, bad))
        msgs = "\n".join(e.value.violations)
        assert "sim.'epsilon'" in msgs
        assert "'grib'" in msgs

    def test_all_violations_listed(self, tmp_path):
        bad = json.loads(json.dumps(BASE))
        bad["sim"]["sigma"] = 0.1
        bad["sim"]["R"] = -1.0
        bad["workers"] = 0
        with pytest.raises(ConfigError) as e:
            load_config(write_cfg(tmp_path, bad))
        assert len(e.value.violations) >= 3

    def test_override_paths(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, BASE),
                          overrides={"sim.eps": "0.125", "seed": 7})
        assert cfg["sim"]["eps"] == 0.125
        assert cfg.seed == 7
        with pytest.raises(ConfigError, match="unknown override"):
            load_config(write_cfg(tmp_path, BASE),
                        overrides={"sim.nope": "1"})


class TestFieldSpec:
    def test_named_profiles(self):
        g = snls.Grid(1, 64, 40.0)
        u = field_from_spec(g, "gaussian(2, 1.5)")
        assert float(np.abs(u.values).max()) == pytest.approx(2.0, rel=1e-12)
        v = field_from_spec(g, "plane_wave(3)")
        assert np.abs(np.abs(v.values) - 1.0).max() < 1e-12
        s = field_from_spec(g, "soliton")
        assert snls.momentum(s) == pytest.approx(2.0, abs=1e-4)

    def test_file_round_trip(self, tmp_path):
        g = snls.Grid(1, 64, 40.0)
        u = snls.gaussian(g, 1.0, 2.0)
        snls.save_field(u, tmp_path / "u0.bin")
        v = field_from_spec(g, f"file:{tmp_path}/u0.bin")
        assert (v.values == u.values).all()

    def test_unknown_profile(self):
        g = snls.Grid(1, 64, 40.0)
        with pytest.raises(ValueError, match="unknown u0 profile"):
            field_from_spec(g, "vortex(1)")


class TestCLI:
    def test_simulate_smoke_and_manifest(self, tmp_path):
        cfgp = write_cfg(tmp_path, BASE)
        out = tmp_path / "out"
        rc = main(["simulate", "--config", str(cfgp), "--out", str(out)])
        assert rc == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "summary.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        for name in ("trajectory.csv", "summary.json"):
            assert name in manifest["outputs"]
            assert len(manifest["outputs"][name]) == 64  # sha256 hex
        assert manifest["seed"] == 42

    def test_rerun_bit_identical(self, tmp_path):
        cfgp = write_cfg(tmp_path, BASE)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(cfgp), "--out",
                     str(out1)]) == 0
        assert main(["simulate", "--config", str(cfgp), "--out",
                     str(out2)]) == 0
        assert (out1 / "trajectory.csv").read_bytes() == \
            (out2 / "trajectory.csv").read_bytes()
        assert (out1 / "summary.json").read_bytes() == \
            (out2 / "summary.json").read_bytes()
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["outputs"] == m2["outputs"]  # wall time may differ

    def test_csv_is_rfc4180(self, tmp_path):
        cfgp = write_cfg(tmp_path, BASE)
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfgp), "--out", str(out)])
        raw = (out / "trajectory.csv").read_bytes()
        assert b"\r\n" in raw

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = json.loads(json.dumps(BASE))
        bad["sim"]["sigma"] = 0.2
        cfgp = write_cfg(tmp_path, bad)
        rc = main(["simulate", "--config", str(cfgp), "--out",
                   str(tmp_path / "o")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "sigma" in err

    def test_runtime_error_writes_error_json(self, tmp_path):
        bad = json.loads(json.dumps(BASE))
        bad["sim"]["R"] = 1.8  # below ||soliton||_H1
        cfgp = write_cfg(tmp_path, bad)
        out = tmp_path / "o"
        rc = main(["simulate", "--config", str(cfgp), "--out", str(out)])
        assert rc == 3
        err = json.loads((out / "error.json").read_text())
        assert "must exceed" in err["message"]

    def test_skeleton_cancel_control_artifacts(self, tmp_path):
        data = json.loads(json.dumps(BASE))
        data["sim"]["eps"] = 0.0
        data["sim"]["dt"] = 2e-3
        data["u0"] = "gaussian(1,2)"
        cfgp = write_cfg(tmp_path, data)
        out = tmp_path / "sk"
        rc = main(["skeleton", "--config", str(cfgp), "--out", str(out),
                   "--cancel-control", "0.05"])
        assert rc == 0
        assert (out / "cancel_control.json").exists()
        assert (out / "cancel_residuals.json").exists()
        rep = json.loads((out / "cancel_residuals.json").read_text())
        assert rep["range_condition_ok"]
        # the control file round-trips
        g = snls.Grid(1, 64, 40.0)
        h = snls.load_control(out / "cancel_control.json", g)
        assert h.T == pytest.approx(0.1)

    def test_mc_workers_agree(self, tmp_path):
        data = json.loads(json.dumps(BASE))
        data["sim"]["T"] = 0.1
        data["sim"]["eps"] = 0.5
        data["event"] = {"kind": "h1_exceed", "R": 9.0, "T": 0.1}
        data["mc"] = {"N": 300, "eps_list": [0.5]}
        cfgp = write_cfg(tmp_path, data)
        outs = []
        for w, name in ((1, "w1"), (3, "w3")):
            out = tmp_path / name
            rc = main(["mc", "--config", str(cfgp), "--out", str(out),
                       "--workers", str(w)])
            assert rc == 0
            outs.append(json.loads((out / "mc_summary.json").read_text()))
        a, b = outs
        assert a["rows"][0]["p_hat"] == b["rows"][0]["p_hat"]

    def test_tails_subcommand(self, tmp_path):
        data = json.loads(json.dumps(BASE))
        data["tails"] = {"eta": 1.0, "T": 0.5, "p": 4.0, "N": 400,
                        "steps": 16}
        cfgp = write_cfg(tmp_path, data)
        out = tmp_path / "tails"
        rc = main(["tails", "--config", str(cfgp), "--out", str(out)])
        assert rc == 0
        consts = json.loads((out / "constants.json").read_text())
        assert consts["kappa1"] > 0
        assert (out / "tails.csv").exists()

    def test_rate_and_mc_certificate_chain(self, tmp_path):
        data = json.loads(json.dumps(BASE))
        data["sim"].update({"T": 0.1, "dt": 5e-3, "eps": 0.5})
        data["event"] = {"kind": "terminal_match", "target": "deterministic",
                         "rho": 3.0}
        data["optimizer"] = {"knots": 2, "modes": 2, "population": 6,
                             "generations": 3, "elite": 2}
        cfgp = write_cfg(tmp_path, data)
        out = tmp_path / "rate"
        rc = main(["rate", "--config", str(cfgp), "--out", str(out)])
        assert rc == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["event_satisfied"]
        assert cert["energy"] == pytest.approx(0.0, abs=1e-9)
        # feed the emitted control and certificate back into mc
        data["mc"] = {"N": 200, "eps_list": [0.5],
                      "control_path": str(out / "h_star.json"),
                      "certificate_path": str(out / "certificate.json")}
        cfgp2 = write_cfg(tmp_path, data, "cfg2.json")
        out2 = tmp_path / "mc"
        rc = main(["mc", "--config", str(cfgp2), "--out", str(out2)])
        assert rc == 0
        summ = json.loads((out2 / "mc_summary.json").read_text())
        assert summ["importance_sampling"]
        assert "I_star" in summ

    def test_blowup_nonrare_subcommand(self, tmp_path):
        data = json.loads(json.dumps(BASE))
        data["grid"]["n"] = 128
        data["sim"] = {"lambda": 1, "sigma": 2.0, "eps": 0.0, "dt": 1e-3,
                       "T": 0.3, "R": 10.0}
        data["u0"] = "gaussian(2,1)"
        data["blowup"] = {"mode": "nonrare", "T": 0.05, "side": "survive",
                          "eps_list": [0.5, 0.25], "N": 150}
        cfgp = write_cfg(tmp_path, data)
        out = tmp_path / "bu"
        rc = main(["blowup", "--config", str(cfgp), "--out", str(out)])
        assert rc == 0
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["side"] == "survive"
        assert (out / "blowup.csv").exists()


class TestRunDispatch:
    def test_run_writes_manifest_hashes(self, tmp_path):
        cfg = load_config(data=BASE)
        summary, outputs = run("simulate", cfg, tmp_path / "d")
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        import hashlib
        for name, path in outputs.items():
            digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
            assert manifest["outputs"][name] == digest
