import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from robust_selftest.cli import EXIT_BOUND, EXIT_OK, EXIT_USAGE, main, parse_angle


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


class TestFig2Sweep:
    def test_singlet(self, capsys):
        code, out, _ = run(capsys, "fig2-sweep", "--samples", "1000")
        assert code == EXIT_OK
        data = rows(out)
        assert len(data) == 1000
        assert "violations=0" in out.splitlines()[0]
        assert all(float(r["K"]) >= float(r["bound"]) - 1e-9 for r in data)

    def test_white_noise(self, capsys):
        code, out, _ = run(capsys, "fig2-sweep", "--state", "werner", "--v", "0", "--samples", "1000")
        assert code == EXIT_OK
        np.testing.assert_allclose([float(r["K"]) for r in rows(out)], 0.25, atol=1e-12)

    def test_partial(self, capsys):
        code, _, _ = run(capsys, "fig2-sweep", "--state", "partial", "--theta", str(np.pi / 8), "--samples", "1000")
        assert code == EXIT_OK

    def test_deterministic(self, capsys):
        first = run(capsys, "fig2-sweep", "--samples", "50", "--seed", "4")[1]
        assert run(capsys, "fig2-sweep", "--samples", "50", "--seed", "4")[1] == first

    def test_workers_do_not_change_output(self, capsys):
        serial = run(capsys, "fig2-sweep", "--samples", "40")[1]
        assert run(capsys, "fig2-sweep", "--samples", "40", "--workers", "2")[1] == serial

    def test_json_mirrors_csv(self, capsys):
        csv_out = rows(run(capsys, "fig2-sweep", "--samples", "5")[1])
        doc = json.loads(run(capsys, "fig2-sweep", "--samples", "5", "--format", "json")[1])
        assert doc["columns"] == ["a", "b", "W", "K", "bound", "margin"]
        assert [float(r["K"]) for r in csv_out] == [r["K"] for r in doc["records"]]

    def test_three_qubit_state_rejected(self, capsys):
        code, _, err = run(capsys, "fig2-sweep", "--state", "ghz")
        assert code == EXIT_USAGE and "two-qubit" in err

    def test_register_state_rejected(self, capsys):
        assert run(capsys, "fig2-sweep", "--state", "rho_xyab", "--nu", "0.5")[0] == EXIT_USAGE


class TestFig2dBand:
    def test_single_point(self, capsys):
        code, out, _ = run(capsys, "fig2d-band", "--nu", "0.5", "--restarts", "1")
        assert code == EXIT_OK
        (r,) = rows(out)
        assert float(r["beta"]) == pytest.approx(1 + np.sqrt(2), abs=1e-6)
        assert float(r["lower"]) - 1e-6 <= float(r["xi"]) <= float(r["upper"]) + 1e-6

    def test_near_one(self, capsys):
        code, out, _ = run(capsys, "fig2d-band", "--nu", "0.999", "--restarts", "0")
        (r,) = rows(out)
        assert code == EXIT_OK
        assert float(r["beta"]) == pytest.approx(2.8275986976214439, abs=1e-6)
        assert float(r["upper"]) - float(r["lower"]) == pytest.approx(7.3223e-5, abs=1e-7)
        assert float(r["lower"]) - 1e-6 <= float(r["xi"]) <= (1 + 0.999) / 2 + 1e-6

    @pytest.mark.parametrize("nu", ["1.0", "0", "abc"])
    def test_domain(self, capsys, nu):
        assert run(capsys, "fig2d-band", "--nu", nu)[0] == EXIT_USAGE


class TestFig3:
    def test_mode_a(self, capsys):
        code, out, _ = run(capsys, "fig3", "--samples", "1000")
        assert code == EXIT_OK
        assert len(rows(out)) == 1000

    def test_mode_b_pure(self, capsys):
        code, out, _ = run(capsys, "fig3", "--mode", "b", "--w", "1.0", "--restarts", "1")
        (r,) = rows(out)
        assert code == EXIT_OK
        assert float(r["beta"]) == pytest.approx(4, abs=1e-6)
        assert float(r["xi"]) == pytest.approx(1, abs=1e-8)

    def test_mode_b_reports_loose_points(self, capsys):
        # with the biseparable partner the extracted fidelity sits well above the tight bound
        code, out, err = run(capsys, "fig3", "--mode", "b", "--w", "0.9", "--restarts", "1")
        (r,) = rows(out)
        assert float(r["bound"]) == pytest.approx(0.8292893218813453, abs=1e-6)
        assert float(r["gap"]) > 5e-3
        assert code == EXIT_BOUND and "FAIL" in err

    def test_two_qubit_state_rejected(self, capsys):
        assert run(capsys, "fig3", "--state", "singlet")[0] == EXIT_USAGE


class TestFig4:
    def test_sampled_singlet(self, capsys):
        code, out, _ = run(capsys, "fig4", "--shots", "100000", "--seed", "7")
        assert code == EXIT_OK
        assert len(rows(out)) == 4

    def test_exact(self, capsys):
        code, out, _ = run(capsys, "fig4", "--state", "ghz")
        assert code == EXIT_OK
        assert all(abs(float(r["difference"])) <= 1e-12 for r in rows(out))

    def test_injected(self, capsys):
        code, _, err = run(capsys, "fig4", "--shots", "10000", "--inject-signalling")
        assert code == EXIT_BOUND and "no-signalling" in err

    def test_angles(self, capsys):
        assert run(capsys, "fig4", "--angles", "pi/8,3pi/8")[0] == EXIT_OK


class TestSmallCommands:
    def test_bounds_chsh(self, capsys):
        code, out, _ = run(capsys, "bounds", "--beta", "2,2.8284271247461903")
        assert code == EXIT_OK
        first, last = rows(out)
        assert float(first["lower"]) == pytest.approx(0.4267766952966369)
        assert float(last["upper"]) == pytest.approx(1)

    def test_bounds_out_of_range(self, capsys):
        assert run(capsys, "bounds", "--beta", "3")[0] == EXIT_USAGE

    def test_bounds_mermin_grid(self, capsys):
        code, out, _ = run(capsys, "bounds", "--scenario", "mermin", "--points", "5")
        assert code == EXIT_OK and len(rows(out)) == 5

    def test_margin(self, capsys):
        code, out, _ = run(capsys, "margin", "--angles", "pi/4,pi/4,pi/4")
        assert code == EXIT_OK
        assert rows(out)[0]["scenario"] == "Mermin"

    @pytest.mark.parametrize("angles", ["1", "a,b", "2,0.1"])
    def test_margin_usage(self, capsys, angles):
        assert run(capsys, "margin", "--angles", angles)[0] == EXIT_USAGE

    def test_parse_angle(self):
        assert parse_angle("pi/4") == pytest.approx(np.pi / 4)
        assert parse_angle("3pi/8") == pytest.approx(3 * np.pi / 8)
        assert parse_angle("0.25") == 0.25


class TestConfigAndErrors:
    def test_tolerance_override(self, capsys):
        assert run(capsys, "margin", "--angles", "0.3,0.4", "--tolerance", "margin=1e-6")[0] == EXIT_OK

    @pytest.mark.parametrize("tol", ["bogus=1", "margin", "margin=x"])
    def test_bad_tolerance(self, capsys, tol):
        assert run(capsys, "margin", "--angles", "0.3,0.4", "--tolerance", tol)[0] == EXIT_USAGE

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fig2-sweep", "--frobnicate"])
        assert exc.value.code == EXIT_USAGE

    def test_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("samples = 7\nseed = 3\nstate = werner\nv = 0.5\n")
        code, out, _ = run(capsys, "fig2-sweep", "--config", str(cfg))
        assert code == EXIT_OK and len(rows(out)) == 7
        # flags win over the file
        code, out, _ = run(capsys, "fig2-sweep", "--config", str(cfg), "--samples", "3")
        assert len(rows(out)) == 3

    def test_config_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n")
        assert run(capsys, "fig2-sweep", "--config", str(cfg))[0] == EXIT_USAGE

    def test_state_file(self, capsys, tmp_path):
        spec = tmp_path / "state.txt"
        spec.write_text("family = partial\ntheta = 0.4\n")
        assert run(capsys, "fig2-sweep", "--state-file", str(spec), "--samples", "3")[0] == EXIT_OK

    def test_out_file(self, capsys, tmp_path):
        path = tmp_path / "o.csv"
        code, out, _ = run(capsys, "bounds", "--out", str(path))
        assert code == EXIT_OK and out == ""
        assert path.read_text().startswith("# bounds")

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "robust_selftest", "margin", "--angles", "0.1,0.2"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.startswith("# margin")
