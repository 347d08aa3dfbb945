import json
import os

import pytest

from invfracture import cli, postprocess

SMALL = ["--n-max", "2", "--elements", "60", "--lambda-end", "1.6"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("trace")
    assert cli.main(["trace", *SMALL, "--out", str(out)]) == 0
    return out


class TestConfig:
    def test_defaults(self):
        cfg = cli.RunConfig()
        assert (cfg.epsilon, cfg.n_max, cfg.elements, cfg.tol) == (0.1, 6, 600, 1e-9)

    def test_file_and_override(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nepsilon = 0.05\nn-max = 3\nformat = json\n")
        args = cli._parser().parse_args(["trace", "--config", str(p), "--n-max", "2"])
        cfg = cli.build_config(args)
        assert cfg.epsilon == 0.05 and cfg.n_max == 2 and cfg.format == "json"

    @pytest.mark.parametrize("text", ["bogus = 1\n", "epsilon 0.1\n", "n_max = two\n", "model = other\n"])
    def test_bad_file(self, tmp_path, capsys, text):
        p = tmp_path / "bad.cfg"
        p.write_text(text)
        code, _, err = run(["trace", "--config", str(p)], capsys)
        assert code == 2 and "config" in err

    def test_invalid_value(self, capsys):
        assert run(["trace", "--epsilon", "-1"], capsys)[0] == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["trace", "--bogus"])
        assert info.value.code == 2


class TestTrace:
    def test_outputs(self, small_run):
        names = sorted(os.listdir(small_run))
        assert {"diagram.csv", "run_config", "bifurcations.json"} <= set(names)
        assert "branch0_lambda1.6.json" in names
        rows = postprocess.read_diagram(str(small_run / "diagram.csv"))
        assert {(r.branch, r.side) for r in rows} == {(0, ""), (1, "A"), (1, "B"), (2, "A"), (2, "B")}

    def test_config_echo(self, small_run):
        echo = (small_run / "run_config").read_text()
        assert "n_max = 2\n" in echo and "elements = 60\n" in echo and "lambda_end = 1.6\n" in echo

    def test_stability_loss_row(self, small_run):
        bif = json.loads((small_run / "bifurcations.json").read_text())
        rows = [r for r in postprocess.read_diagram(str(small_run / "diagram.csv")) if r.branch == 0]
        first_bad = next(r for r in rows if r.verdict != "Stable")
        assert first_bad.lam == bif[0]["lambda"]
        assert abs(first_bad.lam - 1.5163) <= 2e-3

    def test_deterministic(self, small_run, tmp_path):
        assert cli.main(["trace", *SMALL, "--out", str(tmp_path)]) == 0
        for name in os.listdir(small_run):
            if name != "run_config":
                assert (tmp_path / name).read_bytes() == (small_run / name).read_bytes(), name

    def test_json_format(self, tmp_path):
        assert cli.main(["trace", "--n-max", "1", "--elements", "40", "--lambda-end", "1.2", "--format", "json",
                         "--out", str(tmp_path)]) == 0
        rows = json.loads((tmp_path / "diagram.json").read_text())
        assert rows[0]["lambda"] == 1.0 and rows[0]["energy"] == 0.0

    def test_epsilon_moves_first_load(self, tmp_path):
        loads = []
        for eps in ("0.1", "0.05"):
            out = tmp_path / eps
            cli.main(["trace", "--n-max", "1", "--elements", "60", "--lambda-end", "1.1", "--epsilon", eps, "--out", str(out)])
            loads.append(json.loads((out / "bifurcations.json").read_text())[0]["lambda"])
        assert abs(loads[1] - 1.5) < abs(loads[0] - 1.5)


class TestSnapshotCommands:
    def test_stability_homogeneous(self, small_run, capsys):
        code, out, _ = run(["stability", str(small_run / "branch0_lambda1.4.json")], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["verdict"] == "Stable" and rep["P"] == 0

    def test_stability_broken(self, small_run, capsys):
        rep = json.loads(run(["stability", str(small_run / "branch2B_lambda1.6.json"), "--head", "3"], capsys)[1])
        assert rep["verdict"] == "Stable" and rep["P"] == rep["n_zero"] == 1 and len(rep["eigenvalues"]) == 3

    def test_family_zero_shift(self, small_run, capsys):
        code, out, _ = run(["family-check", str(small_run / "branch2B_lambda1.6.json"), "--theta", "0"], capsys)
        assert code == 0 and json.loads(out)["energy_delta"] == 0.0

    def test_family_shift(self, small_run, capsys):
        h = 1.6 / 60
        code, out, _ = run(["family-check", str(small_run / "branch2B_lambda1.6.json"), "--theta", str(1.01 * h)], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["shift_elements"] == 1 and abs(rep["energy_delta"]) <= 1e-9

    def test_family_window(self, small_run, capsys):
        code, _, err = run(["family-check", str(small_run / "branch2B_lambda1.6.json"), "--theta", "5"], capsys)
        assert code == 1 and "element" in err

    def test_missing_snapshot(self, tmp_path, capsys):
        assert run(["stability", str(tmp_path / "nope.json")], capsys)[0] == 2

    def test_inspect(self, small_run, capsys):
        code, out, _ = run(["inspect", str(small_run / "branch1A_lambda1.6.json"), "--every", "10"], capsys)
        lines = out.splitlines()
        assert code == 0 and lines[0].startswith("# branch 1A")
        assert len([ln for ln in lines if not ln.startswith("#")]) == 1 + 7
