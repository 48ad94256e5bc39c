import json

import pytest

from kslab.cli import build_parser, main, system_name


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


class TestParser:
    @pytest.mark.parametrize("alias,name", [("tm", "TM"), ("TM'", "TMprime"), ("nlh", "NLH"), ("Pe", "PE")])
    def test_system_aliases(self, alias, name):
        assert system_name(alias) == name

    def test_unknown_system(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["simulate", "--system", "KS", "--A", "1"])
        assert exc.value.code == 2


class TestVerbs:
    def test_constants_dump(self, capsys, tmp_path):
        out = tmp_path / "table.csv"
        code, _ = run(capsys, "constants", "dump", "--grid", "a:1.6:1.8:0.1", "b:0.1:0.3:0.1", "--out", str(out))
        text = out.read_bytes()
        assert code == 0 and b"\r\n" in text
        assert len(text.decode().splitlines()) == 1 + 3 * 3

    def test_cascade_sequences(self, capsys):
        code, cap = run(capsys, "cascade", "run", "--A", "100", "--kmax", "2")
        rec = json.loads(cap.out)
        assert code == 0 and rec["A"] == 100 and len(rec["levels"]) == 3

    def test_moments_certificate(self, capsys):
        code, cap = run(capsys, "moments", "run", "--J0", "4", "--I0", "12")
        rec = json.loads(cap.out)
        assert code == 0 and rec["t_max"] > 0 and not rec["void"]

    def test_moments_small_tau_is_an_input_error(self, capsys):
        code, cap = run(capsys, "moments", "run", "--tau", "1", "--J0", "4", "--I0", "12")
        assert code == 2 and "tau >= 2" in cap.err

    def test_simulate(self, capsys, tmp_path):
        trace = tmp_path / "pm.csv"
        code, cap = run(capsys, "simulate", "--system", "nlh", "--A", "0.5", "--recipe", "constant",
                        "--d", "1", "--n", "16", "--L", "6", "--trace", str(trace))
        assert code == 0 and json.loads(cap.out)["verdict"] == "bounded"
        assert trace.read_text().startswith("t")

    def test_sweep_print_default(self, capsys):
        code, cap = run(capsys, "sweep", "--print-default")
        assert code == 0 and "[sweep]" in cap.out

    def test_sweep_config(self, capsys, tmp_path):
        cfg = tmp_path / "plan.toml"
        cfg.write_text('system = "NLH"\n[grid]\nd = 1\nn = 16\nL = 6.0\n[sweep]\nA = [0.5]\nrecipe = "constant"\n')
        code, cap = run(capsys, "sweep", "--config", str(cfg), "--output", str(tmp_path / "out"))
        assert code == 0 and json.loads(cap.out)["ok"]
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_heat_estimate(self, capsys):
        code, cap = run(capsys, "estimates", "run", "--lemma", "heat", "--p", "2", "--q", "2", "--draws", "3")
        assert code == 0 and json.loads(cap.out)["passed"]
