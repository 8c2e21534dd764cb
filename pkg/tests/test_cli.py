import csv
import io
import subprocess
import sys
from fractions import Fraction as F

import pytest

from ghz_purify import cli
from ghz_purify.cli import ConfigError, fmt, main, parse_config_text
from ghz_purify.ensembles import dump_ensemble, load_ensemble, symmetric_ensemble


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, text, name="scenario.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def curves(capsys, *extra):
    code, out, _ = run(capsys, "curves", "--sweep", "0.25,1,15", *extra)
    assert code == 0
    return list(csv.DictReader(io.StringIO(out)))


# -- formatting ------------------------------------------------------------------

@pytest.mark.parametrize("x, want", [(F(1, 3), "0.333333333333"), (F(2, 3), "0.666666666667"),
                                     (F(21, 32), "0.656250000000"), (1, "1.00000000000"),
                                     (0, "0.00000000000"), (F(1, 64), "0.0156250000000"),
                                     (0.5, "0.500000000000")])
def test_fmt(x, want):
    assert fmt(x) == want


def test_fmt_rounds_half_even():
    # 12 significant digits with a tie in the 13th
    assert fmt(F(1000000000005, 10 ** 13)) == "0.100000000000"
    assert fmt(F(1000000000015, 10 ** 13)) == "0.100000000002"


# -- curves --------------------------------------------------------------------

def test_curves_header_and_plugs(capsys):
    rows = curves(capsys)
    assert list(rows[0]) == ["F0", "Y_c", "Y_2to3", "Y_e", "F_c", "F_2", "F_2to3", "F_e"]
    assert len(rows) == 16
    half = next(r for r in rows if r["F0"] == "0.500000000000")
    assert half["Y_c"] == "0.333333333333"
    assert half["Y_e"] == "0.666666666667"
    assert half["F_e"] == "0.656250000000"
    last = rows[-1]
    assert last["F0"] == "1.00000000000"
    for key in ("Y_c", "Y_e", "F_c", "F_2", "F_2to3", "F_e"):
        assert last[key] == "1.00000000000"
    # nothing is left to recycle at F0 = 1; pair fidelities are the closed-form limits
    assert last["Y_2to3"] == "0.00000000000"


def test_two_to_three_beats_conventional_below_half(capsys):
    for r in curves(capsys):
        f0 = F(r["F0"])
        if f0 < F(1, 2):
            y23 = (1 + f0 - 2 * f0 ** 2) / 3
            yc = (1 - 2 * f0 + 4 * f0 ** 2) / 3
            assert y23 > yc and F(r["Y_2to3"]) > F(r["Y_c"])


def test_curves_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["curves", "--sweep", "0.25,1,15", "--engines", "all", "--trials", "2000",
                     "--seed", "4", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert "mc_Y_e" in header and "stderr_F_e" in header


def test_curves_needs_sweep(capsys):
    code, _, err = run(capsys, "curves")
    assert code == 2 and "sweep" in err


# -- run -------------------------------------------------------------------------

def test_run_conventional_all_engines(tmp_path, capsys):
    cfg = write(tmp_path, "protocol = conventional\nf = 0.7, 0.1, 0.1, 0.1\nengines = all\n"
                          "trials = 100000\nseed = 3\n")
    code, out, _ = run(capsys, "run", "--config", cfg)
    assert code == 0
    assert out.strip().endswith("agreement")
    assert "analytic yield 0.520000000000 (13/25)" in out
    assert "enumerate F:000:+ 0.942307692308 (49/52)" in out


def test_run_link_pairs(tmp_path, capsys):
    cfg = write(tmp_path, "protocol = link\npair_f0 = 7/8\n")
    code, out, _ = run(capsys, "run", "--config", cfg)
    assert code == 0
    for lab, v in (("000:+", "0.765625000000"), ("011:+", "0.0156250000000"),
                   ("010:+", "0.109375000000"), ("001:+", "0.109375000000")):
        assert f"enumerate F:{lab} {v}" in out


@pytest.mark.parametrize("protocol, body", [("recycling", "f = 0.4, 0.3, 0.2, 0.1"),
                                            ("phaseflip", "p0 = 4/5"),
                                            ("full-mepp", "f0 = 0.6"),
                                            ("conventional", "p = 0.05\nq = 0.02")])
def test_run_protocols_agree(tmp_path, capsys, protocol, body):
    cfg = write(tmp_path, f"protocol = {protocol}\n{body}\n")
    code, out, _ = run(capsys, "run", "--config", cfg)
    assert code == 0, out


def test_run_sweep(capsys):
    code, out, _ = run(capsys, "run", "--protocol", "full-mepp", "--sweep", "0.25,1,3")
    assert code == 0 and out.count("# point") == 4


def test_run_detects_mismatch(tmp_path, capsys, monkeypatch):
    real = cli.enumerate_stats

    def broken(cfg, inp):
        out = real(cfg, inp)
        out["yield"] += F(1, 10 ** 9)
        return out

    monkeypatch.setattr(cli, "enumerate_stats", broken)
    code, out, _ = run(capsys, "run", "--protocol", "conventional", "--f0", "0.7")
    assert code == 1
    assert "MISMATCH yield" in out and out.strip().endswith("DISAGREEMENT")


def test_run_bad_normalization(tmp_path, capsys):
    cfg = write(tmp_path, "protocol = conventional\nf = 0.6, 0.1, 0.1, 0.1\n")
    code, _, err = run(capsys, "run", "--config", cfg)
    assert code == 2 and "sum" in err.lower()


@pytest.mark.parametrize("text, where, what", [
    ("protocol = conventional\nbogus = 1\n", ":2:", "unknown field 'bogus'"),
    ("# comment\n\nn = three\n", ":3:", "field 'n'"),
    ("protocol = conventional\nprotocol = link\n", ":2:", "given twice"),
    ("engines = analytic, magic\n", ":1:", "field 'engines'"),
    ("sweep = 0.5, 0.2\n", ":1:", "field 'sweep'"),
    ("just words\n", ":1:", "key = value"),
])
def test_config_errors_name_line_and_field(tmp_path, capsys, text, where, what):
    cfg = write(tmp_path, text)
    code, _, err = run(capsys, "run", "--config", cfg)
    assert code == 2
    assert f"{cfg}{where}" in err and what in err


def test_config_sweep_conflicts_with_ensemble(tmp_path, capsys):
    cfg = write(tmp_path, "protocol = conventional\nf = 1, 0, 0, 0\nsweep = 0.25, 1, 3\n")
    code, _, err = run(capsys, "curves", "--config", cfg)
    assert code == 2 and "symmetric" in err


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "run", "--config", str(tmp_path / "nope.cfg"))
    assert code == 2 and "cannot read" in err


def test_parse_config_values():
    vals = parse_config_text("protocol = link  # trailing comment\npair_f0 = 0.875\nengines = all\n")
    assert vals == {"protocol": "link", "pair_f0": F(7, 8), "engines": cli.ENGINES}
    with pytest.raises(ConfigError):
        parse_config_text("seed = -1\n")


# -- explain -------------------------------------------------------------------

def explain(capsys, *argv):
    code, out, _ = run(capsys, "explain", *argv)
    assert code == 0
    lines = out.splitlines()
    return lines[:-1], lines[-1]


def test_explain_phaseflip_discards(tmp_path, capsys):
    cfg = write(tmp_path, "protocol = phaseflip\np0 = 0.8\n")
    lines, summary = explain(capsys, "--config", cfg)
    assert "total_p=1 " in summary and "kept=17/25" in summary
    dropped = sum(F(ln.split(" p=")[1].split()[0]) for ln in lines if "final=discarded" in ln)
    assert dropped == F(8, 25)


def test_explain_omega_path(tmp_path, capsys):
    cfg = write(tmp_path, "protocol = recycling\nf = 1/2, 0, 1/2, 0\n")
    lines, summary = explain(capsys, "--config", cfg)
    oeo = [ln for ln in lines if ln.startswith("pattern=OEO")]
    assert oeo and all("final=phi" in ln and "on=AC" in ln for ln in oeo)
    assert sum(F(ln.split(" p=")[1].split()[0]) for ln in oeo) == F(1, 4)


def test_explain_pure_conventional(capsys):
    lines, summary = explain(capsys, "--protocol", "conventional", "--f0", "1")
    assert lines and all("final=000:+" in ln for ln in lines)
    assert "kept=1" in summary


def test_explain_budget(capsys):
    code, _, err = run(capsys, "explain", "--protocol", "phaseflip", "--n", "6")
    assert code == 2


def test_explain_full_scheme_rejected(capsys):
    code, _, err = run(capsys, "explain", "--f0", "0.5")
    assert code == 2 and "explain covers" in err


# -- ensemble files and mc ------------------------------------------------------

def test_ensemble_file_round_trip(tmp_path, capsys):
    e = symmetric_ensemble(F(3, 5), 4)
    path = write(tmp_path, dump_ensemble(e), "e.txt")
    assert load_ensemble(open(path).read()) == e
    cfg = write(tmp_path, f"protocol = conventional\nensemble = {path}\n")
    code, out, _ = run(capsys, "run", "--config", cfg)
    assert code == 0


def test_link_from_files(tmp_path, capsys):
    a = write(tmp_path, "n=3 normalized=true parties=ABC\nlabel=000:+ weight=3/4\nlabel=010:+ weight=1/4\n", "a.txt")
    b = write(tmp_path, "n=2 normalized=true parties=AD\nlabel=00:+ weight=9/10\nlabel=01:+ weight=1/10\n", "b.txt")
    cfg = write(tmp_path, f"protocol = link\nensemble = {a}\nensemble_b = {b}\njunction = A\n")
    code, out, _ = run(capsys, "run", "--config", cfg)
    assert code == 0 and "F:0000:+" in out


def test_mc_csv(capsys):
    argv = ["mc", "--protocol", "phaseflip", "--sweep", "0.55,0.95,2", "--trials", "20000", "--seed", "9"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["p0"] for r in rows] == ["0.550000000000", "0.750000000000", "0.950000000000"]
    assert rows[0]["rng"] == "numpy.PCG64/SeedSequence" and rows[0]["seed"] == "9"
    assert "stderr_yield" in rows[0]
    assert run(capsys, *argv)[1] == out


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "ghz_purify.cli", "curves", "--sweep", "0.5,1,1"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[1].startswith("0.500000000000,0.333333333333,")
