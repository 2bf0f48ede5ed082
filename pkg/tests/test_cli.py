import csv
import math
import subprocess
import sys
from pathlib import Path

import pytest

from combsum.cli import EX_GUARD, EX_USAGE, run
from combsum.specfile import SpecError, dumps, load_ensemble, loads, parse_spec

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"
GRID3 = str(DATA / "grid3.toml")


def _read(path):
    lines = Path(path).read_text().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    rows = list(csv.reader(l for l in lines if not l.startswith("#")))
    return comments, rows[0], rows[1:]


def _same_numbers(rows_a, rows_b, rel=1e-12):
    assert len(rows_a) == len(rows_b)
    for ra, rb in zip(rows_a, rows_b):
        for a, b in zip(ra, rb):
            try:
                fa, fb = float(a), float(b)
            except ValueError:
                assert a == b
                continue
            assert fa == pytest.approx(fb, rel=rel, abs=1e-15)


@pytest.mark.parametrize(
    "name, argv",
    [
        ("grid3_moments", ["moments"]),
        ("grid3_exact", ["exact"]),
        ("grid3_mgf", ["mgf", "--z", "0,0.5,1,-1,0.5+0.5j"]),
        ("grid3_saddlepoint", ["saddlepoint", "--u", "0.25,0.5,1"]),
    ],
)
def test_golden_outputs(tmp_path, name, argv):
    out = tmp_path / f"{name}.csv"
    assert run([argv[0], "--spec", GRID3, "--out", str(out), *argv[1:]]) == 0
    _, header, rows = _read(out)
    _, g_header, g_rows = _read(GOLDEN / f"{name}.csv")
    assert header == g_header
    _same_numbers(rows, g_rows)


def test_moments_row(capsys):
    assert run(["moments", "--spec", GRID3]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("n,B_n,var_S")
    row = dict(zip(out[0].split(","), out[1].split(",")))
    assert float(row["B_n"]) == 2 and float(row["var_S"]) == 3
    assert float(row["gamma_n"]) == pytest.approx(1.224745, abs=1e-6)


def test_check_bernstein_pass(capsys):
    assert run(["check", "--spec", str(DATA / "expo.toml"), "--D", "1", "--K", "20"]) == 0
    assert "bernstein: PASS" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    assert run(["moments", "--spec", str(tmp_path / "missing.toml")]) == EX_USAGE
    assert run(["moments"]) == EX_USAGE
    assert run(["frobnicate", "--spec", GRID3]) == EX_USAGE
    assert run(["moments", "--spec", GRID3, "--slack", "2"]) == EX_USAGE
    assert run(["simulate", "--spec", GRID3, "--u", "1", "--seed", "1", "--N", "10"]) == EX_USAGE
    assert run(["is", "--spec", GRID3, "--u", "1", "--seed", "1", "--batches", "5"]) == EX_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text('schema_version = 1\n[ensemble]\nkind = "checkerboard"\nn = 5\n')
    assert run(["moments", "--spec", str(bad)]) == EX_USAGE
    assert "usage:" in capsys.readouterr().err


def test_guard_exit_code(capsys):
    assert run(["saddlepoint", "--spec", GRID3, "--u", "5"]) == EX_GUARD
    assert run(["exact", "--spec", str(DATA / "checkerboard.toml")]) == EX_GUARD
    err = capsys.readouterr().err
    assert "guard: FeasibilityError:" in err and "guard: ZoneExceededError:" in err


def test_ratio_guard_only_run(tmp_path):
    out = tmp_path / "r.csv"
    assert run(["ratio", "--spec", str(DATA / "checkerboard.toml"), "--n", "4,6", "--u", "3", "--seed", "1", "--out", str(out)]) == EX_GUARD
    _, header, rows = _read(out)
    assert all(r[header.index("method")] == "skipped" for r in rows)


def test_mc_outputs_have_metadata(tmp_path):
    out = tmp_path / "s.csv"
    argv = ["simulate", "--spec", GRID3, "--u", "2.1213203435596424", "--N", "20000", "--seed", "5", "--workers", "1", "--out", str(out)]
    assert run(argv) == 0
    comments, header, rows = _read(out)
    assert comments[0].startswith("# seed=5 config_hash=")
    assert header == ["u", "p_hat", "std_err", "n_samples", "method", "flags"]
    p = float(rows[0][1])
    assert abs(p - 1 / 6) <= 4 * math.sqrt(p * (1 - p) / 20000)
    first = out.read_text()
    assert run(argv) == 0
    assert out.read_text() == first


def test_is_ratio_esseen_run(tmp_path):
    out = tmp_path / "is.csv"
    assert run(["is", "--spec", GRID3, "--u", "1.5", "--seed", "3", "--chains", "32", "--out", str(out)]) == 0
    _, header, rows = _read(out)
    assert rows[0][header.index("method")] == "tilted_is"
    out = tmp_path / "ratio.csv"
    assert run(["ratio", "--spec", str(DATA / "checkerboard.toml"), "--n", "4,40", "--u", "1", "--N", "20000", "--seed", "3", "--workers", "1", "--out", str(out)]) == 0
    _, header, rows = _read(out)
    assert [r[header.index("method")] for r in rows] == ["skipped", "naive"]
    out = tmp_path / "ks.csv"
    assert run(["esseen", "--spec", str(DATA / "rademacher.toml"), "--n", "8,16", "--N", "20000", "--seed", "3", "--out", str(out)]) == 0
    comments, header, rows = _read(out)
    assert "fitted_C=" in comments[0] and len(rows) == 2


def test_config_hash_changes_with_parameters(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["simulate", "--spec", GRID3, "--u", "1", "--N", "10000", "--workers", "1"]
    run(base + ["--seed", "1", "--out", str(a)])
    run(base + ["--seed", "2", "--out", str(b)])
    ha = _read(a)[0][0].split("config_hash=")[1].split()[0]
    hb = _read(b)[0][0].split("config_hash=")[1].split()[0]
    assert ha != hb


def test_atomic_write_leaves_no_temp_files(tmp_path):
    out = tmp_path / "m.csv"
    run(["moments", "--spec", GRID3, "--out", str(out)])
    assert [p.name for p in tmp_path.iterdir()] == ["m.csv"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "combsum", "moments", "--spec", GRID3], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("n,B_n")


# Spec files


@pytest.mark.parametrize("path", sorted(DATA.glob("*.toml")), ids=lambda p: p.name)
def test_spec_round_trip(path):
    e = load_ensemble(path)
    text = dumps(e)
    again = loads(text)
    assert again == e
    assert loads(dumps(again)) == e


def test_spec_schema_errors():
    with pytest.raises(SpecError):
        parse_spec('[ensemble]\nkind = "checkerboard"\nn = 4\n')
    with pytest.raises(SpecError):
        parse_spec('schema_version = 2\n[ensemble]\nkind = "checkerboard"\nn = 4\n')
    with pytest.raises(SpecError):
        parse_spec('schema_version = 1\nextra = 3\n[ensemble]\nkind = "checkerboard"\nn = 4\n')
    with pytest.raises(SpecError):
        loads('schema_version = 1\n[ensemble]\nkind = "checkerboard"\nn = 4\ncolour = "red"\n')
    with pytest.raises(SpecError):
        parse_spec("schema_version = = 1")


def test_spec_full_precision():
    e = loads('schema_version = 1\n[ensemble]\nkind = "degenerate"\ngrid = [[0.1, -0.1], [-0.1, 0.1]]\n')
    assert e.cell(0, 0).c == 0.1
