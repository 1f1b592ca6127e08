import csv
import io
import json
import math

import numpy as np
import pytest

from hyprcm import cli
from hyprcm import models as m

BOOLEAN = """\
dimension: 3
marks: {type: finite, labels: [0.5, 1.0], weights: [0.3, 0.7]}
base: {type: boolean}
scaling: {type: volume_linear, L: 10000.0}
"""

POWER_TAIL = """\
dimension: 3
marks: {type: finite, values: [0.5, 1.0]}
base:
  type: weight_dependent
  profile: {type: power_tail, exponent: 2.0}
  kernel: {type: product, zeta: 0.2}
scaling: {type: volume_linear, L: 1000.0}
"""


@pytest.fixture
def model_file(tmp_path):
    def write(text, name="model.yaml"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def run(capsys, *argv):
    rc = cli.main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def csv_rows(text):
    return list(csv.DictReader(io.StringIO(text, newline="")))


# -- formatting --------------------------------------------------------------

def test_float_format_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 6.02e23, -2.5):
        assert float(cli.fmt_float(x)) == x
    assert cli.fmt_float(math.inf) == "inf" and cli.fmt_float(-math.inf) == "-inf"
    assert cli.fmt_float(math.nan) == "nan"
    assert json.loads(cli.to_json({"a": math.inf, "b": [1.5, np.float64(2.0)]})) == {"a": "inf", "b": [1.5, 2.0]}


def test_parse_grid():
    assert cli.parse_grid("0:1:3") == [0.0, 0.5, 1.0]
    assert cli.parse_grid("geom:1:100:3") == pytest.approx([1.0, 10.0, 100.0])
    assert cli.parse_grid("2, 4,8") == [2.0, 4.0, 8.0]
    for bad in ("a:b:c", "1:2", "geom:1:2"):
        with pytest.raises(cli.UsageError):
            cli.parse_grid(bad)


# -- subcommands -------------------------------------------------------------

def test_qd_d3_closed_form(capsys):
    rc, out, _ = run(capsys, "qd", "--dim", "3", "--grid", "0.5,2,10")
    assert rc == 0
    rows = csv_rows(out)
    assert list(rows[0]) == ["r", "q", "envelope", "digest"]
    for row in rows:
        r = float(row["r"])
        assert float(row["q"]) == pytest.approx(r / math.sinh(r), rel=1e-9)


def test_qd_complex_columns(capsys):
    rc, out, _ = run(capsys, "qd", "--dim", "3", "--grid", "1,2", "--s", "0.5", "--format", "json")
    assert rc == 0
    rows = json.loads(out)
    assert {"q_real", "q_imag"} <= set(rows[0])
    assert rows[0]["q_real"] == pytest.approx(math.sin(0.5) / (0.5 * math.sinh(1.0)), rel=1e-9)


def test_certify_exit_codes(capsys, model_file):
    path = model_file(BOOLEAN)
    rc, out, _ = run(capsys, "certify", "--model", path, "--grid", "1e6")
    assert rc == 0
    row = csv_rows(out)[0]
    assert row["gap_certified"] == "true" and float(row["lambda_c_upper"]) < float(row["lambda_u_lower"])
    rc, out, err = run(capsys, "certify", "--model", path, "--grid", "1")
    assert rc == 1 and "flagged" in err
    row = csv_rows(out)[0]
    assert row["lambda_c_upper"] == "inf" and float(row["suggested_L"]) > 1


def test_norms_vacuous_model_flagged(capsys, model_file):
    rc, out, _ = run(capsys, "norms", "--model", model_file(POWER_TAIL))
    assert rc == 1
    row = csv_rows(out)[0]
    assert row["norm_2to2"] == "inf"


def test_usage_errors(capsys, model_file, tmp_path):
    assert run(capsys, "certify", "--model", str(tmp_path / "missing.yaml"))[0] == 2
    assert run(capsys, "certify", "--model", model_file("dimension: [1, 2\n", "bad.yaml"))[0] == 2
    assert run(capsys, "certify")[0] == 2
    assert run(capsys, "qd", "--grid", "1")[0] == 2
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "qd", "--dim", "3", "--grid", "x")[0] == 2


def test_check_rows(capsys, model_file):
    rc, out, _ = run(capsys, "check", "--model", model_file(BOOLEAN), "--grid", "1,10,100")
    rows = csv_rows(out)
    verdicts = {r["condition"]: r["verdict"] for r in rows}
    assert verdicts["Boolean:finite-expected-volume"] == "holds"
    for r in rows:
        json.loads(r["evidence"])
    assert rc in (0, 1)


def test_appendix_tables(capsys):
    rc, out, _ = run(capsys, "appendix", "annulus")
    rows = csv_rows(out)
    assert rc == 0 and [float(r["L"]) for r in rows] == [2.0, 4.0, 8.0, 16.0]
    e = [float(r["expected_degree"]) for r in rows]
    assert all(x <= float(r["bound"]) for x, r in zip(e, rows))
    assert all(b < a for a, b in zip(e, e[1:]))
    rc, out, _ = run(capsys, "appendix", "many-annuli", "--format", "json")
    rows = json.loads(out)
    assert all(r["ratio"] > 0.05 and not r["undefined"] for r in rows)


# -- outputs -----------------------------------------------------------------

def test_manifest_and_digest(capsys, model_file, tmp_path):
    path = model_file(BOOLEAN)
    out = tmp_path / "c.csv"
    assert run(capsys, "certify", "--model", path, "--grid", "1e5,1e6", "--out", str(out))[0] == 0
    raw = out.read_bytes()
    assert raw.count(b"\r\n") == 3
    man = cli.read_manifest(str(out) + ".manifest.json")
    assert man["rows"] == 2 and man["format"] == "csv" and man["columns"][-1] == "digest"
    assert m.AdjacencyModel.from_dict(man["model"]).to_dict() == man["model"]
    rows = cli.read_table(str(out))
    assert {r["digest"] for r in rows} == {man["digest"]}
    payload = {k: man[k] for k in ("subcommand", "model", "params", "seed", "version")}
    assert cli.digest(payload) == man["digest"]


def test_reruns_are_byte_identical(capsys, model_file, tmp_path):
    path = model_file(BOOLEAN)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(capsys, "certify", "--model", path, "--grid", "geom:1e3:1e5:3", "--out", str(p))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())) == 3
    # a different seed changes the digest
    c = tmp_path / "c.json"
    run(capsys, "certify", "--model", path, "--grid", "geom:1e3:1e5:3", "--seed", "1", "--out", str(c))
    assert json.loads(c.read_text())[0]["digest"] != json.loads(a.read_text())[0]["digest"]


def test_sweep_threads_identical(capsys, model_file, tmp_path, monkeypatch):
    text = BOOLEAN.replace("L: 10000.0", "L: 1.0")
    path = model_file(text)
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("HYPRCM_THREADS", threads)
        p = tmp_path / f"s{threads}.csv"
        rc = cli.main(["sweep", "--model", path, "--grid", "0.002,0.004", "--R", "6", "--R-core", "2",
                       "--R-shell", "4", "--replicas", "3", "--seed", "5", "--out", str(p)])
        assert rc == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    rows = csv_rows(outs[0].decode())
    assert sum(r["row"] == "replica" for r in rows) == 6 and sum(r["row"] == "aggregate" for r in rows) == 2
