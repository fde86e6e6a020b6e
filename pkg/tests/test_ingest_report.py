import json
import math
import os

import numpy as np
import pytest

from fracest.errors import InvalidInputError
from fracest.fraccalc import GridFunction, read_grid_csv
from fracest.ingest import ingest_sample, read_kv
from fracest.mixed import Sample2D
from fracest.point import Sample
from fracest.report import (dumps_csv, dumps_json, emit_report, file_digest, format_float, manifest_digest,
                            manifest_path, to_plain, write_manifest)
from fracest.schemas import McReport, PointEstimate, RunManifest


def test_fixture_samples(uniform_sample_path, pairs_path):
    s = ingest_sample(uniform_sample_path)
    assert isinstance(s, Sample) and s.n == 200
    assert s.values[0] == 0.618034
    p = ingest_sample(pairs_path)
    assert isinstance(p, Sample2D) and p.n == 100
    assert p.eta[0] == 0.414214


@pytest.mark.parametrize("text,line,message", [
    ("0.1\n\n# note\n-0.5\n", 4, "negative"),
    ("0.1\nnan\n", 2, "NaN"),
    ("0.1\ninf\n", 2, "infinite"),
    ("0.1\nabc\n", 2, "not a number"),
    ("0.1,0.2\n0.3\n", 2, "ragged"),
    ("0.1,0.2,0.3\n", 1, "1 or 2 columns"),
])
def test_bad_rows_name_their_line(write_text, text, line, message):
    path = write_text("bad.csv", text)
    with pytest.raises(InvalidInputError, match=message) as info:
        ingest_sample(path)
    assert info.value.line == line
    assert str(info.value).startswith("line {}:".format(line))


def test_empty_sample_file(write_text):
    with pytest.raises(InvalidInputError, match="no data rows"):
        ingest_sample(write_text("empty.csv", "# nothing\n\n"))


def test_read_kv(write_text, caplog):
    path = write_text("cfg.kv", "# run\nexperiment = clt\nreps=200\nreps = 300\nn=10,20\n")
    assert read_kv(path) == {"experiment": "clt", "reps": "300", "n": "10,20"}
    assert "repeated" in caplog.text
    with pytest.raises(InvalidInputError, match="line 1"):
        read_kv(write_text("bad.kv", "reps 200\n"))


def test_float_format_is_round_trip_exact():
    assert format_float(0.1) == "0.10000000000000001"
    assert float(format_float(1.0 / 3.0)) == 1.0 / 3.0
    assert format_float(math.inf) is None
    assert format_float(np.float64("nan")) is None


def test_json_is_sorted_and_deterministic():
    report = {"b": 1.5, "a": [1, np.float64(2.0), None], "c": {"z": True, "y": math.inf}}
    text = dumps_json(report)
    assert text == dumps_json(dict(reversed(list(report.items()))))
    data = json.loads(text)
    assert list(data) == ["a", "b", "c"]
    assert data["c"] == {"y": None, "z": True}
    assert text.endswith("\n")


def test_to_plain_uses_report_view():
    est = PointEstimate(value=1.0, variance=0.04, stderr=0.2, ci_low=0.6, ci_high=1.4, level=0.95, n=10,
                        alpha=0.25, x=0.5)
    plain = to_plain(est)
    assert plain["estimate"] == 1.0 and plain["ci"] == [0.6, 1.4]
    rep = McReport(experiment="e", statistic="s", cells=["c"], reps=1, seed=1, mean=[0.5], variance=[None],
                   stderr=[None], checks={"c": True})
    assert to_plain(rep)["pass"] is True
    assert "values" not in to_plain(rep)


def test_csv_flattens_nested_keys():
    rows = dumps_csv({"ci": [0.1, 0.2], "meta": {"name": "a,b"}, "n": 3, "ok": False, "v": None}).splitlines()
    assert rows == [
        "ci[0],0.10000000000000001",
        "ci[1],0.20000000000000001",
        'meta.name,"a,b"',
        "n,3",
        "ok,false",
        "v,",
    ]


def test_emit_report_to_file_and_stdout(tmp_path, capsys):
    path = str(tmp_path / "r.json")
    emit_report({"x": 1}, "json", path)
    with open(path) as fh:
        assert json.load(fh) == {"x": 1}
    emit_report({"x": 1}, "csv", "-")
    assert capsys.readouterr().out == "x,1\n"
    with pytest.raises(InvalidInputError):
        emit_report({"x": 1}, "xml")


def test_emit_curve(tmp_path):
    f = GridFunction([0.0, 0.5, 1.0], [0.0, 0.25, 1.0 / 3.0], alpha=0.2)
    path = str(tmp_path / "curve.csv")
    emit_report(f, path=path)
    g = read_grid_csv(path)
    assert np.array_equal(g.values, f.values) and g.alpha == 0.2
    with pytest.raises(InvalidInputError, match="file path"):
        emit_report(f)


def test_manifest_next_to_output(tmp_path, uniform_sample_path):
    out = str(tmp_path / "sub" / "report.json")
    manifest = RunManifest(subcommand="point", parameters={"alpha": 0.25},
                           input_digests={"in": file_digest(uniform_sample_path)}, outputs=[out], seed=None,
                           version="0.1.0")
    target = write_manifest(manifest, out)
    assert target == manifest_path(out) == out + ".manifest.json"
    with open(target) as fh:
        data = json.load(fh)
    assert data["subcommand"] == "point" and len(data["input_digests"]["in"]) == 64
    assert manifest_digest(manifest) == manifest_digest(manifest.model_copy())
    assert os.path.exists(target)
