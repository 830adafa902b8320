import csv
import json
import subprocess
import sys

import pytest

from ricci_lab import cli
from ricci_lab.errors import NumericError

TINY_INTERVAL = {"kind": "interval", "n": 21, "L": 2.0, "potential": {"name": "quadratic"}}

SMOKE = {
    "be": (TINY_INTERVAL, {"k": 1.0, "family": [{"kind": "eigen", "count": 3}]}),
    "grad": (TINY_INTERVAL, {"k": "hessian", "count": 3}),
    "cd": (TINY_INTERVAL, {"k": 1.0, "pairs": 2, "t_grid": [0.5], "S": 20}),
    "evi": (TINY_INTERVAL, {"k": 1.0, "pairs": 1, "times": [0.3], "S": 20}),
    "pathwise": (TINY_INTERVAL, {"k": 1.0, "pairs": 1, "t_grid": [0.5], "S": 20}),
    "contraction-wp": (TINY_INTERVAL, {"K": 1.0, "pairs": 2, "times": [0.5], "p": [1, 2]}),
    "duhamel": ({"kind": "circle", "n": 9, "potential": {"name": "cosine"}}, {"k": "hessian", "quad_nodes": 16, "tolerance": 1e-4}),
    "feynman-kac": ({"kind": "interval", "n": 5, "L": 1.0}, {"k": 0.5, "n_paths": 200, "sigmas": 5.0}),
    "couple": ({"kind": "interval", "n": 5, "L": 1.0, "potential": {"name": "quadratic"}}, {"delta": 0.0625, "horizon": 0.5, "n_paths": 50, "compose_steps": 2}),
    "tensor": ({"kind": "product", "factors": [{"kind": "interval", "n": 4, "L": 1.0}, {"kind": "interval", "n": 3, "L": 1.0}]}, {"k": [0.0, 0.0], "family": [{"kind": "eigen", "count": 3}]}),
    "change-of-measure": ({"kind": "interval", "n": 21, "L": 2.0}, {"potential": {"name": "quadratic"}, "lam": "hessian", "family": [{"kind": "eigen", "count": 3}]}),
    "refine-study": ({"kind": "interval", "L": 2.0, "potential": {"name": "quadratic"}}, {"k": 1.0, "ns": [21, 41, 81], "pairs": 2, "t_grid": [0.5], "S": 20}),
}


def write_config(tmp_path, experiment, space, params=None, seed=0, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"experiment": experiment, "space": space, "params": params or {}, "seed": seed}))
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_catalog_is_sorted_and_complete(capsys):
    code, out, _ = run(["list"], capsys)
    names = out.split()
    assert code == 0 and names == sorted(names)
    assert set(names) == {"be", "grad", "cd", "evi", "contraction-wp", "duhamel", "feynman-kac", "couple", "tensor", "change-of-measure", "pathwise", "refine-study"}
    assert run([], capsys)[1] == out


def test_help_describes_every_experiment():
    text = cli.build_parser().format_help()
    for name in cli.list_experiments():
        assert f"  {name}:" in text


def test_single_site_example_pass_and_fail(tmp_path, capsys):
    space = {"kind": "interval", "n": 3, "L": 2.0}
    family = [{"kind": "eigen", "count": 2}]
    ok = write_config(tmp_path, "be", space, {"k": 0.0, "family": family, "tolerance": 0.0}, name="ok.json")
    bad = write_config(tmp_path, "be", space, {"k": 0.5, "family": family, "tolerance": 0.0}, name="bad.json")
    assert run(["run", ok, "--out", tmp_path / "ok"], capsys)[0] == 0
    assert run(["run", bad, "--out", tmp_path / "bad"], capsys)[0] == 1
    doc = json.loads((tmp_path / "bad" / "report.json").read_text())
    assert doc["verdict"] == "fail" and doc["reports"][0]["witnesses"]


def test_input_errors_exit_2(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    code, _, err = run(["run", broken], capsys)
    assert code == 2 and json.loads(err)["error"] == "InputError"
    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps({"experiment": "be", "space": TINY_INTERVAL, "colour": 1}))
    assert run(["run", extra], capsys)[0] == 2
    unknown = write_config(tmp_path, "be", TINY_INTERVAL, {"kappa": 1}, name="unknown.json")
    assert run(["run", unknown], capsys)[0] == 2
    graph_cd = write_config(tmp_path, "cd", {"kind": "graph", "lengths": [[0, 1], [1, 0]]}, {"pairs": 1}, name="g.json")
    code, _, err = run(["run", graph_cd, "--out", tmp_path / "g"], capsys)
    assert code == 2 and json.loads(err)["error"] == "UnsupportedGeometryError"


def test_numeric_failures_exit_3(tmp_path, capsys, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericError("solver diverged")

    monkeypatch.setattr(cli, "duhamel_residual", explode)
    cfg = write_config(tmp_path, "duhamel", SMOKE["duhamel"][0], SMOKE["duhamel"][1])
    code, _, err = run(["run", cfg, "--out", tmp_path / "x"], capsys)
    assert code == 3 and json.loads(err) == {"error": "NumericError", "message": "solver diverged", "exit_code": 3}


def _strip_time(doc):
    doc = dict(doc)
    doc.pop("timestamp")
    return doc


def test_outputs_are_deterministic_and_consistent(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path, "cd", *SMOKE["cd"], seed=4)
    run(["run", cfg, "--out", tmp_path / "a"], capsys)
    monkeypatch.setenv("RICCI_LAB_THREADS", "2")
    run(["run", cfg, "--out", tmp_path / "b"], capsys)
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert _strip_time(a) == _strip_time(b)
    assert a["schema"] == 1 and a["config"]["seed"] == 4
    with open(tmp_path / "a" / "margins.csv") as fh:
        rows = list(csv.DictReader(fh))
    residuals = [x for r in a["reports"] for x in r["residuals"]]
    assert [float(r["margin"]) for r in rows] == residuals
    assert (tmp_path / "a" / "plotdata" / "action_trace.csv").exists()


def test_seed_override(tmp_path, capsys):
    cfg = write_config(tmp_path, "cd", *SMOKE["cd"], seed=4)
    run(["run", cfg, "--seed", "5", "--out", tmp_path / "s"], capsys)
    assert json.loads((tmp_path / "s" / "report.json").read_text())["seed"] == 5
    assert run(["run", cfg, "--seed", "-1"], capsys)[0] == 2


@pytest.mark.parametrize("experiment", sorted(SMOKE))
def test_every_experiment_runs(experiment, tmp_path, capsys):
    space, params = SMOKE[experiment]
    cfg = write_config(tmp_path, experiment, space, params)
    code, out, err = run(["run", cfg, "--out", tmp_path / "out"], capsys)
    assert code in (0, 1), err
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["experiment"] == experiment and doc["reports"]
    assert out.strip()


def test_console_script_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ricci_lab.cli", "list"], capture_output=True, text=True, check=True)
    assert proc.stdout.split() == cli.list_experiments()
