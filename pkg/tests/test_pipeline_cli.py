import csv
import json

import pytest

from hetmap.cli import main
from hetmap.pipeline import RunConfig, equal_distribution, prepare, run_homogeneous_baselines
from hetmap.search import SearchConfig
from hetmap.workload import LayerSpec, OpKind, TierSupportMatrix, Workload

FAST = ["--population", "12", "--generations", "10", "--probes", "32"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _w(rows, kind=OpKind.LINEAR):
    return Workload("w", (LayerSpec("l", kind, rows, 4, 1, kind is OpKind.DYNAMIC_MATMUL),))


def test_equal_distribution_splits(support):
    assert equal_distribution(_w(9), support).counts == ((3, 3, 3),)
    assert equal_distribution(_w(10), support).counts == ((4, 3, 3),)
    assert equal_distribution(_w(10, OpKind.DYNAMIC_MATMUL), support).counts == ((5, 0, 5),)


def test_homogeneous_baselines_on_toy_mlp():
    setup = prepare(RunConfig(probes=16))
    recs = {r["strategy"].name: r for r in run_homogeneous_baselines(setup)}
    sram, reram, ph = recs["100% SRAM"], recs["100% ReRAM"], recs["100% Photonic"]
    assert sram["result"].accuracy == setup.evaluator.acc0 and sram["degradation"] == 0.0
    assert ph["strategy"].latency_s < sram["strategy"].latency_s < reram["strategy"].latency_s
    assert sram["result"].accuracy >= reram["result"].accuracy >= ph["result"].accuracy
    assert all(r["strategy"].valid for r in recs.values())


def test_reram_baseline_is_invalid_on_pythia():
    setup = prepare(RunConfig(workload="pythia70m"), accuracy=False)
    recs = {r["strategy"].name: r for r in run_homogeneous_baselines(setup)}
    assert not recs["100% ReRAM"]["strategy"].valid
    assert recs["100% SRAM"]["strategy"].valid and recs["100% Photonic"]["strategy"].valid
    assert recs["100% ReRAM"]["strategy"].latency_s > 0


def test_spacesize_output(capsys):
    assert main(["spacesize", "--uniform", "6", "2048"]) == 0
    out = capsys.readouterr().out
    assert "per_row   log10 = 5862.87" in out and "per_count log10 = 37.93" in out


def test_bruteforce_writes_the_exact_front(tmp_path, capsys):
    assert main(["bruteforce", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "front.csv")
    assert "exact front: 17 members" in capsys.readouterr().out
    assert len(rows) == 17 and set(rows[0]) == {"digest", "latency_s", "energy_j", "accuracy"}
    lats = [float(r["latency_s"]) for r in rows]
    ens = [float(r["energy_j"]) for r in rows]
    assert lats == sorted(lats) and ens == sorted(ens, reverse=True)


def test_bruteforce_refuses_large_spaces():
    assert main(["bruteforce", "--workload", "toy_mlp"]) == 4


def test_search_subcommand(tmp_path):
    assert main(["search", "--workload", "pythia70m", "--population", "8", "--generations", "3",
                 "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "trace.csv")) == 4
    assert _rows(tmp_path / "front.csv")


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["search", "--population", "5"]) == 2
    assert main(["pipeline", "--workload", "pythia70m"]) == 2
    assert main(["search", "--workload", str(tmp_path / "missing.json")]) == 2
    assert main(["frobnicate"]) == 2
    bad = tmp_path / "support.json"
    bad.write_text('{"linear": ["SRAM"], "dynamic_matmul": []}')
    assert main(["search", "--workload", "pythia70m", "--support", str(bad)]) == 2
    assert "unmappable" in capsys.readouterr().err


def test_evaluate_subcommand(capsys):
    assert main(["evaluate", "--alloc", "SRAM", "--probes", "8"]) == 0
    assert "degradation 0.0000" in capsys.readouterr().out
    assert main(["evaluate", "--alloc", "[[1, 2]]", "--probes", "8"]) == 2


def test_remap_subcommand_exit_codes(tmp_path):
    assert main(["remap", "--alloc", "Photonic", "--delta", "4", "--probes", "32", "--out", str(tmp_path)]) == 0
    trace = _rows(tmp_path / "remap_trace.csv")
    assert list(trace[0]) == ["iteration", "layer", "from_tier", "to_tier", "delta_rows", "accuracy", "gap"]
    assert json.loads((tmp_path / "summary.json").read_text())["met"] is True
    # a negative bound is rejected as configuration; a capped loop that stops short is "unmet"
    assert main(["remap", "--alloc", "SRAM", "--tau", "-1", "--probes", "8"]) == 2
    assert main(["remap", "--alloc", "Photonic", "--tau", "0", "--max-iters", "2", "--probes", "8"]) == 3


def test_pipeline_writes_all_artifacts_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [main(["pipeline", *FAST, "--seed", "3", "--out", str(d)]) for d in (a, b)]
    assert codes[0] == codes[1] and codes[0] in (0, 3)
    for name in ("front.csv", "trace.csv", "remap_trace.csv", "lep.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    summary = json.loads((a / "summary.json").read_text())
    names = [s["name"] for s in summary["strategies"]]
    assert names == ["100% SRAM", "100% ReRAM", "100% Photonic", "Equal Distribution", "PO", "PO+RR"]
    assert summary["config"]["seed"] == 3 and "out" not in summary["config"]
    lep = _rows(a / "lep.csv")
    assert [r["strategy"] for r in lep] == names
    assert min(float(r["lep"]) for r in lep) >= 0.0


def test_pipeline_seed_changes_results(tmp_path):
    main(["pipeline", *FAST, "--seed", "1", "--out", str(tmp_path / "1")])
    main(["pipeline", *FAST, "--seed", "2", "--out", str(tmp_path / "2")])
    assert (tmp_path / "1" / "summary.json").read_bytes() != (tmp_path / "2" / "summary.json").read_bytes()


def test_tri_objective_mode(tmp_path):
    code = main(["pipeline", "--tri-objective", "--population", "8", "--generations", "3", "--probes", "16",
                 "--threads", "2", "--out", str(tmp_path)])
    assert code in (0, 3)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mode"] == "tri-objective" and summary["strategies"][-1]["name"] == "Tri-objective"
    assert summary["remap_iterations"] == 0
    assert main(["search", "--tri-objective"]) == 2


def test_report_from_csv(tmp_path, capsys):
    table = tmp_path / "t.csv"
    table.write_text("strategy,latency_s,energy_j,quality\nA,1,1,1\nB,2,3,4\n")
    assert main(["report", "--input", str(table), "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "lep.csv")
    assert [float(r["lep"]) for r in rows] == [0.0, 3.0]
    table.write_text("strategy,latency_s\nA,x\n")
    assert main(["report", "--input", str(table)]) == 2


def test_report_default_baselines(capsys):
    assert main(["report", "--probes", "8"]) == 0
    out = capsys.readouterr().out
    assert "Equal Distribution" in out and out.count("LEP") == 4


def test_perplexity_metric_defaults_tau_to_one(tmp_path):
    assert main(["remap", "--metric", "perplexity", "--alloc", "Photonic", "--probes", "8",
                 "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["remap"]["tau"] == 1.0 and summary["iterations"] == 0


def test_run_config_round_trip_is_json_ready():
    cfg = RunConfig(search=SearchConfig(population=8), support={"linear": ["SRAM"]})
    d = cfg.to_dict()
    json.dumps(d)
    assert d["search"]["population"] == 8
    assert TierSupportMatrix.from_dict(cfg.support).allows(OpKind.LINEAR, "SRAM")


@pytest.mark.parametrize("argv", [["--help"], ["pipeline", "--help"]])
def test_help_exits_zero(argv, capsys):
    assert main(argv) == 0
