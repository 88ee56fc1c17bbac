from __future__ import annotations

import json
import time

import pytest

from graphcf.cli import ConfigError, defaults, main, resolve_config, trans_config

from pipeline import REDUCED, run, run_pipeline


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a.json", "b.json"):
        run("gen-data", "--kind", "tree-cycles", "--seed", 7, *REDUCED, "--out", tmp_path / name)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    prov = json.loads((tmp_path / "a.json.config.json").read_text())
    assert prov["command"] == "gen-data" and prov["config"]["seed"] == 7


def test_config_precedence(tmp_path):
    f = tmp_path / "cfg.txt"
    f.write_text("episodes = 7  # from file\nlr = 0.5\nbeta = 0.25\n")
    env = {"GRAPHCF_LR": "0.1", "GRAPHCF_BETA": "0.3", "UNRELATED": "x"}
    cfg = resolve_config(str(f), ["beta=0.9"], env=env)
    assert cfg["episodes"] == 7 and cfg["lr"] == 0.1 and cfg["beta"] == 0.9
    assert resolve_config(None, [], env={})["gamma"] == defaults()["gamma"] == 0.4
    assert trans_config(cfg).gamma == 0.6 and trans_config(cfg).batch_size == 1
    with pytest.raises(ConfigError):
        resolve_config(None, ["nonsense=1"], env={})
    with pytest.raises(ConfigError):
        resolve_config(None, ["episodes=many"], env={})


def test_json_config(tmp_path):
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps({"split": "60/20/20", "deletion_only": True}))
    cfg = resolve_config(str(f), [], env={})
    assert cfg["split"] == "60/20/20" and cfg["deletion_only"] is True


def test_errors_exit_with_code_two(tmp_path, capsys):
    assert main(["train-blackbox", "--data", str(tmp_path / "missing.json"), "--out", str(tmp_path / "m")]) == 2
    assert main(["gen-data", "--set", "bogus=1", "--out", str(tmp_path / "g")]) == 2
    assert "error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    t0 = time.perf_counter()
    files = run_pipeline(out, episodes=50, extras=True)
    return out, files, time.perf_counter() - t0


def test_smoke_pipeline_under_five_minutes(pipeline_dir):
    out, files, seconds = pipeline_dir
    assert seconds < 300
    report = json.loads((out / "report.json").read_text())
    assert report["n_results"] > 0
    splits = json.loads((out / "policy.json.splits.json").read_text())
    assert not set(splits["train"]) & set(splits["eval"])
    for f in files:
        if f.suffix in (".json", ".jsonl", ".dot") and not f.name.endswith((".config.json", "splits.json", "log.jsonl")):
            prov = json.loads(open(str(f) + ".config.json").read())
            assert "seed" in prov["config"]


def test_inductive_targets_are_unseen(pipeline_dir):
    out, _, _ = pipeline_dir
    splits = json.loads((out / "policy.json.splits.json").read_text())
    records = [json.loads(line) for line in (out / "inductive.jsonl").read_text().splitlines()]
    assert {r["node"] for r in records} == set(splits["eval"])
    assert all(r["size"] == len(r["perturbations"]) for r in records)


def test_evaluate_all_success_gives_zero_fidelity(pipeline_dir, tmp_path):
    out, _, _ = pipeline_dir
    rec = {"node": 1, "success": True, "perturbations": [{"u": 0, "v": 1, "kind": "delete"}],
           "label_before": 1, "label_after": 0, "size": 1, "nbhd_edges": 4}
    res = tmp_path / "r.jsonl"
    res.write_text(json.dumps(rec) + "\n" + json.dumps(dict(rec, node=2)) + "\n")
    data = tmp_path / "d.json"
    run("gen-data", *REDUCED, "--out", data)
    run("evaluate", "--data", data, "--results", res, "--out", tmp_path / "rep.json")
    assert json.loads((tmp_path / "rep.json").read_text())["fidelity"] == 0.0


def test_explain_with_node_file_and_self_check(pipeline_dir, tmp_path):
    out, _, _ = pipeline_dir
    splits = json.loads((out / "policy.json.splits.json").read_text())
    nodes = tmp_path / "nodes.json"
    nodes.write_text(json.dumps(splits["train"][:3]))
    code = main(["explain", "--data", str(out / "data.json"), "--model", str(out / "model.json"),
                 "--policy", str(out / "policy.json"), "--nodes", str(nodes), "--self-check",
                 "--out", str(tmp_path / "r.jsonl")])
    assert code == 0
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 3


def test_viz_and_oracle_outputs(pipeline_dir):
    out, _, _ = pipeline_dir
    assert (out / "viz.dot").read_text().startswith("graph counterfactual {")
    for line in (out / "oracle.jsonl").read_text().splitlines():
        assert json.loads(line)["status"] in ("found", "none", "budget")
