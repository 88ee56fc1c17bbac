"""Drive the command-line pipeline end to end on a reduced Tree-Cycles graph."""

from __future__ import annotations

from pathlib import Path

from graphcf.cli import main

REDUCED = ["--set", "tree_depth=5", "--set", "n_motifs=10", "--set", "n_random_edges=5"]


def run(*argv) -> None:
    code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"graphcf {' '.join(map(str, argv))} exited with {code}")


def run_pipeline(out: Path, seed: int = 0, episodes: int = 50, extras: bool = False) -> list[Path]:
    """gen-data, train-blackbox, train-policy, explain, evaluate; returns every artifact.

    ``extras`` adds transductive and random explanations, the oracle and a DOT export.
    """
    out.mkdir(parents=True, exist_ok=True)
    data, model, policy = out / "data.json", out / "model.json", out / "policy.json"
    results, report = out / "inductive.jsonl", out / "report.json"
    seed_args = ["--seed", seed]
    run("gen-data", "--kind", "tree-cycles", *REDUCED, *seed_args, "--out", data)
    run("train-blackbox", "--data", data, *seed_args, "--out", model)
    run("train-policy", "--data", data, "--model", model, *seed_args,
        "--set", f"episodes={episodes}", "--out", policy)
    run("explain", "--mode", "inductive", "--data", data, "--model", model, "--policy", policy,
        *seed_args, "--out", results)
    run("evaluate", "--data", data, "--results", results, *seed_args, "--out", report)
    if extras:
        trans, rand = out / "transductive.jsonl", out / "random.jsonl"
        run("explain", "--mode", "transductive", "--data", data, "--model", model, *seed_args,
            "--set", "trans_episodes=20", "--set", "patience=5", "--out", trans)
        run("explain", "--mode", "random", "--data", data, "--model", model, *seed_args, "--out", rand)
        run("oracle", "--data", data, "--model", model, *seed_args, "--set", "max_k=1", "--set", "hops=2",
            "--out", out / "oracle.jsonl")
        run("export-viz", "--data", data, "--results", results, "--node", _first_node(results),
            "--out", out / "viz.dot")
    return sorted(p for p in out.iterdir() if p.is_file())


def _first_node(results: Path) -> int:
    import json

    return json.loads(results.read_text().splitlines()[0])["node"]
