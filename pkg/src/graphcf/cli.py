"""Command-line pipeline: generate data, train, explain, evaluate.

Every subcommand resolves its settings as built-in defaults < ``--config``
file < ``GRAPHCF_*`` environment variables < ``--set key=value`` and
dedicated flags, and writes the resolved settings next to its output as
``<output>.config.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .blackbox import BlackBoxModel, split_nodes, train_blackbox
from .datasets import DEFAULTS, DatasetKind, GenConfig, generate
from .evaluation import brute_force_oracle, evaluate, composition_csv, export_dot
from .explainer import explain_nodes, read_results, transductive_config, write_results
from .graph import Graph, GraphError
from .policy import PolicyNetwork
from .trainer import TrainConfig, train_policy

log = logging.getLogger("graphcf")

ENV_PREFIX = "GRAPHCF_"

# Settings that are not TrainConfig fields. TrainConfig fields are accepted as
# they are; fields also used by the transductive explainer may be given a
# "trans_" prefix to override them there only.
BASE_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "kind": "tree-cycles",
    "tree_depth": None,
    "ba_base_size": None,
    "n_motifs": None,
    "n_random_edges": None,
    "feature_dim": 10,
    "ba_m": 5,
    "bb_epochs": 1000,
    "bb_lr": 0.01,
    "bb_hidden": 20,
    "bb_restarts": 3,
    "bb_weight_decay": 0.0,
    "bb_train_frac": 0.8,
    "split": "80/20",
    "filter_correct": True,
    "stop_rule": "best",
    "patience": 50,
    "trans_gamma": 0.6,
    "trans_episodes": 500,
    "trans_lr": 3e-3,
    "ell": None,
    "max_k": 3,
    "max_subsets": 100_000,
}


def _train_defaults() -> dict[str, Any]:
    out = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    out.pop("seed")
    return out


def defaults() -> dict[str, Any]:
    d = dict(BASE_DEFAULTS)
    d.update(_train_defaults())
    return d


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: Any, current: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", "null"):
        return None
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int) or (current is None and text.lstrip("-").isdigit()):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(current, float) or current is None:
        try:
            return float(text)
        except ValueError:
            if current is None:
                return text
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    """JSON object, or flat ``key = value`` lines with ``#`` comments."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return data
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(
    config_file: Optional[str], overrides: Sequence[str], env: Optional[dict] = None
) -> dict[str, Any]:
    cfg = defaults()
    layers: list[dict] = []
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file {config_file} not found")
        layers.append(parse_config_text(path.read_text()))
    env = os.environ if env is None else env
    layers.append({
        k[len(ENV_PREFIX):].lower(): v
        for k, v in env.items()
        if k.startswith(ENV_PREFIX) and k[len(ENV_PREFIX):].lower() in cfg
    })
    cli = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cli[k.strip()] = v
    layers.append(cli)
    for layer in layers:
        for k, v in layer.items():
            if k not in cfg:
                raise ConfigError(f"unknown setting {k!r}")
            cfg[k] = _coerce(k, v, cfg[k])
    return cfg


def gen_config(cfg: dict) -> GenConfig:
    kind = DatasetKind(cfg["kind"])
    params = dict(DEFAULTS[kind])
    for key in ("tree_depth", "ba_base_size", "n_motifs", "n_random_edges"):
        if cfg[key] is not None:
            params[key] = cfg[key]
    return GenConfig(kind=kind, feature_dim=cfg["feature_dim"], ba_m=cfg["ba_m"], seed=cfg["seed"], **params)


def train_config(cfg: dict) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in cfg.items() if k in fields})


def trans_config(cfg: dict) -> TrainConfig:
    base = train_config(cfg)
    over = dict(gamma=cfg["trans_gamma"], episodes=cfg["trans_episodes"], batch_size=1)
    if cfg["trans_lr"] is not None:
        over["lr"] = cfg["trans_lr"]
    return transductive_config(**{**base.to_json(), **over})


# -- node splits -----------------------------------------------------------------------


def node_splits(g: Graph, m: Optional[BlackBoxModel], cfg: dict) -> dict[str, list[int]]:
    """Seeded split of the motif nodes; optionally keep only correctly predicted ones."""
    motif = g.motif_nodes()
    if not motif:
        raise GraphError("dataset has no motif nodes to explain")
    if cfg["split"] == "80/20":
        train, evals = split_nodes(motif, 0.8, cfg["seed"])
        val: list[int] = []
    elif cfg["split"] == "60/20/20":
        train, rest = split_nodes(motif, 0.6, cfg["seed"])
        val, evals = split_nodes(rest, 0.5, cfg["seed"] + 1)
    else:
        raise ConfigError("split must be '80/20' or '60/20/20'")
    out = {"train": train, "val": val, "eval": evals}
    if cfg["filter_correct"] and m is not None:
        pred = m.predict_all(g)
        out = {k: [v for v in nodes if pred[v] == g.true_labels[v]] for k, nodes in out.items()}
    return out


def read_nodes(path: Optional[str], g: Graph, m: BlackBoxModel, cfg: dict, key: str) -> list[int]:
    if path is None:
        return node_splits(g, m, cfg)[key]
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        if key not in data:
            raise ConfigError(f"{path} has no {key!r} node list")
        data = data[key]
    if not isinstance(data, list):
        raise ConfigError(f"{path} must hold a JSON list of node ids")
    return sorted({g.check_node(int(v)) for v in data})


# -- provenance -----------------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_provenance(out: Path, command: str, cfg: dict, inputs: dict[str, Optional[str]]) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "inputs": {k: {"path": v, "sha256": file_digest(v)} for k, v in inputs.items() if v},
    }
    Path(str(out) + ".config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------------------


def _require(path: Optional[str], what: str) -> str:
    if not path:
        raise ConfigError(f"--{what} is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} file {path} not found")
    return path


def cmd_gen_data(args, cfg) -> list[Path]:
    g = generate(gen_config(cfg))
    out = Path(args.out)
    g.save(out)
    write_provenance(out, "gen-data", cfg, {})
    log.info("wrote %s: %d nodes, %d edges", out, g.n_nodes, g.n_edges)
    return [out]


def cmd_train_blackbox(args, cfg) -> list[Path]:
    data = _require(args.data, "data")
    g = Graph.load(data)
    train, test = split_nodes(range(g.n_nodes), cfg["bb_train_frac"], cfg["seed"])
    m, report = train_blackbox(
        g, train, test, lr=cfg["bb_lr"], epochs=cfg["bb_epochs"], seed=cfg["seed"],
        hidden=cfg["bb_hidden"], weight_decay=cfg["bb_weight_decay"], restarts=cfg["bb_restarts"],
    )
    out = Path(args.out)
    m.save(out)
    write_provenance(out, "train-blackbox", cfg, {"data": data})
    log.info("train acc %.4f, test acc %.4f", report.train_accuracy, report.test_accuracy)
    print(json.dumps(report.to_json(), sort_keys=True))
    return [out]


def cmd_train_policy(args, cfg) -> list[Path]:
    data, model = _require(args.data, "data"), _require(args.model, "model")
    g, m = Graph.load(data), BlackBoxModel.load(model)
    splits = node_splits(g, m, cfg)
    tcfg = train_config(cfg)
    policy, tlog = train_policy(m, g, splits["train"], tcfg)
    out = Path(args.out)
    policy.save(out)
    outputs = [out]
    log_path = Path(args.log) if args.log else Path(str(out) + ".log.jsonl")
    tlog.write(log_path)
    split_path = Path(str(out) + ".splits.json")
    split_path.write_text(json.dumps(splits, sort_keys=True) + "\n")
    outputs += [log_path, split_path]
    write_provenance(out, "train-policy", cfg, {"data": data, "model": model})
    return outputs


def cmd_explain(args, cfg) -> list[Path]:
    data, model = _require(args.data, "data"), _require(args.model, "model")
    g, m = Graph.load(data), BlackBoxModel.load(model)
    if args.deletion_only:
        cfg["deletion_only"] = True
    nodes = read_nodes(args.nodes, g, m, cfg, "eval")
    policy = None
    if args.mode == "inductive":
        policy = PolicyNetwork.load(_require(args.policy, "policy"))
    tcfg = trans_config(cfg) if args.mode == "transductive" else train_config(cfg)
    results = explain_nodes(
        args.mode, m, g, nodes, tcfg, policy=policy, workers=args.workers,
        stop_rule=cfg["stop_rule"], patience=cfg["patience"],
    )
    out = Path(args.out)
    write_results(out, results, timing=args.timing)
    write_provenance(
        out, "explain", dict(cfg, mode=args.mode),
        {"data": data, "model": model, "policy": args.policy, "nodes": args.nodes},
    )
    ok = sum(r.success for r in results)
    log.info("%d/%d targets flipped", ok, len(results))
    return [out]


def cmd_evaluate(args, cfg) -> list[Path]:
    data, res_path = _require(args.data, "data"), _require(args.results, "results")
    g = Graph.load(data)
    results = read_results(res_path)
    if not results:
        raise ConfigError(f"{res_path} holds no results")
    report = evaluate(results, g, ell=cfg["ell"])
    out = Path(args.out)
    report.write(out)
    csv_path = Path(str(out) + ".rows.csv")
    csv_path.write_text(report.rows_csv())
    hist_path = Path(str(out) + ".composition.csv")
    hist_path.write_text(composition_csv(report.composition))
    write_provenance(out, "evaluate", cfg, {"data": data, "results": res_path})
    summary = {k: v for k, v in report.to_json().items() if k not in ("rows", "composition")}
    print(json.dumps(summary, sort_keys=True))
    return [out, csv_path, hist_path]


def _oracle_one(m, g, h, max_k, max_subsets, deletion_only, v):
    return brute_force_oracle(m, g, v, h, max_k, max_subsets, deletion_only)


def cmd_oracle(args, cfg) -> list[Path]:
    from .explainer import run_many

    data, model = _require(args.data, "data"), _require(args.model, "model")
    g, m = Graph.load(data), BlackBoxModel.load(model)
    nodes = read_nodes(args.nodes, g, m, cfg, "eval")
    answers = run_many(
        _oracle_one,
        (m, g, cfg["hops"], cfg["max_k"], cfg["max_subsets"], cfg["deletion_only"]),
        nodes,
        args.workers,
    )
    out = Path(args.out)
    with open(out, "w") as fh:
        for a in answers:
            fh.write(json.dumps(a.to_json(), sort_keys=True) + "\n")
    write_provenance(out, "oracle", cfg, {"data": data, "model": model, "nodes": args.nodes})
    return [out]


def cmd_export_viz(args, cfg) -> list[Path]:
    data = _require(args.data, "data")
    g = Graph.load(data)
    result = None
    if args.results:
        matches = [r for r in read_results(_require(args.results, "results")) if r.node == args.node]
        if not matches:
            raise ConfigError(f"no result for node {args.node} in {args.results}")
        result = matches[0]
    out = Path(args.out)
    out.write_text(export_dot(g, args.node, cfg["hops"], result))
    write_provenance(out, "export-viz", dict(cfg, node=args.node), {"data": data, "results": args.results})
    return [out]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-blackbox": cmd_train_blackbox,
    "train-policy": cmd_train_policy,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "export-viz": cmd_export_viz,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphcf", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value or JSON settings file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", required=True, help="output file")
    common.add_argument("--self-check", action="store_true", help="run twice and compare output hashes")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic benchmark graph")
    p.add_argument("--kind", choices=[k.value for k in DatasetKind])

    for name, help_text in [
        ("train-blackbox", "train the GCN classifier"),
        ("train-policy", "train an inductive perturbation policy"),
        ("explain", "produce counterfactuals for target nodes"),
        ("oracle", "exhaustive minimal counterfactuals"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data", help="dataset JSON")
        if name != "train-blackbox":
            p.add_argument("--model", help="black-box checkpoint")
        if name == "train-policy":
            p.add_argument("--log", help="training log (JSONL)")
        if name in ("explain", "oracle"):
            p.add_argument("--nodes", help="JSON node list, or object with an 'eval' list")
            p.add_argument("--workers", type=int, default=1)
        if name == "explain":
            p.add_argument("--mode", choices=["inductive", "transductive", "random"], default="inductive")
            p.add_argument("--policy", help="policy checkpoint (inductive mode)")
            p.add_argument("--deletion-only", action="store_true")
            p.add_argument("--timing", action="store_true", help="include wall time per node")

    p = sub.add_parser("evaluate", parents=[common], help="metrics over result records")
    p.add_argument("--data")
    p.add_argument("--results")

    p = sub.add_parser("export-viz", parents=[common], help="DOT drawing of a counterfactual")
    p.add_argument("--data")
    p.add_argument("--results")
    p.add_argument("--node", type=int, required=True)
    return parser


def _run(args, cfg) -> list[Path]:
    return COMMANDS[args.command](args, dict(cfg))


def self_check(args, cfg) -> bool:
    """Re-run the command into a scratch directory and compare output bytes."""
    first = _run(args, cfg)
    with tempfile.TemporaryDirectory() as tmp:
        rerun = argparse.Namespace(**vars(args))
        rerun.out = str(Path(tmp) / Path(args.out).name)
        if getattr(args, "log", None):
            rerun.log = str(Path(tmp) / Path(args.log).name)
        second = _run(rerun, cfg)
        same = len(first) == len(second) and all(
            file_digest(a) == file_digest(b) for a, b in zip(first, second)
        )
    for path in first:
        log.info("%s sha256 %s", path, file_digest(path))
    return same


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args.config, args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if getattr(args, "kind", None):
            cfg["kind"] = args.kind
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        if args.self_check:
            if not self_check(args, cfg):
                print("graphcf: self-check failed: reruns differ", file=sys.stderr)
                return 3
            log.info("self-check passed")
        else:
            _run(args, cfg)
    except (ConfigError, GraphError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"graphcf: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
