"""Command line: ``run``, ``sweep``, ``verify`` and ``partition-report``.

Exit codes: 0 success, 1 invalid input (config or chain verification
failure), 2 runtime abort or unreadable chain file.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import engine, report
from .config import ConfigError, config_from_dict, load_config, save_config
from .dataset import label_histograms
from .errors import FedChainError, SimulationError
from .ledger import verify_chain_text

log = logging.getLogger("fedchain")

MAX_SWEEP_CELLS = 10_000
RUN_OUTPUTS = ("metrics.csv", "summary.json", "chain.json", "config.resolved.json")


def _workers(value) -> int:
    if value is None:
        value = os.environ.get("FBP_WORKERS", "1")
    try:
        n = int(value)
    except ValueError:
        raise SystemExit(f"invalid worker count {value!r}")
    return max(1, n)


def _print_config_error(exc: ConfigError) -> None:
    for path, msg in exc.problems:
        print(f"config error at {path}: {msg}", file=sys.stderr)


def _resolve(config_path, out=None, seed=None):
    cfg = load_config(config_path)
    changes = {}
    if seed is not None:
        changes["master_seed"] = seed
    if out is not None:
        changes["output_dir"] = str(out)
    return cfg.with_overrides(**changes) if changes else cfg


def execute(cfg, out_dir, workers: int = 1) -> int:
    """Run one resolved config into ``out_dir``; returns the exit code."""
    out = Path(out_dir)
    num_classes = None
    try:
        result = engine.run(cfg, workers=workers)
    except SimulationError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        out.mkdir(parents=True, exist_ok=True)
        report.write_metrics_csv(exc.partial, out / "metrics.csv", num_classes)
        return 2
    except (FedChainError, OSError) as exc:
        print(f"run aborted during setup: {exc}", file=sys.stderr)
        return 2
    summary = report.summarize(result, cfg) if result.metrics else None
    report.write_outputs(result, summary, out)
    save_config(cfg, out / "config.resolved.json")
    if summary is not None:
        log.info("final accuracy %.4f, chain height %d", summary.final_accuracy, result.chain.tip.height)
    return 0


def cmd_run(config_path, out_dir=None, seed=None, workers=None) -> int:
    try:
        cfg = _resolve(config_path, out_dir, seed)
    except ConfigError as exc:
        _print_config_error(exc)
        return 1
    return execute(cfg, out_dir if out_dir is not None else cfg.output_dir, _workers(workers))


_PATH_TOKEN = re.compile(r"\.([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]")


def parse_json_path(path: str) -> list:
    if not path.startswith("$"):
        raise ValueError(f"JSON path must start with '$': {path!r}")
    tokens, pos = [], 1
    while pos < len(path):
        m = _PATH_TOKEN.match(path, pos)
        if not m:
            raise ValueError(f"cannot parse JSON path {path!r} at offset {pos}")
        tokens.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
        pos = m.end()
    if not tokens:
        raise ValueError("JSON path must name a field")
    return tokens


def set_json_path(doc, path: str, value):
    tokens = parse_json_path(path)
    node = doc
    for tok in tokens[:-1]:
        if isinstance(tok, str):
            node = node.setdefault(tok, {})
        else:
            node = node[tok]
    node[tokens[-1]] = value
    return doc


def parse_axis(spec: str):
    """``$.aggregation.kind=["mean","median"]`` -> ``("$.aggregation.kind", ["mean", "median"])``."""
    path, sep, values = spec.partition("=")
    if not sep:
        raise ValueError(f"axis {spec!r} must look like PATH=JSON_LIST")
    parse_json_path(path)
    vals = json.loads(values)
    if not isinstance(vals, list) or not vals:
        raise ValueError(f"axis {path} needs a non-empty JSON list of values")
    return path, vals


def sweep_cells(axes):
    """Cartesian product of axis values in a fixed order; one dict per cell."""
    paths = [p for p, _ in axes]
    return [dict(zip(paths, combo)) for combo in itertools.product(*[v for _, v in axes])]


def _run_cell(base: dict, base_dir: str, assignments: dict, cell_dir: str) -> dict:
    row = {"status": "ok", "final_accuracy": "", "final_model_digest": "", "error": ""}
    doc = copy.deepcopy(base)
    try:
        for path, value in assignments.items():
            set_json_path(doc, path, copy.deepcopy(value))
        doc["output_dir"] = cell_dir
        cfg = config_from_dict(doc, base_dir=base_dir)
    except ConfigError as exc:
        row.update(status="invalid", error=str(exc).replace("\n", "; "))
        return row
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        row.update(status="invalid", error=f"cannot apply axis values: {exc}")
        return row
    try:
        result = engine.run(cfg)
    except (FedChainError, OSError) as exc:
        row.update(status="failed", error=str(exc).replace("\n", "; "))
        return row
    summary = report.summarize(result, cfg)
    report.write_outputs(result, summary, cell_dir)
    save_config(cfg, Path(cell_dir) / "config.resolved.json")
    row.update(final_accuracy=f"{summary.final_accuracy:.6f}", final_model_digest=result.final_model_digest)
    return row


def cmd_sweep(config_path, axes, out_dir, seed=None, workers=None) -> int:
    """Run the cartesian product of ``axes`` over the base config.

    Cells land in ``out_dir/cell_<k>/``; ``sweep_index.csv`` maps each cell to
    its parameter values, status and final accuracy. A failing cell is
    recorded and the sweep continues.
    """
    try:
        base_cfg = _resolve(config_path, seed=seed)
    except ConfigError as exc:
        _print_config_error(exc)
        return 1
    cells = sweep_cells(axes)
    if len(cells) > MAX_SWEEP_CELLS:
        print(f"sweep has {len(cells)} cells, more than the {MAX_SWEEP_CELLS} limit", file=sys.stderr)
        return 1
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = base_cfg.to_dict()
    base_dir = str(Path(config_path).resolve().parent)
    jobs = [(base, base_dir, cell, str(out / f"cell_{k}")) for k, cell in enumerate(cells)]
    n_workers = _workers(workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_run_cell, *zip(*jobs)))
    else:
        rows = [_run_cell(*job) for job in jobs]
    paths = [p for p, _ in axes]
    with open(out / "sweep_index.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell", *paths, "status", "final_accuracy", "final_model_digest", "error"])
        for k, (cell, row) in enumerate(zip(cells, rows)):
            writer.writerow(
                [f"cell_{k}", *[json.dumps(cell[p], sort_keys=True) for p in paths]]
                + [row["status"], row["final_accuracy"], row["final_model_digest"], row["error"]]
            )
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} sweep cells did not complete", file=sys.stderr)
    return 0


def cmd_verify(chain_path) -> int:
    try:
        text = Path(chain_path).read_text(encoding="utf-8")
        ok, problem = verify_chain_text(text)
    except (OSError, UnicodeDecodeError, ValueError, FedChainError, KeyError, TypeError) as exc:
        print(f"cannot parse chain {chain_path}: {exc}", file=sys.stderr)
        return 2
    if ok:
        print(f"chain OK ({chain_path})")
        return 0
    print(f"chain verification failed: {problem}", file=sys.stderr)
    return 1


def cmd_partition_report(config_path, seed=None, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        cfg = _resolve(config_path, seed=seed)
        state = engine.build_state(cfg)
    except ConfigError as exc:
        _print_config_error(exc)
        return 1
    except (FedChainError, OSError) as exc:
        print(f"cannot build partitions: {exc}", file=sys.stderr)
        return 2
    parts = [n.partition for n in state.nodes]
    hists = label_histograms(state.train_pool, parts)
    c = state.train_pool.num_classes
    print("node\ttrain\tholdout\t" + "\t".join(f"class_{i}" for i in range(c)), file=stream)
    for node, hist in zip(state.nodes, hists):
        flag = "*" if node.malicious else ""
        print(
            f"{node.id}{flag}\t{node.partition.indices.size}\t{node.partition.holdout_indices.size}\t"
            + "\t".join(str(int(v)) for v in hist),
            file=stream,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedchain", description="Blockchain-based decentralized FL simulator")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--workers", default=None, help="training threads (default $FBP_WORKERS or 1)")

    p = sub.add_parser("sweep", help="run a cartesian product of config variations")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", action="append", default=[], metavar="PATH=JSON_LIST")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", default=None, help="parallel cells (default $FBP_WORKERS or 1)")

    p = sub.add_parser("verify", help="verify an exported chain.json")
    p.add_argument("chain", nargs="?")
    p.add_argument("--chain", dest="chain_flag", default=None)

    p = sub.add_parser("partition-report", help="print per-node label histograms")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, args.workers)
    if args.command == "sweep":
        try:
            axes = [parse_axis(a) for a in args.axis]
        except (ValueError, json.JSONDecodeError) as exc:
            print(f"bad --axis: {exc}", file=sys.stderr)
            return 1
        return cmd_sweep(args.config, axes, args.out, args.seed, args.workers)
    if args.command == "verify":
        path = args.chain_flag or args.chain
        if not path:
            print("verify needs a chain path", file=sys.stderr)
            return 2
        return cmd_verify(path)
    return cmd_partition_report(args.config, args.seed)


if __name__ == "__main__":
    sys.exit(main())
