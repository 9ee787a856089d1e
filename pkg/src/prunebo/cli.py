"""Command-line runner.

Subcommands::

    prunebo run     --net N.net --env synthetic:spec.json --out DIR [--config C.json]
                    [--seed S] [--naive] [--no-rollback]
    prunebo cluster --net N.net --clusters C [--raw-features] [--out DIR]
    prunebo compare --net N.net --env ... --seeds K --out DIR [--config C.json]

``run`` writes ``report.json`` (best policy, stage transitions, timing,
config echo), ``trials.log`` (one JSON record per trial; replayable
bit-for-bit for a fixed seed and environment) and ``curve.csv``
(``trial,best_so_far``). ``compare`` runs the naive / cluster-only /
rollback variants over a batch of seeds, writing per-variant mean and
standard-deviation curves plus a summary table.

Config files are JSON with keys mirroring RunConfig; unknown keys are
rejected so typos fail fast instead of silently using defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionConfig
from .clustering import assignment_lines, build_dendrogram, cut, dendrogram_lines
from .controller import RunConfig, RunReport, cluster_only_config, naive_config, run
from .environment import ExternalEnvironment, SyntheticEnvironment, load_env_spec
from .gp import KernelConfig
from .layers import NetworkDescriptor, feature_matrix, load_network


class CliError(RuntimeError):
    pass


def _dataclass_from_dict(cls, raw: dict, context: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise CliError(f"{context}: unknown config keys {sorted(unknown)}")
    return raw


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    """RunConfig from a JSON file; ``seed`` (the --seed flag) wins over the file."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise CliError(f"{path}: config must be a JSON object")
    raw = dict(raw)
    kernel = KernelConfig(**_dataclass_from_dict(KernelConfig, raw.pop("kernel", {}), "kernel"))
    acq = AcquisitionConfig(
        **_dataclass_from_dict(AcquisitionConfig, raw.pop("acquisition", {}), "acquisition")
    )
    _dataclass_from_dict(RunConfig, {**raw, "kernel": None, "acquisition": None}, "config")
    if "stage_plan" in raw:
        raw["stage_plan"] = tuple(int(v) for v in raw["stage_plan"])
    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig(**raw, kernel=kernel, acquisition=acq)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc


def make_environment(spec: str):
    """Build an evaluator from ``synthetic:<spec.json>`` or ``external:<command>``."""
    kind, _, rest = spec.partition(":")
    if not rest:
        raise CliError("--env must look like synthetic:<spec.json> or external:<command>")
    if kind == "synthetic":
        try:
            return SyntheticEnvironment(load_env_spec(rest))
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load environment spec {rest}: {exc}") from exc
    if kind == "external":
        return ExternalEnvironment(rest)
    raise CliError(f"unknown environment kind {kind!r}")


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def trial_log_lines(report: RunReport) -> list[str]:
    return [
        json.dumps(dataclasses.asdict(entry), separators=(",", ":"))
        for entry in report.trials
    ]


def write_report_files(report: RunReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    best_policy = None if report.best_policy is None else [float(v) for v in report.best_policy]
    payload = {
        "status": report.status,
        "seed": report.seed,
        "best_objective": report.best_objective,
        "best_flops_ratio": report.best_flops_ratio,
        "best_policy": best_policy,
        "stage_transitions": [dataclasses.asdict(t) for t in report.transitions],
        "trial_seconds": report.trial_seconds,
        "config": report.config,
    }
    _atomic_write(out_dir / "report.json", json.dumps(payload, indent=2) + "\n")
    _atomic_write(out_dir / "trials.log", "\n".join(trial_log_lines(report)) + "\n")
    rows = ["trial,best_so_far"]
    rows += [f"{t.trial},{t.best_so_far:.17g}" for t in report.trials]
    _atomic_write(out_dir / "curve.csv", "\n".join(rows) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    net = load_network(args.net)
    config = load_config(args.config, seed=args.seed)
    if args.naive:
        config = naive_config(config, net.num_prunable)
    elif args.no_rollback:
        config = cluster_only_config(config)
    env = make_environment(args.env)
    report = run(net, env, config)
    write_report_files(report, Path(args.out))
    print(f"status: {report.status}")
    print(f"trials: {len(report.trials)}")
    print(f"best objective: {report.best_objective:.6f}")
    print(f"best flops ratio: {report.best_flops_ratio:.6f}")
    if report.best_policy is not None:
        policy = " ".join(f"{v:.4f}" for v in report.best_policy)
        print(f"best policy ({net.num_prunable} layers): {policy}")
    return 0 if report.status == "ok" else 1


def cmd_cluster(args: argparse.Namespace) -> int:
    net = load_network(args.net)
    feats = feature_matrix(net, normalize=not args.raw_features)
    dendro = build_dendrogram(feats)
    if not 1 <= args.clusters <= net.num_prunable:
        raise CliError(
            f"--clusters must lie in [1, {net.num_prunable}] for {net.name}"
        )
    assignment = cut(dendro, args.clusters)
    print(f"network {net.name}: {net.num_prunable} prunable layers, "
          f"{args.clusters} clusters")
    for cid in range(assignment.num_clusters):
        layers = [net.prunable_indices[slot] for slot in assignment.members(cid)]
        print(f"cluster {cid}: layers {' '.join(map(str, layers))}")
    dendro_text = "\n".join(dendrogram_lines(dendro)) + "\n"
    assign_text = (
        "\n".join(assignment_lines(assignment, net.prunable_indices)) + "\n"
    )
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(out_dir / "dendrogram.txt", dendro_text)
        _atomic_write(out_dir / "assignment.txt", assign_text)
    else:
        print("dendrogram (id_a id_b distance):")
        print(dendro_text, end="")
    return 0


COMPARE_VARIANTS = ("naive", "cluster", "rollback")


def _variant_config(variant: str, config: RunConfig, net: NetworkDescriptor) -> RunConfig:
    if variant == "naive":
        return naive_config(config, net.num_prunable)
    if variant == "cluster":
        return cluster_only_config(config)
    return config


def _compare_one(task: tuple[str, str, str, str | None, int]) -> tuple[str, int, list[float]]:
    variant, net_path, env_spec, config_path, seed = task
    net = load_network(net_path)
    config = _variant_config(variant, load_config(config_path, seed=seed), net)
    report = run(net, make_environment(env_spec), config)
    return variant, seed, report.best_so_far_curve()


def cmd_compare(args: argparse.Namespace) -> int:
    net = load_network(args.net)
    load_config(args.config)  # fail fast before spawning workers
    make_environment(args.env)
    tasks = [
        (variant, args.net, args.env, args.config, seed)
        for variant in COMPARE_VARIANTS
        for seed in range(args.seeds)
    ]
    curves: dict[str, dict[int, list[float]]] = {v: {} for v in COMPARE_VARIANTS}
    workers = min(args.jobs or os.cpu_count() or 1, len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for variant, seed, curve in pool.map(_compare_one, tasks):
                curves[variant][seed] = curve
    else:
        for task in tasks:
            variant, seed, curve = _compare_one(task)
            curves[variant][seed] = curve

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"{'variant':<10} {'final mean':>12} {'final sigma':>12}")
    for variant in COMPARE_VARIANTS:
        per_seed = [curves[variant][s] for s in range(args.seeds)]
        stack = np.array(per_seed)
        mean = stack.mean(axis=0)
        sigma = stack.std(axis=0)
        rows = ["trial,mean,sigma"]
        rows += [
            f"{i + 1},{m:.17g},{s:.17g}" for i, (m, s) in enumerate(zip(mean, sigma))
        ]
        _atomic_write(out_dir / f"curve_{variant}.csv", "\n".join(rows) + "\n")
        print(f"{variant:<10} {mean[-1]:>12.6f} {sigma[-1]:>12.6f}")
    summary = ["variant,final_mean,final_sigma"]
    for variant in COMPARE_VARIANTS:
        stack = np.array([curves[variant][s] for s in range(args.seeds)])
        summary.append(
            f"{variant},{stack[:, -1].mean():.17g},{stack[:, -1].std():.17g}"
        )
    _atomic_write(out_dir / "summary.csv", "\n".join(summary) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunebo",
        description="Bayesian optimization of layer-wise pruning budgets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one optimization run")
    p_run.add_argument("--config", default=None, help="JSON config file")
    p_run.add_argument("--net", required=True, help="network descriptor (.net)")
    p_run.add_argument("--env", required=True, help="synthetic:<spec.json> | external:<command>")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=0)
    group = p_run.add_mutually_exclusive_group()
    group.add_argument("--naive", action="store_true", help="no reduction, no rollback")
    group.add_argument("--no-rollback", action="store_true", help="stay in cluster space")
    p_run.set_defaults(handler=cmd_run)

    p_cluster = sub.add_parser("cluster", help="cluster a network's prunable layers")
    p_cluster.add_argument("--net", required=True)
    p_cluster.add_argument("--clusters", type=int, required=True)
    p_cluster.add_argument("--raw-features", action="store_true")
    p_cluster.add_argument("--out", default=None, help="directory for exports")
    p_cluster.set_defaults(handler=cmd_cluster)

    p_cmp = sub.add_parser("compare", help="naive vs cluster-only vs rollback over seeds")
    p_cmp.add_argument("--config", default=None)
    p_cmp.add_argument("--net", required=True)
    p_cmp.add_argument("--env", required=True)
    p_cmp.add_argument("--seeds", type=int, required=True)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--jobs", type=int, default=None, help="parallel runs (default: CPUs)")
    p_cmp.set_defaults(handler=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
