"""Experiment runner: wire topology, strategy, task, training, and metrics.

A JSON config describes a grid of (seed, partition, split, strategy) cells.
Every cell trains one model and contributes one CSV row plus one JSON report.
Cells sharing (seed, partition, split) share the task instance and the
initial model, so strategy comparisons are paired. Reruns of the same config
produce byte-identical outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ConfigParseError, MissingRowsError
from .fedtrain import TrainConfig, run
from .mlp import exit_accuracy, make_classification_task, make_test_set
from .objective import weighted_objective
from .quadratic import QuadraticTask, make_quadratic_task, quadratic_minimizers
from .serving import simulate_serving, weighted_quality
from .strategies import (
    ExitWeights,
    build_sampling_matrix,
    equal_weight,
    exit_pools,
    flops_prop,
    gen_error_adjusted,
)
from .theory import (
    ErrorReport,
    bias_bound,
    bound_B,
    estimate_sigma,
    gen_proxy,
    grad_second_moment,
    opt_error_bound,
    statistical_heterogeneity,
    theory_params,
    tv_distance,
)
from .topology import Topology, budgets_for_split, compute_rate_plan, from_node_dicts

REFERENCE_FLOPS = (78_316_160.0, 694_682_880.0, 1_770_787_840.0)

CSV_COLUMNS = [
    "seed",
    "partition",
    "split",
    "strategy",
    "k",
    "exit1_acc",
    "exit2_acc",
    "exit3_acc",
    "weighted_acc",
    "system_acc_routed",
    "weighted_loss",
    "tv",
    "gen_proxy",
    "opt_bound",
    "empirical_opt_error",
]

STRATEGY_NAMES = ("equal", "flops_prop", "serving_rate", "gen_error_adj")


@dataclass(frozen=True)
class StrategySpec:
    name: str
    k: float = 0.0


@dataclass(frozen=True)
class SplitSpec:
    label: str
    fractions: tuple[float, ...]  # normalized


@dataclass(frozen=True)
class ExperimentConfig:
    topology: Topology
    splits: tuple[SplitSpec, ...] | None
    budgets: dict[str, float] | None
    partitions: tuple[str, ...]
    total_samples: int
    test_samples: int
    task: dict
    flops: tuple[float, ...]
    strategies: tuple[StrategySpec, ...]
    training: dict
    seeds: tuple[int, ...]
    output_dir: str


def _split_label(entries) -> str:
    return "-".join(f"{float(v):g}" for v in entries)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a config file; raise ConfigParseError on any defect."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        topo = from_node_dicts(raw["topology"]["nodes"], raw["topology"].get("num_exits"))
        serving = raw["serving"]
        if ("splits" in serving) == ("budgets" in serving):
            raise ConfigParseError("serving needs exactly one of 'splits' or 'budgets'")
        splits = None
        budgets = None
        if "splits" in serving:
            parsed = []
            for entry in serving["splits"]:
                vec = np.asarray(entry, dtype=float)
                if vec.sum() <= 0 or np.any(vec < 0):
                    raise ConfigParseError(f"bad split {entry}")
                parsed.append(
                    SplitSpec(label=_split_label(entry), fractions=tuple(vec / vec.sum()))
                )
            splits = tuple(parsed)
        else:
            budgets = {str(k): float(v) for k, v in serving["budgets"].items()}

        task = dict(raw["task"])
        kind = task.get("kind")
        if kind not in ("mlp", "quadratic"):
            raise ConfigParseError(f"unknown task kind {kind!r}")

        data = raw.get("data", {})
        partitions = tuple(data.get("partitions", ("none",)))
        if kind == "quadratic" and partitions != ("none",):
            raise ConfigParseError("quadratic tasks take their sizes from the topology")
        if kind == "mlp" and partitions == ("none",):
            raise ConfigParseError("mlp tasks need data.partitions")

        strategies = []
        for s in raw["strategies"]:
            name = s["name"]
            if name not in STRATEGY_NAMES:
                raise ConfigParseError(f"unknown strategy {name!r}")
            strategies.append(StrategySpec(name=name, k=float(s.get("k", 0.0))))

        seeds = tuple(int(s) for s in raw["seeds"])
        if not seeds:
            raise ConfigParseError("need at least one seed")

        flops = tuple(float(f) for f in raw.get("flops", REFERENCE_FLOPS))
        if len(flops) != topo.num_exits:
            raise ConfigParseError("need one flops value per exit")

        return ExperimentConfig(
            topology=topo,
            splits=splits,
            budgets=budgets,
            partitions=partitions,
            total_samples=int(data.get("total_samples", 0)),
            test_samples=int(data.get("test_samples", 0)),
            task=task,
            flops=flops,
            strategies=tuple(strategies),
            training=dict(raw["training"]),
            seeds=seeds,
            output_dir=str(raw.get("output_dir", "results")),
        )
    except ConfigParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParseError(f"malformed config: {exc!r}") from exc


def _build_task(cfg: ExperimentConfig, topo: Topology, partition: str, seed: int):
    spec = cfg.task
    if spec["kind"] == "quadratic":
        return make_quadratic_task(
            topo,
            dim=int(spec.get("dim", 4)),
            eig_range=tuple(spec.get("eig_range", (1.0, 2.0))),
            sigma_range=tuple(spec.get("sigma_range", (0.0, 0.5))),
            center_scale=float(spec.get("center_scale", 1.0)),
            seed=seed,
        )
    return make_classification_task(
        topo,
        partition=partition,
        total_samples=cfg.total_samples,
        input_dim=int(spec.get("input_dim", 16)),
        hidden_dim=int(spec.get("hidden_dim", 32)),
        num_classes=int(spec.get("num_classes", 3)),
        teacher_gain=float(spec.get("teacher_gain", 1.5)),
        seed=seed,
    )


def _train_config(cfg: ExperimentConfig, task, seed: int) -> TrainConfig:
    t = dict(cfg.training)
    schedule = t.get("lr_schedule", "constant")
    mu = float(t.get("mu", 0.0))
    smooth = float(t.get("smoothness", 0.0))
    if schedule == "theory" and mu == 0.0:
        if not isinstance(task, QuadraticTask):
            raise ConfigParseError("theory schedule needs mu/smoothness for mlp tasks")
        mu, smooth = task.mu, task.smoothness
    radius = t.get("projection_radius")
    if radius is None:
        radius = task.radius if isinstance(task, QuadraticTask) else 1e6
    return TrainConfig(
        rounds=int(t["rounds"]),
        local_steps=int(t["local_steps"]),
        batch_size=int(t.get("batch_size", 32)),
        server_lr=float(t.get("server_lr", 1.0)),
        lr_schedule=schedule,
        base_lr=float(t.get("base_lr", 0.1)),
        mu=mu,
        smoothness=smooth,
        projection_radius=float(radius),
        momentum=float(t.get("momentum", 0.0)),
        seed=seed,
    )


def _strategy_weights(
    spec: StrategySpec,
    cfg: ExperimentConfig,
    lam_norm: np.ndarray,
    pools,
) -> ExitWeights:
    if spec.name == "equal":
        return equal_weight(len(lam_norm))
    if spec.name == "flops_prop":
        return flops_prop(cfg.flops)
    if spec.name == "serving_rate":
        return ExitWeights(weights=lam_norm)
    return gen_error_adjusted(lam_norm, pools.sizes, cfg.flops)


def _run_cell(cfg: ExperimentConfig, seed: int, partition: str, split: SplitSpec | None):
    """Train every strategy on one shared task instance; return rows and reports."""
    base = cfg.topology
    if split is not None:
        budgets = budgets_for_split(base, np.asarray(split.fractions))
        topo = base.with_budgets(budgets)
        split_label = split.label
    else:
        topo = base.with_budgets(cfg.budgets)
        split_label = "budgets"
    plan = compute_rate_plan(topo)
    lam_norm = (
        np.asarray(split.fractions) if split is not None else plan.lambda_exit_normalized
    )

    task = _build_task(cfg, topo, partition, seed)
    if task.kind == "mlp":
        topo = topo.with_dataset_sizes(task.sizes)
        test_x, test_y = make_test_set(task, cfg.test_samples, seed)
    else:
        test_x = test_y = None

    rows = []
    reports = {}
    for spec in cfg.strategies:
        sampling = build_sampling_matrix(topo, spec.k)
        pools = exit_pools(topo, sampling)
        weights = _strategy_weights(spec, cfg, lam_norm, pools)
        train_cfg = _train_config(cfg, task, seed)
        w_init = task.init_params(rngmod.stream(seed, rngmod.INIT))
        w_final, _ = run(topo, task, weights, sampling, train_cfg, w_init=w_init)

        tv_value = tv_distance(weights.weights, lam_norm)
        proxy = gen_proxy(weights, cfg.flops, pools.sizes)
        row = {
            "seed": seed,
            "partition": partition,
            "split": split_label,
            "strategy": spec.name,
            "k": spec.k,
            "tv": tv_value,
            "gen_proxy": proxy,
        }
        report = ErrorReport(tv_value=tv_value, gen_proxy=proxy)

        if task.kind == "mlp":
            accs = [
                exit_accuracy(task, w_final, e, test_x, test_y)
                for e in range(1, topo.num_exits + 1)
            ]
            losses = [
                task.loss_on(w_final, test_x, test_y, e)
                for e in range(1, topo.num_exits + 1)
            ]
            outcome = simulate_serving(topo, plan, task, w_final, test_x, test_y)
            for e in range(3):
                row[f"exit{e + 1}_acc"] = accs[e] if e < len(accs) else None
            row["weighted_acc"] = weighted_quality(accs, lam_norm)
            row["system_acc_routed"] = outcome.system_accuracy
            row["weighted_loss"] = weighted_quality(losses, lam_norm)
            row["opt_bound"] = None
            row["empirical_opt_error"] = None
            report.sigma_source = "estimated"
            report.g_per_pair = {
                f"{c}:{e}": estimate_sigma(
                    task, c, e, train_cfg.batch_size, radius=1.0, n_probes=20, seed=seed
                )
                for e in range(1, topo.num_exits + 1)
                for c in pools.clients[e - 1]
            }
            extra = {"serving": outcome.to_dict()}
        else:
            params = theory_params(
                task, weights, sampling, pools, train_cfg.server_lr, train_cfg.local_steps
            )
            gamma_value = statistical_heterogeneity(task, weights, pools)
            b_value = bound_B(params, gamma_value)
            minimum = quadratic_minimizers(task, weights, pools)
            init_dist_sq = float(np.sum((w_init - minimum.w_star) ** 2))
            bound = opt_error_bound(params, b_value, train_cfg.rounds, init_dist_sq)
            empirical = (
                weighted_objective(task, w_final, weights, pools) - minimum.f_star
            )
            pop_losses = [
                task.population_exit_loss(w_final, e)
                for e in range(1, topo.num_exits + 1)
            ]
            for e in range(3):
                row[f"exit{e + 1}_acc"] = None
            row["weighted_acc"] = None
            row["system_acc_routed"] = None
            row["weighted_loss"] = float(np.asarray(pop_losses) @ lam_norm)
            row["opt_bound"] = bound
            row["empirical_opt_error"] = empirical

            g_pairs, g_max = grad_second_moment(params)
            report.gamma_value = gamma_value
            report.g_max = g_max
            report.g_per_pair = {
                f"{c}:{e}": float(g) for (c, e), g in zip(params.pairs, g_pairs)
            }
            report.b_value = b_value
            report.opt_bound = {train_cfg.rounds: bound}
            report.empirical_opt_error = {train_cfg.rounds: empirical}
            report.loss_cap = params.loss_cap
            report.bias_bound = bias_bound(params.loss_cap, weights.weights, lam_norm)
            extra = {}

        rows.append(row)
        reports[(seed, partition, split_label, spec.name, spec.k)] = {
            "seed": seed,
            "partition": partition,
            "split": split_label,
            "strategy": spec.name,
            "k": spec.k,
            "rate_plan": plan.to_dict(),
            "exit_weights": [float(v) for v in weights.weights],
            "sampling_probs": {
                c: [float(p) for p in sampling.probs[i]]
                for i, c in enumerate(sampling.clients)
            },
            "error_report": report.to_dict(),
            **extra,
        }
    return rows, reports


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_experiment(
    config: str | Path | ExperimentConfig,
    out_dir: str | Path | None = None,
    threads: int = 1,
    seed_override: int | None = None,
) -> Path:
    """Run the full grid and write results.csv plus per-cell reports.

    Returns the path of the CSV. Output is byte-identical across reruns of
    the same config regardless of ``threads``.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if seed_override is not None:
        cfg = dataclasses.replace(cfg, seeds=(int(seed_override),))
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)

    split_list: list[SplitSpec | None] = list(cfg.splits) if cfg.splits else [None]
    cells = [
        (seed, partition, split)
        for seed in cfg.seeds
        for partition in cfg.partitions
        for split in split_list
    ]

    all_rows = []
    all_reports = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_cell, cfg, *cell) for cell in cells]
            for future in futures:
                rows, reports = future.result()
                all_rows.extend(rows)
                all_reports.update(reports)
    else:
        for cell in cells:
            rows, reports = _run_cell(cfg, *cell)
            all_rows.extend(rows)
            all_reports.update(reports)

    all_rows.sort(key=lambda r: (r["seed"], r["partition"], r["split"], r["strategy"], r["k"]))
    csv_path = out / "results.csv"
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in all_rows:
            writer.writerow([_format_cell(row.get(col)) for col in CSV_COLUMNS])

    for key in sorted(all_reports):
        seed, partition, split_label, strategy, k = key
        name = f"report_s{seed}_{partition}_{split_label}_{strategy}_k{k:g}.json"
        payload = json.dumps(all_reports[key], indent=2, sort_keys=True)
        (out / "reports" / name).write_text(payload + "\n")
    return csv_path


def compare(csv_path: str | Path, baseline: str, candidate: str) -> list[dict]:
    """Per-(partition, split) mean accuracy deltas, candidate minus baseline."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise MissingRowsError(f"no such results file: {csv_path}")
    by_cell: dict[tuple[str, str], dict[str, dict[int, float]]] = {}
    with csv_path.open() as handle:
        for record in csv.DictReader(handle):
            if record["strategy"] not in (baseline, candidate):
                continue
            if not record["weighted_acc"]:
                continue
            cell = (record["partition"], record["split"])
            per_strategy = by_cell.setdefault(cell, {baseline: {}, candidate: {}})
            per_strategy[record["strategy"]][int(record["seed"])] = float(
                record["weighted_acc"]
            )
    if not by_cell:
        raise MissingRowsError(
            f"no accuracy rows for strategies {baseline!r}/{candidate!r}"
        )
    out = []
    for (partition, split), per_strategy in sorted(by_cell.items()):
        base_rows, cand_rows = per_strategy[baseline], per_strategy[candidate]
        seeds = sorted(set(base_rows) & set(cand_rows))
        if not seeds or set(base_rows) != set(cand_rows):
            raise MissingRowsError(
                f"cell {partition}/{split}: seed grids differ between strategies"
            )
        deltas = np.array([cand_rows[s] - base_rows[s] for s in seeds])
        out.append(
            {
                "partition": partition,
                "split": split,
                "n_seeds": len(seeds),
                "baseline_mean": float(np.mean([base_rows[s] for s in seeds])),
                "candidate_mean": float(np.mean([cand_rows[s] for s in seeds])),
                "delta_mean": float(deltas.mean()),
                "delta_se": float(
                    deltas.std(ddof=1) / np.sqrt(len(seeds)) if len(seeds) > 1 else 0.0
                ),
            }
        )
    return out
