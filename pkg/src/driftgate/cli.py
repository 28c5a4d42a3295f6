"""Command-line entry point: generate, train, benchmark, deploy.

Every command takes --config (YAML), an optional --out overriding the
configured output directory, and --seed overriding the configured seed; all
outputs are deterministic for a fixed config + seed (byte-identical CSVs,
timestamp-free SVG plots). Exit codes: 0 success, 2 config error, 3 data
error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import continual, metrics, scoring, thresholding
from .armodel import ar_loss, cls_loss
from .bundle import load_bundle, save_bundle
from .config import RunConfig, load_config, write_resolved_config
from .continual import DeploymentReport
from .errors import (
    ConfigError,
    DriftgateError,
    TrainingDivergedError,
)
from .pipeline import train_bundle
from .signal import CycleBatch, generate_cycles, load_cycles, save_cycles

_SVG_HASHSALT = "driftgate"


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _data_seeds(seed: int) -> dict:
    states = np.random.SeedSequence(seed).generate_state(4).tolist()
    return dict(zip(("train", "val", "test_id", "test_ood"), states))


def _generate_splits(config: RunConfig, seed: int):
    seeds = _data_seeds(seed)
    id_params = config.data.regimes[config.data.id_regime]
    ood_params = config.data.regimes[config.data.ood_regime]
    return {
        "train": generate_cycles(id_params, config.data.train_count, seeds["train"]),
        "val": generate_cycles(id_params, config.data.val_count, seeds["val"]),
        "test_id": generate_cycles(id_params, config.data.test_id_count, seeds["test_id"]),
        "test_ood": generate_cycles(ood_params, config.data.test_ood_count, seeds["test_ood"]),
    }


def cmd_generate(config: RunConfig, out_dir: Path) -> int:
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    splits = _generate_splits(config, config.seed)
    for name, batch in splits.items():
        save_cycles(data_dir / f"{name}.csv", batch)
    write_resolved_config(out_dir, config)
    print(f"wrote {len(splits)} split files to {data_dir}")
    return 0


def _load_split(out_dir: Path, name: str) -> CycleBatch:
    return load_cycles(out_dir / "data" / f"{name}.csv")


def cmd_train(config: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    train = _load_split(out_dir, "train")
    val = _load_split(out_dir, "val")
    bundle, vq_trace, history = train_bundle(
        train, val, config.model.vq, config.model.ar, config.seed
    )
    save_bundle(out_dir / "bundle.dgb", bundle)
    _write_csv(
        out_dir / "history.csv",
        ["epoch", "phase", "train_loss", "val_loss"],
        [(r.index, r.phase, r.train_loss, r.val_loss) for r in history],
    )
    _write_csv(
        out_dir / "vq_trace.csv",
        ["epoch", "train_loss", "val_recon"],
        [(r["epoch"], r["train_loss"], r["val_recon"]) for r in vq_trace],
    )
    write_resolved_config(out_dir, config)
    print(f"trained bundle -> {out_dir / 'bundle.dgb'} ({len(history)} epoch records)")
    return 0


def _build_method(kind: str, config: RunConfig, bundle, train: CycleBatch) -> scoring.ScoreMethod:
    stats = None
    if kind == scoring.MAHALANOBIS:
        feats = scoring.pooled_features(bundle, train)
        stats = scoring.fit_mahalanobis(feats, train.labels())
    return scoring.ScoreMethod(
        kind,
        temperature=config.benchmark.odin_temperature,
        epsilon=config.benchmark.odin_epsilon,
        stats=stats,
    )


def fit_threshold(method: scoring.ScoreMethod, bundle, val: CycleBatch):
    """Validation-side threshold: partition by correctness, score, ROC, Youden."""
    preds = scoring.predict_labels(bundle, val)
    labels = val.labels()
    pos_idx, _ = thresholding.partition_by_correctness(preds, labels)
    is_positive = np.zeros(len(val), dtype=bool)
    is_positive[pos_idx] = True
    scores = scoring.score_batch(method, bundle, val)
    curve = thresholding.roc_curve(scores, is_positive)
    return thresholding.youden_threshold(curve)


def _subset_metric(metric_fn, preds, labels, mask) -> float:
    return metric_fn(preds[mask], labels[mask])


def _detector_partition_metrics(preds, labels, flags):
    """ID/OOD metric pair under the detector's partition of the evaluation stream.

    Samples the detector accepts (score below threshold) form the ID side;
    flagged samples form the OOD side. If the detector flags everything or
    nothing, no separation is demonstrated and both sides equal the overall
    metric (the unified score then collapses to beta/(1+beta)).
    """
    out = {}
    for name, fn in (("f1", metrics.f1), ("acc", metrics.accuracy)):
        if flags.all() or (~flags).all():
            overall = fn(preds, labels)
            out[f"id_{name}"] = overall
            out[f"ood_{name}"] = overall
        else:
            out[f"id_{name}"] = _subset_metric(fn, preds, labels, ~flags)
            out[f"ood_{name}"] = _subset_metric(fn, preds, labels, flags)
    return out


def _benchmark_one_seed(config: RunConfig, seed: int, bundle=None):
    splits = _generate_splits(config, seed)
    if bundle is None:
        bundle, _, _ = train_bundle(
            splits["train"], splits["val"], config.model.vq, config.model.ar, seed
        )
    eval_batch = CycleBatch(list(splits["test_id"].cycles) + list(splits["test_ood"].cycles))
    from_ood = np.array(
        [False] * len(splits["test_id"]) + [True] * len(splits["test_ood"])
    )
    preds = scoring.predict_labels(bundle, eval_batch)
    labels = eval_batch.labels()
    rows = []
    score_rows = []
    for kind in config.benchmark.methods:
        method = _build_method(kind, config, bundle, splits["train"])
        decision = fit_threshold(method, bundle, splits["val"])
        scores = scoring.score_batch(method, bundle, eval_batch)
        flags = thresholding.flag_ood(scores, decision.theta)
        parts = _detector_partition_metrics(preds, labels, flags)
        row = {
            "method": kind,
            "seed": seed,
            "theta": decision.theta,
            "j_statistic": decision.j_statistic,
            "auroc": metrics.auroc(scores, from_ood),
            "beta": config.benchmark.beta,
            **parts,
        }
        for rho in ("f1", "acc"):
            try:
                row[f"ood_score_{rho}"] = metrics.ood_score(
                    metrics.OodScoreInputs(
                        row[f"id_{rho}"], row[f"ood_{rho}"], config.benchmark.beta
                    )
                )
            except DriftgateError:
                row[f"ood_score_{rho}"] = None  # undefined cell (id metric is 0)
        rows.append(row)
        score_rows.extend(
            (cid, kind, s) for cid, s in zip(eval_batch.cycle_ids(), scores)
        )
    return rows, score_rows


_BENCH_COLUMNS = (
    "method",
    "seed",
    "theta",
    "j_statistic",
    "auroc",
    "id_f1",
    "ood_f1",
    "ood_score_f1",
    "id_acc",
    "ood_acc",
    "ood_score_acc",
    "beta",
)


def cmd_benchmark(config: RunConfig, out_dir: Path, bundle_path=None) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    preset_bundle = None
    if bundle_path is not None:
        if len(config.benchmark.seeds) != 1:
            raise ConfigError(
                "--bundle can only be combined with a single benchmark seed"
            )
        preset_bundle = load_bundle(bundle_path)
    all_rows = []
    first_scores = None
    for seed in config.benchmark.seeds:
        rows, score_rows = _benchmark_one_seed(config, seed, preset_bundle)
        all_rows.extend(rows)
        if first_scores is None:
            first_scores = score_rows
    # aggregate mean/std per method across seeds
    agg_rows = []
    numeric = [c for c in _BENCH_COLUMNS if c not in ("method", "seed")]
    for kind in config.benchmark.methods:
        sub = [r for r in all_rows if r["method"] == kind]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            agg = {"method": kind, "seed": stat}
            for col in numeric:
                vals = [r[col] for r in sub if r[col] is not None]
                agg[col] = float(fn(vals)) if vals else None
            agg_rows.append(agg)

    def cells(row):
        return ["" if row[c] is None else _fmt(row[c]) for c in _BENCH_COLUMNS]

    with open(out_dir / "benchmark.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_BENCH_COLUMNS)
        for row in all_rows + agg_rows:
            writer.writerow(cells(row))
    _write_csv(out_dir / "scores.csv", ["cycle_id", "method", "score"], first_scores)
    write_resolved_config(out_dir, config)
    for row in agg_rows:
        if row["seed"] == "mean":
            shown = "" if row["ood_score_f1"] is None else f"{row['ood_score_f1']:.3f}"
            print(f"{row['method']:>12}: ood_score_f1 mean = {shown}")
    return 0


def _plot_deployment(reports: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = _SVG_HASHSALT
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 4.5))
    styles = {
        continual.NO_CL: ("No CL", "#888888", "--"),
        continual.REPLAY_ALWAYS: ("Replay", "#1f77b4", "-"),
        continual.OOD_REPLAY: ("OOD Replay", "#d62728", "-"),
    }
    ood_report = reports[continual.OOD_REPLAY]
    for rec in ood_report.records:
        if rec.triggered:
            ax.axvspan(rec.index - 0.5, rec.index + 0.5, color="#2ca02c", alpha=0.2, lw=0)
    for strategy, report in reports.items():
        label, color, ls = styles[strategy]
        xs = [r.index for r in report.records]
        ax.plot(xs, report.f1_series(), ls, color=color, label=label)
    ax.set_xlabel("experience")
    ax.set_ylabel("F1")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="lower left")
    ax.set_title("Deployment strategies (shaded: detector triggers)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _deploy_stream(config: RunConfig, seed: int):
    schedule = [
        (config.data.regimes[entry.regime], entry.experiences)
        for entry in config.deploy.schedule
    ]
    return continual.build_stream(schedule, config.deploy.cycles_per_experience, seed)


def cmd_deploy(config: RunConfig, out_dir: Path, bundle_path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(bundle_path)
    splits = _generate_splits(config, config.seed)
    method = _build_method(config.deploy.method, config, bundle, splits["train"])
    decision = fit_threshold(method, bundle, splits["val"])
    stream_seed = int(np.random.SeedSequence(config.seed).generate_state(5)[4])
    stream = _deploy_stream(config, stream_seed)

    reports: dict[str, DeploymentReport] = {}
    for strategy in continual.STRATEGIES:
        reports[strategy] = continual.run_deployment(
            strategy,
            stream,
            bundle,
            method,
            decision.theta,
            config.deploy.adaptation,
            seed=config.seed,
            buffer_seed_data=splits["train"],
        )

    rows = []
    for strategy, report in reports.items():
        for r in report.records:
            rows.append(
                (
                    strategy,
                    r.index,
                    r.regime_tag,
                    r.f1,
                    r.accuracy,
                    r.mean_score,
                    r.flagged_fraction,
                    r.triggered,
                    r.labels_consumed_cumulative,
                )
            )
    _write_csv(
        out_dir / "deploy_report.csv",
        [
            "strategy",
            "experience",
            "regime_tag",
            "f1",
            "accuracy",
            "mean_score",
            "flagged_fraction",
            "triggered",
            "labels_consumed_cumulative",
        ],
        rows,
    )
    savings = continual.label_savings(
        reports[continual.OOD_REPLAY], reports[continual.REPLAY_ALWAYS]
    )
    update_scope = (
        "transformer+classifier" if config.deploy.adaptation.update_ar else "classifier"
    )
    summary_rows = [
        (
            strategy,
            report.trigger_count,
            report.labels_total,
            float(report.f1_series().mean()),
            update_scope,
        )
        for strategy, report in reports.items()
    ]
    _write_csv(
        out_dir / "deploy_summary.csv",
        ["strategy", "trigger_count", "labels_total", "mean_f1", "update_scope"],
        summary_rows,
    )
    _plot_deployment(reports, out_dir / "deploy.svg")
    write_resolved_config(out_dir, config)
    print(
        f"theta={decision.theta:.6g} (J={decision.j_statistic:.3f}) "
        f"method={config.deploy.method}"
    )
    for strategy, report in reports.items():
        print(
            f"{strategy:>14}: triggers={report.trigger_count}/{len(stream)} "
            f"labels={report.labels_total} mean_f1={report.f1_series().mean():.3f}"
        )
    print(f"label_savings={savings:.4f} (ood_replay vs replay_always)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftgate",
        description="Shift detection and gated replay adaptation for sensor cycles",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "write train/val/test CSV splits"),
        ("train", "train the autoencoder + transformer bundle"),
        ("benchmark", "score methods on ID vs OOD test data over seeds"),
        ("deploy", "simulate the three deployment strategies"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if name in ("benchmark", "deploy"):
            p.add_argument("--method", default=None, help="score method override")
        if name == "benchmark":
            p.add_argument("--bundle", default=None, help="reuse a trained bundle (single seed)")
        if name == "deploy":
            p.add_argument("--bundle", required=True, help="trained bundle path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if getattr(args, "method", None) is not None:
            if args.method not in scoring.ALL_METHODS:
                raise ConfigError(f"unknown score method {args.method!r}")
            config.benchmark.methods = [args.method]
            config.deploy.method = args.method
        out_dir = Path(args.out if args.out is not None else config.out_dir)
        if args.command == "generate":
            return cmd_generate(config, out_dir)
        if args.command == "train":
            return cmd_train(config, out_dir)
        if args.command == "benchmark":
            return cmd_benchmark(config, out_dir, args.bundle)
        return cmd_deploy(config, out_dir, args.bundle)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except (DriftgateError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
