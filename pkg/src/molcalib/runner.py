"""Training, evaluation, ablation, and screening drivers.

Every run is reconstructible from its manifest: the fully resolved
config, the seed, the data accounting, per-epoch mean losses, and the
final evaluation all land in one JSON document whose fingerprint ignores
only wall-clock timing.  Randomness is derived from (seed, epoch)
spawn keys so that shuffling, dropout masks, and MC sampling never
depend on call order elsewhere in the process.

Report CSVs cover each figure family: calibration curve points with the
diagonal reference, entropy and output histograms, per-outcome output
histograms, the screening success curve, scalar metrics, per-epoch
losses, and ranked per-compound predictions.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from . import autodiff as ad
from .config import ExperimentConfig, manifest_fingerprint
from .data import load_dataset, split_dataset
from .errors import NumericalError
from .featurize import MolecularGraph
from .kernels import BACKEND
from .losses import LossConfig, l2_penalty
from .metrics import (
    ReliabilityReport,
    build_report,
    records_from_probs,
)
from .model import GnnModel, save_checkpoint, threshold_label
from .optim import AdamW, StepDecaySchedule

MANIFEST_VERSION = 1


def _build_stamp() -> dict:
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": BACKEND,
    }


# -- CSV emission ----------------------------------------------------


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _histogram_rows(hist) -> list[list]:
    return [[i, hist.edges[i], hist.edges[i + 1], int(c)]
            for i, c in enumerate(hist.counts)]


def emit_report_csvs(report: ReliabilityReport, out_dir: str) -> list[str]:
    """Write every figure-family data series; returns the paths written."""
    reports = os.path.join(out_dir, "reports")
    written = []

    path = os.path.join(reports, "calibration_curve.csv")
    _write_csv(path,
               ["bin_index", "lower", "upper", "midpoint", "count",
                "accuracy", "confidence", "defined"],
               [[i, b.lower, b.upper, 0.5 * (b.lower + b.upper), b.count,
                 b.accuracy, b.confidence, int(b.defined)]
                for i, b in enumerate(report.bins)])
    written.append(path)

    path = os.path.join(reports, "entropy_histogram.csv")
    _write_csv(path, ["bin_index", "lower", "upper", "count"],
               _histogram_rows(report.entropy_hist))
    written.append(path)

    path = os.path.join(reports, "output_histogram.csv")
    _write_csv(path, ["bin_index", "lower", "upper", "count"],
               _histogram_rows(report.output_hist))
    written.append(path)

    path = os.path.join(reports, "outcome_histograms.csv")
    rows = []
    for outcome in ("tp", "fp", "tn", "fn"):
        for row in _histogram_rows(report.outcome_hists[outcome]):
            rows.append([outcome] + row)
    _write_csv(path, ["outcome", "bin_index", "lower", "upper", "count"],
               rows)
    written.append(path)

    path = os.path.join(reports, "screening_curve.csv")
    _write_csv(path, ["k_percent", "screened", "success_rate"],
               [[s.k_percent, s.screened, s.success_rate]
                for s in report.screening])
    written.append(path)

    path = os.path.join(reports, "metrics.csv")
    m = report.metrics
    _write_csv(path, ["metric", "value", "defined"], [
        ["accuracy", m.accuracy, 1],
        ["precision", m.precision, int(m.precision_defined)],
        ["recall", m.recall, int(m.recall_defined)],
        ["f1", m.f1, int(m.f1_defined)],
        ["auroc", report.auroc, int(report.auroc_defined)],
        ["ece", report.ece, 1],
        ["prevalence", report.prevalence, 1],
        ["tp", m.tp, 1], ["fp", m.fp, 1], ["tn", m.tn, 1], ["fn", m.fn, 1],
    ])
    written.append(path)
    return written


def emit_predictions_csv(graphs, probs, threshold: float,
                         out_dir: str) -> str:
    """Ranked compound list, most probable first; ties keep input order."""
    order = np.argsort(-np.asarray(probs), kind="stable")
    rows = []
    for rank, i in enumerate(order, start=1):
        g = graphs[i]
        rows.append([rank, g.source_id or "", g.smiles, probs[i],
                     threshold_label(probs[i], threshold),
                     "" if g.label is None else g.label])
    path = os.path.join(out_dir, "reports", "predictions.csv")
    _write_csv(path, ["rank", "source_id", "smiles", "p_hat", "y_pred",
                      "y_true"], rows)
    return path


# -- inference -------------------------------------------------------


def predict_probabilities(model: GnnModel, graphs, mode: str,
                          mc_samples: int, seed: int) -> np.ndarray:
    """Score graphs under the configured inference mode.

    MC dropout draws its masks from a stream derived from (seed, graph
    index), so scores do not depend on evaluation order.
    """
    probs = np.empty(len(graphs))
    for i, graph in enumerate(graphs):
        if mode == "mc_dropout":
            rng = np.random.default_rng([seed, i])
            probs[i], _ = model.predict_mc_dropout(graph, mc_samples, rng)
        else:
            probs[i] = model.predict_proba(graph)
    return probs


def evaluate_model(model: GnnModel, graphs, config: ExperimentConfig,
                   seed: int) -> tuple[ReliabilityReport, np.ndarray]:
    probs = predict_probabilities(model, graphs, config.inference.mode,
                                  config.inference.mc_samples, seed)
    labels = [g.label for g in graphs]
    records = records_from_probs(probs, labels,
                                 config.evaluation.threshold)
    report = build_report(records,
                          num_bins=config.evaluation.num_bins,
                          k_grid=config.evaluation.k_grid)
    return report, probs


# -- training --------------------------------------------------------


@dataclass
class RunResult:
    model: GnnModel
    manifest: dict
    report: ReliabilityReport
    test_graphs: list
    test_probs: np.ndarray


def _epoch_pass(model, train_graphs, loss_cfg: LossConfig, optimizer,
                lr: float, batch_size: int, seed: int,
                epoch: int) -> float:
    order = np.random.default_rng([seed, epoch]).permutation(
        len(train_graphs))
    dropout_rng = np.random.default_rng([seed, epoch, 1])
    epoch_sum = 0.0
    for start in range(0, len(order), batch_size):
        batch = [train_graphs[i] for i in order[start:start + batch_size]]
        optimizer.zero_grad()
        outputs = [model.forward(g, training=True, rng=dropout_rng)
                   for g in batch]
        p_vec = ad.stack_scalars(outputs)
        targets = np.array([g.label for g in batch], dtype=np.float64)
        batch_sum = loss_cfg.compute(targets, p_vec)
        # objective is the per-sample mean; the summed form stays in the
        # loss ops themselves
        objective = (1.0 / len(batch)) * batch_sum
        ad.backward(objective)
        optimizer.step(lr=lr)
        epoch_sum += batch_sum.item()
    return epoch_sum / len(train_graphs)


def train_run(config: ExperimentConfig, seed: int, graphs=None,
              data_report: dict | None = None, out_dir: str | None = None,
              log=None) -> RunResult:
    """One full training run: fit, evaluate, persist manifest + artifacts.

    `graphs` short-circuits dataset loading so callers can reuse one
    ingestion across seeds.  On numerical failure the offending epoch is
    recorded in both the raised error and, when `out_dir` is given, a
    partial manifest.
    """
    t_start = time.perf_counter()
    if graphs is None:
        graphs, data_report = load_dataset(config.dataset)
    train_graphs, test_graphs = split_dataset(
        graphs, config.training.split_ratio, seed)

    model = GnnModel(config.model, seed=seed)
    optimizer = AdamW(model.parameters(),
                      lr=config.optimizer.learning_rate,
                      betas=(config.optimizer.beta1, config.optimizer.beta2),
                      eps=config.optimizer.eps,
                      weight_decay=config.loss.l2_coefficient,
                      decay_exclude=model.DECAY_EXCLUDE)
    schedule = StepDecaySchedule(config.optimizer.learning_rate,
                                 config.schedule.decay_factor,
                                 config.schedule.decay_epochs)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "seed": seed,
        "config": config.to_dict(),
        "build": _build_stamp(),
        "data": data_report or {},
        "split": {"train_size": len(train_graphs),
                  "test_size": len(test_graphs)},
    }

    epoch_losses = []
    for epoch in range(config.training.epochs):
        lr = schedule.lr_at(epoch)
        try:
            mean_loss = _epoch_pass(model, train_graphs, config.loss,
                                    optimizer, lr,
                                    config.training.batch_size, seed, epoch)
        except NumericalError as err:
            manifest["failed_epoch"] = epoch
            manifest["epoch_losses"] = epoch_losses
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, "manifest.json"), "w",
                          encoding="utf-8") as fh:
                    json.dump(manifest, fh, indent=2)
            raise NumericalError(f"epoch {epoch}: {err}") from err
        epoch_losses.append(mean_loss)
        if log is not None and (epoch % 20 == 0
                                or epoch + 1 == config.training.epochs):
            log(f"epoch {epoch:4d}  lr {lr:.2e}  loss {mean_loss:.6f}")

    t_trained = time.perf_counter()
    report, test_probs = evaluate_model(model, test_graphs, config, seed)
    t_done = time.perf_counter()

    manifest["epoch_losses"] = epoch_losses
    manifest["l2_penalty_final"] = l2_penalty(model.parameters(),
                                              config.loss.l2_coefficient,
                                              model.DECAY_EXCLUDE)
    manifest["evaluation"] = report.to_dict()
    manifest["fingerprint"] = manifest_fingerprint(manifest)
    manifest["timing"] = {
        "train_seconds": t_trained - t_start,
        "evaluate_seconds": t_done - t_trained,
        "finished_unix": time.time(),
    }

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        save_checkpoint(model, os.path.join(out_dir, "checkpoint.json"))
        emit_report_csvs(report, out_dir)
        emit_predictions_csv(test_graphs, test_probs,
                             config.evaluation.threshold, out_dir)
        _write_csv(os.path.join(out_dir, "reports", "epoch_loss.csv"),
                   ["epoch", "mean_loss", "learning_rate"],
                   [[e, loss, schedule.lr_at(e)]
                    for e, loss in enumerate(epoch_losses)])

    return RunResult(model=model, manifest=manifest, report=report,
                     test_graphs=test_graphs, test_probs=test_probs)


# -- screening -------------------------------------------------------


def screen_library(model: GnnModel, config: ExperimentConfig,
                   out_dir: str | None = None,
                   log=None) -> dict:
    """Score a labeled compound library and rank it for screening.

    Labels come through the dataset spec (for activity data, the
    pIC50-threshold rule); the outputs are the ranked compound list, the
    success-rate-vs-depth curve, and per-outcome output histograms.
    """
    graphs, data_report = load_dataset(config.dataset)
    seed = config.training.seeds[0]
    report, probs = evaluate_model(model, graphs, config, seed)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        emit_report_csvs(report, out_dir)
        emit_predictions_csv(graphs, probs, config.evaluation.threshold,
                             out_dir)
    if log is not None:
        for point in report.screening:
            log(f"top {point.k_percent:6.2f}%  screened {point.screened:6d}"
                f"  success rate {point.success_rate:.4f}")
    return {"data": data_report, "evaluation": report.to_dict()}


# -- ablation sweeps -------------------------------------------------

ABLATION_AXES = ("architectures", "regularizers", "focal_grid")

ABLATION_DROPOUT = 0.2
ABLATION_SMOOTHING = 0.1
ABLATION_ENTROPY_WEIGHT = 0.1
FOCAL_WEIGHTS = (0.1, 0.25, 0.5, 0.75)
FOCAL_FOCUSINGS = (1.0, 2.0)


def _with_dropout(config: ExperimentConfig, rate: float,
                  mode: str) -> ExperimentConfig:
    model = replace(config.model, dropout_rate=rate)
    loss = replace(config.loss, l2_coefficient=1e-4 * (1.0 - rate))
    inference = replace(config.inference, mode=mode)
    return replace(config, model=model, loss=loss, inference=inference)


def _with_loss(config: ExperimentConfig, **kwargs) -> ExperimentConfig:
    base = _with_dropout(config, 0.0, "deterministic")
    loss = LossConfig(l2_coefficient=base.loss.l2_coefficient, **kwargs)
    return replace(base, loss=loss)


def ablation_variants(config: ExperimentConfig,
                      axis: str) -> list[tuple[str, ExperimentConfig]]:
    """Named config variants for one sweep axis."""
    if axis == "architectures":
        out = []
        for emb in ("gcn", "gat"):
            for readout in ("sum", "attn"):
                model = replace(config.model, node_embedding=emb,
                                readout=readout)
                out.append((f"{emb}+{readout}",
                            replace(config, model=model)))
        return out
    if axis == "regularizers":
        return [
            ("baseline", _with_loss(config, kind="bce")),
            ("dropout",
             _with_dropout(config, ABLATION_DROPOUT, "deterministic")),
            ("mc_dropout",
             _with_dropout(config, ABLATION_DROPOUT, "mc_dropout")),
            ("label_smoothing",
             _with_loss(config, kind="label_smoothing",
                        smoothing=ABLATION_SMOOTHING)),
            ("entropy_regularized",
             _with_loss(config, kind="entropy_regularized",
                        entropy_weight=ABLATION_ENTROPY_WEIGHT)),
        ]
    if axis == "focal_grid":
        out = []
        for weight in FOCAL_WEIGHTS:
            for focusing in FOCAL_FOCUSINGS:
                name = f"wfl_a{weight}_g{focusing}"
                out.append((name, _with_loss(config, kind="weighted_focal",
                                             positive_weight=weight,
                                             focusing=focusing)))
        return out
    raise ValueError(
        f"unknown ablation axis {axis!r}, expected one of "
        f"{', '.join(ABLATION_AXES)}")


SUMMARY_FIELDS = ("accuracy", "precision", "recall", "f1", "auroc", "ece")


def _metric_row(report: ReliabilityReport) -> dict:
    m = report.metrics
    return {
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "auroc": report.auroc if report.auroc_defined else float("nan"),
        "ece": report.ece,
    }


def run_ablation(config: ExperimentConfig, axis: str,
                 out_dir: str | None = None, log=None) -> dict:
    """Train every variant on every seed; summarize by arithmetic mean.

    The summary CSV keeps per-seed raw rows alongside the means, and the
    axis-specific comparison table is emitted unconditionally, whatever
    direction the numbers point.
    """
    variants = ablation_variants(config, axis)
    graphs, data_report = load_dataset(config.dataset)
    raw_rows = []
    summary_rows = []
    for name, variant in variants:
        per_seed = []
        for seed in variant.training.seeds:
            result = train_run(variant, seed, graphs=graphs,
                               data_report=data_report)
            row = _metric_row(result.report)
            per_seed.append(row)
            raw_rows.append({"variant": name, "seed": seed, **row})
            if log is not None:
                shown = "  ".join(f"{k} {row[k]:.4f}"
                                  for k in SUMMARY_FIELDS)
                log(f"{name:24s} seed {seed}  {shown}")
        mean_row = {field: sum(r[field] for r in per_seed) / len(per_seed)
                    for field in SUMMARY_FIELDS}
        summary_rows.append({"variant": name, "seeds": len(per_seed),
                             **mean_row})

    comparison = _comparison_table(axis, summary_rows)
    result = {"axis": axis, "data": data_report, "raw": raw_rows,
              "summary": summary_rows, "comparison": comparison}

    if out_dir:
        _write_csv(os.path.join(out_dir, "reports", "ablation_raw.csv"),
                   ["variant", "seed", *SUMMARY_FIELDS],
                   [[r["variant"], r["seed"],
                     *[r[f] for f in SUMMARY_FIELDS]] for r in raw_rows])
        _write_csv(os.path.join(out_dir, "reports", "ablation_summary.csv"),
                   ["variant", "seeds", *SUMMARY_FIELDS],
                   [[r["variant"], r["seeds"],
                     *[r[f] for f in SUMMARY_FIELDS]]
                    for r in summary_rows])
        if comparison:
            _write_csv(
                os.path.join(out_dir, "reports",
                             f"comparison_{axis}.csv"),
                list(comparison[0].keys()),
                [list(r.values()) for r in comparison])
    return result


def _comparison_table(axis: str, summary_rows: list[dict]) -> list[dict]:
    """Axis-specific findings table; emitted regardless of direction."""
    if axis == "regularizers":
        by_name = {r["variant"]: r for r in summary_rows}
        base = by_name["baseline"]["ece"]
        return [{"variant": r["variant"], "mean_ece": r["ece"],
                 "ece_delta_vs_baseline": r["ece"] - base,
                 "mean_accuracy": r["accuracy"]}
                for r in summary_rows]
    if axis == "focal_grid":
        out = []
        for r in summary_rows:
            tag = r["variant"]  # wfl_a{weight}_g{focusing}
            weight = float(tag.split("_a")[1].split("_g")[0])
            focusing = float(tag.split("_g")[1])
            out.append({"positive_weight": weight, "focusing": focusing,
                        "mean_precision": r["precision"],
                        "mean_recall": r["recall"]})
        out.sort(key=lambda row: (row["focusing"], row["positive_weight"]))
        return out
    return [{"variant": r["variant"], "mean_accuracy": r["accuracy"],
             "mean_auroc": r["auroc"], "mean_ece": r["ece"]}
            for r in summary_rows]
