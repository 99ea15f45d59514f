"""Evaluation metrics, sweeps, and the comparison grid.

Everything here reduces to: draw evaluation inputs from the task, run a
configured posterior estimator per input, and score the estimates against
the exact posterior.  Results are emitted as long-format CSV rows so the
downstream plotting story stays language-neutral.

With a fixed seed every function here is deterministic in single-threaded
mode; wall-clock fields are left empty unless timing is requested so CSV
outputs stay byte-identical across runs.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import CorruptionSpec, MixtureTask, generate, true_posterior_batch
from .errors import ValidationError
from .mlp import CeClassifier, MlpScorer
from .sampler import (STRATEGIES, SamplerConfig, posterior_cl, posterior_cp,
                      posterior_cp_batch, posterior_full)
from .schedule import LogLinearSchedule
from .score import Scorer
from .train import (AdamState, TrainConfig, adam_update, clip_global_norm, fit)

PROB_FLOOR_NLL = 1e-12
METHODS = ("cp", "cl", "full")


@dataclass(frozen=True)
class EvalReport:
    top1: float
    top5: float          # NaN when the task has 5 or fewer classes
    mean_tv: float
    nll: float
    nfe: int
    wall_ms: float


def topk_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether the true label ranks in the top k; ties broken by lowest class index."""
    order = np.argsort(-probs, axis=1, kind="stable")
    return (order[:, :k] == labels[:, None]).any(axis=1)


def _run_method(method: str, features: np.ndarray, scorer: Scorer,
                schedule: LogLinearSchedule, cfg: SamplerConfig):
    """Posterior estimates for a batch of inputs; returns (probs, nfe per input)."""
    if method == "cp":
        probs, _, _ = posterior_cp_batch(features, scorer, schedule, cfg)
        return probs, cfg.n_steps
    runner = posterior_cl if method == "cl" else posterior_full
    rows = []
    nfe = 0
    for i, y in enumerate(features):
        est = runner(y, scorer, schedule, replace(cfg, seed=cfg.seed + i))
        rows.append(est.probs)
        nfe = est.nfe
    return np.stack(rows), nfe


def evaluate_on(scorer: Scorer, task: MixtureTask, corruption: CorruptionSpec,
                features: np.ndarray, labels: np.ndarray, sampler_cfg: SamplerConfig,
                schedule: LogLinearSchedule, method: str = "cp",
                timing: bool = False) -> EvalReport:
    """Score a posterior estimator against the exact posterior on given data."""
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}")
    n_eval = features.shape[0]
    q_true = true_posterior_batch(task, features, corruption)
    t0 = time.perf_counter()
    probs, nfe = _run_method(method, features, scorer, schedule, sampler_cfg)
    wall_ms = (time.perf_counter() - t0) * 1e3 if timing else float("nan")
    top1 = float(topk_hits(probs, labels, 1).mean())
    top5 = float(topk_hits(probs, labels, 5).mean()) if task.k > 5 else float("nan")
    mean_tv = float(0.5 * np.abs(probs - q_true).sum(axis=1).mean())
    nll = float(-np.log(np.maximum(probs[np.arange(n_eval), labels], PROB_FLOOR_NLL)).mean())
    return EvalReport(top1, top5, mean_tv, nll, nfe, wall_ms)


def evaluate(scorer: Scorer, task: MixtureTask, corruption: CorruptionSpec,
             sampler_cfg: SamplerConfig, n_eval: int, rng: np.random.Generator,
             schedule: LogLinearSchedule, method: str = "cp",
             timing: bool = False) -> EvalReport:
    """Score a posterior estimator against the exact posterior on fresh draws."""
    if n_eval < 1:
        raise ValidationError("n_eval must be >= 1")
    features, labels = generate(task, n_eval, corruption, rng)
    return evaluate_on(scorer, task, corruption, features, labels, sampler_cfg,
                       schedule, method=method, timing=timing)


def default_sweep_grid(k: int) -> list[tuple[str, int, int]]:
    """(method, steps, n_samples) cells mirroring the quality-efficiency sweep."""
    grid = [("cp", s, 1) for s in (1, 2, 4, 8, 16)]
    grid += [("cl", s, n) for s, n in ((2, 16), (4, 16), (8, 16), (2, 64))]
    grid += [("full", s, 1) for s in (2, 4)]
    return grid


def nfe_sweep(scorer: Scorer, task: MixtureTask, corruption: CorruptionSpec,
              schedule: LogLinearSchedule, n_eval: int, seed: int,
              grid: list[tuple[str, int, int]] | None = None,
              base_cfg: SamplerConfig = SamplerConfig()) -> list[dict]:
    """Accuracy versus scorer-evaluation budget across estimator settings."""
    grid = default_sweep_grid(task.k) if grid is None else grid
    if not grid:
        raise ValidationError("sweep grid must be non-empty")
    rows = []
    for method, steps, n_samples in grid:
        cfg = replace(base_cfg, n_steps=steps, n_samples=n_samples, seed=seed)
        report = evaluate(scorer, task, corruption, cfg, n_eval,
                          np.random.default_rng(seed), schedule, method=method)
        rows.append({
            "method": method, "steps": steps, "n_samples": n_samples if method == "cl" else "",
            "nfe": report.nfe, "top1": report.top1, "top5": report.top5,
            "tv": report.mean_tv,
        })
    return rows


def selection_ablation(scorer: Scorer, task: MixtureTask, corruption: CorruptionSpec,
                       schedule: LogLinearSchedule, steps: int, n_eval: int,
                       seed: int) -> list[dict]:
    """Class-probability sampler under each anchor-selection strategy.

    Strategies can only differ for imperfect scorers; the best row is
    flagged, nothing is asserted about which wins.
    """
    rows = []
    for strategy in STRATEGIES:
        cfg = SamplerConfig(n_steps=steps, strategy=strategy, seed=seed)
        report = evaluate(scorer, task, corruption, cfg, n_eval,
                          np.random.default_rng(seed), schedule, method="cp")
        rows.append({"strategy": strategy, "top1": report.top1, "top5": report.top5,
                     "nfe": report.nfe})
    best = max(range(len(rows)), key=lambda i: rows[i]["top1"])
    for i, row in enumerate(rows):
        row["best"] = 1 if i == best else 0
    return rows


def trace_topk(scorer: Scorer, y: np.ndarray, schedule: LogLinearSchedule,
               sampler_cfg: SamplerConfig, k: int, input_id: int = 0) -> list[dict]:
    """Per-step top-k probabilities of one class-probability run (long format)."""
    cfg = replace(sampler_cfg, record_trajectory=True)
    est = posterior_cp(y, scorer, schedule, cfg)
    assert est.trajectory is not None
    rows = []
    n_steps = cfg.n_steps
    for step in range(est.trajectory.shape[0]):
        p = est.trajectory[step]
        t = max(0.0, 1.0 - step / n_steps)
        order = np.argsort(-p, kind="stable")[:k]
        for cls in order:
            rows.append({"input_id": input_id, "step": step, "t": t,
                         "class": int(cls), "prob": float(p[cls])})
    return rows


def train_ce_baseline(config: TrainConfig, task: MixtureTask,
                      train_data: tuple[np.ndarray, np.ndarray]) -> CeClassifier:
    """Cross-entropy classifier of matched capacity on the same features."""
    features, labels = train_data
    model = CeClassifier(config.mlp_config(task.k, task.dim), seed=config.seed)
    opt = AdamState.init(model.params)
    rng = np.random.default_rng(config.seed)
    n = features.shape[0]
    total_steps = config.epochs * max(1, math.ceil(n / config.batch_size))
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            _, grads = model.loss_and_grads(features[idx], labels[idx])
            clip_global_norm(grads, config.grad_clip)
            if config.lr_schedule == "cosine":
                frac = opt.step / max(total_steps, 1)
                lr = config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))
            else:
                lr = config.learning_rate
            adam_update(model.params, grads, opt, lr, config.betas)
    return model


def compare_grid(task: MixtureTask, corruption_levels: list[float], ratios: list[float],
                 config: TrainConfig, n_train: int, n_eval: int, steps: int,
                 seed: int, corruption_kind: str = "additive-noise") -> list[dict]:
    """Diffusion-classifier vs cross-entropy top-1 across an uncertainty grid.

    Each cell subsamples the training set to the given ratio, trains both
    models from the same data, and reports top-1 plus the exact-posterior
    ceiling; the gain column carries no sign requirement.
    """
    rows = []
    for level in corruption_levels:
        corruption = (CorruptionSpec("none", 0.0) if level == 0.0
                      else CorruptionSpec(corruption_kind, level))
        data_rng = np.random.default_rng([seed, int(level * 1e6)])
        full_train = generate(task, n_train, corruption, data_rng)
        eval_y, eval_c = generate(task, n_eval, corruption, data_rng)
        bayes_pred = np.argmax(true_posterior_batch(task, eval_y, corruption), axis=1)
        bayes_top1 = float((bayes_pred == eval_c).mean())
        for ratio in ratios:
            n_sub = max(config.batch_size, int(round(n_train * ratio)))
            sub = (full_train[0][:n_sub], full_train[1][:n_sub])
            cell_cfg = replace(config, seed=seed)
            scorer, _ = fit(cell_cfg, task, corruption=corruption,
                            train_data=sub, eval_data=(eval_y, eval_c))
            cp_cfg = SamplerConfig(n_steps=steps, seed=seed)
            probs, _, _ = posterior_cp_batch(eval_y, scorer, cell_cfg.schedule(), cp_cfg)
            diff_top1 = float(topk_hits(probs, eval_c, 1).mean())
            baseline = train_ce_baseline(cell_cfg, task, sub)
            base_top1 = float(topk_hits(baseline.predict_proba(eval_y), eval_c, 1).mean())
            rows.append({
                "corruption_level": level, "train_ratio": ratio, "n_train": n_sub,
                "diffusion_top1": diff_top1, "baseline_top1": base_top1,
                "gain": diff_top1 - base_top1, "bayes_top1": bayes_top1,
                "bayes_se": float(np.sqrt(bayes_top1 * (1 - bayes_top1) / n_eval)),
            })
    return rows


def write_csv(path: str, rows: list[dict], columns: list[str] | None = None) -> None:
    """Long-format CSV: header row, UTF-8, LF line endings."""
    if not rows:
        raise ValidationError("no rows to write")
    columns = list(rows[0].keys()) if columns is None else columns
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row.get(k, "")) for k in columns})


def _format_cell(value) -> str:
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(float(value))
    return str(value)
