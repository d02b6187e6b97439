"""Experiment orchestration and the CSV artifacts it emits.

Layout written by :func:`run_compare` under ``out_dir``::

    config.txt                      canonical configuration
    manifest.csv                    one row per (variant, seed) with status
    training.csv                    per-interval training rows, every trial
    training_summary.csv            per-trial totals (return, Q, episodes)
    evaluation.csv                  one row per checkpoint + best flags + counts
    <variant>/seed<k>/checkpoint.bin
    <variant>/seed<k>/steps.csv     per-step training log
    <variant>/seed<k>/episodes.csv  per-episode training returns
    <variant>/seed<k>/eval_trials.csv
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import agent
from .config import RunConfig, dumps_config
from .fileio import read_csv, write_atomic, write_csv
from .metrics import COLUMNS, BenchmarkRecord
from .net import dumps_checkpoint, loads_checkpoint

log = logging.getLogger(__name__)

VARIANTS = ("tddm", "baseline")
TRAIN_COLUMNS = ("interval", "start_step", "cumulative_return", "average_q", "episodes")
SUMMARY_COLUMNS = ("env", "variant", "train_seed", "cumulative_return", "average_q", "episodes",
                   "train_masking_amount")
EVAL_COLUMNS = ("env", "variant", "train_seed") + COLUMNS + ("best",)
TRIAL_COLUMNS = ("seed",) + COLUMNS
MANIFEST_COLUMNS = ("variant", "train_seed", "status", "checkpoint")

# columns where a smaller value is the better one
LOWER_IS_BETTER = frozenset({"ST.D.R"})


def env_label(cfg: RunConfig) -> str:
    e = cfg.train.env
    return f"{e.game}-{e.frame_size}"


def write_train_artifacts(directory, params, report: agent.TrainReport):
    os.makedirs(directory, exist_ok=True)
    write_atomic(os.path.join(directory, "checkpoint.bin"), dumps_checkpoint(params))
    write_csv(os.path.join(directory, "train_report.csv"), TRAIN_COLUMNS, train_rows(report))
    write_csv(os.path.join(directory, "episodes.csv"), ("episode", "return"),
              list(enumerate(report.episode_returns)))
    write_csv(os.path.join(directory, "steps.csv"), agent.STEP_LOG_FIELDS, report.step_log)


def train_rows(report: agent.TrainReport):
    return [(i, s, c, q, e) for i, (s, c, q, e) in enumerate(
        zip(report.interval_steps, report.cumulative_return, report.average_q, report.episodes))]


def write_eval_artifacts(path, record: BenchmarkRecord):
    rows = [dict(row, seed=seed) for seed, row in zip(record.seeds, record.trials)]
    write_csv(path, TRIAL_COLUMNS, rows)


def evaluation_from_trials(path) -> dict:
    """Recompute the aggregate row from a per-trial CSV."""
    _, rows = read_csv(path)
    return {c: float(np.mean([r[c] for r in rows])) for c in COLUMNS}


def _run_trial(args):
    """Train one checkpoint and evaluate it; runs inside a worker process when jobs > 1."""
    cfg, variant, seed = args
    tcfg = replace(cfg.train, seed=seed, masking_enabled=(variant == "tddm"))
    params, report = agent.train(tcfg)
    directory = os.path.join(cfg.out_dir, variant, f"seed{seed}")
    write_train_artifacts(directory, params, report)
    record = agent.evaluate(params, tcfg.env, cfg.eval_seeds, cfg.eval_steps,
                            tcfg.flow, tcfg.policy, cfg.eval_epsilon, cfg.bins)
    write_eval_artifacts(os.path.join(directory, "eval_trials.csv"), record)
    amounts = report.mask_amounts
    summary = {
        "cumulative_return": report.total_return,
        "average_q": float(np.mean(report.average_q)),
        "episodes": len(report.episode_returns),
        "train_masking_amount": float(np.mean(amounts)) if amounts else 0.0,
    }
    return variant, seed, train_rows(report), summary, record.aggregate


def best_flags(rows, columns=COLUMNS):
    """Per column, which row indices hold the best value (ties all flagged)."""
    flags = [[] for _ in rows]
    for c in columns:
        vals = np.array([r[c] for r in rows], dtype=np.float64)
        target = vals.min() if c in LOWER_IS_BETTER else vals.max()
        for i in np.flatnonzero(vals == target):
            flags[i].append(c)
    return flags


def run_compare(cfg: RunConfig, jobs: int = 1, progress=None):
    """Train masked and unmasked checkpoints under shared seeds, evaluate all, write tables.

    Returns the list of evaluation rows. Completed trials are recorded in
    ``manifest.csv`` as they finish, so a failure leaves a usable partial set.
    """
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "config.txt"), dumps_config(cfg))
    tasks = [(cfg, v, s) for v in VARIANTS for s in cfg.train_seeds]
    manifest = {(v, s): "pending" for _, v, s in tasks}

    def flush_manifest():
        rows = [(v, s, st, os.path.join(v, f"seed{s}", "checkpoint.bin") if st == "done" else "")
                for (v, s), st in manifest.items()]
        write_csv(os.path.join(out, "manifest.csv"), MANIFEST_COLUMNS, rows)

    flush_manifest()
    results = {}
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for res in pool.map(_run_trial, tasks):
                    results[res[:2]] = res
                    manifest[res[:2]] = "done"
                    flush_manifest()
        else:
            for task in tasks:
                res = _run_trial(task)
                results[res[:2]] = res
                manifest[res[:2]] = "done"
                flush_manifest()
                if progress:
                    progress(res[:2])
    except BaseException:
        for key, st in manifest.items():
            if st == "pending":
                manifest[key] = "failed"
        flush_manifest()
        raise

    label = env_label(cfg)
    train_table, summary_rows, eval_rows = [], [], []
    for _, v, s in tasks:
        _, _, trows, summary, aggregate = results[v, s]
        train_table.extend((v, s) + row for row in trows)
        summary_rows.append(dict(summary, env=label, variant=v, train_seed=s))
        eval_rows.append(dict(aggregate, env=label, variant=v, train_seed=s))
    write_csv(os.path.join(out, "training.csv"), ("variant", "train_seed") + TRAIN_COLUMNS, train_table)
    write_csv(os.path.join(out, "training_summary.csv"), SUMMARY_COLUMNS, summary_rows)

    flags = best_flags(eval_rows)
    for row, f in zip(eval_rows, flags):
        row["best"] = " ".join(f)
    counts = {v: {c: sum(1 for r, f in zip(eval_rows, flags) if r["variant"] == v and c in f)
                  for c in COLUMNS} for v in VARIANTS}
    footer = [dict(counts["tddm"], env="#TDDM", variant="", train_seed="", best=""),
              dict(counts["baseline"], env="#Benchmark", variant="", train_seed="", best="")]
    write_csv(os.path.join(out, "evaluation.csv"), EVAL_COLUMNS, eval_rows + footer)
    return eval_rows


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
