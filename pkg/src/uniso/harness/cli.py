"""Command-line driver: ``uniso <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..models import load_checkpoint, save_checkpoint
from ..search import SearchBudget, SearchResult
from ..tasks import read_datasets, read_suite, write_datasets, write_suite
from .config import RunConfig
from .export import export_attention, export_embeddings
from .metrics import EvalReport, evaluate_candidates, rank_table, report_ranks
from .pipeline import few_shot, generate_datasets, load_entries, method_name, run_pipeline, search_task, train_model

log = logging.getLogger("uniso")


def _config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    over = {
        "variant": args.variant,
        "mode": args.mode,
        "optimizer": args.optimizer,
        "budget": args.budget,
        "out": args.out,
        "seeds": None if args.seed is None else [args.seed],
    }
    if args.budget is not None and args.budget < base.final_count:
        over["final_count"] = args.budget
    return base.with_overrides(**over)


def _data(cfg: RunConfig):
    """Suite entries and datasets from the run directory, generating them if absent."""
    out = Path(cfg.out)
    suite, data = out / "suite.json", out / "datasets.jsonl"
    if suite.exists() and data.exists():
        return read_suite(suite), read_datasets(data)
    entries = load_entries(cfg)
    datasets = generate_datasets(entries)
    out.mkdir(parents=True, exist_ok=True)
    write_suite(suite, entries)
    write_datasets(data, datasets.values())
    return entries, datasets


def _pick(entries, task_id: str | None, heldout: bool = False):
    if task_id:
        chosen = [e for e in entries if e.task.id == task_id]
        if not chosen:
            raise SystemExit(f"unknown task {task_id!r}")
        return chosen
    return [e for e in entries if e.heldout == heldout]


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    for e in entries:
        print(f"{e.task.id:<22} n={len(datasets[e.task.id]):<6} D(best)={datasets[e.task.id].best:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    tasks = [e.task for e in entries if not e.heldout]
    state, history = train_model(cfg, cfg.seeds[0], tasks, datasets)
    out = Path(cfg.out)
    save_checkpoint(state, out / "model.uniso")
    (out / "history.json").write_text(json.dumps(history, indent=1) + "\n")
    print(f"saved {out / 'model.uniso'} after {state.step} steps")
    return 0


def cmd_search(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    out = Path(cfg.out)
    state = load_checkpoint(args.checkpoint or out / "model.uniso")
    budget = SearchBudget(cfg.budget, cfg.final_count, cfg.seeds[0])
    for e in _pick(entries, args.task):
        ds = datasets[e.task.id]
        if args.poorest:
            ds = ds.poorest(args.poorest)
        res = search_task(state, e.task, ds, cfg.optimizer, budget)
        res.write_jsonl(out / f"search_{e.task.id}.jsonl")
        print(f"{e.task.id:<22} evals={res.n_evals:<5} best model score={res.best:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    out = Path(cfg.out)
    rows = []
    for e in entries:
        path = out / f"search_{e.task.id}.jsonl"
        if not path.exists():
            continue
        ds = datasets[e.task.id]
        d_best = ds.poorest(args.poorest).best if args.poorest else ds.best
        res = SearchResult.read_jsonl(path)
        rows.append(evaluate_candidates(e.task, res.designs, *e.y_range, d_best))
    if not rows:
        raise SystemExit(f"no search results in {out}")
    report = EvalReport(args.method or method_name(cfg), rows)
    report.write(out)
    sys.stdout.write(report.table())
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    out = Path(cfg.out)
    state = load_checkpoint(args.checkpoint or out / "model.uniso")
    for e in _pick(entries, args.task, heldout=True):
        pairs = datasets[e.task.id].poorest(args.poorest or 100)
        tuned, curve = few_shot(state, e.task, pairs, cfg.seeds[0], epochs=args.epochs, lr=args.lr)
        path = out / f"model_{e.task.id}_fewshot.uniso"
        save_checkpoint(tuned, path)
        print(f"{e.task.id:<22} loss {curve[0]:.4f} -> {curve[-1]:.4f}, saved {path}")
    return 0


def cmd_export_embeddings(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    out = Path(cfg.out)
    state = load_checkpoint(args.checkpoint or out / "model.uniso")
    tasks = [e.task for e in _pick(entries, args.task)]
    n = export_embeddings(state, tasks, datasets, out / "embeddings.tsv")
    print(f"wrote {n} rows to {out / 'embeddings.tsv'}")
    return 0


def cmd_export_attention(args) -> int:
    cfg = _config(args)
    entries, datasets = _data(cfg)
    out = Path(cfg.out)
    state = load_checkpoint(args.checkpoint or out / "model.uniso")
    tasks = [e.task for e in _pick(entries, args.task)]
    shares = export_attention(state, tasks, datasets, out / "attention.tsv", max_inputs=args.max_inputs)
    for tid, s in shares.items():
        print(tid, " ".join(f"{c}={v:.3f}" for c, v in s.items()))
    return 0


def cmd_report(args) -> int:
    reports = {}
    for path in args.reports:
        rep = EvalReport.read(path)
        reports[rep.method if rep.method not in reports else f"{rep.method}:{path}"] = rep
    ranks = report_ranks(reports)
    sys.stdout.write(rank_table(ranks))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "ranks.jsonl", "w") as fh:
            for m, r in ranks.items():
                fh.write(json.dumps({"method": m, **r}, sort_keys=True) + "\n")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    for art in run_pipeline(cfg):
        sys.stdout.write(f"seed {art.seed}\n" + art.report.table())
    return 0


def cmd_acceptance(args) -> int:
    from .acceptance import run_acceptance

    results = run_acceptance(args.criteria, scale=args.scale)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", type=str.upper, choices=["T", "N"])
    common.add_argument("--mode", choices=["vanilla", "improved"])
    common.add_argument("--optimizer", choices=["ea", "cmaes", "bo"])
    common.add_argument("--budget", type=int)
    common.add_argument("--out", help="run directory")
    common.add_argument("--checkpoint", help="model file (default <out>/model.uniso)")
    common.add_argument("--task", help="restrict to one task id")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="uniso", description="Universal string-based offline optimization")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the suite and datasets").set_defaults(fn=cmd_gen_data)
    sub.add_parser("train", parents=[common], help="train one multi-task model").set_defaults(fn=cmd_train)
    s = sub.add_parser("search", parents=[common], help="model-inner search per task")
    s.add_argument("--poorest", type=int, help="search from the poorest k pairs only")
    s.set_defaults(fn=cmd_search)
    s = sub.add_parser("eval", parents=[common], help="oracle-evaluate search results")
    s.add_argument("--poorest", type=int, help="compare against D(best) of the poorest k pairs")
    s.add_argument("--method", help="method label in the report")
    s.set_defaults(fn=cmd_eval)
    s = sub.add_parser("finetune", parents=[common], help="few-shot fine-tuning on held-out tasks")
    s.add_argument("--poorest", type=int, default=100)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--lr", type=float, default=2e-5)
    s.set_defaults(fn=cmd_finetune)
    sub.add_parser("export-embeddings", parents=[common]).set_defaults(fn=cmd_export_embeddings)
    s = sub.add_parser("export-attention", parents=[common])
    s.add_argument("--max-inputs", type=int, default=200)
    s.set_defaults(fn=cmd_export_attention)
    s = sub.add_parser("report", help="average ranks across method reports")
    s.add_argument("reports", nargs="+", help="report.jsonl files")
    s.add_argument("--out")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(fn=cmd_report)
    sub.add_parser("run", parents=[common], help="full pipeline for every configured seed").set_defaults(fn=cmd_run)
    s = sub.add_parser("acceptance", help="run the acceptance criteria")
    s.add_argument("criteria", nargs="*", type=int, help="criterion numbers (default all)")
    s.add_argument("--scale", choices=["desk", "quick"], default="desk")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(fn=cmd_acceptance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(precision=4)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
