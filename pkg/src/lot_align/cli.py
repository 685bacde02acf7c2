"""Command-line entry point: ``lot-align {synth,align,train,eval,sweep}``.

Exit codes: 0 success, 1 invalid input (config, files, arguments), 2 failure
while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .batch import EmbeddingBatch
from .gromov import GwConfig, feature_plan, labeled_gw
from .numkit import derive_seed
from .prototypes import match_distribution, soft_prototypes

log = logging.getLogger("lot_align")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class InvalidInput(Exception):
    pass


def _load_config(args):
    from .harness.config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _parse_ratios(text: str) -> tuple[float, ...]:
    try:
        ratios = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise InvalidInput(f"--ratios must be a comma-separated list of numbers, got {text!r}") from None
    if not ratios:
        raise InvalidInput("--ratios is empty")
    return ratios


# each command: prepare(args) validates and loads, returning a thunk that does the work

def cmd_synth(args):
    from .harness.protocol import write_dataset
    from .harness.synth import synth_dataset

    cfg = _load_config(args)
    if cfg.synthetic is None:
        raise InvalidInput("synth needs a config with data.synthetic")
    spec = cfg.synthetic if args.seed is None else replace(cfg.synthetic, seed=args.seed)

    def run():
        ds = synth_dataset(spec)
        out = write_dataset(ds, args.out)
        io.write_json(out / "spec.json", spec.to_dict())
        return f"wrote {len(ds)} samples to {out}"

    return run


def cmd_align(args):
    x_f = io.read_matrix(args.embeds_f)
    x_o = io.read_matrix(args.embeds_o)
    y = io.read_labels(args.labels)
    batch = EmbeddingBatch.from_arrays(x_f, x_o, y, args.num_classes)
    if not args.eps > 0:
        raise InvalidInput("--eps must be > 0")
    gw = GwConfig(epsilon=args.eps, seed=args.seed or 0)

    def run():
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t_fo = labeled_gw(batch, "fo", gw)
        t_of = t_fo.transpose()
        t_v = feature_plan(batch, t_of.matrix, gw)
        proto_o = soft_prototypes(match_distribution(t_fo), batch.e_o, "oct")
        proto_f = soft_prototypes(match_distribution(t_of), batch.e_f, "fundus")
        files = {
            "t_c_fo.mat": t_fo.matrix,
            "t_c_of.mat": t_of.matrix,
            "t_v.mat": t_v.matrix,
            "proto_oct.mat": proto_o.protos,
            "proto_fundus.mat": proto_f.protos,
        }
        for name, M in files.items():
            io.write_matrix(out / name, M)
        io.write_json(out / "align.json", {
            "t_c_fo": t_fo.metadata(),
            "t_v": t_v.metadata(),
            "digests": {name: io.digest(M) for name, M in files.items()},
        })
        return f"wrote plans and prototypes for {batch.n} pairs to {out}"

    return run


def cmd_train(args):
    from .fusion.train import save_checkpoint
    from .harness.missing import apply_missing
    from .harness.protocol import load_dataset, train_model
    from .harness.splits import kfold_split, train_test

    cfg = _load_config(args)
    ds = load_dataset(cfg)

    def run():
        folds = kfold_split(len(ds), cfg.folds, cfg.seed)
        tr_idx, te_idx = train_test(folds, 0)
        seed = derive_seed(cfg.seed, 0)
        train_ds = ds.subset(tr_idx)
        ratio = cfg.ratio_grid()[0]
        if cfg.protocol == "proportional_missing":
            train_ds, _ = apply_missing(train_ds, cfg.missing_modality, ratio, derive_seed(seed, 1))
        model, scaler, history = train_model(cfg, train_ds, seed, not cfg.ablation)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = save_checkpoint(model, out / "model.ckpt", extra={
            "experiment": cfg.to_dict(),
            "fold_seed": seed,
            "test_index": te_idx.tolist(),
            "train_ratio": ratio,
            "standardizer": scaler.to_dict(),
        })
        io.write_json(out / "history.json", history)
        last = history[-1]["total"] if history else float("nan")
        return f"trained {len(history)} steps (final loss {last:.4f}); checkpoint {path}"

    return run


def cmd_eval(args):
    from .fusion.train import load_checkpoint
    from .harness.config import PROTOCOLS, ExperimentConfig
    from .harness.protocol import (CONDITIONS, METRIC_CONVENTIONS, MetricsReport, Standardizer,
                                   eval_conditions, evaluate, load_dataset, summarize)
    from .harness.report import emit_report

    if args.protocol not in PROTOCOLS:
        raise InvalidInput(f"unknown protocol {args.protocol!r}; expected one of {PROTOCOLS}")
    model, header = load_checkpoint(args.checkpoint)
    extra = header.get("extra", {})
    if "experiment" not in extra:
        raise InvalidInput("checkpoint was not written by `train` (no experiment record)")
    cfg = ExperimentConfig.from_dict(extra["experiment"])
    ratio = args.ratio if args.ratio is not None else cfg.ratio_grid()[0]
    cfg = replace(cfg, protocol=args.protocol, ratio=ratio, ratios=None)
    ds = load_dataset(cfg)
    test_idx = np.asarray(extra["test_index"], dtype=np.int64)
    scaler = Standardizer.from_dict(extra["standardizer"])
    seed = int(extra["fold_seed"])

    def run():
        name = "full" if model.use_alignment else "ablation"
        rows = []
        for cond, test_ds in eval_conditions(cfg, ds.subset(test_idx), ratio, seed):
            rows.append({"protocol": cfg.protocol, "condition": cond, "ratio": ratio, "fold": 0,
                         "model": name, "n_train": None, "n_test": len(test_ds), "final_loss": None,
                         **evaluate(model, scaler, test_ds)})
        report = MetricsReport(cfg.to_dict(), rows, summarize(rows),
                               {"metrics": METRIC_CONVENTIONS, "conditions": list(CONDITIONS[cfg.protocol]),
                                "checkpoint": str(args.checkpoint)})
        emit_report(report, args.out, formats=("json", "csv"))
        return "\n".join(f"{r['condition']}: acc={r['acc']:.4f} f1={r['f1']:.4f} auc={r['auc']}" for r in rows)

    return run


def cmd_sweep(args):
    from .harness.protocol import run_protocol
    from .harness.report import emit_report

    cfg = _load_config(args)
    ratios = _parse_ratios(args.ratios)
    cfg = replace(cfg, protocol="proportional_missing", ratios=ratios)

    def run():
        report = run_protocol(cfg)
        paths = emit_report(report, args.out)
        lines = [f"{s['model']} ratio={s['ratio']:g} acc={s['acc_mean']:.4f}" for s in report.summary]
        lines.append("wrote " + ", ".join(p.name for p in paths))
        return "\n".join(lines)

    return run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lot-align", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="override the base seed (unsigned 64-bit)")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("align", help="labeled GW plans, feature plan and prototypes for given embeddings")
    s.add_argument("--embeds-f", required=True)
    s.add_argument("--embeds-o", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--num-classes", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("train", help="train on fold 0 of the configured split and save a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on its held-out fold")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--protocol", required=True)
    s.add_argument("--ratio", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="proportional-missing sweep over ratios (JSON, CSV, SVG)")
    s.add_argument("--config", required=True)
    s.add_argument("--ratios", required=True, help="comma list, e.g. 0,0.25,0.5,0.75")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        run = args.func(args)
    except (InvalidInput, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        message = run()
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet and message:
        print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
