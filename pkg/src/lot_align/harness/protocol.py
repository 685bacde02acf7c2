"""k-fold evaluation under the complete, inter-modality-missing and
proportional-random-missing settings.

Every (ratio, fold, model) job owns its model and RNG stream; the fold seed is
``derive_seed(config.seed, fold)``. Jobs may run in worker processes (capped by
``LOT_ALIGN_THREADS``) and are reassembled in a fixed order, so the report does
not depend on scheduling.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import io
from ..fusion.model import Availability, FusionModel, ModelDims
from ..fusion.train import fit, predict_proba
from ..numkit import derive_seed
from .config import ExperimentConfig
from .metrics import metrics
from .missing import apply_missing
from .splits import kfold_split, train_test
from .synth import Dataset, synth_dataset

log = logging.getLogger(__name__)

REPORT_SCHEMA = "lot_align.report/1"
METRICS = ("acc", "auc", "f1")
METRIC_CONVENTIONS = {
    "acc": "argmax, ties to the lowest class index",
    "auc": "macro one-vs-rest, rank statistic with midranks; null when undefined",
    "f1": "macro over classes present in truth or prediction",
}
CONDITIONS = {
    "complete": ("complete",),
    "inter_missing": ("fundus_only", "oct_only"),
    "proportional_missing": ("proportional",),
}


@dataclass
class MetricsReport:
    config: dict
    rows: list[dict]
    summary: list[dict]
    metadata: dict
    runtime: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        """Deterministic content; wall-clock runtime is kept out on purpose."""
        return {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "rows": self.rows,
            "summary": self.summary,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict, runtime: float | None = None) -> MetricsReport:
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"not a metrics report (schema {d.get('schema')!r})")
        return cls(d["config"], d["rows"], d["summary"], d["metadata"], runtime)

    def models(self) -> list[str]:
        return sorted({r["model"] for r in self.rows}, key=["full", "ablation"].index)


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.synthetic is not None:
        return synth_dataset(config.synthetic)
    return read_dataset(config.data_path)


def write_dataset(ds: Dataset, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix(out / "fundus.mat", ds.x_f)
    io.write_matrix(out / "oct.mat", ds.x_o)
    io.write_labels(out / "labels.txt", ds.y)
    io.write_json(out / "dataset.json", {"num_classes": ds.num_classes, "n": len(ds)})
    return out


def read_dataset(path) -> Dataset:
    path = Path(path)
    x_f = io.read_matrix(path / "fundus.mat")
    x_o = io.read_matrix(path / "oct.mat")
    y = io.read_labels(path / "labels.txt")
    meta_path = path / "dataset.json"
    C = int(json.loads(meta_path.read_text())["num_classes"]) if meta_path.exists() else int(y.max()) + 1
    return Dataset(x_f, x_o, y, C)


@dataclass(frozen=True)
class Standardizer:
    """Per-feature centering and scaling fitted on the present training rows."""

    mean_f: np.ndarray
    std_f: np.ndarray
    mean_o: np.ndarray
    std_o: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> Standardizer:
        def stats(X, present):
            rows = X[present] if present.any() else X
            sd = rows.std(axis=0)
            return rows.mean(axis=0), np.where(sd > 0, sd, 1.0)

        mf, sf = stats(ds.x_f, ds.availability.fundus)
        mo, so = stats(ds.x_o, ds.availability.oct)
        return cls(mf, sf, mo, so)

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset((ds.x_f - self.mean_f) / self.std_f, (ds.x_o - self.mean_o) / self.std_o,
                       ds.y, ds.num_classes, ds.availability)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mean_f", "std_f", "mean_o", "std_o")}

    @classmethod
    def from_dict(cls, d: dict) -> Standardizer:
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("mean_f", "std_f", "mean_o", "std_o")))


def build_model(config: ExperimentConfig, ds: Dataset, seed: int, use_alignment: bool) -> FusionModel:
    dims = ModelDims(ds.x_f.shape[1], ds.x_o.shape[1], ds.num_classes,
                     config.model.embed, config.model.hidden)
    return FusionModel(dims, seed=seed, use_alignment=use_alignment)


def train_model(config: ExperimentConfig, train_ds: Dataset, seed: int, use_alignment: bool):
    """Standardize, build and fit; returns ``(model, standardizer, history)``."""
    scaler = Standardizer.fit(train_ds)
    tr = scaler.apply(train_ds)
    model = build_model(config, tr, seed, use_alignment)
    tcfg = replace(config.train, seed=seed)
    if not use_alignment:
        w = tcfg.loss_weights
        tcfg = replace(tcfg, loss_weights=(w[0], 0.0, 0.0))
    history = fit(model, tr.x_f, tr.x_o, tr.y, tr.availability, tcfg)
    return model, scaler, history


def eval_conditions(config: ExperimentConfig, test_ds: Dataset, ratio: float, seed: int):
    """``[(condition name, test dataset)]`` for the configured protocol."""
    n = len(test_ds)
    if config.protocol == "complete":
        return [("complete", test_ds)]
    if config.protocol == "inter_missing":
        return [("fundus_only", test_ds.with_availability(Availability.oct_missing(n))),
                ("oct_only", test_ds.with_availability(Availability.fundus_missing(n)))]
    masked, _ = apply_missing(test_ds, config.missing_modality, ratio, derive_seed(seed, 2))
    return [("proportional", masked)]


def evaluate(model: FusionModel, scaler: Standardizer, ds: Dataset) -> dict:
    ts = scaler.apply(ds)
    P = predict_proba(model, ts.x_f, ts.x_o, ts.availability)
    return metrics(ts.y, P)


def _run_job(args):
    config, ds, ratio, fold, train_idx, test_idx, model_name = args
    seed = derive_seed(config.seed, fold)
    train_ds = ds.subset(train_idx)
    if config.protocol == "proportional_missing":
        train_ds, _ = apply_missing(train_ds, config.missing_modality, ratio, derive_seed(seed, 1))
    model, scaler, history = train_model(config, train_ds, seed, model_name == "full")
    rows = []
    for cond, test_ds in eval_conditions(config, ds.subset(test_idx), ratio, seed):
        rows.append({
            "protocol": config.protocol,
            "condition": cond,
            "ratio": ratio,
            "fold": fold,
            "model": model_name,
            "n_train": len(train_ds),
            "n_test": len(test_ds),
            "final_loss": history[-1]["total"] if history else None,
            **evaluate(model, scaler, test_ds),
        })
    return rows


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("LOT_ALIGN_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ValueError(f"LOT_ALIGN_THREADS must be a positive integer, got {cap!r}") from None
    return max(1, min(limit, n_jobs))


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["condition"], r["ratio"], r["model"]), []).append(r)
    out = []
    for (cond, ratio, model), rs in groups.items():
        entry = {"condition": cond, "ratio": ratio, "model": model, "folds": len(rs)}
        for m in METRICS:
            vals = [r[m] for r in rs if r[m] is not None]
            entry[f"{m}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{m}_std"] = float(np.std(vals)) if vals else None
        out.append(entry)
    return out


def run_protocol(config: ExperimentConfig, dataset: Dataset | None = None) -> MetricsReport:
    start = time.perf_counter()
    ds = dataset if dataset is not None else load_dataset(config)
    folds = kfold_split(len(ds), config.folds, config.seed)
    models = ["full", "ablation"] if config.ablation else ["full"]
    jobs = []
    for ratio in config.ratio_grid():
        for fold in range(config.folds):
            tr, te = train_test(folds, fold)
            for name in models:
                jobs.append((config, ds, ratio, fold, tr, te, name))
    workers = worker_count(len(jobs))
    log.info("%s: %d jobs on %d worker(s)", config.protocol, len(jobs), workers)
    if workers == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    rows = [r for rs in results for r in rs]
    report = MetricsReport(
        config=config.to_dict(),
        rows=rows,
        summary=summarize(rows),
        metadata={"metrics": METRIC_CONVENTIONS, "conditions": list(CONDITIONS[config.protocol]),
                  "n_samples": len(ds), "num_classes": ds.num_classes},
    )
    report.runtime = time.perf_counter() - start
    return report
