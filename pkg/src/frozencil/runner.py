"""Experiment orchestration: class-incremental runs, reference regimes,
result bundles, and report rendering.

A run walks the task schedule in order. Fitting for task t only ever
receives task t's train/val views (the structural no-replay guarantee;
an injectable ``AccessMonitor`` lets tests wrap every view and verify
record-level access). After each task t, the accuracy matrix row
a[t, i] for i <= t is filled by global prediction over all classes seen
so far.

Report JSON schema (version 1, deterministic key order, no timestamps):
    {"schema_version": 1, "config": {...}, "config_hash": "sha256:...",
     "per_seed": [{"seed", "baac", "forgetting" (null when undefined),
                   "accuracy_matrix" (nested arrays, null above the
                   diagonal), "histories", "integrity",
                   "prediction_log" (optional)}],
     "aggregate": {"baac_mean", "baac_std", "forgetting_mean",
                   "forgetting_std"}}
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, hyperbolic, projections
from .dataio import EmbeddingDataset, TaskSchedule, select_task
from .errors import ConfigurationError, DataError, FrozencilError
from .metrics import AccuracyMatrix, balanced_accuracy, evaluate_task, forgetting
from .mlp import MlpHead, TrainConfig, head_forward, predict_global, train_head
from .prototypes import (
    FeatureSpace,
    IdentitySpace,
    PrototypeBank,
    add_task,
    fit_prototypes,
    nmc_predict,
)

SCHEMA_VERSION = 1

NMC_VARIANTS = ("base", "norm", "rp", "rp_norm", "hyp", "hyp_norm", "pca", "pca_norm", "lda")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ScheduleConfig:
    """Either n_tasks (+ order/seed) or an explicit class-list partition."""

    n_tasks: int | None = None
    order: str = "contiguous"
    seed: int = 0
    classes: list[list[int]] | None = None


@dataclass
class TrainSettings:
    lr: float = 0.001
    batch_size: int = 200
    max_epochs: int = 200
    patience: int = 20
    hidden_dims: tuple[int, int] = (256, 128)


@dataclass
class VariantSettings:
    rp_dim: int = 4096
    rp_relu: bool = True
    rp_seed: int | None = None  # None: use the run seed
    pca_k: int | None = None  # None: min(d, 256)
    lda_ridge: float | None = None  # None: 1e-4 * trace(S_W) / d
    hyp_dim: int = 128
    hyp_curvature: float = 1.0
    hyp_temperature: float = 0.1
    hyp_epochs: int = 30
    hyp_lr: float = 0.001
    hyp_batch_size: int | None = None  # None: full batch
    hyp_seed: int | None = None  # None: use the run seed


@dataclass
class ExperimentConfig:
    dataset_path: str
    method: str
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    variant: VariantSettings = field(default_factory=VariantSettings)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    log_predictions: bool = False
    balanced_matrix: bool = True
    save_models: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        nested = {
            "schedule": ScheduleConfig,
            "train": TrainSettings,
            "variant": VariantSettings,
        }
        kwargs = {}
        for key, value in raw.items():
            if key in nested:
                sub_cls = nested[key]
                known = sub_cls.__dataclass_fields__
                bad = set(value) - set(known)
                if bad:
                    raise ConfigurationError(f"unknown {key} config keys: {sorted(bad)}")
                if key == "train" and "hidden_dims" in value:
                    value = dict(value, hidden_dims=tuple(value["hidden_dims"]))
                kwargs[key] = sub_cls(**value)
            elif key in cls.__dataclass_fields__:
                kwargs[key] = value
            else:
                raise ConfigurationError(f"unknown config key: {key}")
        if "dataset_path" not in kwargs or "method" not in kwargs:
            raise ConfigurationError("config requires dataset_path and method")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"]["hidden_dims"] = list(out["train"]["hidden_dims"])
        return out


def parse_method(method: str) -> tuple[str, str | None]:
    """Split a method string into (kind, nmc variant or None)."""
    if method in ("mlp", "single", "joint"):
        return method, None
    if method.startswith("nmc:"):
        variant = method.split(":", 1)[1]
        if variant in NMC_VARIANTS:
            return "nmc", variant
    raise ConfigurationError(
        f"unknown method {method!r}: expected mlp, single, joint, or "
        f"nmc:<{'|'.join(NMC_VARIANTS)}>"
    )


def _derive_seed(run_seed: int, stage: int) -> int:
    return int(np.random.SeedSequence((run_seed, stage)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Access monitoring (no-replay verification seam)
# ---------------------------------------------------------------------------

class AccessMonitor:
    """No-op hooks; tests substitute a recorder that wraps views in
    record-access-tracking proxies and checks the no-replay contract."""

    def wrap_view(self, view, task: int, split: str, phase: str):
        return view

    def fit_start(self, task: int):
        pass

    def fit_end(self, task: int):
        pass


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    baac: float
    forgetting: float | None
    matrix: AccuracyMatrix
    histories: list[dict]
    integrity: dict
    prediction_log: dict[int, list[list[int]]] | None = None

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "baac": self.baac,
            "forgetting": self.forgetting,
            "accuracy_matrix": self.matrix.to_nested_lists(),
            "histories": self.histories,
            "integrity": self.integrity,
        }
        if self.prediction_log is not None:
            out["prediction_log"] = {str(k): v for k, v in self.prediction_log.items()}
        return out


@dataclass
class ResultsBundle:
    config: dict
    config_hash: str
    per_seed: list[SeedResult]
    aggregate: dict
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "config_hash": self.config_hash,
            "per_seed": [s.to_dict() for s in self.per_seed],
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


def _aggregate(per_seed: list[SeedResult]) -> dict:
    baacs = [s.baac for s in per_seed]
    out = {
        "baac_mean": float(np.mean(baacs)),
        "baac_std": float(np.std(baacs, ddof=1)) if len(baacs) > 1 else 0.0,
    }
    fs = [s.forgetting for s in per_seed]
    if all(f is not None for f in fs):
        out["forgetting_mean"] = float(np.mean(fs))
        out["forgetting_std"] = float(np.std(fs, ddof=1)) if len(fs) > 1 else 0.0
    else:
        out["forgetting_mean"] = None
        out["forgetting_std"] = None
    return out


# ---------------------------------------------------------------------------
# Shared run helpers
# ---------------------------------------------------------------------------

def _build_schedule(config: ExperimentConfig, dataset: EmbeddingDataset) -> TaskSchedule:
    sc = config.schedule
    if sc.classes is not None:
        schedule = TaskSchedule(tasks=tuple(frozenset(t) for t in sc.classes))
        if not schedule.all_classes() <= set(range(dataset.n_classes)):
            raise ConfigurationError("schedule references classes outside the dataset")
        return schedule
    if sc.n_tasks is None:
        raise ConfigurationError("schedule needs n_tasks or explicit class lists")
    return dataio.make_task_schedule(dataset.n_classes, sc.n_tasks, sc.order, sc.seed)


def _union_test_records(dataset: EmbeddingDataset, schedule: TaskSchedule, through: int):
    classes = schedule.classes_through(through)
    return [r for r in dataset.records if r.label in classes and r.split == "test"]


def _score_final(predictor, dataset, schedule) -> float:
    records = _union_test_records(dataset, schedule, schedule.n_tasks)
    if not records:
        raise DataError("no test records for the scheduled classes")
    preds = [int(predictor(r.embedding)) for r in records]
    labels = [r.label for r in records]
    return balanced_accuracy(preds, labels)


def _log_predictions(predictor, dataset, schedule, through: int) -> list[list[int]]:
    return [
        [int(r.sample_id), int(r.label), int(predictor(r.embedding))]
        for r in _union_test_records(dataset, schedule, through)
    ]


def _fill_row(matrix, predictor, dataset, schedule, t, balanced):
    for i in range(1, t + 1):
        matrix.set(t, i, evaluate_task(predictor, dataset, schedule, i, t, balanced))


# ---------------------------------------------------------------------------
# Method pipelines (one seed each)
# ---------------------------------------------------------------------------

def _run_mlp_seed(config, dataset, schedule, seed, monitor) -> SeedResult:
    T = schedule.n_tasks
    matrix = AccuracyMatrix(T)
    heads: list[MlpHead] = []
    histories = []
    logs = {} if config.log_predictions else None
    frozen_ok = True

    for t in range(1, T + 1):
        before = [h.fingerprint() for h in heads]
        train_view = monitor.wrap_view(select_task(dataset, schedule, t, "train"), t, "train", "fit")
        val_view = monitor.wrap_view(select_task(dataset, schedule, t, "val"), t, "val", "fit")
        cfg = TrainConfig(
            lr=config.train.lr,
            batch_size=config.train.batch_size,
            max_epochs=config.train.max_epochs,
            patience=config.train.patience,
            hidden_dims=tuple(config.train.hidden_dims),
            seed=_derive_seed(seed, t),
        )
        monitor.fit_start(t)
        head, hist = train_head(dataset.dim, sorted(schedule.tasks[t - 1]), train_view, val_view, cfg)
        monitor.fit_end(t)
        frozen_ok &= [h.fingerprint() for h in heads] == before
        heads.append(head)
        histories.append(
            {
                "task": t,
                "train_loss": hist.train_loss,
                "val_accuracy": hist.val_accuracy,
                "best_epoch": hist.best_epoch,
                "stopped_epoch": hist.stopped_epoch,
            }
        )
        snapshot = list(heads)
        predictor = lambda z, hs=snapshot: predict_global(hs, z)[0]
        _fill_row(matrix, predictor, dataset, schedule, t, config.balanced_matrix)
        if logs is not None:
            logs[t] = _log_predictions(predictor, dataset, schedule, t)

    if config.save_models:
        from .mlp import save_head

        out_dir = Path(config.save_models)
        out_dir.mkdir(parents=True, exist_ok=True)
        for t, head in enumerate(heads, start=1):
            save_head(head, out_dir / f"seed{seed}_task{t}.head")

    predictor = lambda z: predict_global(heads, z)[0]
    return SeedResult(
        seed=seed,
        baac=_score_final(predictor, dataset, schedule),
        forgetting=forgetting(matrix),
        matrix=matrix,
        histories=histories,
        integrity={"frozen_past_ok": bool(frozen_ok)},
        prediction_log=logs,
    )


class _NmcState:
    """Per-variant transform state threaded through the task loop."""

    def __init__(self, config: ExperimentConfig, dataset: EmbeddingDataset, seed: int):
        v = config.variant
        self.variant = parse_method(config.method)[1]
        self.pre_norm = self.variant.endswith("norm") and self.variant != "norm"
        self.refits = self.variant in ("pca", "pca_norm", "lda")
        d = dataset.dim
        self.space: FeatureSpace | None = None
        self.stats = projections.StreamStats.empty(d)
        self.pca_k = v.pca_k if v.pca_k is not None else min(d, 256)
        self.lda_ridge = v.lda_ridge
        self.hyp_history: list[float] = []
        self.hyp_val_history: list[float] = []

        if self.variant == "base":
            self.space = IdentitySpace()
        elif self.variant == "norm":
            self.space = projections.NormalizedSpace()
        elif self.variant in ("rp", "rp_norm"):
            proj = projections.init_random_projection(
                d, v.rp_dim, seed=v.rp_seed if v.rp_seed is not None else seed, relu=v.rp_relu
            )
            self.space = projections.RandomProjectionSpace(proj, pre_normalize=self.pre_norm)
        # pca/lda spaces are fit at each task boundary; hyp is trained on task 1

    def ensure_space(self, config, dataset, view, seed, t, val_view=None):
        """Fit or refit the transform for task t, before prototype fitting."""
        v = config.variant
        if self.variant in ("hyp", "hyp_norm") and t == 1:
            pre = [
                projections.l2_normalize(r.embedding) if self.pre_norm
                else np.asarray(r.embedding, dtype=np.float64)
                for r in view.records
            ]
            rms = float(np.sqrt(np.mean([u @ u for u in pre])))
            params = hyperbolic.init_hyp_projection(
                dataset.dim,
                p=v.hyp_dim,
                curvature=v.hyp_curvature,
                temperature=v.hyp_temperature,
                seed=v.hyp_seed if v.hyp_seed is not None else seed,
                normalize_input=self.pre_norm,
                input_scale=max(rms, 1e-12),
            )
            cfg = TrainConfig(
                lr=v.hyp_lr,
                batch_size=v.hyp_batch_size or max(len(view.records), 1),
                max_epochs=v.hyp_epochs,
                seed=_derive_seed(seed, 0),
            )
            params, hist = hyperbolic.train_hyp_projection(params, view, cfg, val_view=val_view)
            self.hyp_history = hist.train_loss
            self.hyp_val_history = hist.val_loss
            self.space = hyperbolic.HyperbolicSpace(params)
        elif self.refits:
            pre = np.stack(
                [
                    projections.l2_normalize(r.embedding) if self.pre_norm
                    else np.asarray(r.embedding, dtype=np.float64)
                    for r in view.records
                ]
            )
            labels = [r.label for r in view.records]
            self.stats = projections.update_stats(self.stats, pre, labels)
            if self.variant in ("pca", "pca_norm"):
                model = projections.pca_fit(self.stats, self.pca_k)
                self.space = projections.PcaSpace(model, pre_normalize=self.pre_norm)
            else:
                model = projections.lda_fit(self.stats, self.lda_ridge)
                self.space = projections.LdaSpace(model)


def _run_nmc_seed(config, dataset, schedule, seed, monitor) -> SeedResult:
    T = schedule.n_tasks
    matrix = AccuracyMatrix(T)
    state = _NmcState(config, dataset, seed)
    logs = {} if config.log_predictions else None
    frozen_ok = True
    # per-class aggregates persist across refits; prototypes are derived
    aggregates: dict[int, tuple[int, np.ndarray]] = {}
    bank: PrototypeBank | None = None

    for t in range(1, T + 1):
        train_view = monitor.wrap_view(select_task(dataset, schedule, t, "train"), t, "train", "fit")
        if state.variant in ("hyp", "hyp_norm") and t == 1:
            val_view = monitor.wrap_view(select_task(dataset, schedule, t, "val"), t, "val", "fit")
        else:
            val_view = None
        monitor.fit_start(t)
        before = {cls: (cnt, raw.tobytes()) for cls, (cnt, raw) in aggregates.items()}
        if bank is not None and not state.refits:
            before_bank = bank.fingerprints()
        else:
            before_bank = None

        state.ensure_space(config, dataset, train_view, seed, t, val_view=val_view)
        space = state.space
        entries = fit_prototypes(train_view, space, expected_classes=schedule.tasks[t - 1])
        for cls, _proto, count, raw_mean in entries:
            if cls in aggregates:
                raise DataError(f"class {cls} appears in more than one task")
            aggregates[cls] = (count, raw_mean)

        if state.refits:
            # the transform changed: re-derive every prototype from its
            # frozen raw mean (exact for affine maps), then add new ones
            bank = PrototypeBank.empty(space.space_id)
            reprojected = [
                (cls, space.project(raw_mean), count, raw_mean)
                for cls, (count, raw_mean) in sorted(aggregates.items())
                if cls not in {c for c, *_ in entries}
            ]
            bank = add_task(bank, reprojected)
            bank = add_task(bank, entries)
        else:
            if bank is None:
                bank = PrototypeBank.empty(space.space_id)
            bank = add_task(bank, entries)
            if before_bank is not None:
                after = bank.fingerprints()
                frozen_ok &= all(after[cls] == fp for cls, fp in before_bank.items())

        # raw aggregates of earlier classes must never change
        after_aggr = {cls: (cnt, raw.tobytes()) for cls, (cnt, raw) in aggregates.items()}
        frozen_ok &= all(after_aggr[cls] == snap for cls, snap in before.items())
        monitor.fit_end(t)

        current_bank, current_space = bank, space
        predictor = lambda z, b=current_bank, s=current_space: nmc_predict(b, s, z)
        _fill_row(matrix, predictor, dataset, schedule, t, config.balanced_matrix)
        if logs is not None:
            logs[t] = _log_predictions(predictor, dataset, schedule, t)

    if config.save_models:
        from .prototypes import save_bank

        out_dir = Path(config.save_models)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_bank(bank, out_dir / f"seed{seed}.bank")

    histories = []
    if state.hyp_history:
        histories.append(
            {"task": 1, "hyp_train_loss": state.hyp_history,
             "hyp_val_loss": state.hyp_val_history}
        )
    predictor = lambda z: nmc_predict(bank, state.space, z)
    return SeedResult(
        seed=seed,
        baac=_score_final(predictor, dataset, schedule),
        forgetting=forgetting(matrix),
        matrix=matrix,
        histories=histories,
        integrity={"frozen_past_ok": bool(frozen_ok)},
        prediction_log=logs,
    )


def _union_view(dataset: EmbeddingDataset, schedule: TaskSchedule, split: str) -> EmbeddingDataset:
    classes = schedule.all_classes()
    records = tuple(r for r in dataset.records if r.label in classes and r.split == split)
    return EmbeddingDataset(dim=dataset.dim, class_names=dataset.class_names, records=records)


def _run_reference_seed(config, dataset, schedule, seed, monitor, kind) -> SeedResult:
    T = schedule.n_tasks
    matrix = AccuracyMatrix(T)
    histories = []
    logs = {} if config.log_predictions else None

    def train_cfg(stage):
        return TrainConfig(
            lr=config.train.lr,
            batch_size=config.train.batch_size,
            max_epochs=config.train.max_epochs,
            patience=config.train.patience,
            hidden_dims=tuple(config.train.hidden_dims),
            seed=_derive_seed(seed, stage),
        )

    if kind == "single":
        heads: list[MlpHead] = []
        for t in range(1, T + 1):
            train_view = monitor.wrap_view(select_task(dataset, schedule, t, "train"), t, "train", "fit")
            val_view = monitor.wrap_view(select_task(dataset, schedule, t, "val"), t, "val", "fit")
            monitor.fit_start(t)
            head, hist = train_head(
                dataset.dim, sorted(schedule.tasks[t - 1]), train_view, val_view, train_cfg(t)
            )
            monitor.fit_end(t)
            heads.append(head)
            histories.append(
                {"task": t, "train_loss": hist.train_loss, "val_accuracy": hist.val_accuracy,
                 "best_epoch": hist.best_epoch, "stopped_epoch": hist.stopped_epoch}
            )

        def oracle_predict(rec):
            # task oracle: route by the sample's true task
            for idx, task in enumerate(schedule.tasks):
                if rec.label in task:
                    head = heads[idx]
                    probs = head_forward(head, rec.embedding)
                    return head.class_ids[int(np.argmax(probs))]
            raise DataError(f"label {rec.label} is not in the schedule")

        # task-i accuracy is constant in k: only head i ever sees task i
        for i in range(1, T + 1):
            view = select_task(dataset, schedule, i, "test")
            preds = [oracle_predict(r) for r in view.records]
            labels = [r.label for r in view.records]
            acc = (
                balanced_accuracy(preds, labels)
                if config.balanced_matrix
                else float(np.mean(np.asarray(preds) == np.asarray(labels)))
            )
            for k in range(i, T + 1):
                matrix.set(k, i, acc)

        all_records = _union_test_records(dataset, schedule, T)
        preds = [oracle_predict(r) for r in all_records]
        labels = [r.label for r in all_records]
        baac = balanced_accuracy(preds, labels)
        if logs is not None:
            logs[T] = [[int(r.sample_id), int(r.label), int(p)] for r, p in zip(all_records, preds)]
    else:  # joint
        train_view = monitor.wrap_view(_union_view(dataset, schedule, "train"), 0, "train", "fit")
        val_view = monitor.wrap_view(_union_view(dataset, schedule, "val"), 0, "val", "fit")
        monitor.fit_start(0)
        head, hist = train_head(
            dataset.dim, sorted(schedule.all_classes()), train_view, val_view, train_cfg(1)
        )
        monitor.fit_end(0)
        histories.append(
            {"task": 0, "train_loss": hist.train_loss, "val_accuracy": hist.val_accuracy,
             "best_epoch": hist.best_epoch, "stopped_epoch": hist.stopped_epoch}
        )
        predictor = lambda z: head.class_ids[int(np.argmax(head_forward(head, z)))]
        _fill_row(matrix, predictor, dataset, schedule, T, config.balanced_matrix)
        baac = _score_final(predictor, dataset, schedule)
        if logs is not None:
            logs[T] = _log_predictions(predictor, dataset, schedule, T)

    return SeedResult(
        seed=seed,
        baac=baac,
        forgetting=None,  # not applicable for the reference regimes
        matrix=matrix,
        histories=histories,
        integrity={"frozen_past_ok": True},
        prediction_log=logs,
    )


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run_experiment(
    config: ExperimentConfig,
    dataset: EmbeddingDataset | None = None,
    monitor: AccessMonitor | None = None,
) -> ResultsBundle:
    """Run one method over the task schedule for every configured seed."""
    kind, _ = parse_method(config.method)
    if dataset is None:
        dataset = dataio.load_dataset(config.dataset_path, _infer_format(config.dataset_path))
    schedule = _build_schedule(config, dataset)
    monitor = monitor or AccessMonitor()

    def one_seed(seed: int) -> SeedResult:
        if kind == "mlp":
            return _run_mlp_seed(config, dataset, schedule, seed, monitor)
        if kind == "nmc":
            return _run_nmc_seed(config, dataset, schedule, seed, monitor)
        return _run_reference_seed(config, dataset, schedule, seed, monitor, kind)

    seeds = list(config.seeds)
    max_workers = max(1, int(os.environ.get("FROZENCIL_THREADS", "1")))
    if max_workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one_seed, seeds))
    else:
        results = [one_seed(seed) for seed in seeds]
    results.sort(key=lambda r: r.seed)

    return ResultsBundle(
        config=config.to_dict(),
        config_hash=config_hash(config),
        per_seed=results,
        aggregate=_aggregate(results),
    )


def run_reference(config: ExperimentConfig, dataset=None, monitor=None) -> ResultsBundle:
    """Run the SINGLE or JOINT reference regime (method must be one of them)."""
    kind, _ = parse_method(config.method)
    if kind not in ("single", "joint"):
        raise ConfigurationError(f"run_reference expects single or joint, got {config.method!r}")
    return run_experiment(config, dataset=dataset, monitor=monitor)


def _infer_format(path) -> str:
    return "csv" if str(path).endswith(".csv") else "embd"


def render_report(bundle: ResultsBundle, format: str = "json") -> str:
    """Render a bundle as json, csv, or a markdown table (seeds ascending)."""
    if format == "json":
        return bundle.to_json()
    if format == "csv":
        lines = ["scope,seed,baac,forgetting"]
        for s in bundle.per_seed:
            f_str = "" if s.forgetting is None else repr(s.forgetting)
            lines.append(f"seed,{s.seed},{s.baac!r},{f_str}")
        agg = bundle.aggregate
        fm = "" if agg["forgetting_mean"] is None else repr(agg["forgetting_mean"])
        fs = "" if agg["forgetting_std"] is None else repr(agg["forgetting_std"])
        lines.append(f"mean,,{agg['baac_mean']!r},{fm}")
        lines.append(f"std,,{agg['baac_std']!r},{fs}")
        return "\n".join(lines) + "\n"
    if format in ("md", "markdown"):
        method = bundle.config.get("method", "?")
        lines = [
            f"## {method}",
            "",
            "| seed | BAAC | F |",
            "|---|---|---|",
        ]
        for s in bundle.per_seed:
            f_str = "-" if s.forgetting is None else f"{s.forgetting:.4f}"
            lines.append(f"| {s.seed} | {s.baac:.4f} | {f_str} |")
        agg = bundle.aggregate
        fm = "-" if agg["forgetting_mean"] is None else f"{agg['forgetting_mean']:.4f}"
        lines.append(f"| mean +- std | {agg['baac_mean']:.4f} +- {agg['baac_std']:.4f} | {fm} |")
        return "\n".join(lines) + "\n"
    raise ConfigurationError(f"unknown report format {format!r}")


def load_bundle(path) -> ResultsBundle:
    with open(Path(path)) as fh:
        raw = json.load(fh)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise FrozencilError(f"unsupported bundle schema {raw.get('schema_version')}")
    per_seed = []
    for s in raw["per_seed"]:
        per_seed.append(
            SeedResult(
                seed=s["seed"],
                baac=s["baac"],
                forgetting=s["forgetting"],
                matrix=AccuracyMatrix.from_nested_lists(s["accuracy_matrix"]),
                histories=s["histories"],
                integrity=s["integrity"],
                prediction_log={int(k): v for k, v in s["prediction_log"].items()}
                if "prediction_log" in s
                else None,
            )
        )
    return ResultsBundle(
        config=raw["config"],
        config_hash=raw["config_hash"],
        per_seed=per_seed,
        aggregate=raw["aggregate"],
    )
