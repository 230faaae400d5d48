"""Experiment orchestration: configs, baselines, reports and the end-to-end driver."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import NumericError, OptimState, Tensor, adam_step, backward, cross_entropy, zero_grad
from .backbone import TinyCnn, backbone_forward, iterate_minibatches, predict_logits, pretrain_backbone
from .blocks import MODES, PacFnoLayer
from .checkpoint import CheckpointError, atomic_write_bytes, checkpoint_load, checkpoint_save, config_digest, restore
from .data import (
    CORRUPTIONS,
    DataError,
    LabeledImageSet,
    MultiResDataset,
    ShapeStyle,
    corrupt_set,
    gen_shapes,
    load_idx,
    make_multires,
    resample_images,
)
from .metrics import relative_accuracy, top1
from .spectral import radial_spectrum
from .training import TrainPlan, TrainReport, combined_forward, stage1_train, stage2_train

__all__ = [
    "ConfigError",
    "MissingCheckpointError",
    "DataSpec",
    "PretrainSpec",
    "CorruptionSpec",
    "AblationSpec",
    "RunConfig",
    "ReportRow",
    "EvalReport",
    "CSV_COLUMNS",
    "resize_baseline_eval",
    "finetune_baseline",
    "ExperimentData",
    "build_data",
    "run_experiment",
    "spectra_report",
    "write_spectra_csv",
    "high_radius_mass",
    "load_pacfno",
    "top1",
    "relative_accuracy",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "resolution", "corruption", "severity", "top1", "relative", "n")
INTERPOLATIONS = ("nearest", "bilinear", "bicubic", "area")


class ConfigError(ValueError):
    pass


class MissingCheckpointError(CheckpointError):
    pass


def _derive(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


# ---------------------------------------------------------------- config


@dataclass
class DataSpec:
    kind: str = "shapes"
    num_classes: int = 8
    train: int = 640
    val: int = 320
    test: int = 480
    style: dict = field(default_factory=dict)
    idx_train: list[str] | None = None  # [images, labels] paths when kind == "idx"
    idx_test: list[str] | None = None


@dataclass
class PretrainSpec:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    widths: list[int] = field(default_factory=lambda: [16, 32, 64])


@dataclass
class CorruptionSpec:
    kind: str
    severity: int
    resolutions: list[int] | None = None  # default: target only


@dataclass
class AblationSpec:
    stages: bool = True
    parallel_serial: bool = True
    parallel: list[int] = field(default_factory=lambda: [4, 1])
    serial: list[int] = field(default_factory=lambda: [1, 4])
    frequency: bool = False
    finetune_epochs: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    target: int = 32
    train_resolutions: list[int] = field(default_factory=lambda: [8, 16, 32])
    eval_resolutions: list[int] = field(default_factory=lambda: [8, 12, 16, 24, 32])
    m: int = 2
    n: int = 1
    mode: str = "all-component"
    plan: dict = field(default_factory=dict)
    data: DataSpec = field(default_factory=DataSpec)
    pretrain: PretrainSpec = field(default_factory=PretrainSpec)
    corruptions: list[CorruptionSpec] = field(default_factory=list)
    baselines: list[str] = field(default_factory=lambda: ["bicubic"])
    ablations: AblationSpec = field(default_factory=AblationSpec)
    out: str = "runs/default"

    _NESTED = {"data": DataSpec, "pretrain": PretrainSpec, "ablations": AblationSpec}

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(raw)
        try:
            for key, kind in cls._NESTED.items():
                if key in kw:
                    kw[key] = _nested(kind, kw[key], key)
            if "corruptions" in kw:
                kw["corruptions"] = [_nested(CorruptionSpec, c, "corruptions[]") for c in kw["corruptions"]]
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def train_plan(self) -> TrainPlan:
        try:
            return TrainPlan(**{"seed": self.seed, **self.plan})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"plan: {exc}") from None

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        need(self.m >= 1 and self.n >= 1, "m and n must be at least 1")
        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(self.target % 8 == 0, "target must be divisible by 8 (backbone pools three times)")
        for name in ("train_resolutions", "eval_resolutions"):
            res = getattr(self, name)
            need(len(res) > 0 and all(isinstance(r, int) and 1 <= r <= self.target for r in res),
                 f"{name} must be integers in [1, target]")
        need(set(self.train_resolutions) <= set(self.eval_resolutions) | {self.target},
             "training resolutions must be a subset of eval resolutions plus the target")
        need(any(r < self.target for r in self.train_resolutions), "need at least one low training resolution")
        need(self.target in self.eval_resolutions, "eval resolutions must include the target")
        self.train_plan  # noqa: B018 - validates plan fields
        need(self.data.kind in ("shapes", "idx"), "data.kind must be 'shapes' or 'idx'")
        if self.data.kind == "idx":
            need(self.data.idx_train is not None and len(self.data.idx_train) == 2, "idx_train needs [images, labels]")
            need(self.data.idx_test is not None and len(self.data.idx_test) == 2, "idx_test needs [images, labels]")
        need(min(self.data.train, self.data.val, self.data.test) >= 2, "data splits need at least two images")
        try:
            ShapeStyle(**self.data.style)
        except TypeError as exc:
            raise ConfigError(f"data.style: {exc}") from None
        need(self.pretrain.epochs >= 0 and self.pretrain.lr >= 0, "pretrain epochs and lr must be non-negative")
        for c in self.corruptions:
            need(c.kind in CORRUPTIONS, f"unknown corruption {c.kind!r}")
            need(1 <= c.severity <= 5, "corruption severity must be in 1..5")
            need(all(r in self.eval_resolutions for r in c.resolutions or []),
                 "corruption resolutions must be eval resolutions")
        need(all(b in INTERPOLATIONS for b in self.baselines), f"baselines must be among {INTERPOLATIONS}")
        ab = self.ablations
        for name in ("parallel", "serial"):
            pair = getattr(ab, name)
            need(len(pair) == 2 and min(pair) >= 1, f"ablations.{name} must be [m, n] with m, n >= 1")
        if ab.parallel_serial:
            need(ab.parallel[0] * ab.parallel[1] == ab.serial[0] * ab.serial[1],
                 "parallel and serial ablations must use the same number of blocks")
        need(ab.finetune_epochs >= 0, "finetune_epochs must be non-negative")

    @property
    def digest(self) -> str:
        body = self.to_dict()
        body.pop("out")
        return config_digest(body).hex()


def _nested(kind, value, where):
    if isinstance(value, kind):
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be an object")
    allowed = {f.name for f in fields(kind)}
    extra = set(value) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return kind(**value)


# ---------------------------------------------------------------- report


@dataclass(frozen=True)
class ReportRow:
    method: str
    resolution: int
    corruption: str = ""
    severity: int = 0
    top1: float = 0.0
    relative: float | None = None
    n: int = 0

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 1.0:
            raise ValueError(f"top1 {self.top1} outside [0, 1]")


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def lookup(self, method: str, resolution: int, corruption: str = "", severity: int = 0) -> float:
        for r in self.rows:
            if (r.method, r.resolution, r.corruption, r.severity) == (method, resolution, corruption, severity):
                return r.top1
        raise KeyError((method, resolution, corruption, severity))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def with_relative(self, target: int) -> "EvalReport":
        """Fill ``relative`` against each method's clean target-resolution row."""
        ref = {r.method: r.top1 for r in self.rows if r.resolution == target and not r.corruption}
        rows = []
        for r in self.rows:
            rel = relative_accuracy(r.top1, ref[r.method]) if ref.get(r.method, 0) > 0 else None
            rows.append(replace(r, relative=rel))
        return EvalReport(rows, dict(self.metadata))

    def sorted(self) -> "EvalReport":
        key = lambda r: (r.method, r.corruption, r.severity, r.resolution)  # noqa: E731
        return EvalReport(sorted(self.rows, key=key), dict(self.metadata))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            rel = "" if r.relative is None else repr(float(r.relative))
            writer.writerow([r.method, r.resolution, r.corruption, r.severity, repr(float(r.top1)), rel, r.n])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("utf-8"))

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        rows = []
        for method, res, corr, sev, acc, rel, n in reader:
            rows.append(ReportRow(method, int(res), corr, int(sev), float(acc), float(rel) if rel else None, int(n)))
        return cls(rows)

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        return cls.from_csv(Path(path).read_text())


# ---------------------------------------------------------------- data


@dataclass
class ExperimentData:
    train: MultiResDataset
    val: MultiResDataset
    test: MultiResDataset
    test_source: LabeledImageSet


def build_data(cfg: RunConfig) -> ExperimentData:
    t = cfg.target
    if cfg.data.kind == "shapes":
        style = ShapeStyle(**cfg.data.style)
        k = cfg.data.num_classes
        train = gen_shapes(_derive(cfg.seed, 10), cfg.data.train, k, t, "train", style)
        val = gen_shapes(_derive(cfg.seed, 11), cfg.data.val, k, t, "val", style)
        test = gen_shapes(_derive(cfg.seed, 12), cfg.data.test, k, t, "test", style)
    else:
        pool = load_idx(*cfg.data.idx_train, num_classes=cfg.data.num_classes)
        test = load_idx(*cfg.data.idx_test, num_classes=cfg.data.num_classes, split="test")
        order = np.random.default_rng(_derive(cfg.seed, 13)).permutation(len(pool))
        n_val = min(cfg.data.val, len(pool) // 5)
        val, train = pool.subset(order[:n_val], "val"), pool.subset(order[n_val:], "train")
        train, val, test = (
            replace(ds, images=resample_images(ds.images, t, t, "bilinear")) if ds.resolution != (t, t) else ds
            for ds in (train, val, test)
        )
    low = sorted(set(cfg.train_resolutions) | {t})
    return ExperimentData(
        train=make_multires(train, low),
        val=make_multires(val, low),
        test=make_multires(test, sorted(set(cfg.eval_resolutions) | {t})),
        test_source=test,
    )


def _corrupted_views(cfg: RunConfig, data: ExperimentData):
    """(kind, severity, resolution, set): corrupt at the source resolution, then downscale."""
    views = []
    for i, c in enumerate(cfg.corruptions):
        dirty = corrupt_set(data.test_source, c.kind, c.severity, seed=_derive(cfg.seed, 20, i))
        resolutions = c.resolutions or [cfg.target]
        multi = make_multires(dirty, sorted(set(resolutions) | {cfg.target}))
        views += [(c.kind, c.severity, r, multi[r]) for r in resolutions]
    return views


# ---------------------------------------------------------------- baselines


def _score(method, predict, ds: LabeledImageSet, resolution: int, corruption: str = "", severity: int = 0):
    logits = predict(ds.images)
    if not np.all(np.isfinite(logits)):
        raise NumericError(f"{method}: non-finite logits at resolution {resolution}")
    return ReportRow(method, resolution, corruption, severity, top1(logits, ds.labels), None, len(ds))


def resize_baseline_eval(
    backbone: TinyCnn,
    ds: LabeledImageSet,
    target: int,
    interp: str = "bicubic",
    corruption: str = "",
    severity: int = 0,
    method: str | None = None,
) -> ReportRow:
    """Upscale with a fixed kernel, then run the untouched backbone."""
    if interp not in INTERPOLATIONS:
        raise ValueError(f"unknown interpolation {interp!r}")

    def predict(images):
        up = resample_images(images, target, target, interp)
        return predict_logits(lambda x: backbone_forward(x, backbone), up)

    return _score(method or f"resize-{interp}", predict, ds, ds.resolution[0], corruption, severity)


def finetune_baseline(
    backbone: TinyCnn,
    d_r: MultiResDataset,
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    interp: str = "bicubic",
) -> TinyCnn:
    """Copy of ``backbone`` fine-tuned on upscaled low-resolution images mixed with target images."""
    model = copy.deepcopy(backbone)
    if epochs == 0:
        return model
    t = d_r.target
    images = np.concatenate([resample_images(d_r[r].images, t, t, interp) for r in d_r.resolutions])
    labels = np.concatenate([d_r[r].labels for r in d_r.resolutions])
    params = model.parameters()
    opt = OptimState(lr=lr)
    rng = np.random.default_rng([seed, 3])
    for _ in range(epochs):
        for idx in iterate_minibatches(len(images), batch_size, rng):
            if len(idx) < 2:
                continue
            zero_grad(params)
            loss = cross_entropy(backbone_forward(Tensor(images[idx]), model, True), labels[idx])
            backward(loss)
            adam_step(params, opt)
    return model


# ---------------------------------------------------------------- driver


def _pacfno_predictor(layer, backbone):
    def predict(images):
        return predict_logits(lambda x: combined_forward(layer, backbone, x), images)

    return predict


def _backbone_predictor(backbone, target):
    def predict(images):
        if images.shape[-1] != target:
            images = resample_images(images, target, target, "bicubic")
        return predict_logits(lambda x: backbone_forward(x, backbone), images)

    return predict


class _Runner:
    def __init__(self, cfg: RunConfig, data: ExperimentData, retrain: bool, train_missing: bool = True):
        self.cfg = cfg
        self.train_missing = train_missing
        self.data = data
        self.retrain = retrain
        self.out = Path(cfg.out)
        self.ckpt_dir = self.out / "checkpoints"
        self.run_digest = cfg.digest
        self.trained: list[str] = []
        self.reports: dict[str, dict] = {}

    def _ckpt_config(self, method: str, layer=None, backbone=None) -> dict:
        body = {"method": method, "run": self.run_digest}
        if layer is not None:
            body["pacfno"] = layer.config
        if backbone is not None:
            body["backbone"] = backbone.config
        return body

    def _cached(self, method, layer, backbone) -> bool:
        path = self.ckpt_dir / f"{method}.ckpt"
        if self.retrain or not path.exists():
            if not self.train_missing:
                raise MissingCheckpointError(f"no checkpoint for {method} at {path}; train it first")
            return False
        want = config_digest(self._ckpt_config(method, layer, backbone))
        try:
            restore(checkpoint_load(path, expected_digest=want), layer, backbone)
        except CheckpointError as exc:
            log.warning("ignoring checkpoint %s: %s", path, exc)
            return False
        log.info("loaded %s from %s", method, path)
        return True

    def _save(self, method, layer, backbone) -> None:
        checkpoint_save(self.ckpt_dir / f"{method}.ckpt", layer, backbone, config=self._ckpt_config(method, layer, backbone))

    def backbone(self) -> tuple[TinyCnn, float]:
        cfg = self.cfg
        model = TinyCnn((cfg.target, cfg.target), self._num_classes(), tuple(cfg.pretrain.widths), seed=_derive(cfg.seed, 30))
        if not self._cached("backbone", None, model):
            pretrain_backbone(
                model, self.data.train[cfg.target], self.data.val[cfg.target],
                epochs=cfg.pretrain.epochs, lr=cfg.pretrain.lr, batch_size=cfg.pretrain.batch_size,
                seed=_derive(cfg.seed, 31),
            )
            self._save("backbone", None, model)
            self.trained.append("backbone")
        val = self.data.val[cfg.target]
        ref = top1(predict_logits(lambda x: backbone_forward(x, model), val.images), val.labels)
        return model, ref

    def _num_classes(self) -> int:
        return self.data.train[self.cfg.target].num_classes

    def new_layer(self, m, n, mode, salt):
        t = self.cfg.target
        return PacFnoLayer(m, n, (t, t), mode=mode, seed=_derive(self.cfg.seed, 40, salt))

    def pacfno(self, method, base, ref, m, n, mode, stages, salt, snapshot: str | None = None):
        """Train (or load) one PAC-FNO variant; optionally also emit a stage-1 snapshot."""
        layer, backbone = self.new_layer(m, n, mode, salt), copy.deepcopy(base)
        snap = None
        if snapshot is not None:
            snap = (self.new_layer(m, n, mode, salt), copy.deepcopy(base))
        done = self._cached(method, layer, backbone)
        if snapshot is not None:
            done = done and self._cached(snapshot, *snap)
        if done:
            return (layer, backbone), snap
        layer, backbone = self.new_layer(m, n, mode, salt), copy.deepcopy(base)
        plan = self.cfg.train_plan
        report = TrainReport(reference_top1=ref)
        if 1 in stages:
            stage1_train(layer, backbone, self.data.train[self.cfg.target], self.data.val[self.cfg.target], plan, ref, report)
            if snapshot is not None:
                snap = (copy.deepcopy(layer), copy.deepcopy(backbone))
                self._save(snapshot, *snap)
        if 2 in stages:
            stage2_train(layer, backbone, self.data.train, plan, report)
        self._save(method, layer, backbone)
        self.trained.append(method)
        self.reports[method] = report.to_dict()
        return (layer, backbone), snap


def _evaluate(report: EvalReport, method: str, predict, data: ExperimentData, corrupted, resolutions) -> None:
    for r in resolutions:
        report.add(_score(method, predict, data.test[r], r))
    for kind, sev, r, ds in corrupted:
        report.add(_score(method, predict, ds, r, kind, sev))


def run_experiment(
    cfg: RunConfig, retrain: bool = False, methods: set[str] | None = None, train_missing: bool = True
) -> EvalReport:
    """Pretrain (or load) the backbone, train every requested method, evaluate, write the report.

    Writes ``report.csv``, ``metadata.json`` and one checkpoint per trained
    model under ``cfg.out``. Models whose checkpoints match the current
    config digest are loaded instead of retrained. ``methods`` restricts
    the run to a subset of method names (baselines are always evaluated).
    With ``train_missing=False`` an absent checkpoint is an error.
    """
    cfg.validate()
    started = time.perf_counter()
    data = build_data(cfg)
    corrupted = _corrupted_views(cfg, data)
    runner = _Runner(cfg, data, retrain, train_missing)
    report = EvalReport()
    res = sorted(cfg.eval_resolutions)
    want = (lambda name: methods is None or name in methods)

    backbone, ref = runner.backbone()
    for interp in cfg.baselines:
        for r in res:
            report.add(resize_baseline_eval(backbone, data.test[r], cfg.target, interp))
        for kind, sev, r, ds in corrupted:
            report.add(resize_baseline_eval(backbone, ds, cfg.target, interp, kind, sev))

    ab = cfg.ablations
    if ab.finetune_epochs and want("finetune"):
        ft = TinyCnn(backbone.resolution, backbone.num_classes, backbone.widths, seed=backbone.seed)
        if not runner._cached("finetune", None, ft):
            ft = finetune_baseline(backbone, data.train, ab.finetune_epochs, cfg.pretrain.lr, cfg.pretrain.batch_size, _derive(cfg.seed, 32))
            runner._save("finetune", None, ft)
            runner.trained.append("finetune")
        _evaluate(report, "finetune", _backbone_predictor(ft, cfg.target), data, corrupted, res)

    if want("pacfno") or want("pacfno-stage1-only"):
        (main, snap) = runner.pacfno("pacfno", backbone, ref, cfg.m, cfg.n, cfg.mode, (1, 2), 0,
                                     snapshot="pacfno-stage1-only" if ab.stages else None)
        _evaluate(report, "pacfno", _pacfno_predictor(*main), data, corrupted, res)
        if snap is not None:
            _evaluate(report, "pacfno-stage1-only", _pacfno_predictor(*snap), data, corrupted, res)
    if ab.stages and want("pacfno-stage2-only"):
        (model, _) = runner.pacfno("pacfno-stage2-only", backbone, ref, cfg.m, cfg.n, cfg.mode, (2,), 0)
        _evaluate(report, "pacfno-stage2-only", _pacfno_predictor(*model), data, corrupted, res)
    if ab.parallel_serial:
        for name, (m, n) in (("parallel", ab.parallel), ("serial", ab.serial)):
            method = f"pacfno-{name}-m{m}n{n}"
            if want(method):
                (model, _) = runner.pacfno(method, backbone, ref, m, n, cfg.mode, (1, 2), 1)
                _evaluate(report, method, _pacfno_predictor(*model), data, corrupted, res)
    if ab.frequency:
        for mode in ("lowpass-ablation", "highpass-ablation"):
            method = f"pacfno-{mode}"
            if want(method):
                (model, _) = runner.pacfno(method, backbone, ref, cfg.m, cfg.n, mode, (1, 2), 2)
                _evaluate(report, method, _pacfno_predictor(*model), data, corrupted, res)

    final = report.with_relative(cfg.target).sorted()
    out = Path(cfg.out)
    final.write_csv(out / "report.csv")
    final.metadata = {
        "seed": cfg.seed,
        "config_digest": cfg.digest,
        "reference_val_top1": ref,
        "trained": runner.trained,
        "train_reports": runner.reports,
        "wall_clock_s": time.perf_counter() - started,
    }
    atomic_write_bytes(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True).encode())
    atomic_write_bytes(out / "metadata.json", json.dumps(final.metadata, indent=2, sort_keys=True).encode())
    return final


# ---------------------------------------------------------------- spectra


def spectra_report(layer: PacFnoLayer, probe_images, bins: int = 16, serial: PacFnoLayer | None = None) -> list[dict]:
    """Radial spectrum of each branch's first-stage hidden vector (plus a serial chain if given)."""
    x = probe_images if isinstance(probe_images, Tensor) else Tensor(np.asarray(probe_images, dtype=np.float64))
    rows = []

    def emit(name, hidden):
        radius, curve = radial_spectrum(hidden, bins)
        rows.extend({"branch": name, "radius": float(r), "value": float(v)} for r, v in zip(radius, curve))

    for i in range(layer.m):
        emit(f"branch{i}", layer.branch_forward(x, i)[0])
    if serial is not None:
        emit("serial", serial.branch_forward(x, 0)[0])
    return rows


def high_radius_mass(rows: list[dict], branch: str, cutoff: float = 0.5) -> float:
    curve = [(r["radius"], r["value"]) for r in rows if r["branch"] == branch]
    total = sum(v for _, v in curve)
    return sum(v for rad, v in curve if rad >= cutoff) / total if total > 0 else 0.0


def write_spectra_csv(rows: list[dict], path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["branch", "radius", "value"], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({"branch": r["branch"], "radius": repr(r["radius"]), "value": repr(r["value"])})
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def load_pacfno(path) -> tuple[PacFnoLayer, TinyCnn]:
    """Rebuild a PAC-FNO + backbone pair from a method checkpoint."""
    ckpt = checkpoint_load(path)
    pc, bc = ckpt.config.get("pacfno"), ckpt.config.get("backbone")
    if pc is None or bc is None:
        raise CheckpointError(f"{path} does not hold a PAC-FNO model")
    layer = PacFnoLayer(pc["m"], pc["n"], tuple(pc["target"]), mode=pc["mode"], modes=tuple(pc["modes"]))
    model = TinyCnn(tuple(bc["resolution"]), bc["num_classes"], tuple(bc["widths"]))
    restore(ckpt, layer, model)
    return layer, model

