"""Command-line entry point: ``python -m holoml <command> ...``.

Every command reads one JSON run config (``--config``) whose sections map
onto the library dataclasses; flags given on the command line win. Outputs
always go to a fresh versioned subdirectory (``v001``, ``v002``, ...) of the
requested output directory, so re-running never overwrites earlier results.
Relative output paths are resolved against ``$HOLOML_OUTPUT_ROOT`` when set.

On failure a single JSON line ``{"error": ..., "message": ..., "path": ...}``
is printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import arrayio
from .dataset import (
    DatasetError,
    DatasetSpec,
    MANIFEST,
    generate_dataset,
    load_arrays,
    load_ground_truth,
    load_hologram,
    optics_from_manifest,
    read_manifest,
)
from .losses import LossConfig
from .optics import OpticsConfig, OpticsError
from .postprocess import Tolerance, baseline_segment, calibrate_baseline, compute_metrics, extract_particles, pair_particles
from .trainer import TrainConfig, TrainData, TrainingError, last_conv_layer, train, transfer_train
from .unet import ArchConfig, ArchError, build_model, load_checkpoint

log = logging.getLogger("holoml")

OUTPUT_ROOT_ENV = "HOLOML_OUTPUT_ROOT"
METRIC_FIELDS = ["hologram_id", "n_gt", "n_pred", "n_paired", "extraction", "ghost", "med_dx", "med_dy", "med_dz"]
REPORT_FIELDS = ["ppp", "extraction", "ghost", "med_dx", "med_dy", "med_dz"]
VARIANTS = ("full", "no-residual", "mse-only", "relu")

EXIT_FAILURE, EXIT_CONFIG, EXIT_MISSING = 1, 2, 3


class CliError(Exception):
    def __init__(self, kind: str, message: str, path: str | None = None, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind, self.message, self.path, self.code = kind, message, path, code


# ----------------------------------------------------------------- config


SECTIONS = {
    "optics": OpticsConfig,
    "arch": ArchConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "dataset": DatasetSpec,
    "tolerance": Tolerance,
}


@dataclass
class RunConfig:
    output: str | None = None
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    tolerance: Tolerance = field(default_factory=Tolerance)
    threshold: float = 0.5

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise CliError("config", "config must be a JSON object", "$", EXIT_CONFIG)
        top = {f.name for f in fields(cls)}
        for key in doc:
            if key not in top:
                raise CliError("config", f"unknown key {key!r}", key, EXIT_CONFIG)
        kwargs = {}
        for name, kind in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise CliError("config", f"section {name!r} must be an object", name, EXIT_CONFIG)
            allowed = {f.name for f in fields(kind)} - ({"loss"} if kind is TrainConfig else set())
            for key in section:
                if key not in allowed:
                    raise CliError("config", f"unknown key {key!r}", f"{name}.{key}", EXIT_CONFIG)
            try:
                kwargs[name] = kind(**section)
            except (TypeError, ValueError) as exc:
                raise CliError("config", str(exc), name, EXIT_CONFIG) from None
        cfg = cls(output=doc.get("output"), threshold=float(doc.get("threshold", 0.5)), **kwargs)
        cfg.train = dataclasses.replace(cfg.train, loss=cfg.loss)
        if not 0 < cfg.threshold < 1:
            raise CliError("config", "threshold must lie in (0, 1)", "threshold", EXIT_CONFIG)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise CliError("missing_file", f"config not found: {path}", str(path), EXIT_MISSING)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError("config", f"{path}: line {exc.lineno}: {exc.msg}", str(path), EXIT_CONFIG) from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        out = {"output": self.output, "threshold": self.threshold}
        for name in SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        out["train"].pop("loss")
        return out


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    """Fold command-line overrides into ``cfg``; flags win over the file."""
    if getattr(args, "out", None):
        cfg.output = args.out
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.dataset = dataclasses.replace(cfg.dataset, seed=seed)
        cfg.arch = dataclasses.replace(cfg.arch, seed=seed)
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    if getattr(args, "deterministic", False):
        cfg.train = dataclasses.replace(cfg.train, deterministic=True)
    if getattr(args, "ppp", None) is not None:
        cfg.dataset = dataclasses.replace(cfg.dataset, ppp=args.ppp)
    if getattr(args, "epochs", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    return cfg


def variant_config(cfg: RunConfig, variant: str, seed: int | None = None) -> tuple[ArchConfig, TrainConfig]:
    """Architecture and training settings for one ablation variant."""
    arch, train_cfg = cfg.arch, cfg.train
    if variant == "no-residual":
        arch = dataclasses.replace(arch, residual=False)
    elif variant == "relu":
        arch = dataclasses.replace(arch, activation="relu")
    elif variant == "mse-only":
        train_cfg = dataclasses.replace(train_cfg, loss=LossConfig.mse_only())
    elif variant != "full":
        raise CliError("config", f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}", "variant", EXIT_CONFIG)
    if seed is not None:
        arch = dataclasses.replace(arch, seed=seed)
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
    return arch, train_cfg


# ------------------------------------------------------------------- paths


def output_base(path) -> Path:
    if path is None:
        raise CliError("config", "no output directory: give --out or set 'output' in the config", "output", EXIT_CONFIG)
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def versioned_dir(base) -> Path:
    """Create and return the next unused ``base/vNNN`` directory."""
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    n = max((int(m.group(1)) for p in base.iterdir() if (m := re.fullmatch(r"v(\d+)", p.name))), default=0)
    while True:
        n += 1
        out = base / f"v{n:03d}"
        try:
            out.mkdir()
            return out
        except FileExistsError:
            continue


def latest_version(path: Path, marker: str) -> Path:
    """``path`` itself when it holds ``marker``, else its newest ``vNNN`` child that does."""
    if (path / marker).exists():
        return path
    found = sorted(
        (int(m.group(1)), p)
        for p in path.glob("v*")
        if (m := re.fullmatch(r"v(\d+)", p.name)) and (p / marker).exists()
    )
    if not found:
        raise CliError("missing_file", f"no {marker} under {path}", str(path / marker), EXIT_MISSING)
    return found[-1][1]


def open_dataset(path) -> dict:
    if path is None:
        raise CliError("config", "--data is required", "data", EXIT_CONFIG)
    path = Path(path)
    if not path.exists():
        raise CliError("missing_file", f"data not found: {path}", str(path), EXIT_MISSING)
    if path.is_dir():
        path = latest_version(path, MANIFEST)
    return read_manifest(path)


def checkpoint_path(path, name: str = "best.holonet") -> Path:
    if path is None:
        raise CliError("config", "--checkpoint is required", "checkpoint", EXIT_CONFIG)
    path = Path(path)
    if not path.exists():
        raise CliError("missing_file", f"checkpoint not found: {path}", str(path), EXIT_MISSING)
    if path.is_dir():
        path = latest_version(path, name) / name
    return path


def select_records(manifest: dict, split: str) -> list[dict]:
    return [r for r in manifest["samples"] if split == "all" or r["split"] == split]


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_run_config(out: Path, cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    doc = {"command": command, "config": cfg.to_dict()}
    doc.update(extra or {})
    write_json(out / "run.json", doc)


# ----------------------------------------------------------------- commands


def cmd_generate(args, cfg: RunConfig) -> Path:
    out = versioned_dir(output_base(cfg.output))
    generate_dataset(cfg.dataset, cfg.optics, out, workers=args.workers)
    save_run_config(out, cfg, "generate")
    return out


def _train_data(manifest: dict, cfg: TrainConfig) -> TrainData:
    return TrainData.from_manifest(manifest, cfg.validation_fraction, cfg.seed)


def cmd_train(args, cfg: RunConfig) -> Path:
    manifest = open_dataset(args.data)
    arch, train_cfg = variant_config(cfg, args.variant or "full")
    out = versioned_dir(output_base(cfg.output))
    save_run_config(out, cfg, "train", {"variant": args.variant or "full", "data": manifest["_root"]})
    train(build_model(arch), _train_data(manifest, train_cfg), train_cfg, out)
    return out


def cmd_transfer(args, cfg: RunConfig) -> Path:
    manifest = open_dataset(args.data)
    base = checkpoint_path(args.checkpoint, "last.holonet")
    out = versioned_dir(output_base(cfg.output))
    save_run_config(out, cfg, "transfer", {"base": str(base), "data": manifest["_root"]})
    transfer_train(base, _train_data(manifest, cfg.train), cfg.train, out)
    return out


def predict_records(model, manifest: dict, records: list[dict], threshold: float) -> dict[str, list]:
    config = optics_from_manifest(manifest)
    root = Path(manifest["_root"])
    preds = {}
    for rec in records:
        x = arrayio.load_array(root / rec["input"])[None].astype(np.float32)
        preds[rec["id"]] = extract_particles(model.predict(x)[0], config, threshold)
    return preds


def cmd_infer(args, cfg: RunConfig) -> Path:
    manifest = open_dataset(args.data)
    model, _ = load_checkpoint(checkpoint_path(args.checkpoint))
    records = select_records(manifest, args.split)
    out = versioned_dir(output_base(cfg.output))
    (out / "predictions").mkdir()
    for sid, particles in predict_records(model, manifest, records, cfg.threshold).items():
        arrayio.save_particles(out / "predictions" / f"{sid}.csv", particles)
    save_run_config(out, cfg, "infer", {"data": manifest["_root"], "split": args.split})
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate_predictions(manifest: dict, records: list[dict], preds: dict[str, list], tol: Tolerance) -> tuple[list[dict], dict]:
    """Per-hologram metric rows plus pooled aggregates."""
    rows, dx, dy, dz = [], [], [], []
    for rec in records:
        gt = load_ground_truth(manifest, rec)
        pred = preds[rec["id"]]
        match = pair_particles(pred, gt, tol)
        m = compute_metrics(match, pred, gt)
        rows.append({"hologram_id": rec["id"], **{k: getattr(m, k) for k in METRIC_FIELDS[1:]}})
        for _, _, a, b, c in match.pairs:
            dx.append(abs(a))
            dy.append(abs(b))
            dz.append(abs(c))
    n_gt = sum(r["n_gt"] for r in rows)
    n_pred = sum(r["n_pred"] for r in rows)
    n_paired = sum(r["n_paired"] for r in rows)
    agg = {
        "ppp": manifest["ppp"],
        "holograms": len(rows),
        "n_gt": n_gt,
        "n_pred": n_pred,
        "n_paired": n_paired,
        "extraction": n_paired / n_gt if n_gt else None,
        "ghost": (n_pred - n_paired) / n_pred if n_pred else 0.0,
        "med_dx": float(np.median(dx)) if dx else 0.0,
        "med_dy": float(np.median(dy)) if dy else 0.0,
        "med_dz": float(np.median(dz)) if dz else 0.0,
    }
    return rows, agg


def write_metrics(out: Path, rows: list[dict], agg: dict) -> None:
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in METRIC_FIELDS])
    write_json(out / "metrics.json", agg)


def cmd_evaluate(args, cfg: RunConfig) -> Path:
    manifest = open_dataset(args.data)
    records = select_records(manifest, args.split)
    sources = (args.predictions is not None) + (args.checkpoint is not None) + bool(args.baseline)
    if sources != 1:
        raise CliError("config", "give exactly one of --predictions, --checkpoint or --baseline", "predictions", EXIT_CONFIG)
    if args.predictions is not None:
        pred_dir = Path(args.predictions)
        if not pred_dir.exists():
            raise CliError("missing_file", f"predictions not found: {pred_dir}", str(pred_dir), EXIT_MISSING)
        if not (pred_dir / "predictions").is_dir() and not any(pred_dir.glob("*.csv")):
            pred_dir = latest_version(pred_dir, "predictions")
        if (pred_dir / "predictions").is_dir():
            pred_dir = pred_dir / "predictions"
        preds = {}
        for rec in records:
            path = pred_dir / f"{rec['id']}.csv"
            if not path.exists():
                raise CliError("missing_file", f"no prediction file {path}", str(path), EXIT_MISSING)
            preds[rec["id"]] = arrayio.load_particles(path)
    elif args.checkpoint is not None:
        model, _ = load_checkpoint(checkpoint_path(args.checkpoint))
        preds = predict_records(model, manifest, records, cfg.threshold)
    else:
        config = optics_from_manifest(manifest)
        level = 0.3
        if args.baseline_max_ghost is not None:
            train_recs = select_records(manifest, "train")
            level, _, _ = calibrate_baseline(
                [load_hologram(manifest, r) for r in train_recs],
                [load_ground_truth(manifest, r) for r in train_recs],
                config, cfg.tolerance, args.baseline_max_ghost,
            )
        preds = {r["id"]: baseline_segment(load_hologram(manifest, r), config, level) for r in records}
    rows, agg = evaluate_predictions(manifest, records, preds, cfg.tolerance)
    if args.baseline:
        agg["baseline_threshold"] = level
    out = versioned_dir(output_base(cfg.output))
    write_metrics(out, rows, agg)
    return out


def normalized_curve(history) -> list[float]:
    """Loss per epoch divided by the loss before training (epoch 0 = 1)."""
    base = history.initial_loss
    if not base:
        raise CliError("training", "initial loss is zero; cannot normalize", None)
    return [1.0] + [v / base for v in history.train_loss]


def cmd_ablate(args, cfg: RunConfig) -> Path:
    manifest = open_dataset(args.data)
    variants = [args.variant] if args.variant else list(VARIANTS)
    seeds = range(args.seeds)
    out = versioned_dir(output_base(cfg.output))
    save_run_config(out, cfg, "ablate", {"variants": variants, "seeds": list(seeds), "data": manifest["_root"]})
    summary = {}
    for variant in variants:
        finals, dead = [], []
        for seed in seeds:
            arch, train_cfg = variant_config(cfg, variant, seed)
            model = build_model(arch)
            train_cfg = dataclasses.replace(train_cfg, dead_neuron_layer=last_conv_layer(model))
            result = train(model, _train_data(manifest, train_cfg), train_cfg, out / f"{variant}_seed{seed}")
            curve = normalized_curve(result.history)
            with open(out / f"curve_{variant}_seed{seed}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "normalized_loss"])
                for epoch, v in enumerate(curve):
                    w.writerow([epoch, repr(v)])
            finals.append(curve[-1])
            dead.append(result.history.dead_neurons[0] if result.history.dead_neurons else None)
        summary[variant] = {
            "final_normalized_loss": finals,
            "spread": max(finals) - min(finals) if finals else None,
            "dead_neurons_epoch1": dead,
        }
    write_json(out / "summary.json", summary)
    return out


def read_metrics_csv(path: Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != METRIC_FIELDS:
            raise CliError("format", f"{path}: line 1: expected header {','.join(METRIC_FIELDS)}", str(path))
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != len(METRIC_FIELDS):
                    raise ValueError(f"expected {len(METRIC_FIELDS)} fields, got {len(row)}")
                rows.append({"hologram_id": row[0], **{k: int(v) for k, v in zip(METRIC_FIELDS[1:4], row[1:4])}})
            except ValueError as exc:
                raise CliError("format", f"{path}: line {lineno}: {exc}", str(path)) from None
    return rows


def report_row(metrics_csv: Path) -> dict:
    """One concentration: extraction and ghost recomputed from the per-hologram rows."""
    sidecar = metrics_csv.with_suffix(".json")
    if not sidecar.exists():
        raise CliError("missing_file", f"no aggregate file next to {metrics_csv}", str(sidecar), EXIT_MISSING)
    agg = json.loads(sidecar.read_text())
    rows = read_metrics_csv(metrics_csv)
    n_gt = sum(r["n_gt"] for r in rows)
    n_pred = sum(r["n_pred"] for r in rows)
    n_pair = sum(r["n_paired"] for r in rows)
    return {
        "ppp": float(agg["ppp"]),
        "extraction": n_pair / n_gt if n_gt else None,
        "ghost": (n_pred - n_pair) / n_pred if n_pred else 0.0,
        "med_dx": agg["med_dx"],
        "med_dy": agg["med_dy"],
        "med_dz": agg["med_dz"],
    }


def write_svg(path: Path, rows: list[dict]) -> None:
    pts = [(r["ppp"], r["extraction"]) for r in rows if r["extraction"] is not None and r["ppp"] > 0]
    w, h, m = 400, 300, 40
    lx = [np.log10(p) for p, _ in pts]
    lo, hi = (min(lx), max(lx)) if lx else (0, 1)
    hi = hi if hi > lo else lo + 1
    coords = [(m + (x - lo) / (hi - lo) * (w - 2 * m), h - m - e * (h - 2 * m)) for x, (_, e) in zip(lx, pts)]
    marks = "".join(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3"/>' for x, y in coords)
    line = " ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
    path.write_text(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" fill="none" stroke="black"/>'
        f'<polyline points="{line}" fill="none" stroke="blue"/>{marks}'
        f'<text x="{w / 2}" y="{h - 8}" text-anchor="middle">log10 ppp</text>'
        f'<text x="10" y="{h / 2}" transform="rotate(-90 10 {h / 2})" text-anchor="middle">extraction</text>'
        "</svg>\n"
    )


def cmd_report(args, cfg: RunConfig) -> Path:
    if not args.metrics:
        raise CliError("config", "report needs at least one metrics file", "metrics", EXIT_CONFIG)
    paths = []
    for p in map(Path, args.metrics):
        if not p.exists():
            raise CliError("missing_file", f"metrics not found: {p}", str(p), EXIT_MISSING)
        paths.append(latest_version(p, "metrics.csv") / "metrics.csv" if p.is_dir() else p)
    rows = sorted((report_row(p) for p in paths), key=lambda r: r["ppp"])
    out = versioned_dir(output_base(cfg.output))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in REPORT_FIELDS])
    if args.plot:
        write_svg(out / "extraction_vs_ppp.svg", rows)
    return out


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", help="output directory (a versioned subdirectory is created)")
    common.add_argument("--seed", type=int, help="seed for generation, initialization and batching")
    common.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    common.add_argument("--threads", type=int, help="cap BLAS/FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="holoml", description="Hologram particle localization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesize a dataset")
    p.add_argument("--ppp", type=float, help="particles per pixel")
    p.add_argument("--workers", type=int, default=1)

    for name, text in (("train", "train from scratch"), ("transfer", "warm-start from a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="dataset directory")
        p.add_argument("--epochs", type=int)
        if name == "train":
            p.add_argument("--variant", choices=VARIANTS)
        else:
            p.add_argument("--checkpoint", help="base checkpoint file or training directory")

    p = sub.add_parser("infer", parents=[common], help="write particle CSVs for a dataset")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="all")

    p = sub.add_parser("evaluate", parents=[common], help="metrics against ground truth")
    p.add_argument("--data")
    p.add_argument("--split", default="all")
    p.add_argument("--predictions", help="directory of particle CSVs (from infer)")
    p.add_argument("--checkpoint", help="run inference with this checkpoint instead")
    p.add_argument("--baseline", action="store_true", help="score the min-intensity baseline")
    p.add_argument("--baseline-max-ghost", type=float,
                   help="pick the baseline threshold on the train split: best extraction at this ghost rate")

    p = sub.add_parser("ablate", parents=[common], help="loss curves for the method variants")
    p.add_argument("--data")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--variant", choices=VARIANTS, help="run only this variant")

    p = sub.add_parser("report", parents=[common], help="extraction vs concentration table")
    p.add_argument("metrics", nargs="*", help="metrics.csv files or evaluate directories")
    p.add_argument("--plot", action="store_true", help="also write an SVG plot")
    return parser


def _thread_limit(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(n)


def report_error(err: CliError) -> int:
    print(json.dumps({"error": err.kind, "message": err.message, "path": err.path}), file=sys.stderr)
    return err.code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise CliError("config", "--threads must be >= 1", "threads", EXIT_CONFIG)
        cfg = apply_flags(RunConfig.load(args.config), args)
        with _thread_limit(1 if args.deterministic else args.threads):
            out = COMMANDS[args.command](args, cfg)
    except CliError as err:
        return report_error(err)
    except (ArchError, OpticsError) as exc:
        return report_error(CliError("config", str(exc), None, EXIT_CONFIG))
    except DatasetError as exc:
        code = EXIT_MISSING if "not found" in str(exc) or "missing" in str(exc) else EXIT_FAILURE
        return report_error(CliError("dataset", str(exc), None, code))
    except (TrainingError, arrayio.FormatError) as exc:
        return report_error(CliError(type(exc).__name__, str(exc)))
    except OSError as exc:
        return report_error(CliError("io", str(exc), getattr(exc, "filename", None)))
    print(out)
    return 0
