"""Command-line batch pipeline: align, generate, augment, filter, stats, print-config."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .align import align_bundle
from .augment import ObservationConfig
from .config import (PipelineConfig, augment_config, dump_config, filter_tolerances, grasp_config,
                     load_config)
from .errors import ConfigError, DexgenError, EmptyInput, GenerationError, MissingAsset
from .filtercheck import filter_records
from .grasp import Kinematics, load_reference_hand
from .ingest import load_bundle, load_demo_dataset, load_hand_model, load_task_annotation, write_bundle
from .ingest.dataset import write_demo_dataset
from .pipeline import augment_dataset, generate_source

log = logging.getLogger("dexgen")

ALIGNED, SOURCE, DATASET = "aligned", "source", "dataset"
WORLD_FILE, REPORT_FILE, FILTER_FILE = "world_frame.json", "report.json", "filter.jsonl"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def _config(args) -> PipelineConfig:
    overrides = _parse_sets(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.preset is not None:
        overrides["augment.preset"] = args.preset
    return PipelineConfig(load_config(args.config, overrides))


def _kinematics(cfg) -> Kinematics:
    path = cfg["paths.hand_model"]
    return Kinematics(load_hand_model(path) if path else load_reference_hand())


def _out(args) -> Path:
    return Path(args.out)


# --------------------------------------------------------------------------
# commands


def cmd_align(cfg: PipelineConfig, out: Path):
    cfg.require_paths("paths.bundle")
    bundle = load_bundle(cfg["paths.bundle"])
    world, wf = align_bundle(bundle, cfg["world.workspace_x"], method=cfg["world.view_method"])
    R = wf.transform.R
    residual = float(np.abs(R @ R.T - np.eye(3)).max())
    out.mkdir(parents=True, exist_ok=True)
    write_bundle(world, out / ALIGNED)
    (out / WORLD_FILE).write_text(_dumps(wf.to_dict()), encoding="utf-8")
    log.info("event=align.done bundle=%s scale=%.6f orthonormality=%.2e", bundle.bundle_id, wf.scale_factor, residual)
    return world, wf


def _aligned(cfg, out: Path):
    if (out / ALIGNED / "manifest.json").is_file():
        return load_bundle(out / ALIGNED)
    world, _ = cmd_align(cfg, out)
    return world


def cmd_generate(cfg: PipelineConfig, out: Path):
    cfg.require_paths("paths.tasks")
    bundle = _aligned(cfg, out)
    ann = load_task_annotation(cfg["paths.tasks"], bundle.object_ids)
    kin = _kinematics(cfg)
    record, _ = generate_source(bundle, ann, kin, grasp_config(cfg), cfg["grasp.finger_count"], cfg["seed"])
    report = filter_records([record], bundle, filter_tolerances(cfg))[0]
    write_demo_dataset([record], out / SOURCE)
    (out / SOURCE / REPORT_FILE).write_text(_dumps(report.to_dict()), encoding="utf-8")
    log.info("event=generate.filter record=%s verdict=%s", record.record_id, report.verdict)
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        raise GenerationError(f"source demo {record.record_id} failed the filter: {', '.join(failed)}")
    return record, report


def cmd_augment(cfg: PipelineConfig, out: Path):
    src_dir = out / SOURCE
    records = load_demo_dataset(src_dir)
    if len(records) != 1:
        raise ConfigError(f"{src_dir} should hold exactly one source record, found {len(records)}")
    kin = _kinematics(cfg)
    acfg = augment_config(cfg.values)
    data = augment_dataset(records[0], cfg["dataset.count"], cfg["seed"], acfg, kin, ObservationConfig(),
                           cfg["jobs"])
    for r in data:
        r.provenance["preset"] = cfg["augment.preset"]
    write_demo_dataset(data, out / DATASET)
    log.info("event=augment.done count=%d preset=%s seed=%d", len(data), cfg["augment.preset"], cfg["seed"])
    return data


def _load_nonempty(path: Path):
    if not path.is_dir() or not any(path.iterdir()):
        raise EmptyInput(f"no dataset at {path}")
    return load_demo_dataset(path)


def cmd_filter(cfg: PipelineConfig, out: Path, dataset: Path = None):
    dataset = dataset or out / DATASET
    records = _load_nonempty(dataset)
    reports = filter_records(records, None, filter_tolerances(cfg), cfg["filter.description"],
                             cfg["filter.judge_command"] or None, cfg["filter.judge_timeout"],
                             cfg["filter.judge_concurrency"])
    out.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in reports]
    (out / FILTER_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    n = sum(r.passed for r in reports)
    log.info("event=filter.done records=%d passed=%d", len(reports), n)
    return reports


def dataset_stats(records, reports, bins=8, scale_range=(0.8, 1.2)) -> dict:
    scales = np.array([float(r.provenance.get("scale", 1.0)) for r in records])
    lo, hi = scale_range
    lo, hi = min(lo, scales.min()), max(hi, scales.max())
    counts, edges = np.histogram(scales, bins=bins, range=(lo, hi) if hi > lo else (lo - 0.5, lo + 0.5))
    passed = sum(r.passed for r in reports)
    return {
        "records": len(records),
        "frames": int(sum(r.horizon for r in records)),
        "embodiments": sorted({len(r.sides) for r in records}),
        "objects": sorted({oid for r in records for oid in r.object_ids}),
        "distinct_seeds": len({r.provenance.get("seed") for r in records}),
        "passed": int(passed),
        "pass_rate": passed / len(records),
        "failed_checks": {name: sum(1 for rep in reports for c in rep.checks if c.name == name and not c.passed)
                          for name in ("final_pose", "object_penetration", "no_gaps", "joint_limits")},
        "scale_histogram": {"edges": [round(float(e), 6) for e in edges], "counts": counts.tolist()},
    }


def cmd_stats(cfg: PipelineConfig, dataset: Path):
    try:
        records = _load_nonempty(dataset)
    except MissingAsset as exc:
        raise EmptyInput(str(exc)) from None
    reports = filter_records(records, None, filter_tolerances(cfg))
    return dataset_stats(records, reports, scale_range=(cfg["augment.scale_lo"], cfg["augment.scale_hi"]))


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (flat dotted or nested keys)")
    common.add_argument("--seed", type=int, help="master seed (config key: seed)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--preset", help="augmentation preset: appendix-a2, main-text or identity")
    common.add_argument("--jobs", type=int, help="worker processes for augmentation")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    p = argparse.ArgumentParser(prog="dexgen", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("align", parents=[common], help="recover scale and world frame; write the aligned bundle")
    sub.add_parser("generate", parents=[common], help="generate the source demonstration")
    sub.add_parser("augment", parents=[common], help="expand the source into dataset.count demos")
    f = sub.add_parser("filter", parents=[common], help="rule-filter a dataset (and consult a judge if set)")
    f.add_argument("dataset", nargs="?", help="dataset directory (default: OUT/dataset)")
    s = sub.add_parser("stats", parents=[common], help="summarize a dataset")
    s.add_argument("dataset", help="dataset directory")
    sub.add_parser("print-config", parents=[common], help="print every config key with its value")
    return p


def _setup_logging(verbose: int):
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s %(message)s", stream=sys.stderr, force=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = _config(args)
        out = _out(args)
        if args.command == "print-config":
            sys.stdout.write(dump_config(cfg.values))
        elif args.command == "align":
            cmd_align(cfg, out)
        elif args.command == "generate":
            cmd_generate(cfg, out)
        elif args.command == "augment":
            cmd_augment(cfg, out)
        elif args.command == "filter":
            reports = cmd_filter(cfg, out, Path(args.dataset) if args.dataset else None)
            print(f"{sum(r.passed for r in reports)}/{len(reports)} records pass")
        elif args.command == "stats":
            sys.stdout.write(_dumps(cmd_stats(cfg, Path(args.dataset))))
    except DexgenError as exc:
        log.error("event=error kind=%s code=%d message=%s", type(exc).__name__, exc.exit_code, exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is an internal failure
        log.exception("event=error kind=internal")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
