"""Command-line entry point: data generation, training, evaluation,
ablations, and PCA export.

Every command honors ``--seed``, writes a ``manifest.json`` capturing the
resolved configuration, and can be replayed with ``memre rerun`` to
reproduce its artifacts byte for byte (the manifest itself carries the
timestamps and wall times, which are the only run-dependent values).

Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from . import data as data_mod
from . import evalx
from . import loss as loss_mod
from . import trainer as trainer_mod
from .errors import ConfigError, DivergenceError, MemreError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"memre-{__version__}"


def _write_manifest(out_dir: Path, command: str, resolved: dict, seed, outputs, started: float, timing=None):
    manifest = {
        "command": command,
        "resolved_config": resolved,
        "seed": seed,
        "build": _git_describe(),
        "package_version": __version__,
        "started_at": started,
        "finished_at": time.time(),
        "outputs": [str(p) for p in outputs],
    }
    if timing is not None:
        manifest["timing"] = timing
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _data_root(args) -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    env = os.environ.get("MEMRE_DATA")
    if env:
        return Path(env)
    raise ConfigError("no data directory: pass --data or set MEMRE_DATA")


def _load_split(root: Path, split: str):
    path = root / f"{split}.jsonl"
    if not path.exists():
        raise ConfigError(f"missing split file {path}")
    return data_mod.read_jsonl(path)


def _load_corpora(root: Path, cfg: trainer_mod.TrainConfig) -> dict:
    corpora = {}
    for split in cfg.training_splits() + [cfg.dev_split, cfg.test_split]:
        path = root / f"{split}.jsonl"
        if path.exists():
            corpora[split] = data_mod.read_jsonl(path)
    return corpora


# ---------------------------------------------------------------------------
# gen-data


def _run_gen_data(cfg: data_mod.SynthConfig, out: Path, started: float) -> int:
    out.mkdir(parents=True, exist_ok=True)
    result = data_mod.synthesize_pu_corpus(cfg)
    outputs = []
    for name, docs in (
        ("train", result.train),
        ("dev", result.dev),
        ("test", result.test),
        ("oracle", result.oracle),
    ):
        path = out / f"{name}.jsonl"
        data_mod.write_jsonl(docs, path)
        outputs.append(path)
    if result.distant:
        for name, docs in (("distant", result.distant), ("distant_oracle", result.distant_oracle)):
            path = out / f"{name}.jsonl"
            data_mod.write_jsonl(docs, path)
            outputs.append(path)
    priors_path = out / "priors.csv"
    result.priors_train.save(priors_path)
    outputs.append(priors_path)
    if result.priors_distant is not None:
        distant_priors = out / "priors_distant.csv"
        result.priors_distant.save(distant_priors)
        outputs.append(distant_priors)
    _write_manifest(out, "gen-data", asdict(cfg), cfg.seed, outputs, started)
    print(f"wrote {len(outputs)} files to {out}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    started = time.time()
    resolved = config_mod.load_config(args.config) if args.config else {}
    if args.seed is not None:
        resolved["seed"] = args.seed
    synth_keys = set(vars(data_mod.SynthConfig()))
    unknown = set(resolved) - synth_keys - {"stages"}
    if unknown:
        raise ConfigError(f"unknown gen-data config keys: {sorted(unknown)}")
    cfg = data_mod.SynthConfig(**{k: v for k, v in resolved.items() if k in synth_keys})
    return _run_gen_data(cfg, Path(args.out), started)


# ---------------------------------------------------------------------------
# train


def _train_config_from_args(args) -> trainer_mod.TrainConfig:
    resolved = config_mod.load_config(args.config) if args.config else {}
    if args.seed is not None:
        resolved["seed"] = args.seed
    if getattr(args, "memory_size", None) is not None:
        resolved["memory_size"] = args.memory_size
    if not resolved.get("stages"):
        resolved["stages"] = [{"split": "train", "epochs": 5, "lr": 1e-3, "batch_docs": 8, "loss": "ssr-pu"}]
    if getattr(args, "loss", None) is not None:
        for stage in resolved["stages"]:
            stage["loss"] = args.loss
    return trainer_mod.TrainConfig.from_dict(resolved)


def _run_train(cfg: trainer_mod.TrainConfig, root: Path, out: Path, started: float) -> int:
    corpora = _load_corpora(root, cfg)
    priors = {}
    if (root / "priors.csv").exists():
        table = loss_mod.ClassPriorTable.load(root / "priors.csv")
        priors = {split: table for split in cfg.training_splits()}
    if (root / "priors_distant.csv").exists() and "distant" in cfg.training_splits():
        priors["distant"] = loss_mod.ClassPriorTable.load(root / "priors_distant.csv")
    priors = priors or None
    out.mkdir(parents=True, exist_ok=True)
    result = trainer_mod.run_training(corpora, cfg, priors=priors, out_dir=out)
    report_path = out / "train_report.json"
    report_dict = result.report.to_dict(include_timing=False)
    if report_dict.get("final_checkpoint"):
        report_dict["final_checkpoint"] = Path(report_dict["final_checkpoint"]).name
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report_dict, fh, indent=2, sort_keys=True)
    outputs = [out / "checkpoint.json", report_path]
    resolved = cfg.to_dict()
    resolved["data_dir"] = str(root)
    _write_manifest(
        out,
        "train",
        resolved,
        cfg.seed,
        outputs,
        started,
        timing={"stage_wall_time": result.report.stage_wall_time},
    )
    if result.dev_report:
        print(f"dev F1 {result.dev_report.f1:.4f}")
    if result.test_report:
        print(f"test F1 {result.test_report.f1:.4f}")
    print(f"checkpoint: {outputs[0]}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    cfg = _train_config_from_args(args)
    return _run_train(cfg, _data_root(args), Path(args.out), started)


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise ConfigError(f"missing checkpoint {ckpt}")
    params = trainer_mod.load_checkpoint(ckpt)
    root = _data_root(args)
    docs = _load_split(root, args.split)
    distant = None
    if args.ign_against:
        distant = evalx.distant_triple_set(data_mod.read_jsonl(Path(args.ign_against)))
    report = trainer_mod.evaluate(params, docs, distant_triples=distant, topk=args.topk)
    text = report.to_json()
    print(text)
    out_path = Path(args.out) if args.out else Path(f"metrics_{args.split}.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    _write_manifest(
        out_path.parent,
        "eval",
        {"ckpt": str(ckpt), "split": args.split, "topk": args.topk, "ign_against": args.ign_against},
        None,
        [out_path],
        started,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    started = time.time()
    if args.axis not in evalx.ABLATION_AXES:
        raise ConfigError(f"unknown axis {args.axis!r}; choose from {evalx.ABLATION_AXES}")
    base = _train_config_from_args(args)
    root = _data_root(args)
    corpora = _load_corpora(root, base)
    values = [config_mod.parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("no --values given")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    rows = evalx.run_ablation(args.axis, values, corpora, base, seeds=seeds, jobs=args.jobs)
    out_path = Path(args.out) if args.out else Path(f"ablation_{args.axis}.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    evalx.write_ablation_csv(rows, out_path)
    _write_manifest(
        out_path.parent,
        "ablate",
        {"axis": args.axis, "values": values, "seeds": seeds, "base": base.to_dict()},
        seeds,
        [out_path],
        started,
    )
    print(f"wrote {len(rows)} rows to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-pca


def cmd_export_pca(args) -> int:
    started = time.time()
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise ConfigError(f"missing checkpoint {ckpt}")
    params = trainer_mod.load_checkpoint(ckpt)
    if not params.memory_enabled:
        raise ConfigError("checkpoint has no memory tokens to project")
    root = _data_root(args)
    docs = _load_split(root, args.split)
    from . import tensor as T

    vectors = []
    with T.no_grad():
        for doc in docs:
            wanted = sorted({t.head for t in doc.labels})
            if not wanted:
                continue
            pooled = trainer_mod._pool_doc_entities(doc, params)
            vectors.extend(pooled[e].vector.data.copy() for e in wanted)
    if not vectors:
        raise ConfigError("no head entities found in the split's labels")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    evalx.export_memory_pca(params.memory.M.data, np.stack(vectors), out_path)
    _write_manifest(
        out_path.parent,
        "export-pca",
        {"ckpt": str(ckpt), "split": args.split},
        None,
        [out_path],
        started,
    )
    print(f"wrote {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rerun


def cmd_rerun(args) -> int:
    started = time.time()
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    resolved = dict(manifest["resolved_config"])
    out_dir = Path(args.out) if args.out else Path(args.manifest).parent
    if command == "gen-data":
        cfg = data_mod.SynthConfig(**resolved)
        return _run_gen_data(cfg, out_dir, started)
    if command == "train":
        data_dir = resolved.pop("data_dir", None) or os.environ.get("MEMRE_DATA")
        if data_dir is None:
            raise ConfigError("train manifest lacks data_dir and MEMRE_DATA is unset")
        cfg = trainer_mod.TrainConfig.from_dict(resolved)
        return _run_train(cfg, Path(data_dir), out_dir, started)
    raise ConfigError(f"rerun supports gen-data and train manifests, got {command!r}")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memre", description="memory-augmented relation extraction toolkit")
    parser.add_argument("--version", action="version", version=f"memre {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic PU corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model per config stages")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--loss", choices=sorted(loss_mod.RISK_FUNCTIONS), default=None)
    p.add_argument("--memory-size", type=int, default=None, dest="memory_size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("dev", "test"), default="dev")
    p.add_argument("--ign-against", default=None, dest="ign_against")
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)  # evaluation is deterministic; accepted for uniformity
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one axis, training per value")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--seeds", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--loss", default=None)
    p.add_argument("--memory-size", type=int, default=None, dest="memory_size")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-pca", help="project memory tokens and head entities to 2-d")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("dev", "test", "train"), default="dev")
    p.add_argument("--seed", type=int, default=None)  # projection is deterministic; accepted for uniformity
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_pca)

    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.last_checkpoint:
            print(f"last finite-loss checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    except MemreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
