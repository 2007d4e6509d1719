"""Command-line entry point: dataset generation, training, benchmarking,
and embedding export, driven by an INI config file with flag overrides.

Exit codes: 0 ok, 2 configuration error, 3 I/O or file-format error,
4 checkpoint version mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .cvnn import ModelConfig, load_checkpoint, save_checkpoint
from .data import generate_dataset, load_iq_file, sample_episode, save_iq_file, synth_emitter_profiles
from .errors import ConfigError, FileFormatError, UnsupportedVersion
from .metrics import export_embeddings
from .train import METHOD_FLAGS, TrainConfig, monte_carlo_benchmark, train_hda_dml

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VERSION = 4

# section -> {key: default-as-string}; unknown keys are a hard error.
CONFIG_SCHEMA = {
    "dataset": {
        "classes": "5",
        "samples_per_class": "150",
        "length": "1024",
        "snr_db": "30",
        "separation": "0.5",
    },
    "model": {
        "input_len": "1024",
        "conv_layers": "8:7:2,16:5:2",
        "pooled_len": "32",
        "embed_dim": "64",
    },
    "train": {
        "iterations": "300",
        "batch_size": "16",
        "lr": "0.01",
        "triplet_weight": "0.01",
        "margin": "5",
        "method": "hda_dml",
        "shots": "20",
        "test_per_class": "50",
    },
    "benchmark": {
        "shots": "1,5,10,15,20",
        "runs": "10",
        "methods": "hda_dml,ce_only,da_only,triplet_only",
        "test_per_class": "50",
    },
    "run": {
        "seed": "0",
        "jobs": "1",
    },
}


@dataclass
class RunConfig:
    """Effective configuration after defaults, file values, and overrides."""

    dataset_classes: int
    samples_per_class: int
    length: int
    snr_db: float
    separation: float
    model: ModelConfig
    train: TrainConfig
    train_method: str
    train_shots: int
    train_test_per_class: int
    bench_shots: list
    bench_runs: int
    bench_methods: list
    bench_test_per_class: int
    seed: int
    jobs: int

    def echo(self) -> dict:
        return {
            "dataset": {
                "classes": self.dataset_classes,
                "samples_per_class": self.samples_per_class,
                "length": self.length,
                "snr_db": self.snr_db,
                "separation": self.separation,
            },
            "model": self.model.to_dict(),
            "train": {
                "iterations": self.train.iterations,
                "batch_size": self.train.batch_size,
                "lr": self.train.lr,
                "triplet_weight": self.train.triplet_weight,
                "margin": self.train.margin,
                "method": self.train_method,
                "shots": self.train_shots,
                "test_per_class": self.train_test_per_class,
            },
            "benchmark": {
                "shots": self.bench_shots,
                "runs": self.bench_runs,
                "methods": self.bench_methods,
                "test_per_class": self.bench_test_per_class,
            },
            "run": {"seed": self.seed, "jobs": self.jobs},
        }


def _parse_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: expected an integer, got {raw!r}") from exc


def _parse_float(raw: str, where: str) -> float:
    if raw.strip().lower() == "inf":
        return math.inf
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a number, got {raw!r}") from exc


def _parse_conv_layers(raw: str, where: str):
    layers = []
    for part in raw.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(
                f"{where}: each layer must be out:kernel:stride, got {part.strip()!r}"
            )
        layers.append(tuple(_parse_int(b, where) for b in bits))
    return tuple(layers)


def _parse_int_list(raw: str, where: str):
    return [_parse_int(p.strip(), where) for p in raw.split(",") if p.strip()]


def load_config(path=None, seed_override=None, jobs_override=None) -> RunConfig:
    """Merge defaults, the optional INI file, and CLI overrides."""
    values = {sec: dict(keys) for sec, keys in CONFIG_SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError:
            raise
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in CONFIG_SCHEMA[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                values[section][key] = raw

    if seed_override is not None:
        values["run"]["seed"] = str(seed_override)
    if jobs_override is not None:
        values["run"]["jobs"] = str(jobs_override)

    ds = values["dataset"]
    md = values["model"]
    tr = values["train"]
    bm = values["benchmark"]
    rn = values["run"]

    seed = _parse_int(rn["seed"], "[run] seed")
    if seed < 0:
        raise ConfigError("[run] seed must be non-negative")
    jobs = _parse_int(rn["jobs"], "[run] jobs")
    if jobs < 1:
        raise ConfigError("[run] jobs must be >= 1")

    dataset_classes = _parse_int(ds["classes"], "[dataset] classes")
    length = _parse_int(ds["length"], "[dataset] length")
    input_len = _parse_int(md["input_len"], "[model] input_len")
    if input_len != length:
        raise ConfigError(
            f"[model] input_len ({input_len}) must equal [dataset] length ({length})"
        )
    try:
        model = ModelConfig(
            num_classes=dataset_classes,
            input_len=input_len,
            conv_layers=_parse_conv_layers(md["conv_layers"], "[model] conv_layers"),
            pooled_len=_parse_int(md["pooled_len"], "[model] pooled_len"),
            embed_dim=_parse_int(md["embed_dim"], "[model] embed_dim"),
        )
        train_cfg = TrainConfig(
            iterations=_parse_int(tr["iterations"], "[train] iterations"),
            batch_size=_parse_int(tr["batch_size"], "[train] batch_size"),
            lr=_parse_float(tr["lr"], "[train] lr"),
            triplet_weight=_parse_float(tr["triplet_weight"], "[train] triplet_weight"),
            margin=_parse_float(tr["margin"], "[train] margin"),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    method = tr["method"].strip()
    if method not in METHOD_FLAGS:
        raise ConfigError(f"[train] method {method!r} not one of {sorted(METHOD_FLAGS)}")
    bench_methods = [m.strip() for m in bm["methods"].split(",") if m.strip()]
    for m in bench_methods:
        if m not in METHOD_FLAGS:
            raise ConfigError(f"[benchmark] methods: {m!r} not one of {sorted(METHOD_FLAGS)}")

    return RunConfig(
        dataset_classes=dataset_classes,
        samples_per_class=_parse_int(ds["samples_per_class"], "[dataset] samples_per_class"),
        length=length,
        snr_db=_parse_float(ds["snr_db"], "[dataset] snr_db"),
        separation=_parse_float(ds["separation"], "[dataset] separation"),
        model=model,
        train=train_cfg,
        train_method=method,
        train_shots=_parse_int(tr["shots"], "[train] shots"),
        train_test_per_class=_parse_int(tr["test_per_class"], "[train] test_per_class"),
        bench_shots=_parse_int_list(bm["shots"], "[benchmark] shots"),
        bench_runs=_parse_int(bm["runs"], "[benchmark] runs"),
        bench_methods=bench_methods,
        bench_test_per_class=_parse_int(bm["test_per_class"], "[benchmark] test_per_class"),
        seed=seed,
        jobs=jobs,
    )


def _write_sidecar(out_path, command: str, cfg: RunConfig):
    sidecar = {
        "tool": "fewshot-sei",
        "version": __version__,
        "command": command,
        "effective_config": cfg.echo(),
    }
    with open(str(out_path) + ".run.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(cfg: RunConfig, out_path) -> int:
    rng = np.random.default_rng(cfg.seed)
    profiles = synth_emitter_profiles(cfg.dataset_classes, rng, cfg.separation)
    records = generate_dataset(
        profiles, cfg.samples_per_class, cfg.length, cfg.snr_db, cfg.seed
    )
    save_iq_file(records, out_path)
    _write_sidecar(out_path, "gen-data", cfg)
    counts = {}
    for rec in records:
        counts[rec.label] = counts.get(rec.label, 0) + 1
    print(f"wrote {len(records)} records to {out_path}")
    for label in sorted(counts):
        print(f"  class {label}: {counts[label]} records")
    return EXIT_OK


def cmd_train(cfg: RunConfig, data_path, out_path) -> int:
    dataset = load_iq_file(data_path)
    episode = sample_episode(
        dataset,
        cfg.dataset_classes,
        cfg.train_shots,
        cfg.train_test_per_class,
        np.random.default_rng(cfg.seed),
    )
    train_cfg = cfg.train.with_method(cfg.train_method)
    model, report = train_hda_dml(episode, cfg.model, train_cfg)
    save_checkpoint(model, out_path)
    _write_sidecar(out_path, "train", cfg)
    if report.joint_per_iteration:
        print(
            f"method {cfg.train_method}: joint loss "
            f"{report.joint_per_iteration[0]:.4f} -> {report.joint_per_iteration[-1]:.4f} "
            f"over {len(report.joint_per_iteration)} iterations"
        )
    print(
        f"test accuracy {report.final_accuracy:.4f}, "
        f"silhouette {report.final_silhouette:.4f} "
        f"({report.wall_seconds:.1f}s); checkpoint -> {out_path}"
    )
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, data_path, out_csv) -> int:
    dataset = load_iq_file(data_path)
    table = monte_carlo_benchmark(
        dataset,
        cfg.bench_shots,
        cfg.bench_runs,
        cfg.model,
        cfg.train,
        cfg.bench_methods,
        test_per_class=cfg.bench_test_per_class,
        jobs=cfg.jobs,
    )
    table.write_csv(out_csv)
    _write_sidecar(out_csv, "benchmark", cfg)
    print(f"benchmark table -> {out_csv}")
    print(f"{'method':>14} {'shots':>5} {'acc':>8} {'+-':>7} {'sil':>8} {'+-':>7} {'secs':>7}")
    for row in table.rows:
        secs = table.measured_seconds[(row.method, row.shots)]
        print(
            f"{row.method:>14} {row.shots:>5} {row.acc_mean:8.4f} {row.acc_std:7.4f} "
            f"{row.sil_mean:8.4f} {row.sil_std:7.4f} {secs:7.1f}"
        )
    return EXIT_OK


def cmd_export_embeddings(cfg: RunConfig, checkpoint_path, data_path, out_csv) -> int:
    try:
        model = load_checkpoint(checkpoint_path)
    except UnsupportedVersion as exc:
        print(f"version error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    records = load_iq_file(data_path)
    export_embeddings(model, records, out_csv)
    _write_sidecar(out_csv, "export-embeddings", cfg)
    print(f"exported {len(records)} embeddings (dim {model.config.embed_dim}) -> {out_csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewshot-sei",
        description="Few-shot specific emitter identification toolkit",
    )
    parser.add_argument("--version", action="version", version=f"fewshot-sei {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--jobs", type=int, default=None, help="override [run] jobs")

    p = sub.add_parser("gen-data", help="generate a synthetic IQ dataset file")
    common(p)
    p.add_argument("--out", required=True, help="output IQ file path")

    p = sub.add_parser("train", help="train one episode and save a checkpoint")
    common(p)
    p.add_argument("--data", required=True, help="input IQ file")
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = sub.add_parser("benchmark", help="Monte Carlo few-shot benchmark")
    common(p)
    p.add_argument("--data", required=True, help="input IQ file")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("export-embeddings", help="embed records with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="input IQ file")
    p.add_argument("--out", required=True, help="output CSV path")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, jobs_override=args.jobs)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.out)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, args.data, args.out)
        if args.command == "export-embeddings":
            return cmd_export_embeddings(cfg, args.checkpoint, args.data, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FileFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
