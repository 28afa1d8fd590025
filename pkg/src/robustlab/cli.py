"""Command-line front door.

Subcommands: gen-data, train, adv-train, attack, distill, extract, eval,
bench, report. Each run resolves a flat key=value config (sections become
key prefixes), rejects unknown or missing keys by name, writes the full
effective config next to its outputs, and exits 0 only when the invoked
operation's postconditions held. All randomness fans out from the single
top-level seed via labeled derivations.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .attacks import ATTACK_KINDS, AdvBatch, AttackSpec, run_attack, save_adv_batch
from .data import SplitSpec, load_dataset, save_dataset, split_dataset, synth_generate
from .ensemble import EnsembleModel
from .nn import (
    CnnHead,
    DistilledCnn,
    ExtractionCnn,
    LinearClassifier,
    ViTConfig,
    ViTModel,
    benchmark_model,
    count_params,
    estimate_flops,
    load_model,
    model_to_bytes,
    save_model,
)
from .pipeline import (
    DistillConfig,
    ExtractionConfig,
    REPORT_COLUMNS,
    RunReport,
    TrainConfig,
    adversarial_train,
    build_distill_dataset,
    config_digest_of,
    distill_train,
    evaluate,
    extraction_attack,
    train_clean,
)
from .util import derive_seed, new_rng


class CliError(Exception):
    """Config or usage problem; reported as a single line, exit code 2."""


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | bool
    default: object = None
    required: bool = False
    choices: tuple[str, ...] | None = None


def _model_fields() -> dict[str, Field]:
    return {
        "model.kind": Field("str", "vit", choices=("vit", "ensemble", "distilled",
                                                    "extraction", "linear")),
        "model.path": Field("str", ""),
        "model.backbone_path": Field("str", ""),
        "model.image_size": Field("int", 32),
        "model.patch_size": Field("int", 4),
        "model.channels": Field("int", 3),
        "model.embed_dim": Field("int", 64),
        "model.depth": Field("int", 6),
        "model.heads": Field("int", 4),
        "model.mlp_dim": Field("int", 128),
        "model.classes": Field("int", 2),
        "model.m": Field("int", 3),
        "model.fusion": Field("str", "majority", choices=("majority", "mean")),
    }


def _split_fields() -> dict[str, Field]:
    return {
        "split.train": Field("float", 0.8),
        "split.val": Field("float", 0.1),
        "split.test": Field("float", 0.1),
    }


def _train_fields() -> dict[str, Field]:
    return {
        "train.epochs": Field("int", 5),
        "train.batch_size": Field("int", 30),
        "train.learning_rate": Field("float", 1e-3),
        "train.optimizer": Field("str", "adam", choices=("adam", "sgd")),
        "train.lambda": Field("float", 0.5),
    }


def _attack_fields() -> dict[str, Field]:
    return {
        "attack.kind": Field("str", "fgsm", choices=ATTACK_KINDS),
        "attack.epsilon": Field("float", 0.03),
        "attack.steps": Field("int", 10),
        "attack.step_size": Field("str", "auto"),
        "attack.random_start": Field("bool", True),
        "attack.split": Field("str", "test", choices=("train", "val", "test")),
        "attack.batch_size": Field("int", 64),
    }


SCHEMAS: dict[str, dict[str, Field]] = {
    "gen-data": {
        "seed": Field("int", 0),
        "data.n": Field("int", 2000),
        "data.image_size": Field("int", 32),
    },
    "train": {
        "seed": Field("int", 0),
        "data.path": Field("str", required=True),
        **_split_fields(),
        **_model_fields(),
        **_train_fields(),
    },
    "adv-train": {
        "seed": Field("int", 0),
        "data.path": Field("str", required=True),
        **_split_fields(),
        **_model_fields(),
        **_train_fields(),
        "attack.kind": Field("str", "fgsm", choices=ATTACK_KINDS),
        "attack.epsilon": Field("float", 0.03),
        "attack.steps": Field("int", 10),
        "attack.step_size": Field("str", "auto"),
        "attack.random_start": Field("bool", True),
    },
    "attack": {
        "seed": Field("int", 0),
        "data.path": Field("str", required=True),
        **_split_fields(),
        "model.path": Field("str", required=True),
        **_attack_fields(),
    },
    "distill": {
        "seed": Field("int", 0),
        "data.path": Field("str", required=True),
        **_split_fields(),
        "distill.teacher_path": Field("str", required=True),
        "distill.temperature": Field("float", 20.0),
        "distill.student": Field("str", "distilled", choices=("distilled", "extraction")),
        "distill.epochs": Field("int", 5),
        "distill.batch_size": Field("int", 30),
        "distill.learning_rate": Field("float", 1e-3),
        "distill.soft_mode": Field("str", "voter_mean", choices=("voter_mean", "final_head")),
        "attack.kind": Field("str", "fgsm", choices=ATTACK_KINDS),
        "attack.epsilon": Field("float", 0.03),
        "attack.steps": Field("int", 10),
        "attack.step_size": Field("str", "auto"),
        "attack.random_start": Field("bool", True),
    },
    "extract": {
        "seed": Field("int", 0),
        "data.path": Field("str", required=True),
        **_split_fields(),
        "extract.victim_path": Field("str", required=True),
        "extract.query_budget": Field("int", 1000),
        "extract.query_source": Field("str", "train", choices=("train", "val", "test")),
        "extract.replica": Field("str", "extraction", choices=("extraction", "distilled")),
        "extract.epochs": Field("int", 5),
        "extract.batch_size": Field("int", 30),
        "extract.learning_rate": Field("float", 1e-3),
        "extract.output_mode": Field("str", "hard", choices=("hard", "soft")),
    },
    "eval": {
        "seed": Field("int", 0),
        "data.path": Field("str", required=True),
        **_split_fields(),
        "model.path": Field("str", required=True),
        "eval.split": Field("str", "test", choices=("train", "val", "test")),
        "eval.attacks": Field("str", ""),
        "eval.attack_source": Field("str", ""),
        "eval.tag": Field("str", "model"),
        "eval.batch_size": Field("int", 64),
    },
    "bench": {
        "seed": Field("int", 0),
        "model.path": Field("str", required=True),
        "bench.batch_size": Field("int", 16),
        "bench.repeats": Field("int", 5),
        "bench.image_size": Field("int", 32),
        "bench.tag": Field("str", "model"),
    },
    "report": {},
}


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Flat key = value lines; [section] headers prefix the keys that follow."""
    out: dict[str, str] = {}
    section = ""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise CliError(f"line {ln}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        full = f"{section}.{key}" if section else key
        if full in out:
            raise CliError(f"duplicate config key: {full}")
        out[full] = value.strip()
    return out


def _parse_value(key: str, raw: str, f: Field):
    try:
        if f.kind == "int":
            return int(raw)
        if f.kind == "float":
            return float(raw)
        if f.kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        value = raw
    except ValueError:
        raise CliError(f"invalid value for {key}: {raw!r} (expected {f.kind})") from None
    if f.choices and value not in f.choices:
        raise CliError(f"invalid value for {key}: {value!r} (choices: {', '.join(f.choices)})")
    return value


def resolve_config(command: str, raw: dict[str, str]) -> dict[str, object]:
    schema = SCHEMAS[command]
    for key in raw:
        if key not in schema:
            raise CliError(f"unknown config key: {key}")
    cfg: dict[str, object] = {}
    for key, f in schema.items():
        if key in raw:
            cfg[key] = _parse_value(key, raw[key], f)
        elif f.required:
            raise CliError(f"missing config key: {key}")
        else:
            cfg[key] = f.default
    return cfg


def effective_config_text(command: str, cfg: dict[str, object]) -> str:
    """Canonical serialization: schema order, sections grouped."""
    lines = [f"# command: {command}"]
    section = None
    for key in SCHEMAS[command]:
        if "." in key:
            sec, name = key.split(".", 1)
        else:
            sec, name = "", key
        if sec != section:
            if sec:
                lines.append(f"[{sec}]")
            section = sec
        v = cfg[key]
        if isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _load_splits(cfg):
    data = load_dataset(cfg["data.path"])
    spec = SplitSpec(cfg["split.train"], cfg["split.val"], cfg["split.test"],
                     seed=derive_seed(cfg["seed"], "split"))
    return split_dataset(data, spec)


def _attack_spec(cfg, seed: int, prefix: str = "attack") -> AttackSpec:
    raw_step = cfg[f"{prefix}.step_size"]
    step = None if raw_step in ("", "auto") else float(raw_step)
    return AttackSpec(
        kind=cfg[f"{prefix}.kind"], epsilon=cfg[f"{prefix}.epsilon"],
        steps=cfg[f"{prefix}.steps"], step_size=step,
        random_start=cfg[f"{prefix}.random_start"], seed=seed,
    )


def _fresh_model(cfg, seed: int):
    kind = cfg["model.kind"]
    channels, classes = cfg["model.channels"], cfg["model.classes"]
    if kind == "vit":
        return ViTModel(_vit_config(cfg), seed=derive_seed(seed, "model"))
    if kind == "ensemble":
        if cfg["model.backbone_path"]:
            backbone = load_model(cfg["model.backbone_path"])
            if not isinstance(backbone, ViTModel):
                raise CliError("model.backbone_path must point to a vit checkpoint")
        else:
            backbone = ViTModel(_vit_config(cfg), seed=derive_seed(seed, "model"))
        heads = [
            CnnHead(backbone.config.embed_dim, backbone.config.num_classes,
                    seed=derive_seed(seed, f"head-{i}"))
            for i in range(cfg["model.m"])
        ]
        return EnsembleModel(backbone, heads, fusion=cfg["model.fusion"])
    if kind == "distilled":
        return DistilledCnn(channels, classes, seed=derive_seed(seed, "model"))
    if kind == "extraction":
        return ExtractionCnn(channels, classes, seed=derive_seed(seed, "model"))
    size = cfg["model.image_size"]
    return LinearClassifier(channels * size * size, classes, seed=derive_seed(seed, "model"))


def _vit_config(cfg) -> ViTConfig:
    return ViTConfig(
        image_size=cfg["model.image_size"], patch_size=cfg["model.patch_size"],
        channels=cfg["model.channels"], embed_dim=cfg["model.embed_dim"],
        depth=cfg["model.depth"], heads=cfg["model.heads"],
        mlp_dim=cfg["model.mlp_dim"], num_classes=cfg["model.classes"],
    )


def _pick_split(splits, name: str):
    return {"train": splits[0], "val": splits[1], "test": splits[2]}[name]


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec if isinstance(rec, str) else json.dumps(rec, sort_keys=True))
            fh.write("\n")


def _write_report_files(out: Path, reports: list[RunReport]) -> None:
    _write_jsonl(out / "report.jsonl", [r.to_json() for r in reports])
    with open(out / "report.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for r in reports:
            fh.write(",".join(r.csv_row()) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_gen_data(cfg, out: Path, digest: str) -> None:
    data = synth_generate(cfg["data.n"], cfg["data.image_size"],
                          seed=derive_seed(cfg["seed"], "data"))
    save_dataset(data, out / "data.sedd")
    print(f"gen-data: wrote {len(data)} images ({cfg['data.image_size']}px) to {out / 'data.sedd'}")


def _cmd_train(cfg, out: Path, digest: str) -> None:
    train, val, _ = _load_splits(cfg)
    model = load_model(cfg["model.path"]) if cfg["model.path"] else _fresh_model(cfg, cfg["seed"])
    tc = TrainConfig(epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
                     learning_rate=cfg["train.learning_rate"],
                     optimizer=cfg["train.optimizer"],
                     seed=derive_seed(cfg["seed"], "train"), lam=cfg["train.lambda"])
    history = train_clean(model, train, tc, val=val)
    save_model(model, out / "model.sedm")
    _write_jsonl(out / "curves.jsonl", history)
    final = history[-1]["val_accuracy"] if history else None
    print(f"train: saved {out / 'model.sedm'}; epochs={cfg['train.epochs']} val_acc={final}")


def _cmd_adv_train(cfg, out: Path, digest: str) -> None:
    train, val, _ = _load_splits(cfg)
    model = load_model(cfg["model.path"]) if cfg["model.path"] else _fresh_model(cfg, cfg["seed"])
    tc = TrainConfig(epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
                     learning_rate=cfg["train.learning_rate"],
                     optimizer=cfg["train.optimizer"],
                     seed=derive_seed(cfg["seed"], "adv-train"), lam=cfg["train.lambda"],
                     attack_spec=_attack_spec(cfg, seed=0))
    history = adversarial_train(model, train, tc, val=val)
    save_model(model, out / "model.sedm")
    _write_jsonl(out / "curves.jsonl", history)
    final = history[-1]["val_accuracy"] if history else None
    print(f"adv-train: saved {out / 'model.sedm'}; lambda={cfg['train.lambda']} val_acc={final}")


def _cmd_attack(cfg, out: Path, digest: str) -> None:
    splits = _load_splits(cfg)
    data = _pick_split(splits, cfg["attack.split"])
    model = load_model(cfg["model.path"])
    bs = cfg["attack.batch_size"]
    parts: list[AdvBatch] = []
    for bi, start in enumerate(range(0, len(data), bs)):
        xb = data.images[start : start + bs]
        yb = data.labels[start : start + bs]
        spec = _attack_spec(cfg, seed=derive_seed(cfg["seed"], f"attack-{bi}"))
        parts.append(run_attack(model, xb, yb, spec))
    merged = AdvBatch(
        x=np.concatenate([p.x for p in parts]),
        x_adv=np.concatenate([p.x_adv for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        success=np.concatenate([p.success for p in parts]),
        epsilon=cfg["attack.epsilon"], kind=cfg["attack.kind"], seed=cfg["seed"],
    )
    save_adv_batch(merged, out / "adv")
    rate = float(merged.success.mean())
    print(f"attack: {cfg['attack.kind']}@{cfg['attack.epsilon']:g} success_rate={rate:.3f} "
          f"over {len(data)} images -> {out / 'adv.jsonl'}")


def _cmd_distill(cfg, out: Path, digest: str) -> None:
    train, _, _ = _load_splits(cfg)
    teacher = load_model(cfg["distill.teacher_path"])
    bs = cfg["distill.batch_size"]
    adv_parts = []
    for bi, start in enumerate(range(0, len(train), 128)):
        xb = train.images[start : start + 128]
        yb = train.labels[start : start + 128]
        spec = _attack_spec(cfg, seed=derive_seed(cfg["seed"], f"distill-adv-{bi}"))
        adv_parts.append(run_attack(teacher, xb, yb, spec))
    soft = build_distill_dataset(train, adv_parts, teacher, cfg["distill.temperature"],
                                 mode=cfg["distill.soft_mode"])
    classes = soft.targets.shape[1]
    channels = train.images.shape[1]
    if cfg["distill.student"] == "distilled":
        student = DistilledCnn(channels, classes, seed=derive_seed(cfg["seed"], "student"))
    else:
        student = ExtractionCnn(channels, classes, seed=derive_seed(cfg["seed"], "student"))
    dc = DistillConfig(temperature=cfg["distill.temperature"], student=cfg["distill.student"],
                       epochs=cfg["distill.epochs"], batch_size=bs,
                       learning_rate=cfg["distill.learning_rate"],
                       seed=derive_seed(cfg["seed"], "distill"))
    history = distill_train(student, soft, dc)
    save_model(student, out / "student.sedm")
    _write_jsonl(out / "curves.jsonl", history)
    print(f"distill: trained {cfg['distill.student']} on {len(soft)} soft-labeled images "
          f"(T={cfg['distill.temperature']:g}) -> {out / 'student.sedm'}")


def _cmd_extract(cfg, out: Path, digest: str) -> None:
    splits = _load_splits(cfg)
    pool = _pick_split(splits, cfg["extract.query_source"])
    heldout = splits[2]
    victim = load_model(cfg["extract.victim_path"])
    ec = ExtractionConfig(
        query_budget=cfg["extract.query_budget"], query_source=cfg["extract.query_source"],
        replica=cfg["extract.replica"], epochs=cfg["extract.epochs"],
        batch_size=cfg["extract.batch_size"], learning_rate=cfg["extract.learning_rate"],
        seed=derive_seed(cfg["seed"], "extract"),
        victim_output_mode=cfg["extract.output_mode"],
    )
    result = extraction_attack(victim, ec, pool.images, heldout)
    save_model(result.replica, out / "replica.sedm")
    record = {
        "fidelity": result.fidelity,
        "replica_clean_accuracy": result.replica_clean_accuracy,
        "forward_queries": result.forward_queries,
        "gradient_queries": result.gradient_queries,
        "query_budget": result.query_budget,
        "config_digest": digest,
    }
    with open(out / "extraction.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"extract: fidelity={result.fidelity:.3f} replica_clean={result.replica_clean_accuracy:.3f} "
          f"queries={result.forward_queries}/{result.query_budget} grad_queries={result.gradient_queries}")


def _parse_attack_list(raw: str, seed: int) -> list[AttackSpec]:
    specs = []
    for item in filter(None, (s.strip() for s in raw.split(","))):
        if "@" not in item:
            raise CliError(f"invalid value for eval.attacks: {item!r} (want kind@epsilon)")
        kind, eps = item.split("@", 1)
        if kind not in ATTACK_KINDS:
            raise CliError(f"invalid value for eval.attacks: unknown kind {kind!r}")
        try:
            epsilon = float(eps)
        except ValueError:
            raise CliError(f"invalid value for eval.attacks: bad epsilon {eps!r}") from None
        specs.append(AttackSpec(kind=kind, epsilon=epsilon, seed=seed))
    return specs


def _cmd_eval(cfg, out: Path, digest: str) -> None:
    splits = _load_splits(cfg)
    data = _pick_split(splits, cfg["eval.split"])
    model = load_model(cfg["model.path"])
    specs = _parse_attack_list(cfg["eval.attacks"], seed=0)
    attack_on = load_model(cfg["eval.attack_source"]) if cfg["eval.attack_source"] else None
    report = evaluate(model, data, specs, tag=cfg["eval.tag"],
                      seed=derive_seed(cfg["seed"], "eval"),
                      batch_size=cfg["eval.batch_size"], config_digest=digest,
                      attack_on=attack_on)
    _write_report_files(out, [report])
    print(f"eval: {report.model_tag} clean={report.clean_accuracy:.3f} "
          + " ".join(f"{k}={v:.3f}" for k, v in report.robust.items()))


def _cmd_bench(cfg, out: Path, digest: str) -> None:
    model = load_model(cfg["model.path"])
    rng = new_rng(cfg["seed"], "bench")
    bs = cfg["bench.batch_size"]
    if isinstance(model, (ViTModel, EnsembleModel)):
        c = model.config if isinstance(model, ViTModel) else model.backbone.config
        shape = (bs, c.channels, c.image_size, c.image_size)
    elif isinstance(model, LinearClassifier):
        shape = (bs, model.n_features)
    else:
        shape = (bs, model.in_channels, cfg["bench.image_size"], cfg["bench.image_size"])
    batch = rng.uniform(0, 1, size=shape).astype(np.float32)
    latency, throughput, weight_bytes = benchmark_model(model, batch, cfg["bench.repeats"])
    input_shape = shape[1:] if len(shape) == 4 else None
    try:
        flops = estimate_flops(model, input_shape)
    except TypeError:
        flops = None
    report = RunReport(
        model_tag=cfg["bench.tag"], clean_accuracy=None, params=count_params(model),
        flops=flops, weight_bytes=weight_bytes, latency=latency, throughput=throughput,
        seed=cfg["seed"], config_digest=digest,
    )
    _write_report_files(out, [report])
    print(f"bench: {report.model_tag} params={report.params} flops={report.flops} "
          f"weight_bytes={weight_bytes} latency={latency:.4f}s throughput={throughput:.1f}/s")


def merge_reports(reports: list[RunReport]) -> list[RunReport]:
    """One row per model tag; duplicate tags must carry identical digests."""
    by_tag: dict[str, RunReport] = {}
    for r in reports:
        if r.model_tag in by_tag:
            kept = by_tag[r.model_tag]
            if kept.config_digest != r.config_digest:
                raise CliError(
                    f"duplicate model tag {r.model_tag!r} with differing config digest"
                )
            if kept.to_json() != r.to_json():
                raise CliError(f"conflicting reports for model tag {r.model_tag!r}")
            continue
        by_tag[r.model_tag] = r
    return list(by_tag.values())


def _cmd_report(inputs: list[str], out: Path) -> None:
    if not inputs:
        raise CliError("report needs at least one input report file")
    reports: list[RunReport] = []
    for path in inputs:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    reports.append(RunReport.from_json(line))
    merged = merge_reports(reports)
    header = ",".join(REPORT_COLUMNS)
    rows = [",".join(r.csv_row()) for r in merged]
    with open(out / "merged.csv", "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")
    _write_jsonl(out / "merged.jsonl", [r.to_json() for r in merged])
    print(header)
    for row in rows:
        print(row)


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "adv-train": _cmd_adv_train,
    "attack": _cmd_attack,
    "distill": _cmd_distill,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustlab",
                                     description="adversarial-robustness workbench")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_COMMANDS) + ["report"]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="top-level seed override")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable")
        if name == "report":
            p.add_argument("inputs", nargs="*", help="report .jsonl files to merge")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "report":
            if args.seed is not None or args.set:
                raise CliError("report takes no config overrides")
            _cmd_report(args.inputs, out)
            return 0
        raw: dict[str, str] = {}
        if args.config:
            cfg_path = Path(args.config)
            if not cfg_path.exists():
                raise CliError(f"missing input file: {args.config}")
            raw = parse_config_text(cfg_path.read_text(encoding="utf-8"))
        for item in args.set:
            if "=" not in item:
                raise CliError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = resolve_config(args.command, raw)
        text = effective_config_text(args.command, cfg)
        (out / "effective.cfg").write_text(text, encoding="utf-8")
        digest = config_digest_of(text)
        _COMMANDS[args.command](cfg, out, digest)
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input file: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, T.ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
