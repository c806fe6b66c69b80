"""Command line entry point: ``rlaugment <command> [--config FILE] [--key value ...]``.

Commands: gen-data, train, grid-search, ablate-m, augment, report.
Every ``--key value`` flag overrides the same key from ``--config``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, formats
from .augment import AugmentRng, apply_op_batch, apply_policy, fill_statistic
from .config import ConfigError, build, read_config
from .core import PolicyError, parse_policy
from .trainee import SyntheticTask, gen_synthetic
from .trainer import (
    TrainConfig,
    ablation_m_sweep,
    grid_search_two_stage,
    read_metrics,
    run_training,
    summarize,
)

log = logging.getLogger("rlaugment")


class UsageError(Exception):
    pass


@dataclass
class GenDataOptions:
    out_dir: str = "data"


@dataclass
class RunPaths:
    train_data: str = ""
    test_data: str = ""
    out_dir: str = "run"


@dataclass
class GridOptions:
    counts: str = "1,2,3,4,5"
    sizes: str = "1,2,3,4,5,6,7,8,9,10"
    warps: str = "10,15,20,25,30,35,40,45,50,55"
    cell_epochs: int = 30


@dataclass
class AblationOptions:
    m_values: str = "2,4,8"
    modes: str = "random,rl"
    repeats: int = 5


@dataclass
class AugmentOptions:
    input: str = ""
    policy: str = ""
    seed: int = 0
    output: str = ""


ALIASES = {"policy": "fixed_policy"}

COMMAND_SECTIONS = {
    "gen-data": (SyntheticTask, GenDataOptions),
    "train": (TrainConfig, RunPaths),
    "grid-search": (TrainConfig, RunPaths, GridOptions),
    "ablate-m": (TrainConfig, RunPaths, AblationOptions),
    "augment": (AugmentOptions,),
}


def _pairs(extra: list[str]) -> dict[str, str]:
    out = {}
    it = iter(extra)
    for flag in it:
        if not flag.startswith("--"):
            raise UsageError(f"unexpected argument {flag!r}")
        key, sep, value = flag[2:].partition("=")
        if not sep:
            try:
                value = next(it)
            except StopIteration:
                raise UsageError(f"flag {flag} needs a value") from None
        out[key.replace("-", "_")] = value
    return out


def _split(command: str, values: dict) -> list:
    """Distribute flat keys over the command's option dataclasses."""
    sections = COMMAND_SECTIONS[command]
    owned = [{} for _ in sections]
    for key, value in values.items():
        for i, cls in enumerate(sections):
            names = {f.name for f in dataclasses.fields(cls)}
            target = key
            if key not in names and ALIASES.get(key) in names and cls is not AugmentOptions:
                target = ALIASES[key]
            if target in names:
                owned[i][target] = value
                break
        else:
            raise ConfigError(f"unknown config key {key!r} for {command}")
    return [build(cls, vals) for cls, vals in zip(sections, owned)]


def _resolve(command: str, args) -> list:
    values = {}
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if manifest.get("command") != command:
            raise UsageError(f"manifest was written by {manifest.get('command')!r}, not {command!r}")
        values.update({k: v if isinstance(v, str) else json.dumps(v) if v is not None else "none"
                       for k, v in manifest["config"].items()})
    if args.config:
        values.update(read_config(args.config))
    values.update(_pairs(args.extra))
    return _split(command, values)


def _flat(*objs) -> dict:
    out = {}
    for o in objs:
        out.update(dataclasses.asdict(o))
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """``manifest.json``: written before work starts, completed at the end."""

    def __init__(self, path, command: str, config: dict, seeds: dict):
        self.path = Path(path)
        self.data = {
            "command": command, "config": config, "seeds": seeds, "artifacts": {},
            "version": __version__, "started": _now(), "finished": None,
        }
        self.flush()

    def add(self, name: str, path) -> None:
        self.data["artifacts"][name] = {"path": str(path), "sha256": _sha256(path)}

    def finish(self) -> None:
        self.data["finished"] = _now()
        self.flush()

    def flush(self) -> None:
        formats.atomic_write(self.path, (json.dumps(self.data, indent=2) + "\n").encode())


def _seeds(cfg: TrainConfig) -> dict:
    return {"data": cfg.data_seed, "augment": cfg.augment_seed, "controller": cfg.controller_seed}


def _load_data(paths: RunPaths):
    for name in ("train_data", "test_data"):
        p = getattr(paths, name)
        if not p:
            raise UsageError(f"{name} is required")
        if not Path(p).is_file():
            raise UsageError(f"{name} not found: {p}")
    return formats.read_dataset(paths.train_data), formats.read_dataset(paths.test_data)


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def cmd_gen_data(args) -> int:
    task, opts = _resolve("gen-data", args)
    try:
        task.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(opts.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", "gen-data", _flat(task, opts), {"data": task.seed})
    train, test = gen_synthetic(task)
    for name, ds in (("train", train), ("test", test)):
        path = out / f"{name}.spds"
        formats.write_dataset(path, ds)
        manifest.add(name, path)
    manifest.finish()
    print(f"wrote {len(train)} train / {len(test)} test examples "
          f"({task.n_time}x{task.n_freq}, {task.n_classes} classes) to {out}")
    return 0


def _validated(cfg: TrainConfig) -> TrainConfig:
    try:
        cfg.validate()
    except (ValueError, PolicyError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def cmd_train(args) -> int:
    cfg, paths = _resolve("train", args)
    _validated(cfg)
    train, test = _load_data(paths)
    out = Path(paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", "train", _flat(cfg, paths), _seeds(cfg))
    result = run_training(cfg, train, test, out)
    for name in ("metrics.jsonl", "trainee.trn", "controller.apc"):
        if (out / name).exists():
            manifest.add(name, out / name)
    manifest.finish()
    print(f"mode={cfg.mode} M={cfg.M} epochs={cfg.epochs} final_test_accuracy={result.final_accuracy:.4f}")
    return 0


def cmd_grid_search(args) -> int:
    cfg, paths, grid = _resolve("grid-search", args)
    train, test = _load_data(paths)
    out = Path(paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", "grid-search", _flat(cfg, paths, grid), _seeds(cfg))
    result = grid_search_two_stage(train, test, _ints(grid.counts), _ints(grid.sizes), _ints(grid.warps),
                                   epochs=grid.cell_epochs, base=cfg)
    rows = result.table()
    _write_csv(out / "grid.csv", rows)
    formats.atomic_write(out / "grid.json", (json.dumps(rows, indent=2) + "\n").encode())
    manifest.add("grid.csv", out / "grid.csv")
    manifest.add("grid.json", out / "grid.json")
    manifest.finish()
    w1, w = result.stage1_winner, result.winner
    print(f"stage-1 winner: {w1.policy} acc={w1.test_accuracy:.4f}")
    print(f"overall winner: {w.policy} acc={w.test_accuracy:.4f}")
    return 0


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def cmd_ablate_m(args) -> int:
    cfg, paths, opts = _resolve("ablate-m", args)
    _validated(dataclasses.replace(cfg, mode="rl"))
    train, test = _load_data(paths)
    out = Path(paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", "ablate-m", _flat(cfg, paths, opts), _seeds(cfg))
    modes = [m.strip() for m in opts.modes.split(",") if m.strip()]
    rows = ablation_m_sweep(cfg, train, test, _ints(opts.m_values), modes, opts.repeats, out / "runs")
    table = [{"M": r.M, "mode": r.mode, "n": len(r.accuracies), "mean_accuracy": _fmt(r.mean),
              "std_accuracy": _fmt(r.std)} for r in rows]
    _write_csv(out / "ablation.csv", table)
    text = _text_table(table)
    formats.atomic_write(out / "ablation.txt", text.encode())
    manifest.add("ablation.csv", out / "ablation.csv")
    manifest.add("ablation.txt", out / "ablation.txt")
    manifest.finish()
    print(text, end="")
    return 0


def cmd_augment(args) -> int:
    (opts,) = _resolve("augment", args)
    if not opts.input or not opts.output or not opts.policy:
        raise UsageError("augment needs --input, --policy and --output")
    if not Path(opts.input).is_file():
        raise UsageError(f"input not found: {opts.input}")
    try:
        policy = parse_policy(opts.policy, any_length=True)
    except PolicyError as exc:
        raise ConfigError(str(exc)) from None
    spec = formats.read_spectrogram(opts.input)
    rng = AugmentRng(opts.seed)
    out = apply_policy(spec, policy, rng)
    formats.write_spectrogram(opts.output, out)
    print(f"shape {spec.n_time}x{spec.n_freq} -> {out.n_time}x{out.n_freq} "
          f"(+{out.n_time - spec.n_time} frames)")
    # fill statistics as each masking op sees its input
    current = spec.values[None]
    for i, op in enumerate(policy.ops):
        if op.kind.fill is not None:
            stat = fill_statistic(current, op.kind.fill)[0]
            print(f"op {i + 1} {op}: fill {op.kind.fill} = {stat:.6g}")
        else:
            print(f"op {i + 1} {op}: inserted {op.warp} frames")
        current = apply_op_batch(current, op, rng.substream(i))
    return 0


def _infer_run(records) -> tuple[str, str]:
    last = records[-1]
    if last.controller_entropy is not None:
        return "rl", str(len(last.policies))
    if not last.policies:
        return "none", ""
    if last.normalized_rewards:
        return "random", str(len(last.policies))
    return "fixed", ""


def cmd_report(args) -> int:
    if not args.metrics:
        raise UsageError("report needs at least one metrics file")
    per_run = []
    for path in args.metrics:
        records = read_metrics(path)
        if not records:
            raise UsageError(f"{path}: no records")
        mode, M = _infer_run(records)
        accs = [r.test_accuracy for r in records]
        ents = [r.controller_entropy for r in records if r.controller_entropy is not None]
        per_run.append({
            "file": str(path), "mode": mode, "M": M, "epochs": len(records),
            "final_accuracy": f"{accs[-1]:.4f}", "best_accuracy": f"{max(accs):.4f}",
            "entropy_first": _fmt(ents[0]) if ents else "",
            "entropy_mean": _fmt(float(np.mean(ents))) if ents else "",
            "entropy_last": _fmt(ents[-1]) if ents else "",
        })
    groups = {}
    for row in per_run:
        groups.setdefault((row["mode"], row["M"]), []).append(float(row["final_accuracy"]))
    table = []
    for (mode, M), accs in sorted(groups.items()):
        mean, std = summarize(accs)
        table.append({"mode": mode, "M": M, "n": len(accs), "mean_accuracy": _fmt(mean),
                      "std_accuracy": _fmt(std)})
    print("runs")
    print(_text_table(per_run), end="")
    print("\ngroups (final test accuracy)")
    print(_text_table(table), end="")
    if args.csv:
        _write_csv(Path(args.csv), table)
        _write_csv(Path(args.csv).with_suffix(".runs.csv"), per_run)
    return 0


def _write_csv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    formats.atomic_write(path, buf.getvalue().encode())


def _text_table(rows: list[dict]) -> str:
    if not rows:
        return "(empty)\n"
    cols = list(rows[0])
    width = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(width[c]) for c in cols)]
    lines += ["  ".join(str(r[c]).ljust(width[c]) for c in cols) for r in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "grid-search": cmd_grid_search,
    "ablate-m": cmd_ablate_m,
    "augment": cmd_augment,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlaugment", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "report":
            p.add_argument("metrics", nargs="*", help="metrics.jsonl files")
            p.add_argument("--csv", help="write the grouped table here (per-run table alongside)")
        else:
            p.add_argument("--config", help="flat key = value config file")
            p.add_argument("--manifest", help="re-run with the config recorded in a manifest.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command == "report" and extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    args.extra = extra
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, PolicyError) as exc:
        print(f"rlaugment {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"rlaugment {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
