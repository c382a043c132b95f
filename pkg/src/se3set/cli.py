"""Command-line entry point: ``se3set fragment|synth|train|eval|check``.

Every command reads one optional YAML/JSON run configuration (unknown keys
are rejected) and the flags ``--patterns``, ``--out`` and ``--seed``, which
override the matching configuration entries.  A single seed drives all
randomness.  Exit codes: 0 success, 1 usage or configuration error, 2 some
records failed (the rest were processed), 3 a checked property failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import yaml

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .checks import BatterySizes, run_battery
from .chem import MoleculeError
from .fragment import FragmentationConfig, Hypergraph, build_hypergraph
from .model import ModelConfig, ModelError, SE3Set
from .optim import AdamW
from .patterns import PatternSyntaxError, load_patterns
from .plotting import plot_fragment_stats, plot_training
from .synth import ENERGY_UNIT, DatasetError, DatasetRecord, dataset_files, load_dataset, read_record, synth_dataset, write_dataset
from .train import Example, TrainConfig, TrainingError, TrainState, evaluate, split_examples, train

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_PROPERTY = 0, 1, 2, 3
COMMANDS = ("fragment", "synth", "train", "eval", "check")
CHECKPOINT_NAME = "checkpoint.se3s"
FORCE_UNIT = f"{ENERGY_UNIT} per angstrom"

log = logging.getLogger("se3set")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class SynthConfig:
    count: int = 200
    size_range: tuple[int, int] = (3, 7)
    palette: tuple[str, ...] = ("C", "N", "O", "H")
    weights: tuple[float, ...] | None = (3, 1, 1, 4)
    jitter: float = 0.05
    ring_fraction: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth option(s): {sorted(unknown)}")
        out = cls(**data)
        out.size_range = tuple(int(v) for v in out.size_range)
        out.palette = tuple(out.palette)
        if out.weights is not None:
            out.weights = tuple(float(v) for v in out.weights)
            if len(out.weights) != len(out.palette):
                raise ConfigError("synth.weights needs one entry per palette element")
        if len(out.size_range) != 2:
            raise ConfigError("synth.size_range must be [min, max]")
        return out


@dataclass
class RunConfig:
    command: str | None = None
    input: str | None = None
    output: str | None = None
    checkpoint: str | None = None
    hypergraphs: str | None = None
    patterns: str | None = None
    seed: int = 0
    plots: bool = True
    fragmentation: FragmentationConfig = field(default_factory=FragmentationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainConfig = field(default_factory=lambda: TrainConfig(eval_every=1))
    synth: SynthConfig = field(default_factory=SynthConfig)
    check: BatterySizes = field(default_factory=BatterySizes)
    break_sh_normalization: bool = False


SCALAR_KEYS = {"command", "input", "output", "checkpoint", "hypergraphs", "patterns", "seed", "plots"}
SECTION_KEYS = {"fragmentation", "model", "trainer", "synth", "check", "debug"}


def _section(data: dict, key: str) -> dict:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return dict(value)


def _check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return seed


def parse_config(data: dict | None) -> RunConfig:
    """Validate a decoded configuration document."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - SCALAR_KEYS - SECTION_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {sorted(unknown)}")
    cfg = RunConfig(**{k: data[k] for k in SCALAR_KEYS if k in data})
    if cfg.command is not None and cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    cfg.seed = _check_seed(cfg.seed)
    for k in ("input", "output", "checkpoint", "hypergraphs", "patterns"):
        v = getattr(cfg, k)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"'{k}' must be a path string")
    try:
        frag = _section(data, "fragmentation")
        cfg.fragmentation = FragmentationConfig.from_dict(frag)
        model = _section(data, "model")
        if "overlap_mode" in model and model["overlap_mode"] != cfg.fragmentation.overlap_mode:
            raise ConfigError("model.overlap_mode differs from fragmentation.overlap_mode")
        model["overlap_mode"] = cfg.fragmentation.overlap_mode
        cfg.model = ModelConfig.from_dict(model)
        trainer = _section(data, "trainer")
        if "seed" in trainer:
            raise ConfigError("the trainer takes its seed from the top-level 'seed'")
        trainer.setdefault("eval_every", 1)
        cfg.trainer = TrainConfig.from_dict(trainer)
        cfg.synth = SynthConfig.from_dict(_section(data, "synth"))
        cfg.check = BatterySizes.from_dict(_section(data, "check"))
        debug = _section(data, "debug")
        if set(debug) - {"break_sh_normalization"}:
            raise ConfigError(f"unknown debug option(s): {sorted(set(debug) - {'break_sh_normalization'})}")
        cfg.break_sh_normalization = bool(debug.get("break_sh_normalization", False))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    return parse_config(data)


def worker_count() -> int:
    raw = os.environ.get("SE3SET_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SE3SET_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SE3SET_THREADS must be a positive integer, got {raw!r}")
    return n


def ordered_map(fn: Callable, items: Sequence, threads: int) -> list:
    """``[fn(x) for x in items]`` on a bounded pool; results keep input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"{what} is required")
    return value


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(_require(cfg.output, "an output directory (--out or 'output')"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _patterns(cfg: RunConfig):
    try:
        return load_patterns(cfg.patterns)
    except (OSError, ValueError, PatternSyntaxError) as exc:
        raise ConfigError(f"cannot load patterns: {exc}") from exc


# --------------------------------------------------------------------------
# fragment
# --------------------------------------------------------------------------


def _fragment_one(path: Path, patterns, frag: FragmentationConfig) -> dict:
    try:
        item = read_record(path)
        mol = item.molecule if isinstance(item, DatasetRecord) else item
        hg = build_hypergraph(mol, patterns, frag)
        if frag.overlap_mode == "explicit":
            covered = {i for e in hg.hyperedges for i in e}
            if len(covered) != mol.n_atoms:
                raise ValueError("explicit hypergraph leaves atoms uncovered")
        return {"file": path.name, "molecule": mol, "hypergraph": hg}
    except (OSError, json.JSONDecodeError, UnicodeDecodeError, MoleculeError, DatasetError, ValueError, KeyError, TypeError) as exc:
        return {"file": path.name, "error": f"{type(exc).__name__}: {exc}"}


def fragment_statistics(results: Sequence[dict], frag: FragmentationConfig) -> dict:
    """FragStats: per-molecule fragment counts, per-fragment sizes and their histograms."""
    molecules, failures = [], []
    for r in results:
        if "error" in r:
            failures.append({"file": r["file"], "error": r["error"]})
            continue
        hg: Hypergraph = r["hypergraph"]
        molecules.append(
            {
                "file": r["file"],
                "name": r["molecule"].name,
                "atoms": r["molecule"].n_atoms,
                "fragments": hg.m,
                "fragment_sizes": [len(e) for e in hg.hyperedges],
            }
        )
    counts = Counter(m["fragments"] for m in molecules)
    sizes = Counter(s for m in molecules for s in m["fragment_sizes"])
    return {
        "schema": "se3set.fragstats/1",
        "records": len(molecules),
        "fragments": sum(counts[k] * k for k in counts),
        "failures": failures,
        "fragment_count_histogram": {str(k): counts[k] for k in sorted(counts)},
        "fragment_size_histogram": {str(k): sizes[k] for k in sorted(sizes)},
        "molecules": molecules,
        "fragmentation": frag.to_dict(),
        "units": {"fragment_sizes": "atoms", "fragment_count_histogram": "molecules per fragment count", "fragment_size_histogram": "fragments per size"},
    }


def cmd_fragment(cfg: RunConfig) -> int:
    src = Path(_require(cfg.input, "an input directory ('input')"))
    out = _out_dir(cfg)
    patterns = _patterns(cfg)
    try:
        files = dataset_files(src)
    except (DatasetError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    results = ordered_map(lambda p: _fragment_one(p, patterns, cfg.fragmentation), files, worker_count())
    hg_dir = out / "hypergraphs"
    hg_dir.mkdir(exist_ok=True)
    for r in results:
        if "error" in r:
            log.warning("%s: %s", r["file"], r["error"])
            continue
        doc = r["hypergraph"].to_dict()
        doc["source"] = r["file"]
        _write_json(hg_dir / r["file"], doc)
    stats = fragment_statistics(results, cfg.fragmentation)
    _write_json(out / "frag_stats.json", stats)
    with open(out / "frag_stats.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "name", "atoms", "fragments", "fragment_sizes"])
        for m in stats["molecules"]:
            w.writerow([m["file"], m["name"] or "", m["atoms"], m["fragments"], " ".join(map(str, m["fragment_sizes"]))])
    if cfg.plots and stats["records"]:
        plot_fragment_stats(stats, out)
    log.info("fragmented %d of %d files into %s", stats["records"], len(files), out)
    return EXIT_PARTIAL if stats["failures"] else EXIT_OK


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    s = cfg.synth
    try:
        records = synth_dataset(s.count, cfg.seed, s.size_range, s.palette, s.weights, s.jitter, s.ring_fraction)
    except (DatasetError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    meta = {"seed": cfg.seed, "synth": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(s).items()}}
    meta["surrogate"] = "all-pairs Morse, D = 1, a = 2 / angstrom, r0 = sum of covalent radii"
    write_dataset(records, out, meta)
    log.info("wrote %d records to %s", len(records), out)
    return EXIT_OK


# --------------------------------------------------------------------------
# train / eval
# --------------------------------------------------------------------------


def _examples(cfg: RunConfig, records: Sequence[DatasetRecord], files: Sequence[Path]) -> list[Example]:
    if cfg.hypergraphs is not None:
        hg_dir = Path(cfg.hypergraphs)
        out = []
        for rec, path in zip(records, files):
            hg_path = hg_dir / path.name
            try:
                hg = Hypergraph.from_dict(json.loads(hg_path.read_text()))
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ConfigError(f"cannot read hypergraph {hg_path}: {exc}") from exc
            if hg.n != rec.molecule.n_atoms:
                raise ConfigError(f"{hg_path} describes {hg.n} atoms, record has {rec.molecule.n_atoms}")
            if hg.mode != cfg.model.overlap_mode:
                raise ConfigError(f"{hg_path} is a {hg.mode} hypergraph, the model expects {cfg.model.overlap_mode}")
            out.append(Example(rec, hg))
        return out
    patterns = _patterns(cfg)
    hgs = ordered_map(lambda r: build_hypergraph(r.molecule, patterns, cfg.fragmentation), records, worker_count())
    return [Example(r, hg) for r, hg in zip(records, hgs)]


def _load_records(cfg: RunConfig) -> tuple[list[DatasetRecord], list[Path]]:
    src = Path(_require(cfg.input, "a dataset directory ('input')"))
    try:
        files = dataset_files(src)
        records = load_dataset(src)
    except (OSError, DatasetError, MoleculeError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load dataset {src}: {exc}") from exc
    if not records:
        raise ConfigError(f"dataset {src} is empty")
    return records, files


def _metric_units() -> dict:
    return {"energy_mae": ENERGY_UNIT, "force_mae": FORCE_UNIT, "objective": "standardised energy units", "loss": "weighted sum"}


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    records, files = _load_records(cfg)
    examples = _examples(cfg, records, files)
    tcfg = replace(cfg.trainer, seed=cfg.seed)
    train_set, val_set = split_examples(examples, tcfg.val_fraction, cfg.seed)
    state = None
    if cfg.checkpoint is not None:
        model, extra, optim_state = load_checkpoint(cfg.checkpoint, expect_config=cfg.model)
        if extra.get("dataset_size") not in (None, len(examples)):
            raise ConfigError("checkpoint was trained on a dataset of a different size")
        opt = AdamW(model.params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
        if optim_state:
            opt.load_state(optim_state)
        if "train_state" in extra:
            state = TrainState.from_dict(extra["train_state"])
        log.info("resuming from %s at step %d", cfg.checkpoint, state.step if state else 0)
    else:
        model = SE3Set(cfg.model, seed=cfg.seed)
        opt = AdamW(model.params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    result = train(model, train_set, tcfg, val_set, optimizer=opt, log=log.info, state=state)
    extra = {
        "train_state": result.state.to_dict(),
        "trainer": tcfg.to_dict(),
        "fragmentation": cfg.fragmentation.to_dict(),
        "seed": cfg.seed,
        "dataset_size": len(examples),
    }
    save_checkpoint(out / CHECKPOINT_NAME, model, extra, opt.state())
    metrics = {
        "schema": "se3set.train/1",
        "units": _metric_units(),
        "train_records": len(train_set),
        "val_records": len(val_set),
        "steps_this_run": result.steps,
        "step": result.state.step,
        "finished": result.finished,
        "initial_objective": result.initial_loss,
        "final_objective": result.final_loss,
        "step_objective": result.step_losses,
        "evaluations": result.epochs,
    }
    _write_json(out / "metrics.json", metrics)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "split", "energy_mae", "force_mae", "objective"])
        for row in result.epochs:
            for split in ("train", "val"):
                if split in row:
                    m = row[split]
                    w.writerow([row["step"], f"{row['epoch']:.6g}", split, repr(m["energy_mae"]), repr(m.get("force_mae", "")), repr(m["objective"])])
    if cfg.plots and result.step_losses:
        plot_training(result.step_losses, result.epochs, out / "loss_curve.png", ENERGY_UNIT)
    log.info("objective %.6g -> %.6g; checkpoint %s", result.initial_loss, result.final_loss, out / CHECKPOINT_NAME)
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = Path(_require(cfg.checkpoint, "a checkpoint ('checkpoint')"))
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    model, extra, _ = load_checkpoint(ckpt)
    if model.cfg.overlap_mode != cfg.fragmentation.overlap_mode:
        raise ConfigError("checkpoint and fragmentation config use different overlap modes")
    cfg.model = model.cfg
    records, files = _load_records(cfg)
    examples = _examples(cfg, records, files)
    metrics = evaluate(model, examples, replace(cfg.trainer, seed=cfg.seed), threads=worker_count())
    report = {"schema": "se3set.eval/1", "units": _metric_units(), **metrics}
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if cfg.output is not None:
        (_out_dir(cfg) / "eval.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# check
# --------------------------------------------------------------------------


def cmd_check(cfg: RunConfig) -> int:
    patterns = _patterns(cfg) if cfg.patterns is not None else None
    report = run_battery(
        cfg.seed,
        cfg.check,
        cfg.model,
        cfg.fragmentation,
        patterns,
        break_sh_normalization=cfg.break_sh_normalization,
        log=log.info,
    )
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if cfg.output is not None:
        (_out_dir(cfg) / "check_report.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if report["passed"] else EXIT_PROPERTY


HANDLERS = {"fragment": cmd_fragment, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "check": cmd_check}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="se3set", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"se3set {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--patterns", help="JSON file mapping functional-group names to patterns")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="64-bit seed for every random choice")
    p.add_argument("--debug-break-sh", action="store_true", help="check: scale l > 0 spherical harmonics (fault injection)")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        parser.print_usage(sys.stderr)
        print(f"se3set: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config)
        if cfg.command is not None and cfg.command != args.command:
            raise ConfigError(f"config is for '{cfg.command}', not '{args.command}'")
        if args.out is not None:
            cfg.output = args.out
        if args.patterns is not None:
            cfg.patterns = args.patterns
        if args.seed is not None:
            cfg.seed = _check_seed(args.seed)
        if args.debug_break_sh:
            cfg.break_sh_normalization = True
        return HANDLERS[args.command](cfg)
    except (ConfigError, CheckpointError, ModelError) as exc:
        print(f"se3set: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"se3set: training aborted: {exc}", file=sys.stderr)
        return EXIT_USAGE
