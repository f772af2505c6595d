"""Command-line interface.

Every command reads explicit input paths and writes explicit output paths;
logs go to stderr. Options can come from a YAML config file (one mapping
per command name); a flag given on the command line wins over the config,
and the override is logged. ``$VAR`` references in path options expand
from the environment.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import __version__
from .augment import augment_training_set, build_augbase, write_augbase
from .dataset import (assign_labels, encode_sequences, fit_normalizer_on_sequences, read_rules,
                      time_split, write_rules)
from .evaluation import (count_macs, load_report, percentage_error_f1,
                         render_comparison_table, render_pe_table)
from .evasion import MULTIPLIERS, slow_down_corpus
from .flows import read_flow_csv, read_packets, write_flow_csv, write_packet_csv, write_pcap
from .model import (Checkpoint, ModelConfig, TrainConfig, BiALSTM, load_checkpoint,
                    save_checkpoint, train)
from .pipeline import build_sequences, evaluate as evaluate_model, extract_flows
from .rng import substream
from .sequences import read_sequences, write_sequences
from .synth import PRESETS, generate, preset

log = logging.getLogger("flowseq")

CONFIG_VERSION = 1


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# option plumbing

# name -> (hard default, is_path)
OPTIONS: dict[str, dict[str, tuple[Any, bool]]] = {
    "synth": {"preset": ("default", False), "seed": (None, False), "out": (None, True),
              "rules_out": (None, True)},
    "extract": {"input": (None, True), "out": (None, True), "rules": (None, True),
                "flow_timeout": (30.0, False)},
    "sequence": {"input": (None, True), "out": (None, True), "alpha": (10, False),
                 "tau": (30.0, False), "split": ("all", False), "ratio": (0.7, False)},
    "augment": {"input": (None, True), "out": (None, True), "seed": (0, False),
                "augbase_out": (None, True)},
    "train": {"input": (None, True), "out": (None, True), "l2": (0.5, False),
              "lr": (0.001, False), "epochs": (10, False), "batch_size": (32, False),
              "seed": (0, False)},
    "evaluate": {"checkpoint": (None, True), "input": (None, True), "out": (None, True),
                 "threshold": (0.5, False), "name": (None, False), "curves": (None, True),
                 "train_multiplier": (None, False), "test_multiplier": (None, False)},
    "cross-eval": {"checkpoint": (None, True), "inputs": (None, True), "out": (None, True),
                   "threshold": (0.5, False)},
    "evade": {"input": (None, True), "rules": (None, True), "out": (None, True),
              "multiplier": (None, False)},
    "report": {"inputs": (None, True), "layout": ("f1", False), "out": (None, True)},
}

REQUIRED = {
    "synth": ("out", "rules_out"),
    "extract": ("input", "out"),
    "sequence": ("input", "out"),
    "augment": ("input", "out"),
    "train": ("input", "out"),
    "evaluate": ("checkpoint", "input", "out"),
    "cross-eval": ("checkpoint", "inputs", "out"),
    "evade": ("input", "rules", "out", "multiplier"),
    "report": (),
}


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a mapping")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise UsageError(f"{path}: unsupported config version {doc.get('version')}")
    return doc


def resolve(command: str, args: argparse.Namespace, config: dict) -> dict:
    section = config.get(command, {}) or {}
    unknown = set(section) - set(k.replace("_", "-") for k in OPTIONS[command]) - set(OPTIONS[command])
    if unknown:
        raise UsageError(f"config section {command!r} has unknown keys {sorted(unknown)}")
    out = {}
    for key, (default, is_path) in OPTIONS[command].items():
        flag = getattr(args, key, None)
        conf = section.get(key, section.get(key.replace("_", "-")))
        if flag is not None:
            if conf is not None and conf != flag:
                log.info("--%s=%r overrides config value %r", key.replace("_", "-"), flag, conf)
            val = flag
        elif conf is not None:
            val = conf
        else:
            val = default
        if is_path and val is not None:
            val = [os.path.expandvars(v) for v in val] if isinstance(val, list) else os.path.expandvars(val)
        out[key] = val
    missing = [k for k in REQUIRED[command] if out.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s): "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    return out


def _need_file(path: str) -> None:
    if not os.path.exists(path):
        raise UsageError(f"input not found: {path}")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(o: dict) -> None:
    overrides = {"seed": int(o["seed"])} if o["seed"] is not None else {}
    corpus = generate(preset(o["preset"], **overrides))
    out = o["out"]
    if out.endswith((".pcap", ".cap")):
        n = write_pcap(corpus.packets, out)
    else:
        n = write_packet_csv(corpus.packets, out)
    write_rules(corpus.rules, o["rules_out"])
    log.info("wrote %d packets, %d rules; flows per label %s", n, len(corpus.rules),
             json.dumps(corpus.flow_counts, sort_keys=True))


def cmd_extract(o: dict) -> None:
    _need_file(o["input"])
    packets = read_packets(o["input"])
    flows = extract_flows(packets, int(round(float(o["flow_timeout"]) * 1e6)))
    if o["rules"]:
        _need_file(o["rules"])
        assign_labels(flows, read_rules(o["rules"]))
    n = write_flow_csv(flows, o["out"])
    log.info("wrote %d flows to %s", n, o["out"])


def cmd_sequence(o: dict) -> None:
    _need_file(o["input"])
    flows = list(read_flow_csv(o["input"]))
    if o["split"] not in ("all", "train", "test"):
        raise UsageError("--split must be all, train or test")
    if o["split"] != "all":
        tr, te = time_split(flows, float(o["ratio"]))
        flows = tr if o["split"] == "train" else te
    seqs = build_sequences(flows, int(o["alpha"]), float(o["tau"]))
    n = write_sequences(seqs, o["out"])
    log.info("wrote %d sequences from %d flows", n, len(flows))


def cmd_augment(o: dict) -> None:
    _need_file(o["input"])
    seqs = list(read_sequences(o["input"]))
    seed = int(o["seed"])
    base = build_augbase(seed)
    out = augment_training_set(seqs, base, substream(seed, "augment-noise"))
    n_aug = sum(a is not b for a, b in zip(out, seqs))
    write_sequences(out, o["out"])
    if o["augbase_out"]:
        write_augbase(base, o["augbase_out"])
    log.info("augmented %d of %d sequences", n_aug, len(seqs))


def cmd_train(o: dict) -> None:
    _need_file(o["input"])
    seqs = list(read_sequences(o["input"]))
    if not seqs:
        raise UsageError("training set is empty")
    cfg = TrainConfig(l2=float(o["l2"]), lr=float(o["lr"]), epochs=int(o["epochs"]),
                      batch_size=int(o["batch_size"]), seed=int(o["seed"]))
    norm = fit_normalizer_on_sequences(seqs)
    data = encode_sequences(seqs, norm)
    model = BiALSTM(ModelConfig(), seed=cfg.seed)
    result = train(model, data, cfg)
    save_checkpoint(Checkpoint(model, norm, cfg, cfg.seed, {"losses": result.losses}), o["out"])
    log.info("saved checkpoint %s (parameter hash %s)", o["out"], model.parameter_hash()[:16])


def _evaluate_file(ckpt: Checkpoint, path: str, name: str, threshold: float):
    _need_file(path)
    seqs = list(read_sequences(path))
    if not seqs:
        raise UsageError(f"{path}: no sequences")
    if ckpt.normalizer is None:
        raise UsageError("checkpoint carries no normalizer")
    return evaluate_model(ckpt.model, encode_sequences(seqs, ckpt.normalizer), name, threshold)


def cmd_evaluate(o: dict) -> None:
    _need_file(o["checkpoint"])
    ckpt = load_checkpoint(o["checkpoint"])
    rep = _evaluate_file(ckpt, o["input"], o["name"] or os.path.basename(o["input"]),
                         float(o["threshold"]))
    d = rep.to_dict()
    d["tags"] = {k: o[k] for k in ("train_multiplier", "test_multiplier") if o[k] is not None}
    with open(o["out"], "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2)
    if o["curves"]:
        rep.write_curves(o["curves"])
    print(rep.to_text())


def cmd_cross_eval(o: dict) -> None:
    inputs = o["inputs"]
    if len(inputs) != 2:
        raise UsageError("cross-eval needs exactly two sequence files")
    _need_file(o["checkpoint"])
    ckpt = load_checkpoint(o["checkpoint"])
    reps = [_evaluate_file(ckpt, p, os.path.basename(p), float(o["threshold"])) for p in inputs]
    with open(o["out"], "w", encoding="utf-8") as fh:
        json.dump({"reports": [r.to_dict() for r in reps]}, fh, indent=2)
    print(render_comparison_table({r.name: r.to_dict() for r in reps}))


def cmd_evade(o: dict) -> None:
    _need_file(o["input"])
    _need_file(o["rules"])
    m = int(o["multiplier"])
    if m not in MULTIPLIERS:
        raise UsageError(f"--multiplier must be one of {MULTIPLIERS}")
    packets, stats = slow_down_corpus(read_packets(o["input"]), read_rules(o["rules"]), m)
    if o["out"].endswith((".pcap", ".cap")):
        write_pcap(packets, o["out"])
    else:
        write_packet_csv(packets, o["out"])
    log.info("retimed %d of %d flows (m=%d)", stats.altered_flows, stats.flows, m)


def _report_dicts(paths: list[str]) -> list[dict]:
    out = []
    for p in paths:
        _need_file(p)
        d = load_report(p)
        out.extend(d["reports"] if "reports" in d else [d])
    return out


def cmd_report(o: dict) -> None:
    if o["layout"] != "cost" and not o["inputs"]:
        raise UsageError("report: missing required option(s): --inputs")
    reps = _report_dicts(o["inputs"] or [])
    if o["layout"] == "f1":
        text = render_comparison_table({r["name"]: r for r in reps})
    elif o["layout"] == "pe":
        cells = {}
        for r in reps:
            tags = r.get("tags", {})
            if "train_multiplier" not in tags or "test_multiplier" not in tags:
                raise UsageError(f"report {r['name']!r} lacks train/test multiplier tags")
            cells[(int(tags["train_multiplier"]), int(tags["test_multiplier"]))] = r["f1"]
        ms = sorted({k[0] for k in cells} | {k[1] for k in cells})
        pe = np.full((len(ms), len(ms)), np.nan)
        for i, a in enumerate(ms):
            for j, b in enumerate(ms):
                if (a, b) in cells and (a, a) in cells and cells[(a, a)] > 0:
                    pe[i, j] = 0.0 if a == b else percentage_error_f1(cells[(a, b)], cells[(a, a)])
        text = render_pe_table(ms, pe)
    elif o["layout"] == "cost":
        text = count_macs().render()
    else:
        raise UsageError("--layout must be f1, pe or cost")
    if o["out"]:
        with open(o["out"], "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


COMMANDS: dict[str, Callable[[dict], None]] = {
    "synth": cmd_synth, "extract": cmd_extract, "sequence": cmd_sequence,
    "augment": cmd_augment, "train": cmd_train, "evaluate": cmd_evaluate,
    "cross-eval": cmd_cross_eval, "evade": cmd_evade, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowseq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="YAML config file (flags override it)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labeled synthetic packet stream")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="packet CSV (or .pcap) output")
    s.add_argument("--rules-out", dest="rules_out", help="label rule YAML output")

    s = sub.add_parser("extract", help="packets (pcap/pcapng/packet CSV) -> flow CSV")
    s.add_argument("input", nargs="?")
    s.add_argument("--out")
    s.add_argument("--rules", help="label rules; flows stay 'benign' without them")
    s.add_argument("--flow-timeout", dest="flow_timeout", type=float, help="idle timeout, seconds")

    s = sub.add_parser("sequence", help="flow CSV -> sequence file")
    s.add_argument("input", nargs="?")
    s.add_argument("--out")
    s.add_argument("--alpha", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--split", choices=["all", "train", "test"])
    s.add_argument("--ratio", type=float)

    s = sub.add_parser("augment", help="augment DoS training sequences")
    s.add_argument("input", nargs="?")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--augbase-out", dest="augbase_out")

    s = sub.add_parser("train", help="sequences -> checkpoint")
    s.add_argument("input", nargs="?")
    s.add_argument("--out")
    s.add_argument("--l2", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("evaluate", help="checkpoint + sequences -> report")
    s.add_argument("input", nargs="?")
    s.add_argument("--checkpoint")
    s.add_argument("--out")
    s.add_argument("--threshold", type=float)
    s.add_argument("--name")
    s.add_argument("--curves", help="prefix for ROC/ECDF CSV point lists")
    s.add_argument("--train-multiplier", dest="train_multiplier", type=int)
    s.add_argument("--test-multiplier", dest="test_multiplier", type=int)

    s = sub.add_parser("cross-eval", help="one checkpoint, two corpora -> paired reports")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--checkpoint")
    s.add_argument("--out")
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("evade", help="slow down attacker packets by a multiplier")
    s.add_argument("input", nargs="?")
    s.add_argument("--rules")
    s.add_argument("--out")
    s.add_argument("--multiplier", type=int)

    s = sub.add_parser("report", help="merge reports into comparison tables")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--layout", choices=["f1", "pe", "cost"])
    s.add_argument("--out")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if hasattr(args, "inputs") and args.inputs == []:
        args.inputs = None
    try:
        opts = resolve(args.command, args, load_config(args.config))
        COMMANDS[args.command](opts)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"flowseq {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
