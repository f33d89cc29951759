"""Command-line harness: synth, train, evaluate, generate, ablate.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .ablation import format_rows, load_grid, run_grid
from .config import build, load_train_config, parse_pairs, seed_override
from .data import DialogueExample, load_dataset, make_instances, save_dataset, split_holdout
from .errors import ConfigError
from .inference import RevisionModel, classify_yesno_rule, revise_response, write_generations
from .metrics import report_json, report_table
from .model import ModelConfig
from .pipeline import Trained, decode, fit, generate_records, score
from .synthetic import SyntheticTaskSpec, generate_synthetic
from .training import TrainConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("fusionseq")

REVISION_DIM = 32


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusionseq", description="Multimodal fusion dialogue answer generator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="write a synthetic train/dev/test split")
    s.add_argument("--spec", help="key = value synthetic task spec")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-dev", type=int, default=200)
    s.add_argument("--n-test", type=int, default=200)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="directory with train/dev jsonl, or one jsonl file")
    t.add_argument("--out", required=True)
    t.add_argument("--dev-fraction", type=float, default=0.1)

    e = sub.add_parser("evaluate", help="decode a dataset and write a metrics report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--revise", action="store_true")
    e.add_argument("--generations", help="optional JSON-lines file of decoded answers")
    e.add_argument("--beam-size", type=int)

    g = sub.add_parser("generate", help="answer one question about a context")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--question", required=True)
    g.add_argument("--context", required=True, help="JSON file holding one dialogue record")
    g.add_argument("--revise", action="store_true")

    a = sub.add_parser("ablate", help="train every cell of an ablation grid")
    a.add_argument("--grid", required=True, help="fusion | features | attention | full | grid file")
    a.add_argument("--config", help="base model/training config")
    a.add_argument("--spec", help="synthetic task spec")
    a.add_argument("--n-train", type=int, default=200)
    a.add_argument("--n-dev", type=int, default=50)
    a.add_argument("--report", help="optional JSON output")
    return p


def _read_spec(path: str | None) -> SyntheticTaskSpec:
    if path is None:
        spec = SyntheticTaskSpec()
    else:
        spec = build(SyntheticTaskSpec, parse_pairs(Path(path).read_text(encoding="utf-8"), path))
    spec.seed = seed_override(spec.seed)
    spec.validate()
    return spec


def _read_splits(data: str, fraction: float, seed: int):
    path = Path(data)
    if path.is_dir():
        train_file, dev_file = path / "train.jsonl", path / "dev.jsonl"
        if not train_file.is_file():
            raise FileNotFoundError(f"{train_file} not found")
        train = load_dataset(train_file)
        if dev_file.is_file():
            return train, load_dataset(dev_file)
        return split_holdout(train, fraction, seed)
    return split_holdout(load_dataset(path), fraction, seed)


def _eval_file(data: str) -> Path:
    path = Path(data)
    if path.is_dir():
        for name in ("test.jsonl", "dev.jsonl"):
            if (path / name).is_file():
                return path / name
        raise FileNotFoundError(f"no test.jsonl or dev.jsonl in {path}")
    return path


def _explicit_keys(path: str | None) -> set[str]:
    return set(parse_pairs(Path(path).read_text(encoding="utf-8"), path)) if path else set()


def _match_widths(mc: ModelConfig, examples, explicit: set[str]) -> ModelConfig:
    """Take feature widths from the data unless the config sets them."""
    widths = {}
    for ex in examples:
        if "d_a" not in explicit and ex.audio_features:
            widths.setdefault("d_a", len(ex.audio_features[0]))
        if "d_v" not in explicit and ex.video_features:
            widths.setdefault("d_v", len(ex.video_features[0]))
    return replace(mc, **widths)


def _load_trained(path: str) -> Trained:
    ck = load_checkpoint(path)
    rm = None
    if ck.extra_params:
        rm = RevisionModel(ck.vocab, d_e=REVISION_DIM, d=REVISION_DIM)
        for name, value in ck.extra_params.items():
            if name not in rm.params or rm.params[name].shape != value.shape:
                raise ConfigError(f"{path}: revision parameter {name} does not match")
            rm.params[name].data[...] = value
    return Trained(ck.model, ck.vocab, None, rm)


def cmd_synth(args) -> int:
    spec = _read_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    offset = 0
    for name, n in (("train", args.n_train), ("dev", args.n_dev), ("test", args.n_test)):
        save_dataset(out / f"{name}.jsonl", generate_synthetic(spec, n, offset))
        offset += n
    print(f"wrote {args.n_train}/{args.n_dev}/{args.n_test} dialogues to {out}")
    return 0


def cmd_train(args) -> int:
    mc, tc = load_train_config(args.config)
    train, dev = _read_splits(args.data, args.dev_fraction, tc.seed)
    mc = _match_widths(mc, train, _explicit_keys(args.config))

    def show(record):
        print(f"epoch {record['epoch']:3d}  updates {record['updates']:6d}  "
              f"train {record['train_loss']:.4f}  dev {record['dev_loss']:.4f}", flush=True)

    trained = fit(mc, tc, train, dev, log=show)
    r = trained.result
    save_checkpoint(args.out, trained.model, trained.vocab, tc,
                    extra_params=trained.revision.params if trained.revision else None,
                    extra_meta={"best_epoch": r.best_epoch, "best_dev_loss": r.best_dev_loss,
                                "updates": r.updates, "history": r.history})
    print(f"best dev loss {r.best_dev_loss:.4f} at epoch {r.best_epoch}; checkpoint {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    trained = _load_trained(args.ckpt)
    instances = make_instances(load_dataset(_eval_file(args.data)))
    if not instances:
        raise ConfigError("evaluation set is empty")
    if args.revise and trained.revision is None:
        raise ConfigError("checkpoint has no revision classifier")
    records = generate_records(trained, instances, revise=args.revise, beam_size=args.beam_size)
    report = score(records)
    Path(args.report).write_text(report_json(report), encoding="utf-8")
    if args.generations:
        write_generations(args.generations, records)
    sys.stdout.write(report_table(report))
    return 0


def cmd_generate(args) -> int:
    trained = _load_trained(args.ckpt)
    raw = Path(args.context).read_text(encoding="utf-8").strip()
    try:
        record = json.loads(raw)
    except json.JSONDecodeError:
        # a JSON-lines file: use its first record
        record = json.loads(raw.splitlines()[0])
    if not isinstance(record, dict):
        raise ConfigError(f"{args.context}: expected one JSON object")
    record.setdefault("rounds", [])
    record["rounds"] = list(record["rounds"]) + [{"question": args.question, "answer": ""}]
    ex = DialogueExample.from_dict(record)
    inst = make_instances([ex])[-1]
    tokens, _ = decode(trained.model, trained.vocab, inst)
    if args.revise and trained.revision is not None:
        if inst.question and classify_yesno_rule(inst.question):
            tokens = revise_response(inst.question, tokens, trained.revision)
    print(" ".join(tokens))
    return 0


def cmd_ablate(args) -> int:
    grid, fixed = load_grid(args.grid)
    if args.config:
        mc, tc = load_train_config(args.config)
    else:
        mc, tc = ModelConfig(), TrainConfig()
    spec = _read_spec(args.spec)
    explicit = _explicit_keys(args.config)
    if "d_a" not in explicit:
        mc = replace(mc, d_a=spec.audio_dim)
    if "d_v" not in explicit:
        mc = replace(mc, d_v=spec.video_dim)
    rows = run_grid(grid, fixed, spec, mc, tc, args.n_train, args.n_dev)
    sys.stdout.write(format_rows(rows, list(grid)))
    if args.report:
        Path(args.report).write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
            "generate": cmd_generate, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, IndexError, OSError, ArithmeticError) as e:
        print(f"fusionseq {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
